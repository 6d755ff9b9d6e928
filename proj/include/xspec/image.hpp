// Copyright 2026 The xspec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "xspec/tensor.hpp"

#include <filesystem>
#include <vector>

namespace xspec {

// Height x width x channels pixels, interleaved row-major (HWC), values in [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<Scalar> pixels;

  Image() = default;
  Image(int h, int w, int c, Scalar fill = 0.0)
      : height(h), width(w), channels(c),
        pixels(static_cast<std::size_t>(h) * w * c, fill) {}

  Scalar& at(int y, int x, int ch) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + ch];
  }
  Scalar at(int y, int x, int ch) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + ch];
  }

  bool operator==(const Image&) const = default;
};

Image flip_horizontal(const Image& image);

// Binary blob: "XIMG1\n" magic, int32 height/width/channels, then float64 pixels,
// all little-endian.
void write_image_blob(const Image& image, const std::filesystem::path& path);
// Reads an XIMG1 blob or a binary PGM/PPM (P5/P6, maxval <= 255).
Image read_image(const std::filesystem::path& path);

}  // namespace xspec
