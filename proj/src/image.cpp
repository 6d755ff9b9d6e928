// Copyright 2026 The xspec Authors
// SPDX-License-Identifier: Apache-2.0

#include "xspec/image.hpp"

#include <bit>
#include <cctype>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

namespace xspec {

static_assert(std::endian::native == std::endian::little, "blob I/O assumes little-endian");

namespace {

constexpr char kMagic[] = "XIMG1\n";

int read_pnm_int(std::istream& in) {
  int c = in.peek();
  while (c == '#' || std::isspace(c)) {
    if (c == '#') {
      std::string skip;
      std::getline(in, skip);
    } else {
      in.get();
    }
    c = in.peek();
  }
  int v = -1;
  in >> v;
  return v;
}

}  // namespace

Image flip_horizontal(const Image& image) {
  Image out(image.height, image.width, image.channels);
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x)
      for (int c = 0; c < image.channels; ++c)
        out.at(y, x, c) = image.at(y, image.width - 1 - x, c);
  return out;
}

void write_image_blob(const Image& image, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out.write(kMagic, sizeof(kMagic) - 1);
  const std::int32_t dims[3] = {image.height, image.width, image.channels};
  out.write(reinterpret_cast<const char*>(dims), sizeof(dims));
  out.write(reinterpret_cast<const char*>(image.pixels.data()),
            static_cast<std::streamsize>(image.pixels.size() * sizeof(Scalar)));
  if (!out) throw IoError("write failed: " + path.string());
}

Image read_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image: " + path.string());
  char head[sizeof(kMagic) - 1] = {};
  in.read(head, sizeof(head));
  if (in && std::memcmp(head, kMagic, sizeof(head)) == 0) {
    std::int32_t dims[3];
    in.read(reinterpret_cast<char*>(dims), sizeof(dims));
    if (!in || dims[0] <= 0 || dims[1] <= 0 || dims[2] <= 0) {
      throw IoError("corrupt image header: " + path.string());
    }
    Image img(dims[0], dims[1], dims[2]);
    in.read(reinterpret_cast<char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size() * sizeof(Scalar)));
    if (!in) throw IoError("truncated image: " + path.string());
    return img;
  }

  in.clear();
  in.seekg(0);
  std::string magic;
  in >> magic;
  if (magic != "P5" && magic != "P6") throw IoError("unsupported image format: " + path.string());
  const int channels = magic == "P6" ? 3 : 1;
  const int w = read_pnm_int(in), h = read_pnm_int(in), maxval = read_pnm_int(in);
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255) {
    throw IoError("bad PNM header: " + path.string());
  }
  in.get();
  std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h * channels);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!in) throw IoError("truncated image: " + path.string());
  Image img(h, w, channels);
  for (std::size_t i = 0; i < raw.size(); ++i) img.pixels[i] = raw[i] / static_cast<Scalar>(maxval);
  return img;
}

}  // namespace xspec
