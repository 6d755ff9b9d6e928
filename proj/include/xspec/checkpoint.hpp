// Copyright 2026 The xspec Authors
// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint container, layout:
//
//   xspec-ckpt-v1
//   meta <key> <value>                 (model config, one line per field)
//   array <name> <rows> <cols> <offset>
//   ...
//   data
//   <float64 little-endian payload; offsets are bytes from the payload start>

#pragma once

#include "xspec/model.hpp"

#include <filesystem>
#include <string_view>

namespace xspec {

inline constexpr std::string_view kCheckpointVersion = "xspec-ckpt-v1";

struct Checkpoint {
  ModelConfig config;
  ModelParams params;
};

void save_checkpoint(const ModelParams& params, const ModelConfig& config,
                     const std::filesystem::path& path);

// Throws ParseError on a malformed or foreign file and ShapeError when the
// arrays disagree with the stored config.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace xspec
