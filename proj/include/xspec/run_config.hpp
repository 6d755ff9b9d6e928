// Copyright 2026 The xspec Authors
// SPDX-License-Identifier: Apache-2.0
//
// Flat "section.key=value" run configuration shared by every subcommand.

#pragma once

#include "xspec/data.hpp"
#include "xspec/losses.hpp"
#include "xspec/model.hpp"
#include "xspec/trainer.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace xspec {

struct SynthSettings {
  int n_ids = 8;
  int n_domains = 2;
  int per_domain = 10;
  SynthConfig image;
};

struct EvalConfig {
  int n_gallery = 10;
  int n_probe = 100;
  bool normalize = true;
  std::optional<RangeTag> gallery_range;  // unset: any range
  std::optional<RangeTag> probe_range;
};

struct GradcheckConfig {
  double tol = 1e-4;
  double h = 1e-4;
  int max_coords = 50;  // per parameter array; smaller arrays are checked in full
  int identities = 8;
  int per_identity = 2;
};

struct PathsConfig {
  std::filesystem::path data = "data";  // directory holding manifest.csv
  std::filesystem::path checkpoint = "model.ckpt";
  std::filesystem::path log = "train_log.csv";
  std::filesystem::path report = "report.csv";
  std::filesystem::path embeddings;  // empty: no export from eval
};

struct RunConfig {
  std::uint64_t seed = 0;
  ModelConfig model;
  LossConfig loss = desk_loss_config();
  TrainConfig train = desk_train_config();
  SieMode sie_mode = SieMode::kDomain;
  SynthSettings synth;
  EvalConfig eval;
  GradcheckConfig gradcheck;
  PathsConfig paths;
  std::set<std::string> explicit_keys;  // keys assigned by a file or flag

  // Unknown key or bad value: ConfigError naming the key.
  void set(const std::string& key, const std::string& value);
  bool is_set(const std::string& key) const { return explicit_keys.count(key) > 0; }
  // Every key with its current value, in a stable order.
  std::vector<std::pair<std::string, std::string>> entries() const;
  void validate() const;

  static LossConfig desk_loss_config();
  static TrainConfig desk_train_config();
};

// Lines are "key=value"; '#' starts a comment. Errors name file, line and key.
void apply_config_text(RunConfig& config, const std::string& text, const std::string& origin);
RunConfig load_run_config(const std::filesystem::path& path);

// Worker count from XSPEC_THREADS, capped by the hardware; all hardware
// threads when unset.
int worker_threads();

}  // namespace xspec
