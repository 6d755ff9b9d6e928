// Copyright 2026 The xspec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "xspec/image.hpp"

#include <cstdint>
#include <filesystem>
#include <memory>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace xspec {

enum class RangeTag { kNone, kShort, kLong };

std::string_view to_string(RangeTag tag);
// Accepts "short", "long", "none" or empty (none).
RangeTag parse_range_tag(std::string_view text);

struct ImageRecord {
  std::string path;  // relative to the manifest directory; may be empty
  int identity = 0;
  int domain = 0;
  int camera = -1;   // -1 when unknown
  RangeTag range = RangeTag::kNone;
  std::shared_ptr<const Image> pixels;  // null until loaded
};

struct Dataset {
  std::vector<ImageRecord> records;
  int n_identities = 0;  // labels lie in [0, n_identities)
  int n_domains = 0;
  int n_cameras = 0;

  // Sorted distinct identities actually present.
  std::vector<int> identities() const;
  const Image& image(std::size_t i) const;
};

// Manifest: optional "# bounds identities=I domains=D cameras=C" line, then the
// header row "path,identity,domain,camera,range", then one record per line.
// Without a bounds line the bounds are inferred from the records.
Dataset load_manifest(const std::filesystem::path& path);
void save_manifest(const Dataset& dataset, const std::filesystem::path& path);

// Resolves every record's path against `root` and reads the pixels.
void load_images(Dataset& dataset, const std::filesystem::path& root);

// Writes root/manifest.csv and root/images/NNNNN.xim, assigning record paths.
void write_dataset(Dataset& dataset, const std::filesystem::path& root);

struct SynthConfig {
  int height = 64;
  int width = 32;
  int channels = 3;
  int block = 16;       // side of the identity pattern cells
  int n_cameras = 3;    // cameras per domain
  bool with_ranges = false;  // alternate short/long range captures
  double noise = 0.05;
};

// Each identity gets a random block pattern; each domain applies a fixed
// transform (channel permutation, contrast curve, additive pattern) that does
// not depend on the seed; each image adds its own noise.
Dataset synth_generate(int n_ids, int n_domains, int per_domain, std::uint64_t seed,
                       const SynthConfig& config);

enum class SieMode { kDomain, kCamera, kDomainCamera, kDomainRange };

std::string_view to_string(SieMode mode);
// "domain-only", "camera-only", "domain+camera", "domain+range".
SieMode parse_sie_mode(std::string_view text);

struct SieScheme {
  SieMode mode = SieMode::kDomain;
  int n_domains = 2;
  int n_cameras = 1;

  int table_size() const;
  static SieScheme for_dataset(SieMode mode, const Dataset& dataset);
};

class SchemeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

int assign_sie_index(const ImageRecord& record, const SieScheme& scheme);

struct BatchEntry {
  int identity = 0;
  int domain = 0;
  std::size_t record = 0;
};

struct BatchPlan {
  std::vector<BatchEntry> entries;  // identity-major, then domain
  int identities = 0;               // P
  int per_identity = 0;             // K_batch
  int domains = 0;                  // N_D
};

struct SamplerConfig {
  int identities = 16;     // P
  int per_identity = 4;    // K_batch
  int domains = 2;         // N_D
  bool mixed_range = false;  // per identity and domain: half short, half long
};

class SamplerError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Domain-balanced PK sampler. Identities are drawn without replacement; each
// (identity, domain) cell contributes K_batch / N_D records, drawn without
// replacement when the cell is large enough and with replacement otherwise.
class PkSampler {
 public:
  PkSampler(const Dataset& dataset, const SamplerConfig& config);

  BatchPlan sample(std::mt19937_64& rng) const;
  const std::vector<int>& eligible_identities() const { return eligible_; }

 private:
  // cells_[id][domain][range_slot]; range_slot 0 holds everything unless
  // mixed_range, then 0 = short and 1 = long.
  std::vector<std::vector<std::vector<std::vector<std::size_t>>>> cells_;
  std::vector<int> eligible_;
  SamplerConfig config_;
};

BatchPlan sample_batch(const Dataset& dataset, const SamplerConfig& config, std::mt19937_64& rng);

// Throws ContractError describing the first violated invariant.
void check_batch_plan(const BatchPlan& plan, const Dataset& dataset);

}  // namespace xspec
