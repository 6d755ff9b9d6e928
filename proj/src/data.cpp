// Copyright 2026 The xspec Authors
// SPDX-License-Identifier: Apache-2.0

#include "xspec/data.hpp"

#include "xspec/text.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

namespace xspec {

namespace {

constexpr std::string_view kManifestHeader = "path,identity,domain,camera,range";

// Domain transforms are seeded independently of the dataset seed so that
// datasets drawn with different seeds share the same domains.
constexpr std::uint64_t kDomainSeed = 0x5eedd0a1ULL;

struct DomainTransform {
  std::vector<int> channel_order;
  double gamma = 1.0;
  bool invert = false;
  std::vector<double> additive;  // HWC, same size as the image
  std::vector<double> camera_offset;
};

DomainTransform make_domain_transform(int domain, const SynthConfig& cfg) {
  DomainTransform t;
  std::mt19937_64 rng(kDomainSeed + static_cast<std::uint64_t>(domain) * 7919u);
  t.channel_order.resize(static_cast<std::size_t>(cfg.channels));
  std::iota(t.channel_order.begin(), t.channel_order.end(), 0);
  const std::size_t n = static_cast<std::size_t>(cfg.height) * cfg.width * cfg.channels;
  t.additive.assign(n, 0.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  if (domain > 0) {
    // Rotate channels so every non-reference domain scrambles colour.
    std::rotate(t.channel_order.begin(),
                t.channel_order.begin() + (domain % std::max(cfg.channels, 1)),
                t.channel_order.end());
    t.gamma = 0.6 + 0.9 * unit(rng);
    t.invert = domain % 2 == 1;
    const double fy = 1.0 + 3.0 * unit(rng), fx = 1.0 + 2.0 * unit(rng);
    const double phase = 6.283185307179586 * unit(rng);
    for (int y = 0; y < cfg.height; ++y)
      for (int x = 0; x < cfg.width; ++x)
        for (int c = 0; c < cfg.channels; ++c) {
          const double v = 0.12 * std::sin(6.283185307179586 * (fy * y / cfg.height +
                                                                fx * x / cfg.width) +
                                           phase + c);
          t.additive[(static_cast<std::size_t>(y) * cfg.width + x) * cfg.channels + c] = v;
        }
  }
  std::uniform_real_distribution<double> offset(-0.05, 0.05);
  for (int c = 0; c < cfg.n_cameras; ++c) t.camera_offset.push_back(offset(rng));
  return t;
}

Image identity_pattern(const SynthConfig& cfg, std::mt19937_64& rng) {
  const int gh = (cfg.height + cfg.block - 1) / cfg.block;
  const int gw = (cfg.width + cfg.block - 1) / cfg.block;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> cells(static_cast<std::size_t>(gh) * gw * cfg.channels);
  for (double& v : cells) v = unit(rng);
  Image img(cfg.height, cfg.width, cfg.channels);
  for (int y = 0; y < cfg.height; ++y)
    for (int x = 0; x < cfg.width; ++x)
      for (int c = 0; c < cfg.channels; ++c)
        img.at(y, x, c) =
            cells[(static_cast<std::size_t>(y / cfg.block) * gw + x / cfg.block) * cfg.channels + c];
  return img;
}

// Halves the effective resolution (2x2 average, nearest upsample).
Image long_range_view(const Image& src) {
  Image out = src;
  for (int y = 0; y + 1 < src.height; y += 2)
    for (int x = 0; x + 1 < src.width; x += 2)
      for (int c = 0; c < src.channels; ++c) {
        const double avg = 0.25 * (src.at(y, x, c) + src.at(y + 1, x, c) + src.at(y, x + 1, c) +
                                   src.at(y + 1, x + 1, c));
        out.at(y, x, c) = out.at(y + 1, x, c) = out.at(y, x + 1, c) = out.at(y + 1, x + 1, c) = avg;
      }
  return out;
}

int parse_label(const std::string& text, const std::string& what, const std::string& where) {
  long long v = 0;
  if (!parse_int(text, v)) throw ParseError(where + ": " + what + " is not an integer: '" + text + "'");
  if (v < 0) throw ValidationError(where + ": negative " + what + " " + text);
  return static_cast<int>(v);
}

}  // namespace

std::string_view to_string(RangeTag tag) {
  switch (tag) {
    case RangeTag::kShort: return "short";
    case RangeTag::kLong: return "long";
    case RangeTag::kNone: break;
  }
  return "none";
}

RangeTag parse_range_tag(std::string_view text) {
  text = trim(text);
  if (text.empty() || text == "none") return RangeTag::kNone;
  if (text == "short") return RangeTag::kShort;
  if (text == "long") return RangeTag::kLong;
  throw ParseError("unknown range tag '" + std::string(text) + "'");
}

std::vector<int> Dataset::identities() const {
  std::set<int> ids;
  for (const auto& r : records) ids.insert(r.identity);
  return {ids.begin(), ids.end()};
}

const Image& Dataset::image(std::size_t i) const {
  const ImageRecord& r = records.at(i);
  if (!r.pixels) throw ContractError("pixels of record " + std::to_string(i) + " not loaded");
  return *r.pixels;
}

Dataset load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest: " + path.string());

  Dataset ds;
  int declared_ids = -1, declared_domains = -1, declared_cameras = -1;
  bool header_seen = false;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    const std::string_view t = trim(line);
    if (t.empty()) continue;
    if (t.front() == '#') {
      std::istringstream ss{std::string(t.substr(1))};
      std::string word;
      ss >> word;
      if (word != "bounds") continue;
      while (ss >> word) {
        const auto eq = word.find('=');
        long long v = 0;
        if (eq == std::string::npos || !parse_int(word.substr(eq + 1), v) || v < 0) {
          throw ParseError(where + ": bad bounds entry '" + word + "'");
        }
        const std::string key = word.substr(0, eq);
        if (key == "identities") declared_ids = static_cast<int>(v);
        else if (key == "domains") declared_domains = static_cast<int>(v);
        else if (key == "cameras") declared_cameras = static_cast<int>(v);
        else throw ParseError(where + ": unknown bounds key '" + key + "'");
      }
      continue;
    }
    if (!header_seen) {
      if (t != kManifestHeader) {
        throw ParseError(where + ": expected header '" + std::string(kManifestHeader) + "'");
      }
      header_seen = true;
      continue;
    }
    const auto fields = split(t, ',');
    if (fields.size() != 5) {
      throw ParseError(where + ": expected 5 fields, got " + std::to_string(fields.size()));
    }
    ImageRecord r;
    r.path = std::string(trim(fields[0]));
    r.identity = parse_label(fields[1], "identity", where);
    r.domain = parse_label(fields[2], "domain", where);
    r.camera = trim(fields[3]).empty() ? -1 : parse_label(fields[3], "camera", where);
    try {
      r.range = parse_range_tag(fields[4]);
    } catch (const ParseError& e) {
      throw ParseError(where + ": " + e.what());
    }
    if (declared_ids >= 0 && r.identity >= declared_ids) {
      throw ValidationError(where + ": identity " + std::to_string(r.identity) +
                            " outside declared bound " + std::to_string(declared_ids));
    }
    if (declared_domains >= 0 && r.domain >= declared_domains) {
      throw ValidationError(where + ": domain " + std::to_string(r.domain) +
                            " outside declared bound " + std::to_string(declared_domains));
    }
    if (declared_cameras >= 0 && r.camera >= declared_cameras) {
      throw ValidationError(where + ": camera " + std::to_string(r.camera) +
                            " outside declared bound " + std::to_string(declared_cameras));
    }
    ds.n_identities = std::max(ds.n_identities, r.identity + 1);
    ds.n_domains = std::max(ds.n_domains, r.domain + 1);
    ds.n_cameras = std::max(ds.n_cameras, r.camera + 1);
    ds.records.push_back(std::move(r));
  }
  if (!header_seen) throw ParseError(path.string() + ": missing header row");
  if (declared_ids >= 0) ds.n_identities = declared_ids;
  if (declared_domains >= 0) ds.n_domains = declared_domains;
  if (declared_cameras >= 0) ds.n_cameras = declared_cameras;
  return ds;
}

void save_manifest(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest: " + path.string());
  out << "# bounds identities=" << ds.n_identities << " domains=" << ds.n_domains
      << " cameras=" << ds.n_cameras << "\n";
  out << kManifestHeader << "\n";
  for (const auto& r : ds.records) {
    out << r.path << "," << r.identity << "," << r.domain << ",";
    if (r.camera >= 0) out << r.camera;
    out << "," << to_string(r.range) << "\n";
  }
  if (!out) throw IoError("manifest write failed: " + path.string());
}

void load_images(Dataset& ds, const std::filesystem::path& root) {
  for (auto& r : ds.records) {
    if (r.pixels) continue;
    if (r.path.empty()) throw IoError("record without path cannot be loaded");
    r.pixels = std::make_shared<const Image>(read_image(root / r.path));
  }
}

void write_dataset(Dataset& ds, const std::filesystem::path& root) {
  std::error_code ec;
  std::filesystem::create_directories(root / "images", ec);
  if (ec) throw IoError("cannot create " + (root / "images").string() + ": " + ec.message());
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    auto& r = ds.records[i];
    char name[32];
    std::snprintf(name, sizeof(name), "images/%05zu.xim", i);
    r.path = name;
    if (!r.pixels) throw ContractError("write_dataset: record " + std::to_string(i) + " has no pixels");
    write_image_blob(*r.pixels, root / r.path);
  }
  save_manifest(ds, root / "manifest.csv");
}

Dataset synth_generate(int n_ids, int n_domains, int per_domain, std::uint64_t seed,
                       const SynthConfig& cfg) {
  if (n_ids < 2) throw ConfigError("synth.ids: need at least 2 identities");
  if (n_domains < 2) throw ConfigError("synth.domains: need at least 2 domains");
  if (per_domain < 1) throw ConfigError("synth.per_domain: must be positive");
  if (cfg.height <= 0 || cfg.width <= 0 || cfg.channels <= 0 || cfg.block <= 0) {
    throw ConfigError("synth: image geometry must be positive");
  }
  if (cfg.n_cameras < 1) throw ConfigError("synth.cameras: must be positive");

  std::vector<DomainTransform> transforms;
  for (int d = 0; d < n_domains; ++d) transforms.push_back(make_domain_transform(d, cfg));

  std::mt19937_64 rng(seed);
  std::vector<Image> patterns;
  for (int id = 0; id < n_ids; ++id) patterns.push_back(identity_pattern(cfg, rng));

  Dataset ds;
  ds.n_identities = n_ids;
  ds.n_domains = n_domains;
  ds.n_cameras = cfg.n_cameras;
  std::normal_distribution<double> noise(0.0, cfg.noise);
  for (int id = 0; id < n_ids; ++id) {
    for (int d = 0; d < n_domains; ++d) {
      const DomainTransform& tf = transforms[static_cast<std::size_t>(d)];
      for (int k = 0; k < per_domain; ++k) {
        ImageRecord r;
        r.identity = id;
        r.domain = d;
        r.camera = k % cfg.n_cameras;
        r.range = cfg.with_ranges ? (k % 2 == 0 ? RangeTag::kShort : RangeTag::kLong)
                                  : RangeTag::kNone;
        const Image& base = r.range == RangeTag::kLong
                                ? long_range_view(patterns[static_cast<std::size_t>(id)])
                                : patterns[static_cast<std::size_t>(id)];
        Image img(cfg.height, cfg.width, cfg.channels);
        for (int y = 0; y < cfg.height; ++y)
          for (int x = 0; x < cfg.width; ++x)
            for (int c = 0; c < cfg.channels; ++c) {
              double v = std::pow(base.at(y, x, tf.channel_order[static_cast<std::size_t>(c)]),
                                  tf.gamma);
              if (tf.invert) v = 1.0 - v;
              // At full contrast an untrained model already matches
              // identities across domains well above chance.
              v = 0.2 + 0.6 * v;
              v += tf.additive[(static_cast<std::size_t>(y) * cfg.width + x) * cfg.channels + c];
              v += tf.camera_offset[static_cast<std::size_t>(r.camera)];
              v += noise(rng);
              img.at(y, x, c) = std::clamp(v, 0.0, 1.0);
            }
        r.pixels = std::make_shared<const Image>(std::move(img));
        ds.records.push_back(std::move(r));
      }
    }
  }
  return ds;
}

std::string_view to_string(SieMode mode) {
  switch (mode) {
    case SieMode::kDomain: return "domain-only";
    case SieMode::kCamera: return "camera-only";
    case SieMode::kDomainCamera: return "domain+camera";
    case SieMode::kDomainRange: return "domain+range";
  }
  return "?";
}

SieMode parse_sie_mode(std::string_view text) {
  text = trim(text);
  if (text == "domain-only" || text == "domain") return SieMode::kDomain;
  if (text == "camera-only" || text == "camera") return SieMode::kCamera;
  if (text == "domain+camera") return SieMode::kDomainCamera;
  if (text == "domain+range") return SieMode::kDomainRange;
  throw ConfigError("sie.scheme: unknown scheme '" + std::string(text) +
                    "' (expected domain-only, camera-only, domain+camera or domain+range)");
}

int SieScheme::table_size() const {
  switch (mode) {
    case SieMode::kDomain: return n_domains;
    case SieMode::kCamera: return n_cameras;
    case SieMode::kDomainCamera: return n_domains * n_cameras;
    case SieMode::kDomainRange: return 2 * n_domains;
  }
  return 0;
}

SieScheme SieScheme::for_dataset(SieMode mode, const Dataset& dataset) {
  return {mode, std::max(dataset.n_domains, 1), std::max(dataset.n_cameras, 1)};
}

int assign_sie_index(const ImageRecord& r, const SieScheme& s) {
  if (r.domain < 0 || r.domain >= s.n_domains) {
    throw SchemeError("domain " + std::to_string(r.domain) + " outside scheme's " +
                      std::to_string(s.n_domains) + " domains");
  }
  const bool needs_camera = s.mode == SieMode::kCamera || s.mode == SieMode::kDomainCamera;
  if (needs_camera && (r.camera < 0 || r.camera >= s.n_cameras)) {
    throw SchemeError(std::string(to_string(s.mode)) + " scheme needs a camera in [0, " +
                      std::to_string(s.n_cameras) + "), record has " + std::to_string(r.camera));
  }
  switch (s.mode) {
    case SieMode::kDomain: return r.domain;
    case SieMode::kCamera: return r.camera;
    case SieMode::kDomainCamera: return r.domain * s.n_cameras + r.camera;
    case SieMode::kDomainRange:
      if (r.range == RangeTag::kNone) {
        throw SchemeError("domain+range scheme needs a range tag on every record");
      }
      return (r.range == RangeTag::kLong ? 1 : 0) * s.n_domains + r.domain;
  }
  throw SchemeError("unknown scheme");
}

PkSampler::PkSampler(const Dataset& ds, const SamplerConfig& cfg) : config_(cfg) {
  if (cfg.identities < 1 || cfg.per_identity < 1 || cfg.domains < 1) {
    throw SamplerError("sampler sizes must be positive");
  }
  if (cfg.per_identity % cfg.domains != 0) {
    throw SamplerError("K_batch " + std::to_string(cfg.per_identity) +
                       " is not divisible by N_D " + std::to_string(cfg.domains));
  }
  const int per_cell = cfg.per_identity / cfg.domains;
  if (cfg.mixed_range && per_cell % 2 != 0) {
    throw SamplerError("mixed-range sampling needs an even K_batch / N_D, got " +
                       std::to_string(per_cell));
  }
  const std::size_t slots = cfg.mixed_range ? 2 : 1;
  cells_.assign(static_cast<std::size_t>(ds.n_identities),
                std::vector<std::vector<std::vector<std::size_t>>>(
                    static_cast<std::size_t>(cfg.domains),
                    std::vector<std::vector<std::size_t>>(slots)));
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    const auto& r = ds.records[i];
    if (r.domain >= cfg.domains || r.identity >= ds.n_identities) continue;
    std::size_t slot = 0;
    if (cfg.mixed_range) {
      if (r.range == RangeTag::kNone) continue;
      slot = r.range == RangeTag::kLong ? 1 : 0;
    }
    cells_[static_cast<std::size_t>(r.identity)][static_cast<std::size_t>(r.domain)][slot].push_back(i);
  }
  for (int id = 0; id < ds.n_identities; ++id) {
    bool complete = true;
    for (const auto& domain : cells_[static_cast<std::size_t>(id)])
      for (const auto& cell : domain) complete = complete && !cell.empty();
    if (complete) eligible_.push_back(id);
  }
  if (static_cast<int>(eligible_.size()) < cfg.identities) {
    throw SamplerError("P = " + std::to_string(cfg.identities) + " exceeds the " +
                       std::to_string(eligible_.size()) +
                       " identities covering every sampled domain");
  }
}

BatchPlan PkSampler::sample(std::mt19937_64& rng) const {
  BatchPlan plan;
  plan.identities = config_.identities;
  plan.per_identity = config_.per_identity;
  plan.domains = config_.domains;

  std::vector<int> ids = eligible_;
  // Partial Fisher-Yates: the first P entries are a uniform draw without replacement.
  for (int i = 0; i < config_.identities; ++i) {
    std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(i), ids.size() - 1);
    std::swap(ids[static_cast<std::size_t>(i)], ids[pick(rng)]);
  }
  ids.resize(static_cast<std::size_t>(config_.identities));

  const int per_cell = config_.per_identity / config_.domains;
  const std::size_t slots = config_.mixed_range ? 2 : 1;
  const std::size_t per_slot = static_cast<std::size_t>(per_cell) / slots;
  for (int id : ids) {
    for (int d = 0; d < config_.domains; ++d) {
      for (std::size_t s = 0; s < slots; ++s) {
        std::vector<std::size_t> cell =
            cells_[static_cast<std::size_t>(id)][static_cast<std::size_t>(d)][s];
        std::vector<std::size_t> chosen;
        if (cell.size() >= per_slot) {
          for (std::size_t i = 0; i < per_slot; ++i) {
            std::uniform_int_distribution<std::size_t> pick(i, cell.size() - 1);
            std::swap(cell[i], cell[pick(rng)]);
            chosen.push_back(cell[i]);
          }
        } else {
          std::uniform_int_distribution<std::size_t> pick(0, cell.size() - 1);
          for (std::size_t i = 0; i < per_slot; ++i) chosen.push_back(cell[pick(rng)]);
        }
        for (std::size_t rec : chosen) plan.entries.push_back({id, d, rec});
      }
    }
  }
  return plan;
}

BatchPlan sample_batch(const Dataset& dataset, const SamplerConfig& config, std::mt19937_64& rng) {
  return PkSampler(dataset, config).sample(rng);
}

void check_batch_plan(const BatchPlan& plan, const Dataset& ds) {
  const std::size_t expected =
      static_cast<std::size_t>(plan.identities) * static_cast<std::size_t>(plan.per_identity);
  if (plan.entries.size() != expected) {
    throw ContractError("batch has " + std::to_string(plan.entries.size()) + " entries, expected " +
                        std::to_string(expected));
  }
  std::map<int, std::vector<int>> per_id;
  for (const auto& e : plan.entries) {
    const auto& r = ds.records.at(e.record);
    if (r.identity != e.identity || r.domain != e.domain) {
      throw ContractError("entry labels disagree with record " + std::to_string(e.record));
    }
    auto& counts = per_id[e.identity];
    counts.resize(static_cast<std::size_t>(plan.domains), 0);
    if (e.domain < 0 || e.domain >= plan.domains) throw ContractError("entry domain out of range");
    ++counts[static_cast<std::size_t>(e.domain)];
  }
  if (static_cast<int>(per_id.size()) != plan.identities) {
    throw ContractError("batch has " + std::to_string(per_id.size()) + " identities, expected " +
                        std::to_string(plan.identities));
  }
  const int per_cell = plan.per_identity / plan.domains;
  for (const auto& [id, counts] : per_id) {
    for (std::size_t d = 0; d < counts.size(); ++d) {
      if (counts[d] != per_cell) {
        throw ContractError("identity " + std::to_string(id) + " has " + std::to_string(counts[d]) +
                            " records in domain " + std::to_string(d) + ", expected " +
                            std::to_string(per_cell));
      }
    }
  }
}

}  // namespace xspec
