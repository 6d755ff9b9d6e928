// Copyright 2026 The xspec Authors
// SPDX-License-Identifier: Apache-2.0

#include "xspec/run_config.hpp"

#include "xspec/errors.hpp"
#include "xspec/text.hpp"

#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>
#include <thread>

namespace xspec {
namespace {

struct Field {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

int to_int(const std::string& key, const std::string& v) {
  long long out = 0;
  if (!parse_int(v, out)) throw ConfigError(key + ": not an integer: '" + v + "'");
  return static_cast<int>(out);
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  if (!parse_double(v, out)) throw ConfigError(key + ": not a number: '" + v + "'");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  bool out = false;
  if (!parse_bool(v, out)) throw ConfigError(key + ": not a boolean: '" + v + "'");
  return out;
}

std::string b(bool v) { return v ? "true" : "false"; }

std::optional<RangeTag> to_range_filter(const std::string& key, const std::string& v) {
  if (v == "any") return std::nullopt;
  try {
    return parse_range_tag(v);
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected any, short, long or none, got '" + v + "'");
  }
}

std::string range_filter_string(const std::optional<RangeTag>& r) {
  return r ? std::string(to_string(*r)) : "any";
}

#define XSPEC_INT(k, expr)                                                              \
  Field{k, [](const RunConfig& c) { return std::to_string(c.expr); },                  \
        [](RunConfig& c, const std::string& v) { c.expr = to_int(k, v); }}
#define XSPEC_DOUBLE(k, expr)                                                           \
  Field{k, [](const RunConfig& c) { return format_double(c.expr); },                   \
        [](RunConfig& c, const std::string& v) { c.expr = to_double(k, v); }}
#define XSPEC_BOOL(k, expr)                                                             \
  Field{k, [](const RunConfig& c) { return b(c.expr); },                               \
        [](RunConfig& c, const std::string& v) { c.expr = to_bool(k, v); }}
#define XSPEC_PATH(k, expr)                                                             \
  Field{k, [](const RunConfig& c) { return c.expr.string(); },                         \
        [](RunConfig& c, const std::string& v) { c.expr = v; }}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      Field{"seed", [](const RunConfig& c) { return std::to_string(c.seed); },
            [](RunConfig& c, const std::string& v) {
              long long s = 0;
              if (!parse_int(v, s) || s < 0) throw ConfigError("seed: not a nonnegative integer: '" + v + "'");
              c.seed = static_cast<std::uint64_t>(s);
            }},
      XSPEC_DOUBLE("loss.margin", loss.margin),
      XSPEC_DOUBLE("loss.lambda_t", loss.lambda_t),
      XSPEC_DOUBLE("train.lr_init", train.lr_init),
      XSPEC_INT("train.warmup_epochs", train.warmup_epochs),
      XSPEC_INT("train.epochs", train.total_epochs),
      XSPEC_DOUBLE("train.momentum", train.momentum),
      XSPEC_DOUBLE("train.weight_decay", train.weight_decay),
      XSPEC_INT("train.checkpoint_every", train.checkpoint_every),
      XSPEC_INT("train.identities_per_batch", train.sampler.identities),
      XSPEC_INT("train.images_per_identity", train.sampler.per_identity),
      XSPEC_INT("train.domains_per_batch", train.sampler.domains),
      XSPEC_BOOL("train.mixed_range", train.sampler.mixed_range),
      XSPEC_BOOL("train.flip", train.augment.flip),
      XSPEC_DOUBLE("train.flip_prob", train.augment.flip_prob),
      XSPEC_BOOL("train.pad_crop", train.augment.pad_crop),
      XSPEC_INT("train.pad", train.augment.pad),
      XSPEC_BOOL("train.erase", train.augment.erase),
      XSPEC_DOUBLE("train.erase_prob", train.augment.erase_prob),
      XSPEC_DOUBLE("train.erase_area_min", train.augment.erase_area_min),
      XSPEC_DOUBLE("train.erase_area_max", train.augment.erase_area_max),
      XSPEC_DOUBLE("train.erase_aspect_min", train.augment.erase_aspect_min),
      XSPEC_DOUBLE("train.erase_aspect_max", train.augment.erase_aspect_max),
      XSPEC_INT("train.erase_attempts", train.augment.erase_attempts),
      Field{"sie.scheme", [](const RunConfig& c) { return std::string(to_string(c.sie_mode)); },
            [](RunConfig& c, const std::string& v) {
              try {
                c.sie_mode = parse_sie_mode(v);
              } catch (const std::exception&) {
                throw ConfigError("sie.scheme: unknown scheme '" + v +
                                  "' (domain-only, camera-only, domain+camera, domain+range)");
              }
            }},
      XSPEC_INT("synth.ids", synth.n_ids),
      XSPEC_INT("synth.domains", synth.n_domains),
      XSPEC_INT("synth.per_domain", synth.per_domain),
      XSPEC_INT("synth.height", synth.image.height),
      XSPEC_INT("synth.width", synth.image.width),
      XSPEC_INT("synth.channels", synth.image.channels),
      XSPEC_INT("synth.block", synth.image.block),
      XSPEC_INT("synth.cameras", synth.image.n_cameras),
      XSPEC_BOOL("synth.with_ranges", synth.image.with_ranges),
      XSPEC_DOUBLE("synth.noise", synth.image.noise),
      XSPEC_INT("eval.n_gallery", eval.n_gallery),
      XSPEC_INT("eval.n_probe", eval.n_probe),
      XSPEC_BOOL("eval.normalize", eval.normalize),
      Field{"eval.gallery_range", [](const RunConfig& c) { return range_filter_string(c.eval.gallery_range); },
            [](RunConfig& c, const std::string& v) { c.eval.gallery_range = to_range_filter("eval.gallery_range", v); }},
      Field{"eval.probe_range", [](const RunConfig& c) { return range_filter_string(c.eval.probe_range); },
            [](RunConfig& c, const std::string& v) { c.eval.probe_range = to_range_filter("eval.probe_range", v); }},
      XSPEC_DOUBLE("gradcheck.tol", gradcheck.tol),
      XSPEC_DOUBLE("gradcheck.h", gradcheck.h),
      XSPEC_INT("gradcheck.max_coords", gradcheck.max_coords),
      XSPEC_INT("gradcheck.identities", gradcheck.identities),
      XSPEC_INT("gradcheck.per_identity", gradcheck.per_identity),
      XSPEC_PATH("paths.data", paths.data),
      XSPEC_PATH("paths.checkpoint", paths.checkpoint),
      XSPEC_PATH("paths.log", paths.log),
      XSPEC_PATH("paths.report", paths.report),
      XSPEC_PATH("paths.embeddings", paths.embeddings),
  };
  return table;
}

#undef XSPEC_INT
#undef XSPEC_DOUBLE
#undef XSPEC_BOOL
#undef XSPEC_PATH

}  // namespace

// Trained from scratch, the summed triplet term pulls every feature to one
// point long before cross-domain positives get close; a small weight lets the
// identity loss shape the space first.
LossConfig RunConfig::desk_loss_config() {
  LossConfig l;
  l.lambda_t = 0.005;
  return l;
}

TrainConfig RunConfig::desk_train_config() {
  TrainConfig t;
  t.total_epochs = 30;
  t.warmup_epochs = 5;
  t.lr_init = 0.01;
  t.sampler.identities = 8;
  t.sampler.per_identity = 4;
  t.sampler.domains = 2;
  return t;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const std::string v(trim(value));
  if (key.rfind("model.", 0) == 0) {
    if (!set_model_config_field(model, key.substr(6), v)) throw ConfigError(key + ": unknown key");
  } else {
    bool found = false;
    for (const Field& f : fields()) {
      if (f.key == key) {
        f.set(*this, v);
        found = true;
        break;
      }
    }
    if (!found) throw ConfigError(key + ": unknown key");
  }
  explicit_keys.insert(key);
}

std::vector<std::pair<std::string, std::string>> RunConfig::entries() const {
  std::vector<std::pair<std::string, std::string>> out;
  for (auto& [k, v] : model_config_entries(model)) out.emplace_back("model." + k, v);
  for (const Field& f : fields()) out.emplace_back(f.key, f.get(*this));
  return out;
}

void RunConfig::validate() const {
  model.validate();
  loss.validate();
  train.validate();
  auto positive = [](int v, const char* key) {
    if (v < 1) throw ConfigError(std::string(key) + ": must be positive");
  };
  if (synth.n_ids < 2) throw ConfigError("synth.ids: need at least 2 identities");
  if (synth.n_domains < 2) throw ConfigError("synth.domains: need at least 2 domains");
  positive(synth.per_domain, "synth.per_domain");
  positive(synth.image.height, "synth.height");
  positive(synth.image.width, "synth.width");
  positive(synth.image.channels, "synth.channels");
  positive(synth.image.block, "synth.block");
  positive(synth.image.n_cameras, "synth.cameras");
  if (!(synth.image.noise >= 0.0)) throw ConfigError("synth.noise: must be nonnegative");
  positive(eval.n_gallery, "eval.n_gallery");
  positive(eval.n_probe, "eval.n_probe");
  if (!(gradcheck.tol > 0.0)) throw ConfigError("gradcheck.tol: must be positive");
  if (!(gradcheck.h > 0.0)) throw ConfigError("gradcheck.h: must be positive");
  positive(gradcheck.max_coords, "gradcheck.max_coords");
  positive(gradcheck.identities, "gradcheck.identities");
  positive(gradcheck.per_identity, "gradcheck.per_identity");
}

void apply_config_text(RunConfig& config, const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const std::string_view body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    const std::string where = origin + ":" + std::to_string(line_no) + ": ";
    if (eq == std::string_view::npos) {
      throw ConfigError(where + "expected key=value, got '" + std::string(body) + "'");
    }
    const std::string key(trim(body.substr(0, eq)));
    try {
      config.set(key, std::string(body.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  RunConfig c;
  apply_config_text(c, ss.str(), path.string());
  return c;
}

int worker_threads() {
  const int hw = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  const char* env = std::getenv("XSPEC_THREADS");
  if (env == nullptr || *env == '\0') return hw;
  long long v = 0;
  if (!parse_int(env, v) || v < 1) {
    throw ConfigError(std::string("XSPEC_THREADS: expected a positive integer, got '") + env + "'");
  }
  return static_cast<int>(std::min<long long>(v, hw));
}

}  // namespace xspec
