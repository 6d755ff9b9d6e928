// Copyright 2026 The xspec Authors
// SPDX-License-Identifier: Apache-2.0

#include "xspec/cli.hpp"

#include "xspec/checkpoint.hpp"
#include "xspec/errors.hpp"
#include "xspec/gradcheck.hpp"
#include "xspec/text.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

namespace xspec {
namespace {

// Checked coordinates of one array: all of them, or a seeded sample.
std::vector<Index> pick_coords(Index size, int max_coords, std::mt19937_64& rng) {
  std::vector<Index> all(static_cast<std::size_t>(size));
  std::iota(all.begin(), all.end(), Index{0});
  if (size <= max_coords) return all;
  for (int i = 0; i < max_coords; ++i) {
    std::uniform_int_distribution<Index> pick(i, size - 1);
    std::swap(all[static_cast<std::size_t>(i)], all[static_cast<std::size_t>(pick(rng))]);
  }
  all.resize(static_cast<std::size_t>(max_coords));
  std::sort(all.begin(), all.end());
  return all;
}

void print_gradcheck(const ModelGradcheckReport& r, double tol, std::ostream& out) {
  char buf[256];
  for (const ParamCheck& p : r.params) {
    std::snprintf(buf, sizeof(buf), "%-24s %5zu/%-6zu max_rel %.3e%s\n", p.name.c_str(), p.checked,
                  p.size, p.max_rel_error, p.max_rel_error < tol ? "" : "  FAIL");
    out << buf;
  }
  std::vector<const ParamCheck*> worst;
  for (const ParamCheck& p : r.params) worst.push_back(&p);
  std::sort(worst.begin(), worst.end(),
            [](auto* a, auto* b) { return a->max_rel_error > b->max_rel_error; });
  out << "worst coordinates:\n";
  for (std::size_t i = 0; i < std::min<std::size_t>(5, worst.size()); ++i) {
    const ParamCheck& p = *worst[i];
    std::snprintf(buf, sizeof(buf), "  %s[%ld,%ld] analytic %.10e numeric %.10e rel %.3e\n",
                  p.name.c_str(), static_cast<long>(p.worst_row), static_cast<long>(p.worst_col),
                  p.analytic, p.numeric, p.max_rel_error);
    out << buf;
  }
  std::snprintf(buf, sizeof(buf), "gradcheck %s: %zu coordinates, max relative error %.3e (tol %.1e)\n",
                r.passed ? "passed" : "FAILED", r.checked, r.max_rel_error, tol);
  out << buf;
}

SieScheme scheme_for(const RunConfig& config, const Dataset& ds) {
  return SieScheme::for_dataset(config.sie_mode, ds);
}

// Model keys given explicitly must agree with what the checkpoint stores.
void check_checkpoint_config(const RunConfig& config, const ModelConfig& stored) {
  const auto want = model_config_entries(config.model);
  const auto have = model_config_entries(stored);
  for (std::size_t i = 0; i < want.size(); ++i) {
    const std::string key = "model." + want[i].first;
    if (config.is_set(key) && want[i].second != have[i].second) {
      throw VersionError(key + ": checkpoint has " + have[i].second + ", config has " +
                         want[i].second);
    }
  }
}

struct LoadedModel {
  Checkpoint ckpt;
  Dataset dataset;
  SieScheme scheme;
};

LoadedModel load_model_and_data(const RunConfig& config) {
  LoadedModel m{load_checkpoint(config.paths.checkpoint), load_dataset(config), {}};
  check_checkpoint_config(config, m.ckpt.config);
  m.scheme = scheme_for(config, m.dataset);
  if (m.ckpt.config.lambda_sie > 0.0 && m.scheme.table_size() != m.ckpt.config.n_sie) {
    throw VersionError("model.n_sie: checkpoint has " + std::to_string(m.ckpt.config.n_sie) +
                       ", scheme " + std::string(to_string(m.scheme.mode)) + " on this dataset needs " +
                       std::to_string(m.scheme.table_size()));
  }
  const ModelConfig& mc = m.ckpt.config;
  for (std::size_t i = 0; i < m.dataset.records.size(); ++i) {
    const Image& img = m.dataset.image(i);
    if (img.height != mc.image_height || img.width != mc.image_width || img.channels != mc.channels) {
      throw VersionError("model.image_height/image_width/channels: checkpoint expects " +
                         std::to_string(mc.image_height) + "x" + std::to_string(mc.image_width) +
                         "x" + std::to_string(mc.channels) + ", " + m.dataset.records[i].path +
                         " is " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                         "x" + std::to_string(img.channels));
    }
  }
  return m;
}

std::vector<std::size_t> all_records(const Dataset& ds) {
  std::vector<std::size_t> idx(ds.records.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return idx;
}

}  // namespace

ModelGradcheckReport model_gradcheck(const ModelParams& params, const BatchInput& batch,
                                     const ModelConfig& mc, const LossConfig& lc, double h,
                                     double tol, int max_coords, std::uint64_t seed) {
  const BatchResult base = batch_loss(params, batch, mc, lc, true);
  ModelParams probe = params;
  std::mt19937_64 rng(seed);
  ModelGradcheckReport report;

  std::vector<std::pair<std::string, Matrix*>> arrays;
  for_each_param(probe, [&](const std::string& name, Matrix& m) { arrays.emplace_back(name, &m); });
  std::vector<const Matrix*> grads;
  for_each_param(base.grads, [&](const std::string&, const Matrix& m) { grads.push_back(&m); });

  for (std::size_t a = 0; a < arrays.size(); ++a) {
    auto& [name, m] = arrays[a];
    if (name == "gem_p" && !mc.gem_enabled) continue;  // not part of the graph
    ParamCheck pc;
    pc.name = name;
    pc.size = static_cast<std::size_t>(m->size());
    for (Index flat : pick_coords(m->size(), max_coords, rng)) {
      const Index r = flat / m->cols(), c = flat % m->cols();
      const double saved = (*m)(r, c);
      (*m)(r, c) = saved + h;
      const double up = batch_loss(probe, batch, mc, lc, false).loss_total;
      (*m)(r, c) = saved - h;
      const double down = batch_loss(probe, batch, mc, lc, false).loss_total;
      (*m)(r, c) = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = (*grads[a])(r, c);
      const double err = relative_error(analytic, numeric);
      if (pc.checked == 0 || err > pc.max_rel_error) {
        pc.max_rel_error = err;
        pc.worst_row = r;
        pc.worst_col = c;
        pc.analytic = analytic;
        pc.numeric = numeric;
      }
      ++pc.checked;
    }
    report.checked += pc.checked;
    report.max_rel_error = std::max(report.max_rel_error, pc.max_rel_error);
    if (!(pc.max_rel_error < tol)) report.passed = false;
    report.params.push_back(std::move(pc));
  }
  return report;
}

ModelGradcheckReport reference_gradcheck(const RunConfig& config) {
  const GradcheckConfig& g = config.gradcheck;
  SynthConfig sc = config.synth.image;
  sc.height = config.model.image_height;
  sc.width = config.model.image_width;
  sc.channels = config.model.channels;
  const int n_domains = 2;
  const int per_domain = std::max(1, (g.per_identity + n_domains - 1) / n_domains);
  const Dataset ds = synth_generate(std::max(g.identities, 2), n_domains, per_domain, config.seed, sc);

  ModelConfig mc = config.model;
  const SieScheme scheme = scheme_for(config, ds);
  if (!config.is_set("model.n_sie")) mc.n_sie = scheme.table_size();
  mc.validate();

  // Identity-major, alternating domains.
  BatchInput batch;
  for (int id = 0; id < g.identities; ++id) {
    int taken = 0;
    for (int k = 0; taken < g.per_identity; ++k) {
      const int domain = k % n_domains;
      const int nth = k / n_domains;
      int seen = 0;
      for (std::size_t i = 0; i < ds.records.size(); ++i) {
        const auto& r = ds.records[i];
        if (r.identity != id || r.domain != domain) continue;
        if (seen++ != nth % per_domain) continue;
        batch.images.push_back(r.pixels.get());
        batch.labels.push_back(id);
        batch.sie_indices.push_back(mc.lambda_sie > 0.0 ? assign_sie_index(r, scheme) : 0);
        ++taken;
        break;
      }
    }
  }
  const ModelParams params = init_params(mc, config.seed);
  return model_gradcheck(params, batch, mc, config.loss, g.h, g.tol, g.max_coords, config.seed);
}

Dataset load_dataset(const RunConfig& config) {
  Dataset ds = load_manifest(config.paths.data / "manifest.csv");
  load_images(ds, config.paths.data);
  return ds;
}

ModelConfig resolve_model_config(const RunConfig& config, const Dataset& ds) {
  ModelConfig mc = config.model;
  const SieScheme scheme = scheme_for(config, ds);
  if (!config.is_set("model.n_sie")) {
    mc.n_sie = scheme.table_size();
  } else if (mc.lambda_sie > 0.0 && mc.n_sie != scheme.table_size()) {
    throw ConfigError("model.n_sie: " + std::to_string(mc.n_sie) + " but scheme " +
                      std::string(to_string(scheme.mode)) + " on this dataset needs " +
                      std::to_string(scheme.table_size()));
  }
  if (!config.is_set("model.n_classes")) mc.n_classes = ds.n_identities;
  mc.validate();
  return mc;
}

void cmd_synth(const RunConfig& config, std::ostream& out) {
  config.validate();
  const SynthSettings& s = config.synth;
  Dataset ds = synth_generate(s.n_ids, s.n_domains, s.per_domain, config.seed, s.image);
  write_dataset(ds, config.paths.data);
  out << "wrote " << ds.records.size() << " records (" << s.n_ids << " identities x "
      << s.n_domains << " domains x " << s.per_domain << ") to "
      << (config.paths.data / "manifest.csv").string() << "\n";
}

TrainResult cmd_train(const RunConfig& config, std::ostream& out) {
  config.validate();
  const Dataset ds = load_dataset(config);
  const ModelConfig mc = resolve_model_config(config, ds);
  TrainConfig tc = config.train;
  tc.seed = config.seed;
  tc.checkpoint_path = config.paths.checkpoint;
  tc.log_path = config.paths.log;
  const TrainResult r = train(ds, mc, config.loss, tc, scheme_for(config, ds));
  out << "trained " << tc.total_epochs << " epochs, " << r.log.size() << " steps on "
      << ds.records.size() << " records";
  if (!r.sie_enabled) out << " (side information disabled)";
  out << "\n";
  if (!r.log.empty()) {
    const StepRecord& last = r.log.back();
    out << "final step: loss_ce " << format_double(last.loss_ce) << " loss_tri "
        << format_double(last.loss_tri) << " loss_total " << format_double(last.loss_total) << "\n";
  }
  out << "checkpoint: " << config.paths.checkpoint.string() << "\n";
  if (!config.paths.log.empty()) out << "metrics log: " << config.paths.log.string() << "\n";
  return r;
}

std::vector<ReportRow> cmd_eval(const RunConfig& config, std::ostream& out) {
  config.validate();
  const LoadedModel m = load_model_and_data(config);
  const std::vector<std::size_t> records = all_records(m.dataset);
  const Matrix features = extract_features(m.ckpt.params, m.ckpt.config, m.dataset, records,
                                           m.scheme, config.eval.normalize, worker_threads());

  auto rows_of = [&](const std::vector<std::size_t>& idx) {
    Matrix sub(static_cast<Index>(idx.size()), features.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) sub.row(static_cast<Index>(i)) = features.row(static_cast<Index>(idx[i]));
    return sub;
  };

  std::vector<ReportRow> rows;
  for (int g = 0; g < m.dataset.n_domains; ++g) {
    for (int p = 0; p < m.dataset.n_domains; ++p) {
      if (g == p) continue;
      const Protocol proto = build_protocol(m.dataset, {g, config.eval.gallery_range},
                                            {p, config.eval.probe_range}, config.eval.n_gallery,
                                            config.eval.n_probe, config.seed);
      const RankingResult rr = evaluate_rankings(rows_of(proto.probe), rows_of(proto.gallery),
                                                 proto.probe_ids, proto.gallery_ids);
      ReportRow row{proto.name, rr.rank(1), rr.rank(5), rr.rank(10), rr.mean_ap};
      row.excluded_identities = proto.excluded_identities;
      row.excluded_queries = rr.excluded_queries;
      rows.push_back(row);
    }
  }
  const std::string table = format_report(rows);
  out << table;
  write_report(rows, config.paths.report);
  out << "report: " << config.paths.report.string() << "\n";
  if (!config.paths.embeddings.empty()) {
    export_embeddings(features, m.dataset, records, config.paths.embeddings);
    out << "embeddings: " << config.paths.embeddings.string() << "\n";
  }
  return rows;
}

bool cmd_gradcheck(const RunConfig& config, std::ostream& out) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();
  const ModelGradcheckReport r = reference_gradcheck(config);
  print_gradcheck(r, config.gradcheck.tol, out);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  char buf[64];
  std::snprintf(buf, sizeof(buf), "elapsed %.1f s\n", secs);
  out << buf;
  return r.passed;
}

void cmd_export(const RunConfig& config, std::ostream& out) {
  config.validate();
  if (config.paths.embeddings.empty()) throw ConfigError("paths.embeddings: required by export");
  const LoadedModel m = load_model_and_data(config);
  const std::vector<std::size_t> records = all_records(m.dataset);
  const Matrix features = extract_features(m.ckpt.params, m.ckpt.config, m.dataset, records,
                                           m.scheme, config.eval.normalize, worker_threads());
  export_embeddings(features, m.dataset, records, config.paths.embeddings);
  out << "wrote " << records.size() << " embeddings of dimension " << features.cols() << " to "
      << config.paths.embeddings.string() << "\n";
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Cross-spectral body recognition: synthesis, training, evaluation"};
  app.name("xspec");
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::vector<std::string> sets;
  app.add_option("-c,--config", config_path, "key=value config file");
  app.add_option("--set", sets, "override one key, e.g. --set model.dim=32")->take_all();

  // Flag values are kept as text and applied through RunConfig::set so that
  // flag and file errors read the same.
  std::vector<std::pair<CLI::Option*, std::string>> bound;
  std::map<std::string, std::string> values;
  auto flag = [&](CLI::App* sub, const std::string& name, const std::string& key,
                  const std::string& help) {
    bound.emplace_back(sub->add_option(name, values[name + "|" + key], help + " (" + key + ")"), key);
  };

  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic multi-domain dataset");
  CLI::App* train_cmd = app.add_subcommand("train", "train a model and write a checkpoint");
  CLI::App* eval = app.add_subcommand("eval", "cross-domain retrieval report for a checkpoint");
  CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of the full model");
  CLI::App* export_cmd = app.add_subcommand("export", "write the embedding table for a dataset");

  for (CLI::App* sub : {synth, train_cmd, eval, gradcheck, export_cmd}) {
    flag(sub, "--seed", "seed", "random seed");
  }
  flag(synth, "--out", "paths.data", "output directory");
  flag(synth, "--ids", "synth.ids", "identities");
  flag(synth, "--domains", "synth.domains", "domains");
  flag(synth, "--per-domain", "synth.per_domain", "images per identity and domain");
  flag(synth, "--with-ranges", "synth.with_ranges", "alternate short/long range captures");

  for (CLI::App* sub : {train_cmd, eval, export_cmd}) {
    flag(sub, "--data", "paths.data", "dataset directory");
    flag(sub, "--checkpoint", "paths.checkpoint", "checkpoint file");
  }
  for (CLI::App* sub : {train_cmd, eval, gradcheck, export_cmd}) {
    flag(sub, "--sie-scheme", "sie.scheme", "side-information scheme");
  }
  for (CLI::App* sub : {train_cmd, gradcheck}) {
    flag(sub, "--lambda-sie", "model.lambda_sie", "side-information weight");
  }
  flag(train_cmd, "--log", "paths.log", "metrics log");
  flag(train_cmd, "--epochs", "train.epochs", "epochs");
  flag(train_cmd, "--lr", "train.lr_init", "initial learning rate");
  flag(eval, "--report", "paths.report", "report file");
  flag(eval, "--export-embeddings", "paths.embeddings", "also write the embedding table");
  flag(eval, "--n-gallery", "eval.n_gallery", "gallery images per identity");
  flag(eval, "--n-probe", "eval.n_probe", "probe images per identity");
  flag(gradcheck, "--tol", "gradcheck.tol", "relative error tolerance");
  flag(gradcheck, "--step", "gradcheck.h", "finite-difference step");
  flag(gradcheck, "--max-coords", "gradcheck.max_coords", "coordinates per array");
  flag(export_cmd, "--out", "paths.embeddings", "embedding table");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    RunConfig config = config_path.empty() ? RunConfig{} : load_run_config(config_path);
    for (const std::string& kv : sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ConfigError("--set: expected key=value, got '" + kv + "'");
      config.set(std::string(trim(kv.substr(0, eq))), kv.substr(eq + 1));
    }
    for (const auto& [opt, key] : bound) {
      if (opt->count() > 0) config.set(key, values[opt->get_name() + "|" + key]);
    }

    if (synth->parsed()) {
      cmd_synth(config, out);
    } else if (train_cmd->parsed()) {
      cmd_train(config, out);
    } else if (eval->parsed()) {
      cmd_eval(config, out);
    } else if (gradcheck->parsed()) {
      if (!cmd_gradcheck(config, out)) return kExitNumerical;
    } else if (export_cmd->parsed()) {
      cmd_export(config, out);
    }
    return kExitOk;
  } catch (const NumericalError& e) {
    err << "xspec: numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const DomainError& e) {
    err << "xspec: numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const IoError& e) {
    err << "xspec: I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const ParseError& e) {
    err << "xspec: I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const ValidationError& e) {
    err << "xspec: I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const ConfigError& e) {
    err << "xspec: config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const SchemeError& e) {
    err << "xspec: config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const SamplerError& e) {
    err << "xspec: config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ShapeError& e) {
    err << "xspec: config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "xspec: error: " << e.what() << "\n";
    return kExitFailure;
  }
}

}  // namespace xspec
