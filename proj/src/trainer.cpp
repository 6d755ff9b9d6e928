// Copyright 2026 The xspec Authors
// SPDX-License-Identifier: Apache-2.0

#include "xspec/trainer.hpp"

#include "xspec/checkpoint.hpp"
#include "xspec/text.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <optional>

namespace xspec {

void AugmentConfig::validate() const {
  auto prob = [](double p, const char* key) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(std::string("train.") + key + ": must lie in [0, 1]");
  };
  prob(flip_prob, "flip_prob");
  prob(erase_prob, "erase_prob");
  if (pad < 0) throw ConfigError("train.pad: must be nonnegative");
  if (!(erase_area_min > 0.0 && erase_area_min <= erase_area_max && erase_area_max <= 1.0)) {
    throw ConfigError("train.erase_area_min/max: need 0 < min <= max <= 1");
  }
  if (!(erase_aspect_min > 0.0 && erase_aspect_min <= erase_aspect_max)) {
    throw ConfigError("train.erase_aspect_min/max: need 0 < min <= max");
  }
  if (erase_attempts < 1) throw ConfigError("train.erase_attempts: must be positive");
}

void TrainConfig::validate() const {
  if (!(lr_init >= 0.0)) throw ConfigError("train.lr_init: must be nonnegative");
  if (total_epochs < 0) throw ConfigError("train.epochs: must be nonnegative");
  if (warmup_epochs < 0 || warmup_epochs > total_epochs) {
    throw ConfigError("train.warmup_epochs: must lie in [0, train.epochs]");
  }
  if (!(momentum >= 0.0)) throw ConfigError("train.momentum: must be nonnegative");
  if (!(weight_decay >= 0.0)) throw ConfigError("train.weight_decay: must be nonnegative");
  if (checkpoint_every < 0) throw ConfigError("train.checkpoint_every: must be nonnegative");
  augment.validate();
}

double lr_at(int epoch, const TrainConfig& cfg) {
  if (epoch < 0 || epoch >= cfg.total_epochs) {
    throw ContractError("lr_at: epoch " + std::to_string(epoch) + " outside [0, " +
                        std::to_string(cfg.total_epochs) + ")");
  }
  if (epoch < cfg.warmup_epochs) {
    return cfg.lr_init * static_cast<double>(epoch + 1) / static_cast<double>(cfg.warmup_epochs);
  }
  const double span = static_cast<double>(cfg.total_epochs - cfg.warmup_epochs);
  const double t = static_cast<double>(epoch - cfg.warmup_epochs) / span;
  return cfg.lr_init * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

void sgd_step(ModelParams& params, const ModelParams& grads, ModelParams& velocity, double lr,
              double momentum, double weight_decay) {
  zip_params(params, grads, [](const std::string& name, const Matrix& p, const Matrix& g) {
    if (p.rows() != g.rows() || p.cols() != g.cols()) {
      throw ShapeError("sgd_step: gradient of " + name + " has shape " + shape_string(g) +
                       ", parameter " + shape_string(p));
    }
    if (!g.allFinite()) throw NumericalError("sgd_step: non-finite gradient in " + name);
  });
  zip_params(velocity, grads, [&](const std::string&, Matrix& v, const Matrix& g) {
    if (v.rows() != g.rows() || v.cols() != g.cols()) v = Matrix::Zero(g.rows(), g.cols());
  });
  std::vector<Matrix*> ps, vs;
  std::vector<const Matrix*> gs;
  for_each_param(params, [&](const std::string&, Matrix& m) { ps.push_back(&m); });
  for_each_param(velocity, [&](const std::string&, Matrix& m) { vs.push_back(&m); });
  for_each_param(grads, [&](const std::string&, const Matrix& m) { gs.push_back(&m); });
  for (std::size_t i = 0; i < ps.size(); ++i) {
    Matrix& v = *vs[i];
    v = momentum * v + *gs[i] + weight_decay * *ps[i];
    *ps[i] -= lr * v;
  }
}

Image augment(const Image& image, const AugmentConfig& cfg, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Image out = image;
  if (cfg.flip && unit(rng) < cfg.flip_prob) out = flip_horizontal(out);

  if (cfg.pad_crop && cfg.pad > 0) {
    std::uniform_int_distribution<int> offset(0, 2 * cfg.pad);
    const int oy = offset(rng), ox = offset(rng);
    Image cropped(out.height, out.width, out.channels, 0.0);
    for (int y = 0; y < out.height; ++y) {
      const int sy = y + oy - cfg.pad;
      if (sy < 0 || sy >= out.height) continue;
      for (int x = 0; x < out.width; ++x) {
        const int sx = x + ox - cfg.pad;
        if (sx < 0 || sx >= out.width) continue;
        for (int c = 0; c < out.channels; ++c) cropped.at(y, x, c) = out.at(sy, sx, c);
      }
    }
    out = std::move(cropped);
  }

  if (cfg.erase && unit(rng) < cfg.erase_prob) {
    const double area = static_cast<double>(out.height) * out.width;
    std::uniform_real_distribution<double> frac(cfg.erase_area_min, cfg.erase_area_max);
    std::uniform_real_distribution<double> aspect(cfg.erase_aspect_min, cfg.erase_aspect_max);
    for (int attempt = 0; attempt < cfg.erase_attempts; ++attempt) {
      const double target = frac(rng) * area;
      const double ratio = aspect(rng);
      const int h = static_cast<int>(std::lround(std::sqrt(target * ratio)));
      const int w = static_cast<int>(std::lround(std::sqrt(target / ratio)));
      if (h < 1 || w < 1 || h >= out.height || w >= out.width) continue;
      const int y0 = std::uniform_int_distribution<int>(0, out.height - h)(rng);
      const int x0 = std::uniform_int_distribution<int>(0, out.width - w)(rng);
      for (int y = y0; y < y0 + h; ++y)
        for (int x = x0; x < x0 + w; ++x)
          for (int c = 0; c < out.channels; ++c) out.at(y, x, c) = unit(rng);
      break;
    }
  }
  return out;
}

BatchResult batch_loss(const ModelParams& params, const BatchInput& batch,
                       const ModelConfig& model_config, const LossConfig& loss_config,
                       bool with_grads) {
  const std::size_t n = batch.images.size();
  if (batch.labels.size() != n || batch.sie_indices.size() != n) {
    throw ContractError("batch_loss: images, labels and sie indices differ in length");
  }
  Tape tape;
  const ParamTensors bound = bind_params(tape, params, with_grads);
  std::vector<Tensor> features, logits;
  features.reserve(n);
  logits.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    ForwardOutput out = forward(tape, *batch.images[i], batch.sie_indices[i], bound, model_config);
    features.push_back(out.feature);
    logits.push_back(out.logits);
  }
  Tensor f = concat(features, 0);
  Tensor z = concat(logits, 0);
  Tensor ce = cross_entropy_id(z, batch.labels);
  Tensor tri = batch_hard_triplet({f, batch.labels}, loss_config.margin);
  Tensor total = total_loss(ce, tri, loss_config.lambda_t);

  BatchResult r;
  r.loss_ce = ce.item();
  r.loss_tri = tri.item();
  r.loss_total = total.item();
  if (!std::isfinite(r.loss_total)) throw NumericalError("non-finite batch loss");
  if (with_grads) {
    tape.backward(total);
    r.grads = collect_grads(bound);
  }
  return r;
}

int batches_per_epoch(const Dataset& dataset, const SamplerConfig& sampler) {
  const std::size_t batch = static_cast<std::size_t>(sampler.identities) *
                            static_cast<std::size_t>(sampler.per_identity);
  return static_cast<int>((dataset.records.size() + batch - 1) / batch);
}

TrainResult train(const Dataset& dataset, const ModelConfig& model_config,
                  const LossConfig& loss_config, const TrainConfig& cfg, const SieScheme& scheme) {
  model_config.validate();
  loss_config.validate();
  cfg.validate();
  if (model_config.lambda_sie > 0.0 && scheme.table_size() != model_config.n_sie) {
    throw ConfigError("model.n_sie: " + std::to_string(model_config.n_sie) + " but scheme " +
                      std::string(to_string(scheme.mode)) + " needs " +
                      std::to_string(scheme.table_size()));
  }
  if (dataset.n_identities > model_config.n_classes) {
    throw ConfigError("model.n_classes: " + std::to_string(model_config.n_classes) +
                      " is smaller than the dataset's " + std::to_string(dataset.n_identities) +
                      " identities");
  }

  std::mt19937_64 seeder(cfg.seed);
  const std::uint64_t init_seed = seeder();
  std::mt19937_64 sample_rng(seeder());
  std::mt19937_64 augment_rng(seeder());

  TrainResult result;
  result.params = init_params(model_config, init_seed);
  result.sie_enabled = model_config.lambda_sie > 0.0;

  std::optional<PkSampler> sampler;
  if (cfg.total_epochs > 0) sampler.emplace(dataset, cfg.sampler);
  ModelParams velocity = zeros_like(result.params);
  const int steps_per_epoch = batches_per_epoch(dataset, cfg.sampler);

  std::ofstream log;
  if (!cfg.log_path.empty()) {
    log.open(cfg.log_path);
    if (!log) throw IoError("cannot open metrics log: " + cfg.log_path.string());
    if (!result.sie_enabled) log << "# sie=disabled\n";
    log << "epoch,step,lr,loss_ce,loss_tri,loss_total\n";
  }
  auto save = [&](const ModelParams& p) {
    if (!cfg.checkpoint_path.empty()) save_checkpoint(p, model_config, cfg.checkpoint_path);
  };

  int step = 0;
  for (int epoch = 0; epoch < cfg.total_epochs; ++epoch) {
    const double lr = lr_at(epoch, cfg);
    for (int s = 0; s < steps_per_epoch; ++s, ++step) {
      const BatchPlan plan = sampler->sample(sample_rng);
      std::vector<Image> augmented;
      augmented.reserve(plan.entries.size());
      BatchInput batch;
      for (const BatchEntry& e : plan.entries) {
        augmented.push_back(augment(dataset.image(e.record), cfg.augment, augment_rng));
        batch.labels.push_back(e.identity);
        // The side index is only consulted when the embedding is active.
        batch.sie_indices.push_back(
            result.sie_enabled ? assign_sie_index(dataset.records[e.record], scheme) : 0);
      }
      for (const Image& img : augmented) batch.images.push_back(&img);

      BatchResult br;
      try {
        br = batch_loss(result.params, batch, model_config, loss_config, true);
        sgd_step(result.params, br.grads, velocity, lr, cfg.momentum, cfg.weight_decay);
      } catch (const NumericalError& e) {
        save(result.params);
        throw NumericalError(std::string(e.what()) + " at epoch " + std::to_string(epoch) +
                             ", step " + std::to_string(step) + "; last good parameters kept");
      }
      const StepRecord rec{epoch, step, lr, br.loss_ce, br.loss_tri, br.loss_total};
      result.log.push_back(rec);
      if (log.is_open()) {
        log << rec.epoch << "," << rec.step << "," << format_double(rec.lr) << ","
            << format_double(rec.loss_ce) << "," << format_double(rec.loss_tri) << ","
            << format_double(rec.loss_total) << "\n";
      }
    }
    if (log.is_open()) log.flush();
    if (cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0) save(result.params);
  }
  save(result.params);
  return result;
}

}  // namespace xspec
