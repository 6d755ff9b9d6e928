// Copyright 2026 The xspec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "xspec/data.hpp"
#include "xspec/losses.hpp"
#include "xspec/model.hpp"

#include <filesystem>
#include <random>
#include <span>
#include <vector>

namespace xspec {

struct AugmentConfig {
  bool flip = true;
  bool pad_crop = true;
  bool erase = true;
  double flip_prob = 0.5;
  int pad = 4;
  double erase_prob = 0.5;
  double erase_area_min = 0.02;
  double erase_area_max = 0.4;
  double erase_aspect_min = 0.3;
  double erase_aspect_max = 3.3;
  int erase_attempts = 100;

  static AugmentConfig none() { return {false, false, false}; }
  void validate() const;
};

struct TrainConfig {
  double lr_init = 0.0004;
  int warmup_epochs = 20;
  int total_epochs = 120;
  double momentum = 0.9;
  double weight_decay = 0.0001;
  std::uint64_t seed = 0;
  AugmentConfig augment;
  SamplerConfig sampler;
  int checkpoint_every = 0;  // epochs; 0 writes only the final checkpoint
  std::filesystem::path checkpoint_path;  // empty: no checkpoints
  std::filesystem::path log_path;         // empty: no metrics log

  void validate() const;
};

// Linear warmup to lr_init over warmup_epochs, then a half cosine to zero.
double lr_at(int epoch, const TrainConfig& config);

// v <- momentum * v + grad + weight_decay * param; param <- param - lr * v.
// Leaves everything untouched and throws NumericalError on a non-finite grad.
void sgd_step(ModelParams& params, const ModelParams& grads, ModelParams& velocity, double lr,
              double momentum, double weight_decay);

// Flip, zero-pad + random crop, random erasing with uniform-noise fill.
Image augment(const Image& image, const AugmentConfig& config, std::mt19937_64& rng);

struct BatchInput {
  std::vector<const Image*> images;
  std::vector<int> labels;
  std::vector<int> sie_indices;
};

struct BatchResult {
  double loss_ce = 0.0;
  double loss_tri = 0.0;
  double loss_total = 0.0;
  ModelParams grads;  // empty unless requested
};

// Loss of the model on one batch, optionally with gradients of the total.
BatchResult batch_loss(const ModelParams& params, const BatchInput& batch,
                       const ModelConfig& model_config, const LossConfig& loss_config,
                       bool with_grads);

struct StepRecord {
  int epoch = 0;
  int step = 0;
  double lr = 0.0;
  double loss_ce = 0.0;
  double loss_tri = 0.0;
  double loss_total = 0.0;
};

struct TrainResult {
  ModelParams params;
  std::vector<StepRecord> log;
  bool sie_enabled = true;
};

int batches_per_epoch(const Dataset& dataset, const SamplerConfig& sampler);

// Runs total_epochs of sampled batches. The dataset's pixels must be loaded.
// Model init, sampling and augmentation all derive from config.seed.
TrainResult train(const Dataset& dataset, const ModelConfig& model_config,
                  const LossConfig& loss_config, const TrainConfig& train_config,
                  const SieScheme& scheme);

}  // namespace xspec
