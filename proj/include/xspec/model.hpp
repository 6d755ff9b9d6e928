// Copyright 2026 The xspec Authors
// SPDX-License-Identifier: Apache-2.0
//
// Vision transformer with prepended class/local tokens and an additive
// side-information embedding shared by every input token.

#pragma once

#include "xspec/image.hpp"
#include "xspec/tensor.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace xspec {

struct ModelConfig {
  int image_height = 64;
  int image_width = 32;
  int channels = 3;
  int patch = 8;
  int dim = 64;
  int layers = 2;
  int heads = 4;
  int mlp_ratio = 4;
  int k_local = 3;  // face, torso, lower body
  int n_sie = 2;
  Scalar lambda_sie = 3.0;
  int n_classes = 8;
  bool gem_enabled = false;
  Scalar gem_p_init = 3.0;
  Scalar gem_eps = 1e-6;
  Scalar ln_eps = 1e-6;

  int num_patches() const { return (image_height / patch) * (image_width / patch); }
  int sequence_length() const { return 1 + k_local + num_patches(); }
  int patch_values() const { return patch * patch * channels; }
  int feature_dim() const { return (gem_enabled ? 3 : 2) * dim; }

  // Throws ConfigError naming the offending field.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

// Flat "key value" view of a config, keys without the "model." prefix.
std::vector<std::pair<std::string, std::string>> model_config_entries(const ModelConfig& config);
// Sets one field from text. Returns false for an unknown key; throws
// ConfigError for an unparsable value.
bool set_model_config_field(ModelConfig& config, const std::string& key, const std::string& value);

template <typename T>
struct EncoderLayer {
  T ln1_gain, ln1_bias;
  T qkv_weight, qkv_bias;
  T proj_weight, proj_bias;
  T ln2_gain, ln2_bias;
  T fc1_weight, fc1_bias;
  T fc2_weight, fc2_bias;
};

// Every learnable array of the model. Instantiated with Matrix for storage
// and with Tensor for the leaves bound to a tape.
template <typename T>
struct ParamSet {
  T patch_weight;  // dim x patch_values
  T patch_bias;    // 1 x dim
  T cls_token;     // 1 x dim
  T local_tokens;  // k_local x dim
  T pos_table;     // sequence_length x dim
  T sie_table;     // n_sie x dim
  std::vector<EncoderLayer<T>> layers;
  T norm_gain, norm_bias;
  T classifier;  // n_classes x feature_dim
  T gem_p;       // 1 x 1, read only when GeM is enabled
};

using ModelParams = ParamSet<Matrix>;
using ParamTensors = ParamSet<Tensor>;

// Calls f(name, a_field, b_field) for each parameter in a fixed order. Both
// sets must have the same layer count.
template <typename A, typename B, typename F>
void zip_params(A& a, B& b, F&& f) {
  f(std::string("patch_weight"), a.patch_weight, b.patch_weight);
  f(std::string("patch_bias"), a.patch_bias, b.patch_bias);
  f(std::string("cls_token"), a.cls_token, b.cls_token);
  f(std::string("local_tokens"), a.local_tokens, b.local_tokens);
  f(std::string("pos_table"), a.pos_table, b.pos_table);
  f(std::string("sie_table"), a.sie_table, b.sie_table);
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    const std::string p = "layers." + std::to_string(i) + ".";
    auto& la = a.layers[i];
    auto& lb = b.layers[i];
    f(p + "ln1_gain", la.ln1_gain, lb.ln1_gain);
    f(p + "ln1_bias", la.ln1_bias, lb.ln1_bias);
    f(p + "qkv_weight", la.qkv_weight, lb.qkv_weight);
    f(p + "qkv_bias", la.qkv_bias, lb.qkv_bias);
    f(p + "proj_weight", la.proj_weight, lb.proj_weight);
    f(p + "proj_bias", la.proj_bias, lb.proj_bias);
    f(p + "ln2_gain", la.ln2_gain, lb.ln2_gain);
    f(p + "ln2_bias", la.ln2_bias, lb.ln2_bias);
    f(p + "fc1_weight", la.fc1_weight, lb.fc1_weight);
    f(p + "fc1_bias", la.fc1_bias, lb.fc1_bias);
    f(p + "fc2_weight", la.fc2_weight, lb.fc2_weight);
    f(p + "fc2_bias", la.fc2_bias, lb.fc2_bias);
  }
  f(std::string("norm_gain"), a.norm_gain, b.norm_gain);
  f(std::string("norm_bias"), a.norm_bias, b.norm_bias);
  f(std::string("classifier"), a.classifier, b.classifier);
  f(std::string("gem_p"), a.gem_p, b.gem_p);
}

template <typename S, typename F>
void for_each_param(S& set, F&& f) {
  zip_params(set, set, [&](const std::string& name, auto& x, auto&) { f(name, x); });
}

// Same layout with the given element type.
template <typename U, typename T>
ParamSet<U> like_params(const ParamSet<T>& src) {
  ParamSet<U> out;
  out.layers.resize(src.layers.size());
  return out;
}

// Truncated normal (std 0.02) for token, position and side tables; fan-in
// uniform for projections; unit gains and zero biases.
ModelParams init_params(const ModelConfig& config, std::uint64_t seed);
ModelParams zeros_like(const ModelParams& params);
// Throws ShapeError if any array disagrees with the config.
void check_param_shapes(const ModelParams& params, const ModelConfig& config);
std::size_t parameter_count(const ModelParams& params);

ParamTensors bind_params(Tape& tape, const ModelParams& params, bool trainable = true);
ModelParams collect_grads(const ParamTensors& bound);

// Row-major patches, each flattened (row, col, channel): N x patch*patch*c.
Matrix patchify(const Image& image, int patch);
Image unpatchify(const Matrix& patches, int height, int width, int channels, int patch);

// [cls; locals; patch_weight * patch + patch_bias] + pos_table.
Tensor assemble_sequence(const Tensor& patches, const ParamTensors& params,
                         const ModelConfig& config);

// z0 + lambda * sie_table[sie_index] on every row. With lambda == 0 the table
// is never read and z0 is returned as-is.
Tensor apply_sie(const Tensor& z0, int sie_index, const Tensor& sie_table, Scalar lambda);

// Number of side-table row reads performed by apply_sie since the last reset
// (process-wide).
std::uint64_t sie_lookup_count();
void reset_sie_lookup_count();

// Pre-norm transformer blocks followed by a final layernorm.
Tensor encode(const Tensor& z, const ParamTensors& params, const ModelConfig& config);

// Per column: (mean_i max(x_i, eps)^p)^(1/p). p is a 1 x 1 tensor (learnable).
Tensor gem_pool(const Tensor& tokens, const Tensor& p, Scalar eps);

// [cls output ; mean(local outputs)] and, with GeM, the pooled patch outputs.
Tensor compose_feature(const Tensor& tokens, const ParamTensors& params,
                       const ModelConfig& config);

struct ForwardOutput {
  Tensor feature;  // 1 x feature_dim
  Tensor logits;   // 1 x n_classes
};

ForwardOutput forward(Tape& tape, const Image& image, int sie_index, const ParamTensors& params,
                      const ModelConfig& config);

struct Inference {
  RowVector feature;
  RowVector logits;
};

// Tape-local forward without gradient tracking. Safe to call concurrently.
Inference infer(const ModelParams& params, const Image& image, int sie_index,
                const ModelConfig& config);

}  // namespace xspec
