// Copyright 2026 The xspec Authors
// SPDX-License-Identifier: Apache-2.0

#include "xspec/model.hpp"

#include "xspec/text.hpp"

#include <atomic>
#include <cmath>
#include <random>

namespace xspec {

namespace {

std::atomic<std::uint64_t> g_sie_lookups{0};

void require(bool ok, const std::string& field, const std::string& why) {
  if (!ok) throw ConfigError("model." + field + ": " + why);
}

Matrix truncated_normal(Index rows, Index cols, Scalar std, std::mt19937_64& rng) {
  std::normal_distribution<Scalar> dist(0.0, 1.0);
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) {
    Scalar v;
    do {
      v = dist(rng);
    } while (std::abs(v) > 2.0);
    m.data()[i] = std * v;
  }
  return m;
}

Matrix fan_in_uniform(Index rows, Index cols, std::mt19937_64& rng) {
  const Scalar bound = 1.0 / std::sqrt(static_cast<Scalar>(cols));
  std::uniform_real_distribution<Scalar> dist(-bound, bound);
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

Matrix ones_row(Index n) { return Matrix::Ones(1, n); }
Matrix zeros(Index r, Index c) { return Matrix::Zero(r, c); }

Tensor attention(const Tensor& x, const EncoderLayer<Tensor>& layer, const ModelConfig& cfg) {
  const Index d = cfg.dim;
  const Index head_dim = d / cfg.heads;
  const Scalar inv_sqrt = 1.0 / std::sqrt(static_cast<Scalar>(head_dim));
  Tensor qkv = linear(x, layer.qkv_weight, layer.qkv_bias);
  std::vector<Tensor> heads;
  heads.reserve(cfg.heads);
  for (Index h = 0; h < cfg.heads; ++h) {
    Tensor q = slice_cols(qkv, h * head_dim, head_dim);
    Tensor k = slice_cols(qkv, d + h * head_dim, head_dim);
    Tensor v = slice_cols(qkv, 2 * d + h * head_dim, head_dim);
    Tensor weights = softmax(scale(matmul(q, transpose(k)), inv_sqrt), 1);
    heads.push_back(matmul(weights, v));
  }
  return linear(concat(heads, 1), layer.proj_weight, layer.proj_bias);
}

}  // namespace

void ModelConfig::validate() const {
  require(image_height > 0, "image_height", "must be positive");
  require(image_width > 0, "image_width", "must be positive");
  require(channels > 0, "channels", "must be positive");
  require(patch > 0, "patch", "must be positive");
  require(image_height % patch == 0, "image_height", "not divisible by patch");
  require(image_width % patch == 0, "image_width", "not divisible by patch");
  require(dim > 0, "dim", "must be positive");
  require(heads > 0, "heads", "must be positive");
  require(dim % heads == 0, "dim", "not divisible by heads");
  require(layers >= 0, "layers", "must be nonnegative");
  require(mlp_ratio > 0, "mlp_ratio", "must be positive");
  require(k_local >= 1, "k_local", "must be at least 1");
  require(n_sie >= 1, "n_sie", "must be at least 1");
  require(lambda_sie >= 0.0, "lambda_sie", "must be nonnegative");
  require(n_classes >= 1, "n_classes", "must be at least 1");
  require(gem_p_init >= 1.0, "gem_p_init", "must be at least 1");
  require(gem_eps > 0.0, "gem_eps", "must be positive");
  require(ln_eps > 0.0, "ln_eps", "must be positive");
}

std::vector<std::pair<std::string, std::string>> model_config_entries(const ModelConfig& c) {
  auto i = [](int v) { return std::to_string(v); };
  return {
      {"image_height", i(c.image_height)}, {"image_width", i(c.image_width)},
      {"channels", i(c.channels)},         {"patch", i(c.patch)},
      {"dim", i(c.dim)},                   {"layers", i(c.layers)},
      {"heads", i(c.heads)},               {"mlp_ratio", i(c.mlp_ratio)},
      {"k_local", i(c.k_local)},           {"n_sie", i(c.n_sie)},
      {"lambda_sie", format_double(c.lambda_sie)},
      {"n_classes", i(c.n_classes)},
      {"gem_enabled", c.gem_enabled ? "true" : "false"},
      {"gem_p_init", format_double(c.gem_p_init)},
      {"gem_eps", format_double(c.gem_eps)},
      {"ln_eps", format_double(c.ln_eps)},
  };
}

bool set_model_config_field(ModelConfig& c, const std::string& key, const std::string& value) {
  auto as_int = [&](int& field) {
    long long v = 0;
    if (!parse_int(value, v)) throw ConfigError("model." + key + ": not an integer: '" + value + "'");
    field = static_cast<int>(v);
  };
  auto as_double = [&](Scalar& field) {
    if (!parse_double(value, field)) {
      throw ConfigError("model." + key + ": not a number: '" + value + "'");
    }
  };
  if (key == "image_height") as_int(c.image_height);
  else if (key == "image_width") as_int(c.image_width);
  else if (key == "channels") as_int(c.channels);
  else if (key == "patch") as_int(c.patch);
  else if (key == "dim") as_int(c.dim);
  else if (key == "layers") as_int(c.layers);
  else if (key == "heads") as_int(c.heads);
  else if (key == "mlp_ratio") as_int(c.mlp_ratio);
  else if (key == "k_local") as_int(c.k_local);
  else if (key == "n_sie") as_int(c.n_sie);
  else if (key == "lambda_sie") as_double(c.lambda_sie);
  else if (key == "n_classes") as_int(c.n_classes);
  else if (key == "gem_enabled") {
    if (!parse_bool(value, c.gem_enabled)) {
      throw ConfigError("model.gem_enabled: not a boolean: '" + value + "'");
    }
  } else if (key == "gem_p_init") as_double(c.gem_p_init);
  else if (key == "gem_eps") as_double(c.gem_eps);
  else if (key == "ln_eps") as_double(c.ln_eps);
  else return false;
  return true;
}

ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  const Index d = config.dim;
  const Index hidden = d * config.mlp_ratio;

  ModelParams p;
  p.patch_weight = fan_in_uniform(d, config.patch_values(), rng);
  p.patch_bias = zeros(1, d);
  p.cls_token = truncated_normal(1, d, 0.02, rng);
  p.local_tokens = truncated_normal(config.k_local, d, 0.02, rng);
  p.pos_table = truncated_normal(config.sequence_length(), d, 0.02, rng);
  p.sie_table = truncated_normal(config.n_sie, d, 0.02, rng);
  p.layers.resize(static_cast<std::size_t>(config.layers));
  for (auto& l : p.layers) {
    l.ln1_gain = ones_row(d);
    l.ln1_bias = zeros(1, d);
    l.qkv_weight = fan_in_uniform(3 * d, d, rng);
    l.qkv_bias = zeros(1, 3 * d);
    l.proj_weight = fan_in_uniform(d, d, rng);
    l.proj_bias = zeros(1, d);
    l.ln2_gain = ones_row(d);
    l.ln2_bias = zeros(1, d);
    l.fc1_weight = fan_in_uniform(hidden, d, rng);
    l.fc1_bias = zeros(1, hidden);
    l.fc2_weight = fan_in_uniform(d, hidden, rng);
    l.fc2_bias = zeros(1, d);
  }
  p.norm_gain = ones_row(d);
  p.norm_bias = zeros(1, d);
  p.classifier = fan_in_uniform(config.n_classes, config.feature_dim(), rng);
  p.gem_p = Matrix::Constant(1, 1, config.gem_p_init);
  return p;
}

ModelParams zeros_like(const ModelParams& params) {
  ModelParams out = like_params<Matrix>(params);
  zip_params(out, params, [](const std::string&, Matrix& dst, const Matrix& src) {
    dst = Matrix::Zero(src.rows(), src.cols());
  });
  return out;
}

void check_param_shapes(const ModelParams& params, const ModelConfig& config) {
  const ModelParams expected = zeros_like(init_params(config, 0));
  if (params.layers.size() != expected.layers.size()) {
    throw ShapeError("parameter set has " + std::to_string(params.layers.size()) +
                     " layers, config expects " + std::to_string(expected.layers.size()));
  }
  zip_params(params, expected, [](const std::string& name, const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
      throw ShapeError(name + " has shape " + shape_string(a) + ", config expects " +
                       shape_string(b));
    }
  });
}

std::size_t parameter_count(const ModelParams& params) {
  std::size_t n = 0;
  for_each_param(params, [&](const std::string&, const Matrix& m) {
    n += static_cast<std::size_t>(m.size());
  });
  return n;
}

ParamTensors bind_params(Tape& tape, const ModelParams& params, bool trainable) {
  ParamTensors out = like_params<Tensor>(params);
  zip_params(out, params, [&](const std::string&, Tensor& dst, const Matrix& src) {
    dst = trainable ? tape.variable(src) : tape.constant(src);
  });
  return out;
}

ModelParams collect_grads(const ParamTensors& bound) {
  ModelParams out = like_params<Matrix>(bound);
  zip_params(out, bound, [](const std::string&, Matrix& dst, const Tensor& src) {
    dst = src.grad();
  });
  return out;
}

Matrix patchify(const Image& image, int patch) {
  if (patch <= 0 || image.height % patch != 0 || image.width % patch != 0) {
    throw ShapeError("patchify: image " + std::to_string(image.height) + "x" +
                     std::to_string(image.width) + " not divisible by patch " +
                     std::to_string(patch));
  }
  const int gh = image.height / patch, gw = image.width / patch, c = image.channels;
  Matrix out(gh * gw, patch * patch * c);
  for (int py = 0; py < gh; ++py) {
    for (int px = 0; px < gw; ++px) {
      auto row = out.row(py * gw + px);
      Index k = 0;
      for (int y = 0; y < patch; ++y)
        for (int x = 0; x < patch; ++x)
          for (int ch = 0; ch < c; ++ch) row(k++) = image.at(py * patch + y, px * patch + x, ch);
    }
  }
  return out;
}

Image unpatchify(const Matrix& patches, int height, int width, int channels, int patch) {
  const int gh = height / patch, gw = width / patch;
  if (height % patch != 0 || width % patch != 0 || patches.rows() != gh * gw ||
      patches.cols() != patch * patch * channels) {
    throw ShapeError("unpatchify: " + shape_string(patches) + " does not tile " +
                     std::to_string(height) + "x" + std::to_string(width));
  }
  Image img(height, width, channels);
  for (int py = 0; py < gh; ++py) {
    for (int px = 0; px < gw; ++px) {
      auto row = patches.row(py * gw + px);
      Index k = 0;
      for (int y = 0; y < patch; ++y)
        for (int x = 0; x < patch; ++x)
          for (int ch = 0; ch < channels; ++ch) img.at(py * patch + y, px * patch + x, ch) = row(k++);
    }
  }
  return img;
}

Tensor assemble_sequence(const Tensor& patches, const ParamTensors& params,
                         const ModelConfig& config) {
  if (patches.rows() != config.num_patches() || patches.cols() != config.patch_values()) {
    throw ShapeError("assemble_sequence: patches " + shape_string(patches.value()) +
                     " do not match config (" + std::to_string(config.num_patches()) + "x" +
                     std::to_string(config.patch_values()) + ")");
  }
  Tensor embedded = linear(patches, params.patch_weight, params.patch_bias);
  Tensor tokens = concat({params.cls_token, params.local_tokens, embedded}, 0);
  return add(tokens, params.pos_table);
}

Tensor apply_sie(const Tensor& z0, int sie_index, const Tensor& sie_table, Scalar lambda) {
  const Index n_sie = sie_table.rows();
  if (sie_index < 0 || sie_index >= n_sie) {
    throw IndexError("sie index " + std::to_string(sie_index) + " outside [0, " +
                     std::to_string(n_sie) + ")");
  }
  if (lambda == 0.0) return z0;
  g_sie_lookups.fetch_add(1, std::memory_order_relaxed);
  return add(z0, scale(slice_rows(sie_table, sie_index, 1), lambda));
}

std::uint64_t sie_lookup_count() { return g_sie_lookups.load(); }
void reset_sie_lookup_count() { g_sie_lookups.store(0); }

Tensor encode(const Tensor& z, const ParamTensors& params, const ModelConfig& config) {
  Tensor x = z;
  for (const auto& layer : params.layers) {
    x = add(x, attention(layernorm(x, layer.ln1_gain, layer.ln1_bias, config.ln_eps), layer, config));
    Tensor h = layernorm(x, layer.ln2_gain, layer.ln2_bias, config.ln_eps);
    h = linear(gelu(linear(h, layer.fc1_weight, layer.fc1_bias)), layer.fc2_weight,
               layer.fc2_bias);
    x = add(x, h);
  }
  return layernorm(x, params.norm_gain, params.norm_bias, config.ln_eps);
}

Tensor gem_pool(const Tensor& tokens, const Tensor& p, Scalar eps) {
  if (p.size() != 1) throw ShapeError("gem_pool: exponent must be 1x1");
  const Scalar pv = p.item();
  if (!(pv >= 1.0)) throw DomainError("gem_pool: exponent p must be >= 1, got " + std::to_string(pv));
  if (&tokens.tape() != &p.tape()) throw ContractError("gem_pool: tensors on different tapes");

  const Matrix clamped = tokens.value().cwiseMax(eps);
  const Index n = clamped.rows();
  Matrix out(1, clamped.cols());
  for (Index j = 0; j < clamped.cols(); ++j) {
    // Factor out the column max so large p does not overflow.
    const Scalar top = clamped.col(j).maxCoeff();
    const Scalar s = (clamped.col(j).array() / top).pow(pv).mean();
    out(0, j) = top * std::pow(s, 1.0 / pv);
  }
  return tokens.tape().record(std::move(out), {tokens, p}, [eps, pv, n](BackwardContext& c) {
    const Matrix& x = c.input(0);
    const Matrix& y = c.out();
    const Matrix& g = c.grad_out();
    Scalar dp = 0.0;
    for (Index j = 0; j < x.cols(); ++j) {
      const Scalar yj = y(0, j);
      Scalar wsum = 0.0, wlog = 0.0;
      for (Index i = 0; i < n; ++i) {
        const Scalar xi = x(i, j);
        const Scalar ci = std::max(xi, eps);
        const Scalar ratio = ci / yj;
        if (c.needs_grad(0) && xi > eps) {
          c.input_grad(0)(i, j) += g(0, j) * std::pow(ratio, pv - 1.0) / static_cast<Scalar>(n);
        }
        const Scalar w = std::pow(ratio, pv);
        wsum += w;
        wlog += w * std::log(ci);
      }
      dp += g(0, j) * yj * (wlog / wsum - std::log(yj)) / pv;
    }
    if (c.needs_grad(1)) c.input_grad(1)(0, 0) += dp;
  }, "gem_pool");
}

Tensor compose_feature(const Tensor& tokens, const ParamTensors& params,
                       const ModelConfig& config) {
  if (tokens.rows() != config.sequence_length() || tokens.cols() != config.dim) {
    throw ShapeError("compose_feature: tokens " + shape_string(tokens.value()) +
                     " do not match config");
  }
  Tensor global = slice_rows(tokens, 0, 1);
  Tensor local = mean(slice_rows(tokens, 1, config.k_local), 0);
  if (!config.gem_enabled) return concat({global, local}, 1);
  Tensor pooled =
      gem_pool(slice_rows(tokens, 1 + config.k_local, config.num_patches()), params.gem_p,
               config.gem_eps);
  return concat({global, local, pooled}, 1);
}

ForwardOutput forward(Tape& tape, const Image& image, int sie_index, const ParamTensors& params,
                      const ModelConfig& config) {
  if (image.height != config.image_height || image.width != config.image_width ||
      image.channels != config.channels) {
    throw ShapeError("forward: image " + std::to_string(image.height) + "x" +
                     std::to_string(image.width) + "x" + std::to_string(image.channels) +
                     " does not match config " + std::to_string(config.image_height) + "x" +
                     std::to_string(config.image_width) + "x" + std::to_string(config.channels));
  }
  Tensor patches = tape.constant(patchify(image, config.patch));
  Tensor z0 = assemble_sequence(patches, params, config);
  Tensor z = apply_sie(z0, sie_index, params.sie_table, config.lambda_sie);
  Tensor tokens = encode(z, params, config);
  ForwardOutput out;
  out.feature = compose_feature(tokens, params, config);
  out.logits = matmul(out.feature, transpose(params.classifier));
  return out;
}

Inference infer(const ModelParams& params, const Image& image, int sie_index,
                const ModelConfig& config) {
  Tape tape;
  const ParamTensors bound = bind_params(tape, params, false);
  const ForwardOutput out = forward(tape, image, sie_index, bound, config);
  return {out.feature.value(), out.logits.value()};
}

}  // namespace xspec
