// Copyright 2026 The xspec Authors
// SPDX-License-Identifier: Apache-2.0

#include "xspec/losses.hpp"

#include <cmath>
#include <map>

namespace xspec {

void LossConfig::validate() const {
  if (!(margin >= 0.0)) throw ConfigError("loss.margin: must be nonnegative");
  if (!(lambda_t >= 0.0)) throw ConfigError("loss.lambda_t: must be nonnegative");
}

BatchShape check_batch_labels(std::span<const int> labels) {
  std::map<int, int> counts;
  for (int l : labels) ++counts[l];
  if (counts.size() < 2) {
    throw ContractError("triplet batch needs at least 2 identities, got " +
                        std::to_string(counts.size()));
  }
  const int k = counts.begin()->second;
  for (const auto& [label, n] : counts) {
    if (n < 2) {
      throw ContractError("identity " + std::to_string(label) +
                          " has a single sample; hardest positive undefined");
    }
    if (n != k) {
      throw ContractError("identity " + std::to_string(label) + " has " + std::to_string(n) +
                          " samples, expected " + std::to_string(k));
    }
  }
  return {static_cast<int>(counts.size()), k};
}

Tensor pairwise_dist(const Tensor& features) {
  const Matrix& x = features.value();
  const Index n = x.rows();
  Matrix d = Matrix::Zero(n, n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = i + 1; j < n; ++j) {
      const Scalar v = std::sqrt((x.row(i) - x.row(j)).squaredNorm());
      d(i, j) = v;
      d(j, i) = v;
    }
  }
  return features.tape().record(std::move(d), {features}, [n](BackwardContext& c) {
    const Matrix& x = c.input(0);
    const Matrix& dist = c.out();
    const Matrix& g = c.grad_out();
    Matrix& gx = c.input_grad(0);
    for (Index i = 0; i < n; ++i) {
      for (Index j = i + 1; j < n; ++j) {
        const Scalar v = dist(i, j);
        if (v <= 0.0) continue;
        const Scalar w = (g(i, j) + g(j, i)) / v;
        const RowVector diff = x.row(i) - x.row(j);
        gx.row(i) += w * diff;
        gx.row(j) -= w * diff;
      }
    }
  }, "pairwise_dist");
}

Tensor batch_hard_triplet_from_dist(const Tensor& dist, std::span<const int> labels,
                                    Scalar margin) {
  check_batch_labels(labels);
  const Matrix& d = dist.value();
  const Index n = d.rows();
  if (d.cols() != n || n != static_cast<Index>(labels.size())) {
    throw ShapeError("batch_hard_triplet: distance " + shape_string(d) + " vs " +
                     std::to_string(labels.size()) + " labels");
  }
  // Per anchor: index of hardest positive and negative, or -1 when inactive.
  std::vector<Index> hard_pos(n, -1), hard_neg(n, -1);
  Scalar total = 0.0;
  for (Index a = 0; a < n; ++a) {
    Index p = -1, q = -1;
    for (Index j = 0; j < n; ++j) {
      if (labels[j] == labels[a]) {
        if (p < 0 || d(a, j) > d(a, p)) p = j;
      } else if (q < 0 || d(a, j) < d(a, q)) {
        q = j;
      }
    }
    const Scalar hinge = margin + d(a, p) - d(a, q);
    if (hinge > 0.0) {
      total += hinge;
      hard_pos[a] = p;
      hard_neg[a] = q;
    }
  }
  Matrix out(1, 1);
  out(0, 0) = total;
  return dist.tape().record(std::move(out), {dist},
                            [hard_pos = std::move(hard_pos), hard_neg = std::move(hard_neg)](
                                BackwardContext& c) {
    const Scalar g = c.grad_out()(0, 0);
    Matrix& gd = c.input_grad(0);
    for (std::size_t a = 0; a < hard_pos.size(); ++a) {
      if (hard_pos[a] < 0) continue;
      gd(static_cast<Index>(a), hard_pos[a]) += g;
      gd(static_cast<Index>(a), hard_neg[a]) -= g;
    }
  }, "batch_hard_triplet");
}

Tensor batch_hard_triplet(const LabeledBatch& batch, Scalar margin) {
  return batch_hard_triplet_from_dist(pairwise_dist(batch.features), batch.labels, margin);
}

Tensor cross_entropy_id(const Tensor& logits, std::span<const int> labels) {
  const Matrix& z = logits.value();
  const Index n = z.rows(), classes = z.cols();
  if (n != static_cast<Index>(labels.size()) || n == 0) {
    throw ShapeError("cross_entropy_id: logits " + shape_string(z) + " vs " +
                     std::to_string(labels.size()) + " labels");
  }
  for (int l : labels) {
    if (l < 0 || l >= classes) {
      throw IndexError("cross_entropy_id: label " + std::to_string(l) + " outside [0, " +
                       std::to_string(classes) + ")");
    }
  }
  Matrix probs(n, classes);
  Scalar total = 0.0;
  for (Index i = 0; i < n; ++i) {
    const Scalar top = z.row(i).maxCoeff();
    const auto shifted = (z.row(i).array() - top).eval();
    const Scalar lse = std::log(shifted.exp().sum());
    probs.row(i) = (shifted - lse).exp().matrix();
    total += lse - shifted(labels[i]);
  }
  Matrix out(1, 1);
  out(0, 0) = total / static_cast<Scalar>(n);
  std::vector<int> lab(labels.begin(), labels.end());
  return logits.tape().record(std::move(out), {logits},
                              [probs = std::move(probs), lab = std::move(lab)](BackwardContext& c) {
    const Scalar g = c.grad_out()(0, 0) / static_cast<Scalar>(probs.rows());
    Matrix& gz = c.input_grad(0);
    gz += g * probs;
    for (std::size_t i = 0; i < lab.size(); ++i) gz(static_cast<Index>(i), lab[i]) -= g;
  }, "cross_entropy_id");
}

Tensor total_loss(const Tensor& ce, const Tensor& tri, Scalar lambda_t) {
  if (lambda_t == 0.0) return ce;
  return add(ce, scale(tri, lambda_t));
}

}  // namespace xspec
