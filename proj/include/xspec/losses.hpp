// Copyright 2026 The xspec Authors
// SPDX-License-Identifier: Apache-2.0
//
// Identity cross-entropy, batch-hard triplet, and their weighted sum.

#pragma once

#include "xspec/tensor.hpp"

#include <span>
#include <vector>

namespace xspec {

struct LossConfig {
  Scalar margin = 0.3;
  Scalar lambda_t = 1.0;

  void validate() const;
};

// P identities x K samples each. Checked on construction.
struct LabeledBatch {
  Tensor features;  // PK x feature_dim
  std::vector<int> labels;
};

struct BatchShape {
  int identities = 0;        // P
  int per_identity = 0;      // K
};

// Throws ContractError unless `labels` holds exactly P distinct values each
// repeated K >= 2 times with P >= 2.
BatchShape check_batch_labels(std::span<const int> labels);

// Euclidean distances between rows, PK x PK. Exactly symmetric with a zero
// diagonal; the square root's gradient is taken as zero for coincident rows.
Tensor pairwise_dist(const Tensor& features);

// Sum over anchors of [m + max_pos D - min_neg D]_+ (no averaging).
Tensor batch_hard_triplet(const LabeledBatch& batch, Scalar margin);
// Same hinge sum on a precomputed distance matrix.
Tensor batch_hard_triplet_from_dist(const Tensor& dist, std::span<const int> labels, Scalar margin);

// Mean over rows of -log softmax(logits)[label] via log-sum-exp.
Tensor cross_entropy_id(const Tensor& logits, std::span<const int> labels);

// ce + lambda_t * tri
Tensor total_loss(const Tensor& ce, const Tensor& tri, Scalar lambda_t);

}  // namespace xspec
