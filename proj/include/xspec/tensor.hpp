// Copyright 2026 The xspec Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense rank-2 tensors on a define-by-run reverse-mode tape.

#pragma once

#include "xspec/errors.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace xspec {

using Scalar = double;
using Index = Eigen::Index;
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

std::string shape_string(const Matrix& m);

class Tape;

// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Tensor {
 public:
  Tensor() = default;

  bool valid() const { return tape_ != nullptr; }
  Tape& tape() const;
  int id() const { return id_; }

  const Matrix& value() const;
  // Zero-filled until backward() has reached this node.
  const Matrix& grad() const;

  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  Index size() const { return value().size(); }
  Scalar item() const;

 private:
  friend class Tape;
  Tensor(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

// View handed to a backward rule: the upstream gradient plus read access to
// the recorded inputs and write access to their gradient accumulators.
class BackwardContext {
 public:
  const Matrix& grad_out() const { return *grad_out_; }
  const Matrix& out() const { return *out_; }
  const Matrix& input(std::size_t k) const;
  bool needs_grad(std::size_t k) const;
  // Gradient accumulator for input k; rules must add, never assign.
  Matrix& input_grad(std::size_t k);

 private:
  friend class Tape;
  BackwardContext(Tape& tape, int node, const Matrix& grad_out, const Matrix& out)
      : tape_(tape), node_(node), grad_out_(&grad_out), out_(&out) {}

  Tape& tape_;
  int node_;
  const Matrix* grad_out_;
  const Matrix* out_;
};

using BackwardFn = std::function<void(BackwardContext&)>;

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaf whose gradient is tracked.
  Tensor variable(Matrix value);
  // Leaf excluded from differentiation.
  Tensor constant(Matrix value);

  // Appends an op node. Every input must belong to this tape; the output must
  // be finite.
  Tensor record(Matrix value, std::span<const Tensor> inputs, BackwardFn backward,
                const char* op_name);
  Tensor record(Matrix value, std::initializer_list<Tensor> inputs, BackwardFn backward,
                const char* op_name) {
    return record(std::move(value), std::span<const Tensor>(inputs.begin(), inputs.size()),
                  std::move(backward), op_name);
  }

  // Reverse sweep from a 1x1 loss. Clears previously accumulated gradients.
  void backward(const Tensor& loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  friend class Tensor;
  friend class BackwardContext;

  struct Node {
    Matrix value;
    Matrix grad;
    std::vector<int> inputs;
    BackwardFn backward;
    bool needs_grad = false;
  };

  Matrix& grad_buffer(int id);

  std::deque<Node> nodes_;  // deque: value() references survive later pushes
};

// --- ops -------------------------------------------------------------------
// Axis 0 runs down the rows, axis 1 (or -1) across the columns.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
// x * weight^T + bias, weight stored as out x in, bias 1 x out.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

// b may match a exactly, be a 1 x cols row (broadcast over rows), or be 1 x 1.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, Scalar factor);

Tensor gelu(const Tensor& x);
// Elementwise x^p. Negative bases are rejected unless p is an integer.
Tensor power(const Tensor& x, Scalar p);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x, int axis);
Tensor concat(std::span<const Tensor> parts, int axis);
inline Tensor concat(std::initializer_list<Tensor> parts, int axis) {
  return concat(std::span<const Tensor>(parts.begin(), parts.size()), axis);
}
Tensor slice_rows(const Tensor& x, Index start, Index count);
Tensor slice_cols(const Tensor& x, Index start, Index count);

Tensor softmax(const Tensor& x, int axis);
// Row-wise normalization followed by gain/bias (both 1 x d).
Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias, Scalar eps);

namespace testing {

// Multiplies the GELU derivative by `factor` on this thread while alive.
// Negative control for gradient checks.
class ScopedGeluGradFault {
 public:
  explicit ScopedGeluGradFault(Scalar factor);
  ~ScopedGeluGradFault();
  ScopedGeluGradFault(const ScopedGeluGradFault&) = delete;
  ScopedGeluGradFault& operator=(const ScopedGeluGradFault&) = delete;

 private:
  Scalar previous_;
};

}  // namespace testing

}  // namespace xspec
