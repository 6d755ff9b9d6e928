// Copyright 2026 The xspec Authors
// SPDX-License-Identifier: Apache-2.0

#include "xspec/tensor.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace xspec {

namespace {

thread_local Scalar gelu_grad_fault = 1.0;

Tape& same_tape(const Tensor& a, const Tensor& b) {
  if (&a.tape() != &b.tape()) {
    throw ContractError("tensors belong to different tapes");
  }
  return a.tape();
}

int normalize_axis(int axis) {
  if (axis == -1) axis = 1;
  if (axis != 0 && axis != 1) {
    throw ShapeError("axis must be 0, 1 or -1, got " + std::to_string(axis));
  }
  return axis;
}

}  // namespace

std::string shape_string(const Matrix& m) {
  std::ostringstream os;
  os << "[" << m.rows() << "x" << m.cols() << "]";
  return os.str();
}

// --- Tensor / Tape ---------------------------------------------------------

Tape& Tensor::tape() const {
  if (!tape_) throw ContractError("use of an unbound tensor");
  return *tape_;
}

const Matrix& Tensor::value() const { return tape().nodes_[id_].value; }

const Matrix& Tensor::grad() const { return tape().grad_buffer(id_); }

Scalar Tensor::item() const {
  const Matrix& v = value();
  if (v.size() != 1) throw ContractError("item() on non-scalar tensor " + shape_string(v));
  return v(0, 0);
}

const Matrix& BackwardContext::input(std::size_t k) const {
  return tape_.nodes_[tape_.nodes_[node_].inputs[k]].value;
}

bool BackwardContext::needs_grad(std::size_t k) const {
  return tape_.nodes_[tape_.nodes_[node_].inputs[k]].needs_grad;
}

Matrix& BackwardContext::input_grad(std::size_t k) {
  return tape_.grad_buffer(tape_.nodes_[node_].inputs[k]);
}

Matrix& Tape::grad_buffer(int id) {
  Node& n = nodes_[id];
  if (n.grad.size() != n.value.size() || n.grad.rows() != n.value.rows()) {
    n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  }
  return n.grad;
}

Tensor Tape::variable(Matrix value) {
  if (!value.allFinite()) throw NumericalError("non-finite leaf value");
  Node n;
  n.value = std::move(value);
  n.needs_grad = true;
  nodes_.push_back(std::move(n));
  return Tensor(this, static_cast<int>(nodes_.size() - 1));
}

Tensor Tape::constant(Matrix value) {
  if (!value.allFinite()) throw NumericalError("non-finite constant value");
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Tensor(this, static_cast<int>(nodes_.size() - 1));
}

Tensor Tape::record(Matrix value, std::span<const Tensor> inputs, BackwardFn backward,
                    const char* op_name) {
  if (!value.allFinite()) {
    throw NumericalError(std::string("non-finite output from ") + op_name);
  }
  Node n;
  n.value = std::move(value);
  n.inputs.reserve(inputs.size());
  for (const Tensor& in : inputs) {
    if (in.tape_ != this) throw ContractError(std::string(op_name) + ": input from another tape");
    n.inputs.push_back(in.id_);
    n.needs_grad = n.needs_grad || nodes_[in.id_].needs_grad;
  }
  if (n.needs_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Tensor(this, static_cast<int>(nodes_.size() - 1));
}

void Tape::backward(const Tensor& loss) {
  if (loss.tape_ != this) throw ContractError("backward: loss from another tape");
  const Matrix& lv = nodes_[loss.id_].value;
  if (lv.size() != 1) throw ContractError("backward needs a scalar loss, got " + shape_string(lv));

  for (Node& n : nodes_) {
    if (n.needs_grad) {
      n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
    } else {
      n.grad.resize(0, 0);
    }
  }
  nodes_[loss.id_].grad = Matrix::Ones(1, 1);

  // Recording order is a topological order, so one reverse pass suffices.
  for (int i = loss.id_; i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.needs_grad || !n.backward) continue;
    BackwardContext ctx(*this, i, n.grad, n.value);
    n.backward(ctx);
  }
}

// --- linear algebra --------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  Tape& t = same_tape(a, b);
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions differ " + shape_string(a.value()) + " x " +
                     shape_string(b.value()));
  }
  Matrix out = a.value() * b.value();
  return t.record(std::move(out), {a, b}, [](BackwardContext& c) {
    if (c.needs_grad(0)) c.input_grad(0).noalias() += c.grad_out() * c.input(1).transpose();
    if (c.needs_grad(1)) c.input_grad(1).noalias() += c.input(0).transpose() * c.grad_out();
  }, "matmul");
}

Tensor transpose(const Tensor& a) {
  Matrix out = a.value().transpose();
  return a.tape().record(std::move(out), {a}, [](BackwardContext& c) {
    c.input_grad(0) += c.grad_out().transpose();
  }, "transpose");
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  Tape& t = same_tape(x, weight);
  same_tape(x, bias);
  if (x.cols() != weight.cols()) {
    throw ShapeError("linear: input " + shape_string(x.value()) + " vs weight " +
                     shape_string(weight.value()));
  }
  if (bias.rows() != 1 || bias.cols() != weight.rows()) {
    throw ShapeError("linear: bias " + shape_string(bias.value()) + " vs weight " +
                     shape_string(weight.value()));
  }
  Matrix out = x.value() * weight.value().transpose();
  out.rowwise() += bias.value().row(0);
  return t.record(std::move(out), {x, weight, bias}, [](BackwardContext& c) {
    const Matrix& g = c.grad_out();
    if (c.needs_grad(0)) c.input_grad(0).noalias() += g * c.input(1);
    if (c.needs_grad(1)) c.input_grad(1).noalias() += g.transpose() * c.input(0);
    if (c.needs_grad(2)) c.input_grad(2) += g.colwise().sum();
  }, "linear");
}

// --- elementwise -----------------------------------------------------------

namespace {

enum class Broadcast { kNone, kRow, kScalar };

Broadcast broadcast_kind(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() == b.rows() && a.cols() == b.cols()) return Broadcast::kNone;
  if (b.rows() == 1 && b.cols() == a.cols()) return Broadcast::kRow;
  if (b.size() == 1) return Broadcast::kScalar;
  throw ShapeError(std::string(op) + ": cannot broadcast " + shape_string(b) + " onto " +
                   shape_string(a));
}

void reduce_into(Matrix& dst, const Matrix& g, Broadcast kind, Scalar sign) {
  switch (kind) {
    case Broadcast::kNone: dst += sign * g; break;
    case Broadcast::kRow: dst += sign * g.colwise().sum(); break;
    case Broadcast::kScalar: dst(0, 0) += sign * g.sum(); break;
  }
}

Tensor add_signed(const Tensor& a, const Tensor& b, Scalar sign, const char* name) {
  Tape& t = same_tape(a, b);
  const Broadcast kind = broadcast_kind(a.value(), b.value(), name);
  Matrix out = a.value();
  switch (kind) {
    case Broadcast::kNone: out += sign * b.value(); break;
    case Broadcast::kRow: out.rowwise() += sign * b.value().row(0); break;
    case Broadcast::kScalar: out.array() += sign * b.value()(0, 0); break;
  }
  return t.record(std::move(out), {a, b}, [kind, sign](BackwardContext& c) {
    if (c.needs_grad(0)) c.input_grad(0) += c.grad_out();
    if (c.needs_grad(1)) reduce_into(c.input_grad(1), c.grad_out(), kind, sign);
  }, name);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return add_signed(a, b, 1.0, "add"); }

Tensor sub(const Tensor& a, const Tensor& b) { return add_signed(a, b, -1.0, "sub"); }

Tensor mul(const Tensor& a, const Tensor& b) {
  Tape& t = same_tape(a, b);
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError("mul: " + shape_string(a.value()) + " vs " + shape_string(b.value()));
  }
  Matrix out = a.value().cwiseProduct(b.value());
  return t.record(std::move(out), {a, b}, [](BackwardContext& c) {
    if (c.needs_grad(0)) c.input_grad(0) += c.grad_out().cwiseProduct(c.input(1));
    if (c.needs_grad(1)) c.input_grad(1) += c.grad_out().cwiseProduct(c.input(0));
  }, "mul");
}

Tensor scale(const Tensor& a, Scalar factor) {
  Matrix out = factor * a.value();
  return a.tape().record(std::move(out), {a}, [factor](BackwardContext& c) {
    c.input_grad(0) += factor * c.grad_out();
  }, "scale");
}

Tensor gelu(const Tensor& x) {
  const Scalar inv_sqrt2 = 1.0 / std::numbers::sqrt2;
  Matrix out = x.value().unaryExpr(
      [&](Scalar v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); });
  const Scalar fault = gelu_grad_fault;
  return x.tape().record(std::move(out), {x}, [inv_sqrt2, fault](BackwardContext& c) {
    const Scalar inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    const Matrix d = c.input(0).unaryExpr([&](Scalar v) {
      return 0.5 * (1.0 + std::erf(v * inv_sqrt2)) + v * inv_sqrt_2pi * std::exp(-0.5 * v * v);
    });
    c.input_grad(0) += fault * c.grad_out().cwiseProduct(d);
  }, "gelu");
}

Tensor power(const Tensor& x, Scalar p) {
  const bool integral = std::floor(p) == p;
  if (!integral && (x.value().array() < 0.0).any()) {
    throw DomainError("power: negative base with non-integer exponent " + std::to_string(p));
  }
  Matrix out = x.value().unaryExpr([p](Scalar v) { return std::pow(v, p); });
  return x.tape().record(std::move(out), {x}, [p](BackwardContext& c) {
    const Matrix d = c.input(0).unaryExpr([p](Scalar v) { return p * std::pow(v, p - 1.0); });
    c.input_grad(0) += c.grad_out().cwiseProduct(d);
  }, "power");
}

// --- reductions and structure ----------------------------------------------

Tensor sum(const Tensor& x) {
  Matrix out(1, 1);
  out(0, 0) = x.value().sum();
  return x.tape().record(std::move(out), {x}, [](BackwardContext& c) {
    c.input_grad(0).array() += c.grad_out()(0, 0);
  }, "sum");
}

Tensor mean(const Tensor& x, int axis) {
  axis = normalize_axis(axis);
  const Matrix& v = x.value();
  Matrix out = axis == 0 ? Matrix(v.colwise().mean()) : Matrix(v.rowwise().mean());
  return x.tape().record(std::move(out), {x}, [axis](BackwardContext& c) {
    Matrix& g = c.input_grad(0);
    if (axis == 0) {
      g.rowwise() += c.grad_out().row(0) / static_cast<Scalar>(g.rows());
    } else {
      g.colwise() += c.grad_out().col(0) / static_cast<Scalar>(g.cols());
    }
  }, "mean");
}

Tensor concat(std::span<const Tensor> parts, int axis) {
  axis = normalize_axis(axis);
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Tape& t = parts.front().tape();
  Index rows = 0, cols = 0;
  for (const Tensor& p : parts) {
    same_tape(parts.front(), p);
    if (axis == 0) {
      if (p.cols() != parts.front().cols()) {
        throw ShapeError("concat axis 0: width mismatch " + shape_string(p.value()) + " vs " +
                         shape_string(parts.front().value()));
      }
      rows += p.rows();
      cols = p.cols();
    } else {
      if (p.rows() != parts.front().rows()) {
        throw ShapeError("concat axis 1: height mismatch " + shape_string(p.value()) + " vs " +
                         shape_string(parts.front().value()));
      }
      cols += p.cols();
      rows = p.rows();
    }
  }
  Matrix out(rows, cols);
  std::vector<Index> offsets;
  Index off = 0;
  for (const Tensor& p : parts) {
    offsets.push_back(off);
    if (axis == 0) {
      out.middleRows(off, p.rows()) = p.value();
      off += p.rows();
    } else {
      out.middleCols(off, p.cols()) = p.value();
      off += p.cols();
    }
  }
  return t.record(std::move(out), parts, [axis, offsets](BackwardContext& c) {
    for (std::size_t k = 0; k < offsets.size(); ++k) {
      if (!c.needs_grad(k)) continue;
      Matrix& g = c.input_grad(k);
      if (axis == 0) {
        g += c.grad_out().middleRows(offsets[k], g.rows());
      } else {
        g += c.grad_out().middleCols(offsets[k], g.cols());
      }
    }
  }, "concat");
}

Tensor slice_rows(const Tensor& x, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > x.rows()) {
    throw ShapeError("slice_rows: [" + std::to_string(start) + ", +" + std::to_string(count) +
                     ") outside " + shape_string(x.value()));
  }
  Matrix out = x.value().middleRows(start, count);
  return x.tape().record(std::move(out), {x}, [start, count](BackwardContext& c) {
    c.input_grad(0).middleRows(start, count) += c.grad_out();
  }, "slice_rows");
}

Tensor slice_cols(const Tensor& x, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > x.cols()) {
    throw ShapeError("slice_cols: [" + std::to_string(start) + ", +" + std::to_string(count) +
                     ") outside " + shape_string(x.value()));
  }
  Matrix out = x.value().middleCols(start, count);
  return x.tape().record(std::move(out), {x}, [start, count](BackwardContext& c) {
    c.input_grad(0).middleCols(start, count) += c.grad_out();
  }, "slice_cols");
}

// --- normalization ---------------------------------------------------------

Tensor softmax(const Tensor& x, int axis) {
  axis = normalize_axis(axis);
  Matrix out = axis == 1 ? Matrix(x.value()) : Matrix(x.value().transpose());
  for (Index r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    row.array() -= row.maxCoeff();
    row = row.array().exp().matrix();
    row /= row.sum();
  }
  if (axis == 0) out.transposeInPlace();
  return x.tape().record(std::move(out), {x}, [axis](BackwardContext& c) {
    const Matrix& y = c.out();
    const Matrix gy = c.grad_out().cwiseProduct(y);
    if (axis == 1) {
      c.input_grad(0) += gy - Matrix(y.array().colwise() * gy.rowwise().sum().array());
    } else {
      c.input_grad(0) += gy - Matrix(y.array().rowwise() * gy.colwise().sum().array());
    }
  }, "softmax");
}

Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias, Scalar eps) {
  Tape& t = same_tape(x, gain);
  same_tape(x, bias);
  if (!(eps > 0.0)) throw ContractError("layernorm: eps must be positive");
  const Index d = x.cols();
  if (gain.rows() != 1 || gain.cols() != d || bias.rows() != 1 || bias.cols() != d) {
    throw ShapeError("layernorm: gain " + shape_string(gain.value()) + " / bias " +
                     shape_string(bias.value()) + " vs input " + shape_string(x.value()));
  }
  Matrix xhat = x.value();
  Eigen::VectorXd rstd(xhat.rows());
  for (Index r = 0; r < xhat.rows(); ++r) {
    auto row = xhat.row(r);
    row.array() -= row.mean();
    const Scalar var = row.squaredNorm() / static_cast<Scalar>(d);
    rstd(r) = 1.0 / std::sqrt(var + eps);
    row *= rstd(r);
  }
  Matrix out = xhat.array().rowwise() * gain.value().row(0).array();
  out.rowwise() += bias.value().row(0);
  return t.record(std::move(out), {x, gain, bias},
                  [xhat = std::move(xhat), rstd = std::move(rstd), d](BackwardContext& c) {
    const Matrix& g = c.grad_out();
    if (c.needs_grad(1)) c.input_grad(1) += g.cwiseProduct(xhat).colwise().sum();
    if (c.needs_grad(2)) c.input_grad(2) += g.colwise().sum();
    if (c.needs_grad(0)) {
      const Matrix dxhat = g.array().rowwise() * c.input(1).row(0).array();
      Matrix& gx = c.input_grad(0);
      const Scalar inv_d = 1.0 / static_cast<Scalar>(d);
      for (Index r = 0; r < dxhat.rows(); ++r) {
        const Scalar m1 = dxhat.row(r).sum() * inv_d;
        const Scalar m2 = dxhat.row(r).dot(xhat.row(r)) * inv_d;
        gx.row(r).array() +=
            rstd(r) * (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2);
      }
    }
  }, "layernorm");
}

namespace testing {

ScopedGeluGradFault::ScopedGeluGradFault(Scalar factor) : previous_(gelu_grad_fault) {
  gelu_grad_fault = factor;
}

ScopedGeluGradFault::~ScopedGeluGradFault() { gelu_grad_fault = previous_; }

}  // namespace testing

}  // namespace xspec
