// Copyright 2026 The xspec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "xspec/tensor.hpp"

#include <functional>
#include <span>
#include <string>

namespace xspec {

// Magnitudes below this are treated as this when forming relative errors, so
// gradients that are zero up to round-off do not produce spurious failures.
inline constexpr Scalar kGradcheckFloor = 1e-6;

// |analytic - numeric| / max(|analytic|, |numeric|, kGradcheckFloor)
Scalar relative_error(Scalar analytic, Scalar numeric);

struct GradcheckReport {
  bool passed = true;
  Scalar max_rel_error = 0.0;
  Index worst_index = -1;
  Scalar worst_analytic = 0.0;
  Scalar worst_numeric = 0.0;
  Index checked = 0;
  std::string failure;  // set when an evaluation was non-finite
};

// Scalar-valued function of one tensor, rebuilt on a fresh tape per call.
using TensorFunction = std::function<Tensor(Tape&, const Tensor&)>;

// Compares tape gradients of f at x against central differences
// (f(x + h e_i) - f(x - h e_i)) / 2h. Checks every coordinate unless
// `coords` lists a subset (flat row-major indices).
GradcheckReport gradcheck(const TensorFunction& f, const Matrix& x, Scalar h, Scalar tol,
                          std::span<const Index> coords = {});

}  // namespace xspec
