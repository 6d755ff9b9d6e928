// Copyright 2026 The xspec Authors
// SPDX-License-Identifier: Apache-2.0

#include "xspec/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

namespace xspec {

Scalar relative_error(Scalar analytic, Scalar numeric) {
  const Scalar denom = std::max({std::abs(analytic), std::abs(numeric), kGradcheckFloor});
  return std::abs(analytic - numeric) / denom;
}

GradcheckReport gradcheck(const TensorFunction& f, const Matrix& x, Scalar h, Scalar tol,
                          std::span<const Index> coords) {
  if (!(h > 0.0)) throw ContractError("gradcheck: step h must be positive");

  Matrix analytic;
  {
    Tape tape;
    Tensor xv = tape.variable(x);
    Tensor y = f(tape, xv);
    if (y.size() != 1) throw ContractError("gradcheck: function is not scalar-valued");
    tape.backward(y);
    analytic = xv.grad();
  }

  auto eval = [&](const Matrix& point) {
    Tape tape;
    return f(tape, tape.constant(point)).item();
  };

  std::vector<Index> all;
  if (coords.empty()) {
    all.resize(static_cast<std::size_t>(x.size()));
    std::iota(all.begin(), all.end(), Index{0});
    coords = all;
  }

  GradcheckReport report;
  Matrix probe = x;
  for (Index i : coords) {
    Scalar* slot = probe.data() + i;
    const Scalar saved = *slot;
    Scalar plus = 0.0, minus = 0.0;
    try {
      *slot = saved + h;
      plus = eval(probe);
      *slot = saved - h;
      minus = eval(probe);
    } catch (const NumericalError& e) {
      plus = minus = std::numeric_limits<Scalar>::quiet_NaN();
    }
    *slot = saved;
    if (!std::isfinite(plus) || !std::isfinite(minus)) {
      report.passed = false;
      report.worst_index = i;
      report.failure = "non-finite evaluation at coordinate " + std::to_string(i);
      return report;
    }
    const Scalar numeric = (plus - minus) / (2.0 * h);
    const Scalar a = analytic.data()[i];
    const Scalar err = relative_error(a, numeric);
    ++report.checked;
    if (err > report.max_rel_error || report.worst_index < 0) {
      report.max_rel_error = err;
      report.worst_index = i;
      report.worst_analytic = a;
      report.worst_numeric = numeric;
    }
  }
  report.passed = report.max_rel_error < tol;
  return report;
}

}  // namespace xspec
