// Copyright 2026 The xspec Authors
// SPDX-License-Identifier: Apache-2.0

#include "xspec/gradcheck.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <vector>

namespace xspec {
namespace {

TEST(RelativeError, FloorAndSymmetry) {
  EXPECT_EQ(relative_error(1.0, 1.0), 0.0);
  EXPECT_EQ(relative_error(0.0, 0.0), 0.0);
  EXPECT_DOUBLE_EQ(relative_error(2.0, 1.0), 0.5);
  EXPECT_DOUBLE_EQ(relative_error(1.0, 2.0), 0.5);
  EXPECT_DOUBLE_EQ(relative_error(1e-9, 0.0), 1e-9 / kGradcheckFloor);
}

TEST(Gradcheck, QuadraticPasses) {
  std::mt19937_64 rng(1);
  const Matrix x = test::random_matrix(3, 3, rng);
  const auto r = gradcheck([](Tape&, const Tensor& v) { return sum(mul(v, v)); }, x, 1e-5, 1e-8);
  EXPECT_TRUE(r.passed);
  EXPECT_EQ(r.checked, 9);
  EXPECT_LT(r.max_rel_error, 1e-8);
}

TEST(Gradcheck, CoordinateSubset) {
  std::mt19937_64 rng(2);
  const Matrix x = test::random_matrix(4, 4, rng);
  const std::vector<Index> coords = {0, 5, 15};
  const auto r = gradcheck([](Tape&, const Tensor& v) { return sum(gelu(v)); }, x, 1e-5, 1e-6,
                           coords);
  EXPECT_TRUE(r.passed);
  EXPECT_EQ(r.checked, 3);
}

TEST(Gradcheck, CorruptedGeluRuleIsCaught) {
  std::mt19937_64 rng(3);
  const Matrix x = test::random_matrix(2, 3, rng);
  auto f = [](Tape&, const Tensor& v) { return sum(gelu(v)); };
  ASSERT_TRUE(gradcheck(f, x, 1e-5, 1e-6).passed);
  testing::ScopedGeluGradFault fault(1.5);
  const auto r = gradcheck(f, x, 1e-5, 1e-6);
  EXPECT_FALSE(r.passed);
  EXPECT_GT(r.max_rel_error, 0.1);
  EXPECT_GE(r.worst_index, 0);
}

TEST(Gradcheck, NonFiniteEvaluationIsReported) {
  Matrix x(1, 2);
  x << 1e-3, 1.0;
  // The perturbed point x - h lands exactly on zero, where 1/x blows up.
  const auto r =
      gradcheck([](Tape&, const Tensor& v) { return sum(power(v, -1.0)); }, x, 1e-3, 1e-6);
  EXPECT_FALSE(r.passed);
  EXPECT_NE(r.failure.find("coordinate 0"), std::string::npos) << r.failure;
}

}  // namespace
}  // namespace xspec
