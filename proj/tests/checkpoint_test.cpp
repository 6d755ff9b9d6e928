// Copyright 2026 The xspec Authors
// SPDX-License-Identifier: Apache-2.0

#include "xspec/checkpoint.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

namespace xspec {
namespace {

using test::read_file;
using test::temp_dir;
using test::write_file;

void expect_params_equal(const ModelParams& a, const ModelParams& b) {
  ModelParams a2 = a;
  ModelParams b2 = b;
  zip_params(a2, b2, [](const std::string& name, const Matrix& x, const Matrix& y) {
    ASSERT_EQ(x.rows(), y.rows()) << name;
    ASSERT_EQ(x.cols(), y.cols()) << name;
    EXPECT_TRUE((x.array() == y.array()).all()) << name;
  });
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const auto dir = temp_dir("ckpt_rt");
  ModelConfig cfg = test::tiny_config();
  cfg.gem_enabled = true;
  cfg.lambda_sie = 0.125;
  const ModelParams p = init_params(cfg, 42);
  save_checkpoint(p, cfg, dir / "m.ckpt");
  const Checkpoint ck = load_checkpoint(dir / "m.ckpt");
  EXPECT_EQ(ck.config, cfg);
  expect_params_equal(ck.params, p);
  EXPECT_FALSE(std::filesystem::exists(dir / "m.ckpt.tmp"));
}

TEST(Checkpoint, SaveIsDeterministic) {
  const auto dir = temp_dir("ckpt_det");
  const ModelConfig cfg = test::tiny_config();
  save_checkpoint(init_params(cfg, 1), cfg, dir / "a.ckpt");
  save_checkpoint(init_params(cfg, 1), cfg, dir / "b.ckpt");
  EXPECT_EQ(read_file(dir / "a.ckpt"), read_file(dir / "b.ckpt"));
}

TEST(Checkpoint, OverwriteReplacesWholeFile) {
  const auto dir = temp_dir("ckpt_over");
  ModelConfig big = test::tiny_config();
  big.layers = 2;
  save_checkpoint(init_params(big, 1), big, dir / "m.ckpt");
  const ModelConfig small = test::tiny_config();
  save_checkpoint(init_params(small, 2), small, dir / "m.ckpt");
  EXPECT_EQ(load_checkpoint(dir / "m.ckpt").config.layers, 1);
}

TEST(Checkpoint, RejectsForeignFiles) {
  const auto dir = temp_dir("ckpt_bad");
  write_file(dir / "a", "xspec-ckpt-v0\ndata\n");
  EXPECT_THROW(load_checkpoint(dir / "a"), ParseError);
  write_file(dir / "b", "xspec-ckpt-v1\nmeta dim 8\n");
  EXPECT_THROW(load_checkpoint(dir / "b"), ParseError);
  write_file(dir / "c", "xspec-ckpt-v1\nmeta colour blue\ndata\n");
  EXPECT_THROW(load_checkpoint(dir / "c"), ParseError);
  EXPECT_THROW(load_checkpoint(dir / "missing"), IoError);
}

TEST(Checkpoint, TruncatedPayload) {
  const auto dir = temp_dir("ckpt_trunc");
  const ModelConfig cfg = test::tiny_config();
  save_checkpoint(init_params(cfg, 3), cfg, dir / "m.ckpt");
  std::string bytes = read_file(dir / "m.ckpt");
  bytes.resize(bytes.size() - 8);
  write_file(dir / "m.ckpt", bytes);
  EXPECT_THROW(load_checkpoint(dir / "m.ckpt"), ParseError);
}

TEST(Checkpoint, ShapeMismatchIsAShapeError) {
  const auto dir = temp_dir("ckpt_shape");
  const ModelConfig cfg = test::tiny_config();
  save_checkpoint(init_params(cfg, 4), cfg, dir / "m.ckpt");
  std::string text = read_file(dir / "m.ckpt");
  // Claim a wider classifier than the stored one.
  const auto pos = text.find("meta n_classes 4");
  ASSERT_NE(pos, std::string::npos);
  text.replace(pos, 16, "meta n_classes 5");
  write_file(dir / "m.ckpt", text);
  EXPECT_THROW(load_checkpoint(dir / "m.ckpt"), ShapeError);
}

TEST(Checkpoint, SaveChecksShapes) {
  const auto dir = temp_dir("ckpt_save");
  const ModelConfig cfg = test::tiny_config();
  ModelParams p = init_params(cfg, 5);
  p.classifier = Matrix::Zero(3, 3);
  EXPECT_THROW(save_checkpoint(p, cfg, dir / "m.ckpt"), ShapeError);
  EXPECT_FALSE(std::filesystem::exists(dir / "m.ckpt"));
}

}  // namespace
}  // namespace xspec
