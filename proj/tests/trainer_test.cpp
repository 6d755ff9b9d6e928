// Copyright 2026 The xspec Authors
// SPDX-License-Identifier: Apache-2.0

#include "xspec/trainer.hpp"

#include "xspec/checkpoint.hpp"
#include "xspec/run_config.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

namespace xspec {
namespace {

using test::read_file;
using test::temp_dir;

TEST(LrSchedule, DefaultExamples) {
  const TrainConfig cfg;
  EXPECT_EQ(lr_at(19, cfg), 0.0004);
  EXPECT_NEAR(lr_at(70, cfg), 0.0002, 1e-18);
  EXPECT_NEAR(lr_at(119, cfg), 0.0002 * (1.0 + std::cos(std::numbers::pi * 0.99)), 1e-20);
  EXPECT_NEAR(lr_at(119, cfg), 9.8689e-8, 1e-11);
  EXPECT_DOUBLE_EQ(lr_at(0, cfg), 0.0004 / 20.0);
  EXPECT_NEAR(lr_at(20, cfg), lr_at(19, cfg), 1e-12);
}

TEST(LrSchedule, ShapeAndRange) {
  const TrainConfig cfg;
  for (int e = 1; e < cfg.warmup_epochs; ++e) EXPECT_GT(lr_at(e, cfg), lr_at(e - 1, cfg));
  for (int e = cfg.warmup_epochs + 1; e < cfg.total_epochs; ++e) {
    EXPECT_LT(lr_at(e, cfg), lr_at(e - 1, cfg));
    EXPECT_GT(lr_at(e, cfg), 0.0);
  }
  EXPECT_THROW(lr_at(-1, cfg), ContractError);
  EXPECT_THROW(lr_at(120, cfg), ContractError);
  TrainConfig no_warmup = cfg;
  no_warmup.warmup_epochs = 0;
  EXPECT_EQ(lr_at(0, no_warmup), 0.0004);
}

TEST(LrSchedule, Validation) {
  TrainConfig cfg;
  cfg.warmup_epochs = 121;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.lr_init = -1.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.augment.flip_prob = 1.5;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Sgd, TwoStepMomentumRecurrence) {
  const ModelConfig mc = test::tiny_config();
  ModelParams p = init_params(mc, 1);
  const ModelParams p0 = p;
  ModelParams g = zeros_like(p);
  std::mt19937_64 rng(2);
  for_each_param(g, [&](const std::string&, Matrix& m) {
    m = test::random_matrix(m.rows(), m.cols(), rng);
  });
  ModelParams v = zeros_like(p);
  const double lr = 0.1, mu = 0.9, wd = 0.01;
  sgd_step(p, g, v, lr, mu, wd);
  sgd_step(p, g, v, lr, mu, wd);

  const Matrix& w0 = p0.patch_weight;
  const Matrix& gw = g.patch_weight;
  const Matrix v1 = gw + wd * w0;
  const Matrix w1 = w0 - lr * v1;
  const Matrix v2 = mu * v1 + gw + wd * w1;
  const Matrix w2 = w1 - lr * v2;
  EXPECT_LT((p.patch_weight - w2).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LT((v.patch_weight - v2).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Sgd, NonFiniteGradientLeavesStateUntouched) {
  const ModelConfig mc = test::tiny_config();
  ModelParams p = init_params(mc, 3);
  ModelParams g = zeros_like(p);
  ModelParams v = zeros_like(p);
  g.layers[0].fc2_bias(0, 0) = std::numeric_limits<double>::quiet_NaN();
  g.patch_weight.setConstant(1.0);  // a finite array processed before the bad one
  const ModelParams before = p;
  EXPECT_THROW(sgd_step(p, g, v, 0.1, 0.9, 0.0), NumericalError);
  EXPECT_TRUE((p.patch_weight.array() == before.patch_weight.array()).all());
  EXPECT_EQ(v.patch_weight.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Augment, DisabledIsIdentity) {
  std::mt19937_64 rng(4);
  const Image img = test::random_image(16, 8, 3, rng);
  EXPECT_EQ(augment(img, AugmentConfig::none(), rng), img);
}

TEST(Augment, FlipAlone) {
  std::mt19937_64 rng(5);
  const Image img = test::random_image(16, 8, 3, rng);
  AugmentConfig cfg = AugmentConfig::none();
  cfg.flip = true;
  cfg.flip_prob = 1.0;
  const Image f = augment(img, cfg, rng);
  EXPECT_EQ(f, flip_horizontal(img));
  EXPECT_EQ(augment(f, cfg, rng), img);
}

TEST(Augment, PadCropShiftsContent) {
  Image img(6, 6, 1);
  img.at(2, 3, 0) = 1.0;
  AugmentConfig cfg = AugmentConfig::none();
  cfg.pad_crop = true;
  cfg.pad = 2;
  std::mt19937_64 rng(6);
  for (int i = 0; i < 20; ++i) {
    const Image out = augment(img, cfg, rng);
    ASSERT_EQ(out.height, 6);
    ASSERT_EQ(out.width, 6);
    double total = 0.0;
    for (double v : out.pixels) total += v;
    EXPECT_LE(total, 1.0);  // the bright pixel moves by at most `pad`, or leaves
  }
}

TEST(Augment, FullPipelineIsSeededAndBounded) {
  std::mt19937_64 src(7);
  const Image img = test::random_image(16, 8, 3, src);
  const AugmentConfig cfg;
  std::mt19937_64 a(8), b(8);
  for (int i = 0; i < 10; ++i) {
    const Image x = augment(img, cfg, a);
    EXPECT_EQ(x, augment(img, cfg, b));
    for (double v : x.pixels) {
      ASSERT_GE(v, 0.0);
      ASSERT_LE(v, 1.0);
    }
  }
}

// Small synthetic setup shared by the training tests.
struct Small {
  Dataset data;
  ModelConfig model;
  LossConfig loss = RunConfig::desk_loss_config();
  TrainConfig train = RunConfig::desk_train_config();
  SieScheme scheme;

  // `full` keeps the default desk geometry; otherwise a shrunken model.
  Small(int ids, int per_domain, bool full = false) {
    SynthConfig sc;
    if (!full) {
      sc.height = 16;
      sc.width = 8;
      sc.block = 4;
      model.image_height = 16;
      model.image_width = 8;
      model.patch = 4;
      model.dim = 32;
      model.layers = 1;
      model.heads = 2;
      model.mlp_ratio = 2;
    }
    data = synth_generate(ids, 2, per_domain, 21, sc);
    model.n_sie = 2;
    model.n_classes = ids;
    scheme = SieScheme::for_dataset(SieMode::kDomain, data);
    train.sampler.identities = ids;
    train.augment = AugmentConfig::none();
    train.seed = 5;
  }
};

TEST(Train, ZeroEpochsReturnsInitialParameters) {
  Small s(4, 4);
  s.train.total_epochs = 0;
  s.train.warmup_epochs = 0;
  const TrainResult r = train(s.data, s.model, s.loss, s.train, s.scheme);
  EXPECT_TRUE(r.log.empty());
  std::mt19937_64 seeder(s.train.seed);
  const ModelParams init = init_params(s.model, seeder());
  EXPECT_TRUE((r.params.classifier.array() == init.classifier.array()).all());
  EXPECT_TRUE((r.params.pos_table.array() == init.pos_table.array()).all());
}

TEST(Train, OverfitsATinyDataset) {
  Small s(4, 8, true);
  s.train.total_epochs = 30;
  const TrainResult r = train(s.data, s.model, s.loss, s.train, s.scheme);
  ASSERT_FALSE(r.log.empty());
  EXPECT_LT(r.log.back().loss_ce, 0.1);
  EXPECT_LT(r.log.back().loss_ce, r.log.front().loss_ce);
}

TEST(Train, SameSeedSameRun) {
  const auto dir = temp_dir("train_det");
  Small s(4, 4);
  s.train.total_epochs = 2;
  s.train.warmup_epochs = 1;
  s.train.augment = AugmentConfig{};
  s.train.checkpoint_path = dir / "a.ckpt";
  const TrainResult a = train(s.data, s.model, s.loss, s.train, s.scheme);
  s.train.checkpoint_path = dir / "b.ckpt";
  const TrainResult b = train(s.data, s.model, s.loss, s.train, s.scheme);
  ASSERT_EQ(a.log.size(), b.log.size());
  ASSERT_GE(a.log.size(), 3u);
  for (std::size_t i = 0; i < a.log.size(); ++i) EXPECT_EQ(a.log[i].loss_total, b.log[i].loss_total);
  EXPECT_EQ(read_file(dir / "a.ckpt"), read_file(dir / "b.ckpt"));
}

TEST(Train, DisabledSideEmbeddingIsNeverRead) {
  const auto dir = temp_dir("train_nosie");
  Small s(4, 4);
  s.model.lambda_sie = 0.0;
  s.model.n_sie = 1;  // any size is accepted when unused
  s.train.total_epochs = 1;
  s.train.warmup_epochs = 0;
  s.train.log_path = dir / "log.csv";
  reset_sie_lookup_count();
  const TrainResult r = train(s.data, s.model, s.loss, s.train, s.scheme);
  EXPECT_EQ(sie_lookup_count(), 0u);
  EXPECT_FALSE(r.sie_enabled);
  const std::string log = read_file(dir / "log.csv");
  EXPECT_EQ(log.rfind("# sie=disabled\nepoch,step,lr,loss_ce,loss_tri,loss_total\n", 0), 0u);
}

TEST(Train, SchemeAndTableMustAgree) {
  Small s(4, 4);
  s.model.n_sie = 3;
  EXPECT_THROW(train(s.data, s.model, s.loss, s.train, s.scheme), ConfigError);
  s.model.n_sie = 2;
  s.model.n_classes = 3;
  EXPECT_THROW(train(s.data, s.model, s.loss, s.train, s.scheme), ConfigError);
}

TEST(Train, LogHasOneRowPerStep) {
  const auto dir = temp_dir("train_log");
  Small s(4, 4);
  s.train.total_epochs = 2;
  s.train.warmup_epochs = 1;
  s.train.log_path = dir / "log.csv";
  const TrainResult r = train(s.data, s.model, s.loss, s.train, s.scheme);
  EXPECT_EQ(static_cast<int>(r.log.size()), 2 * batches_per_epoch(s.data, s.train.sampler));
  const std::string log = read_file(dir / "log.csv");
  EXPECT_EQ(static_cast<std::size_t>(std::count(log.begin(), log.end(), '\n')), r.log.size() + 1);
}

TEST(BatchLoss, SmallStepDecreasesLoss) {
  Small s(4, 4);
  const ModelParams p0 = init_params(s.model, 9);
  std::mt19937_64 rng(10);
  const BatchPlan plan = sample_batch(s.data, s.train.sampler, rng);
  BatchInput batch;
  for (const BatchEntry& e : plan.entries) {
    batch.images.push_back(&s.data.image(e.record));
    batch.labels.push_back(e.identity);
    batch.sie_indices.push_back(assign_sie_index(s.data.records[e.record], s.scheme));
  }
  const BatchResult before = batch_loss(p0, batch, s.model, s.loss, true);
  ModelParams p = p0;
  ModelParams v = zeros_like(p);
  sgd_step(p, before.grads, v, 1e-5, 0.0, 0.0);
  const BatchResult after = batch_loss(p, batch, s.model, s.loss, false);
  EXPECT_LT(after.loss_total, before.loss_total);
  EXPECT_NEAR(before.loss_total, before.loss_ce + s.loss.lambda_t * before.loss_tri, 1e-12);
}

TEST(BatchLoss, LengthMismatch) {
  Small s(4, 4);
  BatchInput batch;
  batch.images.push_back(&s.data.image(0));
  EXPECT_THROW(batch_loss(init_params(s.model, 1), batch, s.model, s.loss, false), ContractError);
}

}  // namespace
}  // namespace xspec
