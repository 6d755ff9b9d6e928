// Copyright 2026 The xspec Authors
// SPDX-License-Identifier: Apache-2.0

#include "xspec/cli.hpp"

#include "xspec/checkpoint.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <sstream>

namespace xspec {
namespace {

using test::read_file;
using test::temp_dir;
using test::write_file;

struct CliRun {
  int code = -1;
  std::string out;
  std::string err;
};

CliRun cli(std::vector<std::string> args) {
  args.insert(args.begin(), "xspec");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  CliRun r;
  r.code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

// Shrunken geometry so every command finishes in well under a second.
constexpr const char* kSmallConfig =
    "model.image_height=16\nmodel.image_width=8\nmodel.patch=4\nmodel.dim=16\n"
    "model.layers=1\nmodel.heads=2\nmodel.mlp_ratio=2\n"
    "synth.height=16\nsynth.width=8\nsynth.block=4\nsynth.ids=3\nsynth.per_domain=4\n"
    "train.epochs=2\ntrain.warmup_epochs=1\ntrain.identities_per_batch=3\n"
    "gradcheck.max_coords=20\n";

struct Workspace {
  std::filesystem::path dir;
  std::string conf;

  explicit Workspace(const std::string& name) : dir(temp_dir(name)) {
    conf = (dir / "small.conf").string();
    std::string text = kSmallConfig;
    text += "paths.data=" + (dir / "data").string() + "\n";
    text += "paths.checkpoint=" + (dir / "m.ckpt").string() + "\n";
    text += "paths.log=" + (dir / "log.csv").string() + "\n";
    text += "paths.report=" + (dir / "report.csv").string() + "\n";
    write_file(conf, text);
  }
  std::string path(const std::string& leaf) const { return (dir / leaf).string(); }
};

TEST(Cli, SynthDefaultsTo160Records) {
  const auto dir = temp_dir("cli_synth160");
  const CliRun r = cli({"synth", "--out", (dir / "d").string()});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const std::string manifest = read_file(dir / "d" / "manifest.csv");
  // bounds line + header + records
  EXPECT_EQ(std::count(manifest.begin(), manifest.end(), '\n'), 162);
  EXPECT_NE(r.out.find("160 records"), std::string::npos);
}

TEST(Cli, SynthIsDeterministic) {
  const Workspace w("cli_synthdet");
  ASSERT_EQ(cli({"-c", w.conf, "synth", "--seed", "7", "--out", w.path("a")}).code, kExitOk);
  ASSERT_EQ(cli({"-c", w.conf, "synth", "--seed", "7", "--out", w.path("b")}).code, kExitOk);
  EXPECT_EQ(read_file(w.dir / "a" / "manifest.csv"), read_file(w.dir / "b" / "manifest.csv"));
  for (const auto& entry : std::filesystem::directory_iterator(w.dir / "a" / "images")) {
    EXPECT_EQ(read_file(entry.path()),
              read_file(w.dir / "b" / "images" / entry.path().filename()));
  }
}

TEST(Cli, ConfigErrorsExitTwoAndNameTheKey) {
  const auto dir = temp_dir("cli_cfgerr");
  CliRun r = cli({"synth", "--ids", "0", "--out", (dir / "d").string()});
  EXPECT_EQ(r.code, kExitConfig);
  EXPECT_NE(r.err.find("synth.ids"), std::string::npos) << r.err;
  r = cli({"synth", "--set", "model.nope=1"});
  EXPECT_EQ(r.code, kExitConfig);
  EXPECT_NE(r.err.find("model.nope"), std::string::npos) << r.err;
  r = cli({"train", "--sie-scheme", "sideways"});
  EXPECT_EQ(r.code, kExitConfig);
  EXPECT_NE(r.err.find("sie.scheme"), std::string::npos) << r.err;
  EXPECT_EQ(cli({"frobnicate"}).code, kExitConfig);
  EXPECT_EQ(cli({}).code, kExitConfig);
}

TEST(Cli, MissingInputsExitFour) {
  const auto dir = temp_dir("cli_io");
  EXPECT_EQ(cli({"train", "--data", (dir / "nothing").string()}).code, kExitIo);
  EXPECT_EQ(cli({"-c", (dir / "missing.conf").string(), "synth"}).code, kExitIo);
}

TEST(Cli, TrainEvalExportPipeline) {
  const Workspace w("cli_pipe");
  ASSERT_EQ(cli({"-c", w.conf, "synth"}).code, kExitOk);
  CliRun r = cli({"-c", w.conf, "train"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_TRUE(std::filesystem::exists(w.dir / "m.ckpt"));
  const std::string log = read_file(w.dir / "log.csv");
  EXPECT_EQ(log.rfind("epoch,step,lr,loss_ce,loss_tri,loss_total\n", 0), 0u);

  r = cli({"-c", w.conf, "eval", "--export-embeddings", w.path("emb.csv")});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const std::string report = read_file(w.dir / "report.csv");
  EXPECT_NE(report.find("\nd0->d1,"), std::string::npos) << report;
  EXPECT_NE(report.find("\nd1->d0,"), std::string::npos) << report;
  const EmbeddingTable emb = read_embeddings(w.dir / "emb.csv");
  EXPECT_EQ(emb.features.rows(), 3 * 2 * 4);

  r = cli({"-c", w.conf, "export", "--out", w.path("emb2.csv")});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_EQ(read_file(w.dir / "emb.csv"), read_file(w.dir / "emb2.csv"));
  EXPECT_EQ(cli({"-c", w.conf, "export"}).code, kExitConfig);

  // Same seed, same primary outputs.
  ASSERT_EQ(cli({"-c", w.conf, "eval", "--report", w.path("report2.csv")}).code, kExitOk);
  EXPECT_EQ(report, read_file(w.dir / "report2.csv"));
}

TEST(Cli, EvalRejectsMismatchedModel) {
  const Workspace w("cli_version");
  ASSERT_EQ(cli({"-c", w.conf, "synth"}).code, kExitOk);
  ASSERT_EQ(cli({"-c", w.conf, "train", "--epochs", "0", "--set", "train.warmup_epochs=0"}).code,
            kExitOk);
  CliRun r = cli({"-c", w.conf, "eval", "--set", "model.dim=32"});
  EXPECT_EQ(r.code, kExitConfig);
  EXPECT_NE(r.err.find("model.dim"), std::string::npos) << r.err;
  r = cli({"-c", w.conf, "eval", "--sie-scheme", "domain+camera"});
  EXPECT_EQ(r.code, kExitConfig);
  EXPECT_NE(r.err.find("model.n_sie"), std::string::npos) << r.err;
}

TEST(Cli, DisabledSideEmbeddingIsFlaggedInTheLog) {
  const Workspace w("cli_nosie");
  ASSERT_EQ(cli({"-c", w.conf, "synth"}).code, kExitOk);
  const CliRun r = cli({"-c", w.conf, "train", "--lambda-sie", "0"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_EQ(read_file(w.dir / "log.csv").rfind("# sie=disabled\n", 0), 0u);
  EXPECT_NE(r.out.find("side information disabled"), std::string::npos);
}

TEST(Cli, CameraOnlySchemeSizesTableFromManifest) {
  const Workspace w("cli_camera");
  ASSERT_EQ(cli({"-c", w.conf, "synth"}).code, kExitOk);
  ASSERT_EQ(cli({"-c", w.conf, "train", "--sie-scheme", "camera-only"}).code, kExitOk);
  const Checkpoint ck = load_checkpoint(w.dir / "m.ckpt");
  EXPECT_EQ(ck.config.n_sie, 3);
  EXPECT_EQ(ck.params.sie_table.rows(), 3);
  EXPECT_EQ(ck.config.n_classes, 3);
}

TEST(Cli, GradcheckPassesAndCatchesAFault) {
  const Workspace w("cli_grad");
  CliRun r = cli({"-c", w.conf, "gradcheck"});
  EXPECT_EQ(r.code, kExitOk) << r.out;
  EXPECT_NE(r.out.find("gradcheck passed"), std::string::npos);
  {
    const testing::ScopedGeluGradFault fault(1.5);
    r = cli({"-c", w.conf, "gradcheck"});
  }
  EXPECT_EQ(r.code, kExitNumerical);
  EXPECT_NE(r.out.find("worst coordinates:"), std::string::npos);
  EXPECT_NE(r.out.find("FAIL"), std::string::npos);
}

TEST(Cli, GradcheckToleranceFlag) {
  const Workspace w("cli_tol");
  CliRun r = cli({"-c", w.conf, "gradcheck", "--tol", "1e-14"});
  EXPECT_EQ(r.code, kExitNumerical) << r.out;
  r = cli({"-c", w.conf, "gradcheck", "--tol", "1e-2"});
  EXPECT_EQ(r.code, kExitOk) << r.out;
  EXPECT_NE(r.out.find("tol 1.0e-02"), std::string::npos) << r.out;
}

}  // namespace
}  // namespace xspec
