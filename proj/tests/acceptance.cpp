// Copyright 2026 The xspec Authors
// SPDX-License-Identifier: Apache-2.0
//
// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any
// failure. Scratch files go to ./acceptance_run.

#include "xspec/bbox.hpp"
#include "xspec/checkpoint.hpp"
#include "xspec/cli.hpp"
#include "xspec/data.hpp"
#include "xspec/eval.hpp"
#include "xspec/losses.hpp"
#include "xspec/model.hpp"
#include "xspec/trainer.hpp"

#include "oracles.hpp"
#include "test_util.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>

namespace xspec {
namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::vector<int> pk_labels(int p, int k) {
  std::vector<int> labels;
  for (int i = 0; i < p; ++i)
    for (int j = 0; j < k; ++j) labels.push_back(i);
  return labels;
}

Outcome gradient_check() {
  const auto t0 = std::chrono::steady_clock::now();
  RunConfig cfg;  // desk model, SIE-2, CE + triplet, h = 1e-4
  const ModelGradcheckReport r = reference_gradcheck(cfg);
  const double secs = seconds_since(t0);
  const bool ok = r.passed && r.max_rel_error < 1e-4 && secs < 120.0;
  return {ok, std::to_string(r.checked) + " coordinates, P=" +
                  std::to_string(cfg.gradcheck.identities) + ", max rel err " +
                  fmt("%.3e", r.max_rel_error) + ", " + fmt("%.1f s", secs)};
}

Outcome triplet_oracle() {
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<int> pk(2, 5), dim(1, 8);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int p = pk(rng), k = pk(rng);
    const std::vector<int> labels = pk_labels(p, k);
    const Matrix f = test::random_matrix(p * k, dim(rng), rng);
    Tape t;
    const double got = batch_hard_triplet({t.constant(f), labels}, 0.3).item();
    worst = std::max(worst, std::abs(got - oracle::batch_hard_triplet(f, labels, 0.3)));
  }
  bool identical_ok = true;
  for (int p = 2; p <= 5; ++p)
    for (int k = 2; k <= 5; ++k) {
      Tape t;
      const double v =
          batch_hard_triplet({t.constant(Matrix::Constant(p * k, 4, 0.5)), pk_labels(p, k)}, 0.3).item();
      identical_ok = identical_ok && std::abs(v - p * k * 0.3) <= 1e-12;
    }
  return {worst <= 1e-9 && identical_ok,
          "max |diff| " + fmt("%.2e", worst) + " over 100 batches; identical features " +
              (identical_ok ? "give P*K*m" : "WRONG")};
}

Outcome metric_oracle() {
  std::mt19937_64 rng(202);
  std::uniform_int_distribution<int> n_probe(1, 8), n_gallery(4, 15), grid(-2, 2);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int np = n_probe(rng), ng = n_gallery(rng), n_ids = 4;
    // Integer coordinates make distance ties common.
    Matrix probe(np, 3), gallery(ng, 3);
    for (Index i = 0; i < probe.size(); ++i) probe.data()[i] = grid(rng);
    for (Index i = 0; i < gallery.size(); ++i) gallery.data()[i] = grid(rng);
    std::uniform_int_distribution<int> id(0, n_ids - 1);
    std::vector<int> gid, pid;
    for (int g = 0; g < ng; ++g) gid.push_back(g < n_ids ? g : id(rng));
    for (int q = 0; q < np; ++q) pid.push_back(id(rng));
    const RankingResult r = evaluate_rankings(probe, gallery, pid, gid);
    for (int k = 1; k <= ng; ++k)
      worst = std::max(worst, std::abs(r.rank(k) - oracle::rank_k(probe, pid, gallery, gid, k)));
    worst = std::max(worst, std::abs(r.mean_ap - oracle::mean_ap(probe, pid, gallery, gid)));
  }
  const std::vector<int> hand_pid{1}, hand_gid{1, 2, 1, 3};
  const double ap = mean_ap(Rankings{{0, 1, 2, 3}}, hand_pid, hand_gid).mean_ap;
  const bool hand_ok = std::abs(ap - 5.0 / 6.0) <= 1e-12;
  return {worst <= 1e-12 && hand_ok,
          "max |diff| " + fmt("%.2e", worst) + " over 100 instances; hand AP " + fmt("%.12f", ap)};
}

Outcome sie_invariance() {
  ModelConfig mc;
  mc.n_sie = 9;
  std::mt19937_64 rng(303);
  std::vector<Image> images;
  for (int i = 0; i < 20; ++i) images.push_back(test::random_image(mc.image_height, mc.image_width, 3, rng));

  mc.lambda_sie = 0.0;
  ModelParams p = init_params(mc, 7);
  double worst = 0.0;
  for (const Image& img : images) {
    const Inference base = infer(p, img, 0, mc);
    for (int s = 1; s < mc.n_sie; ++s) {
      const Inference o = infer(p, img, s, mc);
      worst = std::max({worst, (o.feature - base.feature).cwiseAbs().maxCoeff(),
                        (o.logits - base.logits).cwiseAbs().maxCoeff()});
    }
  }
  mc.lambda_sie = 3.0;
  double smallest = 1e300;
  for (const Image& img : images) {
    const Inference base = infer(p, img, 0, mc);
    for (int s = 1; s < mc.n_sie; ++s)
      smallest = std::min(smallest, (infer(p, img, s, mc).feature - base.feature).cwiseAbs().maxCoeff());
  }
  return {worst < 1e-12 && smallest > 1e-6,
          "lambda=0 max diff " + fmt("%.1e", worst) + "; lambda=3 min diff " + fmt("%.2e", smallest)};
}

Outcome sampler_contract() {
  // 20 identities with uneven cells, some smaller than the per-cell draw.
  Dataset ds;
  ds.n_identities = 20;
  ds.n_domains = 2;
  ds.n_cameras = 1;
  for (int id = 0; id < 20; ++id)
    for (int d = 0; d < 2; ++d)
      for (int k = 0; k < 1 + (id + d) % 5; ++k) {
        ImageRecord r;
        r.identity = id;
        r.domain = d;
        r.camera = 0;
        ds.records.push_back(r);
      }
  const SamplerConfig llcm{16, 4, 2, false};
  const PkSampler sampler(ds, llcm);
  std::mt19937_64 rng(404);
  int good = 0;
  std::size_t size = 0;
  for (int i = 0; i < 100; ++i) {
    const BatchPlan plan = sampler.sample(rng);
    size = plan.entries.size();
    std::map<int, std::map<int, int>> counts;
    for (const auto& e : plan.entries) {
      if (ds.records[e.record].identity != e.identity || ds.records[e.record].domain != e.domain) {
        counts.clear();
        break;
      }
      ++counts[e.identity][e.domain];
    }
    bool ok = counts.size() == 16;
    for (const auto& [id, per_domain] : counts) {
      ok = ok && per_domain.size() == 2;
      for (const auto& [d, n] : per_domain) ok = ok && n == 2;
    }
    try {
      check_batch_plan(plan, ds);
    } catch (const std::exception&) {
      ok = false;
    }
    good += ok ? 1 : 0;
  }
  return {good == 100 && size == 64,
          std::to_string(good) + "/100 batches satisfy the contract; P=16 K=4 N_D=2 batch size " +
              std::to_string(size)};
}

Outcome schedule() {
  const TrainConfig cfg;
  const double a = lr_at(19, cfg), b = lr_at(70, cfg), c = lr_at(20, cfg);
  const bool ok = a == 0.0004 && std::abs(b - 0.0002) < 1e-15 && std::abs(c - a) < 1e-12;
  return {ok, "lr(19)=" + fmt("%.17g", a) + " lr(70)=" + fmt("%.17g", b) + " |lr(20)-lr(19)|=" +
                  fmt("%.1e", std::abs(c - a))};
}

Outcome iou_labeler() {
  const BBox body{0, 0, 10, 10};
  const std::vector<LabeledFace> inside{{{0, 0, 10, 5}, 4}};
  const std::vector<LabeledFace> two_strong{{{0, 0, 10, 8}, 1}, {{0, 2, 10, 8}, 2}};
  const std::vector<LabeledFace> one_strong{{{0, 0, 10, 9}, 3}, {{0, 0, 10, 2}, 5}};
  const IouAssignment a = assign_identity_by_iou(body, inside);
  const IouAssignment b = assign_identity_by_iou(body, two_strong);
  const IouAssignment c = assign_identity_by_iou(body, one_strong);
  const bool ok_a = a.outcome == IouOutcome::kMatched && a.identity == 4 && a.best_iou == 0.5;
  const bool ok_b = b.outcome == IouOutcome::kDiscarded;
  const bool ok_c = c.outcome == IouOutcome::kMatched && c.identity == 3;
  return {ok_a && ok_b && ok_c, std::string("IoU 0.5 -> ") + (ok_a ? "matched" : "WRONG") +
                                    ", two at 0.8 -> " + (ok_b ? "discarded" : "WRONG") +
                                    ", {0.9, 0.2} -> " + (ok_c ? "0.9 face" : "WRONG")};
}

struct EndToEnd {
  Outcome synthetic;
  Outcome determinism;
};

double rank1_of(const std::vector<ReportRow>& rows, const std::string& name, double* map) {
  for (const auto& r : rows)
    if (r.protocol == name) {
      if (map) *map = r.mean_ap;
      return r.rank1;
    }
  return -1.0;
}

EndToEnd end_to_end(const std::filesystem::path& work) {
  EndToEnd out;
  RunConfig cfg;
  cfg.seed = 0;
  cfg.set("synth.ids", "8");
  cfg.set("synth.domains", "2");
  cfg.set("synth.per_domain", "20");
  cfg.paths.data = work / "data";
  cfg.paths.log = work / "train_log.csv";
  std::ostringstream sink;

  const auto t0 = std::chrono::steady_clock::now();
  cmd_synth(cfg, sink);

  RunConfig untrained = cfg;
  untrained.set("train.epochs", "0");
  untrained.set("train.warmup_epochs", "0");
  untrained.paths.checkpoint = work / "untrained.ckpt";
  untrained.paths.report = work / "untrained.csv";
  untrained.paths.log = work / "untrained_log.csv";
  cmd_train(untrained, sink);
  const double chance_rank1 = rank1_of(cmd_eval(untrained, sink), "d0->d1", nullptr);

  RunConfig first = cfg;
  first.paths.checkpoint = work / "a.ckpt";
  first.paths.report = work / "a.csv";
  const auto t_train = std::chrono::steady_clock::now();
  cmd_train(first, sink);
  const double train_secs = seconds_since(t_train);
  double map = 0.0;
  const double rank1 = rank1_of(cmd_eval(first, sink), "d0->d1", &map);
  const double total_secs = seconds_since(t0);

  const bool chance_ok = std::abs(chance_rank1 - 0.125) <= 0.15;
  out.synthetic.pass = rank1 >= 0.90 && map >= 0.80 && chance_ok && total_secs < 600.0;
  out.synthetic.detail = "d0->d1 rank-1 " + fmt("%.4f", rank1) + " mAP " + fmt("%.4f", map) +
                         "; untrained rank-1 " + fmt("%.4f", chance_rank1) + "; train " +
                         fmt("%.1f s", train_secs) + ", total " + fmt("%.1f s", total_secs);

  RunConfig second = cfg;
  second.paths.checkpoint = work / "b.ckpt";
  second.paths.report = work / "b.csv";
  second.paths.log = work / "train_log_b.csv";
  cmd_train(second, sink);
  const bool ckpt_same = test::read_file(first.paths.checkpoint) == test::read_file(second.paths.checkpoint);
  const bool log_same = test::read_file(first.paths.log) == test::read_file(second.paths.log);
  RunConfig reeval = first;
  reeval.paths.report = work / "a2.csv";
  cmd_eval(reeval, sink);
  cmd_eval(second, sink);
  const std::string report = test::read_file(first.paths.report);
  const bool report_same = !report.empty() && report == test::read_file(reeval.paths.report) &&
                           report == test::read_file(second.paths.report);
  out.determinism.pass = ckpt_same && report_same;
  out.determinism.detail = std::string("checkpoints ") + (ckpt_same ? "byte-identical" : "DIFFER") +
                           ", logs " + (log_same ? "identical" : "differ") + ", reports " +
                           (report_same ? "identical" : "DIFFER");
  return out;
}

Outcome guarded(const std::function<Outcome()>& f) {
  try {
    return f();
  } catch (const std::exception& e) {
    return {false, std::string("exception: ") + e.what()};
  }
}

}  // namespace
}  // namespace xspec

int main() {
  using namespace xspec;
  const auto work = std::filesystem::current_path() / "acceptance_run";
  std::filesystem::remove_all(work);
  std::filesystem::create_directories(work);

  std::vector<std::pair<std::string, Outcome>> results;
  auto report = [&](int n, const std::string& name, const Outcome& o) {
    std::printf("%s  %d. %s: %s\n", o.pass ? "PASS" : "FAIL", n, name.c_str(), o.detail.c_str());
    std::fflush(stdout);
    results.emplace_back(name, o);
  };

  report(1, "full-model gradcheck", guarded(gradient_check));
  report(2, "triplet oracle", guarded(triplet_oracle));
  report(3, "metric oracle", guarded(metric_oracle));
  report(4, "side-information invariance", guarded(sie_invariance));
  report(5, "sampler contract", guarded(sampler_contract));

  EndToEnd e2e;
  try {
    e2e = end_to_end(work);
  } catch (const std::exception& e) {
    e2e.synthetic = {false, std::string("exception: ") + e.what()};
    e2e.determinism = {false, "not run"};
  }
  report(6, "end-to-end synthetic run", e2e.synthetic);
  report(7, "learning-rate schedule", guarded(schedule));
  report(8, "IoU labeler", guarded(iou_labeler));
  report(9, "determinism", e2e.determinism);

  int failed = 0;
  for (const auto& [name, o] : results) failed += o.pass ? 0 : 1;
  std::printf("%d/%zu criteria passed\n", static_cast<int>(results.size()) - failed, results.size());
  return failed == 0 ? 0 : 1;
}
