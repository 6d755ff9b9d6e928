// Copyright 2026 The xspec Authors
// SPDX-License-Identifier: Apache-2.0
//
// Subcommands behind the xspec executable. Each takes a validated RunConfig,
// prints a short summary to `out` and throws the library's typed errors.

#pragma once

#include "xspec/eval.hpp"
#include "xspec/run_config.hpp"
#include "xspec/trainer.hpp"

#include <ostream>
#include <vector>

namespace xspec {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumerical = 3;
inline constexpr int kExitIo = 4;

struct ParamCheck {
  std::string name;
  std::size_t checked = 0;
  std::size_t size = 0;
  double max_rel_error = 0.0;
  Index worst_row = 0;
  Index worst_col = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

struct ModelGradcheckReport {
  bool passed = true;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::vector<ParamCheck> params;
};

// Central differences of the batch's total loss against the tape gradient.
// Arrays with more than max_coords entries are checked on a seeded subset.
ModelGradcheckReport model_gradcheck(const ModelParams& params, const BatchInput& batch,
                                     const ModelConfig& model_config,
                                     const LossConfig& loss_config, double h, double tol,
                                     int max_coords, std::uint64_t seed);

// The reference suite: synthetic batch of gradcheck.identities x
// gradcheck.per_identity images through the configured model.
ModelGradcheckReport reference_gradcheck(const RunConfig& config);

// Dataset at paths.data with pixels loaded.
Dataset load_dataset(const RunConfig& config);

// Model config for training on `dataset`: n_sie follows the scheme and
// n_classes the identity count unless set explicitly.
ModelConfig resolve_model_config(const RunConfig& config, const Dataset& dataset);

void cmd_synth(const RunConfig& config, std::ostream& out);
TrainResult cmd_train(const RunConfig& config, std::ostream& out);
std::vector<ReportRow> cmd_eval(const RunConfig& config, std::ostream& out);
bool cmd_gradcheck(const RunConfig& config, std::ostream& out);
void cmd_export(const RunConfig& config, std::ostream& out);

// Parses arguments, runs one subcommand and returns its exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace xspec
