// Copyright 2026 The xspec Authors
// SPDX-License-Identifier: Apache-2.0

#include "xspec/bbox.hpp"

namespace xspec {

IouAssignment assign_identity_by_iou(const BBox& body, std::span<const LabeledFace> faces) {
  IouAssignment result;
  int strong = 0;
  for (const LabeledFace& f : faces) {
    const double v = iou(body, f.box);
    if (v > kMultiOverlapThreshold) ++strong;
    if (v <= 0.0) continue;
    if (v > result.best_iou) {
      result.best_iou = v;
      result.identity = f.identity;
      result.ambiguous = false;
    } else if (v == result.best_iou) {
      result.ambiguous = true;
      if (f.identity < result.identity) result.identity = f.identity;
    }
  }
  if (strong >= 2) {
    result.outcome = IouOutcome::kDiscarded;
    result.identity = -1;
  } else if (result.best_iou > 0.0) {
    result.outcome = IouOutcome::kMatched;
  }
  return result;
}

}  // namespace xspec
