// Copyright 2026 The xspec Authors
// SPDX-License-Identifier: Apache-2.0
//
// Identity labeling of body detections from annotated face boxes.

#pragma once

#include <span>

namespace xspec {

template <typename T>
struct Box {
  T x = 0, y = 0, w = 0, h = 0;  // top-left corner and size, w, h >= 0

  T area() const { return w * h; }
};

using BBox = Box<double>;

// Intersection over union; 0 for disjoint boxes or a degenerate union.
template <typename T>
double iou(const Box<T>& a, const Box<T>& b) {
  const double ix0 = a.x > b.x ? a.x : b.x;
  const double iy0 = a.y > b.y ? a.y : b.y;
  const double ix1 = (a.x + a.w) < (b.x + b.w) ? (a.x + a.w) : (b.x + b.w);
  const double iy1 = (a.y + a.h) < (b.y + b.h) ? (a.y + a.h) : (b.y + b.h);
  const double iw = ix1 - ix0, ih = iy1 - iy0;
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = static_cast<double>(a.area()) + static_cast<double>(b.area()) - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

struct LabeledFace {
  BBox box;
  int identity = 0;
};

enum class IouOutcome { kMatched, kDiscarded, kNoMatch };

struct IouAssignment {
  IouOutcome outcome = IouOutcome::kNoMatch;
  int identity = -1;       // valid when matched
  double best_iou = 0.0;
  bool ambiguous = false;  // several faces shared the maximal IoU
};

inline constexpr double kMultiOverlapThreshold = 0.75;

// Label of the max-IoU face. Discarded when the body overlaps two or more
// faces with IoU > 0.75; no match when every IoU is 0. Ties at the maximum go
// to the lower identity and set `ambiguous`.
IouAssignment assign_identity_by_iou(const BBox& body, std::span<const LabeledFace> faces);

}  // namespace xspec
