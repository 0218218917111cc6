// Copyright 2026 The mono3d Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

/// \file
/// \brief Multi-task detection loss: softmax classification, -log IoU for the
/// 2D box, smooth-L1 for the 3D transform, and online hard-negative mining.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "mono3d/anchors.hpp"
#include "mono3d/common.hpp"
#include "mono3d/geometry.hpp"
#include "mono3d/nnops.hpp"

namespace mono3d {

struct LossConfig {
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  int num_classes = 4;
  double mining_fraction = 0.2;
  double iou_floor = 1e-6;

  void validate() const {
    if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0)) throw Error(ErrorCode::kInvalidConfig, "loss weights must be >= 0");
    if (num_classes < 2) throw Error(ErrorCode::kInvalidConfig, "need at least background plus one class");
    if (!(mining_fraction > 0.0) || mining_fraction > 1.0) throw Error(ErrorCode::kInvalidConfig, "mining fraction must be in (0, 1]");
    if (!(iou_floor > 0.0)) throw Error(ErrorCode::kInvalidConfig, "IoU floor must be positive");
  }
};

/// A loss value with its gradient with respect to the prediction.
template <std::size_t N>
struct LossGrad {
  double loss = 0.0;
  std::array<double, N> grad{};
};

struct ClassLoss {
  double loss = 0.0;
  std::vector<double> grad;
};

/// -log softmax(logits)[target]; gradient softmax - onehot(target).
inline ClassLoss cls_loss(std::span<const double> logits, int target) {
  if (target < 0 || static_cast<std::size_t>(target) >= logits.size()) {
    throw Error(ErrorCode::kBadClassIndex, "class " + std::to_string(target) + " outside [0, " + std::to_string(logits.size()) + ")");
  }
  const double m = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double v : logits) sum += std::exp(v - m);
  ClassLoss out;
  out.loss = std::log(sum) - (logits[static_cast<std::size_t>(target)] - m);
  out.grad = softmax(logits);
  out.grad[static_cast<std::size_t>(target)] -= 1.0;
  return out;
}

/// -log(max(IoU(pred, gt), floor)), differentiated with respect to the
/// predicted corners [x_min, y_min, x_max, y_max]. The gradient is zero
/// where the IoU is clamped; at exact edge ties the one-sided derivative
/// of the non-overlapping side is used.
inline LossGrad<4> box2d_loss(const Box2D& pred, const Box2D& gt, double iou_floor = 1e-6) {
  LossGrad<4> out;
  const double iw = std::min(pred.x_max, gt.x_max) - std::max(pred.x_min, gt.x_min);
  const double ih = std::min(pred.y_max, gt.y_max) - std::max(pred.y_min, gt.y_min);
  const double pw = pred.width();
  const double ph = pred.height();
  const double inter = (iw > 0.0 && ih > 0.0) ? iw * ih : 0.0;
  const double uni = pw * ph + gt.area() - inter;
  const double iou = uni > 0.0 ? inter / uni : 0.0;
  if (!(iou > iou_floor)) {
    out.loss = -std::log(iou_floor);
    return out;
  }
  out.loss = -std::log(iou);

  const std::array<double, 4> d_inter = {
      pred.x_min > gt.x_min ? -ih : 0.0,
      pred.y_min > gt.y_min ? -iw : 0.0,
      pred.x_max < gt.x_max ? ih : 0.0,
      pred.y_max < gt.y_max ? iw : 0.0,
  };
  const std::array<double, 4> d_area = {-ph, -pw, ph, pw};
  for (std::size_t k = 0; k < 4; ++k) {
    const double d_union = d_area[k] - d_inter[k];
    // d(-log(I/U)) = dU/U - dI/I
    out.grad[k] = d_union / uni - d_inter[k] / inter;
  }
  return out;
}

/// Smooth-L1 with transition at |d| = 1, summed over the seven 3D transform
/// components.
inline LossGrad<7> smooth_l1(std::span<const double> pred, std::span<const double> target) {
  if (pred.size() != 7 || target.size() != 7) {
    throw Error(ErrorCode::kLengthMismatch, "smooth-L1 expects 7 components, got " + std::to_string(pred.size()) +
                                                " and " + std::to_string(target.size()));
  }
  LossGrad<7> out;
  for (std::size_t k = 0; k < 7; ++k) {
    const double d = pred[k] - target[k];
    if (std::abs(d) < 1.0) {
      out.loss += 0.5 * d * d;
      out.grad[k] = d;
    } else {
      out.loss += std::abs(d) - 0.5;
      out.grad[k] = d > 0.0 ? 1.0 : -1.0;
    }
  }
  return out;
}

inline LossGrad<7> smooth_l1(const TransformVector& pred, const TransformVector& target) {
  const auto p = pred.regression_3d();
  const auto t = target.regression_3d();
  return smooth_l1(std::span<const double>(p), std::span<const double>(t));
}

/// Per-box loss terms before weighting.
struct BoxLossTerms {
  double cls = 0.0;
  double box2d = 0.0;
  double box3d = 0.0;
};

struct LossBreakdown {
  double cls = 0.0;
  double box2d = 0.0;
  double box3d = 0.0;
  double total = 0.0;
  /// cls + lambda1 * box2d + lambda2 * box3d for foreground, cls alone for
  /// background; one entry per input box.
  std::vector<double> per_box;
};

/// Combines per-box terms. Classification is averaged over the selected
/// boxes; each regression term is averaged over the selected foreground
/// boxes (0 when there are none). `selected` defaults to every box.
inline LossBreakdown total_loss(std::span<const BoxLossTerms> terms, std::span<const Assignment> assignments,
                                const LossConfig& cfg, std::optional<std::span<const std::size_t>> selected = std::nullopt) {
  cfg.validate();
  if (terms.size() != assignments.size()) {
    throw Error(ErrorCode::kLengthMismatch, "loss terms and assignments differ in length");
  }
  LossBreakdown out;
  out.per_box.resize(terms.size());
  for (std::size_t i = 0; i < terms.size(); ++i) {
    const bool fg = assignments[i].class_index != 0;
    out.per_box[i] = terms[i].cls + (fg ? cfg.lambda1 * terms[i].box2d + cfg.lambda2 * terms[i].box3d : 0.0);
  }
  std::vector<std::size_t> all;
  if (!selected) {
    all.resize(terms.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
  }
  const std::span<const std::size_t> idx = selected ? *selected : std::span<const std::size_t>(all);
  std::size_t n_fg = 0;
  for (std::size_t i : idx) {
    out.cls += terms[i].cls;
    if (assignments[i].class_index != 0) {
      out.box2d += terms[i].box2d;
      out.box3d += terms[i].box3d;
      ++n_fg;
    }
  }
  if (!idx.empty()) out.cls /= static_cast<double>(idx.size());
  if (n_fg > 0) {
    out.box2d /= static_cast<double>(n_fg);
    out.box3d /= static_cast<double>(n_fg);
  }
  out.total = out.cls + cfg.lambda1 * out.box2d + cfg.lambda2 * out.box3d;
  return out;
}

/// Indices of the k = max(1, ceil(fraction * n)) highest losses, ties to the
/// lower index, returned in ascending order. A 1e-9 slack absorbs products
/// such as 0.2 * 15 that round just above an integer.
inline std::vector<std::size_t> hard_negative_mining(std::span<const double> losses, double fraction = 0.2) {
  if (losses.empty()) throw Error(ErrorCode::kEmptyInput, "no boxes to mine");
  if (!(fraction > 0.0) || fraction > 1.0) throw Error(ErrorCode::kInvalidConfig, "mining fraction must be in (0, 1]");
  const std::size_t n = losses.size();
  const auto k = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9)), 1, n);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return losses[a] > losses[b]; });
  order.resize(k);
  std::sort(order.begin(), order.end());
  return order;
}

}  // namespace mono3d
