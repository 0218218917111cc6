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

// Independent reference implementations used as test oracles. They are
// written from the definitions, deliberately without reusing library code
// paths (no Eigen, no polygon clipping, no shared helpers).

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <utility>
#include <vector>

namespace mono3d::testing {

/// Row-major 3x4 projection applied to a point, then divided by depth.
inline std::array<double, 3> oracle_project(const std::array<double, 12>& p, double x, double y, double z) {
  const double u = p[0] * x + p[1] * y + p[2] * z + p[3];
  const double v = p[4] * x + p[5] * y + p[6] * z + p[7];
  const double w = p[8] * x + p[9] * y + p[10] * z + p[11];
  return {u / w, v / w, w};
}

/// Tight image box of a cuboid: corners at (+-l/2, +-h/2, +-w/2), rotated by
/// `yaw` about Y (x' = x cos + z sin, z' = -x sin + z cos), shifted to the
/// center and projected.
inline std::array<double, 4> oracle_box_project(const std::array<double, 12>& p, double cx, double cy, double cz,
                                                double w, double h, double l, double yaw) {
  std::array<double, 4> box = {std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
                               -std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
  const double c = std::cos(yaw), s = std::sin(yaw);
  for (int sx = -1; sx <= 1; sx += 2) {
    for (int sy = -1; sy <= 1; sy += 2) {
      for (int sz = -1; sz <= 1; sz += 2) {
        const double x = sx * l / 2, y = sy * h / 2, z = sz * w / 2;
        const auto q = oracle_project(p, cx + c * x + s * z, cy + y, cz - s * x + c * z);
        box[0] = std::min(box[0], q[0]);
        box[1] = std::min(box[1], q[1]);
        box[2] = std::max(box[2], q[0]);
        box[3] = std::max(box[3], q[1]);
      }
    }
  }
  return box;
}

/// Ground footprint of a box centered at (cx, cz): extent l along its local
/// X and w along its local Z, rotated by yaw (x' = x cos + z sin,
/// z' = -x sin + z cos).
struct OracleFootprint {
  double cx, cz, w, l, yaw;
};

/// Monte-Carlo BEV IoU: stratified jittered samples over the first box's
/// bounding square; the intersection area estimate is (hits / n) * area(A).
inline double oracle_mc_iou_bev(const OracleFootprint& a, const OracleFootprint& b, int grid, std::mt19937_64& rng) {
  struct Frame {
    double cx, cz, c, s, hw, hl;
    bool inside(double x, double z) const {
      const double dx = x - cx, dz = z - cz;
      // Inverse rotation into the box frame.
      return std::abs(c * dx - s * dz) <= hl && std::abs(s * dx + c * dz) <= hw;
    }
  };
  const Frame fa{a.cx, a.cz, std::cos(a.yaw), std::sin(a.yaw), a.w / 2, a.l / 2};
  const Frame fb{b.cx, b.cz, std::cos(b.yaw), std::sin(b.yaw), b.w / 2, b.l / 2};
  const double r = 0.5 * std::hypot(a.w, a.l);
  const double x0 = a.cx - r, z0 = a.cz - r, cell = 2 * r / grid;
  std::uniform_real_distribution<double> jitter(0.0, 1.0);
  std::int64_t in_a = 0, in_both = 0;
  for (int i = 0; i < grid; ++i) {
    for (int j = 0; j < grid; ++j) {
      const double x = x0 + (i + jitter(rng)) * cell;
      const double z = z0 + (j + jitter(rng)) * cell;
      if (!fa.inside(x, z)) continue;
      ++in_a;
      if (fb.inside(x, z)) ++in_both;
    }
  }
  const double area_a = a.w * a.l, area_b = b.w * b.l;
  const double inter = area_a * static_cast<double>(in_both) / static_cast<double>(std::max<std::int64_t>(in_a, 1));
  return inter / (area_a + area_b - inter);
}

inline double oracle_iou_2d(const std::array<double, 4>& a, const std::array<double, 4>& b) {
  const double iw = std::max(0.0, std::min(a[2], b[2]) - std::max(a[0], b[0]));
  const double ih = std::max(0.0, std::min(a[3], b[3]) - std::max(a[1], b[1]));
  const double inter = iw * ih;
  const double uni = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter;
  return uni > 0 ? inter / uni : 0.0;
}

/// Exhaustive NMS reference. The greedy kept set K is characterised as a
/// subset such that, walking boxes in priority order, a box is in K iff it
/// does not overlap (IoU > thresh, same class) any higher-priority member of
/// K. All 2^n subsets are enumerated and every one satisfying the
/// characterisation is returned (exactly one should exist).
struct OracleBox {
  std::array<double, 4> box;
  int cls;
  double score;
  std::size_t id;
};

inline std::vector<std::uint32_t> oracle_nms_subsets(const std::vector<OracleBox>& boxes, double thresh) {
  const std::size_t n = boxes.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return boxes[a].score != boxes[b].score ? boxes[a].score > boxes[b].score : boxes[a].id < boxes[b].id;
  });
  // blockers[i]: bit mask of higher-priority boxes that would suppress i.
  std::vector<std::uint32_t> blockers(n, 0);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t q = 0; q < r; ++q) {
      const std::size_t i = order[r], j = order[q];
      if (boxes[j].cls == boxes[i].cls && oracle_iou_2d(boxes[i].box, boxes[j].box) > thresh) blockers[i] |= 1u << j;
    }
  }
  std::vector<std::uint32_t> valid;
  for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
    bool ok = true;
    for (std::size_t i = 0; i < n && ok; ++i) {
      const bool in = (mask >> i) & 1u;
      ok = in == ((mask & blockers[i]) == 0);
    }
    if (ok) valid.push_back(mask);
  }
  return valid;
}

/// Exhaustive reference for greedy score-ordered matching. Every partial
/// one-to-one assignment of detections (in score order) to ground truths
/// using only pairs with IoU >= thresh is enumerated; greedy matching is
/// the lexicographic maximum of the per-detection keys (IoU, -gt index),
/// an unmatched detection keying below every match. Returns the maximiser
/// (index = detection, value = GT or -1) and how many assignments attain it.
struct OracleAssignment {
  std::vector<int> gt;
  std::size_t maximisers = 0;
};

inline OracleAssignment oracle_greedy_assignment(const std::vector<std::vector<double>>& iou, std::size_t num_gt,
                                                 double thresh) {
  const std::size_t nd = iou.size();
  using Key = std::vector<std::pair<double, int>>;
  auto key_of = [&](const std::vector<int>& asg) {
    Key k(nd);
    for (std::size_t i = 0; i < nd; ++i) {
      k[i] = asg[i] < 0 ? std::make_pair(-1.0, 0) : std::make_pair(iou[i][static_cast<std::size_t>(asg[i])], -asg[i]);
    }
    return k;
  };
  OracleAssignment best;
  Key best_key;
  std::vector<int> cur(nd, -1);
  std::vector<bool> taken(num_gt, false);
  std::function<void(std::size_t)> dfs = [&](std::size_t i) {
    if (i == nd) {
      const Key k = key_of(cur);
      if (best.maximisers == 0 || k > best_key) {
        best_key = k;
        best.gt = cur;
        best.maximisers = 1;
      } else if (k == best_key) {
        ++best.maximisers;
      }
      return;
    }
    cur[i] = -1;
    dfs(i + 1);
    for (std::size_t g = 0; g < num_gt; ++g) {
      if (taken[g] || iou[i][g] < thresh) continue;
      taken[g] = true;
      cur[i] = static_cast<int>(g);
      dfs(i + 1);
      taken[g] = false;
      cur[i] = -1;
    }
  };
  dfs(0);
  return best;
}

}  // namespace mono3d::testing
