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
/// \brief Joint 2D/3D anchor templates, spanning over a feature grid,
/// ground-truth matching and the anchor-relative box transforms.

#pragma once

#include <array>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "mono3d/common.hpp"
#include "mono3d/geometry.hpp"

namespace mono3d {

/// 2D shape plus the 3D priors learned from matching ground truths.
struct AnchorTemplate {
  double w2d = 0.0;
  double h2d = 0.0;
  double z_p = 0.0;
  double w3d = 0.0;
  double h3d = 0.0;
  double l3d = 0.0;
  double theta3d = 0.0;

  bool operator==(const AnchorTemplate&) const = default;
};

/// A template placed at a feature-grid cell.
struct SpannedAnchor {
  std::size_t template_index = 0;
  double x = 0.0;
  double y = 0.0;
};

/// Regression outputs relative to an anchor. The first four are the 2D box
/// transform, the remaining seven the 3D transform.
struct TransformVector {
  double x2d = 0.0, y2d = 0.0, w2d = 0.0, h2d = 0.0;
  double xp = 0.0, yp = 0.0, zp = 0.0;
  double w3d = 0.0, h3d = 0.0, l3d = 0.0, theta = 0.0;

  static constexpr std::size_t kSize = 11;

  std::array<double, kSize> to_array() const {
    return {x2d, y2d, w2d, h2d, xp, yp, zp, w3d, h3d, l3d, theta};
  }
  static TransformVector from_array(const std::array<double, kSize>& a) {
    return {a[0], a[1], a[2], a[3], a[4], a[5], a[6], a[7], a[8], a[9], a[10]};
  }
  /// The seven components supervised by the 3D regression loss.
  std::array<double, 7> regression_3d() const { return {xp, yp, zp, w3d, h3d, l3d, theta}; }
};

/// Decoded 3D part of a detection: projected center, size and observation
/// angle.
struct Box3DProjected {
  ProjectedCenter center;
  Dims3 dims;
  double theta_obs = 0.0;
};

/// Background is class 0; a foreground assignment always has a matched GT.
struct Assignment {
  std::size_t anchor = 0;
  int class_index = 0;
  std::optional<std::size_t> gt;
  double iou = 0.0;
};

/// Ground truth as consumed by matching and prior estimation.
struct AnchorGroundTruth {
  Box2D box;
  int class_index = 1;
  Box3DProjected box3d;
};

/// Templates in scale-major order; the scale is the template height and the
/// ratio multiplies it to give the width.
inline std::vector<AnchorTemplate> generate_templates(double base, double rate, int count,
                                                      std::span<const double> ratios) {
  if (!(base > 0.0) || !(rate > 1.0) || count < 1 || ratios.empty()) {
    throw Error(ErrorCode::kInvalidConfig, "anchor base > 0, rate > 1, count >= 1, non-empty ratios required");
  }
  for (double r : ratios) {
    if (!(r > 0.0)) throw Error(ErrorCode::kInvalidConfig, "anchor ratios must be positive");
  }
  std::vector<AnchorTemplate> out;
  out.reserve(static_cast<std::size_t>(count) * ratios.size());
  for (int i = 0; i < count; ++i) {
    const double scale = base * std::pow(rate, i);
    for (double r : ratios) {
      AnchorTemplate t;
      t.h2d = scale;
      t.w2d = scale * r;
      out.push_back(t);
    }
  }
  return out;
}

/// Anchors ordered row-major over the grid with the template index fastest:
/// index = (row * feat_w + col) * n_templates + template. Centers sit at cell
/// centers, ((col + 0.5) * stride, (row + 0.5) * stride).
inline std::vector<SpannedAnchor> span_anchors(std::size_t n_templates, int feat_w, int feat_h,
                                               double stride) {
  if (feat_w <= 0 || feat_h <= 0 || !(stride > 0.0) || n_templates == 0) {
    throw Error(ErrorCode::kInvalidConfig, "feature grid and stride must be positive");
  }
  std::vector<SpannedAnchor> out;
  out.reserve(static_cast<std::size_t>(feat_w) * feat_h * n_templates);
  for (int row = 0; row < feat_h; ++row) {
    for (int col = 0; col < feat_w; ++col) {
      for (std::size_t t = 0; t < n_templates; ++t) {
        out.push_back({t, (col + 0.5) * stride, (row + 0.5) * stride});
      }
    }
  }
  return out;
}

inline Box2D anchor_box(const SpannedAnchor& a, const AnchorTemplate& t) {
  return Box2D::from_center(a.x, a.y, t.w2d, t.h2d);
}

inline Box2D decode_2d(const SpannedAnchor& a, const AnchorTemplate& t, const TransformVector& v) {
  const double cx = a.x + v.x2d * t.w2d;
  const double cy = a.y + v.y2d * t.h2d;
  return Box2D::from_center(cx, cy, std::exp(v.w2d) * t.w2d, std::exp(v.h2d) * t.h2d);
}

inline Box3DProjected decode_3d(const SpannedAnchor& a, const AnchorTemplate& t,
                                const TransformVector& v) {
  Box3DProjected out;
  out.center.x = a.x + v.xp * t.w2d;
  out.center.y = a.y + v.yp * t.h2d;
  out.center.z = v.zp + t.z_p;
  out.dims.w = std::exp(v.w3d) * t.w3d;
  out.dims.h = std::exp(v.h3d) * t.h3d;
  out.dims.l = std::exp(v.l3d) * t.l3d;
  out.theta_obs = wrap_angle(v.theta + t.theta3d);
  return out;
}

/// Regression targets for one anchor. Inverse of decode_2d / decode_3d; the
/// angle target is wrapped to [-pi, pi).
inline TransformVector encode_targets(const SpannedAnchor& a, const AnchorTemplate& t,
                                      const Box2D& gt2d, const Box3DProjected& gt3d) {
  if (!(t.w2d > 0.0) || !(t.h2d > 0.0)) {
    throw Error(ErrorCode::kInvalidConfig, "anchor 2D size must be positive");
  }
  if (!(gt2d.width() > 0.0) || !(gt2d.height() > 0.0) || !(gt3d.dims.w > 0.0) ||
      !(gt3d.dims.h > 0.0) || !(gt3d.dims.l > 0.0)) {
    throw Error(ErrorCode::kDegenerateGroundTruth, "ground truth sizes must be positive");
  }
  if (!(t.w3d > 0.0) || !(t.h3d > 0.0) || !(t.l3d > 0.0)) {
    throw Error(ErrorCode::kInvalidConfig, "anchor 3D priors must be positive");
  }
  TransformVector v;
  v.x2d = (gt2d.center_x() - a.x) / t.w2d;
  v.y2d = (gt2d.center_y() - a.y) / t.h2d;
  v.w2d = std::log(gt2d.width() / t.w2d);
  v.h2d = std::log(gt2d.height() / t.h2d);
  v.xp = (gt3d.center.x - a.x) / t.w2d;
  v.yp = (gt3d.center.y - a.y) / t.h2d;
  v.zp = gt3d.center.z - t.z_p;
  v.w3d = std::log(gt3d.dims.w / t.w3d);
  v.h3d = std::log(gt3d.dims.h / t.h3d);
  v.l3d = std::log(gt3d.dims.l / t.l3d);
  v.theta = wrap_angle(gt3d.theta_obs - t.theta3d);
  return v;
}

/// Anchor-wise argmax over ground truths; ties go to the lower GT index.
inline std::vector<Assignment> match_anchors(std::span<const SpannedAnchor> anchors,
                                             std::span<const AnchorTemplate> templates,
                                             std::span<const AnchorGroundTruth> gts,
                                             double thresh = 0.5) {
  std::vector<Assignment> out;
  out.reserve(anchors.size());
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    const Box2D box = anchor_box(anchors[i], templates[anchors[i].template_index]);
    Assignment asg;
    asg.anchor = i;
    std::optional<std::size_t> best;
    double best_iou = -1.0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double iou = iou_2d(box, gts[g].box);
      if (iou > best_iou) {
        best_iou = iou;
        best = g;
      }
    }
    if (best && best_iou >= thresh) {
      asg.gt = best;
      asg.class_index = gts[*best].class_index;
      asg.iou = best_iou;
    } else {
      asg.iou = std::max(0.0, best_iou);
    }
    out.push_back(asg);
  }
  return out;
}

/// Result of prior estimation. `matches[i]` counts (anchor, GT) pairs that
/// contributed to template i; `fallback[i]` marks templates that matched
/// nothing and received the dataset-wide mean.
struct PriorReport {
  std::vector<AnchorTemplate> templates;
  std::vector<std::size_t> matches;
  std::vector<bool> fallback;
};

namespace detail {

struct PriorAccumulator {
  double z = 0.0, w = 0.0, h = 0.0, l = 0.0, sin_t = 0.0, cos_t = 0.0;
  std::size_t n = 0;

  void add(const Box3DProjected& b) {
    z += b.center.z;
    w += b.dims.w;
    h += b.dims.h;
    l += b.dims.l;
    sin_t += std::sin(b.theta_obs);
    cos_t += std::cos(b.theta_obs);
    ++n;
  }

  void apply(AnchorTemplate& t) const {
    const double inv = 1.0 / static_cast<double>(n);
    t.z_p = z * inv;
    t.w3d = w * inv;
    t.h3d = h * inv;
    t.l3d = l * inv;
    t.theta3d = wrap_angle(std::atan2(sin_t, cos_t));
  }
};

}  // namespace detail

/// Per-template mean of depth, dimensions and (circular) angle over every
/// (spanned anchor, ground truth) pair with 2D IoU >= `thresh`.
///
/// Only grid cells whose anchor can overlap a ground truth are visited; an
/// anchor farther than half the summed widths/heights has IoU 0.
inline PriorReport compute_priors(std::span<const AnchorTemplate> templates, int feat_w, int feat_h,
                                  double stride, std::span<const AnchorGroundTruth> gts,
                                  double thresh = 0.5) {
  if (gts.empty()) throw Error(ErrorCode::kEmptyDataset, "no ground truths to compute priors from");
  if (feat_w <= 0 || feat_h <= 0 || !(stride > 0.0)) {
    throw Error(ErrorCode::kInvalidConfig, "feature grid and stride must be positive");
  }
  std::vector<detail::PriorAccumulator> acc(templates.size());
  detail::PriorAccumulator global;
  for (const auto& gt : gts) {
    global.add(gt.box3d);
    for (std::size_t ti = 0; ti < templates.size(); ++ti) {
      const AnchorTemplate& t = templates[ti];
      const double reach_x = 0.5 * (t.w2d + gt.box.width());
      const double reach_y = 0.5 * (t.h2d + gt.box.height());
      const int c0 = std::max(0, static_cast<int>(std::floor((gt.box.center_x() - reach_x) / stride - 0.5)));
      const int c1 = std::min(feat_w - 1, static_cast<int>(std::ceil((gt.box.center_x() + reach_x) / stride - 0.5)));
      const int r0 = std::max(0, static_cast<int>(std::floor((gt.box.center_y() - reach_y) / stride - 0.5)));
      const int r1 = std::min(feat_h - 1, static_cast<int>(std::ceil((gt.box.center_y() + reach_y) / stride - 0.5)));
      for (int row = r0; row <= r1; ++row) {
        for (int col = c0; col <= c1; ++col) {
          const SpannedAnchor a{ti, (col + 0.5) * stride, (row + 0.5) * stride};
          if (iou_2d(anchor_box(a, t), gt.box) >= thresh) acc[ti].add(gt.box3d);
        }
      }
    }
  }
  PriorReport report;
  report.templates.assign(templates.begin(), templates.end());
  report.matches.resize(templates.size());
  report.fallback.resize(templates.size());
  for (std::size_t ti = 0; ti < templates.size(); ++ti) {
    report.matches[ti] = acc[ti].n;
    report.fallback[ti] = acc[ti].n == 0;
    (acc[ti].n > 0 ? acc[ti] : global).apply(report.templates[ti]);
  }
  return report;
}

/// Same statistic over an explicit list of spanned anchors, visiting every
/// (anchor, ground truth) pair.
inline PriorReport compute_priors(std::span<const AnchorTemplate> templates, std::span<const SpannedAnchor> anchors,
                                  std::span<const AnchorGroundTruth> gts, double thresh = 0.5) {
  if (gts.empty()) throw Error(ErrorCode::kEmptyDataset, "no ground truths to compute priors from");
  std::vector<detail::PriorAccumulator> acc(templates.size());
  detail::PriorAccumulator global;
  for (const auto& gt : gts) {
    global.add(gt.box3d);
    for (const auto& a : anchors) {
      if (iou_2d(anchor_box(a, templates[a.template_index]), gt.box) >= thresh) acc[a.template_index].add(gt.box3d);
    }
  }
  PriorReport report;
  report.templates.assign(templates.begin(), templates.end());
  report.matches.resize(templates.size());
  report.fallback.resize(templates.size());
  for (std::size_t ti = 0; ti < templates.size(); ++ti) {
    report.matches[ti] = acc[ti].n;
    report.fallback[ti] = acc[ti].n == 0;
    (acc[ti].n > 0 ? acc[ti] : global).apply(report.templates[ti]);
  }
  return report;
}

// Prior table text format, version 1:
//   mono3d-priors 1
//   templates <n>
//   <id> <w2d> <h2d> <z_p> <w3d> <h3d> <l3d> <theta3d> <matches>
// Reals use the shortest representation that parses back to the same double.

namespace detail {

inline std::string format_exact(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_exact(std::string_view s, std::size_t line) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw Error(ErrorCode::kParseError, "line " + std::to_string(line) + ": bad number '" + std::string(s) + "'");
  }
  return v;
}

}  // namespace detail

inline std::string write_prior_table(const PriorReport& report) {
  std::string out = "mono3d-priors 1\ntemplates " + std::to_string(report.templates.size()) + "\n";
  for (std::size_t i = 0; i < report.templates.size(); ++i) {
    const auto& t = report.templates[i];
    out += std::to_string(i);
    for (double v : {t.w2d, t.h2d, t.z_p, t.w3d, t.h3d, t.l3d, t.theta3d}) {
      out += ' ';
      out += detail::format_exact(v);
    }
    out += ' ';
    out += std::to_string(i < report.matches.size() ? report.matches[i] : 0);
    out += '\n';
  }
  return out;
}

inline PriorReport parse_prior_table(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  auto next_line = [&]() -> bool {
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty()) return true;
    }
    return false;
  };
  if (!next_line() || line != "mono3d-priors 1") {
    throw Error(ErrorCode::kParseError, "line 1: expected header 'mono3d-priors 1'");
  }
  if (!next_line() || line.rfind("templates ", 0) != 0) {
    throw Error(ErrorCode::kParseError, "line " + std::to_string(lineno) + ": expected 'templates <n>'");
  }
  const auto n = static_cast<std::size_t>(detail::parse_exact(std::string_view(line).substr(10), lineno));
  PriorReport report;
  for (std::size_t i = 0; i < n; ++i) {
    if (!next_line()) throw Error(ErrorCode::kParseError, "truncated prior table");
    std::istringstream fields(line);
    std::vector<std::string> tok;
    for (std::string s; fields >> s;) tok.push_back(s);
    if (tok.size() != 9) {
      throw Error(ErrorCode::kParseError, "line " + std::to_string(lineno) + ": expected 9 fields, got " + std::to_string(tok.size()));
    }
    if (static_cast<std::size_t>(detail::parse_exact(tok[0], lineno)) != i) {
      throw Error(ErrorCode::kParseError, "line " + std::to_string(lineno) + ": template ids must be consecutive");
    }
    AnchorTemplate t;
    double* fields_out[] = {&t.w2d, &t.h2d, &t.z_p, &t.w3d, &t.h3d, &t.l3d, &t.theta3d};
    for (std::size_t k = 0; k < 7; ++k) *fields_out[k] = detail::parse_exact(tok[k + 1], lineno);
    report.templates.push_back(t);
    const auto m = static_cast<std::size_t>(detail::parse_exact(tok[8], lineno));
    report.matches.push_back(m);
    report.fallback.push_back(m == 0);
  }
  return report;
}

}  // namespace mono3d
