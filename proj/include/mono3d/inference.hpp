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
/// \brief From raw per-anchor output maps to final detections: decoding,
/// score filtering, per-class greedy NMS and the 3D->2D orientation search.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "mono3d/anchors.hpp"
#include "mono3d/common.hpp"
#include "mono3d/geometry.hpp"
#include "mono3d/nnops.hpp"
#include "mono3d/tensor.hpp"

namespace mono3d {

/// Head order: classification, then the 2D transform, projected center,
/// 3D dimensions and angle.
inline constexpr std::array<const char*, kNumHeads> kHeadNames = {
    "cls", "x2d", "y2d", "w2d", "h2d", "xp", "yp", "zp", "w3d", "h3d", "l3d", "theta"};

/// Raw network outputs. `cls` is [n_a * n_c, h, w] with channel a * n_c + k
/// holding class k of anchor a; each `reg[j]` is [n_a, h, w] and follows
/// TransformVector component order.
struct OutputMaps {
  std::size_t n_a = 0;
  std::size_t n_c = 0;
  std::size_t h = 0;
  std::size_t w = 0;
  Tensor cls;
  std::array<Tensor, TransformVector::kSize> reg;

  std::size_t n_b() const { return n_a * h * w; }

  static OutputMaps zeros(std::size_t n_a, std::size_t n_c, std::size_t h, std::size_t w) {
    OutputMaps m{n_a, n_c, h, w, Tensor({n_a * n_c, h, w}), {}};
    for (auto& r : m.reg) r = Tensor({n_a, h, w});
    return m;
  }

  void validate() const {
    const std::vector<std::size_t> cls_shape = {n_a * n_c, h, w};
    const std::vector<std::size_t> reg_shape = {n_a, h, w};
    if (n_c < 2 || cls.shape() != cls_shape) {
      throw Error(ErrorCode::kShapeMismatch, "classification map " + cls.shape_string() + " inconsistent with n_a/n_c/h/w");
    }
    for (const auto& r : reg) {
      if (r.shape() != reg_shape) throw Error(ErrorCode::kShapeMismatch, "regression map " + r.shape_string() + " inconsistent");
    }
  }

  /// Anchor index (row * w + col) * n_a + a, matching span_anchors.
  TransformVector transform(std::size_t anchor) const {
    const std::size_t a = anchor % n_a;
    const std::size_t cell = anchor / n_a;
    std::array<double, TransformVector::kSize> v{};
    for (std::size_t j = 0; j < v.size(); ++j) v[j] = reg[j].at(a, cell / w, cell % w);
    return TransformVector::from_array(v);
  }

  std::vector<double> logits(std::size_t anchor) const {
    const std::size_t a = anchor % n_a;
    const std::size_t cell = anchor / n_a;
    std::vector<double> out(n_c);
    for (std::size_t k = 0; k < n_c; ++k) out[k] = cls.at(a * n_c + k, cell / w, cell % w);
    return out;
  }
};

struct Detection {
  std::size_t anchor = 0;
  int class_index = 0;
  double score = 0.0;
  Box2D box;
  Box3DProjected box3d;
  Vec3 center_cam = Vec3::Zero();
};

/// Softmax per anchor; an anchor yields a detection when its argmax class is
/// not background, that class's probability reaches `score_thresh` and the
/// decoded depth is positive.
inline std::vector<Detection> decode_detections(const OutputMaps& maps, std::span<const SpannedAnchor> anchors,
                                                std::span<const AnchorTemplate> templates,
                                                const CameraCalibration& calib, double score_thresh = 0.75) {
  maps.validate();
  if (anchors.size() != maps.n_b()) {
    throw Error(ErrorCode::kShapeMismatch, std::to_string(anchors.size()) + " anchors for " + std::to_string(maps.n_b()) + " outputs");
  }
  std::vector<Detection> out;
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    const auto probs = softmax(maps.logits(i));
    const auto best = static_cast<std::size_t>(std::max_element(probs.begin(), probs.end()) - probs.begin());
    if (best == 0 || probs[best] < score_thresh) continue;
    const SpannedAnchor& a = anchors[i];
    if (a.template_index >= templates.size()) {
      throw Error(ErrorCode::kShapeMismatch, "anchor references template " + std::to_string(a.template_index));
    }
    const AnchorTemplate& t = templates[a.template_index];
    const TransformVector v = maps.transform(i);
    Detection d;
    d.anchor = i;
    d.class_index = static_cast<int>(best);
    d.score = probs[best];
    d.box = decode_2d(a, t, v);
    d.box3d = decode_3d(a, t, v);
    if (!(d.box3d.center.z > 0.0)) continue;
    d.center_cam = back_project(calib, d.box3d.center);
    out.push_back(d);
  }
  return out;
}

/// Descending score, ties by ascending anchor index.
inline void sort_by_score(std::vector<Detection>& dets) {
  std::stable_sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.anchor < b.anchor;
  });
}

/// Per-class greedy NMS: a box survives if its 2D IoU with every kept box of
/// the same class is <= iou_thresh.
inline std::vector<Detection> nms_2d(std::vector<Detection> dets, double iou_thresh = 0.4) {
  sort_by_score(dets);
  std::vector<Detection> kept;
  for (const auto& d : dets) {
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const Detection& k) {
      return k.class_index == d.class_index && iou_2d(k.box, d.box) > iou_thresh;
    });
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

struct PostOptConfig {
  double sigma = 0.3 * kPi;
  double beta = 0.01;
  double gamma = 0.5;
  int max_iterations = 1000;

  void validate() const {
    if (!(sigma > beta) || !(beta > 0.0) || !(gamma > 0.0) || !(gamma < 1.0) || max_iterations < 1) {
      throw Error(ErrorCode::kInvalidConfig, "post-optimization needs sigma > beta > 0 and 0 < gamma < 1");
    }
  }
};

struct PostOptResult {
  double theta = 0.0;
  /// L1 of the returned angle.
  double loss = 0.0;
  /// L1 of the input angle.
  double initial_loss = 0.0;
  int iterations = 0;
  int decays = 0;
  int moves = 0;
};

/// Sum of absolute coordinate differences between two corner-form boxes.
inline double box_l1(const Box2D& a, const Box2D& b) {
  return std::abs(a.x_min - b.x_min) + std::abs(a.y_min - b.y_min) + std::abs(a.x_max - b.x_max) +
         std::abs(a.y_max - b.y_max);
}

/// Hill-climbs the observation angle so the projected 3D box agrees with the
/// detection's 2D box. Probes theta +- sigma each round; moves to the better
/// probe only on a strict improvement over the best loss so far, otherwise
/// decays sigma by gamma; stops once sigma < beta. The best loss starts at
/// the theta - sigma probe.
inline PostOptResult optimize_theta(const Detection& det, const CameraCalibration& calib, const PostOptConfig& cfg = {}) {
  cfg.validate();
  const ProjectedCenter& pc = det.box3d.center;
  if (!(pc.z > 0.0)) throw Error(ErrorCode::kNonPositiveDepth, "detection depth must be positive");
  const Vec3 center = back_project(calib, pc);
  auto loss_at = [&](double theta) {
    const double yaw = observation_to_yaw(theta, center.x(), center.z());
    return box_l1(det.box, box_project(calib, pc, det.box3d.dims, yaw));
  };

  PostOptResult r;
  double theta = det.box3d.theta_obs;
  double sigma = cfg.sigma;
  r.initial_loss = loss_at(theta);
  double eta = loss_at(theta - sigma);
  while (sigma >= cfg.beta) {
    if (r.iterations >= cfg.max_iterations) {
      throw Error(ErrorCode::kNoConvergence, "orientation search exceeded " + std::to_string(cfg.max_iterations) +
                                                 " iterations (sigma=" + std::to_string(sigma) + ", eta=" + std::to_string(eta) + ")");
    }
    ++r.iterations;
    const double loss_minus = loss_at(theta - sigma);
    const double loss_plus = loss_at(theta + sigma);
    if (std::min(loss_minus, loss_plus) >= eta) {
      sigma *= cfg.gamma;
      ++r.decays;
    } else if (loss_minus < loss_plus) {
      theta -= sigma;
      eta = loss_minus;
      ++r.moves;
    } else {
      theta += sigma;
      eta = loss_plus;
      ++r.moves;
    }
  }
  r.theta = wrap_angle(theta);
  r.loss = r.moves > 0 ? eta : r.initial_loss;
  return r;
}

/// Convolution weights of one path. Global path tensors are conv2d weights;
/// local path tensors carry a leading bin axis.
struct PathParams {
  Tensor prop_weight;
  Tensor prop_bias;
  std::array<Tensor, kNumHeads> head_weight;
  std::array<Tensor, kNumHeads> head_bias;
};

struct HeadParams {
  PathParams global;
  PathParams local;
  FusionWeights fusion;
  std::size_t num_anchors = 0;
  std::size_t num_classes = 0;

  std::size_t bins() const { return local.prop_weight.dim(0); }

  /// Reads the parameter container: "{global,local}.prop.{weight,bias}",
  /// "{global,local}.<head>.{weight,bias}" and "alpha" [12].
  static HeadParams from_container(std::span<const NamedTensor> tensors) {
    HeadParams hp;
    for (const char* path : {"global", "local"}) {
      PathParams& pp = std::string(path) == "global" ? hp.global : hp.local;
      const std::string p(path);
      pp.prop_weight = container::find(tensors, p + ".prop.weight");
      pp.prop_bias = container::find(tensors, p + ".prop.bias");
      for (std::size_t i = 0; i < kNumHeads; ++i) {
        pp.head_weight[i] = container::find(tensors, p + "." + kHeadNames[i] + ".weight");
        pp.head_bias[i] = container::find(tensors, p + "." + kHeadNames[i] + ".bias");
      }
    }
    const Tensor& alpha = container::find(tensors, "alpha");
    if (alpha.size() != kNumHeads) throw Error(ErrorCode::kShapeMismatch, "alpha must hold 12 logits");
    for (std::size_t i = 0; i < kNumHeads; ++i) hp.fusion.alpha[i] = alpha[i];
    if (hp.global.head_weight[1].rank() != 4) throw Error(ErrorCode::kShapeMismatch, "head weights must be rank 4");
    hp.num_anchors = hp.global.head_weight[1].dim(0);
    if (hp.num_anchors == 0 || hp.global.head_weight[0].dim(0) % hp.num_anchors != 0) {
      throw Error(ErrorCode::kShapeMismatch, "classification head channels must be a multiple of the anchor count");
    }
    hp.num_classes = hp.global.head_weight[0].dim(0) / hp.num_anchors;
    return hp;
  }

  std::vector<NamedTensor> to_container() const {
    std::vector<NamedTensor> out;
    for (const char* path : {"global", "local"}) {
      const PathParams& pp = std::string(path) == "global" ? global : local;
      const std::string p(path);
      out.push_back({p + ".prop.weight", pp.prop_weight});
      out.push_back({p + ".prop.bias", pp.prop_bias});
      for (std::size_t i = 0; i < kNumHeads; ++i) {
        out.push_back({p + "." + kHeadNames[i] + ".weight", pp.head_weight[i]});
        out.push_back({p + "." + kHeadNames[i] + ".bias", pp.head_bias[i]});
      }
    }
    out.push_back({"alpha", Tensor({kNumHeads}, std::vector<double>(fusion.alpha.begin(), fusion.alpha.end()))});
    return out;
  }
};

struct PipelineConfig {
  double stride = 16.0;
  double score_thresh = 0.75;
  double nms_iou = 0.4;
  bool post_optimize = true;
  PostOptConfig postopt;
};

/// Global (shared-kernel) and local (depth-aware) output maps for a feature
/// tensor, fused head by head.
inline OutputMaps compute_output_maps(const Tensor& features, const HeadParams& hp) {
  ConvParams prop;
  prop.pad = static_cast<int>(hp.global.prop_weight.dim(2) / 2);
  const Tensor f_global = relu(conv2d(features, hp.global.prop_weight, hp.global.prop_bias, prop));
  const Tensor f_local =
      relu(depth_aware_conv_unfolded(features, DepthAwareKernelSet{hp.local.prop_weight, hp.local.prop_bias}, prop));
  std::array<Tensor, kNumHeads> fused;
  for (std::size_t i = 0; i < kNumHeads; ++i) {
    const Tensor og = conv2d(f_global, hp.global.head_weight[i], hp.global.head_bias[i]);
    const Tensor ol = depth_aware_conv_unfolded(f_local, DepthAwareKernelSet{hp.local.head_weight[i], hp.local.head_bias[i]});
    fused[i] = fuse_outputs(og, ol, hp.fusion, i);
  }
  OutputMaps maps;
  maps.n_a = hp.num_anchors;
  maps.n_c = hp.num_classes;
  maps.h = fused[0].dim(1);
  maps.w = fused[0].dim(2);
  maps.cls = std::move(fused[0]);
  for (std::size_t j = 0; j < TransformVector::kSize; ++j) maps.reg[j] = std::move(fused[j + 1]);
  maps.validate();
  return maps;
}

/// Full single-image inference: heads, fusion, decoding, NMS and (optionally)
/// orientation post-optimization. Output is sorted by score.
inline std::vector<Detection> run_pipeline(const Tensor& features, const HeadParams& hp,
                                           std::span<const AnchorTemplate> templates, const CameraCalibration& calib,
                                           const PipelineConfig& cfg = {}) {
  if (templates.size() != hp.num_anchors) {
    throw Error(ErrorCode::kShapeMismatch, std::to_string(templates.size()) + " templates for " +
                                               std::to_string(hp.num_anchors) + " anchors per cell");
  }
  const OutputMaps maps = compute_output_maps(features, hp);
  const auto anchors = span_anchors(templates.size(), static_cast<int>(maps.w), static_cast<int>(maps.h), cfg.stride);
  auto dets = nms_2d(decode_detections(maps, anchors, templates, calib, cfg.score_thresh), cfg.nms_iou);
  if (cfg.post_optimize) {
    for (auto& d : dets) d.box3d.theta_obs = optimize_theta(d, calib, cfg.postopt).theta;
  }
  sort_by_score(dets);
  return dets;
}

}  // namespace mono3d
