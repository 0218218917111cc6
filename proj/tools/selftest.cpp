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

#include "selftest.hpp"

#include <cmath>
#include <cstdio>
#include <functional>
#include <random>

#include "mono3d/mono3d.hpp"
#include "synthetic.hpp"

namespace mono3d::selftest {
namespace {

struct Outcome {
  bool pass;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[96];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

Tensor random_tensor(std::vector<std::size_t> shape, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = u(rng);
  return t;
}

Outcome projection_round_trip() {
  std::mt19937_64 rng(11);
  const auto calib = synth::kitti_calibration();
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const Vec3 p = synth::random_object(rng).center;
    const Vec3 q = back_project(calib, project_center(calib, p));
    worst = std::max(worst, (q - p).norm() / p.norm());
  }
  return {worst <= 1e-9, fmt("max relative error %.3g", worst)};
}

Outcome box_project_example() {
  const auto calib = CameraCalibration::pinhole(1.0, 0.0, 0.0);
  const Box2D b = box_project(calib, {0.0, 0.0, 10.0}, Dims3{2.0, 2.0, 4.0}, 0.0);
  const double err = std::abs(b.x_min + 2.0 / 9.0) + std::abs(b.y_min + 1.0 / 9.0) + std::abs(b.x_max - 2.0 / 9.0) +
                     std::abs(b.y_max - 1.0 / 9.0);
  return {err <= 1e-15, fmt("sum of corner errors %.3g", err)};
}

Outcome depth_aware_equivalence() {
  std::mt19937_64 rng(12);
  const Tensor input = random_tensor({3, 17, 11}, rng);
  const Tensor w = random_tensor({4, 3, 3, 3}, rng);
  const Tensor b = random_tensor({4}, rng);
  ConvParams p;
  p.pad = 1;
  const Tensor ref = conv2d(input, w, b, p);
  for (std::size_t bins : {1u, 4u, 17u}) {
    DepthAwareKernelSet ks;
    std::vector<double> wd, bd;
    for (std::size_t k = 0; k < bins; ++k) {
      wd.insert(wd.end(), w.data().begin(), w.data().end());
      bd.insert(bd.end(), b.data().begin(), b.data().end());
    }
    ks.weights = Tensor({bins, 4, 3, 3, 3}, wd);
    ks.bias = Tensor({bins, 4}, bd);
    if (!depth_aware_conv(input, ks, p).bit_equal(ref) || !depth_aware_conv_unfolded(input, ks, p).bit_equal(ref)) {
      return {false, "shared-kernel output differs from conv2d at b=" + std::to_string(bins)};
    }
  }
  DepthAwareKernelSet distinct{random_tensor({5, 4, 3, 3, 3}, rng), random_tensor({5, 4}, rng)};
  if (!depth_aware_conv(input, distinct, p).bit_equal(depth_aware_conv_unfolded(input, distinct, p))) {
    return {false, "reference and unfolded paths differ"};
  }
  return {true, "b in {1, 4, 17} bit-exact; paths agree"};
}

Outcome flop_parity() {
  std::mt19937_64 rng(13);
  const Tensor input = random_tensor({8, 32, 20}, rng);
  const Tensor w = random_tensor({6, 8, 3, 3}, rng);
  ConvParams p;
  p.pad = 1;
  const auto base = flop_count(describe_conv2d(input, w, p));
  for (std::size_t bins : {1u, 4u, 8u, 16u, 32u}) {
    DepthAwareKernelSet ks{Tensor({bins, 6, 8, 3, 3}), Tensor({bins, 6})};
    if (flop_count(describe_depth_aware(input, ks, p)) != base) return {false, "count differs at b=" + std::to_string(bins)};
  }
  return {true, std::to_string(base) + " multiply-adds for every b"};
}

Outcome loss_identities() {
  const std::vector<double> uniform(4, 0.0);
  if (cls_loss(uniform, 2).loss != std::log(4.0)) return {false, "cls_loss(uniform, 4) != ln 4"};
  const std::array<double, 7> zero{};
  std::array<double, 7> below{}, above{};
  below[0] = std::nextafter(1.0, 0.0);
  above[0] = 1.0;
  const auto lb = smooth_l1(below, zero), la = smooth_l1(above, zero);
  if (std::abs(lb.loss - la.loss) > 1e-12 || std::abs(lb.grad[0] - la.grad[0]) > 1e-12) {
    return {false, "smooth-L1 discontinuous at |d| = 1"};
  }
  std::mt19937_64 rng(14);
  std::uniform_real_distribution<double> u(-20.0, 20.0), s(10.0, 60.0);
  double worst = 0.0;
  for (int i = 0; i < 50; ++i) {
    const Box2D gt = Box2D::from_center(u(rng), u(rng), s(rng), s(rng));
    const Box2D pred = Box2D::from_center(gt.center_x() + 0.3 * u(rng), gt.center_y() + 0.3 * u(rng), s(rng), s(rng));
    const auto lg = box2d_loss(pred, gt);
    const auto f = [&](std::span<const double> x) { return box2d_loss({x[0], x[1], x[2], x[3]}, gt).loss; };
    const auto pt = pred.as_array();
    worst = std::max(worst, finite_diff_check(f, pt, lg.grad));
  }
  return {worst < 1e-4, fmt("2D IoU loss gradient max relative error %.3g", worst)};
}

Outcome nms_invariants() {
  std::mt19937_64 rng(15);
  std::uniform_real_distribution<double> u(0.0, 100.0), s(5.0, 40.0), score(0.0, 1.0);
  for (int scene = 0; scene < 50; ++scene) {
    std::vector<Detection> dets(15);
    for (std::size_t i = 0; i < dets.size(); ++i) {
      dets[i].anchor = i;
      dets[i].class_index = 1 + static_cast<int>(i % 2);
      dets[i].score = score(rng);
      dets[i].box = Box2D::from_center(u(rng), u(rng), s(rng), s(rng));
    }
    const auto kept = nms_2d(dets, 0.4);
    for (std::size_t i = 0; i < kept.size(); ++i) {
      if (i > 0 && kept[i].score > kept[i - 1].score) return {false, "kept scores not sorted"};
      for (std::size_t j = 0; j < i; ++j) {
        if (kept[i].class_index == kept[j].class_index && iou_2d(kept[i].box, kept[j].box) > 0.4) {
          return {false, "two kept boxes overlap above threshold"};
        }
      }
    }
  }
  return {true, "50 scenes"};
}

Outcome postopt_decay_count() {
  const auto calib = synth::kitti_calibration();
  Detection d;
  d.box3d.center = project_center(calib, Vec3(2.0, 1.0, 20.0));
  d.box3d.dims = {1.6, 1.5, 3.9};
  d.box3d.theta_obs = 0.5;
  const PostOptConfig cfg;
  const Vec3 c = back_project(calib, d.box3d.center);
  d.box = box_project(calib, d.box3d.center, d.box3d.dims, observation_to_yaw(0.5 - cfg.sigma, c.x(), c.z()));
  const auto r = optimize_theta(d, calib, cfg);
  const bool ok = r.decays == 7 && r.moves == 0 && r.theta == wrap_angle(0.5);
  return {ok, std::to_string(r.decays) + " decays, " + std::to_string(r.moves) + " moves"};
}

Outcome kitti_round_trip() {
  std::mt19937_64 rng(16);
  std::uniform_real_distribution<double> u(-50.0, 50.0), a(-kPi, kPi), pos(0.5, 80.0);
  std::vector<KittiObject> objs(100);
  for (auto& o : objs) {
    o.type = "Car";
    o.truncation = pos(rng) / 80.0;
    o.occlusion = 1;
    o.alpha = a(rng);
    o.bbox = {pos(rng), pos(rng), pos(rng) + 100.0, pos(rng) + 100.0};
    o.h = pos(rng);
    o.w = pos(rng);
    o.l = pos(rng);
    o.location = Vec3(u(rng), u(rng), pos(rng));
    o.rotation_y = a(rng);
    o.score = pos(rng) / 80.0;
  }
  const auto back = parse_label_file(write_label_file(objs));
  double worst = 0.0;
  for (std::size_t i = 0; i < objs.size(); ++i) {
    worst = std::max({worst, std::abs(back[i].alpha - objs[i].alpha), std::abs(back[i].bbox.x_max - objs[i].bbox.x_max),
                      (back[i].location - objs[i].location).cwiseAbs().maxCoeff(), std::abs(*back[i].score - *objs[i].score)});
  }
  return {back.size() == objs.size() && worst <= 5e-7 + 1e-12, fmt("max field error %.3g", worst)};
}

Outcome eval_perfect() {
  std::mt19937_64 rng(17);
  std::vector<EvalFrame> frames(3);
  for (auto& f : frames) {
    for (int i = 0; i < 4; ++i) {
      const auto obj = synth::random_object(rng);
      KittiObject o;
      o.type = i % 2 ? "Car" : "Pedestrian";
      o.bbox = Box2D::from_center(100.0 + 200.0 * i, 150.0, 60.0, 50.0);
      o.h = obj.dims.h;
      o.w = obj.dims.w;
      o.l = obj.dims.l;
      o.location = Vec3(-12.0 + 8.0 * i, 1.6, obj.center.z());
      o.rotation_y = obj.yaw;
      f.gt.push_back(o);
      o.score = 0.9;
      f.dets.push_back(o);
    }
  }
  for (const auto& row : evaluate(frames).rows) {
    if (row.num_gt > 0 && row.ap != 1.0) return {false, std::string("AP below 1 for ") + to_string(row.task) + " " + row.cls};
  }
  return {true, "AP = 1 wherever ground truth exists"};
}

Outcome handcrafted_pipeline() {
  const auto scene = synth::make_handcrafted_scene(4);
  PipelineConfig cfg;
  cfg.stride = scene.stride;
  cfg.post_optimize = false;
  const auto dets = run_pipeline(scene.features, scene.params, scene.templates, scene.calib, cfg);
  if (dets.size() != scene.expected.size()) return {false, std::to_string(dets.size()) + " detections"};
  double worst = 0.0;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    const auto& a = dets[i];
    const auto& e = scene.expected[i];
    if (a.class_index != e.class_index || a.anchor != e.anchor) return {false, "wrong class or anchor"};
    worst = std::max({worst, box_l1(a.box, e.box), std::abs(a.box3d.center.z - e.box3d.center.z),
                      std::abs(a.box3d.dims.l - e.box3d.dims.l), angle_distance(a.box3d.theta_obs, e.box3d.theta_obs),
                      (a.center_cam - e.center_cam).norm()});
  }
  return {worst <= 1e-6, fmt("3 detections, max geometry error %.3g", worst)};
}

}  // namespace

std::vector<CheckResult> run_all() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> checks = {
      {"projection round-trip", projection_round_trip},
      {"box_project corner example", box_project_example},
      {"depth-aware convolution equivalences", depth_aware_equivalence},
      {"FLOP parity", flop_parity},
      {"loss identities and gradients", loss_identities},
      {"NMS invariants", nms_invariants},
      {"post-optimization decay count", postopt_decay_count},
      {"KITTI label round-trip", kitti_round_trip},
      {"evaluation of perfect detections", eval_perfect},
      {"handcrafted end-to-end pipeline", handcrafted_pipeline},
  };
  std::vector<CheckResult> out;
  for (const auto& [name, fn] : checks) {
    try {
      const Outcome o = fn();
      out.push_back({name, o.pass, o.detail});
    } catch (const std::exception& e) {
      out.push_back({name, false, std::string("threw: ") + e.what()});
    }
  }
  return out;
}

}  // namespace mono3d::selftest
