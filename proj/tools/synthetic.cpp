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

#include "synthetic.hpp"

#include <cmath>

namespace mono3d::synth {

CameraCalibration kitti_calibration() {
  Mat34 p;
  p << 7.215377e+02, 0.0, 6.095593e+02, 4.485728e+01,
       0.0, 7.215377e+02, 1.728540e+02, 2.163791e-01,
       0.0, 0.0, 1.0, 2.745884e-03;
  return CameraCalibration(p);
}

namespace {

constexpr std::size_t kGridW = 24;
constexpr std::size_t kGridH = 8;
constexpr std::size_t kClasses = 4;

struct SceneObject {
  int class_index;
  Vec3 center;
  Dims3 dims;
  double yaw;
};

// Output map m lives in feature channels 2m (positive part) and 2m + 1
// (negative part), so a ReLU in between loses nothing.
struct MapLayout {
  std::size_t n_a;
  std::size_t head_base(std::size_t head) const { return head == 0 ? 0 : n_a * kClasses + (head - 1) * n_a; }
  std::size_t head_channels(std::size_t head) const { return head == 0 ? n_a * kClasses : n_a; }
  std::size_t total() const { return n_a * kClasses + TransformVector::kSize * n_a; }
};

Tensor with_bins(const Tensor& t, std::size_t bins) {
  std::vector<std::size_t> shape = t.shape();
  shape.insert(shape.begin(), bins);
  std::vector<double> data;
  data.reserve(t.size() * bins);
  for (std::size_t b = 0; b < bins; ++b) data.insert(data.end(), t.data().begin(), t.data().end());
  return Tensor(std::move(shape), std::move(data));
}

}  // namespace

HandcraftedScene make_handcrafted_scene(std::size_t bins, const FusionWeights& fusion) {
  Mat34 p;
  p << 300.0, 0.0, 192.0, 4.5,
       0.0, 300.0, 64.0, 0.2,
       0.0, 0.0, 1.0, 0.003;
  HandcraftedScene scene{CameraCalibration(p), {}, {}, {}, 16.0, 8.0, {}};

  scene.templates = {
      {30.0, 30.0, 18.0, 1.6, 1.5, 3.8, 0.0},
      {60.0, 60.0, 10.0, 0.7, 1.7, 1.0, 0.5},
      {120.0, 120.0, 6.0, 1.6, 1.5, 3.8, -0.5},
  };
  const std::size_t n_a = scene.templates.size();
  const std::vector<SceneObject> objects = {
      {1, Vec3(-3.5, 1.0, 14.0), Dims3{1.7, 1.5, 4.0}, 0.4},
      {2, Vec3(1.0, 0.9, 9.0), Dims3{0.6, 1.75, 0.8}, -1.2},
      {3, Vec3(4.5, 0.9, 18.0), Dims3{0.6, 1.7, 1.8}, 2.0},
  };

  OutputMaps maps = OutputMaps::zeros(n_a, kClasses, kGridH, kGridW);
  for (std::size_t a = 0; a < n_a; ++a) {
    for (std::size_t y = 0; y < kGridH; ++y) {
      for (std::size_t x = 0; x < kGridW; ++x) maps.cls.at(a * kClasses, y, x) = scene.logit;
    }
  }

  std::vector<double> logits(kClasses, 0.0);
  for (const auto& obj : objects) {
    Detection d;
    d.class_index = obj.class_index;
    d.center_cam = obj.center;
    d.box3d.center = project_center(scene.calib, obj.center);
    d.box3d.dims = obj.dims;
    d.box3d.theta_obs = yaw_to_observation(obj.yaw, obj.center.x(), obj.center.z());
    d.box = box_project(scene.calib, d.box3d.center, obj.dims, obj.yaw);

    const auto col = std::min(kGridW - 1, static_cast<std::size_t>(std::max(0.0, d.box.center_x() / scene.stride)));
    const auto row = std::min(kGridH - 1, static_cast<std::size_t>(std::max(0.0, d.box.center_y() / scene.stride)));
    std::size_t tmpl = 0;
    for (std::size_t t = 1; t < n_a; ++t) {
      if (std::abs(std::log(d.box.height() / scene.templates[t].h2d)) <
          std::abs(std::log(d.box.height() / scene.templates[tmpl].h2d))) {
        tmpl = t;
      }
    }
    const SpannedAnchor anchor{tmpl, (static_cast<double>(col) + 0.5) * scene.stride,
                               (static_cast<double>(row) + 0.5) * scene.stride};
    d.anchor = (row * kGridW + col) * n_a + tmpl;

    const auto t = encode_targets(anchor, scene.templates[tmpl], d.box, d.box3d).to_array();
    for (std::size_t j = 0; j < t.size(); ++j) maps.reg[j].at(tmpl, row, col) = t[j];
    maps.cls.at(tmpl * kClasses, row, col) = 0.0;
    maps.cls.at(tmpl * kClasses + static_cast<std::size_t>(obj.class_index), row, col) = scene.logit;

    logits.assign(kClasses, 0.0);
    logits[static_cast<std::size_t>(obj.class_index)] = scene.logit;
    d.score = softmax(logits)[static_cast<std::size_t>(obj.class_index)];
    scene.expected.push_back(d);
  }
  sort_by_score(scene.expected);

  const MapLayout layout{n_a};
  const std::size_t m = layout.total();
  const std::size_t c = 2 * m;
  scene.features = Tensor({c, kGridH, kGridW});
  for (std::size_t head = 0; head < kNumHeads; ++head) {
    const Tensor& src = head == 0 ? maps.cls : maps.reg[head - 1];
    for (std::size_t k = 0; k < layout.head_channels(head); ++k) {
      const std::size_t idx = layout.head_base(head) + k;
      for (std::size_t y = 0; y < kGridH; ++y) {
        for (std::size_t x = 0; x < kGridW; ++x) {
          const double v = src.at(k, y, x);
          scene.features.at(2 * idx, y, x) = std::max(v, 0.0);
          scene.features.at(2 * idx + 1, y, x) = std::max(-v, 0.0);
        }
      }
    }
  }

  PathParams global;
  global.prop_weight = Tensor({c, c, 3, 3});
  for (std::size_t ch = 0; ch < c; ++ch) global.prop_weight[((ch * c + ch) * 3 + 1) * 3 + 1] = 1.0;
  global.prop_bias = Tensor({c});
  for (std::size_t head = 0; head < kNumHeads; ++head) {
    const std::size_t out = layout.head_channels(head);
    Tensor w({out, c, 1, 1});
    for (std::size_t k = 0; k < out; ++k) {
      const std::size_t idx = layout.head_base(head) + k;
      w[k * c + 2 * idx] = 1.0;
      w[k * c + 2 * idx + 1] = -1.0;
    }
    global.head_weight[head] = std::move(w);
    global.head_bias[head] = Tensor({out});
  }

  PathParams local;
  local.prop_weight = with_bins(global.prop_weight, bins);
  local.prop_bias = with_bins(global.prop_bias, bins);
  for (std::size_t head = 0; head < kNumHeads; ++head) {
    local.head_weight[head] = with_bins(global.head_weight[head], bins);
    local.head_bias[head] = with_bins(global.head_bias[head], bins);
  }

  scene.params.global = std::move(global);
  scene.params.local = std::move(local);
  scene.params.fusion = fusion;
  scene.params.num_anchors = n_a;
  scene.params.num_classes = kClasses;
  return scene;
}

RandomObject random_object(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> ux(-10.0, 10.0), uy(0.8, 1.8), uz(8.0, 45.0);
  std::uniform_real_distribution<double> uyaw(-kPi, kPi), jitter(0.9, 1.1);
  std::uniform_int_distribution<int> kind(0, 2);
  // Car, pedestrian and cyclist sized boxes (w, h, l).
  const Dims3 base[3] = {{1.6, 1.5, 3.9}, {0.65, 1.75, 0.85}, {0.6, 1.7, 1.75}};
  RandomObject o;
  o.center = Vec3(ux(rng), uy(rng), uz(rng));
  const Dims3& d = base[kind(rng)];
  o.dims = {d.w * jitter(rng), d.h * jitter(rng), d.l * jitter(rng)};
  o.yaw = uyaw(rng);
  return o;
}

std::vector<OrientationCase> make_orientation_cases(const CameraCalibration& calib, std::size_t n,
                                                    double max_offset, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> offset(-max_offset, max_offset);
  std::vector<OrientationCase> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const RandomObject obj = random_object(rng);
    OrientationCase oc;
    oc.theta_true = yaw_to_observation(obj.yaw, obj.center.x(), obj.center.z());
    oc.det.anchor = i;
    oc.det.class_index = 1;
    oc.det.score = 1.0;
    oc.det.center_cam = obj.center;
    oc.det.box3d.center = project_center(calib, obj.center);
    oc.det.box3d.dims = obj.dims;
    oc.det.box = box_project(calib, oc.det.box3d.center, obj.dims, obj.yaw);
    oc.det.box3d.theta_obs = wrap_angle(oc.theta_true + offset(rng));
    out.push_back(oc);
  }
  return out;
}

}  // namespace mono3d::synth
