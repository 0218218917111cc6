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

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "mono3d/inference.hpp"
#include "synthetic.hpp"
#include "test_support.hpp"

namespace mono3d {
namespace {

std::vector<AnchorTemplate> two_templates() {
  return {AnchorTemplate{32.0, 32.0, 20.0, 1.6, 1.5, 3.9, 0.3},
          AnchorTemplate{48.0, 96.0, 12.0, 0.6, 1.75, 0.8, -1.0}};
}

TEST(Decode, ZeroMapsReproducePriorsAtConfidentAnchor) {
  const auto templates = two_templates();
  auto maps = OutputMaps::zeros(2, 3, 2, 3);
  const auto anchors = span_anchors(2, 3, 2, 16.0);
  // Anchor 7 = cell (row 1, col 0), template 1; class 2 wins.
  const std::size_t anchor = 7;
  maps.cls.at(1 * 3 + 2, 1, 0) = 10.0;
  const auto calib = CameraCalibration::pinhole(500.0, 24.0, 16.0);
  const auto dets = decode_detections(maps, anchors, templates, calib);
  ASSERT_EQ(dets.size(), 1u);
  const auto& d = dets[0];
  EXPECT_EQ(d.anchor, anchor);
  EXPECT_EQ(d.class_index, 2);
  EXPECT_NEAR(d.score, std::exp(10.0) / (std::exp(10.0) + 2.0), 1e-15);
  EXPECT_EQ(d.box.center_x(), 8.0);
  EXPECT_EQ(d.box.center_y(), 24.0);
  EXPECT_EQ(d.box.width(), 48.0);
  EXPECT_EQ(d.box.height(), 96.0);
  EXPECT_EQ(d.box3d.center.x, 8.0);
  EXPECT_EQ(d.box3d.center.y, 24.0);
  EXPECT_EQ(d.box3d.center.z, 12.0);
  EXPECT_EQ(d.box3d.dims.w, 0.6);
  EXPECT_EQ(d.box3d.dims.h, 1.75);
  EXPECT_EQ(d.box3d.dims.l, 0.8);
  EXPECT_EQ(d.box3d.theta_obs, -1.0);
  EXPECT_NEAR(d.center_cam.z(), 12.0, 1e-12);
}

TEST(Decode, BackgroundAndThreshold) {
  const auto templates = two_templates();
  auto maps = OutputMaps::zeros(2, 3, 2, 3);
  const auto anchors = span_anchors(2, 3, 2, 16.0);
  const auto calib = CameraCalibration::pinhole(500.0, 24.0, 16.0);
  for (std::size_t c = 0; c < maps.cls.dim(0); c += 3) {
    for (std::size_t i = 0; i < 6; ++i) maps.cls[c * 6 + i] = 5.0;
  }
  EXPECT_TRUE(decode_detections(maps, anchors, templates, calib).empty());
  EXPECT_TRUE(decode_detections(maps, anchors, templates, calib, 0.0).empty());
  // Non-background argmax on anchors 0, 3, 8 with modest confidence.
  maps.cls.at(0 * 3 + 1, 0, 0) = 6.0;
  maps.cls.at(1 * 3 + 2, 0, 1) = 6.0;
  maps.cls.at(0 * 3 + 1, 1, 1) = 5.5;
  EXPECT_TRUE(decode_detections(maps, anchors, templates, calib).empty());
  const auto all = decode_detections(maps, anchors, templates, calib, 0.0);
  ASSERT_EQ(all.size(), 3u);
  EXPECT_EQ(all[0].anchor, 0u);
  EXPECT_EQ(all[1].anchor, 3u);
  EXPECT_EQ(all[2].anchor, 8u);
}

TEST(Decode, ShapeMismatch) {
  const auto templates = two_templates();
  const auto maps = OutputMaps::zeros(2, 3, 2, 3);
  const auto anchors = span_anchors(2, 3, 3, 16.0);
  EXPECT_THROW(decode_detections(maps, anchors, templates, CameraCalibration::pinhole(1, 0, 0)), Error);
}

Detection det_with(Box2D box, double score, int cls, std::size_t anchor) {
  Detection d;
  d.box = box;
  d.score = score;
  d.class_index = cls;
  d.anchor = anchor;
  return d;
}

TEST(Nms, Examples) {
  const std::vector<Detection> apart = {det_with({0, 0, 10, 10}, 0.8, 1, 0), det_with({20, 0, 30, 10}, 0.9, 1, 1)};
  const auto kept = nms_2d(apart);
  ASSERT_EQ(kept.size(), 2u);
  EXPECT_EQ(kept[0].anchor, 1u);
  const std::vector<Detection> same = {det_with({0, 0, 10, 10}, 0.8, 1, 0), det_with({0, 0, 10, 10}, 0.9, 1, 1)};
  ASSERT_EQ(nms_2d(same).size(), 1u);
  EXPECT_EQ(nms_2d(same)[0].score, 0.9);
  // Different classes never suppress each other.
  const std::vector<Detection> classes = {det_with({0, 0, 10, 10}, 0.8, 1, 0), det_with({0, 0, 10, 10}, 0.9, 2, 1)};
  EXPECT_EQ(nms_2d(classes).size(), 2u);
  // IoU exactly at the threshold (40 / 100) keeps the box.
  const std::vector<Detection> edge = {det_with({0, 0, 10, 10}, 0.9, 1, 0), det_with({0, 0, 4, 10}, 0.8, 1, 1)};
  EXPECT_EQ(nms_2d(edge, 0.4).size(), 2u);
  EXPECT_TRUE(nms_2d({}).empty());
}

TEST(Nms, MatchesExhaustiveReference) {
  std::mt19937_64 rng(41);
  std::uniform_real_distribution<double> pos(0.0, 60.0), size(5.0, 30.0);
  std::uniform_int_distribution<int> count(0, 12), cls(1, 2), score(0, 9);
  for (int scene = 0; scene < 200; ++scene) {
    const int n = count(rng);
    std::vector<Detection> dets;
    std::vector<testing::OracleBox> boxes;
    for (int i = 0; i < n; ++i) {
      const Box2D b = Box2D::from_center(pos(rng), pos(rng), size(rng), size(rng));
      const int c = cls(rng);
      const double s = 0.5 + 0.05 * score(rng);  // coarse scores force ties
      dets.push_back(det_with(b, s, c, static_cast<std::size_t>(i)));
      boxes.push_back({b.as_array(), c, s, static_cast<std::size_t>(i)});
    }
    const auto kept = nms_2d(dets);
    std::uint32_t mask = 0;
    for (const auto& d : kept) mask |= 1u << d.anchor;
    const auto valid = testing::oracle_nms_subsets(boxes, 0.4);
    ASSERT_EQ(valid.size(), 1u);
    EXPECT_EQ(mask, valid[0]) << "scene " << scene;
    for (std::size_t i = 0; i < kept.size(); ++i) {
      if (i > 0) {
        EXPECT_GE(kept[i - 1].score, kept[i].score);
      }
      for (std::size_t j = 0; j < i; ++j) {
        if (kept[i].class_index == kept[j].class_index) {
          EXPECT_LE(iou_2d(kept[i].box, kept[j].box), 0.4);
        }
      }
    }
  }
}

Detection car_detection(const CameraCalibration& calib, double theta_true, double theta_init) {
  Detection d;
  d.box3d.center = project_center(calib, Vec3(2.0, 1.0, 20.0));
  d.box3d.dims = {1.6, 1.5, 3.9};
  const Vec3 c = back_project(calib, d.box3d.center);
  d.box = box_project(calib, d.box3d.center, d.box3d.dims, observation_to_yaw(theta_true, c.x(), c.z()));
  d.box3d.theta_obs = theta_init;
  return d;
}

TEST(PostOpt, SevenDecaysWhenProbesNeverImprove) {
  const auto calib = synth::kitti_calibration();
  const PostOptConfig cfg;
  const Detection d = car_detection(calib, 0.5 - cfg.sigma, 0.5);
  const auto r = optimize_theta(d, calib, cfg);
  EXPECT_EQ(r.decays, 7);
  EXPECT_EQ(r.moves, 0);
  EXPECT_EQ(r.iterations, 7);
  EXPECT_EQ(r.theta, 0.5);
  // Count of halvings from 0.3 pi down past 0.01, derived independently.
  int halvings = 0;
  for (double s = 0.3 * kPi; s >= 0.01; s /= 2) ++halvings;
  EXPECT_EQ(r.decays, halvings);
}

TEST(PostOpt, RecoversSmallOffset) {
  const auto calib = synth::kitti_calibration();
  const double truth = 0.6;
  const Detection d = car_detection(calib, truth, truth + 0.2);
  const auto r = optimize_theta(d, calib);
  EXPECT_LE(r.loss, r.initial_loss);
  EXPECT_LE(angle_distance(r.theta, truth), 0.02) << "theta " << r.theta;
}

TEST(PostOpt, DegenerateDimsLeaveThetaUnchanged) {
  const auto calib = synth::kitti_calibration();
  Detection d;
  d.box3d.center = project_center(calib, Vec3(-3.0, 1.2, 15.0));
  d.box3d.dims = {0.0, 0.0, 0.0};
  d.box3d.theta_obs = 1.1;
  d.box = Box2D::from_center(d.box3d.center.x, d.box3d.center.y, 50.0, 40.0);
  const auto r = optimize_theta(d, calib);
  EXPECT_EQ(r.theta, 1.1);
  EXPECT_EQ(r.moves, 0);
  EXPECT_NEAR(r.loss, 90.0, 1e-9);
}

TEST(PostOpt, IterationCapAndInvalidConfig) {
  const auto calib = synth::kitti_calibration();
  const Detection d = car_detection(calib, 0.0, 1.0);
  PostOptConfig cfg;
  cfg.max_iterations = 3;
  try {
    optimize_theta(d, calib, cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNoConvergence);
  }
  PostOptConfig bad;
  bad.gamma = 1.0;
  EXPECT_THROW(optimize_theta(d, calib, bad), Error);
  Detection behind = d;
  behind.box3d.center.z = -1.0;
  EXPECT_THROW(optimize_theta(behind, calib), Error);
}

TEST(PostOpt, MonotoneAndBoundedOnRandomCases) {
  const auto calib = synth::kitti_calibration();
  const auto cases = synth::make_orientation_cases(calib, 100, 0.3, 7);
  const PostOptConfig cfg;
  int max_decays = 0;
  for (double s = cfg.sigma; s >= cfg.beta; s *= cfg.gamma) ++max_decays;
  for (const auto& c : cases) {
    const auto r = optimize_theta(c.det, calib, cfg);
    EXPECT_LE(r.loss, r.initial_loss);
    EXPECT_EQ(r.decays, max_decays);
    EXPECT_EQ(r.iterations, r.decays + r.moves);
    // The reported loss is the loss of the returned angle.
    const Vec3 ctr = back_project(calib, c.det.box3d.center);
    const Box2D at = box_project(calib, c.det.box3d.center, c.det.box3d.dims, observation_to_yaw(r.theta, ctr.x(), ctr.z()));
    EXPECT_NEAR(box_l1(c.det.box, at), r.loss, 1e-9);
  }
}

TEST(Pipeline, HandcraftedSceneDecodesExactly) {
  const auto scene = synth::make_handcrafted_scene(4);
  PipelineConfig cfg;
  cfg.post_optimize = false;
  const auto dets = run_pipeline(scene.features, scene.params, scene.templates, scene.calib, cfg);
  ASSERT_EQ(dets.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    const auto& d = dets[i];
    const auto& e = scene.expected[i];
    EXPECT_EQ(d.class_index, e.class_index);
    EXPECT_EQ(d.anchor, e.anchor);
    for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(d.box.as_array()[k], e.box.as_array()[k], 1e-6);
    EXPECT_NEAR(d.box3d.center.x, e.box3d.center.x, 1e-6);
    EXPECT_NEAR(d.box3d.center.y, e.box3d.center.y, 1e-6);
    EXPECT_NEAR(d.box3d.center.z, e.box3d.center.z, 1e-6);
    EXPECT_NEAR(d.box3d.dims.w, e.box3d.dims.w, 1e-6);
    EXPECT_NEAR(d.box3d.dims.h, e.box3d.dims.h, 1e-6);
    EXPECT_NEAR(d.box3d.dims.l, e.box3d.dims.l, 1e-6);
    EXPECT_NEAR(angle_distance(d.box3d.theta_obs, e.box3d.theta_obs), 0.0, 1e-6);
  }
}

void expect_same(const std::vector<Detection>& a, const std::vector<Detection>& b) {
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].anchor, b[i].anchor);
    EXPECT_EQ(a[i].score, b[i].score);
    EXPECT_EQ(a[i].box.as_array(), b[i].box.as_array());
    EXPECT_EQ(a[i].box3d.theta_obs, b[i].box3d.theta_obs);
    EXPECT_EQ(a[i].box3d.center.z, b[i].box3d.center.z);
  }
}

TEST(Pipeline, FusionWeightsIrrelevantWhenPathsAgree) {
  FusionWeights other;
  for (std::size_t i = 0; i < kNumHeads; ++i) other.alpha[i] = 0.37 * static_cast<double>(i) - 2.0;
  const auto a = synth::make_handcrafted_scene(4);
  const auto b = synth::make_handcrafted_scene(4, other);
  const auto da = run_pipeline(a.features, a.params, a.templates, a.calib);
  const auto db = run_pipeline(b.features, b.params, b.templates, b.calib);
  expect_same(da, db);
}

TEST(Pipeline, BinCountDoesNotMatterWithSharedKernels) {
  const auto one = synth::make_handcrafted_scene(1);
  const auto base = run_pipeline(one.features, one.params, one.templates, one.calib);
  for (std::size_t b : {2u, 8u}) {
    const auto s = synth::make_handcrafted_scene(b);
    expect_same(run_pipeline(s.features, s.params, s.templates, s.calib), base);
  }
}

TEST(Pipeline, DeterministicAndContainerRoundTrip) {
  const auto scene = synth::make_handcrafted_scene(4);
  const auto again = HeadParams::from_container(scene.params.to_container());
  expect_same(run_pipeline(scene.features, scene.params, scene.templates, scene.calib),
              run_pipeline(scene.features, again, scene.templates, scene.calib));
  EXPECT_THROW(run_pipeline(scene.features, scene.params, std::vector<AnchorTemplate>(2), scene.calib), Error);
}

}  // namespace
}  // namespace mono3d
