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
#include <string>

#include "mono3d/kitti_io.hpp"
#include "synthetic.hpp"

namespace mono3d {
namespace {

constexpr const char* kCarLine =
    "Car 0.00 0 -1.58 587.01 173.33 614.12 200.12 1.65 1.67 3.64 -0.65 1.71 46.70 -1.59";

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

TEST(Labels, EmptyFileGivesNoObjects) {
  EXPECT_TRUE(parse_label_file("").empty());
  EXPECT_TRUE(parse_label_file("\n\n  \n").empty());
}

TEST(Labels, ParsesCarLine) {
  const auto objs = parse_label_file(kCarLine);
  ASSERT_EQ(objs.size(), 1u);
  const auto& o = objs[0];
  EXPECT_EQ(o.type, "Car");
  EXPECT_EQ(o.occlusion, 0);
  EXPECT_DOUBLE_EQ(o.alpha, -1.58);
  EXPECT_DOUBLE_EQ(o.bbox.x_min, 587.01);
  EXPECT_DOUBLE_EQ(o.bbox.y_max, 200.12);
  EXPECT_DOUBLE_EQ(o.h, 1.65);
  EXPECT_DOUBLE_EQ(o.w, 1.67);
  EXPECT_DOUBLE_EQ(o.l, 3.64);
  EXPECT_DOUBLE_EQ(o.location.z(), 46.70);
  EXPECT_DOUBLE_EQ(o.rotation_y, -1.59);
  EXPECT_FALSE(o.score.has_value());
  const auto scored = parse_label_file(std::string(kCarLine) + " 0.93\r\n");
  ASSERT_TRUE(scored[0].score.has_value());
  EXPECT_DOUBLE_EQ(*scored[0].score, 0.93);
}

TEST(Labels, DontCareRecognised) {
  const auto objs = parse_label_file(
      "DontCare -1 -1 -10 503.89 169.71 590.61 190.13 -1 -1 -1 -1000 -1000 -1000 -10\n" + std::string(kCarLine));
  ASSERT_EQ(objs.size(), 2u);
  EXPECT_TRUE(objs[0].is_dont_care());
  EXPECT_FALSE(objs[1].is_dont_care());
}

TEST(Labels, ErrorsCarryLineAndField) {
  const std::string short_line = "Car 0 0 0 1 2 3 4 1 1 1 0 0 10";
  std::string msg = error_of([&] { parse_label_file(std::string(kCarLine) + "\n" + short_line + "\n"); });
  EXPECT_NE(msg.find("line 2"), std::string::npos) << msg;
  EXPECT_NE(msg.find("14"), std::string::npos) << msg;
  msg = error_of([] { parse_label_file("Car 0 0 0 1 2 3 4 1 1 1 0 0 x 0"); });
  EXPECT_NE(msg.find("line 1, field 14"), std::string::npos) << msg;
  msg = error_of([] { parse_label_file("Car 0 0.5 0 1 2 3 4 1 1 1 0 0 1 0"); });
  EXPECT_NE(msg.find("field 3"), std::string::npos) << msg;
  EXPECT_THROW(parse_label_file("Car 0 0 nan 1 2 3 4 1 1 1 0 0 1 0"), Error);
}

TEST(Labels, FormatUsesSixDecimals) {
  KittiObject o;
  o.type = "Pedestrian";
  o.truncation = 0.5;
  o.occlusion = 2;
  o.alpha = -1e-9;
  o.bbox = {1.0, 2.0, 3.0, 4.0};
  o.h = 1.75;
  o.w = 0.6;
  o.l = 0.8;
  o.location = Vec3(1.0, 1.5, 10.0);
  o.rotation_y = 0.1234567;
  o.score = 0.9;
  EXPECT_EQ(format_object(o),
            "Pedestrian 0.500000 2 0.000000 1.000000 2.000000 3.000000 4.000000 1.750000 0.600000 0.800000 "
            "1.000000 1.500000 10.000000 0.123457 0.900000");
}

TEST(Labels, RandomRoundTripWithinHalfUlpOfSixDecimals) {
  std::mt19937_64 rng(51);
  std::uniform_real_distribution<double> u(-50.0, 50.0), a(-kPi, kPi), s(0.0, 1.0);
  std::vector<KittiObject> objs;
  for (int i = 0; i < 1000; ++i) {
    KittiObject o;
    o.type = i % 3 == 0 ? "Car" : (i % 3 == 1 ? "Pedestrian" : "Cyclist");
    o.truncation = s(rng);
    o.occlusion = i % 4;
    o.alpha = a(rng);
    o.bbox = {u(rng), u(rng), u(rng), u(rng)};
    o.h = s(rng) * 3;
    o.w = s(rng) * 3;
    o.l = s(rng) * 5;
    o.location = Vec3(u(rng), u(rng), u(rng));
    o.rotation_y = a(rng);
    if (i % 2) o.score = s(rng);
    objs.push_back(o);
  }
  const auto text = write_label_file(objs);
  const auto back = parse_label_file(text);
  ASSERT_EQ(back.size(), objs.size());
  const double tol = 5e-7 + 1e-12;
  for (std::size_t i = 0; i < objs.size(); ++i) {
    EXPECT_EQ(back[i].type, objs[i].type);
    EXPECT_EQ(back[i].occlusion, objs[i].occlusion);
    EXPECT_NEAR(back[i].alpha, objs[i].alpha, tol);
    EXPECT_NEAR(back[i].bbox.y_max, objs[i].bbox.y_max, tol);
    EXPECT_NEAR(back[i].location.z(), objs[i].location.z(), tol);
    EXPECT_NEAR(back[i].rotation_y, objs[i].rotation_y, tol);
    EXPECT_EQ(back[i].score.has_value(), objs[i].score.has_value());
  }
  // Writing again is a fixed point.
  EXPECT_EQ(write_label_file(back), text);
}

TEST(Calib, IdentityLikeP2) {
  const auto calib = parse_calib_file("P0: 1 0 0 0 0 1 0 0 0 0 1 0\nP2: 1 0 0 0 0 1 0 0 0 0 1 0\n");
  const auto pc = project_center(calib, Vec3(2.0, 1.0, 4.0));
  EXPECT_DOUBLE_EQ(pc.x, 0.5);
  EXPECT_DOUBLE_EQ(pc.y, 0.25);
  EXPECT_DOUBLE_EQ(pc.z, 4.0);
}

TEST(Calib, ErrorsAndExactRoundTrip) {
  try {
    parse_calib_file("P0: 1 0 0 0 0 1 0 0 0 0 1 0\n");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kMissingRecord);
  }
  const std::string msg = error_of([] { parse_calib_file("\nP2: 1 0 0 0 0 1 0 0 0 0 1\n"); });
  EXPECT_NE(msg.find("line 2"), std::string::npos) << msg;
  EXPECT_NE(msg.find("11"), std::string::npos) << msg;
  const auto kitti = synth::kitti_calibration();
  const auto back = parse_calib_file(format_calib_p2(kitti));
  EXPECT_EQ(back.p(), kitti.p());
}

TEST(Angles, AlphaRotationConversion) {
  EXPECT_NEAR(alpha_to_ry(0.0, 5.0, 5.0), kPi / 4, 1e-15);
  EXPECT_NEAR(ry_to_alpha(kPi / 4, 5.0, 5.0), 0.0, 1e-15);
  EXPECT_DOUBLE_EQ(alpha_to_ry(0.7, 0.0, 10.0), 0.7);
  EXPECT_THROW(alpha_to_ry(0.0, 1.0, 0.0), Error);
}

TEST(Location, BottomCenterConversion) {
  const Vec3 c = bottom_center_to_center(Vec3(1.0, 1.65, 20.0), 1.5);
  EXPECT_DOUBLE_EQ(c.y(), 0.9);
  EXPECT_DOUBLE_EQ(center_to_bottom_center(c, 1.5).y(), 1.65);
  const auto box = object_to_box3d(parse_label_file(kCarLine)[0]);
  EXPECT_DOUBLE_EQ(box.dims.w, 1.67);
  EXPECT_DOUBLE_EQ(box.dims.h, 1.65);
  EXPECT_DOUBLE_EQ(box.dims.l, 3.64);
  EXPECT_DOUBLE_EQ(box.yaw, -1.59);
  EXPECT_DOUBLE_EQ(box.center.y(), 1.71 - 0.825);
}

TEST(Results, DetectionRoundTrip) {
  const auto calib = synth::kitti_calibration();
  Detection d;
  d.class_index = 2;
  d.score = 0.875;
  d.box = {500.0, 150.0, 540.0, 230.0};
  d.box3d.center = project_center(calib, Vec3(-2.0, 0.9, 12.0));
  d.box3d.dims = {0.6, 1.75, 0.8};
  d.box3d.theta_obs = -0.3;
  const std::string text = write_results(std::vector<Detection>{d}, calib);
  const auto objs = parse_label_file(text);
  ASSERT_EQ(objs.size(), 1u);
  EXPECT_EQ(objs[0].type, "Pedestrian");
  EXPECT_DOUBLE_EQ(*objs[0].score, 0.875);
  EXPECT_NEAR(objs[0].location.y(), 0.9 + 0.875, 1e-6);
  EXPECT_NEAR(objs[0].rotation_y, -0.3 + std::atan2(-2.0, 12.0), 1e-6);
  const auto back = object_to_detection(objs[0], calib, default_class_names());
  EXPECT_EQ(back.class_index, 2);
  EXPECT_NEAR(back.box3d.center.x, d.box3d.center.x, 1e-3);
  EXPECT_NEAR(back.box3d.center.z, d.box3d.center.z, 1e-6);
  EXPECT_NEAR(back.box3d.theta_obs, -0.3, 1e-6);
  EXPECT_TRUE(write_results(std::vector<Detection>{}, calib).empty());
}

TEST(Config, ParseApplyAndFormat) {
  const RunConfig def;
  EXPECT_EQ(def.feat_w(), 78);
  EXPECT_EQ(def.feat_h(), 24);
  const auto cfg = parse_config("# tuned\nbins = 8\nanchor_ratios=0.5, 2\npost_optimize=false\nclasses=Car,Van\n");
  EXPECT_EQ(cfg.bins, 8);
  EXPECT_EQ(cfg.anchor_ratios, (std::vector<double>{0.5, 2.0}));
  EXPECT_FALSE(cfg.post_optimize);
  EXPECT_EQ(cfg.class_names, (std::vector<std::string>{"Background", "Car", "Van"}));
  EXPECT_EQ(cfg.loss.num_classes, 3);
  const auto again = parse_config(format_config(cfg));
  EXPECT_EQ(format_config(again), format_config(cfg));
  std::string msg = error_of([] { parse_config("bins=4\nfrobnicate=1\n"); });
  EXPECT_NE(msg.find("line 2"), std::string::npos) << msg;
  msg = error_of([] { parse_config("ap_points=12\n"); });
  EXPECT_NE(msg.find("ap_points"), std::string::npos) << msg;
  EXPECT_THROW(parse_config("bins\n"), Error);
}

}  // namespace
}  // namespace mono3d
