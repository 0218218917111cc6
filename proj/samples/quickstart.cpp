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


// Walks through the core API: anchors, encoding, projection, NMS and the
// orientation post-optimizer on a single hand-placed car.

#include <cstdio>

#include "mono3d/mono3d.hpp"

int main() {
  using namespace mono3d;

  Mat34 p;
  p << 721.5377, 0.0, 609.5593, 44.85728,
       0.0, 721.5377, 172.854, 0.2163791,
       0.0, 0.0, 1.0, 0.002745884;
  const CameraCalibration calib(p);

  // A car 20 m ahead and 3 m to the left, heading 0.6 rad from the viewing ray.
  const Vec3 center(-3.0, 1.0, 20.0);
  const Dims3 dims{1.6, 1.5, 3.9};
  const double theta_obs = 0.6;
  const double yaw = observation_to_yaw(theta_obs, center.x(), center.z());
  const ProjectedCenter pc = project_center(calib, center);
  const Box2D box = box_project(calib, pc, dims, yaw);
  std::printf("projected center (%.2f, %.2f) depth %.2f\n", pc.x, pc.y, pc.z);
  std::printf("2D box [%.2f, %.2f, %.2f, %.2f]\n", box.x_min, box.y_min, box.x_max, box.y_max);

  // The published anchor set: 12 scales x 3 ratios.
  const std::vector<double> ratios = {0.5, 1.0, 1.5};
  auto templates = generate_templates(30.0, 1.265, 12, ratios);
  std::printf("%zu anchor templates, largest %.1f px tall\n", templates.size(), templates.back().h2d);

  // Give one template priors and encode the car against it.
  AnchorTemplate& t = templates[13];
  t.z_p = 25.0;
  t.w3d = 1.6;
  t.h3d = 1.5;
  t.l3d = 3.9;
  const SpannedAnchor anchor{13, 8.0 * 16.0 + 8.0, 7.0 * 16.0 + 8.0};
  const Box3DProjected gt3d{pc, dims, theta_obs};
  const TransformVector targets = encode_targets(anchor, t, box, gt3d);
  const Box3DProjected decoded = decode_3d(anchor, t, targets);
  std::printf("targets t_z = %.3f, t_theta = %.3f; decoded depth %.3f\n", targets.zp, targets.theta, decoded.center.z);

  // Duplicate detections collapse under NMS.
  Detection det;
  det.class_index = 1;
  det.score = 0.9;
  det.box = box;
  det.box3d = gt3d;
  det.center_cam = center;
  Detection dup = det;
  dup.anchor = 1;
  dup.score = 0.8;
  std::printf("NMS keeps %zu of 2 duplicates\n", nms_2d({det, dup}).size());

  // Corrupt the orientation and let the post-optimizer pull it back.
  det.box3d.theta_obs = theta_obs + 0.25;
  const PostOptResult r = optimize_theta(det, calib);
  std::printf("theta %.3f -> %.3f (true %.3f) in %d iterations, L1 %.3f -> %.3f px\n", theta_obs + 0.25, r.theta,
              theta_obs, r.iterations, r.initial_loss, r.loss);

  std::printf("%s", write_results(std::vector<Detection>{det}, calib).c_str());
  return 0;
}
