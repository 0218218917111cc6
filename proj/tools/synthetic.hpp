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

// Deterministic synthetic inputs shared by the CLI, the self-test and the
// test suites.

#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "mono3d/mono3d.hpp"

namespace mono3d::synth {

/// Left color camera of KITTI drive 0000 (P2 of the object benchmark).
CameraCalibration kitti_calibration();

/// A scene whose feature tensor and head parameters make the network output
/// exactly the maps that encode `expected`.
struct HandcraftedScene {
  CameraCalibration calib;
  std::vector<AnchorTemplate> templates;
  HeadParams params;
  Tensor features;
  double stride = 16.0;
  /// Logit of the true class (every other class logit is 0).
  double logit = 8.0;
  std::vector<Detection> expected;
};

/// Three objects of classes 1..3 in a 24 x 8 grid at stride 16, with `bins`
/// identical local kernel banks and the given fusion logits.
HandcraftedScene make_handcrafted_scene(std::size_t bins = 4, const FusionWeights& fusion = {});

/// A plausible camera-space box in front of the camera.
struct RandomObject {
  Vec3 center;
  Dims3 dims;
  double yaw = 0.0;
};

RandomObject random_object(std::mt19937_64& rng);

/// Detection whose 2D box is exactly the projection of a known 3D box and
/// whose observation angle is perturbed by at most `max_offset`.
struct OrientationCase {
  Detection det;
  double theta_true = 0.0;
};

std::vector<OrientationCase> make_orientation_cases(const CameraCalibration& calib, std::size_t n,
                                                    double max_offset, std::uint64_t seed);

}  // namespace mono3d::synth
