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
/// \brief Camera projection, 3D box corner projection and IoU for 2D, BEV and
/// 3D boxes.
///
/// Coordinate frame is the KITTI rectified camera frame: X right, Y down,
/// Z forward. Rotations are about the Y axis.

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <vector>

#include "mono3d/common.hpp"

namespace mono3d {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat34 = Eigen::Matrix<double, 3, 4>;
using Mat4 = Eigen::Matrix4d;

/// 3x4 projection matrix together with the inverse of its [0,0,0,1]-padded
/// 4x4 form. Construction fails on a singular padded matrix, so every
/// instance can back-project.
class CameraCalibration {
 public:
  explicit CameraCalibration(const Mat34& p) : p_(p) {
    Mat4 padded = pad(p);
    Eigen::FullPivLU<Mat4> lu(padded);
    if (!lu.isInvertible()) {
      throw Error(ErrorCode::kSingularMatrix, "padded projection matrix is not invertible");
    }
    p_inv_ = lu.inverse();
    const double residual = (p_inv_ * padded - Mat4::Identity()).cwiseAbs().maxCoeff();
    if (!std::isfinite(residual) || residual > 1e-9) {
      throw Error(ErrorCode::kSingularMatrix, "padded projection matrix is ill-conditioned");
    }
  }

  /// Pinhole camera with focal length f, principal point (cx, cy) and zero
  /// translation column.
  static CameraCalibration pinhole(double f, double cx, double cy) {
    Mat34 p = Mat34::Zero();
    p(0, 0) = f;
    p(1, 1) = f;
    p(0, 2) = cx;
    p(1, 2) = cy;
    p(2, 2) = 1.0;
    return CameraCalibration(p);
  }

  const Mat34& p() const noexcept { return p_; }
  const Mat4& p_inv() const noexcept { return p_inv_; }

  static Mat4 pad(const Mat34& p) {
    Mat4 m = Mat4::Zero();
    m.topRows<3>() = p;
    m(3, 3) = 1.0;
    return m;
  }

 private:
  Mat34 p_;
  Mat4 p_inv_;
};

/// Axis-aligned image box in corner form.
struct Box2D {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;

  static Box2D from_center(double cx, double cy, double w, double h) {
    return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
  }

  double width() const noexcept { return x_max - x_min; }
  double height() const noexcept { return y_max - y_min; }
  double center_x() const noexcept { return 0.5 * (x_min + x_max); }
  double center_y() const noexcept { return 0.5 * (y_min + y_max); }
  double area() const noexcept { return std::max(0.0, width()) * std::max(0.0, height()); }

  std::array<double, 4> as_array() const noexcept { return {x_min, y_min, x_max, y_max}; }

  bool operator==(const Box2D&) const = default;
};

/// 3D box extents in meters: w along Z, h along Y, l along X (before yaw).
struct Dims3 {
  double w = 0.0;
  double h = 0.0;
  double l = 0.0;

  bool operator==(const Dims3&) const = default;
};

/// Image-plane center in pixels plus metric depth.
struct ProjectedCenter {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
};

/// Global heading about the Y axis from the observation angle and the
/// object's lateral position.
inline double observation_to_yaw(double theta_obs, double x, double z) {
  return wrap_angle(theta_obs + std::atan2(x, z));
}

inline double yaw_to_observation(double yaw, double x, double z) {
  return wrap_angle(yaw - std::atan2(x, z));
}

/// Camera-space cuboid. `center` is the geometric center, not the KITTI
/// bottom-center. Heading is stored as global yaw so that axis-aligned boxes
/// stay exactly axis-aligned; the observation angle is derived.
struct Box3D {
  Vec3 center = Vec3::Zero();
  Dims3 dims;
  double yaw = 0.0;

  static Box3D from_observation(const Vec3& center, const Dims3& dims, double theta_obs) {
    return {center, dims, observation_to_yaw(theta_obs, center.x(), center.z())};
  }

  double theta_obs() const { return yaw_to_observation(yaw, center.x(), center.z()); }
  double volume() const { return dims.w * dims.h * dims.l; }
};

/// The 8 cuboid corners in camera space and their image projections.
struct CornerSet {
  Eigen::Matrix<double, 3, 8> camera;
  Eigen::Matrix<double, 2, 8> image;
};

inline ProjectedCenter project_center(const CameraCalibration& calib, const Vec3& p) {
  const Vec3 h = calib.p() * p.homogeneous();
  if (!(h.z() > 0.0)) {
    throw Error(ErrorCode::kNonPositiveDepth, "projected depth must be positive");
  }
  return {h.x() / h.z(), h.y() / h.z(), h.z()};
}

inline Vec3 back_project(const CameraCalibration& calib, const ProjectedCenter& pc) {
  if (!(pc.z > 0.0)) {
    throw Error(ErrorCode::kNonPositiveDepth, "projected depth must be positive");
  }
  const Eigen::Vector4d h(pc.x * pc.z, pc.y * pc.z, pc.z, 1.0);
  return (calib.p_inv() * h).head<3>();
}

/// Unrotated corners centered at the origin, one column per corner.
inline Eigen::Matrix<double, 3, 8> canonical_corners(const Dims3& d) {
  Eigen::Matrix<double, 3, 8> c;
  c << -d.l, d.l, d.l, d.l, d.l, -d.l, -d.l, -d.l,
       -d.h, -d.h, d.h, d.h, -d.h, -d.h, d.h, d.h,
       -d.w, -d.w, -d.w, d.w, d.w, d.w, d.w, -d.w;
  return c * 0.5;
}

inline Eigen::Matrix3d yaw_rotation(double yaw) {
  const double c = std::cos(yaw);
  const double s = std::sin(yaw);
  Eigen::Matrix3d r;
  r << c, 0.0, s,
       0.0, 1.0, 0.0,
       -s, 0.0, c;
  return r;
}

inline CornerSet box_corners(const CameraCalibration& calib, const ProjectedCenter& pc,
                             const Dims3& dims, double yaw) {
  const Vec3 center = back_project(calib, pc);
  CornerSet out;
  out.camera = (yaw_rotation(yaw) * canonical_corners(dims)).colwise() + center;
  const Eigen::Matrix<double, 3, 8> projected = calib.p() * out.camera.colwise().homogeneous();
  for (int i = 0; i < 8; ++i) {
    const double depth = projected(2, i);
    if (!(depth > 0.0)) {
      throw Error(ErrorCode::kCornerBehindCamera, "corner " + std::to_string(i) + " has depth <= 0");
    }
    out.image(0, i) = projected(0, i) / depth;
    out.image(1, i) = projected(1, i) / depth;
  }
  return out;
}

/// Tight 2D box around the projected corners of a cuboid at `pc` with global
/// heading `yaw`.
inline Box2D box_project(const CameraCalibration& calib, const ProjectedCenter& pc,
                         const Dims3& dims, double yaw) {
  const CornerSet cs = box_corners(calib, pc, dims, yaw);
  return {cs.image.row(0).minCoeff(), cs.image.row(1).minCoeff(),
          cs.image.row(0).maxCoeff(), cs.image.row(1).maxCoeff()};
}

inline double iou_2d(const Box2D& a, const Box2D& b) {
  const double iw = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double ih = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

namespace polygon {

/// Points closer than this to a clip edge count as on the edge.
inline constexpr double kEdgeTolerance = 1e-9;

inline double cross(const Vec2& a, const Vec2& b) { return a.x() * b.y() - a.y() * b.x(); }

/// Shoelace area; positive for counter-clockwise vertex order.
inline double signed_area(std::span<const Vec2> poly) {
  double acc = 0.0;
  const std::size_t n = poly.size();
  for (std::size_t i = 0; i < n; ++i) {
    acc += cross(poly[i], poly[(i + 1) % n]);
  }
  return 0.5 * acc;
}

/// Sutherland-Hodgman clip of `subject` against the convex, counter-clockwise
/// polygon `clip`.
inline std::vector<Vec2> clip_convex(std::span<const Vec2> subject, std::span<const Vec2> clip) {
  std::vector<Vec2> out(subject.begin(), subject.end());
  const std::size_t m = clip.size();
  for (std::size_t e = 0; e < m && !out.empty(); ++e) {
    const Vec2& a = clip[e];
    const Vec2& b = clip[(e + 1) % m];
    const Vec2 edge = b - a;
    auto side = [&](const Vec2& p) { return cross(edge, p - a); };
    std::vector<Vec2> input;
    input.swap(out);
    const std::size_t n = input.size();
    for (std::size_t i = 0; i < n; ++i) {
      const Vec2& cur = input[i];
      const Vec2& prev = input[(i + n - 1) % n];
      const double s_cur = side(cur);
      const double s_prev = side(prev);
      const bool in_cur = s_cur >= -kEdgeTolerance;
      const bool in_prev = s_prev >= -kEdgeTolerance;
      if (in_cur != in_prev) {
        const double t = s_prev / (s_prev - s_cur);
        out.push_back(prev + t * (cur - prev));
      }
      if (in_cur) out.push_back(cur);
    }
  }
  return out;
}

}  // namespace polygon

/// Ground-plane footprint (X, Z) of a box, counter-clockwise in X-Z.
inline std::array<Vec2, 4> bev_footprint(const Box3D& box) {
  const double yaw = box.yaw;
  const double c = std::cos(yaw);
  const double s = std::sin(yaw);
  const double hl = 0.5 * box.dims.l;
  const double hw = 0.5 * box.dims.w;
  const std::array<Vec2, 4> local = {Vec2(-hl, -hw), Vec2(hl, -hw), Vec2(hl, hw), Vec2(-hl, hw)};
  std::array<Vec2, 4> out;
  for (std::size_t i = 0; i < 4; ++i) {
    const double x = local[i].x();
    const double z = local[i].y();
    out[i] = Vec2(box.center.x() + c * x + s * z, box.center.z() - s * x + c * z);
  }
  return out;
}

/// Area of the intersection of the two footprints.
inline double bev_intersection_area(const Box3D& a, const Box3D& b) {
  if (a.yaw == 0.0 && b.yaw == 0.0) {
    const double ix = std::min(a.center.x() + 0.5 * a.dims.l, b.center.x() + 0.5 * b.dims.l) -
                      std::max(a.center.x() - 0.5 * a.dims.l, b.center.x() - 0.5 * b.dims.l);
    const double iz = std::min(a.center.z() + 0.5 * a.dims.w, b.center.z() + 0.5 * b.dims.w) -
                      std::max(a.center.z() - 0.5 * a.dims.w, b.center.z() - 0.5 * b.dims.w);
    return (ix > 0.0 && iz > 0.0) ? ix * iz : 0.0;
  }
  const auto fa = bev_footprint(a);
  const auto fb = bev_footprint(b);
  const auto clipped = polygon::clip_convex(fa, fb);
  if (clipped.size() < 3) return 0.0;
  return std::abs(polygon::signed_area(clipped));
}

inline double iou_bev(const Box3D& a, const Box3D& b) {
  const double area_a = a.dims.w * a.dims.l;
  const double area_b = b.dims.w * b.dims.l;
  if (area_a <= 0.0 || area_b <= 0.0) return 0.0;
  const double inter = bev_intersection_area(a, b);
  const double uni = area_a + area_b - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

inline double iou_3d(const Box3D& a, const Box3D& b) {
  const double vol_a = a.volume();
  const double vol_b = b.volume();
  if (vol_a <= 0.0 || vol_b <= 0.0) return 0.0;
  const double y_overlap = std::min(a.center.y() + 0.5 * a.dims.h, b.center.y() + 0.5 * b.dims.h) -
                           std::max(a.center.y() - 0.5 * a.dims.h, b.center.y() - 0.5 * b.dims.h);
  if (y_overlap <= 0.0) return 0.0;
  const double inter = bev_intersection_area(a, b) * y_overlap;
  const double uni = vol_a + vol_b - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

}  // namespace mono3d
