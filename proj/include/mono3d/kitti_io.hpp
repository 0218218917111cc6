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
/// \brief KITTI label / calibration text formats, angle and center
/// conventions, submission output and the flat key=value run config.

#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "mono3d/anchors.hpp"
#include "mono3d/common.hpp"
#include "mono3d/geometry.hpp"
#include "mono3d/inference.hpp"
#include "mono3d/losses.hpp"

namespace mono3d {

/// One line of a KITTI label_2 file. Dimensions are in KITTI order (h, w, l)
/// and `location` is the bottom-center of the box in camera coordinates.
struct KittiObject {
  std::string type;
  double truncation = 0.0;
  int occlusion = 0;
  double alpha = 0.0;
  Box2D bbox;
  double h = 0.0;
  double w = 0.0;
  double l = 0.0;
  Vec3 location = Vec3::Zero();
  double rotation_y = 0.0;
  std::optional<double> score;

  bool is_dont_care() const { return type == "DontCare"; }
};

/// Decimal places used for every real field written by this module.
inline constexpr int kOutputPrecision = 6;

namespace kitti_detail {

inline std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    const std::size_t start = i;
    while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

inline double to_double(std::string_view s, std::size_t line, std::size_t field) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (first != last && *first == '+') ++first;
  auto res = std::from_chars(first, last, v);
  if (res.ec != std::errc() || res.ptr != last || !std::isfinite(v)) {
    throw Error(ErrorCode::kParseError, "line " + std::to_string(line) + ", field " + std::to_string(field) +
                                            ": expected a number, got '" + std::string(s) + "'");
  }
  return v;
}

inline int to_int(std::string_view s, std::size_t line, std::size_t field) {
  const double v = to_double(s, line, field);
  if (v != std::floor(v)) {
    throw Error(ErrorCode::kParseError, "line " + std::to_string(line) + ", field " + std::to_string(field) +
                                            ": expected an integer, got '" + std::string(s) + "'");
  }
  return static_cast<int>(v);
}

inline void append_fixed(std::string& out, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", kOutputPrecision, v);
  std::string_view text(buf);
  // A negative value that rounds to zero prints as "-0.000000".
  if (text.front() == '-' && text.find_first_not_of("-0.") == std::string_view::npos) text.remove_prefix(1);
  out += text;
}

}  // namespace kitti_detail

/// Parses KITTI label_2 text: 15 fields per object, 16 with a trailing score.
/// Blank lines are skipped; line and field numbers in errors are 1-based.
inline std::vector<KittiObject> parse_label_file(std::string_view text) {
  using namespace kitti_detail;
  std::vector<KittiObject> out;
  std::size_t lineno = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++lineno;
    const auto f = split_ws(line);
    if (f.empty()) {
      if (end == text.size()) break;
      continue;
    }
    if (f.size() != 15 && f.size() != 16) {
      throw Error(ErrorCode::kParseError, "line " + std::to_string(lineno) + ": expected 15 or 16 fields, got " +
                                              std::to_string(f.size()));
    }
    KittiObject o;
    o.type = std::string(f[0]);
    o.truncation = to_double(f[1], lineno, 2);
    o.occlusion = to_int(f[2], lineno, 3);
    o.alpha = to_double(f[3], lineno, 4);
    o.bbox = {to_double(f[4], lineno, 5), to_double(f[5], lineno, 6), to_double(f[6], lineno, 7), to_double(f[7], lineno, 8)};
    o.h = to_double(f[8], lineno, 9);
    o.w = to_double(f[9], lineno, 10);
    o.l = to_double(f[10], lineno, 11);
    o.location = Vec3(to_double(f[11], lineno, 12), to_double(f[12], lineno, 13), to_double(f[13], lineno, 14));
    o.rotation_y = to_double(f[14], lineno, 15);
    if (f.size() == 16) o.score = to_double(f[15], lineno, 16);
    if (o.occlusion < -1 || o.occlusion > 3) {
      throw Error(ErrorCode::kParseError, "line " + std::to_string(lineno) + ", field 3: occlusion must be in {0,1,2,3}");
    }
    out.push_back(std::move(o));
    if (end == text.size()) break;
  }
  return out;
}

/// One label line with fixed 6-decimal reals and the score last when present.
inline std::string format_object(const KittiObject& o) {
  std::string s = o.type;
  auto num = [&](double v) {
    s += ' ';
    kitti_detail::append_fixed(s, v);
  };
  num(o.truncation);
  s += ' ';
  s += std::to_string(o.occlusion);
  for (double v : {o.alpha, o.bbox.x_min, o.bbox.y_min, o.bbox.x_max, o.bbox.y_max, o.h, o.w, o.l, o.location.x(),
                   o.location.y(), o.location.z(), o.rotation_y}) {
    num(v);
  }
  if (o.score) num(*o.score);
  return s;
}

inline std::string write_label_file(std::span<const KittiObject> objects) {
  std::string out;
  for (const auto& o : objects) {
    out += format_object(o);
    out += '\n';
  }
  return out;
}

/// Reads the "P2:" record (12 row-major floats) of a KITTI calib file.
inline CameraCalibration parse_calib_file(std::string_view text) {
  using namespace kitti_detail;
  std::size_t lineno = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++lineno;
    const auto f = split_ws(line);
    if (f.empty() || f[0] != "P2:") continue;
    if (f.size() != 13) {
      throw Error(ErrorCode::kParseError, "line " + std::to_string(lineno) + ": P2 needs 12 values, got " +
                                              std::to_string(f.size() - 1));
    }
    Mat34 p;
    for (int i = 0; i < 12; ++i) p(i / 4, i % 4) = to_double(f[static_cast<std::size_t>(i) + 1], lineno, static_cast<std::size_t>(i) + 2);
    return CameraCalibration(p);
  }
  throw Error(ErrorCode::kMissingRecord, "calibration has no P2 record");
}

inline std::string format_calib_p2(const CameraCalibration& calib) {
  std::string s = "P2:";
  for (int i = 0; i < 12; ++i) {
    s += ' ';
    s += detail::format_exact(calib.p()(i / 4, i % 4));
  }
  return s + "\n";
}

inline double alpha_to_ry(double alpha, double x, double z) {
  if (!(z > 0.0)) throw Error(ErrorCode::kNonPositiveDepth, "alpha/rotation_y conversion needs z > 0");
  return observation_to_yaw(alpha, x, z);
}

inline double ry_to_alpha(double ry, double x, double z) {
  if (!(z > 0.0)) throw Error(ErrorCode::kNonPositiveDepth, "alpha/rotation_y conversion needs z > 0");
  return yaw_to_observation(ry, x, z);
}

/// Camera Y points down, so the geometric center sits h/2 above the bottom.
inline Vec3 bottom_center_to_center(const Vec3& bottom, double h) {
  return {bottom.x(), bottom.y() - 0.5 * h, bottom.z()};
}

inline Vec3 center_to_bottom_center(const Vec3& center, double h) {
  return {center.x(), center.y() + 0.5 * h, center.z()};
}

inline Box3D object_to_box3d(const KittiObject& o) {
  return {bottom_center_to_center(o.location, o.h), Dims3{o.w, o.h, o.l}, o.rotation_y};
}

inline const std::vector<std::string>& default_class_names() {
  static const std::vector<std::string> names = {"Background", "Car", "Pedestrian", "Cyclist"};
  return names;
}

/// Submission-format object for a detection. The camera-space center is
/// recomputed from the projected center so the output only depends on the
/// detection's network-space parameters and the calibration.
inline KittiObject detection_to_object(const Detection& d, const CameraCalibration& calib,
                                       std::span<const std::string> class_names) {
  KittiObject o;
  const auto ci = static_cast<std::size_t>(d.class_index);
  o.type = ci < class_names.size() ? class_names[ci] : "Class" + std::to_string(d.class_index);
  o.truncation = -1.0;
  o.occlusion = -1;
  const Vec3 center = back_project(calib, d.box3d.center);
  o.alpha = wrap_angle(d.box3d.theta_obs);
  o.bbox = d.box;
  o.h = d.box3d.dims.h;
  o.w = d.box3d.dims.w;
  o.l = d.box3d.dims.l;
  o.location = center_to_bottom_center(center, o.h);
  o.rotation_y = alpha_to_ry(o.alpha, center.x(), center.z());
  o.score = d.score;
  return o;
}

/// Inverse of detection_to_object for result files fed back through the
/// post-optimizer. Class indices follow `class_names`.
inline Detection object_to_detection(const KittiObject& o, const CameraCalibration& calib,
                                     std::span<const std::string> class_names) {
  Detection d;
  const auto it = std::find(class_names.begin(), class_names.end(), o.type);
  d.class_index = it == class_names.end() ? -1 : static_cast<int>(it - class_names.begin());
  d.score = o.score.value_or(1.0);
  d.box = o.bbox;
  const Vec3 center = bottom_center_to_center(o.location, o.h);
  d.center_cam = center;
  d.box3d.center = project_center(calib, center);
  d.box3d.dims = {o.w, o.h, o.l};
  d.box3d.theta_obs = wrap_angle(o.alpha);
  return d;
}

inline std::string write_results(std::span<const Detection> dets, const CameraCalibration& calib,
                                 std::span<const std::string> class_names = default_class_names()) {
  std::string out;
  for (const auto& d : dets) {
    out += format_object(detection_to_object(d, calib, class_names));
    out += '\n';
  }
  return out;
}

/// Every tunable of the CLI. Defaults reproduce the published settings:
/// 12 scales of 30 * 1.265^i with ratios {0.5, 1, 1.5}, b = 32, score >= 0.75,
/// NMS IoU 0.4, sigma = 0.3 pi, beta = 0.01, gamma = 0.5, lambda1 = lambda2 = 1,
/// mining 20%.
struct RunConfig {
  double anchor_base = 30.0;
  double anchor_rate = 1.265;
  int anchor_count = 12;
  std::vector<double> anchor_ratios = {0.5, 1.0, 1.5};
  int bins = 32;
  double stride = 16.0;
  int image_width = 1242;
  int image_height = 375;
  double prior_iou = 0.5;
  double score_thresh = 0.75;
  double nms_iou = 0.4;
  bool post_optimize = true;
  PostOptConfig postopt;
  LossConfig loss;
  std::vector<std::string> class_names = default_class_names();
  int ap_points = 11;

  int feat_w() const { return static_cast<int>(std::ceil(image_width / stride)); }
  int feat_h() const { return static_cast<int>(std::ceil(image_height / stride)); }

  PipelineConfig pipeline() const {
    PipelineConfig p;
    p.stride = stride;
    p.score_thresh = score_thresh;
    p.nms_iou = nms_iou;
    p.post_optimize = post_optimize;
    p.postopt = postopt;
    return p;
  }

  void validate() const {
    postopt.validate();
    loss.validate();
    if (bins < 1) throw Error(ErrorCode::kInvalidConfig, "bins must be >= 1");
    if (!(stride > 0.0) || image_width <= 0 || image_height <= 0) throw Error(ErrorCode::kInvalidConfig, "image size and stride must be positive");
    if (class_names.size() < 2) throw Error(ErrorCode::kInvalidConfig, "classes must list background plus at least one class");
    if (ap_points != 11 && ap_points != 40) throw Error(ErrorCode::kInvalidConfig, "ap_points must be 11 or 40");
    if (!(score_thresh >= 0.0 && score_thresh <= 1.0) || !(nms_iou >= 0.0 && nms_iou <= 1.0)) {
      throw Error(ErrorCode::kInvalidConfig, "score_thresh and nms_iou must be in [0, 1]");
    }
    generate_templates(anchor_base, anchor_rate, anchor_count, anchor_ratios);
  }
};

namespace kitti_detail {

inline std::string trim(std::string_view s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return std::string(s.substr(a, b - a));
}

inline std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    std::size_t end = s.find(',', pos);
    if (end == std::string_view::npos) end = s.size();
    out.push_back(trim(s.substr(pos, end - pos)));
    pos = end + 1;
  }
  return out;
}

}  // namespace kitti_detail

/// Applies one `key=value` setting. Unknown keys are an error.
inline void apply_setting(RunConfig& cfg, std::string_view key, std::string_view value, std::size_t lineno = 0) {
  using namespace kitti_detail;
  const std::string v = trim(value);
  auto real = [&] { return to_double(v, lineno, 2); };
  auto integer = [&] { return to_int(v, lineno, 2); };
  const std::string k = trim(key);
  if (k == "anchor_base") cfg.anchor_base = real();
  else if (k == "anchor_rate") cfg.anchor_rate = real();
  else if (k == "anchor_count") cfg.anchor_count = integer();
  else if (k == "anchor_ratios") {
    cfg.anchor_ratios.clear();
    for (const auto& item : split_list(v)) cfg.anchor_ratios.push_back(to_double(item, lineno, 2));
  } else if (k == "bins") cfg.bins = integer();
  else if (k == "stride") cfg.stride = real();
  else if (k == "image_width") cfg.image_width = integer();
  else if (k == "image_height") cfg.image_height = integer();
  else if (k == "prior_iou") cfg.prior_iou = real();
  else if (k == "score_thresh") cfg.score_thresh = real();
  else if (k == "nms_iou") cfg.nms_iou = real();
  else if (k == "post_optimize") {
    if (v == "true" || v == "1") cfg.post_optimize = true;
    else if (v == "false" || v == "0") cfg.post_optimize = false;
    else throw Error(ErrorCode::kParseError, "line " + std::to_string(lineno) + ": post_optimize must be true/false");
  } else if (k == "postopt_sigma") cfg.postopt.sigma = real();
  else if (k == "postopt_beta") cfg.postopt.beta = real();
  else if (k == "postopt_gamma") cfg.postopt.gamma = real();
  else if (k == "lambda1") cfg.loss.lambda1 = real();
  else if (k == "lambda2") cfg.loss.lambda2 = real();
  else if (k == "mining_fraction") cfg.loss.mining_fraction = real();
  else if (k == "iou_floor") cfg.loss.iou_floor = real();
  else if (k == "classes") {
    cfg.class_names = {"Background"};
    for (const auto& item : split_list(v)) cfg.class_names.push_back(item);
    cfg.loss.num_classes = static_cast<int>(cfg.class_names.size());
  } else if (k == "ap_points") cfg.ap_points = integer();
  else throw Error(ErrorCode::kParseError, "line " + std::to_string(lineno) + ": unknown key '" + k + "'");
}

/// Flat `key=value` text; '#' starts a comment.
inline RunConfig parse_config(std::string_view text, RunConfig cfg = {}) {
  std::size_t lineno = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    if (kitti_detail::trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw Error(ErrorCode::kParseError, "line " + std::to_string(lineno) + ": expected key=value");
    }
    apply_setting(cfg, line.substr(0, eq), line.substr(eq + 1), lineno);
  }
  cfg.validate();
  return cfg;
}

inline std::string format_config(const RunConfig& cfg) {
  auto real = [](double v) { return detail::format_exact(v); };
  std::string ratios;
  for (std::size_t i = 0; i < cfg.anchor_ratios.size(); ++i) ratios += (i ? "," : "") + real(cfg.anchor_ratios[i]);
  std::string classes;
  for (std::size_t i = 1; i < cfg.class_names.size(); ++i) classes += (i > 1 ? "," : "") + cfg.class_names[i];
  std::ostringstream s;
  s << "anchor_base=" << real(cfg.anchor_base) << "\n"
    << "anchor_rate=" << real(cfg.anchor_rate) << "\n"
    << "anchor_count=" << cfg.anchor_count << "\n"
    << "anchor_ratios=" << ratios << "\n"
    << "bins=" << cfg.bins << "\n"
    << "stride=" << real(cfg.stride) << "\n"
    << "image_width=" << cfg.image_width << "\n"
    << "image_height=" << cfg.image_height << "\n"
    << "prior_iou=" << real(cfg.prior_iou) << "\n"
    << "score_thresh=" << real(cfg.score_thresh) << "\n"
    << "nms_iou=" << real(cfg.nms_iou) << "\n"
    << "post_optimize=" << (cfg.post_optimize ? "true" : "false") << "\n"
    << "postopt_sigma=" << real(cfg.postopt.sigma) << "\n"
    << "postopt_beta=" << real(cfg.postopt.beta) << "\n"
    << "postopt_gamma=" << real(cfg.postopt.gamma) << "\n"
    << "lambda1=" << real(cfg.loss.lambda1) << "\n"
    << "lambda2=" << real(cfg.loss.lambda2) << "\n"
    << "mining_fraction=" << real(cfg.loss.mining_fraction) << "\n"
    << "iou_floor=" << real(cfg.loss.iou_floor) << "\n"
    << "classes=" << classes << "\n"
    << "ap_points=" << cfg.ap_points << "\n";
  return s.str();
}

}  // namespace mono3d
