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
/// \brief KITTI-style Average Precision for 2D, bird's-eye-view and 3D
/// detection with easy / moderate / hard difficulty filtering.

#pragma once

#include <algorithm>
#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mono3d/common.hpp"
#include "mono3d/geometry.hpp"
#include "mono3d/kitti_io.hpp"

namespace mono3d {

enum class Task { k2D, kBEV, k3D };
enum class Difficulty { kEasy, kModerate, kHard };

inline constexpr std::array<Task, 3> kAllTasks = {Task::k2D, Task::kBEV, Task::k3D};
inline constexpr std::array<Difficulty, 3> kAllDifficulties = {Difficulty::kEasy, Difficulty::kModerate, Difficulty::kHard};

inline const char* to_string(Task t) {
  switch (t) {
    case Task::k2D: return "2D";
    case Task::kBEV: return "BEV";
    case Task::k3D: return "3D";
  }
  return "?";
}

inline const char* to_string(Difficulty d) {
  switch (d) {
    case Difficulty::kEasy: return "easy";
    case Difficulty::kModerate: return "moderate";
    case Difficulty::kHard: return "hard";
  }
  return "?";
}

/// Ground truth passes a difficulty when it is at least `min_height` pixels
/// tall and no more occluded or truncated than the limits.
struct DifficultyFilter {
  double min_height = 0.0;
  int max_occlusion = 0;
  double max_truncation = 0.0;

  static DifficultyFilter preset(Difficulty d) {
    switch (d) {
      case Difficulty::kEasy: return {40.0, 0, 0.15};
      case Difficulty::kModerate: return {25.0, 1, 0.30};
      case Difficulty::kHard: return {25.0, 2, 0.50};
    }
    return {};
  }

  bool accepts(const KittiObject& o) const {
    return o.bbox.height() >= min_height && o.occlusion <= max_occlusion && o.truncation <= max_truncation;
  }
};

struct EvalConfig {
  std::vector<std::string> classes = {"Car", "Pedestrian", "Cyclist"};
  std::map<std::string, double> min_overlap = {{"Car", 0.7}, {"Pedestrian", 0.5}, {"Cyclist", 0.5}};
  /// 11 (default) or 40 recall sample points.
  int points = 11;

  double overlap_for(const std::string& cls) const {
    const auto it = min_overlap.find(cls);
    return it == min_overlap.end() ? 0.5 : it->second;
  }
};

enum class MatchOutcome { kTruePositive, kFalsePositive, kIgnored };

struct EvalBox {
  Box2D box;
  Box3D box3d;
  double score = 0.0;
};

struct EvalGroundTruth {
  EvalBox box;
  bool ignored = false;
};

struct MatchResult {
  std::vector<MatchOutcome> outcomes;
  /// (detection, ground truth) pairs of true positives.
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  std::size_t num_gt = 0;
};

using IouFn = std::function<double(const EvalBox&, const EvalBox&)>;

inline IouFn iou_for(Task task) {
  switch (task) {
    case Task::k2D: return [](const EvalBox& a, const EvalBox& b) { return iou_2d(a.box, b.box); };
    case Task::kBEV: return [](const EvalBox& a, const EvalBox& b) { return iou_bev(a.box3d, b.box3d); };
    case Task::k3D: return [](const EvalBox& a, const EvalBox& b) { return iou_3d(a.box3d, b.box3d); };
  }
  return {};
}

/// Fraction of `det` covered by a don't-care region above which an
/// unmatched detection is ignored.
inline constexpr double kDontCareCoverage = 0.5;

/// Greedy matching of score-sorted detections. Each detection takes the
/// highest-IoU unmatched, non-ignored ground truth with IoU >= thresh (ties
/// to the lower index) and becomes a true positive. Failing that, it is
/// ignored if it reaches thresh against an ignored ground truth or is mostly
/// inside a don't-care region, and a false positive otherwise.
inline MatchResult match_detections(std::span<const EvalBox> dets, std::span<const EvalGroundTruth> gts,
                                    const IouFn& iou, double thresh, std::span<const Box2D> dont_care = {}) {
  MatchResult r;
  r.outcomes.resize(dets.size(), MatchOutcome::kFalsePositive);
  std::vector<bool> used(gts.size(), false);
  for (const auto& g : gts) r.num_gt += g.ignored ? 0 : 1;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    std::optional<std::size_t> best;
    double best_iou = thresh;
    bool hits_ignored = false;
    for (std::size_t j = 0; j < gts.size(); ++j) {
      const double v = iou(dets[i], gts[j].box);
      if (gts[j].ignored) {
        hits_ignored = hits_ignored || v >= thresh;
        continue;
      }
      if (used[j] || v < thresh) continue;
      if (!best || v > best_iou) {
        best = j;
        best_iou = v;
      }
    }
    if (best) {
      used[*best] = true;
      r.outcomes[i] = MatchOutcome::kTruePositive;
      r.pairs.emplace_back(i, *best);
      continue;
    }
    if (hits_ignored) {
      r.outcomes[i] = MatchOutcome::kIgnored;
      continue;
    }
    const double area = dets[i].box.area();
    for (const auto& dc : dont_care) {
      const double iw = std::min(dets[i].box.x_max, dc.x_max) - std::max(dets[i].box.x_min, dc.x_min);
      const double ih = std::min(dets[i].box.y_max, dc.y_max) - std::max(dets[i].box.y_min, dc.y_min);
      if (area > 0.0 && iw > 0.0 && ih > 0.0 && iw * ih / area >= kDontCareCoverage) {
        r.outcomes[i] = MatchOutcome::kIgnored;
        break;
      }
    }
  }
  return r;
}

/// Interpolated AP: the mean over recall levels r of the best precision
/// reached at recall >= r. 11 points use r = 0, 0.1, ..., 1; 40 points use
/// r = 1/40, ..., 1. Ignored detections are skipped; num_gt = 0 gives 0.
inline double average_precision(std::span<const MatchOutcome> outcomes, std::span<const double> scores,
                                std::size_t num_gt, int points = 11) {
  if (outcomes.size() != scores.size()) throw Error(ErrorCode::kLengthMismatch, "outcomes and scores differ in length");
  if (points != 11 && points != 40) throw Error(ErrorCode::kInvalidConfig, "AP supports 11 or 40 points");
  if (num_gt == 0) return 0.0;
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    if (outcomes[i] != MatchOutcome::kIgnored) order.push_back(i);
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<double> precision, recall;
  std::size_t tp = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (outcomes[order[k]] == MatchOutcome::kTruePositive) ++tp;
    precision.push_back(static_cast<double>(tp) / static_cast<double>(k + 1));
    recall.push_back(static_cast<double>(tp) / static_cast<double>(num_gt));
  }
  // Running max from the tail gives the best precision at recall >= r.
  for (std::size_t k = precision.size(); k-- > 1;) precision[k - 1] = std::max(precision[k - 1], precision[k]);
  double sum = 0.0;
  const int first = points == 11 ? 0 : 1;
  const int steps = points == 11 ? 10 : 40;
  for (int i = first; i <= steps; ++i) {
    const double r = static_cast<double>(i) / steps;
    const auto it = std::lower_bound(recall.begin(), recall.end(), r);
    if (it != recall.end()) sum += precision[static_cast<std::size_t>(it - recall.begin())];
  }
  return sum / points;
}

/// One evaluated image: ground truth and detections in KITTI label form.
struct EvalFrame {
  std::string id;
  std::vector<KittiObject> gt;
  std::vector<KittiObject> dets;
};

struct ApRow {
  Task task = Task::k2D;
  std::string cls;
  Difficulty difficulty = Difficulty::kEasy;
  double ap = 0.0;
  std::size_t num_gt = 0;
  std::size_t num_det = 0;
};

struct EvalReport {
  std::vector<ApRow> rows;

  const ApRow* find(Task t, const std::string& cls, Difficulty d) const {
    for (const auto& r : rows) {
      if (r.task == t && r.cls == cls && r.difficulty == d) return &r;
    }
    return nullptr;
  }
};

inline EvalBox to_eval_box(const KittiObject& o) {
  return {o.bbox, object_to_box3d(o), o.score.value_or(1.0)};
}

namespace eval_detail {

/// Classes whose ground truth is neutral for `cls` rather than a miss.
inline bool is_neighbor_class(const std::string& cls, const std::string& type) {
  return (cls == "Car" && type == "Van") || (cls == "Pedestrian" && type == "Person_sitting");
}

/// Score-descending order with a coordinate tie-break, so the result does
/// not depend on the order detections appear in a file.
inline bool det_before(const KittiObject& a, const KittiObject& b) {
  const double sa = a.score.value_or(1.0), sb = b.score.value_or(1.0);
  if (sa != sb) return sa > sb;
  const auto ka = std::array{a.bbox.x_min, a.bbox.y_min, a.bbox.x_max, a.bbox.y_max, a.location.x(), a.location.y(),
                             a.location.z(), a.h, a.w, a.l, a.rotation_y, a.alpha};
  const auto kb = std::array{b.bbox.x_min, b.bbox.y_min, b.bbox.x_max, b.bbox.y_max, b.location.x(), b.location.y(),
                             b.location.z(), b.h, b.w, b.l, b.rotation_y, b.alpha};
  return ka < kb;
}

}  // namespace eval_detail

/// AP for every (task, class, difficulty). Ground truth of the class that
/// fails the difficulty filter, neighbouring classes and detections shorter
/// than the difficulty's minimum height are neutral.
inline EvalReport evaluate(std::span<const EvalFrame> frames, const EvalConfig& cfg = {}) {
  EvalReport report;
  for (Task task : kAllTasks) {
    const IouFn iou = iou_for(task);
    for (const auto& cls : cfg.classes) {
      const double thresh = cfg.overlap_for(cls);
      for (Difficulty diff : kAllDifficulties) {
        const DifficultyFilter filter = DifficultyFilter::preset(diff);
        std::vector<MatchOutcome> outcomes;
        std::vector<double> scores;
        std::size_t num_gt = 0;
        for (const auto& frame : frames) {
          std::vector<EvalGroundTruth> gts;
          std::vector<Box2D> dont_care;
          for (const auto& g : frame.gt) {
            if (g.is_dont_care()) {
              dont_care.push_back(g.bbox);
            } else if (g.type == cls) {
              gts.push_back({to_eval_box(g), !filter.accepts(g)});
            } else if (eval_detail::is_neighbor_class(cls, g.type)) {
              gts.push_back({to_eval_box(g), true});
            }
          }
          std::vector<KittiObject> dets;
          for (const auto& d : frame.dets) {
            if (d.type == cls && d.bbox.height() >= filter.min_height) dets.push_back(d);
          }
          std::stable_sort(dets.begin(), dets.end(), eval_detail::det_before);
          std::vector<EvalBox> boxes;
          for (const auto& d : dets) boxes.push_back(to_eval_box(d));
          const MatchResult m = match_detections(boxes, gts, iou, thresh, dont_care);
          num_gt += m.num_gt;
          outcomes.insert(outcomes.end(), m.outcomes.begin(), m.outcomes.end());
          for (const auto& b : boxes) scores.push_back(b.score);
        }
        ApRow row;
        row.task = task;
        row.cls = cls;
        row.difficulty = diff;
        row.num_gt = num_gt;
        row.num_det = static_cast<std::size_t>(std::count_if(outcomes.begin(), outcomes.end(),
                                                             [](MatchOutcome o) { return o != MatchOutcome::kIgnored; }));
        row.ap = average_precision(outcomes, scores, num_gt, cfg.points);
        report.rows.push_back(row);
      }
    }
  }
  return report;
}

/// Aligned human-readable table, AP in percent.
inline std::string format_report_text(const EvalReport& report) {
  std::string out;
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%-5s %-12s %-10s %8s %8s %8s\n", "task", "class", "difficulty", "AP", "num_gt", "num_det");
  out += buf;
  for (const auto& r : report.rows) {
    std::snprintf(buf, sizeof(buf), "%-5s %-12s %-10s %8.2f %8zu %8zu\n", to_string(r.task), r.cls.c_str(),
                  to_string(r.difficulty), 100.0 * r.ap, r.num_gt, r.num_det);
    out += buf;
  }
  return out;
}

/// Tab-separated table, AP as a fraction in [0, 1].
inline std::string format_report_tsv(const EvalReport& report) {
  std::string out = "task\tclass\tdifficulty\tap\tnum_gt\tnum_det\n";
  char buf[64];
  for (const auto& r : report.rows) {
    std::snprintf(buf, sizeof(buf), "%.6f", r.ap);
    out += std::string(to_string(r.task)) + "\t" + r.cls + "\t" + to_string(r.difficulty) + "\t" + buf + "\t" +
           std::to_string(r.num_gt) + "\t" + std::to_string(r.num_det) + "\n";
  }
  return out;
}

inline std::string read_text_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Loads frames by file stem. `ids` selects frames explicitly; otherwise
/// every *.txt in `gt_dir` is used. A missing result file means no
/// detections for that frame.
inline std::vector<EvalFrame> load_frames(const std::filesystem::path& results_dir, const std::filesystem::path& gt_dir,
                                          std::optional<std::vector<std::string>> ids = std::nullopt) {
  namespace fs = std::filesystem;
  if (!ids) {
    ids.emplace();
    if (!fs::is_directory(gt_dir)) throw Error(ErrorCode::kIoError, "not a directory: " + gt_dir.string());
    for (const auto& e : fs::directory_iterator(gt_dir)) {
      if (e.is_regular_file() && e.path().extension() == ".txt") ids->push_back(e.path().stem().string());
    }
    std::sort(ids->begin(), ids->end());
  }
  std::vector<EvalFrame> frames;
  for (const auto& id : *ids) {
    EvalFrame f;
    f.id = id;
    const fs::path gt_path = gt_dir / (id + ".txt");
    const fs::path det_path = results_dir / (id + ".txt");
    auto load = [](const fs::path& p) {
      try {
        return parse_label_file(read_text_file(p));
      } catch (const Error& e) {
        throw Error(e.code(), p.string() + ": " + e.detail());
      }
    };
    f.gt = load(gt_path);
    if (fs::exists(det_path)) f.dets = load(det_path);
    frames.push_back(std::move(f));
  }
  return frames;
}

}  // namespace mono3d
