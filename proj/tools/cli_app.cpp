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

#include "cli_app.hpp"

#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "CLI11.hpp"
#include "mono3d/mono3d.hpp"
#include "selftest.hpp"
#include "synthetic.hpp"

namespace mono3d::cli {

namespace fs = std::filesystem;

namespace {

/// Stages several output files and publishes them together: every file is
/// fully written to a temporary sibling before any is renamed into place.
class OutputBatch {
 public:
  void add(fs::path path, std::string content) { files_.emplace_back(std::move(path), std::move(content)); }

  void commit() {
    std::vector<fs::path> temps;
    try {
      for (const auto& [path, content] : files_) {
        if (path.has_parent_path()) fs::create_directories(path.parent_path());
        fs::path tmp = path;
        tmp += ".tmp." + std::to_string(::getpid());
        temps.push_back(tmp);
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        out.close();
        if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
      }
      for (std::size_t i = 0; i < files_.size(); ++i) fs::rename(temps[i], files_[i].first);
    } catch (...) {
      std::error_code ec;
      for (const auto& t : temps) fs::remove(t, ec);
      throw;
    }
  }

 private:
  std::vector<std::pair<fs::path, std::string>> files_;
};

template <typename F>
auto with_path(const fs::path& path, F&& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.detail());
  }
}

std::vector<NamedTensor> read_container(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + path.string());
  return with_path(path, [&] { return container::read(in); });
}

std::string container_bytes(std::span<const NamedTensor> tensors) {
  std::ostringstream out(std::ios::binary);
  container::write(out, tensors);
  return out.str();
}

std::vector<std::string> read_id_list(const fs::path& path) {
  std::vector<std::string> ids;
  std::istringstream in(read_text_file(path));
  for (std::string line; std::getline(in, line);) {
    const std::string id = kitti_detail::trim(line);
    if (!id.empty()) ids.push_back(id);
  }
  return ids;
}

std::vector<std::string> txt_stems(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error(ErrorCode::kIoError, "not a directory: " + dir.string());
  std::vector<std::string> ids;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".txt") ids.push_back(e.path().stem().string());
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

/// Calibration for frame `id`: `path` is either one shared calib file or a
/// directory of per-frame files.
class CalibSource {
 public:
  explicit CalibSource(fs::path path) : path_(std::move(path)), per_frame_(fs::is_directory(path_)) {}

  const CameraCalibration& get(const std::string& id) {
    const fs::path file = per_frame_ ? path_ / (id + ".txt") : path_;
    auto it = cache_.find(file.string());
    if (it == cache_.end()) {
      auto calib = with_path(file, [&] { return parse_calib_file(read_text_file(file)); });
      it = cache_.emplace(file.string(), calib).first;
    }
    return it->second;
  }

 private:
  fs::path path_;
  bool per_frame_;
  std::map<std::string, CameraCalibration> cache_;
};

struct CommonOptions {
  std::string config;
  std::vector<std::string> overrides;
};

RunConfig load_config(const CommonOptions& c) {
  RunConfig cfg;
  if (!c.config.empty()) cfg = with_path(c.config, [&] { return parse_config(read_text_file(c.config)); });
  for (const auto& kv : c.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::kInvalidConfig, "--set expects key=value, got '" + kv + "'");
    apply_setting(cfg, std::string_view(kv).substr(0, eq), std::string_view(kv).substr(eq + 1));
  }
  cfg.validate();
  return cfg;
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

// ---------------------------------------------------------------- priors

struct PriorsOptions {
  std::string labels, calib, out, list;
};

int cmd_priors(const PriorsOptions& o, const RunConfig& cfg, std::ostream& out) {
  const auto ids = o.list.empty() ? txt_stems(o.labels) : read_id_list(o.list);
  CalibSource calibs(o.calib);
  std::vector<AnchorGroundTruth> gts;
  std::size_t skipped = 0;
  for (const auto& id : ids) {
    const fs::path label_path = fs::path(o.labels) / (id + ".txt");
    const auto objects = with_path(label_path, [&] { return parse_label_file(read_text_file(label_path)); });
    const CameraCalibration& calib = calibs.get(id);
    for (const auto& obj : objects) {
      const auto it = std::find(cfg.class_names.begin() + 1, cfg.class_names.end(), obj.type);
      if (obj.is_dont_care() || it == cfg.class_names.end()) continue;
      const Vec3 center = bottom_center_to_center(obj.location, obj.h);
      const Vec3 h = calib.p() * center.homogeneous();
      if (!(h.z() > 0.0) || !(obj.bbox.width() > 0.0) || !(obj.bbox.height() > 0.0) || !(obj.w > 0.0) ||
          !(obj.h > 0.0) || !(obj.l > 0.0)) {
        ++skipped;
        continue;
      }
      AnchorGroundTruth gt;
      gt.box = obj.bbox;
      gt.class_index = static_cast<int>(it - cfg.class_names.begin());
      gt.box3d = {project_center(calib, center), Dims3{obj.w, obj.h, obj.l}, wrap_angle(obj.alpha)};
      gts.push_back(gt);
    }
  }
  const auto templates = generate_templates(cfg.anchor_base, cfg.anchor_rate, cfg.anchor_count, cfg.anchor_ratios);
  const PriorReport report = compute_priors(templates, cfg.feat_w(), cfg.feat_h(), cfg.stride, gts, cfg.prior_iou);
  OutputBatch batch;
  batch.add(o.out, write_prior_table(report));
  batch.commit();
  const auto fallback = std::count(report.fallback.begin(), report.fallback.end(), true);
  out << "priors: " << gts.size() << " ground truths from " << ids.size() << " frames (" << skipped << " skipped), "
      << report.templates.size() << " templates, " << fallback << " without matches\n";
  for (std::size_t i = 0; i < report.fallback.size(); ++i) {
    if (report.fallback[i]) out << "  template " << i << " matched nothing; using the dataset mean\n";
  }
  return kExitOk;
}

// ---------------------------------------------------------------- infer

struct InferOptions {
  std::string features, params, priors, calib, out;
  bool no_postopt = false;
};

int cmd_infer(const InferOptions& o, RunConfig cfg, std::ostream& out) {
  if (o.no_postopt) cfg.post_optimize = false;
  const auto feature_records = read_container(o.features);
  const Tensor& features = feature_records.size() == 1 ? feature_records.front().tensor
                                                        : container::find(feature_records, "features");
  if (features.rank() != 3) throw Error(ErrorCode::kShapeMismatch, "features must be [C, H, W], got " + features.shape_string());
  const auto params = with_path(o.params, [&] { return HeadParams::from_container(read_container(o.params)); });
  const auto priors = with_path(o.priors, [&] { return parse_prior_table(read_text_file(o.priors)); });
  const auto calib = with_path(o.calib, [&] { return parse_calib_file(read_text_file(o.calib)); });
  const auto dets = run_pipeline(features, params, priors.templates, calib, cfg.pipeline());
  OutputBatch batch;
  batch.add(o.out, write_results(dets, calib, cfg.class_names));
  batch.commit();
  out << "infer: " << dets.size() << " detections (b = " << params.bins() << ", post-optimization "
      << (cfg.post_optimize ? "on" : "off") << ")\n";
  return kExitOk;
}

// ---------------------------------------------------------------- postopt

struct PostoptOptions {
  std::string results, calib, out;
};

struct PostoptStats {
  std::size_t optimized = 0;
  std::size_t skipped = 0;
  double l1_before = 0.0;
  double l1_after = 0.0;
};

std::string postopt_file(const std::string& text, const CameraCalibration& calib, const RunConfig& cfg,
                         PostoptStats& stats) {
  auto objects = parse_label_file(text);
  for (auto& obj : objects) {
    if (obj.is_dont_care()) continue;
    const Vec3 center = bottom_center_to_center(obj.location, obj.h);
    try {
      const Detection det = object_to_detection(obj, calib, cfg.class_names);
      const PostOptResult r = optimize_theta(det, calib, cfg.postopt);
      obj.alpha = r.theta;
      obj.rotation_y = alpha_to_ry(r.theta, center.x(), center.z());
      stats.l1_before += r.initial_loss;
      stats.l1_after += r.loss;
      ++stats.optimized;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kNonPositiveDepth && e.code() != ErrorCode::kCornerBehindCamera) throw;
      ++stats.skipped;
    }
  }
  return write_label_file(objects);
}

int cmd_postopt(const PostoptOptions& o, const RunConfig& cfg, std::ostream& out) {
  CalibSource calibs(o.calib);
  PostoptStats stats;
  OutputBatch batch;
  if (fs::is_directory(o.results)) {
    for (const auto& id : txt_stems(o.results)) {
      const fs::path in = fs::path(o.results) / (id + ".txt");
      const CameraCalibration& calib = calibs.get(id);
      batch.add(fs::path(o.out) / (id + ".txt"),
                with_path(in, [&] { return postopt_file(read_text_file(in), calib, cfg, stats); }));
    }
  } else {
    const std::string id = fs::path(o.results).stem().string();
    const CameraCalibration& calib = calibs.get(id);
    batch.add(o.out, with_path(o.results, [&] { return postopt_file(read_text_file(o.results), calib, cfg, stats); }));
  }
  batch.commit();
  const double n = static_cast<double>(std::max<std::size_t>(stats.optimized, 1));
  out << "postopt: " << stats.optimized << " objects optimized, " << stats.skipped << " skipped; mean L1 "
      << fixed(stats.l1_before / n, 4) << " -> " << fixed(stats.l1_after / n, 4) << " px (sigma " << fixed(cfg.postopt.sigma, 6)
      << ", beta " << fixed(cfg.postopt.beta, 6) << ", gamma " << fixed(cfg.postopt.gamma, 6) << ")\n";
  return kExitOk;
}

// ---------------------------------------------------------------- eval

struct EvalOptions {
  std::string results, gt, list, tsv;
  int points = 0;
};

int cmd_eval(const EvalOptions& o, const RunConfig& cfg, std::ostream& out) {
  std::optional<std::vector<std::string>> ids;
  if (!o.list.empty()) ids = read_id_list(o.list);
  const auto frames = load_frames(o.results, o.gt, ids);
  EvalConfig ec;
  ec.classes.assign(cfg.class_names.begin() + 1, cfg.class_names.end());
  ec.points = o.points != 0 ? o.points : cfg.ap_points;
  const EvalReport report = evaluate(frames, ec);
  if (!o.tsv.empty()) {
    OutputBatch batch;
    batch.add(o.tsv, format_report_tsv(report));
    batch.commit();
  }
  out << "eval: " << frames.size() << " frames, " << ec.points << "-point interpolated AP (%)\n" << format_report_text(report);
  return kExitOk;
}

// ---------------------------------------------------------------- bench

struct BenchOptions {
  std::size_t height = 48, width = 160, channels = 32, out_channels = 32, kernel = 3;
  std::vector<std::size_t> bins = {1, 4, 8, 16, 32};
  int repeat = 3;
  std::uint64_t seed = 1;
};

template <typename F>
double best_ms(int repeat, F&& fn) {
  double best = 0.0;
  for (int r = 0; r < repeat; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    best = r == 0 ? ms : std::min(best, ms);
  }
  return best;
}

int cmd_bench(const BenchOptions& o, std::ostream& out) {
  std::mt19937_64 rng(o.seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  auto fill = [&](Tensor t) {
    for (double& v : t.data()) v = u(rng);
    return t;
  };
  const Tensor input = fill(Tensor({o.channels, o.height, o.width}));
  const Tensor w = fill(Tensor({o.out_channels, o.channels, o.kernel, o.kernel}));
  const Tensor b = fill(Tensor({o.out_channels}));
  ConvParams p;
  p.pad = static_cast<int>(o.kernel / 2);
  const std::uint64_t base_flops = flop_count(describe_conv2d(input, w, p));
  Tensor sink;
  const double t_conv = best_ms(o.repeat, [&] { sink = conv2d(input, w, b, p); });

  out << "bench: input [" << o.channels << ", " << o.height << ", " << o.width << "], " << o.out_channels << " outputs, "
      << o.kernel << "x" << o.kernel << " kernel, best of " << o.repeat << "\n";
  char line[200];
  std::snprintf(line, sizeof(line), "%5s %14s %14s %6s %11s %11s %11s %9s %9s\n", "bins", "madds_conv2d", "madds_depth",
                "parity", "conv2d_ms", "loop_ms", "unfold_ms", "overhead", "bitexact");
  out << line;
  bool ok = true;
  for (std::size_t bins : o.bins) {
    const DepthAwareKernelSet ks{fill(Tensor({bins, o.out_channels, o.channels, o.kernel, o.kernel})),
                                 fill(Tensor({bins, o.out_channels}))};
    const std::uint64_t depth_flops = flop_count(describe_depth_aware(input, ks, p));
    Tensor ref, fast;
    const double t_ref = best_ms(o.repeat, [&] { ref = depth_aware_conv(input, ks, p); });
    const double t_fast = best_ms(o.repeat, [&] { fast = depth_aware_conv_unfolded(input, ks, p); });
    const bool parity = depth_flops == base_flops;
    const bool exact = ref.bit_equal(fast);
    ok = ok && parity && exact;
    std::snprintf(line, sizeof(line), "%5zu %14llu %14llu %6s %11.3f %11.3f %11.3f %8.1f%% %9s\n", bins,
                  static_cast<unsigned long long>(base_flops), static_cast<unsigned long long>(depth_flops),
                  parity ? "yes" : "NO", t_conv, t_ref, t_fast, 100.0 * (t_fast - t_conv) / t_conv, exact ? "yes" : "NO");
    out << line;
  }
  return ok ? kExitOk : kExitData;
}

// ---------------------------------------------------------------- selftest

int cmd_selftest(std::ostream& out) {
  const auto results = selftest::run_all();
  std::size_t passed = 0;
  for (const auto& r : results) {
    out << (r.pass ? "[PASS] " : "[FAIL] ") << r.name << ": " << r.detail << "\n";
    passed += r.pass ? 1 : 0;
  }
  out << "selftest: " << passed << "/" << results.size() << " checks passed\n";
  return passed == results.size() ? kExitOk : kExitData;
}

// ---------------------------------------------------------------- synth

struct SynthOptions {
  std::string out;
  std::size_t bins = 4;
  std::size_t cases = 50;
  double offset = 0.4;
  std::uint64_t seed = 1;
};

int cmd_synth(const SynthOptions& o, const RunConfig& cfg, std::ostream& out) {
  const fs::path root(o.out);
  OutputBatch batch;

  const auto scene = synth::make_handcrafted_scene(o.bins);
  const std::vector<NamedTensor> features = {{"features", scene.features}};
  batch.add(root / "scene" / "features.m3dt", container_bytes(features));
  batch.add(root / "scene" / "params.m3dt", container_bytes(scene.params.to_container()));
  PriorReport priors{scene.templates, std::vector<std::size_t>(scene.templates.size(), 1),
                     std::vector<bool>(scene.templates.size(), false)};
  batch.add(root / "scene" / "priors.txt", write_prior_table(priors));
  batch.add(root / "scene" / "calib.txt", format_calib_p2(scene.calib));
  batch.add(root / "scene" / "expected.txt", write_results(scene.expected, scene.calib, cfg.class_names));

  const auto calib = synth::kitti_calibration();
  const auto cases = synth::make_orientation_cases(calib, o.cases, o.offset, o.seed);
  std::vector<Detection> perturbed, truth;
  for (const auto& c : cases) {
    perturbed.push_back(c.det);
    Detection t = c.det;
    t.box3d.theta_obs = c.theta_true;
    truth.push_back(t);
  }
  batch.add(root / "orientation" / "calib.txt", format_calib_p2(calib));
  batch.add(root / "orientation" / "perturbed.txt", write_results(perturbed, calib, cfg.class_names));
  batch.add(root / "orientation" / "truth.txt", write_results(truth, calib, cfg.class_names));
  batch.commit();
  out << "synth: wrote " << root.string() << "/scene (3 encoded objects, b = " << o.bins << ") and " << root.string()
      << "/orientation (" << cases.size() << " perturbed detections)\n";
  return kExitOk;
}

}  // namespace

void write_file_atomic(const fs::path& path, std::string_view content) {
  OutputBatch batch;
  batch.add(path, std::string(content));
  batch.commit();
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Monocular 3D region proposal toolkit: priors, inference, orientation post-optimization and KITTI evaluation.",
               "mono3d"};
  app.require_subcommand(1);
  app.fallthrough();
  CommonOptions common;
  app.add_option("-c,--config", common.config, "key=value configuration file (defaults are the published settings)");
  app.add_option("--set", common.overrides, "Override one setting, key=value (repeatable)");

  PriorsOptions priors;
  auto* sub_priors = app.add_subcommand("priors", "Compute per-template 3D priors from KITTI labels");
  sub_priors->add_option("--labels", priors.labels, "Directory of label_2 files")->required();
  sub_priors->add_option("--calib", priors.calib, "Calib file or directory of per-frame calib files")->required();
  sub_priors->add_option("-o,--out", priors.out, "Output prior table")->required();
  sub_priors->add_option("--list", priors.list, "File with one frame id per line");

  InferOptions infer;
  auto* sub_infer = app.add_subcommand("infer", "Run the detection heads on a feature tensor");
  sub_infer->add_option("--features", infer.features, "Tensor container with a [C, H, W] feature map")->required();
  sub_infer->add_option("--params", infer.params, "Tensor container with head parameters")->required();
  sub_infer->add_option("--priors", infer.priors, "Prior table from `priors`")->required();
  sub_infer->add_option("--calib", infer.calib, "KITTI calib file")->required();
  sub_infer->add_option("-o,--out", infer.out, "Output result file (KITTI format)")->required();
  sub_infer->add_flag("--no-postopt", infer.no_postopt, "Skip orientation post-optimization");

  PostoptOptions postopt;
  auto* sub_postopt = app.add_subcommand("postopt", "Re-optimize orientations of existing result files");
  sub_postopt->add_option("--results", postopt.results, "Result file or directory")->required();
  sub_postopt->add_option("--calib", postopt.calib, "Calib file or directory of per-frame calib files")->required();
  sub_postopt->add_option("-o,--out", postopt.out, "Output file, or directory when --results is one")->required();

  EvalOptions eval;
  auto* sub_eval = app.add_subcommand("eval", "Average precision for 2D, BEV and 3D detection");
  sub_eval->add_option("--results", eval.results, "Directory of result files")->required();
  sub_eval->add_option("--gt", eval.gt, "Directory of ground-truth label files")->required();
  sub_eval->add_option("--list", eval.list, "File with one frame id per line");
  sub_eval->add_option("--points", eval.points, "Recall sample points")->check(CLI::IsMember({11, 40}));
  sub_eval->add_option("--tsv", eval.tsv, "Also write the table as tab-separated values");

  BenchOptions bench;
  auto* sub_bench = app.add_subcommand("bench", "Time depth-aware convolution and report multiply-adds");
  sub_bench->add_option("--height", bench.height, "Input rows")->check(CLI::PositiveNumber);
  sub_bench->add_option("--width", bench.width, "Input columns")->check(CLI::PositiveNumber);
  sub_bench->add_option("--channels", bench.channels, "Input channels")->check(CLI::PositiveNumber);
  sub_bench->add_option("--out-channels", bench.out_channels, "Output channels")->check(CLI::PositiveNumber);
  sub_bench->add_option("--kernel", bench.kernel, "Square kernel size")->check(CLI::PositiveNumber);
  sub_bench->add_option("--bins", bench.bins, "Bin counts to measure")->delimiter(',');
  sub_bench->add_option("--repeat", bench.repeat, "Timing repetitions")->check(CLI::PositiveNumber);
  sub_bench->add_option("--seed", bench.seed, "Random seed");

  auto* sub_selftest = app.add_subcommand("selftest", "Run the built-in invariant checks");

  SynthOptions synth_opts;
  auto* sub_synth = app.add_subcommand("synth", "Write a handcrafted scene and an orientation test set");
  sub_synth->add_option("-o,--out", synth_opts.out, "Output directory")->required();
  sub_synth->add_option("--bins", synth_opts.bins, "Local kernel banks")->check(CLI::Range(1, 8));
  sub_synth->add_option("--cases", synth_opts.cases, "Orientation cases")->check(CLI::PositiveNumber);
  sub_synth->add_option("--offset", synth_opts.offset, "Largest orientation perturbation, radians")->check(CLI::Range(0.0, 3.0));
  sub_synth->add_option("--seed", synth_opts.seed, "Random seed");

  std::vector<const char*> argv;
  argv.push_back("mono3d");
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    const RunConfig cfg = load_config(common);
    if (sub_bench->parsed()) return cmd_bench(bench, out);
    if (sub_selftest->parsed()) return cmd_selftest(out);
    if (sub_priors->parsed()) return cmd_priors(priors, cfg, out);
    if (sub_infer->parsed()) return cmd_infer(infer, cfg, out);
    if (sub_postopt->parsed()) return cmd_postopt(postopt, cfg, out);
    if (sub_eval->parsed()) return cmd_eval(eval, cfg, out);
    if (sub_synth->parsed()) return cmd_synth(synth_opts, cfg, out);
  } catch (const std::exception& e) {
    err << "mono3d: error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace mono3d::cli
