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
/// \brief Direct convolution, depth-aware (row-binned) convolution,
/// activations, output fusion, FLOP accounting and a central-difference
/// gradient checker.
///
/// All convolutions are cross-correlations over [C, H, W] inputs with zero
/// padding. Every path accumulates `bias + sum_c sum_ky sum_kx w * x` in the
/// same order over an explicitly padded buffer, which is what makes the
/// depth-aware paths bit-identical to each other and to conv2d.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "mono3d/common.hpp"
#include "mono3d/tensor.hpp"

namespace mono3d {

struct ConvParams {
  int stride = 1;
  int pad = 0;
  int dilation = 1;
  int groups = 1;
};

/// b kernel banks of identical shape. weights: [b, out, in, kh, kw];
/// bias: [b, out].
struct DepthAwareKernelSet {
  Tensor weights;
  Tensor bias;

  std::size_t bins() const { return weights.dim(0); }
};

namespace detail {

inline void require(bool ok, ErrorCode code, const std::string& msg) {
  if (!ok) throw Error(code, msg);
}

/// Input with `pad` zero rows/cols on every side.
inline Tensor zero_pad(const Tensor& in, int pad) {
  const std::size_t c = in.dim(0), h = in.dim(1), w = in.dim(2);
  const std::size_t p = static_cast<std::size_t>(pad);
  Tensor out({c, h + 2 * p, w + 2 * p});
  for (std::size_t ci = 0; ci < c; ++ci) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) out.at(ci, y + p, x + p) = in.at(ci, y, x);
    }
  }
  return out;
}

inline std::size_t conv_out_size(std::size_t in, int pad, int k, int stride, int dilation) {
  const long long span = static_cast<long long>(dilation) * (k - 1) + 1;
  const long long padded = static_cast<long long>(in) + 2LL * pad;
  if (padded < span) return 0;
  return static_cast<std::size_t>((padded - span) / stride + 1);
}

/// One output row of a (grouped) convolution over an already padded input.
/// `weights` points at a contiguous [out, in_per_group, kh, kw] bank.
inline void conv_row(const Tensor& padded, std::span<const double> weights, std::span<const double> bias,
                     std::size_t out_ch, std::size_t kh, std::size_t kw, const ConvParams& p,
                     std::size_t in_row, std::size_t out_w, Tensor& out, std::size_t out_row) {
  const std::size_t in_per_group = padded.dim(0) / static_cast<std::size_t>(p.groups);
  const std::size_t out_per_group = out_ch / static_cast<std::size_t>(p.groups);
  const std::size_t pw = padded.dim(2);
  const std::size_t ph = padded.dim(1);
  const std::span<const double> x = padded.data();
  for (std::size_t o = 0; o < out_ch; ++o) {
    const std::size_t g = o / out_per_group;
    const std::size_t w_base = o * in_per_group * kh * kw;
    for (std::size_t ox = 0; ox < out_w; ++ox) {
      double acc = bias[o];
      const std::size_t x0 = ox * static_cast<std::size_t>(p.stride);
      for (std::size_t ci = 0; ci < in_per_group; ++ci) {
        const std::size_t c = g * in_per_group + ci;
        for (std::size_t ky = 0; ky < kh; ++ky) {
          const std::size_t yy = in_row + ky * static_cast<std::size_t>(p.dilation);
          const std::size_t row_base = (c * ph + yy) * pw;
          const std::size_t wk = w_base + (ci * kh + ky) * kw;
          for (std::size_t kx = 0; kx < kw; ++kx) {
            acc += weights[wk + kx] * x[row_base + x0 + kx * static_cast<std::size_t>(p.dilation)];
          }
        }
      }
      out.at(o, out_row, ox) = acc;
    }
  }
}

}  // namespace detail

/// Standard (optionally grouped and dilated) convolution.
/// input [C, H, W]; weights [O, C / groups, kh, kw]; bias [O] or empty.
inline Tensor conv2d(const Tensor& input, const Tensor& weights, const Tensor& bias, const ConvParams& p = {}) {
  using detail::require;
  require(input.rank() == 3, ErrorCode::kShapeMismatch, "conv2d input must be [C, H, W], got " + input.shape_string());
  require(weights.rank() == 4, ErrorCode::kShapeMismatch, "conv2d weights must be [O, C, kh, kw], got " + weights.shape_string());
  require(p.stride >= 1 && p.dilation >= 1 && p.pad >= 0 && p.groups >= 1, ErrorCode::kShapeMismatch,
          "conv2d stride/dilation/groups must be >= 1 and pad >= 0");
  const std::size_t groups = static_cast<std::size_t>(p.groups);
  const std::size_t out_ch = weights.dim(0);
  require(input.dim(0) % groups == 0 && out_ch % groups == 0, ErrorCode::kShapeMismatch,
          "channels not divisible by groups");
  require(weights.dim(1) == input.dim(0) / groups, ErrorCode::kShapeMismatch,
          "weights expect " + std::to_string(weights.dim(1) * groups) + " input channels, got " + std::to_string(input.dim(0)));
  require(bias.size() == 0 || (bias.size() == out_ch), ErrorCode::kShapeMismatch, "bias length must equal output channels");
  const std::size_t kh = weights.dim(2), kw = weights.dim(3);
  const std::size_t out_h = detail::conv_out_size(input.dim(1), p.pad, static_cast<int>(kh), p.stride, p.dilation);
  const std::size_t out_w = detail::conv_out_size(input.dim(2), p.pad, static_cast<int>(kw), p.stride, p.dilation);
  require(out_h > 0 && out_w > 0, ErrorCode::kShapeMismatch, "kernel larger than padded input");

  const Tensor padded = detail::zero_pad(input, p.pad);
  const std::vector<double> zero_bias(bias.size() == 0 ? out_ch : 0, 0.0);
  const std::span<const double> b = bias.size() == 0 ? std::span<const double>(zero_bias) : bias.data();
  Tensor out({out_ch, out_h, out_w});
  for (std::size_t oy = 0; oy < out_h; ++oy) {
    detail::conv_row(padded, weights.data(), b, out_ch, kh, kw, p, oy * static_cast<std::size_t>(p.stride), out_w, out, oy);
  }
  return out;
}

/// Bin of output row `row` when `height` rows are split into `b` contiguous
/// row bins: floor(row * b / height).
inline int bin_index(int row, int height, int b) {
  if (b < 1 || height < 1 || b > height || row < 0 || row >= height) {
    throw Error(ErrorCode::kOutOfRange, "bin_index requires 0 <= row < height and 1 <= b <= height (row=" +
                                            std::to_string(row) + ", height=" + std::to_string(height) +
                                            ", b=" + std::to_string(b) + ")");
  }
  return static_cast<int>((static_cast<long long>(row) * b) / height);
}

namespace detail {

struct DepthAwareShape {
  std::size_t bins, out_ch, in_ch, kh, kw, out_h, out_w;
};

inline DepthAwareShape check_depth_aware(const Tensor& input, const DepthAwareKernelSet& ks, const ConvParams& p) {
  require(input.rank() == 3, ErrorCode::kShapeMismatch, "depth-aware input must be [C, H, W], got " + input.shape_string());
  require(ks.weights.rank() == 5, ErrorCode::kShapeMismatch,
          "depth-aware weights must be [b, O, C, kh, kw], got " + ks.weights.shape_string());
  require(p.groups == 1 && p.dilation == 1, ErrorCode::kShapeMismatch, "depth-aware conv supports groups = dilation = 1");
  require(p.stride >= 1 && p.pad >= 0, ErrorCode::kShapeMismatch, "stride must be >= 1 and pad >= 0");
  DepthAwareShape s{ks.weights.dim(0), ks.weights.dim(1), ks.weights.dim(2), ks.weights.dim(3), ks.weights.dim(4), 0, 0};
  require(s.bins >= 1, ErrorCode::kShapeMismatch, "at least one kernel bank required");
  require(s.in_ch == input.dim(0), ErrorCode::kShapeMismatch, "kernel bank input channels do not match input");
  require(ks.bias.size() == 0 || (ks.bias.rank() == 2 && ks.bias.dim(0) == s.bins && ks.bias.dim(1) == s.out_ch),
          ErrorCode::kShapeMismatch, "depth-aware bias must be [b, O]");
  s.out_h = conv_out_size(input.dim(1), p.pad, static_cast<int>(s.kh), p.stride, 1);
  s.out_w = conv_out_size(input.dim(2), p.pad, static_cast<int>(s.kw), p.stride, 1);
  require(s.out_h > 0 && s.out_w > 0, ErrorCode::kShapeMismatch, "kernel larger than padded input");
  if (s.bins > s.out_h) {
    throw Error(ErrorCode::kBinCountExceedsRows, std::to_string(s.bins) + " bins for " + std::to_string(s.out_h) + " output rows");
  }
  return s;
}

inline std::span<const double> bank_weights(const DepthAwareKernelSet& ks, const DepthAwareShape& s, std::size_t bin) {
  const std::size_t n = s.out_ch * s.in_ch * s.kh * s.kw;
  return ks.weights.data().subspan(bin * n, n);
}

inline std::vector<double> bank_bias(const DepthAwareKernelSet& ks, const DepthAwareShape& s, std::size_t bin) {
  if (ks.bias.size() == 0) return std::vector<double>(s.out_ch, 0.0);
  const auto b = ks.bias.data().subspan(bin * s.out_ch, s.out_ch);
  return {b.begin(), b.end()};
}

}  // namespace detail

/// Depth-aware convolution, reference path. Output row r uses kernel bank
/// bin_index(r, out_h, b) over the full (border-padded) input, so receptive
/// fields cross bin boundaries.
inline Tensor depth_aware_conv(const Tensor& input, const DepthAwareKernelSet& ks, const ConvParams& p = {}) {
  const auto s = detail::check_depth_aware(input, ks, p);
  const Tensor padded = detail::zero_pad(input, p.pad);
  Tensor out({s.out_ch, s.out_h, s.out_w});
  std::vector<std::vector<double>> biases;
  for (std::size_t bin = 0; bin < s.bins; ++bin) biases.push_back(detail::bank_bias(ks, s, bin));
  for (std::size_t oy = 0; oy < s.out_h; ++oy) {
    const auto bin = static_cast<std::size_t>(bin_index(static_cast<int>(oy), static_cast<int>(s.out_h), static_cast<int>(s.bins)));
    detail::conv_row(padded, detail::bank_weights(ks, s, bin), biases[bin], s.out_ch, s.kh, s.kw, p,
                     oy * static_cast<std::size_t>(p.stride), s.out_w, out, oy);
  }
  return out;
}

/// Depth-aware convolution, batched path: the padded input is unfolded into
/// b overlapping row slabs (one per bin, each carrying the kh - 1 halo rows
/// its outputs need), the slabs are stacked along the channel axis, and a
/// single grouped convolution with groups = b applies bank i to slab i.
inline Tensor depth_aware_conv_unfolded(const Tensor& input, const DepthAwareKernelSet& ks, const ConvParams& p = {}) {
  const auto s = detail::check_depth_aware(input, ks, p);
  const Tensor padded = detail::zero_pad(input, p.pad);
  const std::size_t stride = static_cast<std::size_t>(p.stride);
  const std::size_t pw = padded.dim(2);

  // Output row range [first, last) of each bin.
  std::vector<std::size_t> first(s.bins + 1, s.out_h);
  for (std::size_t oy = s.out_h; oy-- > 0;) {
    first[static_cast<std::size_t>(bin_index(static_cast<int>(oy), static_cast<int>(s.out_h), static_cast<int>(s.bins)))] = oy;
  }
  std::size_t max_rows = 0;
  for (std::size_t bin = 0; bin < s.bins; ++bin) max_rows = std::max(max_rows, first[bin + 1] - first[bin]);
  const std::size_t slab_h = (max_rows - 1) * stride + s.kh;

  Tensor slabs({s.bins * s.in_ch, slab_h, pw});
  for (std::size_t bin = 0; bin < s.bins; ++bin) {
    const std::size_t y0 = first[bin] * stride;
    const std::size_t rows = first[bin + 1] - first[bin];
    const std::size_t need = (rows - 1) * stride + s.kh;
    for (std::size_t c = 0; c < s.in_ch; ++c) {
      for (std::size_t y = 0; y < need; ++y) {
        for (std::size_t x = 0; x < pw; ++x) slabs.at(bin * s.in_ch + c, y, x) = padded.at(c, y0 + y, x);
      }
    }
  }

  Tensor grouped_w({s.bins * s.out_ch, s.in_ch, s.kh, s.kw}, std::vector<double>(ks.weights.data().begin(), ks.weights.data().end()));
  Tensor grouped_b({s.bins * s.out_ch});
  for (std::size_t bin = 0; bin < s.bins; ++bin) {
    const auto b = detail::bank_bias(ks, s, bin);
    std::copy(b.begin(), b.end(), grouped_b.data().begin() + static_cast<std::ptrdiff_t>(bin * s.out_ch));
  }
  ConvParams gp;
  gp.stride = p.stride;
  gp.groups = static_cast<int>(s.bins);
  const Tensor batched = conv2d(slabs, grouped_w, grouped_b, gp);

  Tensor out({s.out_ch, s.out_h, s.out_w});
  for (std::size_t bin = 0; bin < s.bins; ++bin) {
    for (std::size_t oy = first[bin]; oy < first[bin + 1]; ++oy) {
      for (std::size_t o = 0; o < s.out_ch; ++o) {
        for (std::size_t ox = 0; ox < s.out_w; ++ox) out.at(o, oy, ox) = batched.at(bin * s.out_ch + o, oy - first[bin], ox);
      }
    }
  }
  return out;
}

/// Shape summary used for multiply-add accounting.
struct ConvDescriptor {
  std::size_t in_ch = 0;
  std::size_t out_ch = 0;
  std::size_t kh = 0;
  std::size_t kw = 0;
  std::size_t out_h = 0;
  std::size_t out_w = 0;
  std::size_t groups = 1;
  std::size_t bins = 1;
};

/// Multiply-adds of a convolution. Bins only select which bank a row uses,
/// so the count does not depend on `bins`.
inline std::uint64_t flop_count(const ConvDescriptor& d) {
  return static_cast<std::uint64_t>(d.out_ch) * d.out_h * d.out_w * (d.in_ch / d.groups) * d.kh * d.kw;
}

inline ConvDescriptor describe_conv2d(const Tensor& input, const Tensor& weights, const ConvParams& p = {}) {
  ConvDescriptor d;
  d.in_ch = input.dim(0);
  d.out_ch = weights.dim(0);
  d.kh = weights.dim(2);
  d.kw = weights.dim(3);
  d.out_h = detail::conv_out_size(input.dim(1), p.pad, static_cast<int>(d.kh), p.stride, p.dilation);
  d.out_w = detail::conv_out_size(input.dim(2), p.pad, static_cast<int>(d.kw), p.stride, p.dilation);
  d.groups = static_cast<std::size_t>(p.groups);
  return d;
}

inline ConvDescriptor describe_depth_aware(const Tensor& input, const DepthAwareKernelSet& ks, const ConvParams& p = {}) {
  const auto s = detail::check_depth_aware(input, ks, p);
  return {s.in_ch, s.out_ch, s.kh, s.kw, s.out_h, s.out_w, 1, s.bins};
}

inline Tensor relu(Tensor t) {
  for (double& v : t.data()) v = std::max(0.0, v);
  return t;
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Tensor sigmoid(Tensor t) {
  for (double& v : t.data()) v = sigmoid(v);
  return t;
}

/// Max-subtracted softmax of a vector.
inline std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.begin(), logits.end());
  if (out.empty()) return out;
  const double m = *std::max_element(out.begin(), out.end());
  double sum = 0.0;
  for (double& v : out) {
    v = std::exp(v - m);
    sum += v;
  }
  for (double& v : out) v /= sum;
  return out;
}

/// Softmax along `axis` of a tensor of any rank.
inline Tensor softmax(const Tensor& t, std::size_t axis) {
  if (axis >= t.rank()) throw Error(ErrorCode::kShapeMismatch, "softmax axis out of range");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= t.dim(i);
  for (std::size_t i = axis + 1; i < t.rank(); ++i) inner *= t.dim(i);
  const std::size_t n = t.dim(axis);
  Tensor out = t;
  std::vector<double> buf(n);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      for (std::size_t k = 0; k < n; ++k) buf[k] = t[(o * n + k) * inner + in];
      const auto sm = softmax(buf);
      for (std::size_t k = 0; k < n; ++k) out[(o * n + k) * inner + in] = sm[k];
    }
  }
  return out;
}

/// Number of fused heads: classification plus eleven regression outputs.
inline constexpr std::size_t kNumHeads = 12;

/// Attention logits, one per head; sigmoid(alpha[i]) weights the global path.
struct FusionWeights {
  std::array<double, kNumHeads> alpha{};
};

inline Tensor fuse_outputs(const Tensor& global, const Tensor& local, const FusionWeights& fw, std::size_t head) {
  if (global.shape() != local.shape()) {
    throw Error(ErrorCode::kShapeMismatch, "global " + global.shape_string() + " vs local " + local.shape_string());
  }
  if (head >= kNumHeads) throw Error(ErrorCode::kOutOfRange, "head index " + std::to_string(head));
  const double a = sigmoid(fw.alpha[head]);
  Tensor out = global;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = global[i] * a + local[i] * (1.0 - a);
  return out;
}

/// Largest relative error between `analytic` and central differences of `f`
/// at `point`. Components where both gradients are below `abs_floor` are
/// compared in absolute terms.
inline double finite_diff_check(const std::function<double(std::span<const double>)>& f,
                                std::span<const double> point, std::span<const double> analytic,
                                double step = 1e-5, double abs_floor = 1e-8) {
  if (point.size() != analytic.size()) throw Error(ErrorCode::kLengthMismatch, "gradient length mismatch");
  std::vector<double> x(point.begin(), point.end());
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + step;
    const double fp = f(x);
    x[i] = saved - step;
    const double fm = f(x);
    x[i] = saved;
    const double numeric = (fp - fm) / (2.0 * step);
    const double scale = std::max({std::abs(numeric), std::abs(analytic[i]), abs_floor});
    worst = std::max(worst, std::abs(numeric - analytic[i]) / scale);
  }
  return worst;
}

}  // namespace mono3d
