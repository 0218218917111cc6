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
/// \brief Dense row-major float64 tensor and its binary container format.
///
/// Container record, all integers little-endian:
///   magic "M3DT" | u32 version (1) | u32 dtype (1 = float64, 2 = float32)
///   | u32 rank | u64 dims[rank] | u32 name length | name bytes | payload
/// A file holds one or more records back to back. float32 payloads are
/// widened to float64 on read.

#pragma once

#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <functional>
#include <istream>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "mono3d/common.hpp"

namespace mono3d {

class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

  Tensor(std::vector<std::size_t> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != element_count(shape_)) {
      throw Error(ErrorCode::kShapeMismatch, "data length " + std::to_string(data_.size()) +
                                                 " does not match shape " + shape_string());
    }
  }

  const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const noexcept { return data_.size(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // [C, H, W] accessors.
  double& at(std::size_t c, std::size_t y, std::size_t x) {
    return data_[(c * shape_[1] + y) * shape_[2] + x];
  }
  double at(std::size_t c, std::size_t y, std::size_t x) const {
    return data_[(c * shape_[1] + y) * shape_[2] + x];
  }

  bool all_finite() const {
    for (double v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  std::string shape_string() const {
    std::string s = "[";
    for (std::size_t i = 0; i < shape_.size(); ++i) {
      if (i) s += ", ";
      s += std::to_string(shape_[i]);
    }
    return s + "]";
  }

  /// Bitwise equality of shape and payload (distinguishes -0.0 and +0.0).
  bool bit_equal(const Tensor& other) const {
    return shape_ == other.shape_ &&
           (data_.empty() || std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(double)) == 0);
  }

  static std::size_t element_count(const std::vector<std::size_t>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  }

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

namespace container {

inline constexpr char kMagic[4] = {'M', '3', 'D', 'T'};
inline constexpr std::uint32_t kVersion = 1;
inline constexpr std::uint32_t kFloat64 = 1;
inline constexpr std::uint32_t kFloat32 = 2;

namespace detail {

template <typename T>
void put_le(std::ostream& out, T value) {
  using U = std::make_unsigned_t<T>;
  U u = static_cast<U>(value);
  char bytes[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    bytes[i] = static_cast<char>(u & 0xFFu);
    u = static_cast<U>(u >> 8);
  }
  out.write(bytes, sizeof(T));
}

template <typename T>
T get_le(std::istream& in, const char* what) {
  unsigned char bytes[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) {
    throw Error(ErrorCode::kParseError, std::string("truncated tensor container reading ") + what);
  }
  T v = 0;
  for (std::size_t i = sizeof(T); i-- > 0;) v = static_cast<T>((v << 8) | bytes[i]);
  return v;
}

}  // namespace detail

inline void write_record(std::ostream& out, const NamedTensor& nt) {
  out.write(kMagic, 4);
  detail::put_le<std::uint32_t>(out, kVersion);
  detail::put_le<std::uint32_t>(out, kFloat64);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(nt.tensor.rank()));
  for (std::size_t d : nt.tensor.shape()) detail::put_le<std::uint64_t>(out, d);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(nt.name.size()));
  out.write(nt.name.data(), static_cast<std::streamsize>(nt.name.size()));
  for (double v : nt.tensor.data()) detail::put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
}

inline void write(std::ostream& out, std::span<const NamedTensor> tensors) {
  for (const auto& t : tensors) write_record(out, t);
  if (!out) throw Error(ErrorCode::kIoError, "failed writing tensor container");
}

inline std::vector<NamedTensor> read(std::istream& in) {
  std::vector<NamedTensor> out;
  while (true) {
    char magic[4];
    in.read(magic, 4);
    if (in.gcount() == 0 && in.eof()) break;
    if (in.gcount() != 4 || std::memcmp(magic, kMagic, 4) != 0) {
      throw Error(ErrorCode::kParseError, "record " + std::to_string(out.size()) + ": bad magic");
    }
    const auto version = detail::get_le<std::uint32_t>(in, "version");
    if (version != kVersion) {
      throw Error(ErrorCode::kParseError, "record " + std::to_string(out.size()) + ": unsupported version " + std::to_string(version));
    }
    const auto dtype = detail::get_le<std::uint32_t>(in, "dtype");
    if (dtype != kFloat64 && dtype != kFloat32) {
      throw Error(ErrorCode::kParseError, "record " + std::to_string(out.size()) + ": unknown dtype tag " + std::to_string(dtype));
    }
    const auto rank = detail::get_le<std::uint32_t>(in, "rank");
    if (rank > 8) throw Error(ErrorCode::kParseError, "record " + std::to_string(out.size()) + ": rank too large");
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(detail::get_le<std::uint64_t>(in, "shape"));
    const auto name_len = detail::get_le<std::uint32_t>(in, "name length");
    if (name_len > 4096) throw Error(ErrorCode::kParseError, "record " + std::to_string(out.size()) + ": name too long");
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) throw Error(ErrorCode::kParseError, "truncated tensor name");
    const std::size_t count = Tensor::element_count(shape);
    std::vector<double> data(count);
    for (auto& v : data) {
      if (dtype == kFloat64) {
        v = std::bit_cast<double>(detail::get_le<std::uint64_t>(in, "payload"));
      } else {
        v = static_cast<double>(std::bit_cast<float>(detail::get_le<std::uint32_t>(in, "payload")));
      }
    }
    out.push_back({std::move(name), Tensor(std::move(shape), std::move(data))});
  }
  return out;
}

inline const Tensor& find(std::span<const NamedTensor> tensors, std::string_view name) {
  for (const auto& t : tensors) {
    if (t.name == name) return t.tensor;
  }
  throw Error(ErrorCode::kMissingRecord, "tensor '" + std::string(name) + "' not found in container");
}

}  // namespace container

}  // namespace mono3d
