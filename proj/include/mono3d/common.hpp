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

#pragma once

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace mono3d {

enum class ErrorCode {
  kNonPositiveDepth,
  kCornerBehindCamera,
  kSingularMatrix,
  kInvalidConfig,
  kEmptyDataset,
  kDegenerateGroundTruth,
  kShapeMismatch,
  kBinCountExceedsRows,
  kOutOfRange,
  kBadClassIndex,
  kLengthMismatch,
  kEmptyInput,
  kParseError,
  kMissingRecord,
  kIoError,
  kNoConvergence,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kNonPositiveDepth: return "NonPositiveDepth";
    case ErrorCode::kCornerBehindCamera: return "CornerBehindCamera";
    case ErrorCode::kSingularMatrix: return "SingularMatrix";
    case ErrorCode::kInvalidConfig: return "InvalidConfig";
    case ErrorCode::kEmptyDataset: return "EmptyDataset";
    case ErrorCode::kDegenerateGroundTruth: return "DegenerateGroundTruth";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kBinCountExceedsRows: return "BinCountExceedsRows";
    case ErrorCode::kOutOfRange: return "OutOfRange";
    case ErrorCode::kBadClassIndex: return "BadClassIndex";
    case ErrorCode::kLengthMismatch: return "LengthMismatch";
    case ErrorCode::kEmptyInput: return "EmptyInput";
    case ErrorCode::kParseError: return "ParseError";
    case ErrorCode::kMissingRecord: return "MissingRecord";
    case ErrorCode::kIoError: return "IoError";
    case ErrorCode::kNoConvergence: return "NoConvergence";
  }
  return "Unknown";
}

/// Every failure raised by the library carries a machine-checkable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail)
      : std::runtime_error(std::string(to_string(code)) + ": " + detail), code_(code), detail_(detail) {}

  ErrorCode code() const noexcept { return code_; }
  /// Message without the code prefix.
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

inline constexpr double kPi = std::numbers::pi;

/// Wraps an angle into [-pi, pi).
inline double wrap_angle(double a) {
  if (a >= -kPi && a < kPi) return a;
  double r = std::fmod(a + kPi, 2.0 * kPi);
  if (r < 0.0) r += 2.0 * kPi;
  r -= kPi;
  // fmod rounding can land exactly on +pi.
  if (r >= kPi) r -= 2.0 * kPi;
  return r;
}

/// Smallest absolute difference between two angles, in [0, pi].
inline double angle_distance(double a, double b) {
  return std::abs(wrap_angle(a - b));
}

}  // namespace mono3d
