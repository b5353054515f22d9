// Copyright 2026 The pdarts Authors.
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

#include <array>
#include <string>
#include <string_view>

#include "pdarts/error.hpp"

namespace pdarts {

enum class LabelMode { single_label, multi_label };

inline std::string_view label_mode_name(LabelMode m) {
  return m == LabelMode::single_label ? "single_label" : "multi_label";
}

inline LabelMode parse_label_mode(std::string_view s) {
  if (s == "single_label") return LabelMode::single_label;
  if (s == "multi_label") return LabelMode::multi_label;
  throw ConfigError("unknown label mode '" + std::string(s) + "'");
}

/// Candidate operation vocabulary. The index order is part of the file
/// formats and of the tie-breaking rule in discretization.
enum class OpKind : int {
  sep_conv_3x3 = 0,
  sep_conv_5x5 = 1,
  dil_conv_3x3 = 2,
  dil_conv_5x5 = 3,
  max_pool_3x3 = 4,
  avg_pool_3x3 = 5,
  skip_connect = 6,
  zero = 7,
};

inline constexpr int kNumOps = 8;

inline constexpr std::array<OpKind, kNumOps> kAllOps = {
    OpKind::sep_conv_3x3, OpKind::sep_conv_5x5, OpKind::dil_conv_3x3, OpKind::dil_conv_5x5,
    OpKind::max_pool_3x3, OpKind::avg_pool_3x3, OpKind::skip_connect, OpKind::zero};

inline constexpr std::array<std::string_view, kNumOps> kOpNames = {
    "sep_conv_3x3", "sep_conv_5x5", "dil_conv_3x3", "dil_conv_5x5",
    "max_pool_3x3", "avg_pool_3x3", "skip_connect", "zero"};

inline std::string_view op_name(OpKind k) {
  const int i = static_cast<int>(k);
  if (i < 0 || i >= kNumOps) throw InvalidOperationError("op index " + std::to_string(i));
  return kOpNames[i];
}

inline OpKind op_from_name(std::string_view s) {
  for (int i = 0; i < kNumOps; ++i)
    if (kOpNames[i] == s) return kAllOps[i];
  throw InvalidOperationError("unknown operation '" + std::string(s) + "'");
}

inline OpKind op_from_index(int i) {
  if (i < 0 || i >= kNumOps) throw InvalidOperationError("op index " + std::to_string(i));
  return kAllOps[i];
}

enum class CellKind { normal = 0, reduction = 1 };

}  // namespace pdarts
