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

#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "pdarts/error.hpp"

namespace pdarts {

/// Channel/spatial extent of one sample's feature map, used for symbolic
/// shape propagation.
struct FeatureShape {
  int channels = 0;
  int height = 0;
  int width = 0;
  bool operator==(const FeatureShape&) const = default;
};

struct LayerCost {
  std::string layer_id;
  std::uint64_t params = 0;
  std::uint64_t macs = 0;
};

/// Parameter and multiply-accumulate totals for one network at one input
/// resolution. Totals are always the sums of `per_layer`.
struct ComplexityReport {
  std::uint64_t params = 0;
  std::uint64_t macs = 0;
  std::vector<LayerCost> per_layer;
  int input_height = 0;
  int input_width = 0;

  void add(std::string layer_id, std::uint64_t p, std::uint64_t m) {
    params += p;
    macs += m;
    per_layer.push_back({std::move(layer_id), p, m});
  }

  /// Structured-text rendering (one `key: value` per line, then a layer table).
  std::string to_text() const {
    std::ostringstream os;
    os << "input_resolution: " << input_height << "x" << input_width << "\n";
    os << "params: " << params << "\n";
    os << "macs: " << macs << "\n";
    os << "layers:\n";
    for (const auto& l : per_layer) os << "  " << l.layer_id << " " << l.params << " " << l.macs << "\n";
    return os.str();
  }
};

/// Conv MACs: C_out * (C_in / groups) * kh * kw * H_out * W_out.
inline std::uint64_t conv_macs(int c_in, int c_out, int kh, int kw, int groups, int h_out,
                               int w_out) {
  return static_cast<std::uint64_t>(c_out) * (c_in / groups) * kh * kw *
         static_cast<std::uint64_t>(h_out) * w_out;
}

/// Trainable parameter count of a network, auxiliary head excluded.
template <typename Net>
std::uint64_t count_params(const Net& net) {
  std::uint64_t total = 0;
  for (const auto& p : net.store().params())
    if (!p.auxiliary) total += p.var.size();
  return total;
}

/// Symbolic MAC count at an input resolution (stem and classifier included,
/// pooling/skip/batch-norm counted as zero).
template <typename Net>
std::uint64_t count_macs(const Net& net, int height, int width) {
  return net.complexity(height, width).macs;
}

template <typename Net>
ComplexityReport complexity_report(const Net& net, int height, int width) {
  return net.complexity(height, width);
}

}  // namespace pdarts
