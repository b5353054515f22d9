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

#include <Eigen/Core>
#include <Eigen/SVD>

#include <cmath>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pdarts/error.hpp"
#include "pdarts/nn.hpp"
#include "pdarts/tensor.hpp"

namespace pdarts {

/// Default relative threshold for counting retained singular values.
inline constexpr double kDefaultProbeDelta = 0.01;

/// Singular values at or below this are treated as an all-zero layer.
inline constexpr double kZeroSigmaTolerance = 1e-12;

/// Output-mode unfolding of a conv weight (out, in, kh, kw) into a matrix of
/// shape (out, in*kh*kw); column index is i*kh*kw + r*kw + c.
template <typename T>
Eigen::MatrixXd unfold_conv_weight(std::span<const T> weight, const Shape& shape) {
  if (shape.size() != 4) throw ShapeError("unfold: expected a 4-axis tensor, got " + to_string(shape));
  for (int d : shape)
    if (d < 1) throw ShapeError("unfold: empty axis in " + to_string(shape));
  if (weight.size() != numel(shape)) throw ShapeError("unfold: value count does not match shape");
  const int rows = shape[0];
  const int cols = shape[1] * shape[2] * shape[3];
  Eigen::MatrixXd m(rows, cols);
  for (int o = 0; o < rows; ++o)
    for (int j = 0; j < cols; ++j) m(o, j) = static_cast<double>(weight[static_cast<std::size_t>(o) * cols + j]);
  return m;
}

template <typename T>
Eigen::MatrixXd unfold_conv_weight(const Variable<T>& w) {
  return unfold_conv_weight<T>(std::span<const T>(w.values()), w.shape());
}

/// Number of singular values at or above delta * sigma_1. Input must be
/// sorted in descending order and nonnegative.
inline int estimate_rank(std::span<const double> sigma, double delta) {
  if (!(delta > 0.0 && delta < 1.0)) throw ContractError("estimate_rank: delta must lie in (0, 1)");
  for (std::size_t i = 0; i < sigma.size(); ++i) {
    if (!(sigma[i] >= 0.0)) throw ContractError("estimate_rank: negative or NaN singular value");
    if (i > 0 && sigma[i] > sigma[i - 1])
      throw ContractError("estimate_rank: singular values are not sorted descending");
  }
  if (sigma.empty() || sigma[0] <= kZeroSigmaTolerance) return 0;
  const double cut = delta * sigma[0];
  int r = 0;
  while (r < static_cast<int>(sigma.size()) && sigma[r] >= cut) ++r;
  return r;
}

/// S = (sum of the retained singular values) / (d * sigma_1), d = min(rows, cols).
inline double stable_rank_from_singular_values(std::span<const double> sigma, int rows, int cols,
                                               double delta) {
  const int r = estimate_rank(sigma, delta);
  if (r == 0) return 0.0;
  double s = 0.0;
  for (int i = 0; i < r; ++i) s += sigma[i];
  const double d = std::min(rows, cols);
  return std::clamp(s / (d * sigma[0]), 0.0, 1.0);
}

inline std::vector<double> singular_values(const Eigen::MatrixXd& m, const std::string& layer_id) {
  if (!m.allFinite()) throw NumericError("stable rank: non-finite weights in layer " + layer_id);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  const Eigen::VectorXd sv = svd.singularValues();
  std::vector<double> out(sv.data(), sv.data() + sv.size());
  for (double v : out)
    if (!std::isfinite(v)) throw NumericError("stable rank: decomposition failed for layer " + layer_id);
  return out;
}

/// Stable rank of a conv weight: unfold, decompose, keep the singular values
/// above the relative threshold and normalize their sum by d * sigma_1.
template <typename T>
double stable_rank(const Variable<T>& weight, double delta = kDefaultProbeDelta,
                   const std::string& layer_id = "<unnamed>") {
  const auto m = unfold_conv_weight(weight);
  const auto sv = singular_values(m, layer_id);
  return stable_rank_from_singular_values(sv, static_cast<int>(m.rows()), static_cast<int>(m.cols()), delta);
}

/// Stable-rank history of one registered conv layer.
struct LayerProbeSeries {
  int layer_index = -1;
  std::string layer_id;
  std::vector<std::pair<int, double>> values;

  void append(int epoch, double s) {
    if (!values.empty() && epoch <= values.back().first)
      throw ContractError("probe series for " + layer_id + ": epochs must increase");
    if (!(s >= 0.0 && s <= 1.0))
      throw ContractError("probe series for " + layer_id + ": stable rank outside [0, 1]");
    values.emplace_back(epoch, s);
  }
  double last() const { return values.empty() ? 0.0 : values.back().second; }
};

/// One series per registered conv layer, in registry order.
using ProbeSeries = std::vector<LayerProbeSeries>;

/// Current stable rank of every registered conv layer; read-only on weights.
template <typename Net>
std::vector<double> probe_stable_ranks(const Net& net, double delta = kDefaultProbeDelta) {
  const auto& store = net.store();
  std::vector<double> out(store.num_conv_layers());
  for (std::size_t k = 0; k < out.size(); ++k) {
    const auto& p = store.conv_layer(k);
    out[k] = stable_rank(p.var, delta, p.name);
  }
  return out;
}

/// Appends (epoch, S) for every registered conv layer.
template <typename Net>
void probe_network(const Net& net, int epoch, ProbeSeries& series,
                   double delta = kDefaultProbeDelta) {
  const auto& store = net.store();
  if (store.num_conv_layers() == 0) throw ContractError("probe: network has no conv layers");
  const auto s = probe_stable_ranks(net, delta);
  if (series.empty()) {
    for (std::size_t k = 0; k < s.size(); ++k)
      series.push_back({static_cast<int>(k), store.conv_layer(k).name, {}});
  }
  if (series.size() != s.size()) throw ContractError("probe: series/registry length mismatch");
  for (std::size_t k = 0; k < s.size(); ++k) series[k].append(epoch, s[k]);
}

}  // namespace pdarts
