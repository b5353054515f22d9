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

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "pdarts/error.hpp"

namespace pdarts {

/// Per-layer learning rates driven by stable-rank changes:
///   eta_k <- max(beta * eta_k + zeta * (S_k - S_k_prev), eta_min)
struct AdasState {
  std::vector<double> eta;
  double beta = 0.98;
  double zeta = 1.0;
  double eta_min = 1e-4;
  std::vector<double> prev_S;

  double mean_eta() const {
    if (eta.empty()) return 0.0;
    return std::accumulate(eta.begin(), eta.end(), 0.0) / static_cast<double>(eta.size());
  }
};

inline AdasState adas_init(std::size_t num_layers, double eta0, double beta = 0.98,
                           double zeta = 1.0, double eta_min = 1e-4) {
  if (!(beta >= 0.0 && beta < 1.0)) throw ConfigError("adas: beta must lie in [0, 1)");
  if (!(eta0 > 0.0)) throw ConfigError("adas: initial learning rate must be positive");
  if (!(zeta >= 0.0)) throw ConfigError("adas: zeta must be nonnegative");
  if (!(eta_min >= 0.0)) throw ConfigError("adas: eta_min must be nonnegative");
  AdasState s;
  s.eta.assign(num_layers, std::max(eta0, eta_min));
  s.beta = beta;
  s.zeta = zeta;
  s.eta_min = eta_min;
  s.prev_S.assign(num_layers, 0.0);
  return s;
}

/// Sets the stable-rank baseline without touching the rates, so the first
/// update reacts to change since `S0` rather than since zero.
inline void adas_prime(AdasState& state, std::span<const double> S0) {
  if (S0.size() != state.eta.size()) throw ContractError("adas: baseline length mismatch");
  state.prev_S.assign(S0.begin(), S0.end());
}

inline AdasState adas_update(AdasState state, std::span<const double> S_now) {
  if (S_now.size() != state.eta.size())
    throw ContractError("adas: got " + std::to_string(S_now.size()) + " stable ranks for " +
                        std::to_string(state.eta.size()) + " layers");
  for (double s : S_now)
    if (!(s >= 0.0 && s <= 1.0)) throw ContractError("adas: stable rank outside [0, 1]");
  for (std::size_t k = 0; k < state.eta.size(); ++k) {
    const double delta = S_now[k] - state.prev_S[k];
    state.eta[k] = std::max(state.beta * state.eta[k] + state.zeta * delta, state.eta_min);
  }
  state.prev_S.assign(S_now.begin(), S_now.end());
  return state;
}

}  // namespace pdarts
