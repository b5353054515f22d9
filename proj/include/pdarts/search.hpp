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
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "pdarts/adas.hpp"
#include "pdarts/bilevel.hpp"
#include "pdarts/data.hpp"
#include "pdarts/genotype.hpp"
#include "pdarts/probing.hpp"
#include "pdarts/searchspace.hpp"

namespace pdarts {

enum class OptimizerKind { sgd, adas };

inline std::string_view optimizer_name(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adas"; }

inline OptimizerKind parse_optimizer(std::string_view s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adas") return OptimizerKind::adas;
  throw ConfigError("unknown optimizer '" + std::string(s) + "'");
}

/// lr_min + (lr0 - lr_min) * (1 + cos(pi t / T)) / 2, with t clamped to [0, T].
inline double cosine_lr(double lr0, int t, int T, double lr_min = 0.0) {
  if (T <= 0) return lr0;
  const double tt = std::clamp(t, 0, T);
  return lr_min + (lr0 - lr_min) * 0.5 * (1.0 + std::cos(M_PI * tt / T));
}

struct SearchConfig {
  int epochs = 50;
  int batch_size = 64;
  int init_channels = 16;
  int cells = 8;
  int nodes = 4;
  OptimizerKind optimizer = OptimizerKind::sgd;
  double lr0 = 0.025;
  /// Floor of the cosine schedule used by the SGD baseline.
  double lr_min = 0.001;
  double adas_beta = 0.98;
  double adas_zeta = 1.0;
  double adas_eta_min = 1e-4;
  SgdConfig sgd;
  ArchAdamConfig arch;
  double probe_delta = kDefaultProbeDelta;
  /// Caps batches per epoch; 0 runs the full stream.
  int max_batches = 0;
};

struct EpochRecord {
  int epoch = 0;
  EpochMetrics metrics;
  /// Mean per-layer rate used during the epoch.
  double lr_mean = 0.0;
  /// Per-layer rates used during the epoch, registry order.
  std::vector<double> layer_lr;
  /// Stable ranks probed at the end of the epoch, registry order.
  std::vector<double> stable_rank;
  /// Softmax mixture weights after the epoch, (edges x ops) per cell kind.
  std::array<std::vector<double>, 2> alpha_weights;
};

struct SearchResult {
  Genotype genotype;
  std::vector<EpochRecord> history;
  std::vector<std::string> layer_ids;
  ProbeSeries probes;
  std::vector<OpKind> ops;
  int num_edges = 0;
};

template <typename T>
std::array<std::vector<double>, 2> mixture_weights(const ArchitectureParams<T>& a) {
  std::array<std::vector<double>, 2> out;
  for (int k = 0; k < 2; ++k)
    for (int e = 0; e < a.num_edges(); ++e)
      for (T w : a.weights(static_cast<CellKind>(k), e)) out[k].push_back(static_cast<double>(w));
  return out;
}

/// Full search: bilevel epochs, per-epoch probing, per-layer rates from
/// Adas or a cosine schedule, and final discretization.
template <typename T>
SearchResult run_search(const SearchConfig& cfg, const SupernetSpec& macro, const Dataset& train,
                        const Dataset& val, const Normalization& norm, const AugmentPolicy& augment,
                        std::uint64_t seed, const std::string& config_hash = "",
                        const std::function<void(const EpochRecord&)>& on_epoch = {},
                        const std::function<void(Supernet<T>&)>& on_done = {}) {
  if (cfg.epochs < 0) throw ConfigError("search: epochs must be nonnegative");
  if (cfg.batch_size < 2) throw ConfigError("search: batch_size must be at least 2");
  SupernetSpec spec = macro;
  spec.num_cells = cfg.cells;
  spec.init_channels = cfg.init_channels;
  Supernet<T> net(spec, cfg.nodes, seed);
  auto state = make_search_state<T>(net, cfg.lr0, seed, cfg.sgd, cfg.arch);
  SearchResult res;
  res.ops = spec.ops;
  res.num_edges = net.alpha().num_edges();
  probe_network(net, 0, res.probes, cfg.probe_delta);
  for (const auto& s : res.probes) res.layer_ids.push_back(s.layer_id);
  AdasState adas;
  if (cfg.optimizer == OptimizerKind::adas) {
    adas = adas_init(res.layer_ids.size(), cfg.lr0, cfg.adas_beta, cfg.adas_zeta, cfg.adas_eta_min);
    std::vector<double> s0;
    for (const auto& s : res.probes) s0.push_back(s.last());
    adas_prime(adas, s0);
  }
  SearchStreams streams{&train, &val, norm, augment, cfg.batch_size, cfg.max_batches};
  for (int e = 0; e < cfg.epochs; ++e) {
    if (cfg.optimizer == OptimizerKind::adas)
      state.w.layer_lr = adas.eta;
    else
      state.w.layer_lr.assign(res.layer_ids.size(), cosine_lr(cfg.lr0, e, cfg.epochs, cfg.lr_min));
    EpochRecord rec;
    rec.epoch = e + 1;
    rec.layer_lr = state.w.layer_lr;
    rec.lr_mean = state.w.shared_lr();
    rec.metrics = search_epoch(state, net, streams);
    probe_network(net, e + 1, res.probes, cfg.probe_delta);
    for (const auto& s : res.probes) rec.stable_rank.push_back(s.last());
    if (cfg.optimizer == OptimizerKind::adas) adas = adas_update(std::move(adas), rec.stable_rank);
    rec.alpha_weights = mixture_weights(net.alpha());
    if (on_epoch) on_epoch(rec);
    res.history.push_back(std::move(rec));
  }
  GenotypeMeta meta{cfg.cells, cfg.init_channels, cfg.nodes, seed, config_hash};
  res.genotype = discretize(net.alpha(), {}, meta);
  if (on_done) on_done(net);
  return res;
}

}  // namespace pdarts
