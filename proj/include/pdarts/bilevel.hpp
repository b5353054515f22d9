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
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "pdarts/data.hpp"
#include "pdarts/error.hpp"
#include "pdarts/nn.hpp"
#include "pdarts/ops.hpp"
#include "pdarts/searchspace.hpp"
#include "pdarts/tensor.hpp"

namespace pdarts {

/// Momentum SGD on the network weights (PyTorch semantics: decay is added to
/// the gradient, the first step seeds the buffer with the raw direction).
struct SgdConfig {
  double momentum = 0.9;
  double weight_decay = 3e-4;
  /// Global gradient-norm clip; 0 disables.
  double grad_clip = 5.0;
};

/// Adam on the architecture parameters with L2 decay added to the gradient.
struct ArchAdamConfig {
  double lr = 3e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-3;
};

template <typename T>
struct WeightOptimizerState {
  SgdConfig cfg;
  /// One learning rate per registered conv layer.
  std::vector<double> layer_lr;
  std::vector<std::vector<T>> momentum;
  long steps = 0;

  /// Rate applied to parameters outside the conv registry.
  double shared_lr() const {
    if (layer_lr.empty()) return 0.0;
    return std::accumulate(layer_lr.begin(), layer_lr.end(), 0.0) / static_cast<double>(layer_lr.size());
  }
};

struct ArchOptimizerState {
  ArchAdamConfig cfg;
  std::array<std::vector<double>, 2> m, v;
  long steps = 0;
};

template <typename T>
struct SearchState {
  int epoch = 0;
  WeightOptimizerState<T> w;
  ArchOptimizerState a;
  std::uint64_t rng_seed = 0;
  /// Batch index within the current epoch, for diagnostics.
  int batch = 0;
};

template <typename T, typename Net>
SearchState<T> make_search_state(const Net& net, double lr0, std::uint64_t seed, SgdConfig sgd = {},
                                 ArchAdamConfig adam = {}) {
  if (!(lr0 >= 0.0)) throw ConfigError("search: learning rate must be nonnegative");
  SearchState<T> s;
  s.w.cfg = sgd;
  s.w.layer_lr.assign(net.store().num_conv_layers(), lr0);
  s.a.cfg = adam;
  s.rng_seed = seed;
  return s;
}

/// Loss, correct-prediction mass and sample count of one forward pass.
struct StepResult {
  double loss = 0.0;
  double correct = 0.0;
  int count = 0;
};

/// Cross-entropy for class ids, per-class sigmoid BCE for 0/1 targets.
template <typename T>
Variable<T> batch_loss(const Variable<T>& logits, const Batch<T>& b) {
  if (!b.labels.empty()) return ops::cross_entropy(logits, b.labels);
  return ops::bce_with_logits(logits, b.targets);
}

/// Top-1 matches (single-label) or the fraction of correct 0/1 decisions at
/// probability 0.5 summed over samples (multi-label).
template <typename T>
double correct_mass(const Variable<T>& logits, const Batch<T>& b) {
  const int N = logits.dim(0), K = logits.dim(1);
  const T* z = logits.data();
  double c = 0;
  for (int n = 0; n < N; ++n) {
    const T* row = z + static_cast<std::size_t>(n) * K;
    if (!b.labels.empty()) {
      c += static_cast<int>(std::max_element(row, row + K) - row) == b.labels[n];
    } else {
      int ok = 0;
      for (int k = 0; k < K; ++k) ok += (row[k] > T(0)) == (b.targets[static_cast<std::size_t>(n) * K + k] > T(0.5));
      c += static_cast<double>(ok) / K;
    }
  }
  return c;
}

namespace detail {

template <typename T>
void require_finite_loss(double loss, const SearchState<T>& s, const char* where) {
  if (!std::isfinite(loss))
    throw NumericError(std::string(where) + ": non-finite loss at epoch " + std::to_string(s.epoch) +
                           ", batch " + std::to_string(s.batch),
                       s.epoch, s.batch);
}

}  // namespace detail

/// Validation-loss gradient with respect to alpha at the current weights.
/// Weights are not recorded and batch-norm running statistics stay put.
/// Returns the loss; gradients land in alpha.of(kind).grad().
template <typename T, typename Net>
StepResult alpha_gradient(Net& net, const Batch<T>& val) {
  auto& alpha = net.alpha();
  if (!alpha.all_finite()) throw NumericError("alpha_step: non-finite architecture parameters");
  net.store().set_requires_grad(false);
  alpha.set_requires_grad(true);
  alpha.zero_grad();
  StepResult r;
  try {
    auto logits = net.forward(val.images, ForwardContext{true, false});
    auto loss = batch_loss(logits, val);
    r.loss = loss.values()[0];
    r.correct = correct_mass(logits, val);
    r.count = val.size();
    if (std::isfinite(r.loss)) backward(loss);
  } catch (...) {
    net.store().set_requires_grad(true);
    throw;
  }
  net.store().set_requires_grad(true);
  return r;
}

/// One Adam step on both alpha tensors from their current gradients.
template <typename T>
void adam_apply(ArchOptimizerState& st, ArchitectureParams<T>& alpha) {
  ++st.steps;
  const auto& c = st.cfg;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(st.steps));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(st.steps));
  for (int kind = 0; kind < 2; ++kind) {
    auto& a = alpha.of(static_cast<CellKind>(kind));
    auto& m = st.m[kind];
    auto& v = st.v[kind];
    if (m.size() != a.size()) {
      m.assign(a.size(), 0.0);
      v.assign(a.size(), 0.0);
    }
    const bool has = a.has_grad();
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double g = (has ? static_cast<double>(a.grad()[i]) : 0.0) + c.weight_decay * a.values()[i];
      m[i] = c.beta1 * m[i] + (1 - c.beta1) * g;
      v[i] = c.beta2 * v[i] + (1 - c.beta2) * g * g;
      const double step = c.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + c.eps);
      a.values()[i] = static_cast<T>(a.values()[i] - step);
    }
  }
}

/// First-order architecture update: one Adam step on the validation loss
/// with the weights held fixed.
template <typename T, typename Net>
StepResult alpha_step(SearchState<T>& state, Net& net, const Batch<T>& val) {
  auto r = alpha_gradient<T>(net, val);
  detail::require_finite_loss(r.loss, state, "alpha_step");
  adam_apply(state.a, net.alpha());
  net.alpha().zero_grad();
  return r;
}

/// Clips the global gradient norm, then applies one momentum-SGD step per
/// parameter using its layer's rate.
template <typename T>
void sgd_apply(WeightOptimizerState<T>& st, ParamStore<T>& store) {
  auto& params = store.params();
  if (st.momentum.size() != params.size()) st.momentum.assign(params.size(), {});
  double clip_scale = 1.0;
  if (st.cfg.grad_clip > 0) {
    double sq = 0;
    for (const auto& p : params)
      if (p.var.has_grad())
        for (T g : p.var.grad()) sq += static_cast<double>(g) * g;
    const double norm = std::sqrt(sq);
    if (norm > st.cfg.grad_clip) clip_scale = st.cfg.grad_clip / (norm + 1e-6);
  }
  const double shared = st.shared_lr();
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k];
    const double lr = p.layer >= 0 ? st.layer_lr.at(p.layer) : shared;
    auto& w = p.var.values();
    auto& buf = st.momentum[k];
    const bool first = buf.empty();
    if (first) buf.assign(w.size(), T(0));
    const bool has = p.var.has_grad();
    const T wd = static_cast<T>(st.cfg.weight_decay), mom = static_cast<T>(st.cfg.momentum);
    const T scale = static_cast<T>(clip_scale), step = static_cast<T>(lr);
    for (std::size_t i = 0; i < w.size(); ++i) {
      const T d = (has ? scale * p.var.grad()[i] : T(0)) + wd * w[i];
      buf[i] = first ? d : mom * buf[i] + d;
      w[i] -= step * buf[i];
    }
  }
  ++st.steps;
}

/// One training step on the weights with alpha held fixed.
template <typename T, typename Net>
StepResult weight_step(SearchState<T>& state, Net& net, const Batch<T>& train) {
  if (state.w.layer_lr.size() != net.store().num_conv_layers())
    throw ContractError("weight_step: per-layer learning rates not populated");
  for (double lr : state.w.layer_lr)
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw ContractError("weight_step: invalid learning rate");
  net.alpha().set_requires_grad(false);
  net.store().set_requires_grad(true);
  net.store().zero_grad();
  StepResult r;
  {
    auto logits = net.forward(train.images, ForwardContext{true, true});
    auto loss = batch_loss(logits, train);
    r.loss = loss.values()[0];
    r.correct = correct_mass(logits, train);
    r.count = train.size();
    detail::require_finite_loss(r.loss, state, "weight_step");
    backward(loss);
  }
  sgd_apply(state.w, net.store());
  net.store().zero_grad();
  net.alpha().set_requires_grad(true);
  return r;
}

struct EpochMetrics {
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;
  int batches = 0;
  bool empty() const { return batches == 0; }
};

/// Training and validation streams of one search. Validation batches are
/// drawn in their own seeded order and wrap when the stream runs short.
struct SearchStreams {
  const Dataset* train = nullptr;
  const Dataset* val = nullptr;
  Normalization norm;
  AugmentPolicy train_augment;
  int batch_size = 64;
  /// Caps batches per epoch; 0 means the full training stream.
  int max_batches = 0;
};

inline void require_disjoint(const Dataset& a, const Dataset& b) {
  std::set<std::int64_t> ids(a.ids.begin(), a.ids.end());
  for (auto id : b.ids)
    if (ids.count(id)) throw ContractError("search: sample " + std::to_string(id) + " is in both streams");
}

/// One epoch of alternating updates: for each paired batch, alpha_step on
/// validation data, then weight_step on training data. Validation metrics
/// are those of the alpha-step passes.
template <typename T, typename Net>
EpochMetrics search_epoch(SearchState<T>& state, Net& net, const SearchStreams& s) {
  if (!s.train || !s.val) throw ContractError("search_epoch: streams not set");
  require_disjoint(*s.train, *s.val);
  const BatchSampler ts(s.train->size(), s.batch_size, derive_seed(state.rng_seed, 20));
  const BatchSampler vs(s.val->size(), s.batch_size, derive_seed(state.rng_seed, 21));
  auto tb = ts.epoch(state.epoch);
  if (s.max_batches > 0 && static_cast<int>(tb.size()) > s.max_batches) tb.resize(s.max_batches);
  EpochMetrics m;
  if (tb.empty() || s.val->empty()) return m;
  std::vector<std::vector<std::size_t>> vb;
  for (int round = 0; vb.size() < tb.size(); ++round) {
    auto more = vs.epoch(state.epoch * 7919 + round);
    if (more.empty()) throw ContractError("search_epoch: validation stream yields no batches");
    vb.insert(vb.end(), more.begin(), more.end());
  }
  Rng aug(derive_seed(state.rng_seed, 5000 + static_cast<std::uint64_t>(state.epoch)));
  Rng none(0);
  StepResult tr, vr;
  for (std::size_t i = 0; i < tb.size(); ++i) {
    state.batch = static_cast<int>(i);
    const auto val = make_batch<T>(*s.val, vb[i], s.norm, AugmentPolicy{}, none);
    const auto a = alpha_step(state, net, val);
    const auto train = make_batch<T>(*s.train, tb[i], s.norm, s.train_augment, aug);
    const auto w = weight_step(state, net, train);
    vr.loss += a.loss * a.count;
    vr.correct += a.correct;
    vr.count += a.count;
    tr.loss += w.loss * w.count;
    tr.correct += w.correct;
    tr.count += w.count;
  }
  m.batches = static_cast<int>(tb.size());
  m.train_loss = tr.loss / tr.count;
  m.train_acc = 100.0 * tr.correct / tr.count;
  m.val_loss = vr.loss / vr.count;
  m.val_acc = 100.0 * vr.correct / vr.count;
  ++state.epoch;
  return m;
}

}  // namespace pdarts
