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

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "pdarts/bilevel.hpp"
#include "pdarts/complexity.hpp"
#include "pdarts/data.hpp"
#include "pdarts/genotype.hpp"
#include "pdarts/nn.hpp"
#include "pdarts/search.hpp"
#include "pdarts/searchspace.hpp"

namespace pdarts {

struct EvalConfig {
  int epochs = 600;
  int batch_size = 96;
  int init_channels = 36;
  /// 0 takes the cell count recorded in the genotype.
  int cells = 0;
  double lr0 = 0.025;
  double momentum = 0.9;
  double weight_decay = 3e-4;
  double grad_clip = 5.0;
  bool cosine = true;
  bool cutout = true;
  /// 0 picks half of the input side.
  int cutout_length = 0;
  bool auxiliary = true;
  double auxiliary_weight = 0.4;
  int quick_epochs = 100;

  void validate() const {
    if (epochs < 0 || batch_size < 1 || init_channels < 1 || cells < 0 || quick_epochs < 0)
      throw ConfigError("eval: epochs, batch_size, init_channels and cells must be positive");
    if (quick_epochs > epochs) throw ConfigError("eval: quick_epochs exceeds epochs");
    if (!(lr0 >= 0) || !(momentum >= 0) || !(weight_decay >= 0) || !(auxiliary_weight >= 0) ||
        cutout_length < 0)
      throw ConfigError("eval: rates, weights and lengths must be nonnegative");
  }
};

/// Cell with one fixed op per selected input.
template <typename T>
class EvalCell {
 public:
  EvalCell(Builder<T>& b, const std::string& name, const CellGene& gene, const std::vector<int>& concat,
           bool reduction, int C, int c_prev_prev, int c_prev, bool reduction_prev)
      : gene_(gene), concat_(concat), reduction_(reduction), C_(C) {
    typename Builder<T>::Scope s(b, name);
    if (reduction_prev)
      pre0_ = std::make_unique<FactorizedReduce<T>>(b, "preprocess0", c_prev_prev, C, true);
    else
      pre0_ = std::make_unique<ReLUConvBN<T>>(b, "preprocess0", c_prev_prev, C, 1, 1, 0, true);
    pre1_ = std::make_unique<ReLUConvBN<T>>(b, "preprocess1", c_prev, C, 1, 1, 0, true);
    for (std::size_t j = 0; j < gene.size(); ++j)
      for (int k = 0; k < 2; ++k) {
        const auto& in = gene[j][k];
        const int stride = reduction && in.from < 2 ? 2 : 1;
        typename Builder<T>::Scope ns(b, "nodes." + std::to_string(j + 2) + "." + std::to_string(k));
        ops_.push_back(make_candidate_op(b, in.op, C, stride, false));
      }
  }

  int output_channels() const { return static_cast<int>(concat_.size()) * C_; }
  bool reduction() const { return reduction_; }

  Variable<T> forward(const Variable<T>& s0, const Variable<T>& s1, const ForwardContext& ctx) {
    std::vector<Variable<T>> states{pre0_->forward(s0, ctx), pre1_->forward(s1, ctx)};
    if (states[0].shape() != states[1].shape())
      throw ShapeError("eval cell: preprocessed inputs differ: " + to_string(states[0].shape()) +
                       " vs " + to_string(states[1].shape()));
    for (std::size_t j = 0; j < gene_.size(); ++j) {
      auto a = ops_[2 * j]->forward(states[gene_[j][0].from], ctx);
      auto c = ops_[2 * j + 1]->forward(states[gene_[j][1].from], ctx);
      states.push_back(ops::add(a, c));
    }
    std::vector<Variable<T>> out;
    for (int n : concat_) out.push_back(states[n]);
    return ops::concat_channels(out);
  }

  FeatureShape trace(const FeatureShape& in0, const FeatureShape& in1, ComplexityReport& r) const {
    std::vector<FeatureShape> states{pre0_->trace(in0, r), pre1_->trace(in1, r)};
    if (!(states[0] == states[1])) throw ShapeError("eval cell: preprocessed shapes differ in trace");
    if (reduction_ && (states[0].height % 2 || states[0].width % 2))
      throw ShapeError("reduction cell: odd input resolution " + std::to_string(states[0].height) + "x" +
                       std::to_string(states[0].width));
    for (std::size_t j = 0; j < gene_.size(); ++j) {
      const auto a = ops_[2 * j]->trace(states[gene_[j][0].from], r);
      const auto c = ops_[2 * j + 1]->trace(states[gene_[j][1].from], r);
      if (!(a == c)) throw ShapeError("eval cell: node inputs disagree in shape");
      states.push_back(a);
    }
    return {output_channels(), states.back().height, states.back().width};
  }

 private:
  CellGene gene_;
  std::vector<int> concat_;
  bool reduction_;
  int C_;
  LayerPtr<T> pre0_, pre1_;
  std::vector<LayerPtr<T>> ops_;
};

/// ReLU -> 1x1 conv to 128 -> BN -> ReLU -> global pooling -> linear.
template <typename T>
class AuxiliaryHead {
 public:
  AuxiliaryHead(Builder<T>& b, int c_in, int num_classes) {
    typename Builder<T>::Scope s(b, "auxiliary");
    conv_ = std::make_unique<Conv2d<T>>(b, "conv", c_in, 128, 1, 1, 0);
    bn_ = std::make_unique<BatchNorm2d<T>>(b, "bn", 128, true);
    fc_ = std::make_unique<Linear<T>>(b, "classifier", 128, num_classes);
  }
  Variable<T> forward(const Variable<T>& x, const ForwardContext& ctx) {
    auto h = ops::relu(bn_->forward(conv_->forward(ops::relu(x), ctx), ctx));
    return fc_->forward(ops::global_avg_pool(h));
  }

 private:
  std::unique_ptr<Conv2d<T>> conv_;
  std::unique_ptr<BatchNorm2d<T>> bn_;
  std::unique_ptr<Linear<T>> fc_;
};

template <typename T>
struct EvalOutput {
  Variable<T> logits;
  /// Defined only in training mode with the auxiliary head on.
  Variable<T> aux;
};

/// Discrete network: same stem, reduction placement and classifier as the
/// supernet, with each cell realized from the genotype.
template <typename T>
class EvalNetwork {
 public:
  EvalNetwork(const Genotype& g, int num_cells, int init_channels, int num_classes, LabelMode mode,
              bool auxiliary, std::uint64_t seed, int in_channels = 3, int stem_multiplier = 3)
      : mode_(mode), in_channels_(in_channels) {
    g.validate();
    if (num_cells < 2) throw ConfigError("eval network: num_cells must be >= 2");
    if (init_channels < 1 || num_classes < 1) throw ConfigError("eval network: channels and classes must be positive");
    Rng rng(derive_seed(seed, 1));
    Builder<T> b(store_, rng);
    const int c_stem = stem_multiplier * init_channels;
    stem_conv_ = std::make_unique<Conv2d<T>>(b, "stem.conv", in_channels, c_stem, 3, 1, 1);
    stem_bn_ = std::make_unique<BatchNorm2d<T>>(b, "stem.bn", c_stem, true);
    SupernetSpec layout;
    layout.num_cells = num_cells;
    const auto red = layout.reduction_positions();
    aux_after_ = *red.rbegin();
    int c_pp = c_stem, c_p = c_stem, c = init_channels, c_aux = 0;
    bool reduction_prev = false;
    for (int i = 0; i < num_cells; ++i) {
      const bool reduction = red.count(i) > 0;
      if (reduction) c *= 2;
      cells_.push_back(std::make_unique<EvalCell<T>>(b, "cells." + std::to_string(i),
                                                     reduction ? g.reduce : g.normal, g.concat,
                                                     reduction, c, c_pp, c_p, reduction_prev));
      reduction_prev = reduction;
      c_pp = c_p;
      c_p = cells_.back()->output_channels();
      if (i == aux_after_) c_aux = c_p;
    }
    classifier_ = std::make_unique<Linear<T>>(b, "classifier", c_p, num_classes);
    if (auxiliary) {
      // Own stream so the trunk initialization does not depend on the head.
      Rng aux_rng(derive_seed(seed, 3));
      Builder<T> ab(store_, aux_rng);
      ab.set_auxiliary(true);
      aux_ = std::make_unique<AuxiliaryHead<T>>(ab, c_aux, num_classes);
    }
  }

  EvalOutput<T> forward(const Variable<T>& x, const ForwardContext& ctx) {
    EvalOutput<T> out;
    auto s = stem_bn_->forward(stem_conv_->forward(x, ctx), ctx);
    Variable<T> s0 = s, s1 = s;
    for (int i = 0; i < static_cast<int>(cells_.size()); ++i) {
      auto o = cells_[i]->forward(s0, s1, ctx);
      s0 = s1;
      s1 = o;
      if (i == aux_after_ && aux_ && ctx.training) out.aux = aux_->forward(s1, ctx);
    }
    out.logits = classifier_->forward(ops::global_avg_pool(s1));
    return out;
  }

  /// Auxiliary head excluded.
  ComplexityReport complexity(int height, int width) const {
    ComplexityReport r;
    r.input_height = height;
    r.input_width = width;
    auto s = stem_bn_->trace(stem_conv_->trace({in_channels_, height, width}, r), r);
    FeatureShape s0 = s, s1 = s;
    for (const auto& cell : cells_) {
      auto o = cell->trace(s0, s1, r);
      s0 = s1;
      s1 = o;
    }
    classifier_->trace(s1.channels, r);
    return r;
  }

  bool has_auxiliary() const { return static_cast<bool>(aux_); }
  LabelMode label_mode() const { return mode_; }
  ParamStore<T>& store() { return store_; }
  const ParamStore<T>& store() const { return store_; }
  std::size_t num_cells() const { return cells_.size(); }

 private:
  LabelMode mode_;
  int in_channels_;
  ParamStore<T> store_;
  std::unique_ptr<Conv2d<T>> stem_conv_;
  std::unique_ptr<BatchNorm2d<T>> stem_bn_;
  std::vector<std::unique_ptr<EvalCell<T>>> cells_;
  std::unique_ptr<Linear<T>> classifier_;
  std::unique_ptr<AuxiliaryHead<T>> aux_;
  int aux_after_ = 0;
};

template <typename T>
std::unique_ptr<EvalNetwork<T>> build_eval_network(const Genotype& g, const EvalConfig& cfg, int num_classes,
                                                   LabelMode mode, std::uint64_t seed = 0,
                                                   int in_channels = 3) {
  try {
    g.validate();
  } catch (const ValidationError& e) {
    throw ConfigError(std::string("eval network: ") + e.what());
  }
  cfg.validate();
  const int cells = cfg.cells > 0 ? cfg.cells : g.meta.num_cells;
  if (cells < 2) throw ConfigError("eval network: no cell count in config or genotype");
  return std::make_unique<EvalNetwork<T>>(g, cells, cfg.init_channels, num_classes, mode, cfg.auxiliary, seed,
                                          in_channels);
}

// ---------------------------------------------------------------------------
// Metrics

struct EvalMetrics {
  double accuracy = 0.0;
  double loss = 0.0;
};

/// Accuracy in percent from per-class scores (N x K, probabilities for
/// multi-label). Single-label: top-1 rate. Multi-label: mean binary
/// accuracy at threshold 0.5.
inline double prediction_accuracy(const std::vector<double>& scores, int N, int K, LabelMode mode,
                                  const std::vector<int>& labels, const std::vector<float>& targets) {
  if (N == 0) throw ContractError("accuracy: empty prediction set");
  if (scores.size() != static_cast<std::size_t>(N) * K) throw ShapeError("accuracy: score matrix size mismatch");
  double correct = 0;
  for (int n = 0; n < N; ++n) {
    const double* row = scores.data() + static_cast<std::size_t>(n) * K;
    if (mode == LabelMode::single_label) {
      correct += static_cast<int>(std::max_element(row, row + K) - row) == labels.at(n);
    } else {
      int ok = 0;
      for (int k = 0; k < K; ++k) ok += (row[k] >= 0.5) == (targets.at(static_cast<std::size_t>(n) * K + k) > 0.5f);
      correct += static_cast<double>(ok) / K;
    }
  }
  return 100.0 * correct / N;
}

namespace detail {

template <typename T>
const Variable<T>& logits_of(const Variable<T>& v) {
  return v;
}
template <typename T>
const Variable<T>& logits_of(const EvalOutput<T>& o) {
  return o.logits;
}

}  // namespace detail

/// Eval-mode pass over a dataset; loss is the mean per-sample loss.
template <typename T, typename Net>
EvalMetrics evaluate_metrics(Net& net, const Dataset& data, const Normalization& norm, int batch_size = 128) {
  if (data.empty()) throw ContractError("evaluate: empty test set");
  NoGradGuard guard;
  Rng none(0);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t s = 0; s < data.size(); s += batch_size) {
    std::vector<std::size_t> idx;
    for (std::size_t i = s; i < std::min(data.size(), s + batch_size); ++i) idx.push_back(i);
    batches.push_back(std::move(idx));
  }
  double loss = 0;
  std::vector<double> scores;
  const int K = data.num_classes;
  for (const auto& idx : batches) {
    const auto b = make_batch<T>(data, idx, norm, AugmentPolicy{}, none);
    const auto out = net.forward(b.images, ForwardContext{false, false});
    const Variable<T>& z = detail::logits_of<T>(out);
    if (z.dim(1) != K) throw ShapeError("evaluate: network emits " + std::to_string(z.dim(1)) + " classes");
    loss += static_cast<double>(batch_loss(z, b).values()[0]) * b.size();
    for (std::size_t i = 0; i < z.size(); ++i) {
      const double v = z.values()[i];
      scores.push_back(data.label_mode == LabelMode::multi_label ? 1.0 / (1.0 + std::exp(-v)) : v);
    }
  }
  EvalMetrics m;
  m.loss = loss / static_cast<double>(data.size());
  m.accuracy = prediction_accuracy(scores, static_cast<int>(data.size()), K, data.label_mode, data.labels,
                                   data.targets);
  return m;
}

// ---------------------------------------------------------------------------
// Training

struct EvalEpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double test_loss = 0.0;
  double test_acc = 0.0;
};

/// Momentum SGD from scratch with a cosine schedule to zero, cutout, and the
/// weighted auxiliary loss. `test` may be empty (no test columns then).
template <typename T>
std::vector<EvalEpochRecord> train_eval(EvalNetwork<T>& net, const Dataset& train, const Dataset& test,
                                        const Normalization& norm, const EvalConfig& cfg,
                                        const AugmentPolicy& augment, std::uint64_t seed,
                                        const std::function<void(const EvalEpochRecord&)>& on_epoch = {}) {
  cfg.validate();
  std::vector<EvalEpochRecord> history;
  if (cfg.epochs == 0) return history;
  if (train.empty()) throw ContractError("train_eval: empty training set");
  AugmentPolicy policy = augment;
  policy.cutout_length = cfg.cutout ? (cfg.cutout_length > 0 ? cfg.cutout_length : std::min(train.height, train.width) / 2) : 0;
  WeightOptimizerState<T> opt;
  opt.cfg = SgdConfig{cfg.momentum, cfg.weight_decay, cfg.grad_clip};
  const BatchSampler sampler(train.size(), cfg.batch_size, derive_seed(seed, 30));
  SearchState<T> diag;
  for (int e = 0; e < cfg.epochs; ++e) {
    const double lr = cfg.cosine ? cosine_lr(cfg.lr0, e, cfg.epochs) : cfg.lr0;
    opt.layer_lr.assign(net.store().num_conv_layers(), lr);
    Rng aug(derive_seed(seed, 6000 + static_cast<std::uint64_t>(e)));
    StepResult tr;
    const auto batches = sampler.epoch(e);
    diag.epoch = e;
    for (std::size_t i = 0; i < batches.size(); ++i) {
      diag.batch = static_cast<int>(i);
      const auto b = make_batch<T>(train, batches[i], norm, policy, aug);
      net.store().zero_grad();
      auto out = net.forward(b.images, ForwardContext{true, true});
      auto loss = batch_loss(out.logits, b);
      const double main_loss = loss.values()[0];
      if (out.aux.defined()) loss = ops::add(loss, ops::scale(batch_loss(out.aux, b), static_cast<T>(cfg.auxiliary_weight)));
      detail::require_finite_loss(static_cast<double>(loss.values()[0]), diag, "train_eval");
      backward(loss);
      sgd_apply(opt, net.store());
      net.store().zero_grad();
      tr.loss += main_loss * b.size();
      tr.correct += correct_mass(out.logits, b);
      tr.count += b.size();
    }
    EvalEpochRecord rec;
    rec.epoch = e + 1;
    rec.lr = lr;
    rec.train_loss = tr.count ? tr.loss / tr.count : 0.0;
    rec.train_acc = tr.count ? 100.0 * tr.correct / tr.count : 0.0;
    if (!test.empty()) {
      const auto m = evaluate_metrics<T>(net, test, norm);
      rec.test_loss = m.loss;
      rec.test_acc = m.accuracy;
    }
    if (on_epoch) on_epoch(rec);
    history.push_back(rec);
  }
  return history;
}

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr char kCheckpointMagic[8] = {'P', 'D', 'A', 'R', 'T', 'S', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointInfo {
  std::string config_hash;
  int epoch = 0;
};

namespace detail {

template <typename V>
void put(std::ostream& os, const V& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(V));
}
template <typename V>
V get(std::istream& is, const std::string& file) {
  V v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(V));
  if (!is) throw IoError("truncated checkpoint: " + file);
  return v;
}
inline void put_string(std::ostream& os, const std::string& s) {
  put<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
inline std::string get_string(std::istream& is, const std::string& file) {
  const auto n = get<std::uint32_t>(is, file);
  if (n > (1u << 20)) throw IoError("corrupt checkpoint: " + file);
  std::string s(n, '\0');
  is.read(s.data(), n);
  if (!is) throw IoError("truncated checkpoint: " + file);
  return s;
}
inline void put_values(std::ostream& os, const std::string& name, const double* v, std::size_t n) {
  put_string(os, name);
  put<std::uint64_t>(os, n);
  os.write(reinterpret_cast<const char*>(v), static_cast<std::streamsize>(n * sizeof(double)));
}

}  // namespace detail

/// Binary layout: magic, version, config hash, epoch, then every parameter
/// and buffer as (name, count, float64 values).
template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ParamStore<T>& store, const std::string& config_hash,
                     int epoch) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write checkpoint " + path.string());
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put(os, kCheckpointVersion);
  detail::put_string(os, config_hash);
  detail::put<std::int32_t>(os, epoch);
  detail::put<std::uint64_t>(os, store.params().size());
  detail::put<std::uint64_t>(os, store.buffers().size());
  for (const auto& p : store.params()) {
    std::vector<double> v(p.var.values().begin(), p.var.values().end());
    detail::put_values(os, p.name, v.data(), v.size());
  }
  for (const auto& b : store.buffers()) {
    std::vector<double> v(b.stats->mean.begin(), b.stats->mean.end());
    v.insert(v.end(), b.stats->var.begin(), b.stats->var.end());
    detail::put_values(os, b.name, v.data(), v.size());
  }
  if (!os) throw IoError("failed writing checkpoint " + path.string());
}

template <typename T>
CheckpointInfo load_checkpoint(const std::filesystem::path& path, ParamStore<T>& store) {
  const std::string file = path.string();
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + file);
  char magic[sizeof(kCheckpointMagic)];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) throw IoError("not a checkpoint: " + file);
  const auto version = detail::get<std::uint32_t>(is, file);
  if (version != kCheckpointVersion) throw VersionError("unsupported checkpoint version " + std::to_string(version));
  CheckpointInfo info;
  info.config_hash = detail::get_string(is, file);
  info.epoch = detail::get<std::int32_t>(is, file);
  const auto np = detail::get<std::uint64_t>(is, file);
  const auto nb = detail::get<std::uint64_t>(is, file);
  if (np != store.params().size() || nb != store.buffers().size())
    throw ValidationError("checkpoint " + file + " does not match the network layout");
  auto read_into = [&](const std::string& want, std::size_t n) {
    const auto name = detail::get_string(is, file);
    const auto count = detail::get<std::uint64_t>(is, file);
    if (name != want || count != n)
      throw ValidationError("checkpoint entry '" + name + "' does not match '" + want + "'");
    std::vector<double> v(n);
    is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (!is) throw IoError("truncated checkpoint: " + file);
    return v;
  };
  for (auto& p : store.params()) {
    const auto v = read_into(p.name, p.var.size());
    for (std::size_t i = 0; i < v.size(); ++i) p.var.values()[i] = static_cast<T>(v[i]);
  }
  for (const auto& b : store.buffers()) {
    const std::size_t c = b.stats->mean.size();
    const auto v = read_into(b.name, 2 * c);
    for (std::size_t i = 0; i < c; ++i) {
      b.stats->mean[i] = static_cast<T>(v[i]);
      b.stats->var[i] = static_cast<T>(v[c + i]);
    }
  }
  return info;
}

// ---------------------------------------------------------------------------
// Resolution sweep

struct ResolutionRow {
  int resolution = 0;
  double accuracy = 0.0;
  std::uint64_t macs = 0;
  std::uint64_t params = 0;
};

inline void check_resolution(int r) {
  if (r < 4) throw ConfigError("resolution " + std::to_string(r) + " is below 4");
  if (r % 4) throw ConfigError("resolution " + std::to_string(r) + " is not divisible by 4 (two stride-2 reductions)");
}

/// Retrains and evaluates the genotype once per square input resolution.
template <typename T>
std::vector<ResolutionRow> resolution_sweep(const Genotype& g, const std::vector<int>& resolutions,
                                            const DatasetSplits& data, const EvalConfig& cfg,
                                            const AugmentPolicy& augment, std::uint64_t seed) {
  if (resolutions.empty()) throw ConfigError("resolution sweep: no resolutions given");
  for (int r : resolutions) check_resolution(r);
  std::vector<ResolutionRow> rows;
  for (int r : resolutions) {
    const Dataset train = resized(data.train, r, r);
    const Dataset test = resized(data.test, r, r);
    const auto norm = Normalization::from(train);
    auto net = build_eval_network<T>(g, cfg, train.num_classes, train.label_mode, seed, train.channels);
    train_eval(*net, train, Dataset{}, norm, cfg, augment, seed);
    ResolutionRow row;
    row.resolution = r;
    row.accuracy = test.empty() ? 0.0 : evaluate_metrics<T>(*net, test, norm).accuracy;
    const auto rep = net->complexity(r, r);
    row.macs = rep.macs;
    row.params = rep.params;
    rows.push_back(row);
  }
  return rows;
}

}  // namespace pdarts
