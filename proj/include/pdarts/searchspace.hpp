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
#include <memory>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "pdarts/complexity.hpp"
#include "pdarts/nn.hpp"
#include "pdarts/ops.hpp"
#include "pdarts/random.hpp"
#include "pdarts/types.hpp"

namespace pdarts {

/// Number of mixed edges in a complete cell DAG with `nodes` intermediate
/// nodes: node j (0-based) receives one edge from each of the j+2 earlier nodes.
inline int num_edges(int nodes) {
  int e = 0;
  for (int j = 0; j < nodes; ++j) e += j + 2;
  return e;
}

/// Topology of one cell. Node indices: 0 and 1 are the cell inputs,
/// 2..nodes+1 the intermediate nodes; the output is their concatenation.
struct CellSpec {
  int num_intermediate_nodes = 4;
  CellKind kind = CellKind::normal;
  int channels = 16;

  int node_count() const { return 2 + num_intermediate_nodes + 1; }

  /// (source, target) pairs in alpha row order.
  std::vector<std::pair<int, int>> edges() const {
    std::vector<std::pair<int, int>> out;
    for (int j = 0; j < num_intermediate_nodes; ++j)
      for (int i = 0; i < j + 2; ++i) out.emplace_back(i, j + 2);
    return out;
  }

  /// In reduction cells only edges leaving the two input nodes are strided.
  int edge_stride(int source) const { return kind == CellKind::reduction && source < 2 ? 2 : 1; }
};

/// Architecture weights: one (edges x ops) tensor per cell kind, shared by
/// every cell of that kind.
template <typename T>
class ArchitectureParams {
 public:
  ArchitectureParams() = default;
  ArchitectureParams(int nodes, std::vector<OpKind> ops) : nodes_(nodes), ops_(std::move(ops)) {
    if (nodes < 1) throw ConfigError("architecture params need at least one node");
    if (ops_.empty()) throw ConfigError("architecture params need at least one op");
    const int E = pdarts::num_edges(nodes);
    normal_ = Variable<T>::zeros({E, static_cast<int>(ops_.size())}, true);
    reduce_ = Variable<T>::zeros({E, static_cast<int>(ops_.size())}, true);
  }

  int nodes() const { return nodes_; }
  int num_edges() const { return pdarts::num_edges(nodes_); }
  const std::vector<OpKind>& ops() const { return ops_; }

  Variable<T>& of(CellKind k) { return k == CellKind::normal ? normal_ : reduce_; }
  const Variable<T>& of(CellKind k) const { return k == CellKind::normal ? normal_ : reduce_; }

  T& at(CellKind k, int edge, int op) { return of(k).values().at(edge * ops_.size() + op); }
  T at(CellKind k, int edge, int op) const { return of(k).values().at(edge * ops_.size() + op); }

  /// Softmax mixture weights of one edge.
  std::vector<T> weights(CellKind k, int edge) const {
    return ops::softmax(of(k).data() + static_cast<std::size_t>(edge) * ops_.size(),
                        static_cast<int>(ops_.size()));
  }

  bool all_finite() const {
    for (const auto* v : {&normal_, &reduce_})
      for (T x : v->values())
        if (!std::isfinite(x)) return false;
    return true;
  }

  void set_requires_grad(bool on) {
    normal_.set_requires_grad(on);
    reduce_.set_requires_grad(on);
  }
  void zero_grad() {
    normal_.zero_grad();
    reduce_.zero_grad();
  }

 private:
  int nodes_ = 0;
  std::vector<OpKind> ops_;
  Variable<T> normal_, reduce_;
};

/// Alpha with every entry drawn i.i.d. from N(0, (1e-3)^2) under `seed`.
template <typename T>
ArchitectureParams<T> init_alpha(int cell_nodes, std::uint64_t seed,
                                 std::vector<OpKind> op_set = {kAllOps.begin(), kAllOps.end()}) {
  if (cell_nodes < 2) throw ConfigError("init_alpha: cell_nodes must be >= 2");
  ArchitectureParams<T> a(cell_nodes, std::move(op_set));
  Rng rng(seed);
  for (auto k : {CellKind::normal, CellKind::reduction})
    for (auto& v : a.of(k).values()) v = static_cast<T>(rng.normal(0.0, 1e-3));
  return a;
}

/// Builds the layer realizing `kind` on `channels` channels.
/// `search_mode` selects non-affine BN and BN after pooling.
template <typename T>
LayerPtr<T> make_candidate_op(Builder<T>& b, OpKind kind, int channels, int stride,
                              bool search_mode) {
  const std::string name(op_name(kind));
  const bool affine = !search_mode;
  switch (kind) {
    case OpKind::sep_conv_3x3:
      return std::make_unique<SepConv<T>>(b, name, channels, channels, 3, stride, 1, affine);
    case OpKind::sep_conv_5x5:
      return std::make_unique<SepConv<T>>(b, name, channels, channels, 5, stride, 2, affine);
    case OpKind::dil_conv_3x3:
      return std::make_unique<DilConv<T>>(b, name, channels, channels, 3, stride, 2, 2, affine);
    case OpKind::dil_conv_5x5:
      return std::make_unique<DilConv<T>>(b, name, channels, channels, 5, stride, 4, 2, affine);
    case OpKind::max_pool_3x3:
      return std::make_unique<Pool<T>>(b, name, true, channels, stride, search_mode);
    case OpKind::avg_pool_3x3:
      return std::make_unique<Pool<T>>(b, name, false, channels, stride, search_mode);
    case OpKind::skip_connect:
      if (stride == 1) return std::make_unique<Identity<T>>();
      return std::make_unique<FactorizedReduce<T>>(b, name, channels, channels, affine);
    case OpKind::zero:
      return std::make_unique<Zero<T>>(stride);
  }
  throw InvalidOperationError("unknown operation index " + std::to_string(static_cast<int>(kind)));
}

/// Softmax-weighted sum of all candidate operations on one edge.
template <typename T>
class MixedEdge {
 public:
  MixedEdge(Builder<T>& b, const std::vector<OpKind>& op_set, int channels, int stride)
      : ops_(op_set), stride_(stride) {
    for (auto k : op_set) layers_.push_back(make_candidate_op(b, k, channels, stride, true));
  }

  Variable<T> forward(const Variable<T>& x, const Variable<T>& alpha, int row,
                      const ForwardContext& ctx) {
    return forward(x, Variable<T>(), alpha, row, ctx);
  }

  /// `relu_x`, when defined, is relu(x) shared by every candidate that
  /// starts with a ReLU.
  Variable<T> forward(const Variable<T>& x, Variable<T> relu_x, const Variable<T>& alpha, int row,
                      const ForwardContext& ctx) {
    if (x.dim(2) % stride_ || x.dim(3) % stride_)
      throw ShapeError("mixed edge: spatial dims not divisible by stride " +
                       std::to_string(stride_));
    std::vector<Variable<T>> outs(ops_.size());
    bool any = false;
    for (std::size_t k = 0; k < ops_.size(); ++k) {
      if (ops_[k] == OpKind::zero) continue;
      if (layers_[k]->relu_first()) {
        if (!relu_x.defined()) relu_x = ops::relu(x);
        outs[k] = layers_[k]->forward_rectified(relu_x, ctx);
      } else {
        outs[k] = layers_[k]->forward(x, ctx);
      }
      any = true;
    }
    if (!any) return layers_[0]->forward(x, ctx);
    return ops::mixed(outs, alpha, row);
  }

  /// Output of a single candidate.
  Variable<T> op_output(std::size_t k, const Variable<T>& x, const ForwardContext& ctx) {
    return layers_.at(k)->forward(x, ctx);
  }

  FeatureShape trace(const FeatureShape& in, ComplexityReport& r) const {
    FeatureShape out{};
    for (const auto& l : layers_) out = l->trace(in, r);
    return out;
  }

  const std::vector<OpKind>& ops() const { return ops_; }

 private:
  std::vector<OpKind> ops_;
  int stride_;
  std::vector<LayerPtr<T>> layers_;
};

/// Continuous-relaxation cell used during search.
template <typename T>
class SearchCell {
 public:
  SearchCell(Builder<T>& b, const std::string& name, CellSpec spec, int c_prev_prev, int c_prev,
             bool reduction_prev, const std::vector<OpKind>& op_set)
      : spec_(spec) {
    typename Builder<T>::Scope s(b, name);
    const int C = spec.channels;
    if (reduction_prev)
      pre0_ = std::make_unique<FactorizedReduce<T>>(b, "preprocess0", c_prev_prev, C, false);
    else
      pre0_ = std::make_unique<ReLUConvBN<T>>(b, "preprocess0", c_prev_prev, C, 1, 1, 0, false);
    pre1_ = std::make_unique<ReLUConvBN<T>>(b, "preprocess1", c_prev, C, 1, 1, 0, false);
    int e = 0;
    for (auto [src, dst] : spec.edges()) {
      typename Builder<T>::Scope es(b, "edges." + std::to_string(e++));
      (void)dst;
      edges_.push_back(std::make_unique<MixedEdge<T>>(b, op_set, C, spec.edge_stride(src)));
    }
  }

  const CellSpec& spec() const { return spec_; }
  int output_channels() const { return spec_.num_intermediate_nodes * spec_.channels; }
  MixedEdge<T>& edge(std::size_t e) { return *edges_.at(e); }

  Variable<T> forward(const Variable<T>& s0, const Variable<T>& s1, const Variable<T>& alpha,
                      const ForwardContext& ctx) {
    return forward_nodes(pre0_->forward(s0, ctx), pre1_->forward(s1, ctx), alpha, ctx);
  }

  /// Node evaluation on already-preprocessed inputs.
  Variable<T> forward_nodes(const Variable<T>& p0, const Variable<T>& p1, const Variable<T>& alpha,
                            const ForwardContext& ctx) {
    if (p0.shape() != p1.shape())
      throw ShapeError("cell: preprocessed inputs differ: " + to_string(p0.shape()) + " vs " +
                       to_string(p1.shape()));
    if (alpha.dim(0) != static_cast<int>(edges_.size()))
      throw ShapeError("cell: alpha has " + std::to_string(alpha.dim(0)) + " rows for " +
                       std::to_string(edges_.size()) + " edges");
    std::vector<Variable<T>> states{p0, p1};
    std::vector<Variable<T>> rectified(2);
    int e = 0;
    for (int j = 0; j < spec_.num_intermediate_nodes; ++j) {
      std::vector<Variable<T>> incoming;
      for (std::size_t i = 0; i < states.size(); ++i, ++e) {
        if (!rectified[i].defined()) rectified[i] = ops::relu(states[i]);
        incoming.push_back(edges_[e]->forward(states[i], rectified[i], alpha, e, ctx));
      }
      states.push_back(incoming.size() == 1 ? incoming[0] : ops::add(incoming));
      rectified.emplace_back();
    }
    return ops::concat_channels(std::vector<Variable<T>>(states.begin() + 2, states.end()));
  }

  /// Evaluates the cell with a single chosen candidate per edge.
  Variable<T> forward_single(const Variable<T>& p0, const Variable<T>& p1,
                             const std::vector<std::size_t>& choice, const ForwardContext& ctx) {
    std::vector<Variable<T>> states{p0, p1};
    int e = 0;
    for (int j = 0; j < spec_.num_intermediate_nodes; ++j) {
      std::vector<Variable<T>> incoming;
      for (std::size_t i = 0; i < states.size(); ++i, ++e)
        incoming.push_back(edges_[e]->op_output(choice.at(e), states[i], ctx));
      states.push_back(ops::add(incoming));
    }
    return ops::concat_channels(std::vector<Variable<T>>(states.begin() + 2, states.end()));
  }

  Variable<T> preprocess0(const Variable<T>& s0, const ForwardContext& ctx) {
    return pre0_->forward(s0, ctx);
  }
  Variable<T> preprocess1(const Variable<T>& s1, const ForwardContext& ctx) {
    return pre1_->forward(s1, ctx);
  }

  FeatureShape trace(const FeatureShape& in0, const FeatureShape& in1, ComplexityReport& r) const {
    const auto a = pre0_->trace(in0, r);
    const auto b = pre1_->trace(in1, r);
    if (!(a == b)) throw ShapeError("cell: preprocessed input shapes differ in trace");
    if (spec_.kind == CellKind::reduction && (a.height % 2 || a.width % 2))
      throw ShapeError("reduction cell: odd input resolution " + std::to_string(a.height) + "x" +
                       std::to_string(a.width));
    std::vector<FeatureShape> states{a, b};
    int e = 0;
    for (int j = 0; j < spec_.num_intermediate_nodes; ++j) {
      FeatureShape node{};
      for (std::size_t i = 0; i < states.size(); ++i, ++e) node = edges_[e]->trace(states[i], r);
      states.push_back(node);
    }
    return {output_channels(), states.back().height, states.back().width};
  }

 private:
  CellSpec spec_;
  LayerPtr<T> pre0_, pre1_;
  std::vector<std::unique_ptr<MixedEdge<T>>> edges_;
};

/// Macro layout shared by the supernet and the discrete evaluation network.
struct SupernetSpec {
  int num_cells = 8;
  int init_channels = 16;
  int num_classes = 10;
  LabelMode label_mode = LabelMode::single_label;
  int in_channels = 3;
  int stem_multiplier = 3;
  std::vector<OpKind> ops{kAllOps.begin(), kAllOps.end()};

  /// Reduction cells sit at floor(n/3) and floor(2n/3) (zero-indexed).
  std::set<int> reduction_positions() const { return {num_cells / 3, (2 * num_cells) / 3}; }
};

/// Stem -> stack of search cells -> global pooling -> linear classifier.
template <typename T>
class Supernet {
 public:
  Supernet(const SupernetSpec& spec, int cell_nodes, std::uint64_t seed)
      : spec_(spec), alpha_(init_alpha<T>(cell_nodes, derive_seed(seed, 2), spec.ops)) {
    if (spec.num_cells < 2) throw ConfigError("supernet: num_cells must be >= 2");
    if (cell_nodes < 2) throw ConfigError("supernet: cell_nodes must be >= 2");
    if (spec.init_channels < 1 || spec.num_classes < 1)
      throw ConfigError("supernet: channels and classes must be positive");
    Rng rng(derive_seed(seed, 1));
    Builder<T> b(store_, rng);
    const int c_stem = spec.stem_multiplier * spec.init_channels;
    stem_conv_ = std::make_unique<Conv2d<T>>(b, "stem.conv", spec.in_channels, c_stem, 3, 1, 1);
    stem_bn_ = std::make_unique<BatchNorm2d<T>>(b, "stem.bn", c_stem, true);
    int c_pp = c_stem, c_p = c_stem, c = spec.init_channels;
    bool reduction_prev = false;
    const auto red = spec.reduction_positions();
    for (int i = 0; i < spec.num_cells; ++i) {
      const bool reduction = red.count(i) > 0;
      if (reduction) c *= 2;
      CellSpec cs{cell_nodes, reduction ? CellKind::reduction : CellKind::normal, c};
      cells_.push_back(std::make_unique<SearchCell<T>>(b, "cells." + std::to_string(i), cs, c_pp,
                                                       c_p, reduction_prev, spec.ops));
      reduction_prev = reduction;
      c_pp = c_p;
      c_p = cells_.back()->output_channels();
    }
    classifier_ = std::make_unique<Linear<T>>(b, "classifier", c_p, spec.num_classes);
    features_ = c_p;
  }

  Variable<T> forward(const Variable<T>& x, const ForwardContext& ctx) {
    auto s = stem_bn_->forward(stem_conv_->forward(x, ctx), ctx);
    Variable<T> s0 = s, s1 = s;
    for (auto& cell : cells_) {
      auto out = cell->forward(s0, s1, alpha_.of(cell->spec().kind), ctx);
      s0 = s1;
      s1 = out;
    }
    return classifier_->forward(ops::global_avg_pool(s1));
  }

  ComplexityReport complexity(int height, int width) const {
    ComplexityReport r;
    r.input_height = height;
    r.input_width = width;
    auto s = stem_bn_->trace(stem_conv_->trace({spec_.in_channels, height, width}, r), r);
    FeatureShape s0 = s, s1 = s;
    for (const auto& cell : cells_) {
      auto out = cell->trace(s0, s1, r);
      s0 = s1;
      s1 = out;
    }
    classifier_->trace(s1.channels, r);
    return r;
  }

  const SupernetSpec& spec() const { return spec_; }
  int cell_nodes() const { return alpha_.nodes(); }
  ArchitectureParams<T>& alpha() { return alpha_; }
  const ArchitectureParams<T>& alpha() const { return alpha_; }
  ParamStore<T>& store() { return store_; }
  const ParamStore<T>& store() const { return store_; }
  SearchCell<T>& cell(std::size_t i) { return *cells_.at(i); }
  std::size_t num_cells() const { return cells_.size(); }

 private:
  SupernetSpec spec_;
  ParamStore<T> store_;
  ArchitectureParams<T> alpha_;
  std::unique_ptr<Conv2d<T>> stem_conv_;
  std::unique_ptr<BatchNorm2d<T>> stem_bn_;
  std::vector<std::unique_ptr<SearchCell<T>>> cells_;
  std::unique_ptr<Linear<T>> classifier_;
  int features_ = 0;
};

/// Assembles a search network; identical (spec, nodes, seed) yield identical
/// initial weights and alpha.
template <typename T>
std::unique_ptr<Supernet<T>> assemble_supernet(const SupernetSpec& spec, int cell_nodes,
                                               std::uint64_t seed = 0) {
  return std::make_unique<Supernet<T>>(spec, cell_nodes, seed);
}

/// Output of one candidate op on `x`, built with fresh weights from `seed`.
template <typename T>
Variable<T> candidate_op_output(OpKind kind, const Variable<T>& x, int stride, int channels,
                                std::uint64_t seed = 0) {
  if (static_cast<int>(kind) < 0 || static_cast<int>(kind) >= kNumOps)
    throw InvalidOperationError("unknown operation index " + std::to_string(static_cast<int>(kind)));
  if (x.shape().size() != 4 || x.dim(1) != channels)
    throw ShapeError("candidate op: input " + to_string(x.shape()) + " does not carry " +
                     std::to_string(channels) + " channels");
  if (stride != 1 && stride != 2) throw ShapeError("candidate op: stride must be 1 or 2");
  if (x.dim(2) % stride || x.dim(3) % stride)
    throw ShapeError("candidate op: spatial dims not divisible by stride");
  ParamStore<T> store;
  Rng rng(seed);
  Builder<T> b(store, rng);
  auto op = make_candidate_op(b, kind, channels, stride, true);
  return op->forward(x, ForwardContext{});
}

}  // namespace pdarts
