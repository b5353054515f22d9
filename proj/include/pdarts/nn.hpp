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
#include <memory>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "pdarts/complexity.hpp"
#include "pdarts/error.hpp"
#include "pdarts/ops.hpp"
#include "pdarts/random.hpp"
#include "pdarts/tensor.hpp"

namespace pdarts {

enum class ParamRole { conv, batch_norm, linear };

template <typename T>
struct Param {
  std::string name;
  Variable<T> var;
  ParamRole role;
  bool auxiliary = false;
  /// Index into the convolution registry, or -1 for non-conv parameters.
  int layer = -1;
};

template <typename T>
struct Buffer {
  std::string name;
  std::shared_ptr<ops::BatchNormStats<T>> stats;
};

/// Owns the registry of trainable parameters and non-trainable buffers of
/// one network, in construction order.
template <typename T>
class ParamStore {
 public:
  Variable<T> add(std::string name, Shape shape, ParamRole role, bool auxiliary) {
    auto v = Variable<T>::zeros(std::move(shape), true);
    Param<T> p{std::move(name), v, role, auxiliary, -1};
    if (role == ParamRole::conv) {
      p.layer = static_cast<int>(conv_.size());
      conv_.push_back(params_.size());
    }
    params_.push_back(std::move(p));
    return v;
  }

  void add_buffer(std::string name, std::shared_ptr<ops::BatchNormStats<T>> stats) {
    buffers_.push_back({std::move(name), std::move(stats)});
  }

  const std::vector<Param<T>>& params() const { return params_; }
  std::vector<Param<T>>& params() { return params_; }
  const std::vector<Buffer<T>>& buffers() const { return buffers_; }

  const Param<T>* find(std::string_view name) const {
    for (const auto& p : params_)
      if (p.name == name) return &p;
    return nullptr;
  }

  /// Convolution registry: the probed layers, in construction order.
  std::size_t num_conv_layers() const { return conv_.size(); }
  const Param<T>& conv_layer(std::size_t k) const { return params_[conv_.at(k)]; }
  Param<T>& conv_layer(std::size_t k) { return params_[conv_.at(k)]; }

  void set_requires_grad(bool on) {
    for (auto& p : params_) p.var.set_requires_grad(on);
  }
  void zero_grad() {
    for (auto& p : params_) p.var.zero_grad();
  }

 private:
  std::vector<Param<T>> params_;
  std::vector<std::size_t> conv_;
  std::vector<Buffer<T>> buffers_;
};

struct ForwardContext {
  bool training = true;
  /// Whether batch-norm layers fold batch statistics into running stats.
  bool update_stats = true;
};

/// Construction helper: names parameters by path and initializes them.
template <typename T>
class Builder {
 public:
  Builder(ParamStore<T>& store, Rng& rng) : store_(store), rng_(rng) {}

  std::string path(const std::string& leaf) const {
    std::string p;
    for (const auto& s : scope_) p += s + ".";
    return p + leaf;
  }

  class Scope {
   public:
    Scope(Builder& b, std::string name) : b_(b) { b_.scope_.push_back(std::move(name)); }
    ~Scope() { b_.scope_.pop_back(); }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Builder& b_;
  };

  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization.
  Variable<T> param(const std::string& leaf, Shape shape, ParamRole role, int fan_in) {
    auto v = store_.add(path(leaf), std::move(shape), role, auxiliary_);
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto& x : v.values()) x = static_cast<T>(rng_.uniform(-bound, bound));
    return v;
  }

  Variable<T> constant(const std::string& leaf, Shape shape, ParamRole role, T value) {
    auto v = store_.add(path(leaf), std::move(shape), role, auxiliary_);
    std::fill(v.values().begin(), v.values().end(), value);
    return v;
  }

  void buffer(const std::string& leaf, std::shared_ptr<ops::BatchNormStats<T>> stats) {
    store_.add_buffer(path(leaf), std::move(stats));
  }

  void set_auxiliary(bool on) { auxiliary_ = on; }

 private:
  ParamStore<T>& store_;
  Rng& rng_;
  std::vector<std::string> scope_;
  bool auxiliary_ = false;
};

/// Single-input network layer with symbolic cost tracing.
template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;
  virtual Variable<T> forward(const Variable<T>& x, const ForwardContext& ctx) = 0;
  virtual FeatureShape trace(const FeatureShape& in, ComplexityReport& report) const = 0;

  /// Layers whose first step is a ReLU can consume a shared, already
  /// rectified input through forward_rectified().
  virtual bool relu_first() const { return false; }
  virtual Variable<T> forward_rectified(const Variable<T>& relu_x, const ForwardContext& ctx) {
    (void)relu_x;
    (void)ctx;
    throw ContractError("layer does not start with a ReLU");
  }
};

template <typename T>
using LayerPtr = std::unique_ptr<Layer<T>>;

inline int conv_extent(int in, int k, int stride, int pad, int dil) {
  return (in + 2 * pad - dil * (k - 1) - 1) / stride + 1;
}

/// Bias-free convolution; groups is 1 or equal to the channel count.
template <typename T>
class Conv2d : public Layer<T> {
 public:
  Conv2d(Builder<T>& b, const std::string& name, int c_in, int c_out, int k, int stride, int pad,
         int dilation = 1, int groups = 1)
      : c_in_(c_in), c_out_(c_out), k_(k), stride_(stride), pad_(pad), dil_(dilation),
        groups_(groups), id_(b.path(name)) {
    if (groups != 1 && !(groups == c_in && c_in == c_out))
      throw ConfigError("Conv2d: only dense or depthwise grouping is supported");
    weight_ = b.param(name + ".weight", {c_out, c_in / groups, k, k}, ParamRole::conv,
                      c_in / groups * k * k);
  }

  Variable<T> forward(const Variable<T>& x, const ForwardContext&) override {
    if (x.dim(1) != c_in_)
      throw ShapeError(id_ + ": expected " + std::to_string(c_in_) + " channels, got " +
                       to_string(x.shape()));
    if (groups_ == 1) return ops::conv2d(x, weight_, stride_, pad_, dil_);
    return ops::depthwise_conv2d(x, weight_, stride_, pad_, dil_);
  }

  FeatureShape trace(const FeatureShape& in, ComplexityReport& r) const override {
    if (in.channels != c_in_) throw ShapeError(id_ + ": channel mismatch in trace");
    FeatureShape out{c_out_, conv_extent(in.height, k_, stride_, pad_, dil_),
                     conv_extent(in.width, k_, stride_, pad_, dil_)};
    if (out.height <= 0 || out.width <= 0) throw ShapeError(id_ + ": input resolution too small");
    r.add(id_, weight_.size(), conv_macs(c_in_, c_out_, k_, k_, groups_, out.height, out.width));
    return out;
  }

  const Variable<T>& weight() const { return weight_; }

 private:
  int c_in_, c_out_, k_, stride_, pad_, dil_, groups_;
  std::string id_;
  Variable<T> weight_;
};

template <typename T>
class BatchNorm2d : public Layer<T> {
 public:
  BatchNorm2d(Builder<T>& b, const std::string& name, int channels, bool affine)
      : channels_(channels), id_(b.path(name)),
        stats_(std::make_shared<ops::BatchNormStats<T>>()) {
    stats_->mean.assign(channels, T(0));
    stats_->var.assign(channels, T(1));
    if (affine) {
      gamma_ = b.constant(name + ".weight", {channels}, ParamRole::batch_norm, T(1));
      beta_ = b.constant(name + ".bias", {channels}, ParamRole::batch_norm, T(0));
    }
    b.buffer(name + ".running", stats_);
  }

  Variable<T> forward(const Variable<T>& x, const ForwardContext& ctx) override {
    return ops::batch_norm(x, gamma_, beta_, *stats_, ctx.training, ctx.training && ctx.update_stats);
  }

  FeatureShape trace(const FeatureShape& in, ComplexityReport& r) const override {
    if (gamma_.defined()) r.add(id_, gamma_.size() + beta_.size(), 0);
    return in;
  }

 private:
  int channels_;
  std::string id_;
  Variable<T> gamma_, beta_;
  std::shared_ptr<ops::BatchNormStats<T>> stats_;
};

template <typename T>
class Linear {
 public:
  Linear(Builder<T>& b, const std::string& name, int in, int out)
      : in_(in), out_(out), id_(b.path(name)) {
    weight_ = b.param(name + ".weight", {out, in}, ParamRole::linear, in);
    bias_ = b.param(name + ".bias", {out}, ParamRole::linear, in);
  }

  Variable<T> forward(const Variable<T>& x) { return ops::linear(x, weight_, bias_); }

  void trace(int in, ComplexityReport& r) const {
    if (in != in_) throw ShapeError(id_ + ": feature mismatch in trace");
    r.add(id_, weight_.size() + bias_.size(), static_cast<std::uint64_t>(in_) * out_);
  }

 private:
  int in_, out_;
  std::string id_;
  Variable<T> weight_, bias_;
};

template <typename T>
class Identity : public Layer<T> {
 public:
  Variable<T> forward(const Variable<T>& x, const ForwardContext&) override { return x; }
  FeatureShape trace(const FeatureShape& in, ComplexityReport&) const override { return in; }
};

/// All-zero output of the strided shape; carries no gradient.
template <typename T>
class Zero : public Layer<T> {
 public:
  explicit Zero(int stride) : stride_(stride) {}
  Variable<T> forward(const Variable<T>& x, const ForwardContext&) override {
    if (x.dim(2) % stride_ || x.dim(3) % stride_)
      throw ShapeError("zero: spatial dims not divisible by stride");
    return Variable<T>::zeros({x.dim(0), x.dim(1), x.dim(2) / stride_, x.dim(3) / stride_});
  }
  FeatureShape trace(const FeatureShape& in, ComplexityReport&) const override {
    return {in.channels, in.height / stride_, in.width / stride_};
  }

 private:
  int stride_;
};

/// ReLU -> conv -> BN.
template <typename T>
class ReLUConvBN : public Layer<T> {
 public:
  ReLUConvBN(Builder<T>& b, const std::string& name, int c_in, int c_out, int k, int stride,
             int pad, bool affine) {
    typename Builder<T>::Scope s(b, name);
    conv_ = std::make_unique<Conv2d<T>>(b, "conv", c_in, c_out, k, stride, pad);
    bn_ = std::make_unique<BatchNorm2d<T>>(b, "bn", c_out, affine);
  }
  Variable<T> forward(const Variable<T>& x, const ForwardContext& ctx) override {
    return forward_rectified(ops::relu(x), ctx);
  }
  bool relu_first() const override { return true; }
  Variable<T> forward_rectified(const Variable<T>& r, const ForwardContext& ctx) override {
    return bn_->forward(conv_->forward(r, ctx), ctx);
  }
  FeatureShape trace(const FeatureShape& in, ComplexityReport& r) const override {
    return bn_->trace(conv_->trace(in, r), r);
  }

 private:
  std::unique_ptr<Conv2d<T>> conv_;
  std::unique_ptr<BatchNorm2d<T>> bn_;
};

/// ReLU -> depthwise (dilated) conv -> pointwise conv -> BN.
template <typename T>
class DilConv : public Layer<T> {
 public:
  DilConv(Builder<T>& b, const std::string& name, int c_in, int c_out, int k, int stride, int pad,
          int dilation, bool affine) {
    typename Builder<T>::Scope s(b, name);
    depthwise_ = std::make_unique<Conv2d<T>>(b, "depthwise", c_in, c_in, k, stride, pad, dilation,
                                             c_in);
    pointwise_ = std::make_unique<Conv2d<T>>(b, "pointwise", c_in, c_out, 1, 1, 0);
    bn_ = std::make_unique<BatchNorm2d<T>>(b, "bn", c_out, affine);
  }
  Variable<T> forward(const Variable<T>& x, const ForwardContext& ctx) override {
    return forward_rectified(ops::relu(x), ctx);
  }
  bool relu_first() const override { return true; }
  Variable<T> forward_rectified(const Variable<T>& r, const ForwardContext& ctx) override {
    auto h = depthwise_->forward(r, ctx);
    return bn_->forward(pointwise_->forward(h, ctx), ctx);
  }
  FeatureShape trace(const FeatureShape& in, ComplexityReport& r) const override {
    return bn_->trace(pointwise_->trace(depthwise_->trace(in, r), r), r);
  }

 private:
  std::unique_ptr<Conv2d<T>> depthwise_, pointwise_;
  std::unique_ptr<BatchNorm2d<T>> bn_;
};

/// Separable conv: the depthwise/pointwise block applied twice, with the
/// stride on the first application only.
template <typename T>
class SepConv : public Layer<T> {
 public:
  SepConv(Builder<T>& b, const std::string& name, int c_in, int c_out, int k, int stride, int pad,
          bool affine) {
    typename Builder<T>::Scope s(b, name);
    first_ = std::make_unique<DilConv<T>>(b, "0", c_in, c_in, k, stride, pad, 1, affine);
    second_ = std::make_unique<DilConv<T>>(b, "1", c_in, c_out, k, 1, pad, 1, affine);
  }
  Variable<T> forward(const Variable<T>& x, const ForwardContext& ctx) override {
    return second_->forward(first_->forward(x, ctx), ctx);
  }
  bool relu_first() const override { return true; }
  Variable<T> forward_rectified(const Variable<T>& r, const ForwardContext& ctx) override {
    return second_->forward(first_->forward_rectified(r, ctx), ctx);
  }
  FeatureShape trace(const FeatureShape& in, ComplexityReport& r) const override {
    return second_->trace(first_->trace(in, r), r);
  }

 private:
  std::unique_ptr<DilConv<T>> first_, second_;
};

/// Stride-2 projection: two 1x1 stride-2 convs on offset grids, concatenated.
template <typename T>
class FactorizedReduce : public Layer<T> {
 public:
  FactorizedReduce(Builder<T>& b, const std::string& name, int c_in, int c_out, bool affine) {
    if (c_out % 2) throw ConfigError("FactorizedReduce: output channels must be even");
    typename Builder<T>::Scope s(b, name);
    conv1_ = std::make_unique<Conv2d<T>>(b, "conv_1", c_in, c_out / 2, 1, 2, 0);
    conv2_ = std::make_unique<Conv2d<T>>(b, "conv_2", c_in, c_out / 2, 1, 2, 0);
    bn_ = std::make_unique<BatchNorm2d<T>>(b, "bn", c_out, affine);
  }
  Variable<T> forward(const Variable<T>& x, const ForwardContext& ctx) override {
    return forward_rectified(ops::relu(x), ctx);
  }
  bool relu_first() const override { return true; }
  Variable<T> forward_rectified(const Variable<T>& r, const ForwardContext& ctx) override {
    if (r.dim(2) % 2 || r.dim(3) % 2)
      throw ShapeError("FactorizedReduce: spatial dims must be even, got " + to_string(r.shape()));
    auto a = conv1_->forward(r, ctx);
    auto c = conv2_->forward(ops::shift_crop(r), ctx);
    return bn_->forward(ops::concat_channels<T>({a, c}), ctx);
  }
  FeatureShape trace(const FeatureShape& in, ComplexityReport& r) const override {
    if (in.height % 2 || in.width % 2) throw ShapeError("FactorizedReduce: odd input resolution");
    auto a = conv1_->trace(in, r);
    auto c = conv2_->trace({in.channels, in.height - 1, in.width - 1}, r);
    if (a.height != c.height || a.width != c.width)
      throw ShapeError("FactorizedReduce: branch mismatch");
    return bn_->trace({a.channels + c.channels, a.height, a.width}, r);
  }

 private:
  std::unique_ptr<Conv2d<T>> conv1_, conv2_;
  std::unique_ptr<BatchNorm2d<T>> bn_;
};

/// 3x3 max or average pooling, optionally followed by BN.
template <typename T>
class Pool : public Layer<T> {
 public:
  Pool(Builder<T>& b, const std::string& name, bool max_pool, int channels, int stride,
       bool with_bn)
      : max_(max_pool), stride_(stride) {
    if (with_bn) {
      typename Builder<T>::Scope s(b, name);
      bn_ = std::make_unique<BatchNorm2d<T>>(b, "bn", channels, false);
    }
  }
  Variable<T> forward(const Variable<T>& x, const ForwardContext& ctx) override {
    auto y = ops::pool2d(x, max_, 3, stride_, 1);
    return bn_ ? bn_->forward(y, ctx) : y;
  }
  FeatureShape trace(const FeatureShape& in, ComplexityReport& r) const override {
    FeatureShape out{in.channels, conv_extent(in.height, 3, stride_, 1, 1),
                     conv_extent(in.width, 3, stride_, 1, 1)};
    return bn_ ? bn_->trace(out, r) : out;
  }

 private:
  bool max_;
  int stride_;
  std::unique_ptr<BatchNorm2d<T>> bn_;
};

}  // namespace pdarts
