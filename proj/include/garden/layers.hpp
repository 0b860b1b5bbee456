#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>

#include "garden/ops.hpp"
#include "garden/parameters.hpp"
#include "garden/random.hpp"

namespace garden {

template <typename T>
struct LoraAdapter;
template <typename T>
class Linear;

/// Parameters of a model plus the projection layers that may host adapters,
/// keyed by the weight's parameter name.
template <typename T>
struct Registry {
  ParameterSet<T> params;
  std::map<std::string, Linear<T>*> linears;
};

/// y = x W^T + b, with an optional low-rank update added while unmerged.
/// Weights start from N(0, 1/fan_in), biases at zero.
template <typename T>
class Linear {
 public:
  Linear(Registry<T>& reg, const std::string& name, std::size_t in, std::size_t out, bool bias, Rng& rng);
  Linear(const Linear&) = delete;
  Linear& operator=(const Linear&) = delete;

  Var<T> operator()(const Var<T>& x) const;

  const std::string& weight_name() const { return weight_name_; }
  Var<T>& weight() { return weight_; }
  const Var<T>& weight() const { return weight_; }
  std::size_t in_features() const { return weight_.shape()[1]; }
  std::size_t out_features() const { return weight_.shape()[0]; }

  const std::shared_ptr<LoraAdapter<T>>& adapter() const { return adapter_; }
  void attach(std::shared_ptr<LoraAdapter<T>> adapter) { adapter_ = std::move(adapter); }

 private:
  std::string weight_name_;
  Var<T> weight_;
  Var<T> bias_;
  std::shared_ptr<LoraAdapter<T>> adapter_;
};

template <typename T>
class Conv2d {
 public:
  Conv2d(Registry<T>& reg, const std::string& name, std::size_t in, std::size_t out, std::size_t kernel,
         ops::Conv2dGeometry geom, Rng& rng);
  Var<T> operator()(const Var<T>& x) const { return ops::conv2d(x, weight_, bias_, geom_); }

 private:
  Var<T> weight_;
  Var<T> bias_;
  ops::Conv2dGeometry geom_;
};

template <typename T>
class GroupNorm {
 public:
  GroupNorm(Registry<T>& reg, const std::string& name, std::size_t channels, std::size_t groups);
  Var<T> operator()(const Var<T>& x) const { return ops::group_norm(x, groups_, gamma_, beta_); }

 private:
  std::size_t groups_;
  Var<T> gamma_;
  Var<T> beta_;
};

template <typename T>
class LayerNorm {
 public:
  LayerNorm(Registry<T>& reg, const std::string& name, std::size_t dim);
  Var<T> operator()(const Var<T>& x) const { return ops::layer_norm(x, gamma_, beta_); }

 private:
  Var<T> gamma_;
  Var<T> beta_;
};

/// Single-head attention with q/k/v/out projections. Keys and values come
/// from `context` when given, otherwise from `x`.
template <typename T>
class AttentionLayer {
 public:
  AttentionLayer(Registry<T>& reg, const std::string& name, std::size_t dim, std::size_t context_dim, Rng& rng);
  Var<T> operator()(const Var<T>& x, const Var<T>& context = {}) const;

 private:
  Linear<T> q_, k_, v_, out_;
};

template <typename T>
class FeedForward {
 public:
  FeedForward(Registry<T>& reg, const std::string& name, std::size_t dim, std::size_t hidden, Rng& rng);
  Var<T> operator()(const Var<T>& x) const { return down_(ops::gelu(up_(x))); }

 private:
  Linear<T> up_, down_;
};

/// Pre-norm self-attention + feed-forward block over a token sequence.
template <typename T>
class EncoderBlock {
 public:
  EncoderBlock(Registry<T>& reg, const std::string& name, std::size_t dim, Rng& rng);
  Var<T> operator()(const Var<T>& x) const;

 private:
  LayerNorm<T> norm1_, norm2_;
  AttentionLayer<T> attn_;
  FeedForward<T> ff_;
};

/// Group-normed feature map attended as tokens: self-attention, then
/// cross-attention to the text embedding, then feed-forward, with a
/// residual back onto the input map.
template <typename T>
class SpatialTransformer {
 public:
  SpatialTransformer(Registry<T>& reg, const std::string& name, std::size_t channels, std::size_t context_dim,
                     std::size_t groups, Rng& rng);
  Var<T> operator()(const Var<T>& x, const Var<T>& context) const;

 private:
  GroupNorm<T> norm_;
  LayerNorm<T> norm_self_, norm_cross_, norm_ff_;
  AttentionLayer<T> self_attn_, cross_attn_;
  FeedForward<T> ff_;
};

template <typename T>
class ResBlock {
 public:
  ResBlock(Registry<T>& reg, const std::string& name, std::size_t in, std::size_t out, std::size_t temb_dim,
           std::size_t groups, Rng& rng);
  Var<T> operator()(const Var<T>& x, const Var<T>& temb) const;

 private:
  GroupNorm<T> norm1_, norm2_;
  Conv2d<T> conv1_, conv2_;
  Linear<T> temb_proj_;
  std::optional<Conv2d<T>> skip_;
};

/// Sinusoidal features [sin(p w_i), cos(p w_i)] with w_i = 10000^(-i/half).
template <typename T>
Tensor<T> sinusoidal_embedding(double position, std::size_t dim);

}  // namespace garden
