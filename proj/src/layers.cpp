#include "garden/layers.hpp"

#include <cmath>

#include "garden/lora.hpp"

namespace garden {

namespace {

template <typename T>
Tensor<T> fan_in_normal(Rng& rng, Shape shape, std::size_t fan_in) {
  const std::size_t n = shape_numel(shape);
  return Tensor<T>(std::move(shape), rng.normal_vector<T>(n, 1.0 / std::sqrt(static_cast<double>(fan_in))));
}

/// [C x H x W] -> [HW x C]
template <typename T>
Var<T> to_tokens(const Var<T>& x) {
  const auto& s = x.shape();
  return ops::transpose(ops::reshape(x, {s[0], s[1] * s[2]}));
}

}  // namespace

template <typename T>
Linear<T>::Linear(Registry<T>& reg, const std::string& name, std::size_t in, std::size_t out, bool bias, Rng& rng)
    : weight_name_(name + ".weight") {
  weight_ = reg.params.add(weight_name_, fan_in_normal<T>(rng, {out, in}, in));
  if (bias) bias_ = reg.params.add(name + ".bias", Tensor<T>({out}));
  reg.linears.emplace(weight_name_, this);
}

template <typename T>
Var<T> Linear<T>::operator()(const Var<T>& x) const {
  Var<T> y = ops::linear(x, weight_, bias_);
  if (adapter_ && !adapter_->merged) {
    const Var<T> low = ops::linear(ops::linear(x, adapter_->a, Var<T>()), adapter_->b, Var<T>());
    y = ops::add(y, ops::scale(low, adapter_->scale()));
  }
  return y;
}

template <typename T>
Conv2d<T>::Conv2d(Registry<T>& reg, const std::string& name, std::size_t in, std::size_t out, std::size_t kernel,
                  ops::Conv2dGeometry geom, Rng& rng)
    : geom_(geom) {
  weight_ = reg.params.add(name + ".weight", fan_in_normal<T>(rng, {out, in, kernel, kernel}, in * kernel * kernel));
  bias_ = reg.params.add(name + ".bias", Tensor<T>({out}));
}

template <typename T>
GroupNorm<T>::GroupNorm(Registry<T>& reg, const std::string& name, std::size_t channels, std::size_t groups)
    : groups_(groups) {
  if (groups == 0 || channels % groups != 0) {
    throw ConfigError(name + ": " + std::to_string(channels) + " channels not divisible into " +
                      std::to_string(groups) + " groups");
  }
  gamma_ = reg.params.add(name + ".gamma", Tensor<T>({channels}, T(1)));
  beta_ = reg.params.add(name + ".beta", Tensor<T>({channels}));
}

template <typename T>
LayerNorm<T>::LayerNorm(Registry<T>& reg, const std::string& name, std::size_t dim) {
  gamma_ = reg.params.add(name + ".gamma", Tensor<T>({dim}, T(1)));
  beta_ = reg.params.add(name + ".beta", Tensor<T>({dim}));
}

template <typename T>
AttentionLayer<T>::AttentionLayer(Registry<T>& reg, const std::string& name, std::size_t dim,
                                  std::size_t context_dim, Rng& rng)
    : q_(reg, name + ".q", dim, dim, false, rng),
      k_(reg, name + ".k", context_dim, dim, false, rng),
      v_(reg, name + ".v", context_dim, dim, false, rng),
      out_(reg, name + ".out", dim, dim, true, rng) {}

template <typename T>
Var<T> AttentionLayer<T>::operator()(const Var<T>& x, const Var<T>& context) const {
  const Var<T>& src = context.defined() ? context : x;
  return out_(ops::attention(q_(x), k_(src), v_(src)));
}

template <typename T>
FeedForward<T>::FeedForward(Registry<T>& reg, const std::string& name, std::size_t dim, std::size_t hidden,
                            Rng& rng)
    : up_(reg, name + ".up", dim, hidden, true, rng), down_(reg, name + ".down", hidden, dim, true, rng) {}

template <typename T>
EncoderBlock<T>::EncoderBlock(Registry<T>& reg, const std::string& name, std::size_t dim, Rng& rng)
    : norm1_(reg, name + ".norm1", dim),
      norm2_(reg, name + ".norm2", dim),
      attn_(reg, name + ".attn", dim, dim, rng),
      ff_(reg, name + ".ff", dim, 2 * dim, rng) {}

template <typename T>
Var<T> EncoderBlock<T>::operator()(const Var<T>& x) const {
  Var<T> h = ops::add(x, attn_(norm1_(x)));
  return ops::add(h, ff_(norm2_(h)));
}

template <typename T>
SpatialTransformer<T>::SpatialTransformer(Registry<T>& reg, const std::string& name, std::size_t channels,
                                          std::size_t context_dim, std::size_t groups, Rng& rng)
    : norm_(reg, name + ".norm", channels, groups),
      norm_self_(reg, name + ".norm_self", channels),
      norm_cross_(reg, name + ".norm_cross", channels),
      norm_ff_(reg, name + ".norm_ff", channels),
      self_attn_(reg, name + ".self", channels, channels, rng),
      cross_attn_(reg, name + ".cross", channels, context_dim, rng),
      ff_(reg, name + ".ff", channels, 2 * channels, rng) {}

template <typename T>
Var<T> SpatialTransformer<T>::operator()(const Var<T>& x, const Var<T>& context) const {
  const Shape shape = x.shape();
  Var<T> h = to_tokens(norm_(x));
  h = ops::add(h, self_attn_(norm_self_(h)));
  h = ops::add(h, cross_attn_(norm_cross_(h), context));
  h = ops::add(h, ff_(norm_ff_(h)));
  return ops::add(x, ops::reshape(ops::transpose(h), shape));
}

template <typename T>
ResBlock<T>::ResBlock(Registry<T>& reg, const std::string& name, std::size_t in, std::size_t out,
                      std::size_t temb_dim, std::size_t groups, Rng& rng)
    : norm1_(reg, name + ".norm1", in, groups),
      norm2_(reg, name + ".norm2", out, groups),
      conv1_(reg, name + ".conv1", in, out, 3, {1, 1, 0}, rng),
      conv2_(reg, name + ".conv2", out, out, 3, {1, 1, 0}, rng),
      temb_proj_(reg, name + ".temb", temb_dim, out, true, rng) {
  if (in != out) skip_.emplace(reg, name + ".skip", in, out, 1, ops::Conv2dGeometry{}, rng);
}

template <typename T>
Var<T> ResBlock<T>::operator()(const Var<T>& x, const Var<T>& temb) const {
  Var<T> h = conv1_(ops::silu(norm1_(x)));
  const Var<T> shift = temb_proj_(ops::silu(temb));
  h = ops::add_channel(h, ops::reshape(shift, {shift.size()}));
  h = conv2_(ops::silu(norm2_(h)));
  return ops::add(skip_ ? (*skip_)(x) : x, h);
}

template <typename T>
Tensor<T> sinusoidal_embedding(double position, std::size_t dim) {
  if (dim % 2 != 0) throw ConfigError("sinusoidal embedding dimension must be even");
  const std::size_t half = dim / 2;
  Tensor<T> out({dim});
  for (std::size_t i = 0; i < half; ++i) {
    const double w = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(half));
    out[i] = static_cast<T>(std::sin(position * w));
    out[half + i] = static_cast<T>(std::cos(position * w));
  }
  return out;
}

#define GARDEN_INSTANTIATE(T)                                       \
  template class Linear<T>;                                         \
  template class Conv2d<T>;                                         \
  template class GroupNorm<T>;                                      \
  template class LayerNorm<T>;                                      \
  template class AttentionLayer<T>;                                 \
  template class FeedForward<T>;                                    \
  template class EncoderBlock<T>;                                   \
  template class SpatialTransformer<T>;                             \
  template class ResBlock<T>;                                       \
  template Tensor<T> sinusoidal_embedding<T>(double, std::size_t);

GARDEN_INSTANTIATE(float)
GARDEN_INSTANTIATE(double)

}  // namespace garden
