#pragma once

#include <cstddef>
#include <vector>

#include "garden/autograd.hpp"

namespace garden::ops {

// Elementwise, operands of identical shape.
template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> scale(const Var<T>& a, T factor);
/// a * s where s is a one-element tensor.
template <typename T> Var<T> scale_by(const Var<T>& a, const Var<T>& s);

template <typename T> Var<T> silu(const Var<T>& x);
template <typename T> Var<T> gelu(const Var<T>& x);
template <typename T> Var<T> tanh(const Var<T>& x);
template <typename T> Var<T> exp(const Var<T>& x);
/// Gradient passes only where lo < x < hi.
template <typename T> Var<T> clamp(const Var<T>& x, T lo, T hi);

/// [m x k] * [k x n] -> [m x n]
template <typename T> Var<T> matmul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> transpose(const Var<T>& a);
template <typename T> Var<T> reshape(const Var<T>& a, Shape shape);

/// y = x * W^T + b, x: [L x in], W: [out x in], b: [out] or undefined.
template <typename T> Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias);

/// softmax(q k^T / sqrt(d)) v
template <typename T> Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v);

struct Conv2dGeometry {
  std::size_t stride = 1;
  std::size_t padding = 0;
  // Extra zero rows/columns on the bottom/right edge only. Lets an odd
  // kernel with stride 2 halve an even-sized input exactly.
  std::size_t trailing_padding = 0;
};

/// Output side for one spatial axis; throws ConfigError when the window
/// does not tile the padded input exactly.
std::size_t conv_output_side(std::size_t in, std::size_t kernel, const Conv2dGeometry& geom);

/// Cross-correlation of [C_in x H x W] with [C_out x C_in x k x k], zero padding.
template <typename T>
Var<T> conv2d(const Var<T>& input, const Var<T>& kernels, const Var<T>& bias, Conv2dGeometry geom);

/// Nearest-neighbour 2x upsampling of [C x H x W].
template <typename T> Var<T> upsample2x(const Var<T>& x);

/// Adds v[c] to every element of channel c of [C x ...].
template <typename T> Var<T> add_channel(const Var<T>& x, const Var<T>& v);

/// Normalizes each row of [L x d], then applies gamma/beta of length d.
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5));

/// Group normalization of [C x H x W] with per-channel gamma/beta.
template <typename T>
Var<T> group_norm(const Var<T>& x, std::size_t groups, const Var<T>& gamma, const Var<T>& beta,
                  T eps = T(1e-5));

/// Concatenation along axis 0; trailing dims must match.
template <typename T> Var<T> concat0(const Var<T>& a, const Var<T>& b);
/// Rows [begin, end) along axis 0.
template <typename T> Var<T> slice0(const Var<T>& x, std::size_t begin, std::size_t end);
/// Stacks equal-shape tensors along a new leading axis.
template <typename T> Var<T> stack(const std::vector<Var<T>>& xs);

/// Gathers rows of [V x d] by id.
template <typename T> Var<T> embedding(const Var<T>& table, const std::vector<int>& ids);

template <typename T> Var<T> sum(const Var<T>& x);
template <typename T> Var<T> mean(const Var<T>& x);
/// Mean over axis 0 of [L x d] -> [d].
template <typename T> Var<T> mean_rows(const Var<T>& x);
template <typename T> Var<T> mse(const Var<T>& a, const Var<T>& b);

/// Each row scaled to unit L2 norm. Zero rows are a NumericsError.
template <typename T> Var<T> l2_normalize_rows(const Var<T>& x);

/// Mean over rows of -log softmax(logits[i])[targets[i]].
template <typename T>
Var<T> cross_entropy_rows(const Var<T>& logits, const std::vector<std::size_t>& targets);

}  // namespace garden::ops
