#include "garden/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gemm.hpp"

namespace garden::ops {

namespace {

template <typename T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

template <typename T>
void require_rank(const Var<T>& a, std::size_t rank, const char* op) {
  if (a.shape().size() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(a.shape()));
  }
}

template <typename T>
std::vector<T>* grad_of(const Var<T>& v) {
  return v.defined() && v.requires_grad() ? &v.node()->grad_buffer() : nullptr;
}

}  // namespace

// ---------------------------------------------------------------- elementwise

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "add");
  Tensor<T> out(a.shape());
  const auto& av = a.value().vec();
  const auto& bv = b.value().vec();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return Var<T>::make(std::move(out), {a, b}, [a, b](const std::vector<T>& g) {
    if (auto* ga = grad_of(a)) for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
    if (auto* gb = grad_of(b)) for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i];
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "sub");
  Tensor<T> out(a.shape());
  const auto& av = a.value().vec();
  const auto& bv = b.value().vec();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return Var<T>::make(std::move(out), {a, b}, [a, b](const std::vector<T>& g) {
    if (auto* ga = grad_of(a)) for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
    if (auto* gb = grad_of(b)) for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] -= g[i];
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "mul");
  Tensor<T> out(a.shape());
  const auto& av = a.value().vec();
  const auto& bv = b.value().vec();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return Var<T>::make(std::move(out), {a, b}, [a, b](const std::vector<T>& g) {
    const auto& av = a.value().vec();
    const auto& bv = b.value().vec();
    if (auto* ga = grad_of(a)) for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * bv[i];
    if (auto* gb = grad_of(b)) for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * av[i];
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T factor) {
  Tensor<T> out(a.shape());
  const auto& av = a.value().vec();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * factor;
  return Var<T>::make(std::move(out), {a}, [a, factor](const std::vector<T>& g) {
    if (auto* ga = grad_of(a)) for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * factor;
  });
}

template <typename T>
Var<T> scale_by(const Var<T>& a, const Var<T>& s) {
  if (s.size() != 1) throw DimensionError("scale_by: scale must have one element, got " + shape_str(s.shape()));
  const T f = s.item();
  Tensor<T> out(a.shape());
  const auto& av = a.value().vec();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * f;
  return Var<T>::make(std::move(out), {a, s}, [a, s](const std::vector<T>& g) {
    const auto& av = a.value().vec();
    const T f = s.item();
    if (auto* ga = grad_of(a)) for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * f;
    if (auto* gs = grad_of(s)) {
      T acc = 0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * av[i];
      (*gs)[0] += acc;
    }
  });
}

template <typename T>
Var<T> silu(const Var<T>& x) {
  Tensor<T> out(x.shape());
  const auto& xv = x.value().vec();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] / (T(1) + std::exp(-xv[i]));
  return Var<T>::make(std::move(out), {x}, [x](const std::vector<T>& g) {
    const auto& xv = x.value().vec();
    auto& gx = *grad_of(x);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T s = T(1) / (T(1) + std::exp(-xv[i]));
      gx[i] += g[i] * s * (T(1) + xv[i] * (T(1) - s));
    }
  });
}

template <typename T>
Var<T> gelu(const Var<T>& x) {
  const T inv_sqrt2 = T(1) / std::sqrt(T(2));
  Tensor<T> out(x.shape());
  const auto& xv = x.value().vec();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = T(0.5) * xv[i] * (T(1) + std::erf(xv[i] * inv_sqrt2));
  return Var<T>::make(std::move(out), {x}, [x, inv_sqrt2](const std::vector<T>& g) {
    const T inv_sqrt_2pi = T(1) / std::sqrt(T(2) * T(M_PI));
    const auto& xv = x.value().vec();
    auto& gx = *grad_of(x);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T cdf = T(0.5) * (T(1) + std::erf(xv[i] * inv_sqrt2));
      const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * xv[i] * xv[i]);
      gx[i] += g[i] * (cdf + xv[i] * pdf);
    }
  });
}

template <typename T>
Var<T> tanh(const Var<T>& x) {
  Tensor<T> out(x.shape());
  const auto& xv = x.value().vec();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(xv[i]);
  Tensor<T> saved = out;
  return Var<T>::make(std::move(out), {x}, [x, saved = std::move(saved)](const std::vector<T>& g) {
    auto& gx = *grad_of(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (T(1) - saved[i] * saved[i]);
  });
}

template <typename T>
Var<T> exp(const Var<T>& x) {
  Tensor<T> out(x.shape());
  const auto& xv = x.value().vec();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(xv[i]);
  Tensor<T> saved = out;
  return Var<T>::make(std::move(out), {x}, [x, saved = std::move(saved)](const std::vector<T>& g) {
    auto& gx = *grad_of(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * saved[i];
  });
}

template <typename T>
Var<T> clamp(const Var<T>& x, T lo, T hi) {
  Tensor<T> out(x.shape());
  const auto& xv = x.value().vec();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(xv[i], lo, hi);
  return Var<T>::make(std::move(out), {x}, [x, lo, hi](const std::vector<T>& g) {
    const auto& xv = x.value().vec();
    auto& gx = *grad_of(x);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (xv[i] > lo && xv[i] < hi) gx[i] += g[i];
    }
  });
}

// ---------------------------------------------------------------- matrices

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  Tensor<T> out({m, n});
  detail::gemm(false, false, m, n, k, a.value().vec().data(), b.value().vec().data(), out.vec().data(),
               false);
  return Var<T>::make(std::move(out), {a, b}, [a, b, m, n, k](const std::vector<T>& g) {
    if (auto* ga = grad_of(a)) {
      // dA = G * B^T
      detail::gemm(false, true, m, k, n, g.data(), b.value().vec().data(), ga->data(), true);
    }
    if (auto* gb = grad_of(b)) {
      // dB = A^T * G
      detail::gemm(true, false, k, n, m, a.value().vec().data(), g.data(), gb->data(), true);
    }
  });
}

template <typename T>
Var<T> transpose(const Var<T>& a) {
  require_rank(a, 2, "transpose");
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  Tensor<T> out({c, r});
  const auto& av = a.value().vec();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = av[i * c + j];
  return Var<T>::make(std::move(out), {a}, [a, r, c](const std::vector<T>& g) {
    auto& ga = *grad_of(a);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
  });
}

template <typename T>
Var<T> reshape(const Var<T>& a, Shape shape) {
  if (shape_numel(shape) != a.size()) {
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  Tensor<T> out(std::move(shape), a.value().vec());
  return Var<T>::make(std::move(out), {a}, [a](const std::vector<T>& g) {
    auto& ga = *grad_of(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  require_rank(x, 2, "linear");
  require_rank(weight, 2, "linear");
  const std::size_t rows = x.shape()[0], in = x.shape()[1], out_dim = weight.shape()[0];
  if (weight.shape()[1] != in) {
    throw DimensionError("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                         shape_str(weight.shape()));
  }
  if (bias.defined() && bias.shape() != Shape{out_dim}) {
    throw DimensionError("linear: bias " + shape_str(bias.shape()) + " for weight " +
                         shape_str(weight.shape()));
  }
  Tensor<T> out({rows, out_dim});
  detail::gemm(false, true, rows, out_dim, in, x.value().vec().data(), weight.value().vec().data(),
               out.vec().data(), false);
  if (bias.defined()) {
    const auto& bv = bias.value().vec();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < out_dim; ++j) out[r * out_dim + j] += bv[j];
  }
  return Var<T>::make(std::move(out), {x, weight, bias},
                      [x, weight, bias, rows, in, out_dim](const std::vector<T>& g) {
                        if (auto* gx = grad_of(x)) {
                          detail::gemm(false, false, rows, in, out_dim, g.data(),
                                       weight.value().vec().data(), gx->data(), true);
                        }
                        if (auto* gw = grad_of(weight)) {
                          detail::gemm(true, false, out_dim, in, rows, g.data(), x.value().vec().data(),
                                       gw->data(), true);
                        }
                        if (auto* gb = grad_of(bias)) {
                          for (std::size_t r = 0; r < rows; ++r)
                            for (std::size_t j = 0; j < out_dim; ++j) (*gb)[j] += g[r * out_dim + j];
                        }
                      });
}

template <typename T>
Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v) {
  require_rank(q, 2, "attention");
  require_rank(k, 2, "attention");
  require_rank(v, 2, "attention");
  const std::size_t lq = q.shape()[0], d = q.shape()[1], lk = k.shape()[0], dv = v.shape()[1];
  if (lk == 0) throw DimensionError("attention: empty key/value context");
  if (d == 0) throw DimensionError("attention: zero head dimension");
  if (k.shape()[1] != d || v.shape()[0] != lk) {
    throw DimensionError("attention: incompatible q " + shape_str(q.shape()) + ", k " +
                         shape_str(k.shape()) + ", v " + shape_str(v.shape()));
  }
  const T inv_sqrt_d = T(1) / std::sqrt(T(d));

  // probs = softmax(q k^T / sqrt(d)), row-wise
  std::vector<T> probs(lq * lk);
  detail::gemm(false, true, lq, lk, d, q.value().vec().data(), k.value().vec().data(), probs.data(),
               false);
  for (std::size_t i = 0; i < lq; ++i) {
    T* row = probs.data() + i * lk;
    T mx = row[0] * inv_sqrt_d;
    for (std::size_t j = 0; j < lk; ++j) {
      row[j] *= inv_sqrt_d;
      mx = std::max(mx, row[j]);
    }
    T z = 0;
    for (std::size_t j = 0; j < lk; ++j) {
      row[j] = std::exp(row[j] - mx);
      z += row[j];
    }
    for (std::size_t j = 0; j < lk; ++j) row[j] /= z;
  }
  Tensor<T> out({lq, dv});
  detail::gemm(false, false, lq, dv, lk, probs.data(), v.value().vec().data(), out.vec().data(), false);

  return Var<T>::make(
      std::move(out), {q, k, v},
      [q, k, v, probs = std::move(probs), lq, lk, d, dv, inv_sqrt_d](const std::vector<T>& g) {
        if (auto* gv = grad_of(v)) {
          detail::gemm(true, false, lk, dv, lq, probs.data(), g.data(), gv->data(), true);
        }
        auto* gq = grad_of(q);
        auto* gk = grad_of(k);
        if (!gq && !gk) return;
        // dS = P * (dP - rowsum(dP * P)), dP = G v^T
        std::vector<T> ds(lq * lk);
        detail::gemm(false, true, lq, lk, dv, g.data(), v.value().vec().data(), ds.data(), false);
        for (std::size_t i = 0; i < lq; ++i) {
          T* drow = ds.data() + i * lk;
          const T* prow = probs.data() + i * lk;
          T dot = 0;
          for (std::size_t j = 0; j < lk; ++j) dot += drow[j] * prow[j];
          for (std::size_t j = 0; j < lk; ++j) drow[j] = prow[j] * (drow[j] - dot) * inv_sqrt_d;
        }
        if (gq) detail::gemm(false, false, lq, d, lk, ds.data(), k.value().vec().data(), gq->data(), true);
        if (gk) detail::gemm(true, false, lk, d, lq, ds.data(), q.value().vec().data(), gk->data(), true);
      });
}

// ---------------------------------------------------------------- convolution

std::size_t conv_output_side(std::size_t in, std::size_t kernel, const Conv2dGeometry& geom) {
  if (geom.stride == 0) throw ConfigError("conv2d: stride must be positive");
  const std::size_t padded = in + 2 * geom.padding + geom.trailing_padding;
  if (padded < kernel) {
    throw ConfigError("conv2d: kernel " + std::to_string(kernel) + " larger than padded input " +
                      std::to_string(padded));
  }
  if ((padded - kernel) % geom.stride != 0) {
    throw ConfigError("conv2d: non-integral output size for input " + std::to_string(in) + ", kernel " +
                      std::to_string(kernel) + ", stride " + std::to_string(geom.stride) + ", padding " +
                      std::to_string(geom.padding) + "+" + std::to_string(geom.trailing_padding));
  }
  return (padded - kernel) / geom.stride + 1;
}

namespace {

// col[(c*k + ky)*k + kx][oy*wo + ox]
template <typename T>
void im2col(const T* in, std::size_t c_in, std::size_t h, std::size_t w, std::size_t k, std::size_t ho,
            std::size_t wo, const Conv2dGeometry& g, T* col) {
  const long pad = static_cast<long>(g.padding);
  for (std::size_t c = 0; c < c_in; ++c)
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        T* dst = col + ((c * k + ky) * k + kx) * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - pad;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - pad;
            const bool inside = iy >= 0 && iy < static_cast<long>(h) && ix >= 0 && ix < static_cast<long>(w);
            dst[oy * wo + ox] = inside ? in[(c * h + iy) * w + ix] : T(0);
          }
        }
      }
}

template <typename T>
void col2im(const T* col, std::size_t c_in, std::size_t h, std::size_t w, std::size_t k, std::size_t ho,
            std::size_t wo, const Conv2dGeometry& g, T* in) {
  const long pad = static_cast<long>(g.padding);
  for (std::size_t c = 0; c < c_in; ++c)
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        const T* src = col + ((c * k + ky) * k + kx) * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - pad;
          if (iy < 0 || iy >= static_cast<long>(h)) continue;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - pad;
            if (ix < 0 || ix >= static_cast<long>(w)) continue;
            in[(c * h + iy) * w + ix] += src[oy * wo + ox];
          }
        }
      }
}

}  // namespace

template <typename T>
Var<T> conv2d(const Var<T>& input, const Var<T>& kernels, const Var<T>& bias, Conv2dGeometry geom) {
  require_rank(input, 3, "conv2d");
  require_rank(kernels, 4, "conv2d");
  const std::size_t c_in = input.shape()[0], h = input.shape()[1], w = input.shape()[2];
  const std::size_t c_out = kernels.shape()[0], k = kernels.shape()[2];
  if (kernels.shape()[1] != c_in || kernels.shape()[3] != k) {
    throw DimensionError("conv2d: kernels " + shape_str(kernels.shape()) + " incompatible with input " +
                         shape_str(input.shape()));
  }
  if (k % 2 == 0) throw ConfigError("conv2d: kernel size must be odd, got " + std::to_string(k));
  if (bias.defined() && bias.shape() != Shape{c_out}) {
    throw DimensionError("conv2d: bias " + shape_str(bias.shape()) + " for " + std::to_string(c_out) +
                         " output channels");
  }
  const std::size_t ho = conv_output_side(h, k, geom);
  const std::size_t wo = conv_output_side(w, k, geom);
  const std::size_t patch = c_in * k * k, npos = ho * wo;

  const bool direct = k == 1 && geom.stride == 1 && geom.padding == 0 && geom.trailing_padding == 0;
  std::vector<T> col;
  if (!direct) {
    col.resize(patch * npos);
    im2col(input.value().vec().data(), c_in, h, w, k, ho, wo, geom, col.data());
  }
  const T* colp = direct ? input.value().vec().data() : col.data();

  Tensor<T> out({c_out, ho, wo});
  detail::gemm(false, false, c_out, npos, patch, kernels.value().vec().data(), colp, out.vec().data(),
               false);
  if (bias.defined()) {
    const auto& bv = bias.value().vec();
    for (std::size_t o = 0; o < c_out; ++o)
      for (std::size_t p = 0; p < npos; ++p) out[o * npos + p] += bv[o];
  }

  return Var<T>::make(
      std::move(out), {input, kernels, bias},
      [input, kernels, bias, col = std::move(col), direct, geom, c_in, h, w, c_out, k, ho, wo, patch,
       npos](const std::vector<T>& g) {
        const T* colp = direct ? input.value().vec().data() : col.data();
        if (auto* gk = grad_of(kernels)) {
          detail::gemm(false, true, c_out, patch, npos, g.data(), colp, gk->data(), true);
        }
        if (auto* gb = grad_of(bias)) {
          for (std::size_t o = 0; o < c_out; ++o) {
            T s = 0;
            for (std::size_t p = 0; p < npos; ++p) s += g[o * npos + p];
            (*gb)[o] += s;
          }
        }
        if (auto* gi = grad_of(input)) {
          if (direct) {
            detail::gemm(true, false, patch, npos, c_out, kernels.value().vec().data(), g.data(),
                         gi->data(), true);
          } else {
            std::vector<T> dcol(patch * npos);
            detail::gemm(true, false, patch, npos, c_out, kernels.value().vec().data(), g.data(),
                         dcol.data(), false);
            col2im(dcol.data(), c_in, h, w, k, ho, wo, geom, gi->data());
          }
        }
      });
}

template <typename T>
Var<T> upsample2x(const Var<T>& x) {
  require_rank(x, 3, "upsample2x");
  const std::size_t c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  Tensor<T> out({c, 2 * h, 2 * w});
  const auto& xv = x.value().vec();
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < 2 * h; ++y)
      for (std::size_t xx = 0; xx < 2 * w; ++xx)
        out[(ch * 2 * h + y) * 2 * w + xx] = xv[(ch * h + y / 2) * w + xx / 2];
  return Var<T>::make(std::move(out), {x}, [x, c, h, w](const std::vector<T>& g) {
    auto& gx = *grad_of(x);
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < 2 * h; ++y)
        for (std::size_t xx = 0; xx < 2 * w; ++xx)
          gx[(ch * h + y / 2) * w + xx / 2] += g[(ch * 2 * h + y) * 2 * w + xx];
  });
}

template <typename T>
Var<T> add_channel(const Var<T>& x, const Var<T>& v) {
  if (x.shape().empty() || v.shape() != Shape{x.shape()[0]}) {
    throw DimensionError("add_channel: vector " + shape_str(v.shape()) + " does not match channels of " +
                         shape_str(x.shape()));
  }
  const std::size_t c = x.shape()[0], inner = x.size() / c;
  Tensor<T> out = x.value();
  const auto& vv = v.value().vec();
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < inner; ++i) out[ch * inner + i] += vv[ch];
  return Var<T>::make(std::move(out), {x, v}, [x, v, c, inner](const std::vector<T>& g) {
    if (auto* gx = grad_of(x)) for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
    if (auto* gv = grad_of(v)) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        T s = 0;
        for (std::size_t i = 0; i < inner; ++i) s += g[ch * inner + i];
        (*gv)[ch] += s;
      }
    }
  });
}

// ---------------------------------------------------------------- normalization

namespace {

// Shared normalization over contiguous segments. Segment s covers
// [s*len, (s+1)*len); affine index for flat element i is affine_of(i).
template <typename T, typename AffineOf>
Var<T> normalize_segments(const Var<T>& x, std::size_t segments, std::size_t len, const Var<T>& gamma,
                          const Var<T>& beta, T eps, AffineOf affine_of) {
  const auto& xv = x.value().vec();
  std::vector<T> xhat(x.size());
  std::vector<T> inv_std(segments);
  for (std::size_t s = 0; s < segments; ++s) {
    const T* seg = xv.data() + s * len;
    T mu = 0;
    for (std::size_t i = 0; i < len; ++i) mu += seg[i];
    mu /= T(len);
    T var = 0;
    for (std::size_t i = 0; i < len; ++i) var += (seg[i] - mu) * (seg[i] - mu);
    var /= T(len);
    inv_std[s] = T(1) / std::sqrt(var + eps);
    for (std::size_t i = 0; i < len; ++i) xhat[s * len + i] = (seg[i] - mu) * inv_std[s];
  }
  Tensor<T> out(x.shape());
  const auto& gv = gamma.value().vec();
  const auto& bv = beta.value().vec();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const std::size_t a = affine_of(i);
    out[i] = gv[a] * xhat[i] + bv[a];
  }
  return Var<T>::make(
      std::move(out), {x, gamma, beta},
      [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), segments, len,
       affine_of](const std::vector<T>& g) {
        const auto& gv = gamma.value().vec();
        if (auto* gg = grad_of(gamma)) for (std::size_t i = 0; i < g.size(); ++i) (*gg)[affine_of(i)] += g[i] * xhat[i];
        if (auto* gb = grad_of(beta)) for (std::size_t i = 0; i < g.size(); ++i) (*gb)[affine_of(i)] += g[i];
        if (auto* gx = grad_of(x)) {
          std::vector<T> dxhat(len);
          for (std::size_t s = 0; s < segments; ++s) {
            T mean_d = 0, mean_dx = 0;
            for (std::size_t i = 0; i < len; ++i) {
              const std::size_t idx = s * len + i;
              dxhat[i] = g[idx] * gv[affine_of(idx)];
              mean_d += dxhat[i];
              mean_dx += dxhat[i] * xhat[idx];
            }
            mean_d /= T(len);
            mean_dx /= T(len);
            for (std::size_t i = 0; i < len; ++i) {
              const std::size_t idx = s * len + i;
              (*gx)[idx] += inv_std[s] * (dxhat[i] - mean_d - xhat[idx] * mean_dx);
            }
          }
        }
      });
}

}  // namespace

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps) {
  require_rank(x, 2, "layer_norm");
  const std::size_t rows = x.shape()[0], d = x.shape()[1];
  if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) {
    throw DimensionError("layer_norm: affine parameters must have shape [" + std::to_string(d) + "]");
  }
  return normalize_segments(x, rows, d, gamma, beta, eps, [d](std::size_t i) { return i % d; });
}

template <typename T>
Var<T> group_norm(const Var<T>& x, std::size_t groups, const Var<T>& gamma, const Var<T>& beta, T eps) {
  require_rank(x, 3, "group_norm");
  const std::size_t c = x.shape()[0], hw = x.shape()[1] * x.shape()[2];
  if (groups == 0 || c % groups != 0) {
    throw ConfigError("group_norm: " + std::to_string(c) + " channels not divisible into " +
                      std::to_string(groups) + " groups");
  }
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c}) {
    throw DimensionError("group_norm: affine parameters must have shape [" + std::to_string(c) + "]");
  }
  const std::size_t len = (c / groups) * hw;
  return normalize_segments(x, groups, len, gamma, beta, eps, [hw](std::size_t i) { return i / hw; });
}

// ---------------------------------------------------------------- structure

template <typename T>
Var<T> concat0(const Var<T>& a, const Var<T>& b) {
  if (a.shape().size() != b.shape().size() || a.shape().empty() ||
      !std::equal(a.shape().begin() + 1, a.shape().end(), b.shape().begin() + 1)) {
    throw DimensionError("concat0: incompatible " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  Shape shape = a.shape();
  shape[0] += b.shape()[0];
  std::vector<T> data;
  data.reserve(a.size() + b.size());
  data.insert(data.end(), a.value().vec().begin(), a.value().vec().end());
  data.insert(data.end(), b.value().vec().begin(), b.value().vec().end());
  const std::size_t na = a.size();
  return Var<T>::make(Tensor<T>(std::move(shape), std::move(data)), {a, b},
                      [a, b, na](const std::vector<T>& g) {
                        if (auto* ga = grad_of(a)) for (std::size_t i = 0; i < na; ++i) (*ga)[i] += g[i];
                        if (auto* gb = grad_of(b))
                          for (std::size_t i = na; i < g.size(); ++i) (*gb)[i - na] += g[i];
                      });
}

template <typename T>
Var<T> slice0(const Var<T>& x, std::size_t begin, std::size_t end) {
  if (x.shape().empty() || begin >= end || end > x.shape()[0]) {
    throw DimensionError("slice0: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") invalid for " + shape_str(x.shape()));
  }
  const std::size_t inner = x.size() / x.shape()[0];
  Shape shape = x.shape();
  shape[0] = end - begin;
  std::vector<T> data(x.value().vec().begin() + begin * inner, x.value().vec().begin() + end * inner);
  const std::size_t off = begin * inner;
  return Var<T>::make(Tensor<T>(std::move(shape), std::move(data)), {x}, [x, off](const std::vector<T>& g) {
    auto& gx = *grad_of(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[off + i] += g[i];
  });
}

template <typename T>
Var<T> stack(const std::vector<Var<T>>& xs) {
  if (xs.empty()) throw DimensionError("stack: no inputs");
  const Shape inner_shape = xs[0].shape();
  const std::size_t inner = xs[0].size();
  std::vector<T> data;
  data.reserve(inner * xs.size());
  for (const auto& x : xs) {
    if (x.shape() != inner_shape) {
      throw DimensionError("stack: mixed shapes " + shape_str(inner_shape) + " and " + shape_str(x.shape()));
    }
    data.insert(data.end(), x.value().vec().begin(), x.value().vec().end());
  }
  Shape shape{xs.size()};
  shape.insert(shape.end(), inner_shape.begin(), inner_shape.end());
  return Var<T>::make(Tensor<T>(std::move(shape), std::move(data)), xs, [xs, inner](const std::vector<T>& g) {
    for (std::size_t n = 0; n < xs.size(); ++n) {
      if (auto* gx = grad_of(xs[n])) for (std::size_t i = 0; i < inner; ++i) (*gx)[i] += g[n * inner + i];
    }
  });
}

template <typename T>
Var<T> embedding(const Var<T>& table, const std::vector<int>& ids) {
  require_rank(table, 2, "embedding");
  const std::size_t vocab = table.shape()[0], d = table.shape()[1];
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw IndexError("embedding: token id " + std::to_string(id) + " outside vocabulary of size " +
                       std::to_string(vocab));
    }
  }
  Tensor<T> out({ids.size(), d});
  const auto& tv = table.value().vec();
  for (std::size_t r = 0; r < ids.size(); ++r)
    std::copy_n(tv.begin() + static_cast<std::size_t>(ids[r]) * d, d, out.vec().begin() + r * d);
  return Var<T>::make(std::move(out), {table}, [table, ids, d](const std::vector<T>& g) {
    auto& gt = *grad_of(table);
    for (std::size_t r = 0; r < ids.size(); ++r)
      for (std::size_t j = 0; j < d; ++j) gt[static_cast<std::size_t>(ids[r]) * d + j] += g[r * d + j];
  });
}

// ---------------------------------------------------------------- reductions and losses

template <typename T>
Var<T> sum(const Var<T>& x) {
  T s = 0;
  for (T v : x.value().vec()) s += v;
  return Var<T>::make(Tensor<T>({1}, {s}), {x}, [x](const std::vector<T>& g) {
    auto& gx = *grad_of(x);
    for (auto& v : gx) v += g[0];
  });
}

template <typename T>
Var<T> mean(const Var<T>& x) {
  return scale(sum(x), T(1) / T(x.size()));
}

template <typename T>
Var<T> mean_rows(const Var<T>& x) {
  require_rank(x, 2, "mean_rows");
  const std::size_t rows = x.shape()[0], d = x.shape()[1];
  Tensor<T> out({d});
  const auto& xv = x.value().vec();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < d; ++j) out[j] += xv[r * d + j];
  for (std::size_t j = 0; j < d; ++j) out[j] /= T(rows);
  return Var<T>::make(std::move(out), {x}, [x, rows, d](const std::vector<T>& g) {
    auto& gx = *grad_of(x);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < d; ++j) gx[r * d + j] += g[j] / T(rows);
  });
}

template <typename T>
Var<T> mse(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "mse");
  const auto& av = a.value().vec();
  const auto& bv = b.value().vec();
  T s = 0;
  for (std::size_t i = 0; i < av.size(); ++i) s += (av[i] - bv[i]) * (av[i] - bv[i]);
  const T n = T(av.size());
  return Var<T>::make(Tensor<T>({1}, {s / n}), {a, b}, [a, b, n](const std::vector<T>& g) {
    const auto& av = a.value().vec();
    const auto& bv = b.value().vec();
    const T f = T(2) * g[0] / n;
    if (auto* ga = grad_of(a)) for (std::size_t i = 0; i < av.size(); ++i) (*ga)[i] += f * (av[i] - bv[i]);
    if (auto* gb = grad_of(b)) for (std::size_t i = 0; i < av.size(); ++i) (*gb)[i] -= f * (av[i] - bv[i]);
  });
}

template <typename T>
Var<T> l2_normalize_rows(const Var<T>& x) {
  require_rank(x, 2, "l2_normalize_rows");
  const std::size_t rows = x.shape()[0], d = x.shape()[1];
  const auto& xv = x.value().vec();
  Tensor<T> out(x.shape());
  std::vector<T> norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    T s = 0;
    for (std::size_t j = 0; j < d; ++j) s += xv[r * d + j] * xv[r * d + j];
    norms[r] = std::sqrt(s);
    if (!(norms[r] > T(0))) {
      throw NumericsError("l2_normalize_rows: row " + std::to_string(r) + " has zero norm");
    }
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = xv[r * d + j] / norms[r];
  }
  Tensor<T> y = out;
  return Var<T>::make(std::move(out), {x},
                      [x, y = std::move(y), norms = std::move(norms), rows, d](const std::vector<T>& g) {
                        auto& gx = *grad_of(x);
                        for (std::size_t r = 0; r < rows; ++r) {
                          T dot = 0;
                          for (std::size_t j = 0; j < d; ++j) dot += y[r * d + j] * g[r * d + j];
                          for (std::size_t j = 0; j < d; ++j)
                            gx[r * d + j] += (g[r * d + j] - y[r * d + j] * dot) / norms[r];
                        }
                      });
}

template <typename T>
Var<T> cross_entropy_rows(const Var<T>& logits, const std::vector<std::size_t>& targets) {
  require_rank(logits, 2, "cross_entropy_rows");
  const std::size_t rows = logits.shape()[0], n = logits.shape()[1];
  if (targets.size() != rows) {
    throw DimensionError("cross_entropy_rows: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(rows) + " rows");
  }
  const auto& lv = logits.value().vec();
  std::vector<T> probs(rows * n);
  T loss = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (targets[r] >= n) throw IndexError("cross_entropy_rows: target out of range");
    const T* row = lv.data() + r * n;
    const T mx = *std::max_element(row, row + n);
    T z = 0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(row[j] - mx);
    const T log_z = std::log(z) + mx;
    for (std::size_t j = 0; j < n; ++j) probs[r * n + j] = std::exp(row[j] - log_z);
    loss += log_z - row[targets[r]];
  }
  loss /= T(rows);
  return Var<T>::make(Tensor<T>({1}, {loss}), {logits},
                      [logits, targets, probs = std::move(probs), rows, n](const std::vector<T>& g) {
                        auto& gl = *grad_of(logits);
                        const T f = g[0] / T(rows);
                        for (std::size_t r = 0; r < rows; ++r)
                          for (std::size_t j = 0; j < n; ++j)
                            gl[r * n + j] += f * (probs[r * n + j] - (j == targets[r] ? T(1) : T(0)));
                      });
}

#define GARDEN_INSTANTIATE_OPS(T)                                                              \
  template Var<T> add(const Var<T>&, const Var<T>&);                                           \
  template Var<T> sub(const Var<T>&, const Var<T>&);                                           \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                           \
  template Var<T> scale(const Var<T>&, T);                                                     \
  template Var<T> scale_by(const Var<T>&, const Var<T>&);                                      \
  template Var<T> silu(const Var<T>&);                                                         \
  template Var<T> gelu(const Var<T>&);                                                         \
  template Var<T> tanh(const Var<T>&);                                                         \
  template Var<T> exp(const Var<T>&);                                                          \
  template Var<T> clamp(const Var<T>&, T, T);                                                  \
  template Var<T> matmul(const Var<T>&, const Var<T>&);                                        \
  template Var<T> transpose(const Var<T>&);                                                    \
  template Var<T> reshape(const Var<T>&, Shape);                                               \
  template Var<T> linear(const Var<T>&, const Var<T>&, const Var<T>&);                         \
  template Var<T> attention(const Var<T>&, const Var<T>&, const Var<T>&);                      \
  template Var<T> conv2d(const Var<T>&, const Var<T>&, const Var<T>&, Conv2dGeometry);         \
  template Var<T> upsample2x(const Var<T>&);                                                   \
  template Var<T> add_channel(const Var<T>&, const Var<T>&);                                   \
  template Var<T> layer_norm(const Var<T>&, const Var<T>&, const Var<T>&, T);                  \
  template Var<T> group_norm(const Var<T>&, std::size_t, const Var<T>&, const Var<T>&, T);     \
  template Var<T> concat0(const Var<T>&, const Var<T>&);                                       \
  template Var<T> slice0(const Var<T>&, std::size_t, std::size_t);                             \
  template Var<T> stack(const std::vector<Var<T>>&);                                           \
  template Var<T> embedding(const Var<T>&, const std::vector<int>&);                           \
  template Var<T> sum(const Var<T>&);                                                          \
  template Var<T> mean(const Var<T>&);                                                         \
  template Var<T> mean_rows(const Var<T>&);                                                    \
  template Var<T> mse(const Var<T>&, const Var<T>&);                                           \
  template Var<T> l2_normalize_rows(const Var<T>&);                                            \
  template Var<T> cross_entropy_rows(const Var<T>&, const std::vector<std::size_t>&);

GARDEN_INSTANTIATE_OPS(float)
GARDEN_INSTANTIATE_OPS(double)

#undef GARDEN_INSTANTIATE_OPS

}  // namespace garden::ops
