#include "garden/adam.hpp"

#include <cmath>

namespace garden {

template <typename T>
void adam_step(ParameterSet<T>& params, AdamState<T>& state) {
  for (const auto& p : params.all()) {
    if (!p.trainable) continue;
    for (T g : p.var.grad()) {
      if (!std::isfinite(g)) throw NumericsError("non-finite gradient for parameter " + p.name);
    }
  }

  const auto& cfg = state.config;
  const std::uint64_t t = state.step_count + 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  const T b1 = T(cfg.beta1), b2 = T(cfg.beta2);
  const T lr = T(cfg.lr), eps = T(cfg.epsilon);
  const T inv_bc1 = T(1.0 / bc1), inv_bc2 = T(1.0 / bc2);

  for (auto& p : params.all()) {
    if (!p.trainable) continue;
    auto& value = p.var.mutable_value().vec();
    auto& m = state.m[p.name];
    auto& v = state.v[p.name];
    if (m.size() != value.size()) m.assign(value.size(), T(0));
    if (v.size() != value.size()) v.assign(value.size(), T(0));
    const auto& grad = p.var.grad();
    if (grad.empty()) {
      // An untouched parameter still decays its moments.
      for (std::size_t i = 0; i < value.size(); ++i) {
        m[i] = b1 * m[i];
        v[i] = b2 * v[i];
        value[i] -= lr * (m[i] * inv_bc1) / (std::sqrt(v[i] * inv_bc2) + eps);
      }
      continue;
    }
    for (std::size_t i = 0; i < value.size(); ++i) {
      const T g = grad[i];
      m[i] = b1 * m[i] + (T(1) - b1) * g;
      v[i] = b2 * v[i] + (T(1) - b2) * g * g;
      value[i] -= lr * (m[i] * inv_bc1) / (std::sqrt(v[i] * inv_bc2) + eps);
    }
  }
  state.step_count = t;
}

template void adam_step(ParameterSet<float>&, AdamState<float>&);
template void adam_step(ParameterSet<double>&, AdamState<double>&);

}  // namespace garden
