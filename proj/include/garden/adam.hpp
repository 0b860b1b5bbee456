#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "garden/parameters.hpp"

namespace garden {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  bool operator==(const AdamConfig&) const = default;
};

/// First/second moment buffers keyed by parameter name.
template <typename T>
struct AdamState {
  AdamConfig config;
  std::uint64_t step_count = 0;
  std::map<std::string, std::vector<T>> m;
  std::map<std::string, std::vector<T>> v;
};

/// One bias-corrected Adam update over the trainable parameters.
///
/// All gradients are validated before any value changes: a NaN or infinite
/// gradient throws NumericsError naming the parameter and leaves every
/// parameter and the state untouched. Frozen parameters are never written.
template <typename T>
void adam_step(ParameterSet<T>& params, AdamState<T>& state);

}  // namespace garden
