#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "garden/autograd.hpp"

namespace garden {

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_element = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t elements_checked = 0;
};

struct GradCheckOptions {
  double epsilon = 1e-5;
  double denominator_floor = 1e-8;
  // 0 checks every element; otherwise a seeded subset per input.
  std::size_t max_elements_per_input = 0;
  std::uint64_t seed = 1234;
};

using GradCheckFn = std::function<Var<double>(const std::vector<Var<double>>&)>;

/// Compares backward-pass gradients with central differences.
///
/// Non-scalar outputs are reduced to sum(out * w) with fixed pseudo-random
/// weights so the whole Jacobian is exercised. Relative error per element is
/// |a - n| / max(|a|, |n|, floor). Never throws on a mismatch; it reports.
GradCheckReport finite_diff_check(const GradCheckFn& fn, std::vector<Var<double>> inputs,
                                  const GradCheckOptions& options = {});

}  // namespace garden
