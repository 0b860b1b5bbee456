#include "garden/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "garden/ops.hpp"
#include "garden/random.hpp"

namespace garden {

namespace {

double evaluate(const GradCheckFn& fn, const std::vector<Var<double>>& inputs,
                const std::vector<double>& weights) {
  NoGradGuard guard;
  Var<double> out = fn(inputs);
  if (out.size() == 1) return out.item();
  double s = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) s += out.value()[i] * weights[i];
  return s;
}

}  // namespace

GradCheckReport finite_diff_check(const GradCheckFn& fn, std::vector<Var<double>> inputs,
                                  const GradCheckOptions& options) {
  for (auto& in : inputs) {
    in.set_requires_grad(true);
    in.zero_grad();
  }
  Var<double> out = fn(inputs);
  Rng rng(options.seed);
  std::vector<double> weights;
  Var<double> scalar = out;
  if (out.size() != 1) {
    weights = rng.normal_vector<double>(out.size());
    scalar = ops::sum(ops::mul(out, Var<double>(Tensor<double>(out.shape(), weights))));
  }
  scalar.backward();

  GradCheckReport report;
  for (std::size_t idx = 0; idx < inputs.size(); ++idx) {
    auto& in = inputs[idx];
    const std::vector<double> analytic = in.grad();
    std::vector<std::size_t> elements(in.size());
    for (std::size_t i = 0; i < elements.size(); ++i) elements[i] = i;
    if (options.max_elements_per_input != 0 && elements.size() > options.max_elements_per_input) {
      auto perm = rng.permutation(elements.size());
      perm.resize(options.max_elements_per_input);
      std::sort(perm.begin(), perm.end());
      elements = std::move(perm);
    }
    for (std::size_t e : elements) {
      auto& x = in.mutable_value()[e];
      const double saved = x;
      // Divide by the representable step, not the nominal 2*epsilon.
      const double up = saved + options.epsilon;
      const double down = saved - options.epsilon;
      x = up;
      const double fp = evaluate(fn, inputs, weights);
      x = down;
      const double fm = evaluate(fn, inputs, weights);
      x = saved;
      const double numeric = (fp - fm) / (up - down);
      const double a = analytic.empty() ? 0.0 : analytic[e];
      const double denom = std::max({std::abs(a), std::abs(numeric), options.denominator_floor});
      const double rel = std::abs(a - numeric) / denom;
      ++report.elements_checked;
      if (rel > report.max_relative_error) {
        report.max_relative_error = rel;
        report.worst_input = idx;
        report.worst_element = e;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace garden
