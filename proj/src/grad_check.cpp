#include "pemed/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace pemed {

namespace {

double evaluate(const LossGraph& loss, const std::vector<TensorD>& inputs) {
  NoGradGuard guard;
  std::vector<Var<double>> vars;
  vars.reserve(inputs.size());
  for (const auto& t : inputs) vars.emplace_back(t, false);
  const Var<double> out = loss(vars);
  if (out.value().size() != 1) throw Error(ErrorCode::NonScalarLoss, "loss has shape " + to_string(out.shape()));
  return out.value()[0];
}

}  // namespace

GradCheckResult grad_check(const LossGraph& loss, const std::vector<TensorD>& inputs,
                           const GradCheckOptions& options) {
  std::vector<Var<double>> vars;
  vars.reserve(inputs.size());
  for (const auto& t : inputs) vars.emplace_back(t, true);
  const Var<double> out = loss(vars);
  if (out.value().size() != 1) throw Error(ErrorCode::NonScalarLoss, "loss has shape " + to_string(out.shape()));
  backward(out);

  GradCheckResult result;
  std::vector<TensorD> probe = inputs;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const TensorD analytic = vars[i].grad_or_zeros();
    const Index n = inputs[i].size();
    Index step = 1;
    if (options.max_probes_per_input > 0 && n > options.max_probes_per_input) {
      step = (n + options.max_probes_per_input - 1) / options.max_probes_per_input;
    }
    for (Index e = 0; e < n; e += step) {
      const double original = inputs[i][e];
      probe[i][e] = original + options.eps;
      const double up = evaluate(loss, probe);
      probe[i][e] = original - options.eps;
      const double down = evaluate(loss, probe);
      probe[i][e] = original;
      const double numeric = (up - down) / (2.0 * options.eps);
      const double a = analytic[e];
      const double denom = std::max({std::abs(a), std::abs(numeric), options.magnitude_floor});
      const double rel = std::abs(a - numeric) / denom;
      if (rel > result.max_relative_error) {
        result.max_relative_error = rel;
        result.worst_input = i;
        result.worst_element = e;
        result.analytic = a;
        result.numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace pemed
