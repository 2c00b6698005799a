#pragma once

#include <functional>
#include <vector>

#include "pemed/autograd.hpp"

namespace pemed {

struct GradCheckOptions {
  double eps = 1e-3;
  /// Gradients smaller than this are compared on an absolute scale.
  double magnitude_floor = 1e-3;
  /// When positive, only this many evenly spaced elements of each input are probed.
  Index max_probes_per_input = 0;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_input = 0;
  Index worst_element = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

using LossGraph = std::function<Var<double>(const std::vector<Var<double>>&)>;

/// Compares reverse-mode gradients of a scalar loss with central differences
/// (f(x+eps) - f(x-eps)) / (2 eps), element by element, in double precision.
/// The relative error of one element is |a - n| / max(|a|, |n|, magnitude_floor).
GradCheckResult grad_check(const LossGraph& loss, const std::vector<TensorD>& inputs,
                           const GradCheckOptions& options = {});

}  // namespace pemed
