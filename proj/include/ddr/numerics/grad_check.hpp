#pragma once

#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>

#include "ddr/numerics/autograd.hpp"

namespace ddr {

class GradCheckError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

/// Builds the scalar loss on a graph bound to the parameter set.
template <typename T>
using ScalarFunction = std::function<Var<T>(Graph<T>&)>;

/// Compares reverse-mode gradients with central differences over every
/// trainable scalar:  |analytic - numeric| / max(1, |numeric|).
/// `params` is perturbed in place and restored before returning. A
/// non-finite loss throws GradCheckError naming the perturbed parameter.
template <typename T>
GradCheckReport grad_check(const ScalarFunction<T>& fn, ParamSet<T>& params, T eps);

}  // namespace ddr
