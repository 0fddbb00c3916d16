#pragma once

#include <cstdint>

#include "ddr/numerics/param_set.hpp"

namespace ddr {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

template <typename T>
struct OptimizerState {
  AdamWConfig hp;
  std::uint64_t step = 0;
  GradMap<T> first_moment;
  GradMap<T> second_moment;
};

/// One AdamW update with decoupled weight decay and bias-corrected moments.
/// Frozen entries are never written. Every trainable entry needs a gradient
/// of matching shape; a missing or mis-shaped gradient throws before any
/// parameter is modified.
template <typename T>
void adamw_step(ParamSet<T>& params, const GradMap<T>& grads, OptimizerState<T>& state);

}  // namespace ddr
