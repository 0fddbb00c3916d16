#include "ddr/numerics/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace ddr {

template <typename T>
void adamw_step(ParamSet<T>& params, const GradMap<T>& grads, OptimizerState<T>& state) {
  for (const auto& [name, entry] : params) {
    if (!entry.trainable) continue;
    auto it = grads.find(name);
    if (it == grads.end()) throw std::invalid_argument("adamw_step: no gradient for " + name);
    if (it->second.shape() != entry.value.shape()) {
      throw ShapeError("adamw_step: gradient shape " + shape_str(it->second.shape()) +
                       " does not match parameter " + name + " " + shape_str(entry.value.shape()));
    }
  }

  state.step += 1;
  const auto& hp = state.hp;
  const double t = static_cast<double>(state.step);
  const double bias1 = 1.0 - std::pow(hp.beta1, t);
  const double bias2 = 1.0 - std::pow(hp.beta2, t);
  const T decay = static_cast<T>(1.0 - hp.lr * hp.weight_decay);
  const T b1 = static_cast<T>(hp.beta1), b2 = static_cast<T>(hp.beta2);
  const T step_size = static_cast<T>(hp.lr / bias1);
  const T inv_sqrt_bias2 = static_cast<T>(1.0 / std::sqrt(bias2));
  const T eps = static_cast<T>(hp.eps);

  for (auto& [name, entry] : params) {
    if (!entry.trainable) continue;
    const Tensor<T>& g = grads.find(name)->second;
    auto [m_it, m_new] = state.first_moment.try_emplace(name, entry.value.shape(), T(0));
    auto [v_it, v_new] = state.second_moment.try_emplace(name, entry.value.shape(), T(0));
    T* w = entry.value.data();
    T* m = m_it->second.data();
    T* v = v_it->second.data();
    const T* gd = g.data();
    for (std::size_t i = 0; i < entry.value.numel(); ++i) {
      m[i] = b1 * m[i] + (T(1) - b1) * gd[i];
      v[i] = b2 * v[i] + (T(1) - b2) * gd[i] * gd[i];
      w[i] *= decay;
      w[i] -= step_size * m[i] / (std::sqrt(v[i]) * inv_sqrt_bias2 + eps);
    }
  }
}

template void adamw_step<float>(ParamSet<float>&, const GradMap<float>&, OptimizerState<float>&);
template void adamw_step<double>(ParamSet<double>&, const GradMap<double>&, OptimizerState<double>&);

}  // namespace ddr
