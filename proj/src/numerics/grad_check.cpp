#include "ddr/numerics/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace ddr {
namespace {

template <typename T>
T evaluate(const ScalarFunction<T>& fn, const ParamSet<T>& params, const std::string& perturbed) {
  Graph<T> g(&params, /*track_gradients=*/false);
  const T loss = fn(g).value()[0];
  if (!std::isfinite(loss)) {
    throw GradCheckError("grad_check: non-finite loss while perturbing " +
                         (perturbed.empty() ? std::string("<none>") : perturbed));
  }
  return loss;
}

}  // namespace

template <typename T>
GradCheckReport grad_check(const ScalarFunction<T>& fn, ParamSet<T>& params, T eps) {
  if (!(eps > T(0))) throw std::invalid_argument("grad_check: eps must be positive");
  GradMap<T> analytic;
  {
    Graph<T> g(&params);
    Var<T> loss = fn(g);
    if (!std::isfinite(loss.value()[0])) throw GradCheckError("grad_check: non-finite loss at base point");
    g.backward(loss);
    analytic = g.param_grads();
  }

  GradCheckReport report;
  for (const std::string& name : params.trainable_names()) {
    Tensor<T>& w = params.get_mut(name);
    const auto it = analytic.find(name);
    for (std::size_t i = 0; i < w.numel(); ++i) {
      const T original = w[i];
      w[i] = original + eps;
      const T up = evaluate(fn, params, name);
      w[i] = original - eps;
      const T down = evaluate(fn, params, name);
      w[i] = original;
      const double numeric = (static_cast<double>(up) - static_cast<double>(down)) / (2.0 * eps);
      const double exact = it == analytic.end() ? 0.0 : static_cast<double>(it->second[i]);
      const double rel = std::abs(exact - numeric) / std::max(1.0, std::abs(numeric));
      ++report.checked;
      if (rel > report.max_relative_error || report.worst_param.empty()) {
        report.max_relative_error = std::max(report.max_relative_error, rel);
        if (rel >= report.max_relative_error) {
          report.worst_param = name;
          report.worst_index = i;
        }
      }
    }
  }
  return report;
}

template GradCheckReport grad_check<float>(const ScalarFunction<float>&, ParamSet<float>&, float);
template GradCheckReport grad_check<double>(const ScalarFunction<double>&, ParamSet<double>&, double);

}  // namespace ddr
