#include "ddr/numerics/loss.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace ddr {

template <typename T>
T softmax_cross_entropy(std::span<const T> logits, std::size_t target) {
  if (logits.empty()) throw std::invalid_argument("softmax_cross_entropy: empty logits");
  if (target >= logits.size()) {
    throw std::out_of_range("softmax_cross_entropy: target " + std::to_string(target) +
                            " outside [0, " + std::to_string(logits.size()) + ")");
  }
  const T mx = *std::max_element(logits.begin(), logits.end());
  T sum = T(0);
  for (T v : logits) sum += std::exp(v - mx);
  // log(sum) - (l_t - mx); log1p keeps precision when the target dominates.
  const T rest = sum - std::exp(logits[target] - mx);
  if (logits[target] == mx) return std::log1p(rest);
  return std::log(sum) - (logits[target] - mx);
}

template float softmax_cross_entropy<float>(std::span<const float>, std::size_t);
template double softmax_cross_entropy<double>(std::span<const double>, std::size_t);

}  // namespace ddr
