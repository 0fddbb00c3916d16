#pragma once

#include <cstddef>
#include <span>

namespace ddr {

/// -log softmax(logits)[target], stabilized by subtracting the max logit.
/// Throws std::invalid_argument on empty logits, std::out_of_range on a bad
/// target.
template <typename T>
T softmax_cross_entropy(std::span<const T> logits, std::size_t target);

}  // namespace ddr
