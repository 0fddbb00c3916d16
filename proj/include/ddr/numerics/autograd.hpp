#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ddr/numerics/kernels.hpp"
#include "ddr/numerics/param_set.hpp"
#include "ddr/numerics/tensor.hpp"

namespace ddr {

template <typename T>
class Graph;

/// Handle to a node in a Graph. Cheap to copy; valid while the graph lives.
template <typename T>
struct Var {
  Graph<T>* graph = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return graph->value(id); }
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const { return graph->requires_grad(id); }
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so reverse
/// insertion order is a valid topological order for backpropagation.
///
/// Parameter leaves reference tensors in the bound ParamSet without copying
/// and require a gradient exactly when the entry is trainable. With tracking
/// disabled no backward closures are recorded (inference mode).
template <typename T>
class Graph {
 public:
  using BackwardFn = std::function<void(const Tensor<T>& dout)>;

  explicit Graph(const ParamSet<T>* params = nullptr, bool track_gradients = true)
      : params_(params), track_(track_gradients) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var<T> param(std::string_view name);
  Var<T> constant(Tensor<T> value) { return push(std::move(value), false, {}); }
  Var<T> leaf(Tensor<T> value, bool requires_grad) {
    return push(std::move(value), requires_grad && track_, {});
  }

  /// Records an op result. `requires_grad` should be true when any input
  /// requires a gradient; `backward` receives this node's gradient and
  /// accumulates into the inputs' gradients.
  Var<T> emit(Tensor<T> value, bool requires_grad, BackwardFn backward) {
    const bool rg = requires_grad && track_;
    return push(std::move(value), rg, rg ? std::move(backward) : BackwardFn{});
  }

  bool tracking() const noexcept { return track_; }
  const Tensor<T>& value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.external ? *n.external : n.owned;
  }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Gradient buffer of a node, zero-allocated on first access.
  Tensor<T>& grad(std::size_t id);
  bool has_grad(std::size_t id) const { return !nodes_[id].grad.empty(); }

  /// Seeds d(loss)/d(loss) = 1 and runs every recorded backward closure.
  void backward(Var<T> loss);

  /// Gradients of every trainable parameter touched by this graph. A
  /// parameter that was read but received no gradient maps to zeros.
  GradMap<T> param_grads();

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> owned;
    const Tensor<T>* external = nullptr;
    Tensor<T> grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var<T> push(Tensor<T> value, bool requires_grad, BackwardFn fn) {
    Node n;
    n.owned = std::move(value);
    n.requires_grad = requires_grad;
    n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var<T>{this, nodes_.size() - 1};
  }

  const ParamSet<T>* params_;
  bool track_;
  std::deque<Node> nodes_;
  std::map<std::string, std::size_t, std::less<>> param_ids_;
};

using kernels::Segment;

namespace ops {

template <typename T> Var<T> matmul(Var<T> a, Var<T> b);
/// a * b^T
template <typename T> Var<T> matmul_nt(Var<T> a, Var<T> b);
template <typename T> Var<T> add(Var<T> a, Var<T> b);
template <typename T> Var<T> sub(Var<T> a, Var<T> b);
template <typename T> Var<T> mul(Var<T> a, Var<T> b);
/// Adds a length-cols bias to every row.
template <typename T> Var<T> add_bias(Var<T> x, Var<T> bias);
template <typename T> Var<T> scale(Var<T> x, T factor);
template <typename T> Var<T> gelu(Var<T> x);
template <typename T> Var<T> relu(Var<T> x);
template <typename T> Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps);
/// Row gather; as an embedding lookup when x is a table.
template <typename T> Var<T> gather_rows(Var<T> x, std::span<const std::int32_t> rows);
template <typename T> Var<T> concat_rows(Var<T> a, Var<T> b);
template <typename T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v, std::span<const Segment> segments,
                 std::size_t heads);
/// Mean of the rows of each segment whose `include` flag is set.
template <typename T>
Var<T> segment_mean(Var<T> x, std::span<const Segment> segments,
                    std::span<const std::uint8_t> include);
template <typename T> Var<T> l2_normalize_rows(Var<T> x);
/// Mean over rows of -log softmax(row)[target].
template <typename T>
Var<T> cross_entropy_rows(Var<T> logits, std::span<const std::int32_t> targets);
/// Vector of x[r, c] for each (r, c).
template <typename T>
Var<T> pick(Var<T> x, std::span<const std::pair<std::size_t, std::size_t>> cells);
/// mean((x - target)^2) against a constant target.
template <typename T> Var<T> mse(Var<T> x, const Tensor<T>& target);
template <typename T> Var<T> sum(Var<T> x);

}  // namespace ops
}  // namespace ddr
