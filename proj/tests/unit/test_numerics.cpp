#include <cmath>
#include <numbers>
#include <vector>

#include "ddr/numerics/autograd.hpp"
#include "ddr/numerics/grad_check.hpp"
#include "ddr/numerics/kernels.hpp"
#include "ddr/numerics/loss.hpp"
#include "ddr/numerics/optimizer.hpp"
#include "ddr/numerics/rng.hpp"
#include "doctest.h"

using namespace ddr;

namespace {

template <typename T>
Tensor<T> random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<T>(rng.normal() * scale);
  return t;
}

// Reduces an op output to a scalar with fixed random weights so every
// output element contributes a distinct gradient.
template <typename T>
Var<T> weighted_sum(Graph<T>& g, Var<T> out, std::uint64_t seed) {
  Rng rng(seed);
  return ops::sum(ops::mul(out, g.constant(random_tensor<T>(out.shape(), rng))));
}

template <typename T>
double check_op(ParamSet<T>& params, const ScalarFunction<T>& fn, T eps) {
  return grad_check<T>(fn, params, eps).max_relative_error;
}

}  // namespace

TEST_CASE("tensor basics") {
  Tensor<float> t(Shape{2, 3}, 1.5f);
  CHECK(t.rows() == 2);
  CHECK(t.cols() == 3);
  CHECK(t.numel() == 6);
  CHECK_THROWS_AS(Tensor<float>(Shape{2, 0}), ShapeError);
  CHECK_THROWS_AS(Tensor<float>(Shape{2, 2}, std::vector<float>{1, 2, 3}), ShapeError);
  Tensor<float> v = Tensor<float>::vector({1, 2, 3});
  CHECK(v.rows() == 1);
  CHECK(v.cols() == 3);
}

TEST_CASE("param set partition and duplicates") {
  ParamSet<float> ps;
  ps.add("dam.a", Tensor<float>(Shape{2}));
  ps.add("rem.b", Tensor<float>(Shape{3}), false);
  CHECK_THROWS_AS(ps.add("dam.a", Tensor<float>(Shape{1})), std::invalid_argument);
  CHECK(ps.trainable_names() == std::vector<std::string>{"dam.a"});
  CHECK(ps.frozen_names() == std::vector<std::string>{"rem.b"});
  CHECK(ps.scalar_count("dam.") == 2);
  CHECK(ps.filter_prefix("rem.").size() == 1);
}

TEST_CASE("rng is reproducible and forks independently") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  Rng f1 = Rng(7).fork("masking"), f2 = Rng(7).fork("masking"), f3 = Rng(7).fork("batches");
  CHECK(f1.next_u64() == f2.next_u64());
  CHECK(Rng(7).fork("masking").next_u64() != f3.next_u64());
  double mean = 0, sq = 0;
  Rng r(3);
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double x = r.normal();
    mean += x;
    sq += x * x;
  }
  mean /= n;
  CHECK(std::abs(mean) < 0.01);
  CHECK(std::abs(sq / n - 1.0) < 0.02);
  for (int i = 0; i < 1000; ++i) CHECK(r.below(7) < 7);
}

TEST_CASE("gemm kernels match the serial reference") {
  Rng rng(11);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t m = 1 + rng.below(70), n = 1 + rng.below(70), k = 1 + rng.below(70);
    for (int variant = 0; variant < 4; ++variant) {
      const bool ta = variant & 1, tb = variant & 2;
      auto a = random_tensor<double>(Shape{m * k}, rng);
      auto b = random_tensor<double>(Shape{k * n}, rng);
      auto c1 = random_tensor<double>(Shape{m * n}, rng);
      auto c2 = c1;
      const bool acc = trial % 2 == 0;
      kernels::gemm(ta, tb, m, n, k, a.data(), b.data(), c1.data(), acc);
      kernels::reference::gemm(ta, tb, m, n, k, a.data(), b.data(), c2.data(), acc);
      CHECK(max_abs_diff(c1, c2) < 1e-10);
    }
  }
}

TEST_CASE("attention and scoring kernels match the serial reference") {
  Rng rng(5);
  std::vector<kernels::Segment> segs{{0, 5}, {5, 1}, {6, 9}};
  const std::size_t dim = 8, heads = 2, rows = 15;
  auto q = random_tensor<double>(Shape{rows, dim}, rng);
  auto k = random_tensor<double>(Shape{rows, dim}, rng);
  auto v = random_tensor<double>(Shape{rows, dim}, rng);
  const auto offs = kernels::attention_prob_offsets(segs, heads);
  std::vector<double> p1(offs.back()), p2(offs.back());
  Tensor<double> o1(Shape{rows, dim}), o2(Shape{rows, dim});
  kernels::attention_forward<double>(segs, dim, heads, q.data(), k.data(), v.data(), o1.data(), p1.data());
  kernels::reference::attention_forward<double>(segs, dim, heads, q.data(), k.data(), v.data(), o2.data(), p2.data());
  CHECK(bitwise_equal(o1, o2));

  auto qs = random_tensor<float>(Shape{3, 16}, rng);
  auto ds = random_tensor<float>(Shape{50, 16}, rng);
  Tensor<float> s1(Shape{3, 50}), s2(Shape{3, 50});
  kernels::score_matrix(3, 50, 16, qs.data(), ds.data(), s1.data());
  kernels::reference::score_matrix(3, 50, 16, qs.data(), ds.data(), s2.data());
  CHECK(max_abs_diff(s1, s2) < 1e-5);
}

TEST_CASE("grad_check: square function") {
  ParamSet<double> ps;
  ps.add("x", Tensor<double>(Shape{1}, 3.0));
  auto fn = [](Graph<double>& g) {
    Var<double> x = g.param("x");
    return ops::sum(ops::mul(x, x));
  };
  Graph<double> g(&ps);
  auto loss = fn(g);
  g.backward(loss);
  CHECK(g.param_grads().at("x")[0] == doctest::Approx(6.0));
  CHECK(grad_check<double>(fn, ps, 1e-5).max_relative_error < 1e-8);
}

TEST_CASE("grad_check: linear layer with mean-squared error") {
  Rng rng(1);
  ParamSet<double> ps;
  ps.add("w", random_tensor<double>(Shape{4, 4}, rng));
  ps.add("b", random_tensor<double>(Shape{4}, rng));
  const auto input = random_tensor<double>(Shape{4, 4}, rng);
  const auto target = random_tensor<double>(Shape{16}, rng);
  auto fn = [&](Graph<double>& g) {
    auto y = ops::add_bias(ops::matmul(g.constant(input), g.param("w")), g.param("b"));
    return ops::mse(y, target);
  };
  CHECK(grad_check<double>(fn, ps, 1e-6).max_relative_error < 1e-6);
}

TEST_CASE("softmax cross-entropy gradient equals softmax minus one-hot") {
  Rng rng(2);
  ParamSet<double> ps;
  const auto logits = random_tensor<double>(Shape{1, 6}, rng, 2.0);
  ps.add("logits", logits);
  const std::int32_t target = 4;
  Graph<double> g(&ps);
  auto loss = ops::cross_entropy_rows(g.param("logits"), std::span(&target, 1));
  g.backward(loss);
  const auto grad = g.param_grads().at("logits");
  double mx = logits[0], sum = 0.0;
  for (double v : logits.values()) mx = std::max(mx, v);
  for (double v : logits.values()) sum += std::exp(v - mx);
  for (std::size_t i = 0; i < 6; ++i) {
    const double expected = std::exp(logits[i] - mx) / sum - (i == 4 ? 1.0 : 0.0);
    CHECK(std::abs(grad[i] - expected) / std::max(1.0, std::abs(expected)) < 1e-6);
  }
}

TEST_CASE("grad_check: every op, 64-bit") {
  Rng rng(9);
  ParamSet<double> ps;
  ps.add("a", random_tensor<double>(Shape{6, 8}, rng));
  ps.add("b", random_tensor<double>(Shape{8, 8}, rng));
  ps.add("c", random_tensor<double>(Shape{6, 8}, rng));
  ps.add("bias", random_tensor<double>(Shape{8}, rng));
  ps.add("gamma", random_tensor<double>(Shape{8}, rng));
  std::vector<kernels::Segment> segs{{0, 2}, {2, 4}};
  std::vector<std::uint8_t> include{1, 0, 1, 1, 1, 0};
  std::vector<std::int32_t> rows{5, 0, 0, 3};
  std::vector<std::int32_t> targets{1, 7, 3, 0, 2, 2};
  std::vector<std::pair<std::size_t, std::size_t>> cells{{0, 1}, {5, 7}, {0, 1}};

  std::vector<std::pair<const char*, ScalarFunction<double>>> cases{
      {"matmul", [](Graph<double>& g) { return weighted_sum(g, ops::matmul(g.param("a"), g.param("b")), 1); }},
      {"matmul_nt", [](Graph<double>& g) { return weighted_sum(g, ops::matmul_nt(g.param("a"), g.param("c")), 2); }},
      {"add_sub_mul", [](Graph<double>& g) {
         auto x = ops::mul(ops::sub(g.param("a"), g.param("c")), ops::add(g.param("a"), g.param("c")));
         return weighted_sum(g, x, 3);
       }},
      {"add_bias_scale", [](Graph<double>& g) {
         return weighted_sum(g, ops::scale(ops::add_bias(g.param("a"), g.param("bias")), 0.7), 4);
       }},
      {"gelu_relu", [](Graph<double>& g) {
         return weighted_sum(g, ops::add(ops::gelu(g.param("a")), ops::relu(g.param("c"))), 5);
       }},
      {"layer_norm", [](Graph<double>& g) {
         return weighted_sum(g, ops::layer_norm(g.param("a"), g.param("gamma"), g.param("bias"), 1e-5), 6);
       }},
      {"gather_concat", [&](Graph<double>& g) {
         auto x = ops::concat_rows(ops::gather_rows(g.param("a"), rows), g.param("c"));
         return weighted_sum(g, x, 7);
       }},
      {"attention", [&](Graph<double>& g) {
         auto x = ops::attention(g.param("a"), g.param("c"), ops::matmul(g.param("a"), g.param("b")), segs, 2);
         return weighted_sum(g, x, 8);
       }},
      {"segment_mean", [&](Graph<double>& g) {
         return weighted_sum(g, ops::segment_mean(g.param("a"), segs, include), 9);
       }},
      {"l2_normalize", [](Graph<double>& g) { return weighted_sum(g, ops::l2_normalize_rows(g.param("c")), 10); }},
      {"cross_entropy", [&](Graph<double>& g) { return ops::cross_entropy_rows(g.param("a"), targets); }},
      {"pick_mse", [&](Graph<double>& g) {
         return ops::mse(ops::pick(g.param("a"), cells), Tensor<double>::vector({0.5, -1.0, 2.0}));
       }},
  };
  for (const auto& [name, fn] : cases) {
    CAPTURE(name);
    CHECK(check_op<double>(ps, fn, 1e-6) < 1e-6);
  }
}

TEST_CASE("grad_check: ops in 32-bit stay under 1e-4") {
  Rng rng(10);
  ParamSet<float> ps;
  ps.add("a", random_tensor<float>(Shape{4, 8}, rng, 0.5));
  ps.add("b", random_tensor<float>(Shape{8, 8}, rng, 0.5));
  ps.add("gamma", random_tensor<float>(Shape{8}, rng));
  ps.add("beta", random_tensor<float>(Shape{8}, rng));
  std::vector<kernels::Segment> segs{{0, 4}};
  std::vector<std::int32_t> targets{1, 2, 3, 4};
  auto fn = [&](Graph<float>& g) {
    auto h = ops::layer_norm(ops::matmul(g.param("a"), g.param("b")), g.param("gamma"), g.param("beta"), 1e-5f);
    h = ops::attention(h, h, ops::gelu(h), segs, 2);
    return ops::cross_entropy_rows(h, targets);
  };
  CHECK(grad_check<float>(fn, ps, 5e-3f).max_relative_error < 1e-4);
}

TEST_CASE("grad_check reports the parameter behind a non-finite loss") {
  ParamSet<double> ps;
  ps.add("x", Tensor<double>(Shape{1}, 0.0));
  auto fn = [](Graph<double>& g) {
    Var<double> x = g.param("x");
    // Zero-vector normalization is undefined; the perturbed point at -eps
    // is fine, the base point is not.
    return ops::sum(ops::l2_normalize_rows(ops::add(x, g.constant(Tensor<double>(Shape{1}, 1e-7)))));
  };
  ps.get_mut("x")[0] = -1e-7;
  CHECK_THROWS(grad_check<double>(fn, ps, 1e-7));
  ParamSet<double> ps2;
  ps2.add("weights.w", Tensor<double>(Shape{1}, 1.0));
  auto inf_fn = [](Graph<double>& g) {
    auto x = g.param("weights.w");
    auto big = g.constant(Tensor<double>(Shape{1}, 1e308));
    return ops::sum(ops::mul(ops::mul(x, big), big));
  };
  try {
    grad_check<double>(inf_fn, ps2, 1e-3);
    FAIL("expected GradCheckError");
  } catch (const GradCheckError& e) {
    CHECK(std::string(e.what()).find("non-finite") != std::string::npos);
  }
}

TEST_CASE("adamw: decay-only step") {
  ParamSet<double> ps;
  ps.add("w", Tensor<double>(Shape{3}, 2.0));
  GradMap<double> grads;
  grads.emplace("w", Tensor<double>(Shape{3}, 0.0));
  OptimizerState<double> st;
  st.hp.lr = 0.01;
  st.hp.weight_decay = 0.01;
  adamw_step(ps, grads, st);
  for (double v : ps.get("w").values()) CHECK(v == doctest::Approx(2.0 * (1.0 - 1e-4)).epsilon(1e-14));
  CHECK(st.step == 1);
}

TEST_CASE("adamw: first step with unit gradient") {
  ParamSet<double> ps;
  ps.add("w", Tensor<double>(Shape{1}, 1.0));
  GradMap<double> grads;
  grads.emplace("w", Tensor<double>(Shape{1}, 1.0));
  OptimizerState<double> st;
  st.hp.lr = 1e-3;
  st.hp.weight_decay = 0.0;
  adamw_step(ps, grads, st);
  CHECK(ps.get("w")[0] - 1.0 == doctest::Approx(-1e-3 / (1.0 + 1e-8)).epsilon(1e-12));
}

TEST_CASE("adamw: symmetry, frozen entries, and errors") {
  ParamSet<float> ps;
  ps.add("a", Tensor<float>(Shape{2}, 0.3f));
  ps.add("b", Tensor<float>(Shape{2}, 0.3f));
  ps.add("frozen", Tensor<float>(Shape{2}, 0.7f), false);
  const auto frozen_before = ps.get("frozen");
  GradMap<float> grads;
  grads.emplace("a", Tensor<float>(Shape{2}, -0.25f));
  grads.emplace("b", Tensor<float>(Shape{2}, -0.25f));
  OptimizerState<float> st;
  for (int i = 0; i < 5; ++i) adamw_step(ps, grads, st);
  CHECK(bitwise_equal(ps.get("a"), ps.get("b")));
  CHECK(bitwise_equal(ps.get("frozen"), frozen_before));
  CHECK(st.step == 5);

  GradMap<float> bad;
  bad.emplace("a", Tensor<float>(Shape{3}, 0.0f));
  bad.emplace("b", Tensor<float>(Shape{2}, 0.0f));
  try {
    adamw_step(ps, bad, st);
    FAIL("expected shape error");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("a") != std::string::npos);
  }
  GradMap<float> missing;
  missing.emplace("a", Tensor<float>(Shape{2}, 0.0f));
  CHECK_THROWS_AS(adamw_step(ps, missing, st), std::invalid_argument);
  CHECK(st.step == 5);
}

TEST_CASE("softmax_cross_entropy examples") {
  const std::vector<double> uniform{0.3, 0.3, 0.3, 0.3};
  CHECK(softmax_cross_entropy<double>(uniform, 2) == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  const std::vector<double> confident{10.0, -10.0};
  const double expected = std::log1p(std::exp(-20.0));
  CHECK(softmax_cross_entropy<double>(confident, 0) == doctest::Approx(expected).epsilon(1e-9));
  CHECK(std::abs(expected - 2.06e-9) < 0.01e-9);

  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> l(5);
    for (auto& v : l) v = rng.normal() * 3;
    auto shifted = l;
    const double c = rng.normal() * 50;
    for (auto& v : shifted) v += c;
    const std::size_t t = rng.below(5);
    const double base = softmax_cross_entropy<double>(l, t);
    CHECK(base >= 0.0);
    CHECK(softmax_cross_entropy<double>(shifted, t) == doctest::Approx(base).epsilon(1e-9));
  }
  CHECK_THROWS_AS(softmax_cross_entropy<double>(std::vector<double>{}, 0), std::invalid_argument);
  CHECK_THROWS_AS(softmax_cross_entropy<double>(uniform, 4), std::out_of_range);
}
