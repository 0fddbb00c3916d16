#include <benchmark/benchmark.h>

#include <vector>

#include "ddr/numerics/kernels.hpp"
#include "ddr/numerics/rng.hpp"

namespace {

std::vector<float> random_values(std::size_t n, std::uint64_t seed) {
  ddr::Rng rng(seed);
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.normal());
  return v;
}

template <bool Reference>
void BM_Gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_values(n * n, 1), b = random_values(n * n, 2);
  std::vector<float> c(n * n);
  for (auto _ : state) {
    if constexpr (Reference) {
      ddr::kernels::reference::gemm(false, false, n, n, n, a.data(), b.data(), c.data(), false);
    } else {
      ddr::kernels::gemm(false, false, n, n, n, a.data(), b.data(), c.data(), false);
    }
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(2 * n * n * n));
}

template <bool Reference>
void BM_Attention(benchmark::State& state) {
  const std::size_t seg_len = static_cast<std::size_t>(state.range(0)), n_seg = 16, dim = 64, heads = 4;
  std::vector<ddr::kernels::Segment> segs;
  for (std::size_t s = 0; s < n_seg; ++s) segs.push_back({s * seg_len, seg_len});
  const std::size_t rows = n_seg * seg_len;
  const auto q = random_values(rows * dim, 3), k = random_values(rows * dim, 4), v = random_values(rows * dim, 5);
  std::vector<float> out(rows * dim), probs(ddr::kernels::attention_prob_offsets(segs, heads).back());
  for (auto _ : state) {
    if constexpr (Reference) {
      ddr::kernels::reference::attention_forward<float>(segs, dim, heads, q.data(), k.data(), v.data(), out.data(),
                                                        probs.data());
    } else {
      ddr::kernels::attention_forward<float>(segs, dim, heads, q.data(), k.data(), v.data(), out.data(),
                                             probs.data());
    }
    benchmark::DoNotOptimize(out.data());
  }
}

template <bool Reference>
void BM_Score(benchmark::State& state) {
  const std::size_t nq = 32, nd = static_cast<std::size_t>(state.range(0)), dim = 64;
  const auto q = random_values(nq * dim, 6), d = random_values(nd * dim, 7);
  std::vector<float> s(nq * nd);
  for (auto _ : state) {
    if constexpr (Reference) {
      ddr::kernels::reference::score_matrix(nq, nd, dim, q.data(), d.data(), s.data());
    } else {
      ddr::kernels::score_matrix(nq, nd, dim, q.data(), d.data(), s.data());
    }
    benchmark::DoNotOptimize(s.data());
  }
}

}  // namespace

BENCHMARK(BM_Gemm<true>)->Arg(64)->Arg(256);
BENCHMARK(BM_Gemm<false>)->Arg(64)->Arg(256);
BENCHMARK(BM_Attention<true>)->Arg(32)->Arg(64);
BENCHMARK(BM_Attention<false>)->Arg(32)->Arg(64);
BENCHMARK(BM_Score<true>)->Arg(4096);
BENCHMARK(BM_Score<false>)->Arg(4096);

BENCHMARK_MAIN();
