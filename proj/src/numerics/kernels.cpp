#include "ddr/numerics/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace ddr::kernels {
namespace {

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelWork = 1u << 15;

template <typename T>
inline T dot(const T* x, const T* y, std::size_t n) {
  T acc = T(0);
#pragma omp simd reduction(+ : acc)
  for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

template <typename T>
inline void axpy(T alpha, const T* x, T* y, std::size_t n) {
#pragma omp simd
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}


namespace {

// Register tile: MR rows by NR columns held in NR / W vector registers per
// row. 64-byte vectors map to one AVX-512 register and are split by the
// compiler on narrower targets.
template <typename T>
struct Tile;
template <>
struct Tile<float> {
  static constexpr std::size_t MR = 8, NR = 32, W = 16;
  typedef float V __attribute__((vector_size(64)));
  typedef float U __attribute__((vector_size(64), aligned(4)));  // unaligned access
};
template <>
struct Tile<double> {
  static constexpr std::size_t MR = 8, NR = 16, W = 8;
  typedef double V __attribute__((vector_size(64)));
  typedef double U __attribute__((vector_size(64), aligned(8)));
};

constexpr std::size_t kKc = 256;  // depth of one packed block

// Accumulators are named variables: GCC keeps those in registers but
// spills an accumulator array to the stack on every iteration.
template <typename T>
void micro_kernel(std::size_t kc, const T* ap, const T* bp, T* c, std::size_t ldc, std::size_t rows,
                  std::size_t cols, bool overwrite) {
  using TL = Tile<T>;
  using V = typename TL::V;
  using U = typename TL::U;
  static_assert(TL::MR == 8 && TL::NR == 2 * TL::W);
  V x0{}, y0{}, x1{}, y1{}, x2{}, y2{}, x3{}, y3{}, x4{}, y4{}, x5{}, y5{}, x6{}, y6{}, x7{}, y7{};
  for (std::size_t p = 0; p < kc; ++p) {
    const V bx = *reinterpret_cast<const U*>(bp + p * TL::NR);
    const V by = *reinterpret_cast<const U*>(bp + p * TL::NR + TL::W);
    const T* ar = ap + p * TL::MR;
#define DDR_ROW(r)    \
  x##r += ar[r] * bx; \
  y##r += ar[r] * by;
    DDR_ROW(0) DDR_ROW(1) DDR_ROW(2) DDR_ROW(3) DDR_ROW(4) DDR_ROW(5) DDR_ROW(6) DDR_ROW(7)
#undef DDR_ROW
  }
  const V acc[16] = {x0, y0, x1, y1, x2, y2, x3, y3, x4, y4, x5, y5, x6, y6, x7, y7};
  if (rows == TL::MR && cols == TL::NR) {
    for (std::size_t r = 0; r < TL::MR; ++r) {
      for (std::size_t v = 0; v < 2; ++v) {
        U* dst = reinterpret_cast<U*>(c + r * ldc + v * TL::W);
        *dst = overwrite ? acc[2 * r + v] : *dst + acc[2 * r + v];
      }
    }
    return;
  }
  T tmp[TL::MR][TL::NR];
  for (std::size_t r = 0; r < TL::MR; ++r) {
    for (std::size_t v = 0; v < 2; ++v) *reinterpret_cast<U*>(&tmp[r][v * TL::W]) = acc[2 * r + v];
  }
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < cols; ++j) c[r * ldc + j] = overwrite ? tmp[r][j] : c[r * ldc + j] + tmp[r][j];
  }
}

}  // namespace

// Packed blocked product: B is packed once per depth block into NR-wide
// column panels, each thread packs MR-row panels of A, and every C tile is
// owned by one thread with a fixed summation order, so results do not
// depend on the thread count.
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a,
          const T* b, T* c, bool accumulate) {
  using TL = Tile<T>;
  constexpr std::size_t MR = TL::MR, NR = TL::NR;
  if (m == 0 || n == 0) return;
  if (k == 0) {
    if (!accumulate) std::fill(c, c + m * n, T(0));
    return;
  }
  const std::size_t row_panels = (m + MR - 1) / MR, col_panels = (n + NR - 1) / NR;
  const bool parallel = m * n * k >= kParallelWork && row_panels > 1;
  std::vector<T> bpack(col_panels * NR * std::min(k, kKc));
  for (std::size_t p0 = 0; p0 < k; p0 += kKc) {
    const std::size_t kc = std::min(kKc, k - p0);
    for (std::size_t jp = 0; jp < col_panels; ++jp) {
      T* dst = bpack.data() + jp * NR * kc;
      const std::size_t j0 = jp * NR, cols = std::min(NR, n - j0);
      for (std::size_t p = 0; p < kc; ++p) {
        T* row = dst + p * NR;
        for (std::size_t j = 0; j < cols; ++j) {
          row[j] = trans_b ? b[(j0 + j) * k + p0 + p] : b[(p0 + p) * n + j0 + j];
        }
        std::fill(row + cols, row + NR, T(0));
      }
    }
    const bool overwrite = p0 == 0 && !accumulate;
#pragma omp parallel if (parallel)
    {
      std::vector<T> apack(MR * kc);
#pragma omp for schedule(static)
      for (std::size_t ip = 0; ip < row_panels; ++ip) {
        const std::size_t i0 = ip * MR, rows = std::min(MR, m - i0);
        for (std::size_t p = 0; p < kc; ++p) {
          T* col = apack.data() + p * MR;
          for (std::size_t r = 0; r < rows; ++r) {
            col[r] = trans_a ? a[(p0 + p) * m + i0 + r] : a[(i0 + r) * k + p0 + p];
          }
          std::fill(col + rows, col + MR, T(0));
        }
        for (std::size_t jp = 0; jp < col_panels; ++jp) {
          const std::size_t j0 = jp * NR;
          micro_kernel(kc, apack.data(), bpack.data() + jp * NR * kc, c + i0 * n + j0, n, rows,
                       std::min(NR, n - j0), overwrite);
        }
      }
    }
  }
}

std::vector<std::size_t> attention_prob_offsets(std::span<const Segment> segments,
                                                std::size_t heads) {
  std::vector<std::size_t> offsets(segments.size() + 1, 0);
  for (std::size_t s = 0; s < segments.size(); ++s) {
    offsets[s + 1] = offsets[s] + heads * segments[s].length * segments[s].length;
  }
  return offsets;
}

namespace {

template <typename T>
void attention_head_forward(const Segment& seg, std::size_t dim, std::size_t head,
                            std::size_t head_dim, const T* q, const T* k, const T* v, T* out,
                            T* probs) {
  const std::size_t len = seg.length;
  const T scale = T(1) / std::sqrt(static_cast<T>(head_dim));
  const std::size_t col = head * head_dim;
  for (std::size_t i = 0; i < len; ++i) {
    const T* qi = q + (seg.offset + i) * dim + col;
    T* p = probs + i * len;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < len; ++j) {
      p[j] = dot(qi, k + (seg.offset + j) * dim + col, head_dim) * scale;
      mx = std::max(mx, p[j]);
    }
    T sum = T(0);
    for (std::size_t j = 0; j < len; ++j) {
      p[j] = std::exp(p[j] - mx);
      sum += p[j];
    }
    const T inv = T(1) / sum;
    for (std::size_t j = 0; j < len; ++j) p[j] *= inv;
    T* oi = out + (seg.offset + i) * dim + col;
    std::fill(oi, oi + head_dim, T(0));
    for (std::size_t j = 0; j < len; ++j) axpy(p[j], v + (seg.offset + j) * dim + col, oi, head_dim);
  }
}

}  // namespace

template <typename T>
void attention_forward(std::span<const Segment> segments, std::size_t dim, std::size_t heads,
                       const T* q, const T* k, const T* v, T* out, T* probs) {
  const std::size_t head_dim = dim / heads;
  const auto offsets = attention_prob_offsets(segments, heads);
  const auto tasks = static_cast<long>(segments.size() * heads);
#pragma omp parallel for schedule(dynamic) if (tasks > 8)
  for (long t = 0; t < tasks; ++t) {
    const std::size_t s = static_cast<std::size_t>(t) / heads;
    const std::size_t h = static_cast<std::size_t>(t) % heads;
    const std::size_t len = segments[s].length;
    attention_head_forward(segments[s], dim, h, head_dim, q, k, v, out,
                           probs + offsets[s] + h * len * len);
  }
}

template <typename T>
void attention_backward(std::span<const Segment> segments, std::size_t dim, std::size_t heads,
                        const T* q, const T* k, const T* v, const T* probs, const T* dout, T* dq,
                        T* dk, T* dv) {
  const std::size_t head_dim = dim / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(head_dim));
  const auto offsets = attention_prob_offsets(segments, heads);
  const auto tasks = static_cast<long>(segments.size() * heads);
#pragma omp parallel for schedule(dynamic) if (tasks > 8)
  for (long t = 0; t < tasks; ++t) {
    const std::size_t s = static_cast<std::size_t>(t) / heads;
    const std::size_t h = static_cast<std::size_t>(t) % heads;
    const Segment& seg = segments[s];
    const std::size_t len = seg.length;
    const std::size_t col = h * head_dim;
    const T* p = probs + offsets[s] + h * len * len;
    std::vector<T> dscore(len);
    for (std::size_t i = 0; i < len; ++i) {
      const T* doi = dout + (seg.offset + i) * dim + col;
      const T* pi = p + i * len;
      T weighted = T(0);
      for (std::size_t j = 0; j < len; ++j) {
        dscore[j] = dot(doi, v + (seg.offset + j) * dim + col, head_dim);
        weighted += pi[j] * dscore[j];
      }
      for (std::size_t j = 0; j < len; ++j) dscore[j] = pi[j] * (dscore[j] - weighted) * scale;
      if (dv) {
        for (std::size_t j = 0; j < len; ++j) axpy(pi[j], doi, dv + (seg.offset + j) * dim + col, head_dim);
      }
      if (dq) {
        T* dqi = dq + (seg.offset + i) * dim + col;
        for (std::size_t j = 0; j < len; ++j) axpy(dscore[j], k + (seg.offset + j) * dim + col, dqi, head_dim);
      }
      if (dk) {
        const T* qi = q + (seg.offset + i) * dim + col;
        for (std::size_t j = 0; j < len; ++j) axpy(dscore[j], qi, dk + (seg.offset + j) * dim + col, head_dim);
      }
    }
  }
}

template <typename T>
void score_matrix(std::size_t num_queries, std::size_t num_docs, std::size_t dim, const T* queries,
                  const T* docs, T* scores) {
  // Parallel over documents so a single query still fans out.
#pragma omp parallel for schedule(static) if (num_docs * num_queries * dim >= kParallelWork)
  for (std::size_t j = 0; j < num_docs; ++j) {
    const T* dj = docs + j * dim;
    for (std::size_t i = 0; i < num_queries; ++i) scores[i * num_docs + j] = dot(queries + i * dim, dj, dim);
  }
}

namespace reference {

template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a,
          const T* b, T* c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T acc = T(0);
      for (std::size_t p = 0; p < k; ++p) {
        const T av = trans_a ? a[p * m + i] : a[i * k + p];
        const T bv = trans_b ? b[j * k + p] : b[p * n + j];
        acc += av * bv;
      }
      c[i * n + j] = accumulate ? c[i * n + j] + acc : acc;
    }
  }
}

template <typename T>
void attention_forward(std::span<const Segment> segments, std::size_t dim, std::size_t heads,
                       const T* q, const T* k, const T* v, T* out, T* probs) {
  const std::size_t head_dim = dim / heads;
  const auto offsets = attention_prob_offsets(segments, heads);
  for (std::size_t s = 0; s < segments.size(); ++s) {
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t len = segments[s].length;
      attention_head_forward(segments[s], dim, h, head_dim, q, k, v, out,
                             probs + offsets[s] + h * len * len);
    }
  }
}

template <typename T>
void score_matrix(std::size_t num_queries, std::size_t num_docs, std::size_t dim, const T* queries,
                  const T* docs, T* scores) {
  for (std::size_t i = 0; i < num_queries; ++i) {
    for (std::size_t j = 0; j < num_docs; ++j) {
      T acc = T(0);
      for (std::size_t c = 0; c < dim; ++c) acc += queries[i * dim + c] * docs[j * dim + c];
      scores[i * num_docs + j] = acc;
    }
  }
}

}  // namespace reference

#define DDR_INSTANTIATE_KERNELS(T)                                                              \
  template void gemm<T>(bool, bool, std::size_t, std::size_t, std::size_t, const T*, const T*, \
                        T*, bool);                                                             \
  template void attention_forward<T>(std::span<const Segment>, std::size_t, std::size_t,       \
                                     const T*, const T*, const T*, T*, T*);                    \
  template void attention_backward<T>(std::span<const Segment>, std::size_t, std::size_t,      \
                                      const T*, const T*, const T*, const T*, const T*, T*,    \
                                      T*, T*);                                                 \
  template void score_matrix<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, T*); \
  template void reference::gemm<T>(bool, bool, std::size_t, std::size_t, std::size_t,          \
                                   const T*, const T*, T*, bool);                              \
  template void reference::attention_forward<T>(std::span<const Segment>, std::size_t,         \
                                                std::size_t, const T*, const T*, const T*, T*, \
                                                T*);                                           \
  template void reference::score_matrix<T>(std::size_t, std::size_t, std::size_t, const T*,    \
                                           const T*, T*);

DDR_INSTANTIATE_KERNELS(float)
DDR_INSTANTIATE_KERNELS(double)

}  // namespace ddr::kernels
