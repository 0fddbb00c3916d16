#pragma once

#include <cstddef>
#include <span>
#include <vector>

// Dense kernels behind the autograd ops. Each kernel exists twice:
//   ddr::kernels::            cache-friendly loops, OpenMP-parallel over
//                             independent output rows / segments
//   ddr::kernels::reference:: plain serial loops, kept as a test oracle
// The parallel kernels split work only across outputs, never inside a
// reduction, so results are bitwise independent of the thread count.

namespace ddr::kernels {

struct Segment {
  std::size_t offset = 0;
  std::size_t length = 0;
};

/// C[m x n] (+)= op(A) * op(B) with op(A) m x k and op(B) k x n.
/// Storage is row-major and contiguous: A is m x k (or k x m when trans_a),
/// B is k x n (or n x k when trans_b).
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a,
          const T* b, T* c, bool accumulate);

/// Scaled-dot-product self-attention inside each segment of a packed
/// [rows x dim] batch, `heads` equal slices of `dim`. Writes the output and
/// the per-head probability matrices (needed by the backward pass), laid out
/// segment by segment, head by head, each length x length.
template <typename T>
void attention_forward(std::span<const Segment> segments, std::size_t dim, std::size_t heads,
                       const T* q, const T* k, const T* v, T* out, T* probs);

/// Accumulates gradients into dq/dk/dv (any of which may be null).
template <typename T>
void attention_backward(std::span<const Segment> segments, std::size_t dim, std::size_t heads,
                        const T* q, const T* k, const T* v, const T* probs, const T* dout, T* dq,
                        T* dk, T* dv);

/// Offset of each segment's probability block in the `probs` buffer, plus
/// the total size as the last element.
std::vector<std::size_t> attention_prob_offsets(std::span<const Segment> segments,
                                                std::size_t heads);

/// scores[i, j] = <queries_i, docs_j>, rows of length dim.
template <typename T>
void score_matrix(std::size_t num_queries, std::size_t num_docs, std::size_t dim, const T* queries,
                  const T* docs, T* scores);

int max_threads();

namespace reference {

template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a,
          const T* b, T* c, bool accumulate);

template <typename T>
void attention_forward(std::span<const Segment> segments, std::size_t dim, std::size_t heads,
                       const T* q, const T* k, const T* v, T* out, T* probs);

template <typename T>
void score_matrix(std::size_t num_queries, std::size_t num_docs, std::size_t dim, const T* queries,
                  const T* docs, T* scores);

}  // namespace reference
}  // namespace ddr::kernels
