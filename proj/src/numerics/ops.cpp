#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "ddr/numerics/autograd.hpp"
#include "ddr/numerics/kernels.hpp"

namespace ddr::ops {
namespace {

template <typename T>
void require_same_graph(Var<T> a, Var<T> b, const char* op) {
  if (a.graph != b.graph) throw std::logic_error(std::string(op) + ": operands from different graphs");
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

template <typename T>
void accumulate(Tensor<T>& dst, const Tensor<T>& src) {
  T* d = dst.data();
  const T* s = src.data();
  for (std::size_t i = 0; i < dst.numel(); ++i) d[i] += s[i];
}

template <typename T>
Tensor<T> scalar_tensor(T v) {
  return Tensor<T>(Shape{1}, v);
}

}  // namespace

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  require_same_graph(a, b, "matmul");
  const Tensor<T>& A = a.value();
  const Tensor<T>& B = b.value();
  const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  if (B.rows() != k) throw ShapeError("matmul: " + shape_str(A.shape()) + " x " + shape_str(B.shape()));
  Tensor<T> C = Tensor<T>::matrix(m, n);
  kernels::gemm(false, false, m, n, k, A.data(), B.data(), C.data(), false);
  Graph<T>* g = a.graph;
  const std::size_t ia = a.id, ib = b.id;
  return g->emit(std::move(C), a.requires_grad() || b.requires_grad(),
                 [g, ia, ib, m, n, k](const Tensor<T>& dc) {
                   if (g->requires_grad(ia)) {
                     kernels::gemm(false, true, m, k, n, dc.data(), g->value(ib).data(),
                                   g->grad(ia).data(), true);
                   }
                   if (g->requires_grad(ib)) {
                     kernels::gemm(true, false, k, n, m, g->value(ia).data(), dc.data(),
                                   g->grad(ib).data(), true);
                   }
                 });
}

template <typename T>
Var<T> matmul_nt(Var<T> a, Var<T> b) {
  require_same_graph(a, b, "matmul_nt");
  const Tensor<T>& A = a.value();
  const Tensor<T>& B = b.value();
  const std::size_t m = A.rows(), k = A.cols(), n = B.rows();
  if (B.cols() != k) {
    throw ShapeError("matmul_nt: " + shape_str(A.shape()) + " x " + shape_str(B.shape()) + "^T");
  }
  Tensor<T> C = Tensor<T>::matrix(m, n);
  kernels::gemm(false, true, m, n, k, A.data(), B.data(), C.data(), false);
  Graph<T>* g = a.graph;
  const std::size_t ia = a.id, ib = b.id;
  return g->emit(std::move(C), a.requires_grad() || b.requires_grad(),
                 [g, ia, ib, m, n, k](const Tensor<T>& dc) {
                   if (g->requires_grad(ia)) {
                     kernels::gemm(false, false, m, k, n, dc.data(), g->value(ib).data(),
                                   g->grad(ia).data(), true);
                   }
                   if (g->requires_grad(ib)) {
                     kernels::gemm(true, false, n, k, m, dc.data(), g->value(ia).data(),
                                   g->grad(ib).data(), true);
                   }
                 });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  require_same_graph(a, b, "add");
  require_same_shape(a.value(), b.value(), "add");
  Tensor<T> out = a.value();
  accumulate(out, b.value());
  Graph<T>* g = a.graph;
  const std::size_t ia = a.id, ib = b.id;
  return g->emit(std::move(out), a.requires_grad() || b.requires_grad(),
                 [g, ia, ib](const Tensor<T>& d) {
                   if (g->requires_grad(ia)) accumulate(g->grad(ia), d);
                   if (g->requires_grad(ib)) accumulate(g->grad(ib), d);
                 });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  require_same_graph(a, b, "sub");
  require_same_shape(a.value(), b.value(), "sub");
  Tensor<T> out = a.value();
  const Tensor<T>& B = b.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= B[i];
  Graph<T>* g = a.graph;
  const std::size_t ia = a.id, ib = b.id;
  return g->emit(std::move(out), a.requires_grad() || b.requires_grad(),
                 [g, ia, ib](const Tensor<T>& d) {
                   if (g->requires_grad(ia)) accumulate(g->grad(ia), d);
                   if (g->requires_grad(ib)) {
                     Tensor<T>& gb = g->grad(ib);
                     for (std::size_t i = 0; i < gb.numel(); ++i) gb[i] -= d[i];
                   }
                 });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  require_same_graph(a, b, "mul");
  require_same_shape(a.value(), b.value(), "mul");
  Tensor<T> out = a.value();
  const Tensor<T>& B = b.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= B[i];
  Graph<T>* g = a.graph;
  const std::size_t ia = a.id, ib = b.id;
  return g->emit(std::move(out), a.requires_grad() || b.requires_grad(),
                 [g, ia, ib](const Tensor<T>& d) {
                   if (g->requires_grad(ia)) {
                     Tensor<T>& ga = g->grad(ia);
                     const Tensor<T>& vb = g->value(ib);
                     for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += d[i] * vb[i];
                   }
                   if (g->requires_grad(ib)) {
                     Tensor<T>& gb = g->grad(ib);
                     const Tensor<T>& va = g->value(ia);
                     for (std::size_t i = 0; i < gb.numel(); ++i) gb[i] += d[i] * va[i];
                   }
                 });
}

template <typename T>
Var<T> add_bias(Var<T> x, Var<T> bias) {
  require_same_graph(x, bias, "add_bias");
  const Tensor<T>& X = x.value();
  const Tensor<T>& B = bias.value();
  const std::size_t rows = X.rows(), cols = X.cols();
  if (B.numel() != cols) {
    throw ShapeError("add_bias: bias " + shape_str(B.shape()) + " for " + shape_str(X.shape()));
  }
  Tensor<T> out = X;
  for (std::size_t r = 0; r < rows; ++r) {
    T* o = out.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) o[c] += B[c];
  }
  Graph<T>* g = x.graph;
  const std::size_t ix = x.id, ib = bias.id;
  return g->emit(std::move(out), x.requires_grad() || bias.requires_grad(),
                 [g, ix, ib, rows, cols](const Tensor<T>& d) {
                   if (g->requires_grad(ix)) accumulate(g->grad(ix), d);
                   if (g->requires_grad(ib)) {
                     T* gb = g->grad(ib).data();
                     for (std::size_t r = 0; r < rows; ++r) {
                       const T* dr = d.data() + r * cols;
                       for (std::size_t c = 0; c < cols; ++c) gb[c] += dr[c];
                     }
                   }
                 });
}

template <typename T>
Var<T> scale(Var<T> x, T factor) {
  Tensor<T> out = x.value();
  for (auto& v : out.values()) v *= factor;
  Graph<T>* g = x.graph;
  const std::size_t ix = x.id;
  return g->emit(std::move(out), x.requires_grad(), [g, ix, factor](const Tensor<T>& d) {
    Tensor<T>& gx = g->grad(ix);
    for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += factor * d[i];
  });
}

template <typename T>
Var<T> gelu(Var<T> x) {
  const T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
  Tensor<T> out = x.value();
  for (auto& v : out.values()) v = T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2));
  Graph<T>* g = x.graph;
  const std::size_t ix = x.id;
  return g->emit(std::move(out), x.requires_grad(), [g, ix, inv_sqrt2](const Tensor<T>& d) {
    const T inv_sqrt_2pi = T(1) / std::sqrt(T(2) * std::numbers::pi_v<T>);
    const Tensor<T>& X = g->value(ix);
    Tensor<T>& gx = g->grad(ix);
    for (std::size_t i = 0; i < gx.numel(); ++i) {
      const T v = X[i];
      const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
      const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
      gx[i] += d[i] * (cdf + v * pdf);
    }
  });
}

template <typename T>
Var<T> relu(Var<T> x) {
  Tensor<T> out = x.value();
  for (auto& v : out.values()) v = v > T(0) ? v : T(0);
  Graph<T>* g = x.graph;
  const std::size_t ix = x.id;
  return g->emit(std::move(out), x.requires_grad(), [g, ix](const Tensor<T>& d) {
    const Tensor<T>& X = g->value(ix);
    Tensor<T>& gx = g->grad(ix);
    for (std::size_t i = 0; i < gx.numel(); ++i) {
      if (X[i] > T(0)) gx[i] += d[i];
    }
  });
}

template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps) {
  require_same_graph(x, gamma, "layer_norm");
  require_same_graph(x, beta, "layer_norm");
  const Tensor<T>& X = x.value();
  const std::size_t rows = X.rows(), cols = X.cols();
  if (gamma.value().numel() != cols || beta.value().numel() != cols) {
    throw ShapeError("layer_norm: affine params do not match width " + std::to_string(cols));
  }
  const T* G = gamma.value().data();
  const T* B = beta.value().data();
  Tensor<T> xhat(X.shape());
  std::vector<T> rstd(rows);
  Tensor<T> out(X.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = X.data() + r * cols;
    T mean = T(0);
    for (std::size_t c = 0; c < cols; ++c) mean += xr[c];
    mean /= static_cast<T>(cols);
    T var = T(0);
    for (std::size_t c = 0; c < cols; ++c) var += (xr[c] - mean) * (xr[c] - mean);
    var /= static_cast<T>(cols);
    rstd[r] = T(1) / std::sqrt(var + eps);
    T* hr = xhat.data() + r * cols;
    T* outr = out.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) {
      hr[c] = (xr[c] - mean) * rstd[r];
      outr[c] = hr[c] * G[c] + B[c];
    }
  }
  Graph<T>* g = x.graph;
  const std::size_t ix = x.id, ig = gamma.id, ib = beta.id;
  const bool rg = x.requires_grad() || gamma.requires_grad() || beta.requires_grad();
  return g->emit(std::move(out), rg,
                 [g, ix, ig, ib, rows, cols, xhat = std::move(xhat),
                  rstd = std::move(rstd)](const Tensor<T>& d) {
                   if (g->requires_grad(ig) || g->requires_grad(ib)) {
                     T* dg = g->requires_grad(ig) ? g->grad(ig).data() : nullptr;
                     T* db = g->requires_grad(ib) ? g->grad(ib).data() : nullptr;
                     for (std::size_t r = 0; r < rows; ++r) {
                       const T* dr = d.data() + r * cols;
                       const T* hr = xhat.data() + r * cols;
                       for (std::size_t c = 0; c < cols; ++c) {
                         if (dg) dg[c] += dr[c] * hr[c];
                         if (db) db[c] += dr[c];
                       }
                     }
                   }
                   if (g->requires_grad(ix)) {
                     const T* G = g->value(ig).data();
                     T* dx = g->grad(ix).data();
                     const T n = static_cast<T>(cols);
                     for (std::size_t r = 0; r < rows; ++r) {
                       const T* dr = d.data() + r * cols;
                       const T* hr = xhat.data() + r * cols;
                       T sum_dh = T(0), sum_dh_h = T(0);
                       for (std::size_t c = 0; c < cols; ++c) {
                         const T dh = dr[c] * G[c];
                         sum_dh += dh;
                         sum_dh_h += dh * hr[c];
                       }
                       T* dxr = dx + r * cols;
                       for (std::size_t c = 0; c < cols; ++c) {
                         const T dh = dr[c] * G[c];
                         dxr[c] += rstd[r] * (dh - sum_dh / n - hr[c] * sum_dh_h / n);
                       }
                     }
                   }
                 });
}

template <typename T>
Var<T> gather_rows(Var<T> x, std::span<const std::int32_t> rows) {
  const Tensor<T>& X = x.value();
  const std::size_t cols = X.cols(), n_src = X.rows();
  if (rows.empty()) throw ShapeError("gather_rows: no rows requested");
  Tensor<T> out = Tensor<T>::matrix(rows.size(), cols);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto r = rows[i];
    if (r < 0 || static_cast<std::size_t>(r) >= n_src) {
      throw std::out_of_range("gather_rows: row " + std::to_string(r) + " outside [0, " +
                              std::to_string(n_src) + ")");
    }
    std::copy_n(X.data() + static_cast<std::size_t>(r) * cols, cols, out.data() + i * cols);
  }
  Graph<T>* g = x.graph;
  const std::size_t ix = x.id;
  std::vector<std::int32_t> idx(rows.begin(), rows.end());
  return g->emit(std::move(out), x.requires_grad(),
                 [g, ix, cols, idx = std::move(idx)](const Tensor<T>& d) {
                   T* gx = g->grad(ix).data();
                   for (std::size_t i = 0; i < idx.size(); ++i) {
                     T* dst = gx + static_cast<std::size_t>(idx[i]) * cols;
                     const T* src = d.data() + i * cols;
                     for (std::size_t c = 0; c < cols; ++c) dst[c] += src[c];
                   }
                 });
}

template <typename T>
Var<T> concat_rows(Var<T> a, Var<T> b) {
  require_same_graph(a, b, "concat_rows");
  const Tensor<T>& A = a.value();
  const Tensor<T>& B = b.value();
  if (A.cols() != B.cols()) {
    throw ShapeError("concat_rows: " + shape_str(A.shape()) + " with " + shape_str(B.shape()));
  }
  const std::size_t cols = A.cols(), ra = A.rows(), rb = B.rows();
  Tensor<T> out = Tensor<T>::matrix(ra + rb, cols);
  std::copy_n(A.data(), A.numel(), out.data());
  std::copy_n(B.data(), B.numel(), out.data() + A.numel());
  Graph<T>* g = a.graph;
  const std::size_t ia = a.id, ib = b.id;
  return g->emit(std::move(out), a.requires_grad() || b.requires_grad(),
                 [g, ia, ib, cols, ra, rb](const Tensor<T>& d) {
                   if (g->requires_grad(ia)) {
                     T* ga = g->grad(ia).data();
                     for (std::size_t i = 0; i < ra * cols; ++i) ga[i] += d[i];
                   }
                   if (g->requires_grad(ib)) {
                     T* gb = g->grad(ib).data();
                     for (std::size_t i = 0; i < rb * cols; ++i) gb[i] += d[ra * cols + i];
                   }
                 });
}

template <typename T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v, std::span<const Segment> segments,
                 std::size_t heads) {
  require_same_graph(q, k, "attention");
  require_same_graph(q, v, "attention");
  const Tensor<T>& Q = q.value();
  require_same_shape(Q, k.value(), "attention");
  require_same_shape(Q, v.value(), "attention");
  const std::size_t dim = Q.cols();
  if (heads == 0 || dim % heads != 0) {
    throw ShapeError("attention: width " + std::to_string(dim) + " not divisible into " +
                     std::to_string(heads) + " heads");
  }
  std::size_t covered = 0;
  for (const auto& s : segments) {
    if (s.offset != covered || s.length == 0) throw ShapeError("attention: segments must tile the rows");
    covered += s.length;
  }
  if (covered != Q.rows()) throw ShapeError("attention: segments must tile the rows");
  std::vector<Segment> segs(segments.begin(), segments.end());
  const auto offsets = kernels::attention_prob_offsets(segs, heads);
  std::vector<T> probs(offsets.back());
  Tensor<T> out(Q.shape());
  kernels::attention_forward<T>(segs, dim, heads, Q.data(), k.value().data(), v.value().data(),
                                out.data(), probs.data());
  Graph<T>* g = q.graph;
  const std::size_t iq = q.id, ik = k.id, iv = v.id;
  const bool rg = q.requires_grad() || k.requires_grad() || v.requires_grad();
  return g->emit(std::move(out), rg,
                 [g, iq, ik, iv, dim, heads, segs = std::move(segs),
                  probs = std::move(probs)](const Tensor<T>& d) {
                   T* dq = g->requires_grad(iq) ? g->grad(iq).data() : nullptr;
                   T* dk = g->requires_grad(ik) ? g->grad(ik).data() : nullptr;
                   T* dv = g->requires_grad(iv) ? g->grad(iv).data() : nullptr;
                   kernels::attention_backward<T>(segs, dim, heads, g->value(iq).data(),
                                                  g->value(ik).data(), g->value(iv).data(),
                                                  probs.data(), d.data(), dq, dk, dv);
                 });
}

template <typename T>
Var<T> segment_mean(Var<T> x, std::span<const Segment> segments,
                    std::span<const std::uint8_t> include) {
  const Tensor<T>& X = x.value();
  const std::size_t cols = X.cols();
  if (include.size() != X.rows()) throw ShapeError("segment_mean: include mask length mismatch");
  std::vector<Segment> segs(segments.begin(), segments.end());
  std::vector<T> inv_count(segs.size());
  Tensor<T> out = Tensor<T>::matrix(segs.size(), cols);
  for (std::size_t s = 0; s < segs.size(); ++s) {
    std::size_t count = 0;
    T* o = out.data() + s * cols;
    for (std::size_t i = segs[s].offset; i < segs[s].offset + segs[s].length; ++i) {
      if (!include[i]) continue;
      ++count;
      const T* xr = X.data() + i * cols;
      for (std::size_t c = 0; c < cols; ++c) o[c] += xr[c];
    }
    if (count == 0) throw std::invalid_argument("segment_mean: segment with no pooled rows");
    inv_count[s] = T(1) / static_cast<T>(count);
    for (std::size_t c = 0; c < cols; ++c) o[c] *= inv_count[s];
  }
  Graph<T>* g = x.graph;
  const std::size_t ix = x.id;
  std::vector<std::uint8_t> inc(include.begin(), include.end());
  return g->emit(std::move(out), x.requires_grad(),
                 [g, ix, cols, segs = std::move(segs), inv_count = std::move(inv_count),
                  inc = std::move(inc)](const Tensor<T>& d) {
                   T* gx = g->grad(ix).data();
                   for (std::size_t s = 0; s < segs.size(); ++s) {
                     const T* ds = d.data() + s * cols;
                     for (std::size_t i = segs[s].offset; i < segs[s].offset + segs[s].length; ++i) {
                       if (!inc[i]) continue;
                       T* gr = gx + i * cols;
                       for (std::size_t c = 0; c < cols; ++c) gr[c] += ds[c] * inv_count[s];
                     }
                   }
                 });
}

template <typename T>
Var<T> l2_normalize_rows(Var<T> x) {
  const Tensor<T>& X = x.value();
  const std::size_t rows = X.rows(), cols = X.cols();
  Tensor<T> out = X;
  std::vector<T> inv_norm(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    T ss = T(0);
    const T* xr = X.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) ss += xr[c] * xr[c];
    if (!(ss > T(0))) throw std::domain_error("l2_normalize_rows: zero vector at row " + std::to_string(r));
    inv_norm[r] = T(1) / std::sqrt(ss);
    T* o = out.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) o[c] *= inv_norm[r];
  }
  Graph<T>* g = x.graph;
  const std::size_t ix = x.id;
  Tensor<T> y = out;
  return g->emit(std::move(out), x.requires_grad(),
                 [g, ix, rows, cols, y = std::move(y), inv_norm = std::move(inv_norm)](const Tensor<T>& d) {
                   T* gx = g->grad(ix).data();
                   for (std::size_t r = 0; r < rows; ++r) {
                     const T* yr = y.data() + r * cols;
                     const T* dr = d.data() + r * cols;
                     T proj = T(0);
                     for (std::size_t c = 0; c < cols; ++c) proj += yr[c] * dr[c];
                     T* gr = gx + r * cols;
                     for (std::size_t c = 0; c < cols; ++c) gr[c] += (dr[c] - yr[c] * proj) * inv_norm[r];
                   }
                 });
}

template <typename T>
Var<T> cross_entropy_rows(Var<T> logits, std::span<const std::int32_t> targets) {
  const Tensor<T>& L = logits.value();
  const std::size_t rows = L.rows(), cols = L.cols();
  if (rows == 0 || cols == 0) throw std::invalid_argument("cross_entropy_rows: empty logits");
  if (targets.size() != rows) throw ShapeError("cross_entropy_rows: one target per row required");
  Tensor<T> probs(L.shape());
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const auto t = targets[r];
    if (t < 0 || static_cast<std::size_t>(t) >= cols) {
      throw std::out_of_range("cross_entropy_rows: target " + std::to_string(t) + " outside [0, " +
                              std::to_string(cols) + ")");
    }
    const T* lr = L.data() + r * cols;
    T* pr = probs.data() + r * cols;
    const T mx = *std::max_element(lr, lr + cols);
    T sum = T(0);
    for (std::size_t c = 0; c < cols; ++c) {
      pr[c] = std::exp(lr[c] - mx);
      sum += pr[c];
    }
    for (std::size_t c = 0; c < cols; ++c) pr[c] /= sum;
    total += static_cast<double>(std::log(sum) - (lr[t] - mx));
  }
  Graph<T>* g = logits.graph;
  const std::size_t il = logits.id;
  std::vector<std::int32_t> tg(targets.begin(), targets.end());
  return g->emit(scalar_tensor(static_cast<T>(total / static_cast<double>(rows))),
                 logits.requires_grad(),
                 [g, il, rows, cols, probs = std::move(probs), tg = std::move(tg)](const Tensor<T>& d) {
                   const T w = d[0] / static_cast<T>(rows);
                   T* gl = g->grad(il).data();
                   for (std::size_t r = 0; r < rows; ++r) {
                     const T* pr = probs.data() + r * cols;
                     T* gr = gl + r * cols;
                     for (std::size_t c = 0; c < cols; ++c) gr[c] += w * pr[c];
                     gr[static_cast<std::size_t>(tg[r])] -= w;
                   }
                 });
}

template <typename T>
Var<T> pick(Var<T> x, std::span<const std::pair<std::size_t, std::size_t>> cells) {
  const Tensor<T>& X = x.value();
  if (cells.empty()) throw ShapeError("pick: no cells requested");
  Tensor<T> out(Shape{cells.size()});
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const auto [r, c] = cells[i];
    if (r >= X.rows() || c >= X.cols()) throw std::out_of_range("pick: cell outside " + shape_str(X.shape()));
    out[i] = X.at(r, c);
  }
  Graph<T>* g = x.graph;
  const std::size_t ix = x.id;
  std::vector<std::pair<std::size_t, std::size_t>> cl(cells.begin(), cells.end());
  return g->emit(std::move(out), x.requires_grad(), [g, ix, cl = std::move(cl)](const Tensor<T>& d) {
    Tensor<T>& gx = g->grad(ix);
    for (std::size_t i = 0; i < cl.size(); ++i) gx.at(cl[i].first, cl[i].second) += d[i];
  });
}

template <typename T>
Var<T> mse(Var<T> x, const Tensor<T>& target) {
  const Tensor<T>& X = x.value();
  if (X.numel() != target.numel()) throw ShapeError("mse: prediction/target size mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < X.numel(); ++i) {
    const double diff = static_cast<double>(X[i]) - static_cast<double>(target[i]);
    total += diff * diff;
  }
  const std::size_t n = X.numel();
  Graph<T>* g = x.graph;
  const std::size_t ix = x.id;
  return g->emit(scalar_tensor(static_cast<T>(total / static_cast<double>(n))), x.requires_grad(),
                 [g, ix, n, target](const Tensor<T>& d) {
                   const Tensor<T>& X = g->value(ix);
                   Tensor<T>& gx = g->grad(ix);
                   const T w = T(2) * d[0] / static_cast<T>(n);
                   for (std::size_t i = 0; i < n; ++i) gx[i] += w * (X[i] - target[i]);
                 });
}

template <typename T>
Var<T> sum(Var<T> x) {
  double total = 0.0;
  for (T v : x.value().values()) total += static_cast<double>(v);
  Graph<T>* g = x.graph;
  const std::size_t ix = x.id;
  return g->emit(scalar_tensor(static_cast<T>(total)), x.requires_grad(), [g, ix](const Tensor<T>& d) {
    for (auto& v : g->grad(ix).values()) v += d[0];
  });
}

#define DDR_INSTANTIATE_OPS(T)                                                                  \
  template Var<T> matmul<T>(Var<T>, Var<T>);                                                    \
  template Var<T> matmul_nt<T>(Var<T>, Var<T>);                                                 \
  template Var<T> add<T>(Var<T>, Var<T>);                                                       \
  template Var<T> sub<T>(Var<T>, Var<T>);                                                       \
  template Var<T> mul<T>(Var<T>, Var<T>);                                                       \
  template Var<T> add_bias<T>(Var<T>, Var<T>);                                                  \
  template Var<T> scale<T>(Var<T>, T);                                                          \
  template Var<T> gelu<T>(Var<T>);                                                              \
  template Var<T> relu<T>(Var<T>);                                                              \
  template Var<T> layer_norm<T>(Var<T>, Var<T>, Var<T>, T);                                     \
  template Var<T> gather_rows<T>(Var<T>, std::span<const std::int32_t>);                        \
  template Var<T> concat_rows<T>(Var<T>, Var<T>);                                               \
  template Var<T> attention<T>(Var<T>, Var<T>, Var<T>, std::span<const Segment>, std::size_t);  \
  template Var<T> segment_mean<T>(Var<T>, std::span<const Segment>,                             \
                                  std::span<const std::uint8_t>);                               \
  template Var<T> l2_normalize_rows<T>(Var<T>);                                                 \
  template Var<T> cross_entropy_rows<T>(Var<T>, std::span<const std::int32_t>);                 \
  template Var<T> pick<T>(Var<T>, std::span<const std::pair<std::size_t, std::size_t>>);        \
  template Var<T> mse<T>(Var<T>, const Tensor<T>&);                                             \
  template Var<T> sum<T>(Var<T>);

DDR_INSTANTIATE_OPS(float)
DDR_INSTANTIATE_OPS(double)

}  // namespace ddr::ops
