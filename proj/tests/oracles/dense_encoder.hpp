#pragma once

// Straightforward per-sequence evaluation of the encoder with nested loops
// in double precision. Shares no code with the library forward pass.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "ddr/numerics/param_set.hpp"

namespace oracle {

using Mat = std::vector<std::vector<double>>;

struct DenseSpec {
  std::size_t layers, dim, heads;
  double eps;
  std::size_t lora_rank = 0;
  double lora_scale = 1.0;
  std::size_t adapter = 0;
  double adapter_scale = 1.0;
};

inline Mat to_mat(const ddr::Tensor<float>& t) {
  const std::size_t cols = t.shape().size() == 1 ? t.shape()[0] : t.shape()[1];
  const std::size_t rows = t.numel() / cols;
  Mat m(rows, std::vector<double>(cols));
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) m[r][c] = t[r * cols + c];
  return m;
}

inline Mat mm(const Mat& a, const Mat& b) {
  Mat out(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b[0].size(); ++j)
      for (std::size_t k = 0; k < b.size(); ++k) out[i][j] += a[i][k] * b[k][j];
  return out;
}

inline Mat plus(Mat a, const Mat& b) {
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i].size(); ++j) a[i][j] += b[i][j];
  return a;
}

inline Mat bias(Mat a, const Mat& b) {
  for (auto& row : a)
    for (std::size_t j = 0; j < row.size(); ++j) row[j] += b[0][j];
  return a;
}

inline Mat layer_norm(Mat x, const Mat& gamma, const Mat& beta, double eps) {
  for (auto& row : x) {
    double mean = 0, var = 0;
    for (double v : row) mean += v;
    mean /= row.size();
    for (double v : row) var += (v - mean) * (v - mean);
    var /= row.size();
    for (std::size_t j = 0; j < row.size(); ++j)
      row[j] = (row[j] - mean) / std::sqrt(var + eps) * gamma[0][j] + beta[0][j];
  }
  return x;
}

inline double gelu(double v) { return 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0))); }

struct Lookup {
  const ddr::ParamSet<float>& ps;
  Mat operator()(const std::string& n) const { return to_mat(ps.get(n)); }
};

/// Final hidden states of one sequence of real tokens.
inline Mat hidden(const ddr::ParamSet<float>& ps, const DenseSpec& s, const std::vector<std::int32_t>& ids) {
  Lookup P{ps};
  const Mat tok = P("dam.embeddings.token"), pos = P("dam.embeddings.position");
  Mat x(ids.size(), std::vector<double>(s.dim));
  for (std::size_t i = 0; i < ids.size(); ++i)
    for (std::size_t j = 0; j < s.dim; ++j) x[i][j] = tok[ids[i]][j] + pos[i][j];
  x = layer_norm(x, P("dam.embeddings.ln.gamma"), P("dam.embeddings.ln.beta"), s.eps);
  const std::size_t hd = s.dim / s.heads;
  for (std::size_t l = 0; l < s.layers; ++l) {
    const std::string p = "dam.layer." + std::to_string(l) + ".";
    const std::string r = "rem.layer." + std::to_string(l) + ".";
    auto proj = [&](const std::string& m) {
      Mat w = P(p + "attn.w" + m);
      if (s.lora_rank > 0 && (m == "q" || m == "v")) {
        const Mat delta = mm(P(r + "lora." + m + ".a"), P(r + "lora." + m + ".b"));
        for (std::size_t i = 0; i < s.dim; ++i)
          for (std::size_t j = 0; j < s.dim; ++j) w[i][j] += s.lora_scale * delta[i][j];
      }
      return bias(mm(x, w), P(p + "attn.b" + m));
    };
    const Mat q = proj("q"), k = proj("k"), v = proj("v");
    Mat ctx(ids.size(), std::vector<double>(s.dim, 0.0));
    for (std::size_t h = 0; h < s.heads; ++h) {
      for (std::size_t i = 0; i < ids.size(); ++i) {
        std::vector<double> sc(ids.size());
        double mx = -1e300, z = 0;
        for (std::size_t j = 0; j < ids.size(); ++j) {
          double dot = 0;
          for (std::size_t c = h * hd; c < (h + 1) * hd; ++c) dot += q[i][c] * k[j][c];
          sc[j] = dot / std::sqrt(static_cast<double>(hd));
          mx = std::max(mx, sc[j]);
        }
        for (auto& v2 : sc) z += (v2 = std::exp(v2 - mx));
        for (std::size_t j = 0; j < ids.size(); ++j)
          for (std::size_t c = h * hd; c < (h + 1) * hd; ++c) ctx[i][c] += sc[j] / z * v[j][c];
      }
    }
    x = layer_norm(plus(x, bias(mm(ctx, P(p + "attn.wo")), P(p + "attn.bo"))), P(p + "attn_ln.gamma"),
                   P(p + "attn_ln.beta"), s.eps);
    Mat f = bias(mm(x, P(p + "ffn.w1")), P(p + "ffn.b1"));
    for (auto& row : f)
      for (auto& v2 : row) v2 = gelu(v2);
    f = bias(mm(f, P(p + "ffn.w2")), P(p + "ffn.b2"));
    if (s.adapter > 0) {
      Mat a = mm(x, P(r + "adapter.down"));
      for (auto& row : a)
        for (auto& v2 : row) v2 = std::max(0.0, v2);
      a = mm(a, P(r + "adapter.up"));
      for (std::size_t i = 0; i < f.size(); ++i)
        for (std::size_t j = 0; j < s.dim; ++j) f[i][j] += s.adapter_scale * a[i][j];
    }
    x = layer_norm(plus(x, f), P(p + "ffn_ln.gamma"), P(p + "ffn_ln.beta"), s.eps);
  }
  return x;
}

inline std::vector<double> mean_pool(const Mat& h) {
  std::vector<double> out(h[0].size(), 0.0);
  for (const auto& row : h)
    for (std::size_t j = 0; j < row.size(); ++j) out[j] += row[j] / h.size();
  return out;
}

}  // namespace oracle
