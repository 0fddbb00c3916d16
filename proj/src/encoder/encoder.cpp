#include "ddr/encoder/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ddr {

std::string to_string(SimilarityKind kind) {
  return kind == SimilarityKind::cosine ? "cosine" : "inner_product";
}

SimilarityKind parse_similarity(std::string_view name) {
  if (name == "inner_product" || name == "dot") return SimilarityKind::inner_product;
  if (name == "cosine") return SimilarityKind::cosine;
  throw std::invalid_argument("unknown similarity kind: " + std::string(name));
}

void validate(const EncoderConfig& cfg) {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("encoder config: ") + what);
  };
  require(cfg.num_layers >= 1, "num_layers must be >= 1");
  require(cfg.hidden_dim >= 1, "hidden_dim must be >= 1");
  require(cfg.num_heads >= 1, "num_heads must be >= 1");
  require(cfg.hidden_dim % cfg.num_heads == 0, "hidden_dim must be divisible by num_heads");
  require(cfg.ffn_dim >= 1, "ffn_dim must be >= 1");
  require(cfg.vocab_size > static_cast<std::size_t>(special_tokens::kCount), "vocab_size must exceed the reserved ids");
  require(cfg.max_len >= 1, "max_len must be >= 1");
  require(cfg.layer_norm_eps > 0.0, "layer_norm_eps must be positive");
}

std::size_t TokenSequence::real_length() const {
  if (mask.empty()) return ids.size();
  return static_cast<std::size_t>(std::count_if(mask.begin(), mask.end(), [](std::uint8_t m) { return m != 0; }));
}

namespace param_names {
std::string layer(std::size_t index, std::string_view leaf) {
  return "dam.layer." + std::to_string(index) + "." + std::string(leaf);
}
std::string rem_layer(std::size_t index, std::string_view leaf) {
  return "rem.layer." + std::to_string(index) + "." + std::string(leaf);
}
}  // namespace param_names

namespace {

Tensor<float> normal_tensor(Shape shape, Rng& rng, double sd) {
  Tensor<float> t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<float>(rng.normal() * sd);
  return t;
}

void add_layer_norm(ParamSet<float>& ps, const std::string& prefix, std::size_t d) {
  ps.add(prefix + ".gamma", Tensor<float>(Shape{d}, 1.0f));
  ps.add(prefix + ".beta", Tensor<float>(Shape{d}, 0.0f));
}

}  // namespace

EncoderBackbone init_backbone(const EncoderConfig& cfg, Rng& rng) {
  validate(cfg);
  const std::size_t d = cfg.hidden_dim, f = cfg.ffn_dim;
  const double sd = cfg.init_std;
  EncoderBackbone bb{cfg, {}};
  auto& ps = bb.params;
  ps.add("dam.embeddings.token", normal_tensor(Shape{cfg.vocab_size, d}, rng, sd));
  ps.add("dam.embeddings.position", normal_tensor(Shape{cfg.max_len, d}, rng, sd));
  add_layer_norm(ps, "dam.embeddings.ln", d);
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    using param_names::layer;
    for (const char* m : {"q", "k", "v", "o"}) {
      ps.add(layer(l, std::string("attn.w") + m), normal_tensor(Shape{d, d}, rng, sd));
      ps.add(layer(l, std::string("attn.b") + m), Tensor<float>(Shape{d}));
    }
    add_layer_norm(ps, layer(l, "attn_ln"), d);
    ps.add(layer(l, "ffn.w1"), normal_tensor(Shape{d, f}, rng, sd));
    ps.add(layer(l, "ffn.b1"), Tensor<float>(Shape{f}));
    ps.add(layer(l, "ffn.w2"), normal_tensor(Shape{f, d}, rng, sd));
    ps.add(layer(l, "ffn.b2"), Tensor<float>(Shape{d}));
    add_layer_norm(ps, layer(l, "ffn_ln"), d);
  }
  ps.add("dam.mlm_head.dense.w", normal_tensor(Shape{d, d}, rng, sd));
  ps.add("dam.mlm_head.dense.b", Tensor<float>(Shape{d}));
  add_layer_norm(ps, "dam.mlm_head.ln", d);
  ps.add("dam.mlm_head.bias", Tensor<float>(Shape{cfg.vocab_size}));
  return bb;
}

PackedBatch pack(const EncoderConfig& cfg, std::span<const TokenSequence> seqs) {
  PackedBatch out;
  for (std::size_t s = 0; s < seqs.size(); ++s) {
    const TokenSequence& seq = seqs[s];
    if (!seq.mask.empty() && seq.mask.size() != seq.ids.size()) {
      throw std::invalid_argument("sequence " + std::to_string(s) + ": mask length " +
                                  std::to_string(seq.mask.size()) + " != ids length " +
                                  std::to_string(seq.ids.size()));
    }
    if (seq.ids.size() > cfg.max_len) {
      throw std::length_error("sequence " + std::to_string(s) + " has length " + std::to_string(seq.ids.size()) +
                              " > max_len " + std::to_string(cfg.max_len));
    }
    const std::size_t offset = out.tokens.size();
    std::int32_t pos = 0;
    for (std::size_t i = 0; i < seq.ids.size(); ++i) {
      if (!seq.mask.empty() && seq.mask[i] == 0) continue;
      const std::int32_t id = seq.ids[i];
      if (id < 0 || static_cast<std::size_t>(id) >= cfg.vocab_size) {
        throw std::out_of_range("sequence " + std::to_string(s) + ": token id " + std::to_string(id) +
                                " outside vocabulary of " + std::to_string(cfg.vocab_size));
      }
      out.tokens.push_back(id);
      out.positions.push_back(pos++);
      const bool special = id == special_tokens::kCls || id == special_tokens::kSep;
      out.pool_mask.push_back(cfg.pool_include_specials || !special ? 1 : 0);
    }
    const std::size_t len = out.tokens.size() - offset;
    if (len == 0) throw std::invalid_argument("sequence " + std::to_string(s) + " has no real tokens");
    // A sequence made only of specials still pools over them.
    if (std::none_of(out.pool_mask.begin() + offset, out.pool_mask.end(), [](std::uint8_t m) { return m; })) {
      std::fill(out.pool_mask.begin() + offset, out.pool_mask.end(), 1);
    }
    out.segments.push_back({offset, len});
  }
  return out;
}

namespace {

template <typename T>
Var<T> linear(Graph<T>& g, Var<T> x, const std::string& w, const std::string& b) {
  return ops::add_bias(ops::matmul(x, g.param(w)), g.param(b));
}

template <typename T>
Var<T> norm(Graph<T>& g, const EncoderConfig& cfg, Var<T> x, const std::string& prefix) {
  return ops::layer_norm(x, g.param(prefix + ".gamma"), g.param(prefix + ".beta"),
                         static_cast<T>(cfg.layer_norm_eps));
}

template <typename T>
Var<T> projection(Graph<T>& g, Var<T> x, std::size_t l, char m, const RemHooks* rem) {
  using param_names::layer;
  const std::string mat(1, m);
  Var<T> y = linear(g, x, layer(l, "attn.w" + mat), layer(l, "attn.b" + mat));
  if (rem && rem->lora_rank > 0 && (m == 'q' || m == 'v')) {
    const std::string base = "lora." + mat;
    Var<T> delta = ops::matmul(ops::matmul(x, g.param(param_names::rem_layer(l, base + ".a"))),
                               g.param(param_names::rem_layer(l, base + ".b")));
    y = ops::add(y, ops::scale(delta, static_cast<T>(rem->lora_scale)));
  }
  return y;
}

}  // namespace

template <typename T>
Var<T> encoder_hidden(Graph<T>& g, const EncoderConfig& cfg, const RemHooks* rem, const PackedBatch& batch) {
  using param_names::layer;
  Var<T> x = ops::add(ops::gather_rows(g.param("dam.embeddings.token"), std::span<const std::int32_t>(batch.tokens)),
                      ops::gather_rows(g.param("dam.embeddings.position"),
                                       std::span<const std::int32_t>(batch.positions)));
  x = norm(g, cfg, x, "dam.embeddings.ln");
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    Var<T> q = projection(g, x, l, 'q', rem);
    Var<T> k = projection(g, x, l, 'k', rem);
    Var<T> v = projection(g, x, l, 'v', rem);
    Var<T> a = ops::attention(q, k, v, std::span<const Segment>(batch.segments), cfg.num_heads);
    x = norm(g, cfg, ops::add(x, linear(g, a, layer(l, "attn.wo"), layer(l, "attn.bo"))), layer(l, "attn_ln"));

    Var<T> f = linear(g, ops::gelu(linear(g, x, layer(l, "ffn.w1"), layer(l, "ffn.b1"))), layer(l, "ffn.w2"),
                      layer(l, "ffn.b2"));
    if (rem && rem->adapter_bottleneck > 0) {
      Var<T> h = ops::relu(ops::matmul(x, g.param(param_names::rem_layer(l, "adapter.down"))));
      Var<T> pa = ops::matmul(h, g.param(param_names::rem_layer(l, "adapter.up")));
      f = ops::add(f, rem->adapter_scale == 1.0 ? pa : ops::scale(pa, static_cast<T>(rem->adapter_scale)));
    }
    x = norm(g, cfg, ops::add(x, f), layer(l, "ffn_ln"));
  }
  return x;
}

template <typename T>
Var<T> pool(const EncoderConfig&, Var<T> hidden, const PackedBatch& batch) {
  return ops::segment_mean(hidden, std::span<const Segment>(batch.segments),
                           std::span<const std::uint8_t>(batch.pool_mask));
}

template <typename T>
Var<T> mlm_logits(Graph<T>& g, const EncoderConfig& cfg, Var<T> hidden, std::span<const std::int32_t> rows) {
  Var<T> h = ops::gather_rows(hidden, rows);
  h = ops::gelu(linear(g, h, std::string("dam.mlm_head.dense.w"), std::string("dam.mlm_head.dense.b")));
  h = norm(g, cfg, h, "dam.mlm_head.ln");
  return ops::add_bias(ops::matmul_nt(h, g.param("dam.embeddings.token")), g.param("dam.mlm_head.bias"));
}

#define DDR_INSTANTIATE_ENCODER(T)                                                                      \
  template Var<T> encoder_hidden<T>(Graph<T>&, const EncoderConfig&, const RemHooks*, const PackedBatch&); \
  template Var<T> pool<T>(const EncoderConfig&, Var<T>, const PackedBatch&);                            \
  template Var<T> mlm_logits<T>(Graph<T>&, const EncoderConfig&, Var<T>, std::span<const std::int32_t>);

DDR_INSTANTIATE_ENCODER(float)
DDR_INSTANTIATE_ENCODER(double)

Tensor<float> encode_batch(const EncoderConfig& cfg, const ParamSet<float>& params, const RemHooks* rem,
                           std::span<const TokenSequence> seqs, std::size_t batch_size) {
  if (seqs.empty()) throw std::invalid_argument("encode_batch: no sequences");
  if (batch_size == 0) batch_size = 1;
  Tensor<float> out(Shape{seqs.size(), cfg.hidden_dim});
  for (std::size_t start = 0; start < seqs.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, seqs.size() - start);
    const PackedBatch batch = pack(cfg, seqs.subspan(start, n));
    Graph<float> g(&params, /*track_gradients=*/false);
    const Tensor<float>& emb = embed(g, cfg, rem, batch).value();
    std::copy(emb.values().begin(), emb.values().end(), out.data() + start * cfg.hidden_dim);
  }
  return out;
}

std::vector<float> encode(const EncoderBackbone& backbone, const TokenSequence& seq) {
  const Tensor<float> e = encode_batch(backbone.config, backbone.params, nullptr, std::span(&seq, 1));
  return {e.values().begin(), e.values().end()};
}

double similarity(std::span<const float> q, std::span<const float> d, SimilarityKind kind) {
  if (q.size() != d.size()) {
    throw std::invalid_argument("similarity: dimension mismatch " + std::to_string(q.size()) + " vs " +
                                std::to_string(d.size()));
  }
  double dot = 0.0, qq = 0.0, dd = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    dot += static_cast<double>(q[i]) * d[i];
    qq += static_cast<double>(q[i]) * q[i];
    dd += static_cast<double>(d[i]) * d[i];
  }
  if (kind == SimilarityKind::inner_product) return dot;
  if (qq == 0.0 || dd == 0.0) throw std::domain_error("cosine similarity with a zero vector");
  return std::clamp(dot / (std::sqrt(qq) * std::sqrt(dd)), -1.0, 1.0);
}

ParamCounts count_parameters(const EncoderConfig& cfg, const RemHooks& rem) {
  const std::size_t d = cfg.hidden_dim, f = cfg.ffn_dim, L = cfg.num_layers;
  const std::size_t embeddings = cfg.vocab_size * d + cfg.max_len * d + 2 * d;
  const std::size_t per_layer = 4 * (d * d + d) + 2 * d + (d * f + f) + (f * d + d) + 2 * d;
  ParamCounts c;
  c.backbone_total = embeddings + L * per_layer;
  const std::size_t lora = L * 2 * (2 * d * rem.lora_rank);
  const std::size_t adapter = L * 2 * d * rem.adapter_bottleneck;
  c.rem_trainable = lora + adapter;
  c.trainable_fraction = static_cast<double>(c.rem_trainable) / static_cast<double>(c.backbone_total);
  c.inference_overhead_fraction = static_cast<double>(adapter) / static_cast<double>(c.backbone_total);
  return c;
}

}  // namespace ddr
