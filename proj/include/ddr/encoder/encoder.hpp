#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ddr/numerics/autograd.hpp"
#include "ddr/numerics/param_set.hpp"
#include "ddr/numerics/rng.hpp"
#include "ddr/numerics/tensor.hpp"

namespace ddr {

/// Reserved ids shared by every vocabulary.
namespace special_tokens {
inline constexpr std::int32_t kPad = 0;
inline constexpr std::int32_t kUnk = 1;
inline constexpr std::int32_t kCls = 2;
inline constexpr std::int32_t kSep = 3;
inline constexpr std::int32_t kMask = 4;
inline constexpr std::int32_t kCount = 5;
}  // namespace special_tokens

enum class SimilarityKind { inner_product, cosine };

std::string to_string(SimilarityKind kind);
SimilarityKind parse_similarity(std::string_view name);

struct EncoderConfig {
  std::size_t num_layers = 2;
  std::size_t hidden_dim = 64;
  std::size_t num_heads = 4;
  std::size_t ffn_dim = 128;
  std::size_t vocab_size = 2000;
  std::size_t max_len = 64;
  SimilarityKind similarity = SimilarityKind::inner_product;
  // Whether [CLS]/[SEP] take part in mean pooling.
  bool pool_include_specials = true;
  double layer_norm_eps = 1e-12;
  double init_std = 0.02;

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

/// Throws std::invalid_argument naming the offending field.
void validate(const EncoderConfig& cfg);

struct TokenSequence {
  std::vector<std::int32_t> ids;
  // 1 for real tokens, 0 for padding. Empty means all real.
  std::vector<std::uint8_t> mask;

  std::size_t real_length() const;
};

/// Runtime shape of the insertable relevance module, as seen by the
/// forward pass. A zero rank or bottleneck disables that part.
struct RemHooks {
  std::size_t lora_rank = 0;
  double lora_scale = 1.0;
  std::size_t adapter_bottleneck = 0;
  double adapter_scale = 1.0;
};

struct EncoderBackbone {
  EncoderConfig config;
  ParamSet<float> params;  // "dam." namespace, MLM head included
};

namespace param_names {
inline constexpr std::string_view kDamPrefix = "dam.";
inline constexpr std::string_view kMlmHeadPrefix = "dam.mlm_head.";
inline constexpr std::string_view kRemPrefix = "rem.";

std::string layer(std::size_t index, std::string_view leaf);
std::string rem_layer(std::size_t index, std::string_view leaf);
}  // namespace param_names

EncoderBackbone init_backbone(const EncoderConfig& cfg, Rng& rng);

/// Real tokens of several sequences packed row-wise; padding never enters
/// the forward pass.
struct PackedBatch {
  std::vector<std::int32_t> tokens;
  std::vector<std::int32_t> positions;
  std::vector<Segment> segments;
  std::vector<std::uint8_t> pool_mask;
  std::size_t size() const { return segments.size(); }
};

/// Errors: length above max_len, no real token, id out of vocabulary, or a
/// mask whose length differs from ids.
PackedBatch pack(const EncoderConfig& cfg, std::span<const TokenSequence> seqs);

/// Final-layer hidden states, one row per packed token.
template <typename T>
Var<T> encoder_hidden(Graph<T>& g, const EncoderConfig& cfg, const RemHooks* rem,
                      const PackedBatch& batch);

/// Mean pooled sequence embeddings, one row per sequence.
template <typename T>
Var<T> pool(const EncoderConfig& cfg, Var<T> hidden, const PackedBatch& batch);

template <typename T>
Var<T> embed(Graph<T>& g, const EncoderConfig& cfg, const RemHooks* rem, const PackedBatch& batch) {
  return pool(cfg, encoder_hidden(g, cfg, rem, batch), batch);
}

/// Vocabulary logits for the selected rows of `hidden`; the output
/// projection is tied to the token embedding table.
template <typename T>
Var<T> mlm_logits(Graph<T>& g, const EncoderConfig& cfg, Var<T> hidden, std::span<const std::int32_t> rows);

/// Inference over many sequences; rows of the result follow `seqs`.
Tensor<float> encode_batch(const EncoderConfig& cfg, const ParamSet<float>& params, const RemHooks* rem,
                           std::span<const TokenSequence> seqs, std::size_t batch_size = 64);

std::vector<float> encode(const EncoderBackbone& backbone, const TokenSequence& seq);

/// Inner product, or cosine in [-1, 1]. Cosine with a zero vector throws
/// std::domain_error.
double similarity(std::span<const float> q, std::span<const float> d, SimilarityKind kind);

struct ParamCounts {
  std::size_t backbone_total = 0;
  std::size_t rem_trainable = 0;
  double trainable_fraction = 0.0;
  double inference_overhead_fraction = 0.0;
};

/// Fractions are relative to the backbone with embeddings; the MLM head is
/// not counted. Low-rank deltas merge into attention weights, so only the
/// adapters add inference parameters.
ParamCounts count_parameters(const EncoderConfig& cfg, const RemHooks& rem);

}  // namespace ddr
