#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ddr/encoder/encoder.hpp"

namespace ddr {

struct RemConfig {
  std::size_t lora_rank = 16;
  std::size_t adapter_bottleneck = 16;
  // Scale of the low-rank delta is alpha / rank; 0 means alpha = rank.
  double lora_alpha = 0.0;
  double adapter_scale = 1.0;

  double lora_scale() const {
    return lora_rank == 0 ? 0.0 : (lora_alpha > 0.0 ? lora_alpha : static_cast<double>(lora_rank)) / lora_rank;
  }
  RemHooks hooks() const { return {lora_rank, lora_scale(), adapter_bottleneck, adapter_scale}; }

  friend bool operator==(const RemConfig&, const RemConfig&) = default;
};

void validate(const RemConfig& cfg);

struct RemModule {
  RemConfig config;
  std::size_t num_layers = 0;
  std::size_t hidden_dim = 0;
  ParamSet<float> params;  // "rem." namespace
};

/// Low-rank A and adapter down get Kaiming-normal values (variance 2/d);
/// B and adapter up start at zero so insertion preserves the backbone.
RemModule init_rem(const RemConfig& cfg, std::size_t num_layers, std::size_t hidden_dim, Rng& rng);

/// A backbone with an optional REM. After merge_lora the low-rank deltas
/// live inside the attention weights and only adapters run separately.
struct AssembledModel {
  EncoderConfig config;
  std::optional<RemConfig> rem;
  ParamSet<float> params;

  RemHooks hooks() const { return rem ? rem->hooks() : RemHooks{}; }
  const RemHooks* hooks_or_null(RemHooks& storage) const {
    if (!rem) return nullptr;
    storage = hooks();
    return &storage;
  }
};

AssembledModel assemble(const EncoderBackbone& backbone);

/// Errors on a layer-count or width mismatch.
AssembledModel insert_rem(const EncoderBackbone& backbone, const RemModule& rem);

/// W' = W + s * A * B on the targeted attention matrices. The result has
/// no low-rank parameters left; adapters are kept.
AssembledModel merge_lora(const AssembledModel& model);

EncoderBackbone extract_backbone(const AssembledModel& model);
RemModule extract_rem(const AssembledModel& model);

enum class Phase { dam_adaptation, rem_finetuning, full_finetuning };

std::string to_string(Phase phase);
/// Throws std::invalid_argument for an unknown phase name.
Phase parse_phase(std::string_view name);

struct Partition {
  std::vector<std::string> trainable;
  std::vector<std::string> frozen;
};

/// dam_adaptation: backbone and MLM head train, REM frozen.
/// rem_finetuning: only the REM namespace trains.
/// full_finetuning: backbone without the MLM head trains; used by the
/// non-disentangled baselines.
Partition partition_parameters(const AssembledModel& model, Phase phase);

/// Sets the trainable flags of `model` according to the partition.
void apply_partition(AssembledModel& model, Phase phase);

Tensor<float> encode_batch(const AssembledModel& model, std::span<const TokenSequence> seqs,
                           std::size_t batch_size = 64);
std::vector<float> encode(const AssembledModel& model, const TokenSequence& seq);

}  // namespace ddr
