#include "ddr/rem/rem.hpp"

#include <cmath>
#include <stdexcept>

#include "ddr/numerics/kernels.hpp"

namespace ddr {

void validate(const RemConfig& cfg) {
  if (cfg.lora_alpha < 0.0) throw std::invalid_argument("rem config: lora_alpha must be >= 0");
  if (!std::isfinite(cfg.adapter_scale)) throw std::invalid_argument("rem config: adapter_scale must be finite");
}

RemModule init_rem(const RemConfig& cfg, std::size_t num_layers, std::size_t hidden_dim, Rng& rng) {
  validate(cfg);
  if (num_layers == 0 || hidden_dim == 0) throw std::invalid_argument("init_rem: empty backbone dimensions");
  RemModule m{cfg, num_layers, hidden_dim, {}};
  const double sd = std::sqrt(2.0 / static_cast<double>(hidden_dim));
  auto kaiming = [&](std::size_t rows, std::size_t cols) {
    Tensor<float> t(Shape{rows, cols});
    for (auto& v : t.values()) v = static_cast<float>(rng.normal() * sd);
    return t;
  };
  for (std::size_t l = 0; l < num_layers; ++l) {
    using param_names::rem_layer;
    if (cfg.lora_rank > 0) {
      for (const char* mat : {"q", "v"}) {
        const std::string base = std::string("lora.") + mat;
        m.params.add(rem_layer(l, base + ".a"), kaiming(hidden_dim, cfg.lora_rank));
        m.params.add(rem_layer(l, base + ".b"), Tensor<float>(Shape{cfg.lora_rank, hidden_dim}));
      }
    }
    if (cfg.adapter_bottleneck > 0) {
      m.params.add(rem_layer(l, "adapter.down"), kaiming(hidden_dim, cfg.adapter_bottleneck));
      m.params.add(rem_layer(l, "adapter.up"), Tensor<float>(Shape{cfg.adapter_bottleneck, hidden_dim}));
    }
  }
  return m;
}

AssembledModel assemble(const EncoderBackbone& backbone) {
  return AssembledModel{backbone.config, std::nullopt, backbone.params};
}

AssembledModel insert_rem(const EncoderBackbone& backbone, const RemModule& rem) {
  const auto& cfg = backbone.config;
  if (rem.num_layers != cfg.num_layers || rem.hidden_dim != cfg.hidden_dim) {
    throw std::invalid_argument("insert_rem: module built for " + std::to_string(rem.num_layers) + " layers x " +
                                std::to_string(rem.hidden_dim) + " but backbone has " +
                                std::to_string(cfg.num_layers) + " x " + std::to_string(cfg.hidden_dim));
  }
  AssembledModel m{cfg, rem.config, backbone.params};
  m.params.merge(rem.params);
  return m;
}

AssembledModel merge_lora(const AssembledModel& model) {
  if (!model.rem || model.rem->lora_rank == 0) throw std::invalid_argument("merge_lora: model has no low-rank delta");
  const std::size_t d = model.config.hidden_dim, r = model.rem->lora_rank;
  const float s = static_cast<float>(model.rem->lora_scale());
  AssembledModel out{model.config, model.rem, {}};
  out.rem->lora_rank = 0;
  out.rem->lora_alpha = 0.0;
  for (const auto& [name, entry] : model.params) {
    if (name.find(".lora.") == std::string::npos) out.params.add(name, entry.value, entry.trainable);
  }
  for (std::size_t l = 0; l < model.config.num_layers; ++l) {
    for (const char* mat : {"q", "v"}) {
      const std::string base = std::string("lora.") + mat;
      const Tensor<float>& a = model.params.get(param_names::rem_layer(l, base + ".a"));
      const Tensor<float>& b = model.params.get(param_names::rem_layer(l, base + ".b"));
      Tensor<float> delta(Shape{d, d});
      kernels::gemm(false, false, d, d, r, a.data(), b.data(), delta.data(), false);
      Tensor<float>& w = out.params.get_mut(param_names::layer(l, std::string("attn.w") + mat));
      for (std::size_t i = 0; i < w.numel(); ++i) {
        if (delta[i] != 0.0f) w[i] += s * delta[i];
      }
    }
  }
  return out;
}

EncoderBackbone extract_backbone(const AssembledModel& model) {
  return EncoderBackbone{model.config, model.params.filter_prefix(param_names::kDamPrefix)};
}

RemModule extract_rem(const AssembledModel& model) {
  if (!model.rem) throw std::invalid_argument("extract_rem: model has no REM");
  return RemModule{*model.rem, model.config.num_layers, model.config.hidden_dim,
                   model.params.filter_prefix(param_names::kRemPrefix)};
}

std::string to_string(Phase phase) {
  switch (phase) {
    case Phase::dam_adaptation: return "dam_adaptation";
    case Phase::rem_finetuning: return "rem_finetuning";
    case Phase::full_finetuning: return "full_finetuning";
  }
  return "?";
}

Phase parse_phase(std::string_view name) {
  if (name == "dam_adaptation") return Phase::dam_adaptation;
  if (name == "rem_finetuning") return Phase::rem_finetuning;
  if (name == "full_finetuning") return Phase::full_finetuning;
  throw std::invalid_argument("unknown training phase: " + std::string(name));
}

Partition partition_parameters(const AssembledModel& model, Phase phase) {
  Partition p;
  for (const auto& [name, _] : model.params) {
    const std::string_view n(name);
    const bool is_rem = n.starts_with(param_names::kRemPrefix);
    bool train = phase == Phase::rem_finetuning ? is_rem : !is_rem;
    if (phase == Phase::full_finetuning && n.starts_with(param_names::kMlmHeadPrefix)) train = false;
    (train ? p.trainable : p.frozen).push_back(name);
  }
  return p;
}

void apply_partition(AssembledModel& model, Phase phase) {
  const Partition p = partition_parameters(model, phase);
  for (const auto& n : p.trainable) model.params.set_trainable(n, true);
  for (const auto& n : p.frozen) model.params.set_trainable(n, false);
}

Tensor<float> encode_batch(const AssembledModel& model, std::span<const TokenSequence> seqs, std::size_t batch_size) {
  RemHooks hooks;
  return encode_batch(model.config, model.params, model.hooks_or_null(hooks), seqs, batch_size);
}

std::vector<float> encode(const AssembledModel& model, const TokenSequence& seq) {
  const Tensor<float> e = encode_batch(model, std::span(&seq, 1));
  return {e.values().begin(), e.values().end()};
}

}  // namespace ddr
