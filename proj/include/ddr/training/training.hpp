#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ddr/corpus/corpus.hpp"
#include "ddr/numerics/optimizer.hpp"
#include "ddr/rem/rem.hpp"

namespace ddr {

struct MaskingPolicy {
  double select_prob = 0.15;
  double mask_frac = 0.80;
  double random_frac = 0.10;
  double keep_frac = 0.10;
};

void validate(const MaskingPolicy& policy);

struct MaskedSequence {
  TokenSequence seq;
  std::vector<std::size_t> positions;  // indices into seq.ids
  std::vector<std::int32_t> labels;    // original ids at `positions`
};

/// Padding and [CLS]/[SEP]/[MASK]/[PAD]/[UNK] are never selected. Random
/// replacements are drawn from the non-reserved ids below `vocab_size`.
MaskedSequence apply_masking(const TokenSequence& seq, const MaskingPolicy& policy, std::size_t vocab_size, Rng& rng);

/// Mean cross-entropy over all labeled positions. Throws
/// std::invalid_argument when nothing is labeled so the caller can resample.
template <typename T>
Var<T> mlm_loss(Graph<T>& g, const EncoderConfig& cfg, const RemHooks* rem, std::span<const MaskedSequence> batch);

/// Temperature applied to cosine similarities in contrastive training.
inline constexpr double kCosineScale = 20.0;

/// Row i of `queries` must score `docs` row `positives[i]` above every
/// other row of `docs` (in-batch positives and all hard negatives).
template <typename T>
Var<T> contrastive_loss(Var<T> queries, Var<T> docs, std::span<const std::int32_t> positives, SimilarityKind kind);

/// Mean over triples of ((s+ - s-) - (t+ - t-))^2.
template <typename T>
Var<T> margin_mse_loss(Var<T> student_pos, Var<T> student_neg, std::span<const double> teacher_pos,
                       std::span<const double> teacher_neg);

/// Query-document scores under `kind`, cosine scaled by kCosineScale.
template <typename T>
Var<T> score_pairs(Var<T> queries, Var<T> docs, SimilarityKind kind);

enum class LossKind { contrastive, margin_mse };
std::string to_string(LossKind kind);
LossKind parse_loss(std::string_view name);

struct TrainingConfig {
  Phase phase = Phase::dam_adaptation;
  double lr = 5e-5;
  double weight_decay = 0.01;
  std::size_t warmup_steps = 0;
  double max_grad_norm = 1.0;  // 0 disables clipping
  std::size_t steps = 100;
  std::uint64_t seed = 0;
  // Masked-LM batches: documents per step.
  std::size_t docs_per_batch = 32;
  MaskingPolicy masking;
  // Supervised batches.
  std::size_t queries_per_batch = 128;
  std::size_t hard_negatives_per_query = 3;
  LossKind loss = LossKind::contrastive;
  double teacher_scale = 10.0;
};

void validate(const TrainingConfig& cfg);

struct CurvePoint {
  std::size_t step = 0;
  double value = 0.0;
};

using ModelCallback = std::function<void(std::size_t step, const AssembledModel& model)>;

struct DamAdaptationOptions {
  std::size_t eval_every = 0;  // 0: no callbacks
  ModelCallback on_eval;       // also called at step 0 and after the last step
};

struct AdaptResult {
  AssembledModel model;
  std::vector<CurvePoint> loss_curve;
};

/// Masked-LM training of the backbone; any REM in `init` is frozen.
/// Throws std::invalid_argument on an empty corpus.
AdaptResult adapt_dam(const AssembledModel& init, const std::vector<TokenSequence>& corpus,
                      const TrainingConfig& cfg, const DamAdaptationOptions& options = {});

/// Labeled training data; texts are kept for the teacher oracle.
struct SupervisedData {
  std::vector<TokenSequence> queries;
  std::vector<TokenSequence> docs;
  std::vector<std::string> query_text;
  std::vector<std::string> doc_text;
  std::vector<std::size_t> positive;                // per query, index into docs
  std::vector<std::vector<std::size_t>> negatives;  // per query, ranked

  std::size_t size() const { return queries.size(); }
};

/// Uses the first relevant document of each query and its mined hard
/// negatives.
SupervisedData make_supervised_data(const SourceData& source, const Vocabulary& vocab, std::size_t max_len);

struct TripleBatch {
  std::vector<TokenSequence> queries;
  std::vector<TokenSequence> docs;       // positives first, then negatives
  std::vector<std::int32_t> positives;   // per query, row in docs
  std::vector<std::int32_t> negatives;   // per query, row of its first hard negative
  std::vector<double> teacher_pos;
  std::vector<double> teacher_neg;
};

/// Draws one batch; query order follows a per-epoch shuffle held in `order`.
TripleBatch sample_triples(const SupervisedData& data, const TrainingConfig& cfg, std::vector<std::size_t>& order,
                           std::size_t& cursor, Rng& rng);

struct SupervisedResult {
  AssembledModel model;
  std::vector<CurvePoint> loss_curve;
};

/// Trains only the REM namespace; the backbone is frozen.
SupervisedResult train_rem(const AssembledModel& init, const SupervisedData& data, const TrainingConfig& cfg);

/// Trains the whole backbone without any REM (the non-disentangled
/// baseline).
SupervisedResult full_finetune(const AssembledModel& init, const SupervisedData& data, const TrainingConfig& cfg);

/// Number of supervised training runs started in this process.
std::size_t supervised_invocations();

enum class InitMode { sequential, base };
InitMode parse_init_mode(std::string_view name);

/// Target-domain starting point: the source DAM or the base backbone.
EncoderBackbone sequential_init(const EncoderBackbone& source_dam, const EncoderBackbone& base, InitMode mode);

struct DisentangledResult {
  EncoderBackbone source_dam;
  RemModule rem;
  std::vector<CurvePoint> dam_curve;
  std::vector<CurvePoint> rem_curve;
};

/// Step 1 adapts the DAM on the source corpus (skipped when `adapt_dam_first`
/// is false); step 2 trains a fresh REM on the frozen DAM.
DisentangledResult disentangled_finetune(const EncoderBackbone& base, const std::vector<TokenSequence>& source_corpus,
                                         const SupervisedData& data, const TrainingConfig& dam_cfg,
                                         const TrainingConfig& rem_cfg, const RemConfig& rem_config,
                                         bool adapt_dam_first);

}  // namespace ddr
