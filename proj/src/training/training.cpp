#include "ddr/training/training.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <unordered_map>

namespace ddr {

void validate(const MaskingPolicy& p) {
  if (!(p.select_prob >= 0.0 && p.select_prob <= 1.0)) throw std::invalid_argument("masking: select_prob outside [0, 1]");
  if (p.mask_frac < 0.0 || p.random_frac < 0.0 || p.keep_frac < 0.0) {
    throw std::invalid_argument("masking: negative fraction");
  }
  if (std::abs(p.mask_frac + p.random_frac + p.keep_frac - 1.0) > 1e-9) {
    throw std::invalid_argument("masking: mask/random/keep fractions must sum to 1");
  }
}

MaskedSequence apply_masking(const TokenSequence& seq, const MaskingPolicy& policy, std::size_t vocab_size, Rng& rng) {
  const auto first_word = static_cast<std::size_t>(special_tokens::kCount);
  if (vocab_size <= first_word) throw std::invalid_argument("apply_masking: vocabulary has no ordinary tokens");
  MaskedSequence out{seq, {}, {}};
  for (std::size_t i = 0; i < seq.ids.size(); ++i) {
    if (!seq.mask.empty() && seq.mask[i] == 0) continue;
    if (seq.ids[i] < special_tokens::kCount) continue;
    if (!rng.bernoulli(policy.select_prob)) continue;
    out.positions.push_back(i);
    out.labels.push_back(seq.ids[i]);
    const double u = rng.uniform();
    if (u < policy.mask_frac) {
      out.seq.ids[i] = special_tokens::kMask;
    } else if (u < policy.mask_frac + policy.random_frac) {
      out.seq.ids[i] = static_cast<std::int32_t>(first_word + rng.below(vocab_size - first_word));
    }
  }
  return out;
}

template <typename T>
Var<T> mlm_loss(Graph<T>& g, const EncoderConfig& cfg, const RemHooks* rem, std::span<const MaskedSequence> batch) {
  std::vector<TokenSequence> seqs;
  std::vector<std::int32_t> rows, targets;
  std::size_t offset = 0;
  for (const auto& m : batch) {
    seqs.push_back(m.seq);
    // Packed row of each original index; padding is dropped by pack().
    std::vector<std::int32_t> packed(m.seq.ids.size(), -1);
    std::int32_t r = static_cast<std::int32_t>(offset);
    for (std::size_t i = 0; i < m.seq.ids.size(); ++i) {
      if (m.seq.mask.empty() || m.seq.mask[i]) packed[i] = r++;
    }
    for (std::size_t j = 0; j < m.positions.size(); ++j) {
      const std::int32_t row = packed.at(m.positions[j]);
      if (row < 0) throw std::invalid_argument("mlm_loss: label on a padding position");
      rows.push_back(row);
      targets.push_back(m.labels[j]);
    }
    offset = static_cast<std::size_t>(r);
  }
  if (rows.empty()) throw std::invalid_argument("mlm_loss: no labeled positions; resample the masking");
  const PackedBatch packed = pack(cfg, seqs);
  Var<T> hidden = encoder_hidden(g, cfg, rem, packed);
  return ops::cross_entropy_rows(mlm_logits(g, cfg, hidden, rows), targets);
}

template <typename T>
Var<T> score_pairs(Var<T> queries, Var<T> docs, SimilarityKind kind) {
  if (kind == SimilarityKind::inner_product) return ops::matmul_nt(queries, docs);
  return ops::scale(ops::matmul_nt(ops::l2_normalize_rows(queries), ops::l2_normalize_rows(docs)),
                    static_cast<T>(kCosineScale));
}

template <typename T>
Var<T> contrastive_loss(Var<T> queries, Var<T> docs, std::span<const std::int32_t> positives, SimilarityKind kind) {
  if (positives.empty() || queries.value().rows() == 0) throw std::invalid_argument("contrastive_loss: empty batch");
  if (positives.size() != queries.value().rows()) {
    throw std::invalid_argument("contrastive_loss: one positive per query required");
  }
  return ops::cross_entropy_rows(score_pairs(queries, docs, kind), positives);
}

template <typename T>
Var<T> margin_mse_loss(Var<T> student_pos, Var<T> student_neg, std::span<const double> teacher_pos,
                       std::span<const double> teacher_neg) {
  const std::size_t n = student_pos.value().numel();
  if (n == 0) throw std::invalid_argument("margin_mse_loss: empty batch");
  if (student_neg.value().numel() != n || teacher_pos.size() != n || teacher_neg.size() != n) {
    throw std::invalid_argument("margin_mse_loss: missing teacher score (" + std::to_string(teacher_pos.size()) + "/" +
                                std::to_string(teacher_neg.size()) + " for " + std::to_string(n) + " triples)");
  }
  Tensor<T> margin(Shape{n});
  for (std::size_t i = 0; i < n; ++i) margin[i] = static_cast<T>(teacher_pos[i] - teacher_neg[i]);
  return ops::mse(ops::sub(student_pos, student_neg), margin);
}

#define DDR_INSTANTIATE_LOSSES(T)                                                                               \
  template Var<T> mlm_loss<T>(Graph<T>&, const EncoderConfig&, const RemHooks*, std::span<const MaskedSequence>); \
  template Var<T> score_pairs<T>(Var<T>, Var<T>, SimilarityKind);                                               \
  template Var<T> contrastive_loss<T>(Var<T>, Var<T>, std::span<const std::int32_t>, SimilarityKind);           \
  template Var<T> margin_mse_loss<T>(Var<T>, Var<T>, std::span<const double>, std::span<const double>);

DDR_INSTANTIATE_LOSSES(float)
DDR_INSTANTIATE_LOSSES(double)

std::string to_string(LossKind kind) { return kind == LossKind::margin_mse ? "margin_mse" : "contrastive"; }

LossKind parse_loss(std::string_view name) {
  if (name == "contrastive") return LossKind::contrastive;
  if (name == "margin_mse") return LossKind::margin_mse;
  throw std::invalid_argument("unknown loss kind: " + std::string(name));
}

void validate(const TrainingConfig& cfg) {
  if (!(cfg.lr > 0.0)) throw std::invalid_argument("training: lr must be positive");
  if (cfg.docs_per_batch == 0 || cfg.queries_per_batch == 0) {
    throw std::invalid_argument("training: batch sizes must be >= 1");
  }
  if (cfg.loss == LossKind::margin_mse && cfg.hard_negatives_per_query == 0) {
    throw std::invalid_argument("training: margin_mse needs at least one hard negative per query");
  }
  if (cfg.weight_decay < 0.0 || cfg.max_grad_norm < 0.0) {
    throw std::invalid_argument("training: weight_decay and max_grad_norm must be >= 0");
  }
  validate(cfg.masking);
}

namespace {

std::atomic<std::size_t> g_supervised_runs{0};

double clip_gradients(GradMap<float>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& [_, gt] : grads)
    for (float v : gt.values()) sq += static_cast<double>(v) * v;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const float s = static_cast<float>(max_norm / norm);
    for (auto& [_, gt] : grads)
      for (float& v : gt.values()) v *= s;
  }
  return norm;
}

// Runs `cfg.steps` optimizer steps; `build_loss` creates the loss on a
// fresh graph bound to the model's parameters.
template <typename F>
std::vector<CurvePoint> optimize(AssembledModel& model, const TrainingConfig& cfg, F build_loss,
                                 const std::function<void(std::size_t)>& after_step = {}) {
  OptimizerState<float> opt;
  opt.hp.lr = cfg.lr;
  opt.hp.weight_decay = cfg.weight_decay;
  std::vector<CurvePoint> curve;
  curve.reserve(cfg.steps);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    GradMap<float> grads;
    double loss_value = 0.0;
    {
      Graph<float> g(&model.params);
      Var<float> loss = build_loss(g, step);
      loss_value = loss.value()[0];
      if (!std::isfinite(loss_value)) {
        throw std::runtime_error("training diverged: non-finite loss at step " + std::to_string(step));
      }
      g.backward(loss);
      grads = g.param_grads();
    }
    clip_gradients(grads, cfg.max_grad_norm);
    opt.hp.lr = cfg.warmup_steps > 0 && step < cfg.warmup_steps
                    ? cfg.lr * static_cast<double>(step + 1) / static_cast<double>(cfg.warmup_steps)
                    : cfg.lr;
    adamw_step(model.params, grads, opt);
    curve.push_back({step + 1, loss_value});
    if (after_step) after_step(step + 1);
  }
  return curve;
}

}  // namespace

AdaptResult adapt_dam(const AssembledModel& init, const std::vector<TokenSequence>& corpus, const TrainingConfig& cfg,
                      const DamAdaptationOptions& options) {
  validate(cfg);
  if (corpus.empty()) throw std::invalid_argument("adapt_dam: empty corpus");
  AdaptResult result{init, {}};
  AssembledModel& model = result.model;
  apply_partition(model, Phase::dam_adaptation);
  RemHooks storage;
  const RemHooks* hooks = model.hooks_or_null(storage);
  Rng batch_rng = Rng(cfg.seed).fork("mlm-batches");
  Rng mask_rng = Rng(cfg.seed).fork("mlm-masking");
  const std::size_t vocab = model.config.vocab_size;
  auto evaluate = [&](std::size_t step) {
    if (options.on_eval) options.on_eval(step, model);
  };
  evaluate(0);
  result.loss_curve = optimize(
      model, cfg,
      [&](Graph<float>& g, std::size_t) {
        std::vector<std::size_t> picks(cfg.docs_per_batch);
        for (auto& p : picks) p = batch_rng.below(corpus.size());
        // Zero selected tokens is rare; redraw the masks to keep step counts exact.
        std::vector<MaskedSequence> batch;
        for (int attempt = 0;; ++attempt) {
          batch.clear();
          for (std::size_t p : picks) batch.push_back(apply_masking(corpus[p], cfg.masking, vocab, mask_rng));
          if (std::any_of(batch.begin(), batch.end(), [](const MaskedSequence& m) { return !m.labels.empty(); })) break;
          if (attempt == 100) throw std::invalid_argument("adapt_dam: corpus has no maskable tokens");
        }
        return mlm_loss<float>(g, model.config, hooks, batch);
      },
      [&](std::size_t step) {
        if (options.eval_every > 0 && step % options.eval_every == 0 && step != cfg.steps) evaluate(step);
      });
  if (cfg.steps > 0) evaluate(cfg.steps);
  return result;
}

SupervisedData make_supervised_data(const SourceData& source, const Vocabulary& vocab, std::size_t max_len) {
  SupervisedData data;
  std::unordered_map<std::string, std::size_t> doc_index;
  for (std::size_t i = 0; i < source.docs.size(); ++i) {
    doc_index.emplace(source.docs[i].id, i);
    data.docs.push_back(tokenize(source.docs[i].text, vocab, max_len));
    data.doc_text.push_back(source.docs[i].text);
  }
  for (const auto& q : source.queries) {
    auto rel = source.qrels.find(q.id);
    if (rel == source.qrels.end()) continue;
    auto pos = std::find_if(rel->second.begin(), rel->second.end(), [](const auto& kv) { return kv.second > 0; });
    if (pos == rel->second.end()) continue;
    data.queries.push_back(tokenize(q.text, vocab, max_len));
    data.query_text.push_back(q.text);
    data.positive.push_back(doc_index.at(pos->first));
    std::vector<std::size_t> negs;
    auto hn = source.hard_negatives.find(q.id);
    if (hn != source.hard_negatives.end()) {
      for (const auto& id : hn->second) negs.push_back(doc_index.at(id));
    }
    data.negatives.push_back(std::move(negs));
  }
  if (data.queries.empty()) throw std::invalid_argument("make_supervised_data: no judged queries");
  return data;
}

TripleBatch sample_triples(const SupervisedData& data, const TrainingConfig& cfg, std::vector<std::size_t>& order,
                           std::size_t& cursor, Rng& rng) {
  const std::size_t n = data.size();
  const std::size_t q = std::min(cfg.queries_per_batch, n);
  if (order.size() != n) {
    order.resize(n);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(std::span(order));
    cursor = 0;
  }
  if (cursor + q > n) {
    rng.shuffle(std::span(order));
    cursor = 0;
  }
  TripleBatch b;
  std::vector<std::size_t> picked(order.begin() + static_cast<std::ptrdiff_t>(cursor),
                                  order.begin() + static_cast<std::ptrdiff_t>(cursor + q));
  cursor += q;
  std::vector<std::size_t> batch_pos;
  for (std::size_t qi : picked) {
    b.queries.push_back(data.queries[qi]);
    b.positives.push_back(static_cast<std::int32_t>(b.docs.size()));
    b.docs.push_back(data.docs[data.positive[qi]]);
    batch_pos.push_back(data.positive[qi]);
  }
  const auto in_batch = [&](std::size_t d) { return std::find(batch_pos.begin(), batch_pos.end(), d) != batch_pos.end(); };
  for (std::size_t i = 0; i < picked.size(); ++i) {
    const std::size_t qi = picked[i];
    std::vector<std::size_t> pool;
    for (std::size_t d : data.negatives[qi])
      if (!in_batch(d)) pool.push_back(d);
    for (std::size_t h = 0; h < cfg.hard_negatives_per_query; ++h) {
      std::size_t d;
      if (!pool.empty()) {
        const std::size_t slot = rng.below(pool.size());
        d = pool[slot];
        pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(slot));
      } else {
        do {
          d = rng.below(data.docs.size());
        } while (data.docs.size() > batch_pos.size() && in_batch(d));
      }
      if (h == 0) {
        b.negatives.push_back(static_cast<std::int32_t>(b.docs.size()));
        b.teacher_pos.push_back(teacher_score(data.query_text[qi], data.doc_text[data.positive[qi]]));
        b.teacher_neg.push_back(teacher_score(data.query_text[qi], data.doc_text[d]));
      }
      b.docs.push_back(data.docs[d]);
    }
  }
  return b;
}

namespace {

SupervisedResult supervised(const AssembledModel& init, const SupervisedData& data, const TrainingConfig& cfg,
                            Phase phase) {
  validate(cfg);
  if (data.size() == 0) throw std::invalid_argument("supervised training: no data");
  ++g_supervised_runs;
  SupervisedResult result{init, {}};
  AssembledModel& model = result.model;
  apply_partition(model, phase);
  RemHooks storage;
  const RemHooks* hooks = model.hooks_or_null(storage);
  Rng rng = Rng(cfg.seed).fork("supervised-batches");
  std::vector<std::size_t> order;
  std::size_t cursor = 0;
  const SimilarityKind kind = model.config.similarity;
  result.loss_curve = optimize(model, cfg, [&](Graph<float>& g, std::size_t) {
    const TripleBatch b = sample_triples(data, cfg, order, cursor, rng);
    Var<float> q = embed(g, model.config, hooks, pack(model.config, b.queries));
    Var<float> d = embed(g, model.config, hooks, pack(model.config, b.docs));
    if (cfg.loss == LossKind::contrastive) return contrastive_loss(q, d, b.positives, kind);
    Var<float> scores = score_pairs(q, d, kind);
    std::vector<std::pair<std::size_t, std::size_t>> pos_cells, neg_cells;
    for (std::size_t i = 0; i < b.queries.size(); ++i) {
      pos_cells.emplace_back(i, static_cast<std::size_t>(b.positives[i]));
      neg_cells.emplace_back(i, static_cast<std::size_t>(b.negatives[i]));
    }
    std::vector<double> tp(b.teacher_pos), tn(b.teacher_neg);
    for (auto& v : tp) v *= cfg.teacher_scale;
    for (auto& v : tn) v *= cfg.teacher_scale;
    return margin_mse_loss<float>(ops::pick(scores, std::span<const std::pair<std::size_t, std::size_t>>(pos_cells)),
                                  ops::pick(scores, std::span<const std::pair<std::size_t, std::size_t>>(neg_cells)),
                                  tp, tn);
  });
  return result;
}

}  // namespace

SupervisedResult train_rem(const AssembledModel& init, const SupervisedData& data, const TrainingConfig& cfg) {
  if (!init.rem) throw std::invalid_argument("train_rem: model has no REM");
  return supervised(init, data, cfg, Phase::rem_finetuning);
}

SupervisedResult full_finetune(const AssembledModel& init, const SupervisedData& data, const TrainingConfig& cfg) {
  if (init.rem) throw std::invalid_argument("full_finetune: expects a bare backbone");
  return supervised(init, data, cfg, Phase::full_finetuning);
}

std::size_t supervised_invocations() { return g_supervised_runs.load(); }

InitMode parse_init_mode(std::string_view name) {
  if (name == "sequential") return InitMode::sequential;
  if (name == "base") return InitMode::base;
  throw std::invalid_argument("unknown init mode: " + std::string(name));
}

EncoderBackbone sequential_init(const EncoderBackbone& source_dam, const EncoderBackbone& base, InitMode mode) {
  return mode == InitMode::sequential ? source_dam : base;
}

DisentangledResult disentangled_finetune(const EncoderBackbone& base, const std::vector<TokenSequence>& source_corpus,
                                         const SupervisedData& data, const TrainingConfig& dam_cfg,
                                         const TrainingConfig& rem_cfg, const RemConfig& rem_config,
                                         bool adapt_dam_first) {
  DisentangledResult out{base, {}, {}, {}};
  if (adapt_dam_first) {
    AdaptResult adapted = adapt_dam(assemble(base), source_corpus, dam_cfg);
    out.source_dam = extract_backbone(adapted.model);
    out.dam_curve = std::move(adapted.loss_curve);
  }
  out.source_dam.params.set_all_trainable(true);
  Rng init_rng = Rng(rem_cfg.seed).fork("rem-init");
  const RemModule fresh = init_rem(rem_config, base.config.num_layers, base.config.hidden_dim, init_rng);
  SupervisedResult trained = train_rem(insert_rem(out.source_dam, fresh), data, rem_cfg);
  out.rem = extract_rem(trained.model);
  out.rem_curve = std::move(trained.loss_curve);
  return out;
}

}  // namespace ddr
