#include "ddr/app/experiment.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <optional>
#include <stdexcept>

#include "ddr/app/checkpoint.hpp"
#include "ddr/app/report.hpp"

namespace ddr {

namespace fs = std::filesystem;

double ExperimentResult::target_mean(const std::string& method, const std::string& metric) const {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& r : metrics) {
    if (r.method == method && r.metric == metric && r.domain != "all") {
      sum += r.value;
      ++n;
    }
  }
  if (n == 0) throw std::out_of_range("no " + metric + " results for " + method);
  return sum / static_cast<double>(n);
}

const std::vector<CurveRow> ExperimentResult::curve(const std::string& method, const std::string& domain) const {
  std::vector<CurveRow> out;
  for (const auto& c : curves) {
    if (c.method == method && c.domain == domain) out.push_back(c);
  }
  return out;
}

std::string format_metric(double value) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", value);
  return buf;
}

BenchmarkBundle make_bundle(const ExperimentConfig& cfg) {
  Rng rng(cfg.data_seed);
  return generate_synthetic_benchmark(cfg.benchmark, rng);
}

RunFile dense_run(const AssembledModel& model, const std::vector<Document>& docs, const std::vector<Query>& queries,
                  const Vocabulary& vocab, std::size_t depth) {
  const EmbeddingIndex index = build_index(model, docs, vocab, model.config.similarity);
  return search_all(index, queries, encode_queries(model, queries, vocab), depth);
}

namespace {

const std::vector<std::size_t> kRecallCutoffs{10, 100};

std::vector<TokenSequence> tokenize_docs(const std::vector<Document>& docs, const Vocabulary& vocab,
                                         std::size_t max_len) {
  std::vector<TokenSequence> out;
  out.reserve(docs.size());
  for (const auto& d : docs) out.push_back(tokenize(d.text, vocab, max_len));
  return out;
}

// Appends CSV lines and flushes each one.
class CsvSink {
 public:
  CsvSink() = default;
  CsvSink(const fs::path& path, const std::string& header) : out_(path) {
    if (!out_) throw std::runtime_error("cannot write " + path.string());
    line(header);
  }
  void line(const std::string& text) {
    if (!out_.is_open()) return;
    out_ << text << '\n';
    out_.flush();
  }

 private:
  std::ofstream out_;
};

class Pipeline {
 public:
  Pipeline(const ExperimentConfig& cfg, const BenchmarkBundle& bundle, const fs::path& out_dir,
           const ExperimentOptions& options, ExperimentResult& result)
      : cfg_(cfg), bundle_(bundle), out_(out_dir), options_(options), result_(result), root_(cfg.seed) {
    encoder_ = cfg.encoder;
    if (bundle.vocab.size() > encoder_.vocab_size) {
      throw std::invalid_argument("encoder vocab_size " + std::to_string(encoder_.vocab_size) +
                                  " is smaller than the bundle vocabulary (" + std::to_string(bundle.vocab.size()) +
                                  ")");
    }
    source_tokens_ = tokenize_docs(bundle.source.docs, bundle.vocab, encoder_.max_len);
    for (const auto& t : bundle.targets) target_tokens_.push_back(tokenize_docs(t.docs, bundle.vocab, encoder_.max_len));
    supervised_ = make_supervised_data(bundle.source, bundle.vocab, encoder_.max_len);
    if (!out_.empty()) {
      fs::create_directories(out_);
      metrics_csv_ = CsvSink(out_ / "metrics.csv", "method,domain,metric,value");
      curves_csv_ = CsvSink(out_ / "curves.csv", "method,domain,step,recall@10");
      assemblies_csv_ = CsvSink(out_ / "assemblies.csv", "method,domain,backbone_checksum,rem_checksum");
      timings_csv_ = CsvSink(out_ / "timings.csv", "stage,seconds");
    }
  }

  void run_bm25() {
    for (const auto& t : bundle_.targets) {
      const RunFile run = bm25_search_all(t.docs, t.queries, cfg_.run_depth);
      record_run("bm25", t, run);
    }
  }

  void run_mode(ExperimentMode mode) {
    const std::string method = to_string(mode);
    std::size_t invocations = 0;
    switch (mode) {
      case ExperimentMode::dr: {
        const auto& full = full_model("dr", base(), "dr-full");
        invocations = 1;
        for (const auto& t : bundle_.targets) evaluate(method, t, assemble(full), "-");
        break;
      }
      case ExperimentMode::ddr:
      case ExperimentMode::ddr_no_si:
      case ExperimentMode::ddr_no_df: {
        const bool df = mode != ExperimentMode::ddr_no_df;
        const RemModule& rem = df ? rem_on_source_dam() : rem_on_base();
        invocations = 1;
        for (std::size_t i = 0; i < bundle_.targets.size(); ++i) {
          const EncoderBackbone& dam = mode == ExperimentMode::ddr ? target_dam_sequential(i) : target_dam_from_base(i);
          evaluate(method, bundle_.targets[i], insert_rem(dam, rem), checksum(rem.params));
        }
        break;
      }
      case ExperimentMode::ddr_no_d: {
        for (std::size_t i = 0; i < bundle_.targets.size(); ++i) {
          const auto& t = bundle_.targets[i];
          const auto& full = full_model("ddr_no_d-" + t.name, target_dam_from_base(i), "ddr_no_d-full-" + t.name);
          ++invocations;
          evaluate(method, t, assemble(full), "-");
        }
        break;
      }
    }
    result_.supervised_invocations[method] = invocations;
    add_metric(method, "all", "supervised_invocations", static_cast<double>(invocations));
  }

  void save_checkpoints() {
    if (out_.empty() || !cfg_.save_checkpoints) return;
    const fs::path dir = out_ / "checkpoints";
    fs::create_directories(dir);
    if (base_) save_backbone(dir / "base.dam.ckpt", *base_, cfg_.seed);
    if (source_dam_) save_backbone(dir / "source.dam.ckpt", *source_dam_, cfg_.seed);
    if (rem_source_) save_rem(dir / "source_dam.rem.ckpt", *rem_source_, cfg_.seed);
    if (rem_base_) save_rem(dir / "base.rem.ckpt", *rem_base_, cfg_.seed);
    for (const auto& [i, dam] : target_seq_) {
      save_backbone(dir / (bundle_.targets[i].name + ".sequential.dam.ckpt"), dam, cfg_.seed);
    }
    for (const auto& [i, dam] : target_base_) {
      save_backbone(dir / (bundle_.targets[i].name + ".from_base.dam.ckpt"), dam, cfg_.seed);
    }
    for (const auto& [name, full] : full_) save_backbone(dir / (name + ".full.ckpt"), full, cfg_.seed, ModuleKind::full);
  }

 private:
  using Clock = std::chrono::steady_clock;

  void log(const std::string& line) const {
    if (options_.log) options_.log(line);
  }

  TrainingConfig stage(const TrainingConfig& t, const std::string& label) const {
    TrainingConfig out = t;
    out.seed = root_.fork(label).next_u64();
    return out;
  }

  void timed(const std::string& stage, Clock::time_point start) {
    const double s = std::chrono::duration<double>(Clock::now() - start).count();
    result_.timings.push_back({stage, s});
    timings_csv_.line(stage + "," + format_metric(s));
    log(stage + ": " + format_metric(s) + " s");
  }

  const EncoderBackbone& base() {
    if (!base_) {
      const auto start = Clock::now();
      Rng rng = root_.fork("base-init");
      base_ = init_backbone(encoder_, rng);
      if (cfg_.base_pretrain.steps > 0) {
        base_ = extract_backbone(
            adapt_dam(assemble(*base_), source_tokens_, stage(cfg_.base_pretrain, "base-pretrain")).model);
      }
      timed("base", start);
    }
    return *base_;
  }

  const EncoderBackbone& source_dam() {
    if (!source_dam_) {
      const auto start = Clock::now();
      const AdaptResult r = adapt_dam(assemble(base()), source_tokens_, stage(cfg_.source_dam, "source-dam"));
      source_dam_ = extract_backbone(r.model);
      timed("source_dam", start);
      log("source DAM final MLM loss " + format_metric(r.loss_curve.empty() ? 0.0 : r.loss_curve.back().value));
    }
    return *source_dam_;
  }

  RemModule train_fresh_rem(const EncoderBackbone& dam, const std::string& label) {
    const auto start = Clock::now();
    Rng rng = root_.fork(label + "-init");
    const AssembledModel init = insert_rem(dam, init_rem(cfg_.rem, encoder_.num_layers, encoder_.hidden_dim, rng));
    const SupervisedResult r = train_rem(init, supervised_, stage(cfg_.rem_training, label));
    timed(label, start);
    log_source_dev(label, r.model);
    return extract_rem(r.model);
  }

  const RemModule& rem_on_source_dam() {
    if (!rem_source_) rem_source_ = train_fresh_rem(source_dam(), "rem-on-source-dam");
    return *rem_source_;
  }

  const RemModule& rem_on_base() {
    if (!rem_base_) rem_base_ = train_fresh_rem(base(), "rem-on-base");
    return *rem_base_;
  }

  const EncoderBackbone& full_model(const std::string& name, const EncoderBackbone& init, const std::string& label) {
    auto it = full_.find(name);
    if (it == full_.end()) {
      const auto start = Clock::now();
      const SupervisedResult r = full_finetune(assemble(init), supervised_, stage(cfg_.full_training, label));
      timed(label, start);
      log_source_dev(label, r.model);
      it = full_.emplace(name, extract_backbone(r.model)).first;
    }
    return it->second;
  }

  // Curves track target R@10 of every requested REM-based method that
  // uses this adaptation run.
  EncoderBackbone adapt_target(std::size_t i, const EncoderBackbone& init, const std::string& label,
                               const std::vector<std::pair<std::string, const RemModule*>>& tracked) {
    const auto& t = bundle_.targets[i];
    const auto start = Clock::now();
    DamAdaptationOptions opts;
    if (!tracked.empty() && cfg_.curve_every > 0) {
      opts.eval_every = cfg_.curve_every;
      opts.on_eval = [&](std::size_t step, const AssembledModel& m) {
        const EncoderBackbone bb = extract_backbone(m);
        for (const auto& [method, rem] : tracked) {
          const RunFile run = dense_run(insert_rem(bb, *rem), t.docs, t.queries, bundle_.vocab, 10);
          const double r10 = recall_at_k(run, t.qrels, 10);
          result_.curves.push_back({method, t.name, step, r10});
          curves_csv_.line(method + "," + t.name + "," + std::to_string(step) + "," + format_metric(r10));
        }
      };
    }
    const AdaptResult r = adapt_dam(assemble(init), target_tokens_[i], stage(cfg_.target_dam, label), opts);
    timed(label, start);
    return extract_backbone(r.model);
  }

  bool wants(ExperimentMode m) const { return std::find(cfg_.modes.begin(), cfg_.modes.end(), m) != cfg_.modes.end(); }

  const EncoderBackbone& target_dam_sequential(std::size_t i) {
    auto it = target_seq_.find(i);
    if (it == target_seq_.end()) {
      const RemModule& rem = rem_on_source_dam();
      const EncoderBackbone init = sequential_init(source_dam(), base(), InitMode::sequential);
      it = target_seq_
               .emplace(i, adapt_target(i, init, "target-dam-sequential-" + bundle_.targets[i].name, {{"ddr", &rem}}))
               .first;
    }
    return it->second;
  }

  const EncoderBackbone& target_dam_from_base(std::size_t i) {
    auto it = target_base_.find(i);
    if (it == target_base_.end()) {
      std::vector<std::pair<std::string, const RemModule*>> tracked;
      if (wants(ExperimentMode::ddr_no_si)) tracked.emplace_back("ddr_no_si", &rem_on_source_dam());
      if (wants(ExperimentMode::ddr_no_df)) tracked.emplace_back("ddr_no_df", &rem_on_base());
      const EncoderBackbone init = sequential_init(source_dam_ ? *source_dam_ : base(), base(), InitMode::base);
      it = target_base_.emplace(i, adapt_target(i, init, "target-dam-from-base-" + bundle_.targets[i].name, tracked))
               .first;
    }
    return it->second;
  }

  void log_source_dev(const std::string& label, const AssembledModel& model) {
    if (!options_.log) return;
    const RunFile run =
        dense_run(model, bundle_.source.docs, bundle_.source.dev_queries, bundle_.vocab, 10);
    log(label + " source-dev R@10 " + format_metric(recall_at_k(run, bundle_.source.dev_qrels, 10)));
  }

  void add_metric(const std::string& method, const std::string& domain, const std::string& metric, double value) {
    result_.metrics.push_back({method, domain, metric, value});
    metrics_csv_.line(method + "," + domain + "," + metric + "," + format_metric(value));
  }

  void record_run(const std::string& method, const DomainData& t, const RunFile& run) {
    add_metric(method, t.name, "ndcg@10", ndcg_at_k(run, t.qrels, 10));
    for (std::size_t k : kRecallCutoffs) add_metric(method, t.name, "recall@" + std::to_string(k), recall_at_k(run, t.qrels, k));
    if (!out_.empty()) {
      fs::create_directories(out_ / "runs" / method);
      write_run(out_ / "runs" / method / (t.name + ".trec"), run, method);
    }
  }

  void evaluate(const std::string& method, const DomainData& t, const AssembledModel& model,
                const std::string& rem_checksum) {
    const auto start = Clock::now();
    record_run(method, t, dense_run(model, t.docs, t.queries, bundle_.vocab, cfg_.run_depth));
    const std::string bb = checksum(model.params.filter_prefix(param_names::kDamPrefix));
    result_.assemblies.push_back({method, t.name, bb, rem_checksum});
    assemblies_csv_.line(method + "," + t.name + "," + bb + "," + rem_checksum);
    timed("evaluate-" + method + "-" + t.name, start);
  }

  const ExperimentConfig& cfg_;
  const BenchmarkBundle& bundle_;
  fs::path out_;
  const ExperimentOptions& options_;
  ExperimentResult& result_;
  Rng root_;
  EncoderConfig encoder_;
  std::vector<TokenSequence> source_tokens_;
  std::vector<std::vector<TokenSequence>> target_tokens_;
  SupervisedData supervised_;
  CsvSink metrics_csv_, curves_csv_, assemblies_csv_, timings_csv_;

  std::optional<EncoderBackbone> base_, source_dam_;
  std::optional<RemModule> rem_source_, rem_base_;
  std::map<std::size_t, EncoderBackbone> target_seq_, target_base_;
  std::map<std::string, EncoderBackbone> full_;
};

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg, const BenchmarkBundle& bundle, const fs::path& out_dir,
                                const ExperimentOptions& options) {
  validate(cfg);
  if (bundle.targets.empty()) throw std::invalid_argument("bundle has no target domains");
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    write_json(out_dir / "resolved-config.json", to_json(cfg));
  }
  ExperimentResult result;
  {
    Pipeline pipeline(cfg, bundle, out_dir, options, result);
    if (cfg.bm25_baseline) pipeline.run_bm25();
    for (ExperimentMode m : cfg.modes) pipeline.run_mode(m);
    pipeline.save_checkpoints();
  }
  if (!out_dir.empty()) write_report(out_dir);
  return result;
}

}  // namespace ddr
