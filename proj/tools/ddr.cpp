// Command-line front end: data generation, the individual training stages,
// indexing, search, evaluation, full experiments and reports.
#include <cstdio>
#include <iostream>
#include <optional>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include "CLI11.hpp"
#include "ddr/app/checkpoint.hpp"
#include "ddr/app/config.hpp"
#include "ddr/app/experiment.hpp"
#include "ddr/app/report.hpp"

namespace fs = std::filesystem;
using namespace ddr;

namespace {

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> steps;
  std::optional<std::string> similarity;
  std::optional<std::string> loss;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "JSON experiment config; flags override it")->check(CLI::ExistingFile);
  cmd->add_option("--seed", f.seed, "training seed");
  cmd->add_option("--steps", f.steps, "step count of the stage this command runs");
  cmd->add_option("--similarity", f.similarity, "dot or cosine")->check(CLI::IsMember({"dot", "cosine"}));
  cmd->add_option("--loss", f.loss, "contrastive or margin_mse")->check(CLI::IsMember({"contrastive", "margin_mse"}));
}

ExperimentConfig resolve(const CommonFlags& f) {
  ExperimentConfig cfg = f.config.empty() ? default_experiment_config() : load_experiment_config(f.config);
  if (f.seed) cfg.seed = *f.seed;
  if (f.similarity) cfg.encoder.similarity = parse_similarity(*f.similarity);
  if (f.loss) {
    cfg.rem_training.loss = parse_loss(*f.loss);
    cfg.full_training.loss = parse_loss(*f.loss);
  }
  validate(cfg);
  return cfg;
}

// resolved-config.json beside an output file or inside an output directory.
void write_resolved(const fs::path& where, const ExperimentConfig& cfg, bool is_dir) {
  const fs::path dir = is_dir ? where : (where.has_parent_path() ? where.parent_path() : fs::path("."));
  fs::create_directories(dir);
  write_json(dir / "resolved-config.json", to_json(cfg));
}

struct DomainView {
  const std::vector<Document>* docs;
  const std::vector<Query>* queries;
  const Qrels* qrels;
};

// "source" evaluates on the held-out source dev queries.
DomainView find_domain(const BenchmarkBundle& b, const std::string& name) {
  if (name == "source") return {&b.source.docs, &b.source.dev_queries, &b.source.dev_qrels};
  for (const auto& t : b.targets) {
    if (t.name == name) return {&t.docs, &t.queries, &t.qrels};
  }
  std::string known = "source";
  for (const auto& t : b.targets) known += ", " + t.name;
  throw std::invalid_argument("unknown domain '" + name + "' (" + known + ")");
}

std::vector<TokenSequence> tokens_of(const std::vector<Document>& docs, const BenchmarkBundle& b, std::size_t max_len) {
  std::vector<TokenSequence> out;
  for (const auto& d : docs) out.push_back(tokenize(d.text, b.vocab, max_len));
  return out;
}

EncoderConfig encoder_for(const ExperimentConfig& cfg, const BenchmarkBundle& b) {
  EncoderConfig e = cfg.encoder;
  if (b.vocab.size() > e.vocab_size) {
    throw std::invalid_argument("encoder vocab_size " + std::to_string(e.vocab_size) + " < bundle vocabulary " +
                                std::to_string(b.vocab.size()));
  }
  return e;
}

AssembledModel load_model(const std::string& dam, const std::string& rem, bool full,
                          std::optional<SimilarityKind> similarity) {
  const ModuleKind kind = full ? ModuleKind::full : ModuleKind::dam;
  AssembledModel m = rem.empty() ? assemble(load_backbone(dam, kind)) : load_assembled(dam, rem, kind);
  if (similarity) m.config.similarity = *similarity;
  return m;
}

void print_metrics(const RunFile& run, const Qrels& qrels) {
  std::printf("ndcg@10\t%s\n", format_metric(ndcg_at_k(run, qrels, 10)).c_str());
  for (std::size_t k : {10, 100, 1000}) {
    std::printf("recall@%zu\t%s\n", k, format_metric(recall_at_k(run, qrels, k)).c_str());
  }
}

}  // namespace

int main(int argc, char** argv) {
#ifdef __GLIBC__
  // Training allocates and frees the same large buffers every step; keep
  // them on the heap instead of round-tripping through mmap.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  CLI::App app{"Disentangled dense retrieval: domain adaptation and relevance modules"};
  app.require_subcommand(1);

  CommonFlags common;
  std::string data_dir, out, domain, dam, rem, init, index_path, run_path, qrels_path;
  bool full = false;
  std::size_t k = 100;
  std::vector<std::string> modes;

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic benchmark bundle");
  add_common(gen, common);
  gen->add_option("--out-dir", out, "bundle directory")->required();
  std::optional<std::uint64_t> data_seed;
  gen->add_option("--data-seed", data_seed, "bundle seed (default from config)");

  auto* adapt = app.add_subcommand("adapt-dam", "masked-LM adaptation of a backbone on one domain's corpus");
  add_common(adapt, common);
  adapt->add_option("--data", data_dir, "bundle directory")->required()->check(CLI::ExistingDirectory);
  adapt->add_option("--domain", domain, "source or a target name")->required();
  adapt->add_option("--init", init, "starting DAM checkpoint (default: fresh init from --seed)");
  adapt->add_option("--out", out, "output DAM checkpoint")->required();

  auto* train = app.add_subcommand("train-rem", "train a REM on the source labels with the DAM frozen");
  add_common(train, common);
  train->add_option("--data", data_dir, "bundle directory")->required()->check(CLI::ExistingDirectory);
  train->add_option("--dam", dam, "DAM checkpoint")->required()->check(CLI::ExistingFile);
  train->add_option("--out", out, "output REM checkpoint")->required();

  auto model_opts = [&](CLI::App* cmd) {
    cmd->add_option("--dam", dam, "backbone checkpoint")->required()->check(CLI::ExistingFile);
    cmd->add_option("--rem", rem, "REM checkpoint to insert")->check(CLI::ExistingFile);
    cmd->add_flag("--full", full, "the backbone checkpoint is a fully finetuned model");
  };

  auto* build = app.add_subcommand("build-index", "encode a domain's corpus into an index file");
  add_common(build, common);
  build->add_option("--data", data_dir, "bundle directory")->required()->check(CLI::ExistingDirectory);
  build->add_option("--domain", domain, "source or a target name")->required();
  model_opts(build);
  build->add_option("--out", out, "output index file")->required();

  auto* search_cmd = app.add_subcommand("search", "search an index with a domain's queries");
  add_common(search_cmd, common);
  search_cmd->add_option("--data", data_dir, "bundle directory")->required()->check(CLI::ExistingDirectory);
  search_cmd->add_option("--domain", domain, "source or a target name")->required();
  search_cmd->add_option("--index", index_path, "index file")->required()->check(CLI::ExistingFile);
  model_opts(search_cmd);
  search_cmd->add_option("-k,--depth", k, "results per query");
  search_cmd->add_option("--out", out, "output TREC run file")->required();

  auto* eval = app.add_subcommand("evaluate", "score a TREC run against qrels");
  eval->add_option("--run", run_path, "TREC run file")->required()->check(CLI::ExistingFile);
  eval->add_option("--qrels", qrels_path, "TREC qrels file")->required()->check(CLI::ExistingFile);

  auto* exp = app.add_subcommand("experiment", "run experiment modes end to end");
  add_common(exp, common);
  exp->add_option("--mode", modes, "dr, ddr, ddr_no_df, ddr_no_si, ddr_no_d or all (repeatable)");
  exp->add_option("--out-dir", out, "results directory")->required();
  exp->add_option("--data", data_dir, "use this bundle instead of generating one")->check(CLI::ExistingDirectory);
  bool quiet = false;
  exp->add_flag("-q,--quiet", quiet, "no progress output");

  auto* rep = app.add_subcommand("report", "write report.md for a results directory");
  rep->add_option("--out-dir", out, "results directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      ExperimentConfig cfg = resolve(common);
      if (data_seed) cfg.data_seed = *data_seed;
      const BenchmarkBundle bundle = make_bundle(cfg);
      save_bundle(out, bundle);
      write_resolved(out, cfg, true);
      std::printf("wrote %s: vocabulary %zu, source %zu docs, %zu targets\n", out.c_str(), bundle.vocab.size(),
                  bundle.source.docs.size(), bundle.targets.size());
    } else if (*adapt) {
      ExperimentConfig cfg = resolve(common);
      const BenchmarkBundle bundle = load_bundle(data_dir);
      const bool source = domain == "source";
      TrainingConfig& tc = source ? cfg.source_dam : cfg.target_dam;
      if (common.steps) tc.steps = *common.steps;
      tc.seed = Rng(cfg.seed).fork(source ? "source-dam" : "target-dam-" + domain).next_u64();
      EncoderBackbone start;
      if (init.empty()) {
        Rng rng = Rng(cfg.seed).fork("base-init");
        start = init_backbone(encoder_for(cfg, bundle), rng);
      } else {
        start = load_backbone(init);
      }
      const AdaptResult r = adapt_dam(assemble(start), tokens_of(*find_domain(bundle, domain).docs, bundle,
                                                                 start.config.max_len), tc);
      save_backbone(out, extract_backbone(r.model), cfg.seed);
      write_resolved(out, cfg, false);
      std::printf("adapted %zu steps, final MLM loss %.4f -> %s\n", tc.steps,
                  r.loss_curve.empty() ? 0.0 : r.loss_curve.back().value, out.c_str());
    } else if (*train) {
      ExperimentConfig cfg = resolve(common);
      const BenchmarkBundle bundle = load_bundle(data_dir);
      if (common.steps) cfg.rem_training.steps = *common.steps;
      cfg.rem_training.seed = Rng(cfg.seed).fork("rem-on-source-dam").next_u64();
      const EncoderBackbone bb = load_backbone(dam);
      Rng rng = Rng(cfg.seed).fork("rem-on-source-dam-init");
      const AssembledModel model =
          insert_rem(bb, init_rem(cfg.rem, bb.config.num_layers, bb.config.hidden_dim, rng));
      const SupervisedResult r =
          train_rem(model, make_supervised_data(bundle.source, bundle.vocab, bb.config.max_len), cfg.rem_training);
      save_rem(out, extract_rem(r.model), cfg.seed);
      write_resolved(out, cfg, false);
      const RunFile run =
          dense_run(r.model, bundle.source.docs, bundle.source.dev_queries, bundle.vocab, 100);
      std::printf("trained %zu steps, source dev recall@10 %s -> %s\n", cfg.rem_training.steps,
                  format_metric(recall_at_k(run, bundle.source.dev_qrels, 10)).c_str(), out.c_str());
    } else if (*build) {
      const ExperimentConfig cfg = resolve(common);
      const BenchmarkBundle bundle = load_bundle(data_dir);
      const AssembledModel model = load_model(dam, rem, full, common.similarity ? std::optional(cfg.encoder.similarity)
                                                                                : std::nullopt);
      const EmbeddingIndex index =
          build_index(model, *find_domain(bundle, domain).docs, bundle.vocab, model.config.similarity);
      save_index(out, index);
      write_resolved(out, cfg, false);
      std::printf("indexed %zu documents (dim %zu, %s) -> %s\n", index.size(), index.dim(),
                  to_string(index.similarity).c_str(), out.c_str());
    } else if (*search_cmd) {
      const ExperimentConfig cfg = resolve(common);
      const BenchmarkBundle bundle = load_bundle(data_dir);
      const EmbeddingIndex index = load_index(index_path);
      AssembledModel model = load_model(dam, rem, full, index.similarity);
      if (checksum(model.params) != index.model_checksum) {
        throw std::invalid_argument("index " + index_path + " was built with a different model");
      }
      const DomainView view = find_domain(bundle, domain);
      if (checksum(*view.docs) != index.corpus_checksum) {
        throw std::invalid_argument("index " + index_path + " was built from a different corpus");
      }
      const RunFile run = search_all(index, *view.queries, encode_queries(model, *view.queries, bundle.vocab), k);
      write_run(out, run, "dense");
      write_resolved(out, cfg, false);
      std::printf("searched %zu queries -> %s\n", run.size(), out.c_str());
      print_metrics(run, *view.qrels);
    } else if (*eval) {
      print_metrics(read_run(run_path), load_qrels(qrels_path));
    } else if (*exp) {
      ExperimentConfig cfg = resolve(common);
      if (common.steps) cfg.target_dam.steps = *common.steps;
      if (!modes.empty()) {
        cfg.modes.clear();
        for (const auto& m : modes) {
          if (m == "all") {
            cfg.modes = all_modes();
            break;
          }
          cfg.modes.push_back(parse_mode(m));
        }
      }
      validate(cfg);
      const BenchmarkBundle bundle = data_dir.empty() ? make_bundle(cfg) : load_bundle(data_dir);
      ExperimentOptions opts;
      if (!quiet) opts.log = [](const std::string& line) { std::fprintf(stderr, "[ddr] %s\n", line.c_str()); };
      const ExperimentResult r = run_experiment(cfg, bundle, out, opts);
      for (const auto& m : cfg.modes) {
        std::printf("%-10s mean target recall@10 %s, ndcg@10 %s, supervised runs %zu\n", to_string(m).c_str(),
                    format_metric(r.target_mean(to_string(m), "recall@10")).c_str(),
                    format_metric(r.target_mean(to_string(m), "ndcg@10")).c_str(),
                    r.supervised_invocations.at(to_string(m)));
      }
      std::printf("report: %s\n", (fs::path(out) / "report.md").c_str());
    } else if (*rep) {
      std::printf("%s\n", write_report(out).c_str());
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
