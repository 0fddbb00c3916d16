#include "ddr/app/config.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

namespace ddr {

using nlohmann::json;

std::string to_string(ExperimentMode mode) {
  switch (mode) {
    case ExperimentMode::dr: return "dr";
    case ExperimentMode::ddr: return "ddr";
    case ExperimentMode::ddr_no_df: return "ddr_no_df";
    case ExperimentMode::ddr_no_si: return "ddr_no_si";
    case ExperimentMode::ddr_no_d: return "ddr_no_d";
  }
  throw std::logic_error("bad experiment mode");
}

ExperimentMode parse_mode(std::string_view name) {
  for (ExperimentMode m : all_modes()) {
    if (to_string(m) == name) return m;
  }
  throw std::invalid_argument("unknown mode '" + std::string(name) + "' (dr, ddr, ddr_no_df, ddr_no_si, ddr_no_d)");
}

const std::vector<ExperimentMode>& all_modes() {
  static const std::vector<ExperimentMode> modes{ExperimentMode::dr, ExperimentMode::ddr, ExperimentMode::ddr_no_df,
                                                 ExperimentMode::ddr_no_si, ExperimentMode::ddr_no_d};
  return modes;
}

namespace {

// Reads known keys from an object and rejects the rest.
class Reader {
 public:
  Reader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw std::invalid_argument(where_ + ": expected a JSON object");
  }
  ~Reader() noexcept(false) {
    if (std::uncaught_exceptions()) return;
    for (const auto& [key, _] : j_.items()) {
      if (!seen_.count(key)) throw std::invalid_argument(where_ + ": unknown key '" + key + "'");
    }
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw std::invalid_argument(where_ + "." + key + ": " + e.what());
    }
  }

  const json* sub(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  std::string path(const char* key) const { return where_ + "." + key; }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

void read_encoder(const json& j, EncoderConfig& cfg, const std::string& where) {
  Reader r(j, where);
  r.get("num_layers", cfg.num_layers);
  r.get("hidden_dim", cfg.hidden_dim);
  r.get("num_heads", cfg.num_heads);
  r.get("ffn_dim", cfg.ffn_dim);
  r.get("vocab_size", cfg.vocab_size);
  r.get("max_len", cfg.max_len);
  if (const json* s = r.sub("similarity")) cfg.similarity = parse_similarity(s->get<std::string>());
  r.get("pool_include_specials", cfg.pool_include_specials);
  r.get("layer_norm_eps", cfg.layer_norm_eps);
  r.get("init_std", cfg.init_std);
}

void read_rem(const json& j, RemConfig& cfg, const std::string& where) {
  Reader r(j, where);
  r.get("lora_rank", cfg.lora_rank);
  r.get("adapter_bottleneck", cfg.adapter_bottleneck);
  r.get("lora_alpha", cfg.lora_alpha);
  r.get("adapter_scale", cfg.adapter_scale);
}

void read_training(const json& j, TrainingConfig& cfg, const std::string& where) {
  Reader r(j, where);
  if (const json* p = r.sub("phase")) cfg.phase = parse_phase(p->get<std::string>());
  r.get("lr", cfg.lr);
  r.get("weight_decay", cfg.weight_decay);
  r.get("warmup_steps", cfg.warmup_steps);
  r.get("max_grad_norm", cfg.max_grad_norm);
  r.get("steps", cfg.steps);
  r.get("seed", cfg.seed);
  r.get("docs_per_batch", cfg.docs_per_batch);
  if (const json* m = r.sub("masking")) {
    Reader mr(*m, r.path("masking"));
    mr.get("select_prob", cfg.masking.select_prob);
    mr.get("mask_frac", cfg.masking.mask_frac);
    mr.get("random_frac", cfg.masking.random_frac);
    mr.get("keep_frac", cfg.masking.keep_frac);
  }
  r.get("queries_per_batch", cfg.queries_per_batch);
  r.get("hard_negatives_per_query", cfg.hard_negatives_per_query);
  if (const json* l = r.sub("loss")) cfg.loss = parse_loss(l->get<std::string>());
  r.get("teacher_scale", cfg.teacher_scale);
}

void read_domain(const json& j, DomainSpec& d, const std::string& where) {
  Reader r(j, where);
  r.get("name", d.name);
  r.get("vocab_words", d.vocab_words);
  r.get("overlap", d.overlap);
  r.get("zipf_exponent", d.zipf_exponent);
  r.get("doc_len_min", d.doc_len_min);
  r.get("doc_len_max", d.doc_len_max);
  r.get("num_docs", d.num_docs);
  r.get("num_queries", d.num_queries);
  r.get("num_topics", d.num_topics);
  r.get("topic_words", d.topic_words);
  r.get("topic_prob", d.topic_prob);
  r.get("query_exact", d.query_exact);
  r.get("query_soft", d.query_soft);
}

void read_benchmark(const json& j, BenchmarkSpec& spec, const std::string& where) {
  Reader r(j, where);
  if (const json* s = r.sub("source")) read_domain(*s, spec.source, r.path("source"));
  if (const json* t = r.sub("targets")) {
    if (!t->is_array()) throw std::invalid_argument(r.path("targets") + ": expected an array");
    // Each entry starts from the first default target so partial entries work.
    const DomainSpec proto = default_benchmark_spec().targets.front();
    spec.targets.clear();
    for (std::size_t i = 0; i < t->size(); ++i) {
      DomainSpec d = proto;
      read_domain(t->at(i), d, r.path("targets") + "[" + std::to_string(i) + "]");
      spec.targets.push_back(d);
    }
  }
  r.get("source_dev_queries", spec.source_dev_queries);
  r.get("hard_negatives", spec.hard_negatives);
}

}  // namespace

ExperimentConfig default_experiment_config() {
  ExperimentConfig c;
  c.base_pretrain.phase = Phase::dam_adaptation;
  c.base_pretrain.steps = 0;
  c.base_pretrain.lr = 1e-3;
  c.base_pretrain.warmup_steps = 50;

  c.source_dam.phase = Phase::dam_adaptation;
  c.source_dam.lr = 2e-3;
  c.source_dam.warmup_steps = 200;
  c.source_dam.steps = 3000;
  c.source_dam.docs_per_batch = 32;

  c.target_dam = c.source_dam;
  c.target_dam.lr = 1e-3;
  c.target_dam.warmup_steps = 0;
  c.target_dam.steps = 1500;

  c.rem_training.phase = Phase::rem_finetuning;
  c.rem_training.lr = 5e-3;
  c.rem_training.warmup_steps = 50;
  c.rem_training.steps = 600;
  c.rem_training.queries_per_batch = 32;
  c.rem_training.hard_negatives_per_query = 1;

  c.full_training = c.rem_training;
  c.full_training.phase = Phase::full_finetuning;
  c.full_training.lr = 1e-3;
  return c;
}

void validate(const ExperimentConfig& cfg) {
  validate(cfg.encoder);
  validate(cfg.rem);
  for (const TrainingConfig* t : {&cfg.base_pretrain, &cfg.source_dam, &cfg.target_dam}) {
    if (t->phase != Phase::dam_adaptation) throw std::invalid_argument("masked-LM stages must use phase dam_adaptation");
    validate(*t);
  }
  if (cfg.rem_training.phase != Phase::rem_finetuning) throw std::invalid_argument("rem_training must use rem_finetuning");
  if (cfg.full_training.phase != Phase::full_finetuning) {
    throw std::invalid_argument("full_training must use full_finetuning");
  }
  validate(cfg.rem_training);
  validate(cfg.full_training);
  validate(cfg.benchmark.source);
  for (const auto& t : cfg.benchmark.targets) validate(t);
  if (cfg.modes.empty()) throw std::invalid_argument("no experiment modes selected");
  if (cfg.run_depth < 10) throw std::invalid_argument("run_depth must be at least 10");
}

json to_json(const EncoderConfig& c) {
  return {{"num_layers", c.num_layers},     {"hidden_dim", c.hidden_dim},
          {"num_heads", c.num_heads},       {"ffn_dim", c.ffn_dim},
          {"vocab_size", c.vocab_size},     {"max_len", c.max_len},
          {"similarity", to_string(c.similarity)}, {"pool_include_specials", c.pool_include_specials},
          {"layer_norm_eps", c.layer_norm_eps}, {"init_std", c.init_std}};
}

EncoderConfig encoder_config_from_json(const json& j) {
  EncoderConfig c;
  read_encoder(j, c, "encoder");
  validate(c);
  return c;
}

json to_json(const RemConfig& c) {
  return {{"lora_rank", c.lora_rank},
          {"adapter_bottleneck", c.adapter_bottleneck},
          {"lora_alpha", c.lora_alpha},
          {"adapter_scale", c.adapter_scale}};
}

RemConfig rem_config_from_json(const json& j) {
  RemConfig c;
  read_rem(j, c, "rem");
  validate(c);
  return c;
}

json to_json(const TrainingConfig& c) {
  return {{"phase", to_string(c.phase)},
          {"lr", c.lr},
          {"weight_decay", c.weight_decay},
          {"warmup_steps", c.warmup_steps},
          {"max_grad_norm", c.max_grad_norm},
          {"steps", c.steps},
          {"seed", c.seed},
          {"docs_per_batch", c.docs_per_batch},
          {"masking",
           {{"select_prob", c.masking.select_prob},
            {"mask_frac", c.masking.mask_frac},
            {"random_frac", c.masking.random_frac},
            {"keep_frac", c.masking.keep_frac}}},
          {"queries_per_batch", c.queries_per_batch},
          {"hard_negatives_per_query", c.hard_negatives_per_query},
          {"loss", to_string(c.loss)},
          {"teacher_scale", c.teacher_scale}};
}

json to_json(const DomainSpec& d) {
  return {{"name", d.name},
          {"vocab_words", d.vocab_words},
          {"overlap", d.overlap},
          {"zipf_exponent", d.zipf_exponent},
          {"doc_len_min", d.doc_len_min},
          {"doc_len_max", d.doc_len_max},
          {"num_docs", d.num_docs},
          {"num_queries", d.num_queries},
          {"num_topics", d.num_topics},
          {"topic_words", d.topic_words},
          {"topic_prob", d.topic_prob},
          {"query_exact", d.query_exact},
          {"query_soft", d.query_soft}};
}

json to_json(const BenchmarkSpec& s) {
  json targets = json::array();
  for (const auto& t : s.targets) targets.push_back(to_json(t));
  return {{"source", to_json(s.source)},
          {"targets", targets},
          {"source_dev_queries", s.source_dev_queries},
          {"hard_negatives", s.hard_negatives}};
}

json to_json(const ExperimentConfig& c) {
  json modes = json::array();
  for (ExperimentMode m : c.modes) modes.push_back(to_string(m));
  return {{"seed", c.seed},
          {"data_seed", c.data_seed},
          {"benchmark", to_json(c.benchmark)},
          {"encoder", to_json(c.encoder)},
          {"rem", to_json(c.rem)},
          {"base_pretrain", to_json(c.base_pretrain)},
          {"source_dam", to_json(c.source_dam)},
          {"target_dam", to_json(c.target_dam)},
          {"rem_training", to_json(c.rem_training)},
          {"full_training", to_json(c.full_training)},
          {"curve_every", c.curve_every},
          {"modes", modes},
          {"bm25_baseline", c.bm25_baseline},
          {"save_checkpoints", c.save_checkpoints},
          {"run_depth", c.run_depth}};
}

ExperimentConfig from_json(const json& j, ExperimentConfig c) {
  {
    Reader r(j, "config");
    r.get("seed", c.seed);
    r.get("data_seed", c.data_seed);
    if (const json* b = r.sub("benchmark")) read_benchmark(*b, c.benchmark, "benchmark");
    if (const json* e = r.sub("encoder")) read_encoder(*e, c.encoder, "encoder");
    if (const json* m = r.sub("rem")) read_rem(*m, c.rem, "rem");
    if (const json* t = r.sub("base_pretrain")) read_training(*t, c.base_pretrain, "base_pretrain");
    if (const json* t = r.sub("source_dam")) read_training(*t, c.source_dam, "source_dam");
    if (const json* t = r.sub("target_dam")) read_training(*t, c.target_dam, "target_dam");
    if (const json* t = r.sub("rem_training")) read_training(*t, c.rem_training, "rem_training");
    if (const json* t = r.sub("full_training")) read_training(*t, c.full_training, "full_training");
    r.get("curve_every", c.curve_every);
    if (const json* m = r.sub("modes")) {
      c.modes.clear();
      for (const auto& name : *m) c.modes.push_back(parse_mode(name.get<std::string>()));
    }
    r.get("bm25_baseline", c.bm25_baseline);
    r.get("save_checkpoints", c.save_checkpoints);
    r.get("run_depth", c.run_depth);
  }
  validate(c);
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) { return from_json(read_json(path)); }

void write_json(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

}  // namespace ddr
