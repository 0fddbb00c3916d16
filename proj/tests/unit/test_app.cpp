#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ddr/app/checkpoint.hpp"
#include "ddr/app/config.hpp"
#include "ddr/app/experiment.hpp"
#include "ddr/app/report.hpp"
#include "doctest.h"
#include "tiny_experiment.hpp"

using namespace ddr;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("ddr_test_app_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << bytes;
}

EncoderConfig small_encoder() {
  EncoderConfig cfg;
  cfg.num_layers = 2;
  cfg.hidden_dim = 8;
  cfg.num_heads = 2;
  cfg.ffn_dim = 16;
  cfg.vocab_size = 30;
  cfg.max_len = 10;
  return cfg;
}

RemModule trained_looking_rem(const EncoderConfig& cfg, Rng& rng) {
  RemModule rem = init_rem({2, 3, 0.0, 1.0}, cfg.num_layers, cfg.hidden_dim, rng);
  for (auto& [_, e] : rem.params)
    for (auto& v : e.value.values()) v += static_cast<float>(rng.normal() * 0.1);
  return rem;
}

// Rewrites the JSON metadata of a checkpoint file through `edit`.
template <typename F>
void edit_meta(const fs::path& p, F edit) {
  std::string bytes = slurp(p);
  std::uint64_t len = 0;
  std::memcpy(&len, bytes.data() + 8, 8);
  auto meta = nlohmann::json::parse(bytes.substr(16, len));
  edit(meta);
  const std::string text = meta.dump();
  const std::uint64_t new_len = text.size();
  std::string out = bytes.substr(0, 8);
  out.append(reinterpret_cast<const char*>(&new_len), 8);
  out += text;
  out += bytes.substr(16 + len);
  spit(p, out);
}

}  // namespace

TEST_CASE("checkpoints round-trip bitwise and reject mismatched loads") {
  TempDir dir("ckpt");
  Rng rng(3);
  const EncoderConfig cfg = small_encoder();
  const EncoderBackbone backbone = init_backbone(cfg, rng);
  const RemModule rem = trained_looking_rem(cfg, rng);

  save_backbone(dir.path / "dam.ckpt", backbone, 42);
  save_rem(dir.path / "rem.ckpt", rem, 42);

  const EncoderBackbone b2 = load_backbone(dir.path / "dam.ckpt");
  CHECK(b2.config == cfg);
  CHECK(params_bitwise_equal(b2.params, backbone.params));
  const RemModule r2 = load_rem(dir.path / "rem.ckpt");
  CHECK(r2.config == rem.config);
  CHECK(params_bitwise_equal(r2.params, rem.params));
  CHECK(read_checkpoint_meta(dir.path / "dam.ckpt").seed == 42);

  const AssembledModel loaded = load_assembled(dir.path / "dam.ckpt", dir.path / "rem.ckpt");
  CHECK(params_bitwise_equal(loaded.params, insert_rem(backbone, rem).params));

  // Saving and reloading twice gives the same bytes.
  save_backbone(dir.path / "dam2.ckpt", b2, 42);
  CHECK(slurp(dir.path / "dam.ckpt") == slurp(dir.path / "dam2.ckpt"));

  CHECK_THROWS_AS(load_rem(dir.path / "dam.ckpt"), CheckpointKindError);
  CHECK_THROWS_AS(load_backbone(dir.path / "rem.ckpt"), CheckpointKindError);
  CHECK_THROWS_AS(load_backbone(dir.path / "dam.ckpt", ModuleKind::full), CheckpointKindError);
  save_backbone(dir.path / "full.ckpt", backbone, 1, ModuleKind::full);
  CHECK_NOTHROW(load_backbone(dir.path / "full.ckpt", ModuleKind::full));

  SUBCASE("truncation") {
    const std::string bytes = slurp(dir.path / "dam.ckpt");
    spit(dir.path / "cut.ckpt", bytes.substr(0, bytes.size() - 4));
    CHECK_THROWS_AS(load_backbone(dir.path / "cut.ckpt"), CheckpointLengthError);
    spit(dir.path / "cut.ckpt", bytes.substr(0, 20));
    CHECK_THROWS_AS(load_backbone(dir.path / "cut.ckpt"), CheckpointLengthError);
  }
  SUBCASE("bad magic") {
    std::string bytes = slurp(dir.path / "dam.ckpt");
    bytes[0] = 'X';
    spit(dir.path / "bad.ckpt", bytes);
    CHECK_THROWS_AS(load_backbone(dir.path / "bad.ckpt"), CheckpointFormatError);
  }
  SUBCASE("future version") {
    edit_meta(dir.path / "dam.ckpt", [](nlohmann::json& m) { m["format_version"] = kCheckpointVersion + 1; });
    CHECK_THROWS_AS(load_backbone(dir.path / "dam.ckpt"), CheckpointVersionError);
  }
  SUBCASE("config that disagrees with the tensors") {
    edit_meta(dir.path / "dam.ckpt", [](nlohmann::json& m) { m["config"]["encoder"]["ffn_dim"] = 32; });
    CHECK_THROWS_AS(load_backbone(dir.path / "dam.ckpt"), CheckpointConfigError);
  }
  SUBCASE("REM for a different backbone") {
    EncoderConfig wide = cfg;
    wide.hidden_dim = 12;
    wide.num_heads = 3;
    save_backbone(dir.path / "wide.ckpt", init_backbone(wide, rng), 0);
    CHECK_THROWS_AS(load_assembled(dir.path / "wide.ckpt", dir.path / "rem.ckpt"), CheckpointConfigError);
    EncoderConfig deep = cfg;
    deep.num_layers = 3;
    save_backbone(dir.path / "deep.ckpt", init_backbone(deep, rng), 0);
    CHECK_THROWS_AS(load_assembled(dir.path / "deep.ckpt", dir.path / "rem.ckpt"), CheckpointConfigError);
  }
}

TEST_CASE("one REM checkpoint assembles with several backbones") {
  TempDir dir("cross");
  Rng rng(5);
  const EncoderConfig cfg = small_encoder();
  const RemModule rem = trained_looking_rem(cfg, rng);
  save_rem(dir.path / "rem.ckpt", rem, 0);
  const TokenSequence seq{{special_tokens::kCls, 7, 9, 11, special_tokens::kSep}, {}};
  std::vector<std::vector<float>> outs;
  for (int i = 0; i < 3; ++i) {
    const EncoderBackbone b = init_backbone(cfg, rng);
    const fs::path p = dir.path / ("dam" + std::to_string(i) + ".ckpt");
    save_backbone(p, b, i);
    const AssembledModel m = load_assembled(p, dir.path / "rem.ckpt");
    CHECK(params_bitwise_equal(m.params.filter_prefix("rem."), rem.params));
    outs.push_back(encode(m, seq));
    CHECK(outs.back() == encode(insert_rem(b, rem), seq));
  }
  CHECK(outs[0] != outs[1]);
}

TEST_CASE("index round trip") {
  TempDir dir("index");
  Rng rng(8);
  const EncoderConfig cfg = small_encoder();
  const AssembledModel m = assemble(init_backbone(cfg, rng));
  const Vocabulary vocab({"alpha", "beta", "gamma", "delta"});
  const std::vector<Document> docs{{"d1", "alpha beta"}, {"d2", "gamma"}, {"d3", "delta alpha gamma"}};
  for (auto kind : {SimilarityKind::inner_product, SimilarityKind::cosine}) {
    const EmbeddingIndex index = build_index(m, docs, vocab, kind);
    save_index(dir.path / "x.idx", index);
    const EmbeddingIndex back = load_index(dir.path / "x.idx");
    CHECK(back.doc_ids == index.doc_ids);
    CHECK(bitwise_equal(back.embeddings, index.embeddings));
    CHECK(back.similarity == kind);
    CHECK(back.model_checksum == index.model_checksum);
    CHECK(back.corpus_checksum == index.corpus_checksum);
  }
  const std::string bytes = slurp(dir.path / "x.idx");
  spit(dir.path / "cut.idx", bytes.substr(0, bytes.size() - 1));
  CHECK_THROWS_AS(load_index(dir.path / "cut.idx"), CheckpointLengthError);
  CHECK_THROWS_AS(load_backbone(dir.path / "x.idx"), CheckpointFormatError);
}

TEST_CASE("experiment config JSON") {
  ExperimentConfig c = testing::tiny_experiment_config(9);
  c.modes = all_modes();
  c.rem_training.loss = LossKind::margin_mse;
  c.encoder.similarity = SimilarityKind::cosine;
  const nlohmann::json j = to_json(c);
  const ExperimentConfig back = from_json(j);
  CHECK(to_json(back) == j);
  CHECK(back.seed == 9);
  CHECK(back.modes == c.modes);

  // Partial documents override only what they name.
  const ExperimentConfig partial = from_json(nlohmann::json::parse(R"({"seed": 4, "target_dam": {"steps": 7}})"));
  CHECK(partial.seed == 4);
  CHECK(partial.target_dam.steps == 7);
  CHECK(partial.target_dam.lr == default_experiment_config().target_dam.lr);

  CHECK_THROWS(from_json(nlohmann::json::parse(R"({"sede": 4})")));
  CHECK_THROWS(from_json(nlohmann::json::parse(R"({"target_dam": {"stepz": 4}})")));
  CHECK_THROWS(from_json(nlohmann::json::parse(R"({"modes": ["dr", "bogus"]})")));
  CHECK_THROWS(from_json(nlohmann::json::parse(R"({"rem_training": {"phase": "dam_adaptation"}})")));
  CHECK(parse_mode(to_string(ExperimentMode::ddr_no_si)) == ExperimentMode::ddr_no_si);
}

TEST_CASE("report rendering") {
  TempDir dir("report");
  CHECK_THROWS_AS(render_report(dir.path), ReportError);
  try {
    render_report(dir.path);
  } catch (const ReportError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("metrics.csv") != std::string::npos);
    CHECK(msg.find("curves.csv") != std::string::npos);
  }
  spit(dir.path / "metrics.csv",
       "method,domain,metric,value\n"
       "dr,t1,ndcg@10,0.200000\n"
       "ddr,t1,ndcg@10,0.300000\n"
       "dr,t2,ndcg@10,0.400000\n"
       "ddr,t2,ndcg@10,0.300000\n");
  spit(dir.path / "curves.csv", "method,domain,step,recall@10\nddr,t1,0,0.100000\nddr,t1,10,0.200000\n");
  CHECK_THROWS_AS(render_report(dir.path), ReportError);  // config still missing
  write_json(dir.path / "resolved-config.json", to_json(default_experiment_config()));
  const std::string md = render_report(dir.path);
  CHECK(md.find("imp.") != std::string::npos);
  CHECK(md.find("+50.0%") != std::string::npos);   // t1: (0.3 - 0.2) / 0.2
  CHECK(md.find("-25.0%") != std::string::npos);   // t2
  CHECK(md.find("0.3000") != std::string::npos);   // mean row
  const fs::path out = write_report(dir.path);
  CHECK(slurp(out) == md);

  spit(dir.path / "metrics.csv", "method,domain,metric,value\n");
  CHECK_THROWS_AS(render_report(dir.path), ReportError);
  spit(dir.path / "metrics.csv", "method,domain,metric\nx,y,z\n");
  CHECK_THROWS(read_metrics_csv(dir.path / "metrics.csv"));
}

TEST_CASE("tiny experiment is deterministic and writes its artifacts") {
  TempDir a("exp_a");
  TempDir b("exp_b");
  ExperimentConfig cfg = testing::tiny_experiment_config(2);
  cfg.modes = all_modes();
  const BenchmarkBundle bundle = make_bundle(cfg);
  const ExperimentResult ra = run_experiment(cfg, bundle, a.path);
  const ExperimentResult rb = run_experiment(cfg, bundle, b.path);
  CHECK(slurp(a.path / "metrics.csv") == slurp(b.path / "metrics.csv"));
  CHECK(slurp(a.path / "curves.csv") == slurp(b.path / "curves.csv"));
  CHECK(slurp(a.path / "assemblies.csv") == slurp(b.path / "assemblies.csv"));
  for (const char* f : {"resolved-config.json", "timings.csv", "report.md", "runs/ddr/target_a.trec",
                        "runs/bm25/target_b.trec"}) {
    CHECK_MESSAGE(fs::exists(a.path / f), f);
  }
  CHECK(ra.supervised_invocations.at("dr") == 1);
  CHECK(ra.supervised_invocations.at("ddr") == 1);
  CHECK(ra.supervised_invocations.at("ddr_no_d") == cfg.benchmark.targets.size());
  for (const char* m : {"bm25", "dr", "ddr", "ddr_no_si", "ddr_no_df", "ddr_no_d"}) {
    CHECK_NOTHROW(ra.target_mean(m, "recall@10"));
  }
  const auto curve = ra.curve("ddr", "target_a");
  REQUIRE(curve.size() >= 2);
  CHECK(curve.front().step == 0);
  CHECK(curve.back().step == cfg.target_dam.steps);
  CHECK(rb.metrics.size() == ra.metrics.size());

  // The resolved config reloads into the same run description.
  const ExperimentConfig back = load_experiment_config(a.path / "resolved-config.json");
  CHECK(to_json(back) == to_json(cfg));

  // Every saved checkpoint loads; target DAMs pair with the source REM.
  std::size_t loaded = 0;
  for (const auto& e : fs::directory_iterator(a.path / "checkpoints")) {
    const CheckpointMeta meta = read_checkpoint_meta(e.path());
    if (meta.kind == ModuleKind::rem) {
      CHECK_NOTHROW(load_rem(e.path()));
    } else {
      CHECK_NOTHROW(load_backbone(e.path(), meta.kind));
    }
    ++loaded;
  }
  CHECK(loaded > 0);
}
