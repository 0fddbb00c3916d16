#include <filesystem>

#include "../oracles/ranking_oracle.hpp"
#include "ddr/retrieval/retrieval.hpp"
#include "doctest.h"

using namespace ddr;

namespace {

EmbeddingIndex manual_index(std::vector<std::string> ids, std::vector<float> values, std::size_t dim) {
  EmbeddingIndex index;
  index.doc_ids = std::move(ids);
  index.embeddings = Tensor<float>(Shape{index.doc_ids.size(), dim}, std::move(values));
  return index;
}

oracle::Ranked as_pairs(const Ranking& r) {
  oracle::Ranked out;
  for (const auto& s : r) out.emplace_back(s.id, s.score);
  return out;
}

AssembledModel small_model(std::size_t vocab_size) {
  EncoderConfig cfg;
  cfg.num_layers = 1;
  cfg.hidden_dim = 16;
  cfg.num_heads = 2;
  cfg.ffn_dim = 32;
  cfg.vocab_size = vocab_size;
  cfg.max_len = 16;
  Rng rng(1);
  return assemble(init_backbone(cfg, rng));
}

}  // namespace

TEST_CASE("search examples") {
  const EmbeddingIndex index = manual_index({"d1", "d2", "d3"}, {5, 2, 9}, 1);
  const std::vector<float> q{1};
  const Ranking top2 = search(index, q, 2);
  REQUIRE(top2.size() == 2);
  CHECK(top2[0].id == "d3");
  CHECK(top2[1].id == "d1");
  CHECK(search(index, q, 10).size() == 3);
  CHECK_THROWS_AS(search(index, std::vector<float>{1, 2}, 1), std::invalid_argument);
  CHECK_THROWS_AS(search(index, q, 0), std::invalid_argument);

  const EmbeddingIndex tied = manual_index({"b", "a", "c"}, {1, 1, 1, 1, 0, 0}, 2);
  const Ranking r = search(tied, std::vector<float>{1, 1}, 3);
  CHECK(r[0].id == "a");
  CHECK(r[1].id == "b");
  CHECK(r[2].id == "c");
}

TEST_CASE("search equals a full-scan sort on random indexes") {
  Rng rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng.below(60), dim = 1 + rng.below(8);
    std::vector<std::string> ids;
    std::vector<std::vector<float>> rows;
    std::vector<float> flat;
    for (std::size_t i = 0; i < n; ++i) {
      ids.push_back("doc" + std::to_string(rng.below(1000)) + "_" + std::to_string(i));
      std::vector<float> row(dim);
      // Coarse values force plenty of exact ties.
      for (auto& v : row) v = static_cast<float>(static_cast<int>(rng.below(5)) - 2);
      rows.push_back(row);
      flat.insert(flat.end(), row.begin(), row.end());
    }
    std::vector<float> q(dim);
    for (auto& v : q) v = static_cast<float>(static_cast<int>(rng.below(5)) - 2);
    const std::size_t k = 1 + rng.below(n + 5);
    const Ranking got = search(manual_index(ids, flat, dim), q, k);
    CHECK(as_pairs(got) == oracle::full_scan(ids, rows, q, k));
  }
}

TEST_CASE("index build is deterministic, parallel equals serial") {
  const Vocabulary vocab({"a", "b", "c", "d", "e"});
  const AssembledModel model = small_model(vocab.size());
  std::vector<Document> docs;
  for (int i = 0; i < 150; ++i) docs.push_back({"d" + std::to_string(i), std::string(i % 2 ? "a b" : "c d e") + " a"});
  IndexOptions par{7, true}, ser{7, false};
  const EmbeddingIndex p = build_index(model, docs, vocab, SimilarityKind::inner_product, par);
  const EmbeddingIndex s = build_index(model, docs, vocab, SimilarityKind::inner_product, ser);
  CHECK(bitwise_equal(p.embeddings, s.embeddings));
  CHECK(bitwise_equal(p.embeddings, build_index(model, docs, vocab, SimilarityKind::inner_product, par).embeddings));
  CHECK(p.model_checksum == checksum(model.params));

  const std::vector<Document> one{{"only", "b c"}};
  const EmbeddingIndex single = build_index(model, one, vocab, SimilarityKind::inner_product);
  const auto direct = encode(model, tokenize("b c", vocab, model.config.max_len));
  CHECK(std::vector<float>(single.embeddings.values().begin(), single.embeddings.values().end()) == direct);
  CHECK_THROWS_AS(build_index(model, {}, vocab, SimilarityKind::inner_product), std::invalid_argument);

  const EmbeddingIndex cos = build_index(model, docs, vocab, SimilarityKind::cosine);
  const Ranking r = search(cos, std::span<const float>(direct), 3);
  for (const auto& sd : r) CHECK(sd.score <= 1.0 + 1e-6);
}

TEST_CASE("bm25 examples") {
  const std::vector<Document> docs{{"d1", "apple pie"}, {"d2", "banana split"}, {"d3", "cherry tart"}, {"d4", "plum"}};
  const Bm25Index index(docs);
  CHECK(index.idf("banana") == doctest::Approx(std::log(1.0 + 3.5 / 1.5)).epsilon(1e-12));
  CHECK(index.idf("banana") == doctest::Approx(1.20397).epsilon(1e-5));
  const Ranking r = index.search({"banana"}, 4);
  CHECK(r[0].id == "d2");
  CHECK(r[1].score == 0.0);
  CHECK(r[1].id == "d1");
  const Ranking none = index.search({"kiwi"}, 4);
  for (const auto& sd : none) CHECK(sd.score == 0.0);
  CHECK(bm25_search(docs, {"plum", "kiwi"}, 1)[0].id == "d4");
}

TEST_CASE("metric fixtures") {
  const std::map<std::string, int> judged{{"a", 1}, {"c", 1}};
  const Ranking run{{"a", 3}, {"b", 2}, {"c", 1}};
  CHECK(ndcg_for_query(run, judged, 3) == doctest::Approx(1.5 / (1.0 + 1.0 / std::log2(3.0))).epsilon(1e-9));
  CHECK(ndcg_for_query(run, judged, 3) == doctest::Approx(0.9197).epsilon(1e-4));
  CHECK(ndcg_for_query({{"a", 2}, {"c", 1}}, judged, 10) == doctest::Approx(1.0));
  CHECK(ndcg_for_query({{"x", 2}, {"y", 1}}, judged, 10) == 0.0);
  CHECK(recall_for_query(run, judged, 3) == 1.0);
  CHECK(recall_for_query(run, judged, 1) == 0.5);

  RunFile rf{{"q1", run}, {"q2", {{"z", 1}}}};
  Qrels qrels{{"q1", judged}, {"q2", {{"z", 0}}}};
  CHECK(recall_at_k(rf, qrels, 1) == 0.5);
  qrels["q3"] = {{"a", 1}};
  CHECK(recall_at_k(rf, qrels, 1) == 0.25);
}

TEST_CASE("metrics agree with a brute-force evaluation on random instances") {
  Rng rng(77);
  for (int trial = 0; trial < 50; ++trial) {
    RunFile run;
    Qrels qrels;
    std::map<std::string, oracle::Ranked> oracle_run;
    const std::size_t nq = 1 + rng.below(6);
    for (std::size_t q = 0; q < nq; ++q) {
      const std::string qid = "q" + std::to_string(q);
      std::vector<ScoredDoc> docs;
      for (std::size_t d = 0; d < 1 + rng.below(15); ++d) {
        docs.push_back({"d" + std::to_string(d), static_cast<double>(rng.below(10))});
        if (rng.bernoulli(0.3)) qrels[qid]["d" + std::to_string(d)] = static_cast<int>(rng.below(4));
      }
      if (rng.bernoulli(0.2)) qrels[qid]["unretrieved"] = 2;
      const Ranking ranked = top_k(docs, docs.size());
      run[qid] = ranked;
      oracle_run[qid] = as_pairs(ranked);
    }
    for (std::size_t k : {1, 3, 10}) {
      double nd = 0, rc = 0;
      std::size_t n = 0;
      for (const auto& [qid, judged] : qrels) {
        bool any = false;
        for (const auto& kv : judged) any |= kv.second > 0;
        if (!any) continue;
        nd += oracle::ndcg(oracle_run[qid], judged, k);
        rc += oracle::recall(oracle_run[qid], judged, k);
        ++n;
      }
      const double want_nd = n ? nd / n : 0.0, want_rc = n ? rc / n : 0.0;
      CHECK(std::abs(ndcg_at_k(run, qrels, k) - want_nd) < 1e-6);
      CHECK(std::abs(recall_at_k(run, qrels, k) - want_rc) < 1e-6);
      CHECK(ndcg_at_k(run, qrels, k) >= 0.0);
      CHECK(ndcg_at_k(run, qrels, k) <= 1.0 + 1e-12);
    }
  }
}

TEST_CASE("metrics ignore monotone score transforms and extra irrelevant documents") {
  const Qrels qrels{{"q", {{"b", 1}, {"d", 2}}}};
  const RunFile base{{"q", top_k({{"a", 4}, {"b", 3}, {"c", 2}, {"d", 1}}, 10)}};
  const RunFile squashed{{"q", top_k({{"a", std::exp(4.0)}, {"b", std::exp(3.0)}, {"c", std::exp(2.0)},
                                      {"d", std::exp(1.0)}}, 10)}};
  const RunFile extra{{"q", top_k({{"a", 4}, {"b", 3}, {"c", 2}, {"d", 1}, {"e", -5}}, 10)}};
  CHECK(ndcg_at_k(base, qrels, 3) == ndcg_at_k(squashed, qrels, 3));
  CHECK(ndcg_at_k(base, qrels, 4) == ndcg_at_k(extra, qrels, 4));
  CHECK(recall_at_k(base, qrels, 4) == recall_at_k(extra, qrels, 4));
}

TEST_CASE("run file round trip") {
  const RunFile run{{"q1", {{"d2", 3.5}, {"d1", 1.25}}}, {"q2", {{"d9", -0.5}}}};
  const auto path = std::filesystem::temp_directory_path() / "ddr_test_run.trec";
  write_run(path, run, "unit");
  CHECK(read_run(path) == run);
}
