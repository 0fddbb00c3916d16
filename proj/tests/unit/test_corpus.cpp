#include <filesystem>
#include <fstream>
#include <set>

#include "ddr/corpus/corpus.hpp"
#include "doctest.h"

using namespace ddr;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("ddr_test_corpus_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write(const fs::path& p, const std::string& content) { std::ofstream(p) << content; }

BenchmarkSpec small_spec(double overlap) {
  BenchmarkSpec spec;
  spec.source.name = "src";
  spec.source.vocab_words = 300;
  spec.source.num_docs = 400;
  spec.source.num_queries = 100;
  spec.source.num_topics = 20;
  spec.source_dev_queries = 30;
  spec.hard_negatives = 3;
  DomainSpec t = spec.source;
  t.name = "tgt";
  t.overlap = overlap;
  t.num_queries = 50;
  spec.targets.push_back(t);
  return spec;
}

}  // namespace

TEST_CASE("tokenize examples") {
  const Vocabulary vocab({"x", "y", "z", "a", "b"});
  CHECK(vocab.id("a") == 8);
  CHECK(tokenize("a b a", vocab, 16).ids == std::vector<std::int32_t>{2, 8, 9, 8, 3});
  CHECK(tokenize("A  q", vocab, 16).ids == std::vector<std::int32_t>{2, 8, special_tokens::kUnk, 3});
  const auto cut = tokenize("a a a a a a a a a a", vocab, 5);
  CHECK(cut.ids.size() == 5);
  CHECK(cut.ids.back() == special_tokens::kSep);
  CHECK(tokenize("", vocab, 5).ids == std::vector<std::int32_t>{2, 3});
  CHECK(vocab.token(special_tokens::kMask) == "[MASK]");
  CHECK_THROWS_AS(Vocabulary({"a", "a"}), CorpusError);
}

TEST_CASE("file loaders") {
  const fs::path dir = scratch("io");
  write(dir / "c.jsonl", "{\"doc_id\":\"d1\",\"text\":\"hello world\"}\n{\"doc_id\":\"d2\",\"text\":\"bye\"}\n");
  const auto docs = load_corpus(dir / "c.jsonl");
  REQUIRE(docs.size() == 2);
  CHECK(docs[0] == Document{"d1", "hello world"});

  write(dir / "q.tsv", "q1\thello\n");
  const auto queries = load_queries(dir / "q.tsv");
  write(dir / "r.txt", "q1 0 d1 1\n");
  const Qrels qrels = load_qrels(dir / "r.txt", &docs, &queries);
  CHECK(qrels.at("q1").at("d1") == 1);

  write(dir / "bad_ref.txt", "q1 0 d9 1\n");
  try {
    load_qrels(dir / "bad_ref.txt", &docs, &queries);
    FAIL("expected error");
  } catch (const CorpusError& e) {
    CHECK(std::string(e.what()).find("d9") != std::string::npos);
  }
  write(dir / "bad.jsonl", "{\"doc_id\":\"d1\",\"text\":\"a\"}\n{oops\n");
  try {
    load_corpus(dir / "bad.jsonl");
    FAIL("expected error");
  } catch (const CorpusError& e) {
    CHECK(std::string(e.what()).find(":2") != std::string::npos);
  }
  write(dir / "dup.jsonl", "{\"doc_id\":\"d1\",\"text\":\"a\"}\n{\"doc_id\":\"d1\",\"text\":\"b\"}\n");
  CHECK_THROWS_AS(load_corpus(dir / "dup.jsonl"), CorpusError);
  write(dir / "dupq.tsv", "q1\ta\nq1\tb\n");
  CHECK_THROWS_AS(load_queries(dir / "dupq.tsv"), CorpusError);
  write(dir / "badq.tsv", "q1 no tab\n");
  CHECK_THROWS_AS(load_queries(dir / "badq.tsv"), CorpusError);
  write(dir / "badr.txt", "q1 0 d1\n");
  CHECK_THROWS_AS(load_qrels(dir / "badr.txt"), CorpusError);
  CHECK_THROWS_AS(load_corpus(dir / "missing.jsonl"), CorpusError);
}

TEST_CASE("teacher oracle") {
  CHECK(teacher_score("a b c d", "x a b y") == doctest::Approx(0.5));
  CHECK(teacher_score("a a", "a") == doctest::Approx(1.0));
  CHECK(teacher_score("a b", "c") == 0.0);
  CHECK(teacher_score("q r s", "s t q") == teacher_score("q r s", "s t q"));
}

TEST_CASE("generated benchmark structure") {
  Rng rng(3);
  const BenchmarkBundle b = generate_synthetic_benchmark(small_spec(0.3), rng);
  REQUIRE(b.targets.size() == 1);
  std::set<std::string> source_qids, target_qids;
  for (const auto& q : b.source.queries) source_qids.insert(q.id);
  for (const auto& q : b.source.dev_queries) CHECK(source_qids.insert(q.id).second);
  for (const auto& q : b.targets[0].queries) target_qids.insert(q.id);
  for (const auto& id : target_qids) CHECK(source_qids.count(id) == 0);

  auto check_qrels = [](const DomainData& d, const std::vector<Query>& qs, const Qrels& qrels) {
    std::set<std::string> doc_ids;
    for (const auto& doc : d.docs) doc_ids.insert(doc.id);
    for (const auto& q : qs) {
      REQUIRE(qrels.count(q.id) == 1);
      CHECK(qrels.at(q.id).size() >= 1);
      for (const auto& [docid, grade] : qrels.at(q.id)) {
        CHECK(doc_ids.count(docid) == 1);
        CHECK(grade == 1);
      }
    }
  };
  check_qrels(b.source, b.source.queries, b.source.qrels);
  check_qrels(b.source, b.source.dev_queries, b.source.dev_qrels);
  check_qrels(b.targets[0], b.targets[0].queries, b.targets[0].qrels);

  for (const auto& q : b.source.queries) {
    const auto& negs = b.source.hard_negatives.at(q.id);
    CHECK(negs.size() <= 3);
    for (const auto& n : negs) CHECK(b.source.qrels.at(q.id).count(n) == 0);
  }
  for (const auto& w : b.targets[0].words) CHECK(b.vocab.contains(w));
}

TEST_CASE("overlap controls the word-set Jaccard") {
  for (std::uint64_t seed : {1, 2, 3}) {
    Rng rng(seed);
    const BenchmarkBundle b = generate_synthetic_benchmark(small_spec(0.2), rng);
    CHECK(std::abs(corpus_jaccard(b.source.docs, b.targets[0].docs) - 0.2) <= 0.05);
  }
  Rng full(4);
  const BenchmarkBundle same = generate_synthetic_benchmark(small_spec(1.0), full);
  CHECK(same.source.words == same.targets[0].words);

  double prev = 2.0;
  for (double overlap : {0.9, 0.6, 0.3, 0.1}) {
    double mean = 0.0;
    for (std::uint64_t seed : {5, 6, 7}) {
      Rng rng(seed);
      const BenchmarkBundle b = generate_synthetic_benchmark(small_spec(overlap), rng);
      mean += corpus_jaccard(b.source.docs, b.targets[0].docs) / 3.0;
    }
    CHECK(mean < prev);
    prev = mean;
  }
}

TEST_CASE("generation is reproducible and survives a disk round trip") {
  Rng r1(9), r2(9);
  const BenchmarkBundle a = generate_synthetic_benchmark(small_spec(0.3), r1);
  const BenchmarkBundle b = generate_synthetic_benchmark(small_spec(0.3), r2);
  CHECK(a.source.docs == b.source.docs);
  CHECK(a.targets[0].queries == b.targets[0].queries);

  const fs::path dir = scratch("bundle");
  save_bundle(dir, a);
  const BenchmarkBundle c = load_bundle(dir);
  CHECK(c.vocab.tokens() == a.vocab.tokens());
  CHECK(c.source.docs == a.source.docs);
  CHECK(c.source.queries == a.source.queries);
  CHECK(c.source.dev_qrels == a.source.dev_qrels);
  CHECK(c.source.hard_negatives == a.source.hard_negatives);
  CHECK(c.targets[0].docs == a.targets[0].docs);
  CHECK(c.targets[0].qrels == a.targets[0].qrels);
  CHECK(c.targets[0].words == a.targets[0].words);
  CHECK(fs::exists(dir / "source" / "teacher_scores.tsv"));
}
