#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "ddr/encoder/encoder.hpp"
#include "ddr/numerics/rng.hpp"

namespace ddr {

class CorpusError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Document {
  std::string id;
  std::string text;
  friend bool operator==(const Document&, const Document&) = default;
};

struct Query {
  std::string id;
  std::string text;
  friend bool operator==(const Query&, const Query&) = default;
};

/// qid -> (docid -> grade)
using Qrels = std::map<std::string, std::map<std::string, int>, std::less<>>;

class Vocabulary {
 public:
  /// Reserved tokens first, then `words` in order. Duplicates are an error.
  explicit Vocabulary(const std::vector<std::string>& words = {});

  std::int32_t id(std::string_view token) const;  // kUnk when absent
  bool contains(std::string_view token) const;
  const std::string& token(std::int32_t id) const;
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int32_t> ids_;
};

/// Lowercased whitespace split with [UNK] fallback, wrapped in [CLS] ...
/// [SEP], truncated to max_len ids with [SEP] kept last.
TokenSequence tokenize(std::string_view text, const Vocabulary& vocab, std::size_t max_len);

std::vector<std::string> split_words(std::string_view text);

// File formats: corpus JSON lines {"doc_id", "text"}; queries "qid\ttext";
// qrels "qid 0 docid grade".
std::vector<Document> load_corpus(const std::filesystem::path& path);
std::vector<Query> load_queries(const std::filesystem::path& path);
/// With `docs`/`queries` given, ids are checked against them.
Qrels load_qrels(const std::filesystem::path& path, const std::vector<Document>* docs = nullptr,
                 const std::vector<Query>* queries = nullptr);

void save_corpus(const std::filesystem::path& path, const std::vector<Document>& docs);
void save_queries(const std::filesystem::path& path, const std::vector<Query>& queries);
void save_qrels(const std::filesystem::path& path, const Qrels& qrels);

/// Fraction of distinct query words present in the document. Pure in its
/// arguments; serves as the distillation teacher.
double teacher_score(std::string_view query_text, std::string_view doc_text);

struct DomainSpec {
  std::string name;
  std::size_t vocab_words = 700;
  // Jaccard similarity between this domain's word set and the source's.
  double overlap = 1.0;
  double zipf_exponent = 1.0;
  std::size_t doc_len_min = 20;
  std::size_t doc_len_max = 40;
  std::size_t num_docs = 1000;
  std::size_t num_queries = 200;
  std::size_t num_topics = 50;
  std::size_t topic_words = 10;
  // Chance that a document token is drawn from its topic.
  double topic_prob = 0.4;
  // Query = exact words copied from the relevant document plus same-topic
  // words absent from it.
  std::size_t query_exact = 4;
  std::size_t query_soft = 2;
};

void validate(const DomainSpec& spec);

struct DomainData {
  std::string name;
  std::vector<std::string> words;  // this domain's word set
  std::vector<Document> docs;
  std::vector<Query> queries;
  Qrels qrels;
};

struct SourceData : DomainData {
  std::vector<Query> dev_queries;
  Qrels dev_qrels;
  // qid -> non-relevant docs ranked by teacher score
  std::map<std::string, std::vector<std::string>, std::less<>> hard_negatives;
};

struct BenchmarkBundle {
  Vocabulary vocab;
  SourceData source;
  std::vector<DomainData> targets;
};

struct BenchmarkSpec {
  DomainSpec source;
  std::vector<DomainSpec> targets;
  std::size_t source_dev_queries = 200;
  std::size_t hard_negatives = 8;
};

BenchmarkSpec default_benchmark_spec();

BenchmarkBundle generate_synthetic_benchmark(const BenchmarkSpec& spec, Rng& rng);

/// Layout: vocab.txt, bundle.json, source/{corpus.jsonl, queries.tsv,
/// qrels.txt, dev_queries.tsv, dev_qrels.txt, hard_negatives.tsv,
/// teacher_scores.tsv}, targets/<name>/{corpus.jsonl, queries.tsv,
/// qrels.txt, words.txt}.
void save_bundle(const std::filesystem::path& dir, const BenchmarkBundle& bundle);
BenchmarkBundle load_bundle(const std::filesystem::path& dir);

/// Jaccard similarity of the word sets actually used by two corpora.
double corpus_jaccard(const std::vector<Document>& a, const std::vector<Document>& b);

}  // namespace ddr
