#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "ddr/corpus/corpus.hpp"
#include "ddr/rem/rem.hpp"

namespace ddr {

struct ScoredDoc {
  std::string id;
  double score = 0.0;
  friend bool operator==(const ScoredDoc&, const ScoredDoc&) = default;
};

/// Descending by score, ties by ascending doc id.
using Ranking = std::vector<ScoredDoc>;
using RunFile = std::map<std::string, Ranking, std::less<>>;

struct EmbeddingIndex {
  std::vector<std::string> doc_ids;
  Tensor<float> embeddings;  // rows follow doc_ids; unit rows for cosine
  SimilarityKind similarity = SimilarityKind::inner_product;
  std::string model_checksum;
  std::string corpus_checksum;

  std::size_t size() const { return doc_ids.size(); }
  std::size_t dim() const { return embeddings.cols(); }
};

std::string checksum(const ParamSet<float>& params);
std::string checksum(const std::vector<Document>& docs);

struct IndexOptions {
  std::size_t batch_size = 64;
  // Encode document batches concurrently; rows are identical either way.
  bool parallel = true;
};

/// Throws std::invalid_argument for an empty corpus or a vocabulary larger
/// than the model's.
EmbeddingIndex build_index(const AssembledModel& model, const std::vector<Document>& docs, const Vocabulary& vocab,
                           SimilarityKind similarity, const IndexOptions& options = {});

Tensor<float> encode_queries(const AssembledModel& model, const std::vector<Query>& queries, const Vocabulary& vocab);

/// Exact top-k; k above the index size returns every document.
Ranking search(const EmbeddingIndex& index, std::span<const float> query, std::size_t k);
RunFile search_all(const EmbeddingIndex& index, const std::vector<Query>& queries, const Tensor<float>& query_embs,
                   std::size_t k);

/// Orders (score desc, id asc) and keeps the first k.
Ranking top_k(std::vector<ScoredDoc> scored, std::size_t k);

class Bm25Index {
 public:
  explicit Bm25Index(const std::vector<Document>& docs, double k1 = 0.9, double b = 0.4);

  Ranking search(const std::vector<std::string>& query_terms, std::size_t k) const;
  double idf(const std::string& term) const;
  std::size_t size() const { return doc_ids_.size(); }

 private:
  struct Posting {
    std::size_t doc;
    std::size_t tf;
  };
  double k1_, b_, avgdl_ = 0.0;
  std::vector<std::string> doc_ids_;
  std::vector<std::size_t> doc_len_;
  std::unordered_map<std::string, std::vector<Posting>> postings_;
};

Ranking bm25_search(const std::vector<Document>& docs, const std::vector<std::string>& query_terms, std::size_t k,
                    double k1 = 0.9, double b = 0.4);
RunFile bm25_search_all(const std::vector<Document>& docs, const std::vector<Query>& queries, std::size_t k);

/// Per-query metrics; 0 when nothing relevant is judged.
double ndcg_for_query(const Ranking& ranking, const std::map<std::string, int>& judged, std::size_t k);
double recall_for_query(const Ranking& ranking, const std::map<std::string, int>& judged, std::size_t k);

/// Means over queries with at least one relevant document (grade > 0). A
/// judged query missing from the run scores 0.
double ndcg_at_k(const RunFile& run, const Qrels& qrels, std::size_t k = 10);
double recall_at_k(const RunFile& run, const Qrels& qrels, std::size_t k);

/// TREC format: "qid Q0 docid rank score tag".
void write_run(const std::filesystem::path& path, const RunFile& run, const std::string& tag);
RunFile read_run(const std::filesystem::path& path);

}  // namespace ddr
