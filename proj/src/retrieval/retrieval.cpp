#include "ddr/retrieval/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "ddr/numerics/kernels.hpp"

namespace ddr {

namespace {

struct Fnv {
  std::uint64_t h = 1469598103934665603ull;
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= c[i];
      h *= 1099511628211ull;
    }
  }
  void str(const std::string& s) {
    bytes(s.data(), s.size());
    bytes("\0", 1);
  }
  std::string hex() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
  }
};

void normalize_rows(Tensor<float>& t) {
  for (std::size_t r = 0; r < t.rows(); ++r) {
    auto row = t.row(r);
    double n = 0.0;
    for (float v : row) n += static_cast<double>(v) * v;
    if (n == 0.0) throw std::domain_error("cosine index: zero embedding in row " + std::to_string(r));
    const float inv = static_cast<float>(1.0 / std::sqrt(n));
    for (float& v : row) v *= inv;
  }
}

bool better(const ScoredDoc& a, const ScoredDoc& b) { return a.score != b.score ? a.score > b.score : a.id < b.id; }

}  // namespace

std::string checksum(const ParamSet<float>& params) {
  Fnv f;
  for (const auto& [name, e] : params) {
    f.str(name);
    f.bytes(e.value.data(), e.value.numel() * sizeof(float));
  }
  return f.hex();
}

std::string checksum(const std::vector<Document>& docs) {
  Fnv f;
  for (const auto& d : docs) {
    f.str(d.id);
    f.str(d.text);
  }
  return f.hex();
}

EmbeddingIndex build_index(const AssembledModel& model, const std::vector<Document>& docs, const Vocabulary& vocab,
                           SimilarityKind similarity, const IndexOptions& options) {
  if (docs.empty()) throw std::invalid_argument("build_index: empty corpus");
  if (vocab.size() > model.config.vocab_size) {
    throw std::invalid_argument("build_index: vocabulary of " + std::to_string(vocab.size()) +
                                " tokens exceeds the model's " + std::to_string(model.config.vocab_size));
  }
  EmbeddingIndex index;
  index.similarity = similarity;
  index.model_checksum = checksum(model.params);
  index.corpus_checksum = checksum(docs);
  std::vector<TokenSequence> seqs;
  seqs.reserve(docs.size());
  for (const auto& d : docs) {
    index.doc_ids.push_back(d.id);
    seqs.push_back(tokenize(d.text, vocab, model.config.max_len));
  }
  const std::size_t bs = std::max<std::size_t>(1, options.batch_size), d = model.config.hidden_dim;
  index.embeddings = Tensor<float>(Shape{docs.size(), d});
  const std::size_t chunks = (seqs.size() + bs - 1) / bs;
  RemHooks storage;
  const RemHooks* hooks = model.hooks_or_null(storage);
  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic) if (options.parallel && chunks > 1)
  for (std::size_t c = 0; c < chunks; ++c) {
    try {
      const std::size_t start = c * bs, n = std::min(bs, seqs.size() - start);
      const Tensor<float> e =
          encode_batch(model.config, model.params, hooks, std::span(seqs).subspan(start, n), n);
      std::copy(e.values().begin(), e.values().end(), index.embeddings.data() + start * d);
    } catch (...) {
#pragma omp critical
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  if (!index.embeddings.all_finite()) throw std::domain_error("build_index: non-finite document embedding");
  if (similarity == SimilarityKind::cosine) normalize_rows(index.embeddings);
  return index;
}

Tensor<float> encode_queries(const AssembledModel& model, const std::vector<Query>& queries, const Vocabulary& vocab) {
  std::vector<TokenSequence> seqs;
  seqs.reserve(queries.size());
  for (const auto& q : queries) seqs.push_back(tokenize(q.text, vocab, model.config.max_len));
  return encode_batch(model, seqs);
}

Ranking top_k(std::vector<ScoredDoc> scored, std::size_t k) {
  k = std::min(k, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(k), scored.end(), better);
  scored.resize(k);
  return scored;
}

namespace {

Ranking rank_scores(const EmbeddingIndex& index, const float* scores, std::size_t k) {
  std::vector<ScoredDoc> all;
  all.reserve(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) all.push_back({index.doc_ids[i], scores[i]});
  return top_k(std::move(all), k);
}

std::vector<float> prepared_query(const EmbeddingIndex& index, std::span<const float> query) {
  if (query.size() != index.dim()) {
    throw std::invalid_argument("search: query dimension " + std::to_string(query.size()) + " != index dimension " +
                                std::to_string(index.dim()));
  }
  std::vector<float> q(query.begin(), query.end());
  if (index.similarity == SimilarityKind::cosine) {
    Tensor<float> t(Shape{1, q.size()}, q);
    normalize_rows(t);
    q.assign(t.values().begin(), t.values().end());
  }
  return q;
}

}  // namespace

Ranking search(const EmbeddingIndex& index, std::span<const float> query, std::size_t k) {
  if (k == 0) throw std::invalid_argument("search: k must be >= 1");
  const std::vector<float> q = prepared_query(index, query);
  std::vector<float> scores(index.size());
  kernels::score_matrix(1, index.size(), index.dim(), q.data(), index.embeddings.data(), scores.data());
  return rank_scores(index, scores.data(), k);
}

RunFile search_all(const EmbeddingIndex& index, const std::vector<Query>& queries, const Tensor<float>& query_embs,
                   std::size_t k) {
  if (query_embs.rows() != queries.size()) throw std::invalid_argument("search_all: one embedding per query needed");
  RunFile run;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    const auto row = std::span<const float>(query_embs.data() + i * query_embs.cols(), query_embs.cols());
    run[queries[i].id] = search(index, row, k);
  }
  return run;
}

Bm25Index::Bm25Index(const std::vector<Document>& docs, double k1, double b) : k1_(k1), b_(b) {
  if (docs.empty()) throw std::invalid_argument("bm25: empty corpus");
  std::size_t total = 0;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    doc_ids_.push_back(docs[i].id);
    auto words = split_words(docs[i].text);
    doc_len_.push_back(words.size());
    total += words.size();
    std::sort(words.begin(), words.end());
    for (std::size_t j = 0; j < words.size();) {
      std::size_t e = j;
      while (e < words.size() && words[e] == words[j]) ++e;
      postings_[words[j]].push_back({i, e - j});
      j = e;
    }
  }
  avgdl_ = static_cast<double>(total) / static_cast<double>(docs.size());
}

double Bm25Index::idf(const std::string& term) const {
  auto it = postings_.find(term);
  const double df = it == postings_.end() ? 0.0 : static_cast<double>(it->second.size());
  const double n = static_cast<double>(doc_ids_.size());
  return std::log(1.0 + (n - df + 0.5) / (df + 0.5));
}

Ranking Bm25Index::search(const std::vector<std::string>& query_terms, std::size_t k) const {
  if (k == 0) throw std::invalid_argument("bm25: k must be >= 1");
  std::vector<double> score(doc_ids_.size(), 0.0);
  for (const auto& term : query_terms) {
    auto it = postings_.find(term);
    if (it == postings_.end()) continue;
    const double w = idf(term);
    for (const Posting& p : it->second) {
      const double tf = static_cast<double>(p.tf);
      const double norm = k1_ * (1.0 - b_ + b_ * static_cast<double>(doc_len_[p.doc]) / avgdl_);
      score[p.doc] += w * tf * (k1_ + 1.0) / (tf + norm);
    }
  }
  std::vector<ScoredDoc> all;
  all.reserve(score.size());
  for (std::size_t i = 0; i < score.size(); ++i) all.push_back({doc_ids_[i], score[i]});
  return top_k(std::move(all), k);
}

Ranking bm25_search(const std::vector<Document>& docs, const std::vector<std::string>& query_terms, std::size_t k,
                    double k1, double b) {
  return Bm25Index(docs, k1, b).search(query_terms, k);
}

RunFile bm25_search_all(const std::vector<Document>& docs, const std::vector<Query>& queries, std::size_t k) {
  const Bm25Index index(docs);
  RunFile run;
  for (const auto& q : queries) run[q.id] = index.search(split_words(q.text), k);
  return run;
}

double ndcg_for_query(const Ranking& ranking, const std::map<std::string, int>& judged, std::size_t k) {
  std::vector<int> grades;
  for (const auto& [_, g] : judged)
    if (g > 0) grades.push_back(g);
  if (grades.empty()) return 0.0;
  std::sort(grades.rbegin(), grades.rend());
  double ideal = 0.0, dcg = 0.0;
  for (std::size_t i = 0; i < std::min(k, grades.size()); ++i) ideal += grades[i] / std::log2(i + 2.0);
  for (std::size_t i = 0; i < std::min(k, ranking.size()); ++i) {
    auto it = judged.find(ranking[i].id);
    if (it != judged.end() && it->second > 0) dcg += it->second / std::log2(i + 2.0);
  }
  return dcg / ideal;
}

double recall_for_query(const Ranking& ranking, const std::map<std::string, int>& judged, std::size_t k) {
  std::size_t relevant = 0, found = 0;
  for (const auto& [_, g] : judged) relevant += g > 0;
  if (relevant == 0) return 0.0;
  for (std::size_t i = 0; i < std::min(k, ranking.size()); ++i) {
    auto it = judged.find(ranking[i].id);
    found += it != judged.end() && it->second > 0;
  }
  return static_cast<double>(found) / static_cast<double>(relevant);
}

namespace {

template <typename F>
double mean_over_judged(const RunFile& run, const Qrels& qrels, F metric) {
  double total = 0.0;
  std::size_t n = 0;
  static const Ranking kEmpty;
  for (const auto& [qid, judged] : qrels) {
    if (std::none_of(judged.begin(), judged.end(), [](const auto& kv) { return kv.second > 0; })) continue;
    auto it = run.find(qid);
    total += metric(it == run.end() ? kEmpty : it->second, judged);
    ++n;
  }
  return n == 0 ? 0.0 : total / static_cast<double>(n);
}

}  // namespace

double ndcg_at_k(const RunFile& run, const Qrels& qrels, std::size_t k) {
  if (k == 0) throw std::invalid_argument("ndcg_at_k: k must be >= 1");
  return mean_over_judged(run, qrels, [k](const Ranking& r, const auto& j) { return ndcg_for_query(r, j, k); });
}

double recall_at_k(const RunFile& run, const Qrels& qrels, std::size_t k) {
  if (k == 0) throw std::invalid_argument("recall_at_k: k must be >= 1");
  return mean_over_judged(run, qrels, [k](const Ranking& r, const auto& j) { return recall_for_query(r, j, k); });
}

void write_run(const std::filesystem::path& path, const RunFile& run, const std::string& tag) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  char buf[64];
  for (const auto& [qid, ranking] : run) {
    for (std::size_t i = 0; i < ranking.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.6f", ranking[i].score);
      out << qid << " Q0 " << ranking[i].id << ' ' << (i + 1) << ' ' << buf << ' ' << tag << '\n';
    }
  }
}

RunFile read_run(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  RunFile run;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string qid, q0, docid, tag;
    std::size_t rank = 0;
    double score = 0;
    if (!(ss >> qid >> q0 >> docid >> rank >> score >> tag)) {
      throw std::runtime_error(path.string() + ":" + std::to_string(n) + ": malformed run line");
    }
    run[qid].push_back({docid, score});
  }
  for (auto& [_, r] : run) std::stable_sort(r.begin(), r.end(), better);
  return run;
}

}  // namespace ddr
