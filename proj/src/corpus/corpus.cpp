#include "ddr/corpus/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_set>

#include "json.hpp"

namespace ddr {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::vector<std::string>& reserved_tokens() {
  static const std::vector<std::string> kTokens{"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};
  return kTokens;
}

std::ifstream open_in(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw CorpusError("cannot open " + path.string());
  return in;
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw CorpusError("cannot write " + path.string());
  return out;
}

std::string where(const fs::path& path, std::size_t line) { return path.string() + ":" + std::to_string(line); }

bool blank(const std::string& line) {
  return std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); });
}

}  // namespace

Vocabulary::Vocabulary(const std::vector<std::string>& words) {
  for (const auto& t : reserved_tokens()) {
    ids_.emplace(t, static_cast<std::int32_t>(tokens_.size()));
    tokens_.push_back(t);
  }
  for (const auto& w : words) {
    if (w.empty()) throw CorpusError("vocabulary: empty token");
    if (!ids_.emplace(w, static_cast<std::int32_t>(tokens_.size())).second) {
      throw CorpusError("vocabulary: duplicate token " + w);
    }
    tokens_.push_back(w);
  }
}

std::int32_t Vocabulary::id(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  return it == ids_.end() ? special_tokens::kUnk : it->second;
}

bool Vocabulary::contains(std::string_view token) const { return ids_.count(std::string(token)) > 0; }

const std::string& Vocabulary::token(std::int32_t id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw std::out_of_range("vocabulary: id " + std::to_string(id) + " out of range");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

void Vocabulary::save(const fs::path& path) const {
  auto out = open_out(path);
  for (const auto& t : tokens_) out << t << '\n';
}

Vocabulary Vocabulary::load(const fs::path& path) {
  auto in = open_in(path);
  std::vector<std::string> words;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (n <= reserved_tokens().size()) {
      if (line != reserved_tokens()[n - 1]) {
        throw CorpusError(where(path, n) + ": expected reserved token " + reserved_tokens()[n - 1]);
      }
      continue;
    }
    words.push_back(line);
  }
  if (n < reserved_tokens().size()) throw CorpusError(path.string() + ": missing reserved tokens");
  return Vocabulary(words);
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

TokenSequence tokenize(std::string_view text, const Vocabulary& vocab, std::size_t max_len) {
  if (max_len < 2) throw std::invalid_argument("tokenize: max_len must leave room for [CLS] and [SEP]");
  TokenSequence seq;
  seq.ids.push_back(special_tokens::kCls);
  for (const auto& w : split_words(text)) {
    if (seq.ids.size() + 1 >= max_len) break;
    seq.ids.push_back(vocab.id(w));
  }
  seq.ids.push_back(special_tokens::kSep);
  return seq;
}

std::vector<Document> load_corpus(const fs::path& path) {
  auto in = open_in(path);
  std::vector<Document> docs;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (blank(line)) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw CorpusError(where(path, n) + ": malformed JSON: " + e.what());
    }
    if (!obj.is_object() || !obj.contains("doc_id") || !obj.contains("text") || !obj["doc_id"].is_string() ||
        !obj["text"].is_string()) {
      throw CorpusError(where(path, n) + ": expected string fields doc_id and text");
    }
    Document d{obj["doc_id"].get<std::string>(), obj["text"].get<std::string>()};
    if (d.text.empty()) throw CorpusError(where(path, n) + ": empty text for " + d.id);
    if (!seen.insert(d.id).second) throw CorpusError(where(path, n) + ": duplicate doc id " + d.id);
    docs.push_back(std::move(d));
  }
  return docs;
}

std::vector<Query> load_queries(const fs::path& path) {
  auto in = open_in(path);
  std::vector<Query> queries;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (blank(line)) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0 || tab + 1 >= line.size()) {
      throw CorpusError(where(path, n) + ": expected qid<TAB>text");
    }
    Query q{line.substr(0, tab), line.substr(tab + 1)};
    if (!seen.insert(q.id).second) throw CorpusError(where(path, n) + ": duplicate query id " + q.id);
    queries.push_back(std::move(q));
  }
  return queries;
}

Qrels load_qrels(const fs::path& path, const std::vector<Document>* docs, const std::vector<Query>* queries) {
  std::unordered_set<std::string> doc_ids, query_ids;
  if (docs)
    for (const auto& d : *docs) doc_ids.insert(d.id);
  if (queries)
    for (const auto& q : *queries) query_ids.insert(q.id);
  auto in = open_in(path);
  Qrels qrels;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (blank(line)) continue;
    std::istringstream ss(line);
    std::string qid, iter, docid, extra;
    long long grade = 0;
    if (!(ss >> qid >> iter >> docid >> grade) || (ss >> extra)) {
      throw CorpusError(where(path, n) + ": expected 'qid 0 docid grade'");
    }
    if (grade < 0) throw CorpusError(where(path, n) + ": negative grade");
    if (docs && !doc_ids.count(docid)) throw CorpusError(where(path, n) + ": unknown doc id " + docid);
    if (queries && !query_ids.count(qid)) throw CorpusError(where(path, n) + ": unknown query id " + qid);
    if (!qrels[qid].emplace(docid, static_cast<int>(grade)).second) {
      throw CorpusError(where(path, n) + ": duplicate judgment for " + qid + " " + docid);
    }
  }
  return qrels;
}

void save_corpus(const fs::path& path, const std::vector<Document>& docs) {
  auto out = open_out(path);
  for (const auto& d : docs) out << json{{"doc_id", d.id}, {"text", d.text}}.dump() << '\n';
}

void save_queries(const fs::path& path, const std::vector<Query>& queries) {
  auto out = open_out(path);
  for (const auto& q : queries) {
    if (q.id.find('\t') != std::string::npos || q.text.find_first_of("\t\n") != std::string::npos) {
      throw CorpusError("query " + q.id + " contains a tab or newline");
    }
    out << q.id << '\t' << q.text << '\n';
  }
}

void save_qrels(const fs::path& path, const Qrels& qrels) {
  auto out = open_out(path);
  for (const auto& [qid, docs] : qrels)
    for (const auto& [docid, grade] : docs) out << qid << " 0 " << docid << ' ' << grade << '\n';
}

double teacher_score(std::string_view query_text, std::string_view doc_text) {
  const auto qw = split_words(query_text);
  const std::set<std::string> q(qw.begin(), qw.end());
  if (q.empty()) return 0.0;
  const auto dw = split_words(doc_text);
  const std::unordered_set<std::string> d(dw.begin(), dw.end());
  std::size_t hit = 0;
  for (const auto& w : q) hit += d.count(w);
  return static_cast<double>(hit) / static_cast<double>(q.size());
}

void validate(const DomainSpec& s) {
  auto require = [&](bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument("domain spec " + s.name + ": " + what);
  };
  require(!s.name.empty(), "name must be non-empty");
  require(s.vocab_words >= 1, "vocab_words must be >= 1");
  require(s.overlap >= 0.0 && s.overlap <= 1.0, "overlap must lie in [0, 1]");
  require(s.doc_len_min >= 1 && s.doc_len_min <= s.doc_len_max, "need 1 <= doc_len_min <= doc_len_max");
  require(s.num_docs >= 1 && s.num_queries >= 1, "sizes must be >= 1");
  require(s.num_topics >= 1 && s.topic_words >= 1, "topics must be non-empty");
  require(s.num_topics * s.topic_words <= s.vocab_words, "topics need more words than the domain has");
  require(s.topic_prob >= 0.0 && s.topic_prob <= 1.0, "topic_prob must lie in [0, 1]");
  require(s.query_exact >= 1, "query_exact must be >= 1");
  require(s.zipf_exponent >= 0.0, "zipf_exponent must be >= 0");
}

BenchmarkSpec default_benchmark_spec() {
  BenchmarkSpec spec;
  spec.source.name = "source";
  spec.source.num_docs = 2000;
  spec.source.num_queries = 2000;
  const char* names[] = {"target_a", "target_b", "target_c"};
  const double zipf[] = {0.9, 1.0, 1.1};
  for (int i = 0; i < 3; ++i) {
    DomainSpec t;
    t.name = names[i];
    t.overlap = 0.3;
    t.zipf_exponent = zipf[i];
    t.num_docs = 1000;
    t.num_queries = 200;
    spec.targets.push_back(t);
  }
  return spec;
}

namespace {

struct DomainModel {
  std::vector<std::string> words;
  std::vector<double> zipf_cdf;  // over `words`
  std::vector<std::vector<std::size_t>> topics;
};

DomainModel make_domain_model(const DomainSpec& spec, std::vector<std::string> words, Rng& rng) {
  DomainModel m;
  rng.shuffle(std::span(words));
  m.words = std::move(words);
  double total = 0.0;
  for (std::size_t r = 0; r < m.words.size(); ++r) {
    total += 1.0 / std::pow(static_cast<double>(r + 1), spec.zipf_exponent);
    m.zipf_cdf.push_back(total);
  }
  for (auto& c : m.zipf_cdf) c /= total;
  std::vector<std::size_t> order(m.words.size());
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(std::span(order));
  for (std::size_t t = 0; t < spec.num_topics; ++t) {
    m.topics.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(t * spec.topic_words),
                          order.begin() + static_cast<std::ptrdiff_t>((t + 1) * spec.topic_words));
  }
  return m;
}

std::size_t sample_cdf(const std::vector<double>& cdf, Rng& rng) {
  const double u = rng.uniform();
  const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
  return std::min(static_cast<std::size_t>(it - cdf.begin()), cdf.size() - 1);
}

struct GeneratedDoc {
  std::size_t topic;
  std::vector<std::size_t> words;  // indices into DomainModel::words
};

std::string join_words(const DomainModel& m, const std::vector<std::size_t>& idx) {
  std::string out;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (i) out.push_back(' ');
    out += m.words[idx[i]];
  }
  return out;
}

// Draws `k` distinct items from `pool` with probability proportional to
// `weight` (sequential sampling without replacement).
std::vector<std::size_t> weighted_distinct(std::vector<std::size_t> pool, std::vector<double> weight, std::size_t k,
                                           Rng& rng) {
  std::vector<std::size_t> out;
  while (out.size() < k && !pool.empty()) {
    const double total = std::accumulate(weight.begin(), weight.end(), 0.0);
    double u = rng.uniform() * total;
    std::size_t pick = pool.size() - 1;
    for (std::size_t i = 0; i < pool.size(); ++i) {
      u -= weight[i];
      if (u < 0.0) {
        pick = i;
        break;
      }
    }
    out.push_back(pool[pick]);
    pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(pick));
    weight.erase(weight.begin() + static_cast<std::ptrdiff_t>(pick));
  }
  return out;
}

struct DomainSample {
  DomainModel model;
  std::vector<GeneratedDoc> docs;
  std::vector<std::size_t> df;  // per word index
};

DomainSample sample_docs(const DomainSpec& spec, std::vector<std::string> words, Rng& rng) {
  DomainSample s{make_domain_model(spec, std::move(words), rng), {}, {}};
  s.df.assign(s.model.words.size(), 0);
  for (std::size_t i = 0; i < spec.num_docs; ++i) {
    GeneratedDoc d{rng.below(spec.num_topics), {}};
    const std::size_t len = spec.doc_len_min + rng.below(spec.doc_len_max - spec.doc_len_min + 1);
    const auto& topic = s.model.topics[d.topic];
    for (std::size_t j = 0; j < len; ++j) {
      d.words.push_back(rng.bernoulli(spec.topic_prob) ? topic[rng.below(topic.size())]
                                                       : sample_cdf(s.model.zipf_cdf, rng));
    }
    std::vector<std::size_t> uniq = d.words;
    std::sort(uniq.begin(), uniq.end());
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
    for (std::size_t w : uniq) ++s.df[w];
    s.docs.push_back(std::move(d));
  }
  return s;
}

std::string doc_id(const std::string& domain, std::size_t i) { return domain + "-d" + std::to_string(i); }

// Queries built from distinct documents; each query's only relevant
// document is the one it was drawn from.
void sample_queries(const DomainSpec& spec, const DomainSample& s, const std::string& prefix, std::size_t count,
                    std::vector<std::size_t>& doc_pool, std::vector<Query>& out, Qrels& qrels, Rng& rng) {
  const double n_docs = static_cast<double>(s.docs.size());
  for (std::size_t i = 0; i < count; ++i) {
    if (doc_pool.empty()) throw std::invalid_argument("domain " + spec.name + ": more queries than documents");
    const std::size_t slot = rng.below(doc_pool.size());
    const std::size_t di = doc_pool[slot];
    doc_pool[slot] = doc_pool.back();
    doc_pool.pop_back();
    const GeneratedDoc& doc = s.docs[di];

    std::vector<std::size_t> uniq = doc.words;
    std::sort(uniq.begin(), uniq.end());
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
    std::vector<double> idf;
    for (std::size_t w : uniq) idf.push_back(std::log(n_docs / static_cast<double>(s.df[w])) + 1e-3);
    std::vector<std::size_t> q = weighted_distinct(uniq, idf, spec.query_exact, rng);

    std::vector<std::size_t> soft;
    for (std::size_t w : s.model.topics[doc.topic]) {
      if (!std::binary_search(uniq.begin(), uniq.end(), w)) soft.push_back(w);
    }
    rng.shuffle(std::span(soft));
    for (std::size_t j = 0; j < std::min(spec.query_soft, soft.size()); ++j) q.push_back(soft[j]);
    rng.shuffle(std::span(q));

    const std::string qid = prefix + std::to_string(i);
    out.push_back({qid, join_words(s.model, q)});
    qrels[qid][doc_id(spec.name, di)] = 1;
  }
}

DomainData to_domain_data(const DomainSpec& spec, const DomainSample& s) {
  DomainData d;
  d.name = spec.name;
  d.words = s.model.words;
  std::sort(d.words.begin(), d.words.end());
  for (std::size_t i = 0; i < s.docs.size(); ++i) {
    d.docs.push_back({doc_id(spec.name, i), join_words(s.model, s.docs[i].words)});
  }
  return d;
}

std::map<std::string, std::vector<std::string>, std::less<>> mine_hard_negatives(const DomainData& d,
                                                                                  std::size_t per_query) {
  std::unordered_map<std::string, std::vector<std::size_t>> postings;
  for (std::size_t i = 0; i < d.docs.size(); ++i) {
    auto words = split_words(d.docs[i].text);
    std::sort(words.begin(), words.end());
    words.erase(std::unique(words.begin(), words.end()), words.end());
    for (auto& w : words) postings[w].push_back(i);
  }
  std::map<std::string, std::vector<std::string>, std::less<>> out;
  std::vector<std::size_t> hits(d.docs.size());
  for (const auto& q : d.queries) {
    auto words = split_words(q.text);
    std::sort(words.begin(), words.end());
    words.erase(std::unique(words.begin(), words.end()), words.end());
    std::fill(hits.begin(), hits.end(), 0);
    std::vector<std::size_t> touched;
    for (const auto& w : words) {
      auto it = postings.find(w);
      if (it == postings.end()) continue;
      for (std::size_t di : it->second)
        if (hits[di]++ == 0) touched.push_back(di);
    }
    const auto& rel = d.qrels.at(q.id);
    std::erase_if(touched, [&](std::size_t di) { return rel.count(d.docs[di].id) > 0; });
    std::sort(touched.begin(), touched.end(), [&](std::size_t a, std::size_t b) {
      return hits[a] != hits[b] ? hits[a] > hits[b] : a < b;
    });
    auto& negs = out[q.id];
    for (std::size_t j = 0; j < std::min(per_query, touched.size()); ++j) negs.push_back(d.docs[touched[j]].id);
  }
  return out;
}

}  // namespace

BenchmarkBundle generate_synthetic_benchmark(const BenchmarkSpec& spec, Rng& rng) {
  validate(spec.source);
  for (const auto& t : spec.targets) validate(t);
  std::set<std::string> names{spec.source.name};
  for (const auto& t : spec.targets) {
    if (!names.insert(t.name).second) throw std::invalid_argument("duplicate domain name " + t.name);
  }

  std::size_t next_word = 0;
  auto fresh = [&](std::size_t n) {
    std::vector<std::string> w;
    for (std::size_t i = 0; i < n; ++i) w.push_back("w" + std::to_string(next_word++));
    return w;
  };
  const std::vector<std::string> source_words = fresh(spec.source.vocab_words);
  std::vector<std::vector<std::string>> target_words;
  for (const auto& t : spec.targets) {
    // Jaccard = m / (Ks + Kt - m)  =>  m = rho (Ks + Kt) / (1 + rho)
    const double ks = static_cast<double>(spec.source.vocab_words), kt = static_cast<double>(t.vocab_words);
    auto shared_n = static_cast<std::size_t>(std::llround(t.overlap * (ks + kt) / (1.0 + t.overlap)));
    shared_n = std::min({shared_n, spec.source.vocab_words, t.vocab_words});
    std::vector<std::string> pool = source_words;
    Rng pick = rng.fork("shared-words:" + t.name);
    pick.shuffle(std::span(pool));
    std::vector<std::string> words(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(shared_n));
    auto own = fresh(t.vocab_words - shared_n);
    words.insert(words.end(), own.begin(), own.end());
    target_words.push_back(std::move(words));
  }

  std::vector<std::string> all_words = source_words;
  for (std::size_t i = spec.source.vocab_words; i < next_word; ++i) all_words.push_back("w" + std::to_string(i));
  BenchmarkBundle bundle{Vocabulary(all_words), {}, {}};

  {
    Rng r = rng.fork("domain:" + spec.source.name);
    const DomainSample s = sample_docs(spec.source, source_words, r);
    static_cast<DomainData&>(bundle.source) = to_domain_data(spec.source, s);
    std::vector<std::size_t> pool(s.docs.size());
    std::iota(pool.begin(), pool.end(), 0);
    sample_queries(spec.source, s, spec.source.name + "-q", spec.source.num_queries, pool, bundle.source.queries,
                   bundle.source.qrels, r);
    std::vector<std::size_t> dev_pool(s.docs.size());
    std::iota(dev_pool.begin(), dev_pool.end(), 0);
    sample_queries(spec.source, s, spec.source.name + "-dev", spec.source_dev_queries, dev_pool,
                   bundle.source.dev_queries, bundle.source.dev_qrels, r);
    bundle.source.hard_negatives = mine_hard_negatives(bundle.source, spec.hard_negatives);
  }
  for (std::size_t t = 0; t < spec.targets.size(); ++t) {
    const DomainSpec& ts = spec.targets[t];
    Rng r = rng.fork("domain:" + ts.name);
    const DomainSample s = sample_docs(ts, target_words[t], r);
    DomainData d = to_domain_data(ts, s);
    std::vector<std::size_t> pool(s.docs.size());
    std::iota(pool.begin(), pool.end(), 0);
    sample_queries(ts, s, ts.name + "-q", ts.num_queries, pool, d.queries, d.qrels, r);
    bundle.targets.push_back(std::move(d));
  }
  return bundle;
}

namespace {

void save_words(const fs::path& path, const std::vector<std::string>& words) {
  auto out = open_out(path);
  for (const auto& w : words) out << w << '\n';
}

std::vector<std::string> load_words(const fs::path& path) {
  auto in = open_in(path);
  std::vector<std::string> words;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) words.push_back(line);
  return words;
}

void save_domain(const fs::path& dir, const DomainData& d) {
  save_corpus(dir / "corpus.jsonl", d.docs);
  save_queries(dir / "queries.tsv", d.queries);
  save_qrels(dir / "qrels.txt", d.qrels);
  save_words(dir / "words.txt", d.words);
}

DomainData load_domain(const fs::path& dir, const std::string& name) {
  DomainData d;
  d.name = name;
  d.docs = load_corpus(dir / "corpus.jsonl");
  d.queries = load_queries(dir / "queries.tsv");
  d.qrels = load_qrels(dir / "qrels.txt", &d.docs, &d.queries);
  d.words = load_words(dir / "words.txt");
  return d;
}

}  // namespace

void save_bundle(const fs::path& dir, const BenchmarkBundle& b) {
  fs::create_directories(dir);
  b.vocab.save(dir / "vocab.txt");
  const fs::path src = dir / "source";
  save_domain(src, b.source);
  save_queries(src / "dev_queries.tsv", b.source.dev_queries);
  save_qrels(src / "dev_qrels.txt", b.source.dev_qrels);
  {
    auto out = open_out(src / "hard_negatives.tsv");
    for (const auto& [qid, negs] : b.source.hard_negatives) {
      out << qid << '\t';
      for (std::size_t i = 0; i < negs.size(); ++i) out << (i ? " " : "") << negs[i];
      out << '\n';
    }
  }
  {
    std::unordered_map<std::string, const Document*> by_id;
    for (const auto& d : b.source.docs) by_id[d.id] = &d;
    auto out = open_out(src / "teacher_scores.tsv");
    char buf[32];
    for (const auto& q : b.source.queries) {
      std::vector<std::string> ids;
      for (const auto& [docid, _] : b.source.qrels.at(q.id)) ids.push_back(docid);
      auto it = b.source.hard_negatives.find(q.id);
      if (it != b.source.hard_negatives.end()) ids.insert(ids.end(), it->second.begin(), it->second.end());
      for (const auto& id : ids) {
        std::snprintf(buf, sizeof buf, "%.6f", teacher_score(q.text, by_id.at(id)->text));
        out << q.id << '\t' << id << '\t' << buf << '\n';
      }
    }
  }
  json manifest{{"source", b.source.name}, {"targets", json::array()}, {"vocab_size", b.vocab.size()}};
  for (const auto& t : b.targets) {
    manifest["targets"].push_back(t.name);
    save_domain(dir / "targets" / t.name, t);
  }
  auto out = open_out(dir / "bundle.json");
  out << manifest.dump(2) << '\n';
}

BenchmarkBundle load_bundle(const fs::path& dir) {
  json manifest;
  try {
    manifest = json::parse(open_in(dir / "bundle.json"));
  } catch (const json::exception& e) {
    throw CorpusError((dir / "bundle.json").string() + ": " + e.what());
  }
  BenchmarkBundle b{Vocabulary::load(dir / "vocab.txt"), {}, {}};
  const fs::path src = dir / "source";
  static_cast<DomainData&>(b.source) = load_domain(src, manifest.value("source", std::string("source")));
  b.source.dev_queries = load_queries(src / "dev_queries.tsv");
  b.source.dev_qrels = load_qrels(src / "dev_qrels.txt", &b.source.docs, &b.source.dev_queries);
  {
    std::unordered_set<std::string> ids;
    for (const auto& d : b.source.docs) ids.insert(d.id);
    auto in = open_in(src / "hard_negatives.tsv");
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
      ++n;
      if (blank(line)) continue;
      const auto tab = line.find('\t');
      if (tab == std::string::npos) throw CorpusError(where(src / "hard_negatives.tsv", n) + ": expected qid<TAB>ids");
      auto& negs = b.source.hard_negatives[line.substr(0, tab)];
      std::istringstream ss(line.substr(tab + 1));
      std::string id;
      while (ss >> id) {
        if (!ids.count(id)) throw CorpusError(where(src / "hard_negatives.tsv", n) + ": unknown doc id " + id);
        negs.push_back(id);
      }
    }
  }
  for (const auto& name : manifest.at("targets")) {
    b.targets.push_back(load_domain(dir / "targets" / name.get<std::string>(), name.get<std::string>()));
  }
  return b;
}

double corpus_jaccard(const std::vector<Document>& a, const std::vector<Document>& b) {
  auto words = [](const std::vector<Document>& docs) {
    std::set<std::string> s;
    for (const auto& d : docs)
      for (auto& w : split_words(d.text)) s.insert(std::move(w));
    return s;
  };
  const auto sa = words(a), sb = words(b);
  std::size_t inter = 0;
  for (const auto& w : sa) inter += sb.count(w);
  const std::size_t uni = sa.size() + sb.size() - inter;
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace ddr
