#pragma once

// Brute-force ranking and metric evaluation, written without the library's
// helpers: full sorts, explicit loops, double accumulation.

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace oracle {

using Judged = std::map<std::string, int>;
using Ranked = std::vector<std::pair<std::string, double>>;

inline Ranked full_scan(const std::vector<std::string>& ids, const std::vector<std::vector<float>>& docs,
                        const std::vector<float>& q, std::size_t k) {
  Ranked all;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    double s = 0;
    for (std::size_t j = 0; j < q.size(); ++j) s += static_cast<double>(q[j]) * docs[i][j];
    all.emplace_back(ids[i], s);
  }
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
    if (a.second > b.second) return true;
    if (a.second < b.second) return false;
    return a.first < b.first;
  });
  if (all.size() > k) all.resize(k);
  return all;
}

inline double ndcg(const Ranked& run, const Judged& j, std::size_t k) {
  std::vector<double> gains;
  for (const auto& kv : j)
    if (kv.second > 0) gains.push_back(kv.second);
  std::sort(gains.begin(), gains.end(), std::greater<>());
  double idcg = 0, dcg = 0;
  for (std::size_t r = 1; r <= k && r <= gains.size(); ++r) idcg += gains[r - 1] * std::log(2.0) / std::log(r + 1.0);
  for (std::size_t r = 1; r <= k && r <= run.size(); ++r) {
    for (const auto& kv : j)
      if (kv.first == run[r - 1].first && kv.second > 0) dcg += kv.second * std::log(2.0) / std::log(r + 1.0);
  }
  return dcg / idcg;
}

inline double recall(const Ranked& run, const Judged& j, std::size_t k) {
  double rel = 0, hit = 0;
  for (const auto& kv : j) {
    if (kv.second <= 0) continue;
    rel += 1;
    for (std::size_t r = 0; r < k && r < run.size(); ++r)
      if (run[r].first == kv.first) hit += 1;
  }
  return hit / rel;
}

}  // namespace oracle
