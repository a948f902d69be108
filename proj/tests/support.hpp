#pragma once

// Independent reference implementations and fixtures shared by the tests.
// The oracles use plain loops and full sorts, never the library's own
// retrieval code, but accumulate in the same order so results compare exactly.

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "fairsim/fairsim.hpp"

namespace fairsim::reference {

inline double ref_cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) ab += a[i] * b[i];
  for (std::size_t i = 0; i < a.size(); ++i) aa += a[i] * a[i];
  for (std::size_t i = 0; i < b.size(); ++i) bb += b[i] * b[i];
  return ab / (std::sqrt(aa) * std::sqrt(bb));
}

inline std::vector<double> ref_row(const EmbeddingStore& s, std::size_t r) {
  auto row = s.row(r);
  return std::vector<double>(row.begin(), row.end());
}

inline std::vector<double> to_std(const Vec& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

inline std::vector<double> ref_scores(const EmbeddingStore& s, const std::vector<std::size_t>& rows,
                                      const Vec& q) {
  std::vector<double> out;
  for (std::size_t r : rows) out.push_back(ref_cosine(ref_row(s, r), to_std(q)));
  return out;
}

/// Positions sorted by (score desc, position asc), all of them.
inline std::vector<std::size_t> ref_ranking(const std::vector<double>& scores) {
  std::vector<std::size_t> order(scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
  });
  return order;
}

inline double ref_bias_at_k(const EmbeddingStore& s, const std::vector<std::size_t>& view_rows,
                            const std::string& attr, const Vec& q, std::size_t k) {
  const auto& labels = s.labels(attr);
  std::vector<std::size_t> rows;
  for (std::size_t r : view_rows)
    if (labels[r] != Label::Unlabeled) rows.push_back(r);
  const auto scores = ref_scores(s, rows, q);
  const auto order = ref_ranking(scores);
  const std::size_t m = std::min(k, rows.size());
  double top = 0, all = 0;
  for (std::size_t i = 0; i < m; ++i) top += labels[rows[order[i]]] == Label::Positive;
  for (std::size_t r : rows) all += labels[r] == Label::Positive;
  return std::abs(top / static_cast<double>(m) - all / static_cast<double>(rows.size()));
}

inline std::map<std::size_t, double> ref_recall(const EmbeddingStore& s, const Mat& texts,
                                                const std::vector<std::size_t>& truth,
                                                const std::vector<std::size_t>& ks) {
  std::vector<std::size_t> rows(s.count());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  std::map<std::size_t, double> out;
  std::vector<std::size_t> rank(static_cast<std::size_t>(texts.rows()));
  for (Eigen::Index q = 0; q < texts.rows(); ++q) {
    const auto order = ref_ranking(ref_scores(s, rows, texts.row(q).transpose()));
    rank[static_cast<std::size_t>(q)] = static_cast<std::size_t>(
        std::find(order.begin(), order.end(), truth[static_cast<std::size_t>(q)]) - order.begin());
  }
  for (std::size_t k : ks) {
    double hits = 0;
    for (std::size_t r : rank) hits += r < k;
    out[k] = 100.0 * hits / static_cast<double>(rank.size());
  }
  return out;
}

/// Random store with one or more labelled attributes; labels drawn from
/// {-1, 0, +1} when `with_unlabeled`.
inline StorePtr random_store(std::uint64_t seed, std::size_t n, std::size_t d,
                             const std::vector<std::string>& attrs = {"gender"},
                             bool with_unlabeled = false) {
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<float> values(n * d);
  for (auto& v : values) v = static_cast<float>(normal(rng));
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < n; ++i) ids.push_back("r" + std::to_string(i));
  EmbeddingStore::AttributeMap map;
  for (const auto& a : attrs) {
    auto& labels = map[a];
    for (std::size_t i = 0; i < n; ++i) {
      if (i < 2) {
        labels.push_back(i == 0 ? Label::Positive : Label::Negative);
        continue;
      }
      const auto u = rng() % (with_unlabeled ? 3 : 2);
      labels.push_back(u == 0 ? Label::Positive : u == 1 ? Label::Negative : Label::Unlabeled);
    }
  }
  return std::make_shared<const EmbeddingStore>(d, std::move(values), std::move(ids),
                                                std::move(map));
}

inline Vec random_vec(Rng& rng, std::size_t d) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vec v(static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = normal(rng);
  return v;
}

inline Mat random_mat(Rng& rng, std::size_t r, std::size_t c) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Mat m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = normal(rng);
  return m;
}

/// A small vocabulary over random anchors, for encoder-level tests.
inline Vocabulary random_vocab(std::uint64_t seed, std::size_t d,
                               const std::vector<std::string>& tokens) {
  Rng rng(seed);
  Vocabulary v;
  v.dim = d;
  v.encoder_seed = seed ^ 0x5eedULL;
  for (const auto& t : tokens) v.anchors[t] = random_vec(rng, d);
  return v;
}

}  // namespace fairsim::reference
