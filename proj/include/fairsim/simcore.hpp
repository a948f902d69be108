#pragma once

// Cosine similarity, similarity sets over a store view, exact top-k
// retrieval and paired recall@k.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "fairsim/embedstore.hpp"
#include "fairsim/error.hpp"
#include "fairsim/parallel.hpp"

namespace fairsim {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Sequential reductions: results must not depend on SIMD lane grouping, so
// every similarity in the library is computed through these.
inline double dot(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm(const Vec& a) { return std::sqrt(dot(a, a)); }

inline double cosine(const Vec& v, const Vec& l) {
  if (v.size() != l.size())
    fail(ErrorCode::DimMismatch,
         std::to_string(v.size()) + " vs " + std::to_string(l.size()));
  const double nv = norm(v);
  const double nl = norm(l);
  if (nv == 0.0 || nl == 0.0) fail(ErrorCode::ZeroVector, "cosine of a zero vector");
  // An overflowed norm would silently give 0; report NaN so training loops
  // see the divergence.
  if (!std::isfinite(nv) || !std::isfinite(nl)) return std::numeric_limits<double>::quiet_NaN();
  return dot(v, l) / (nv * nl);
}

struct SimilaritySet {
  std::string query_id;
  std::string source = "vanilla";
  std::vector<double> scores;  // one per view position
};

inline SimilaritySet similarity_set(const StoreView& view, const Vec& query,
                                    std::string query_id = {},
                                    std::string source = "vanilla") {
  if (static_cast<std::size_t>(query.size()) != view.dim())
    fail(ErrorCode::DimMismatch, "query dim " + std::to_string(query.size()) +
                                     " != store dim " + std::to_string(view.dim()));
  SimilaritySet out{std::move(query_id), std::move(source),
                    std::vector<double>(view.size())};
  parallel_for(view.size(),
               [&](std::size_t k) { out.scores[k] = cosine(view.vector(k), query); });
  return out;
}

struct Hit {
  std::size_t position;  // index into the similarity set / view
  double score;
  bool operator==(const Hit&) const = default;
};

struct RetrievalResult {
  std::size_t k = 0;
  std::vector<Hit> ranked;  // score descending, ties by ascending position
};

/// Exact top-k; k larger than the set returns every position.
inline RetrievalResult top_k(const SimilaritySet& simset, std::size_t k) {
  if (k == 0) fail(ErrorCode::InvalidArgument, "k must be >= 1");
  std::vector<Hit> hits(simset.scores.size());
  for (std::size_t i = 0; i < hits.size(); ++i) hits[i] = {i, simset.scores[i]};
  const std::size_t m = std::min(k, hits.size());
  auto before = [](const Hit& a, const Hit& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.position < b.position;
  };
  std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(m),
                    hits.end(), before);
  hits.resize(m);
  return {k, std::move(hits)};
}

/// Text queries paired with their ground-truth image position in the view.
struct PairedQueries {
  Mat texts;                       // one query per row
  std::vector<std::size_t> truth;  // image position per query
};

/// Percentage of text queries whose paired image lands in the top k, for each k.
inline std::map<std::size_t, double> recall_at_k(const StoreView& images,
                                                 const PairedQueries& queries,
                                                 const std::vector<std::size_t>& ks) {
  const auto n_queries = static_cast<std::size_t>(queries.texts.rows());
  if (queries.truth.size() != n_queries)
    fail(ErrorCode::MissingGroundTruth, "truth count != query count");
  for (std::size_t t : queries.truth)
    if (t >= images.size())
      fail(ErrorCode::MissingGroundTruth, "truth position " + std::to_string(t));
  for (std::size_t k : ks)
    if (k == 0) fail(ErrorCode::InvalidArgument, "k must be >= 1");

  const Mat image_rows = images.matrix();
  std::vector<std::size_t> rank(n_queries);
  parallel_for(n_queries, [&](std::size_t q) {
    const Vec text = queries.texts.row(static_cast<Eigen::Index>(q)).transpose();
    const std::size_t gt = queries.truth[q];
    const double gt_score =
        cosine(image_rows.row(static_cast<Eigen::Index>(gt)).transpose(), text);
    std::size_t ahead = 0;
    for (Eigen::Index i = 0; i < image_rows.rows(); ++i) {
      const auto pos = static_cast<std::size_t>(i);
      if (pos == gt) continue;
      const double s = cosine(image_rows.row(i).transpose(), text);
      if (s > gt_score || (s == gt_score && pos < gt)) ++ahead;
    }
    rank[q] = ahead;
  }, 8);

  std::map<std::size_t, double> out;
  for (std::size_t k : ks) {
    std::size_t hits = 0;
    for (std::size_t r : rank) hits += r < k ? 1 : 0;
    out[k] = n_queries == 0 ? 0.0
                            : 100.0 * static_cast<double>(hits) /
                                  static_cast<double>(n_queries);
  }
  return out;
}

/// mean(100 - R@k) over the reported cutoffs.
inline double mean_error_rate(const std::map<std::size_t, double>& recall) {
  if (recall.empty()) return 0.0;
  double s = 0.0;
  for (const auto& [k, r] : recall) s += 100.0 - r;
  return s / static_cast<double>(recall.size());
}

}  // namespace fairsim
