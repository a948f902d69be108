#pragma once

// Embedding-level comparison methods. CLIP-clip ranks coordinates by mutual
// information with the bias label and drops the top ones; BSCE takes the top
// principal direction of cross-group difference vectors as a concept query.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "fairsim/apl.hpp"
#include "fairsim/embedstore.hpp"
#include "fairsim/error.hpp"
#include "fairsim/parallel.hpp"
#include "fairsim/simcore.hpp"

namespace fairsim {

struct DimMask {
  std::size_t dim = 0;
  std::vector<std::size_t> dropped;  // sorted
  std::vector<double> scores;        // relevance per dimension

  std::size_t kept() const { return dim - dropped.size(); }
};

/// Mutual information (nats) of two binary variables from a 2x2 count table.
inline double mutual_information_2x2(const double counts[2][2]) {
  const double n = counts[0][0] + counts[0][1] + counts[1][0] + counts[1][1];
  if (n == 0.0) return 0.0;
  double mi = 0.0;
  for (int a = 0; a < 2; ++a) {
    for (int b = 0; b < 2; ++b) {
      if (counts[a][b] == 0.0) continue;
      const double pa = (counts[a][0] + counts[a][1]) / n;
      const double pb = (counts[0][b] + counts[1][b]) / n;
      const double pab = counts[a][b] / n;
      mi += pab * std::log(pab / (pa * pb));
    }
  }
  return std::max(mi, 0.0);
}

inline double median_of(std::vector<double> v) {
  const std::size_t n = v.size();
  std::sort(v.begin(), v.end());
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Per-dimension MI between the median-split coordinate (x >= median) and the
/// bias label, over the labelled rows of the view.
inline std::vector<double> clip_clip_rank(const StoreView& view, std::string_view bias_attribute) {
  const StoreView rows = labeled_rows(view, bias_attribute);
  std::size_t n_pos = 0;
  for (std::size_t k = 0; k < rows.size(); ++k)
    n_pos += rows.label(bias_attribute, k) == Label::Positive ? 1 : 0;
  if (n_pos == 0 || n_pos == rows.size())
    fail(ErrorCode::EmptyGroup, std::string(bias_attribute) + " needs both groups");
  const Mat x = rows.matrix();
  std::vector<double> scores(static_cast<std::size_t>(x.cols()));
  parallel_for(scores.size(), [&](std::size_t j) {
    const auto col = static_cast<Eigen::Index>(j);
    std::vector<double> values(static_cast<std::size_t>(x.rows()));
    for (Eigen::Index i = 0; i < x.rows(); ++i) values[static_cast<std::size_t>(i)] = x(i, col);
    const double med = median_of(values);
    double counts[2][2] = {{0, 0}, {0, 0}};
    for (std::size_t k = 0; k < rows.size(); ++k) {
      const int high = values[k] >= med ? 1 : 0;
      const int pos = rows.label(bias_attribute, k) == Label::Positive ? 1 : 0;
      counts[high][pos] += 1.0;
    }
    scores[j] = mutual_information_2x2(counts);
  }, 1);
  return scores;
}

/// Drops the `m` highest-scoring dimensions (ties broken by lower index).
inline DimMask clip_clip_mask(std::vector<double> scores, std::size_t m) {
  DimMask mask;
  mask.dim = scores.size();
  if (m > mask.dim) fail(ErrorCode::InvalidArgument, "cannot drop more dims than exist");
  if (m == mask.dim) fail(ErrorCode::AllDimsDropped, "mask would drop every dimension");
  std::vector<std::size_t> order(mask.dim);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  mask.dropped.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(m));
  std::sort(mask.dropped.begin(), mask.dropped.end());
  mask.scores = std::move(scores);
  return mask;
}

namespace detail {

inline void check_mask(const DimMask& mask) {
  if (mask.dropped.size() >= mask.dim && mask.dim > 0)
    fail(ErrorCode::AllDimsDropped, "mask drops every dimension");
  for (std::size_t i = 0; i < mask.dropped.size(); ++i) {
    if (mask.dropped[i] >= mask.dim) fail(ErrorCode::InvalidArgument, "dropped dim out of range");
    if (i > 0 && mask.dropped[i] <= mask.dropped[i - 1])
      fail(ErrorCode::InvalidArgument, "dropped dims must be sorted and unique");
  }
}

}  // namespace detail

/// d x kept selection matrix: row-vector times it keeps the surviving coordinates.
inline Mat selection_matrix(const DimMask& mask) {
  detail::check_mask(mask);
  Mat s = Mat::Zero(static_cast<Eigen::Index>(mask.dim), static_cast<Eigen::Index>(mask.kept()));
  Eigen::Index col = 0;
  std::size_t next = 0;
  for (std::size_t j = 0; j < mask.dim; ++j) {
    if (next < mask.dropped.size() && mask.dropped[next] == j) {
      ++next;
      continue;
    }
    s(static_cast<Eigen::Index>(j), col++) = 1.0;
  }
  return s;
}

inline Vec clip_clip_apply(const Vec& v, const DimMask& mask) {
  detail::check_mask(mask);
  if (static_cast<std::size_t>(v.size()) != mask.dim) fail(ErrorCode::DimMismatch, "mask dim");
  Vec out(static_cast<Eigen::Index>(mask.kept()));
  Eigen::Index col = 0;
  std::size_t next = 0;
  for (std::size_t j = 0; j < mask.dim; ++j) {
    if (next < mask.dropped.size() && mask.dropped[next] == j) {
      ++next;
      continue;
    }
    out[col++] = v[static_cast<Eigen::Index>(j)];
  }
  return out;
}

inline StoreView clip_clip_apply(const StoreView& view, const DimMask& mask) {
  if (view.dim() != mask.dim) fail(ErrorCode::DimMismatch, "mask dim");
  return view.with_transform(selection_matrix(mask));
}

/// Top eigenvector of the mean outer product of v_i - v_j over every cross
/// pair (i in the +1 group, j in the -1 group), oriented so the +1 group's
/// mean cosine to it is at least the -1 group's.
inline Vec bsce_concept(const StoreView& view, std::string_view attribute) {
  const StoreView pos = subset_by_attr(view, attribute, Label::Positive);
  const StoreView neg = subset_by_attr(view, attribute, Label::Negative);
  if (pos.empty() || neg.empty())
    fail(ErrorCode::EmptyGroup, std::string(attribute) + " needs both groups");
  const Mat xp = pos.matrix();
  const Mat xn = neg.matrix();
  // E[(a-b)(a-b)^T] over independent a ~ P, b ~ N, in closed form.
  const Vec mp = xp.colwise().mean().transpose();
  const Vec mn = xn.colwise().mean().transpose();
  const Mat second = xp.transpose() * xp / static_cast<double>(xp.rows()) +
                     xn.transpose() * xn / static_cast<double>(xn.rows()) -
                     mp * mn.transpose() - mn * mp.transpose();
  Eigen::SelfAdjointEigenSolver<Mat> eig(second);
  if (eig.info() != Eigen::Success) fail(ErrorCode::NonFiniteLoss, "bsce eigensolver");
  Vec c = eig.eigenvectors().col(second.cols() - 1);
  double cos_pos = 0.0, cos_neg = 0.0;
  for (Eigen::Index i = 0; i < xp.rows(); ++i) cos_pos += cosine(xp.row(i).transpose(), c);
  for (Eigen::Index i = 0; i < xn.rows(); ++i) cos_neg += cosine(xn.row(i).transpose(), c);
  if (cos_pos / static_cast<double>(xp.rows()) < cos_neg / static_cast<double>(xn.rows())) c = -c;
  return c;
}

/// BSCE concept wrapped as a prefix-free prototype (encoder id "bsce").
inline Prototype bsce_prototype(const StoreView& train, std::string_view attribute) {
  Prototype p;
  p.attribute = std::string(attribute);
  p.polarity = 1;
  p.encoder_id = "bsce";
  p.query = bsce_concept(train, attribute);
  p.prefix.resize(0, p.query.size());
  p.centers = compute_centers(labeled_rows(train, attribute), attribute, p.query, 1);
  return p;
}

}  // namespace fairsim
