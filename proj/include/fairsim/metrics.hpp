#pragma once

// Quality and bias measurements beyond Bias@k: target attribute significance
// (TAS), bias feature divergence (BFD), the perturbation sweep relating the
// two, a 2D PCA export and zero-shot probability divergence.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "fairsim/apl.hpp"
#include "fairsim/bias.hpp"
#include "fairsim/diffcore.hpp"
#include "fairsim/embedstore.hpp"
#include "fairsim/error.hpp"
#include "fairsim/rrm.hpp"
#include "fairsim/simcore.hpp"

namespace fairsim {

struct TasResult {
  double mean = 0.0;
  std::vector<double> per_sample;  // mean over prototypes, one per view position
};

/// Similarity of every sample to every target query, averaged.
inline TasResult tas(const StoreView& view, const std::vector<Vec>& target_queries) {
  if (target_queries.empty()) fail(ErrorCode::MissingPrototype, "tas needs >= 1 target");
  if (view.empty()) fail(ErrorCode::EmptyStore, "tas over an empty view");
  TasResult r;
  r.per_sample.assign(view.size(), 0.0);
  for (const Vec& q : target_queries) {
    const auto sims = similarity_set(view, q);
    for (std::size_t k = 0; k < view.size(); ++k) r.per_sample[k] += sims.scores[k];
  }
  const double inv_t = 1.0 / static_cast<double>(target_queries.size());
  double sum = 0.0;
  for (double& s : r.per_sample) {
    s *= inv_t;
    sum += s;
  }
  r.mean = sum / static_cast<double>(view.size());
  return r;
}

inline TasResult tas(const StoreView& view, const std::vector<const Prototype*>& targets) {
  std::vector<Vec> queries;
  for (const Prototype* p : targets) {
    if (!p) fail(ErrorCode::MissingPrototype, "null target prototype");
    queries.push_back(p->query);
  }
  return tas(view, queries);
}

/// The bias contrast loss evaluated as a metric on hash-keyed pairs of the
/// view's rows, under `m` (identity when empty).
inline double bfd(const StoreView& view, std::string_view bias_attribute, const Vec& q_pos,
                  const Vec& q_neg, std::uint64_t pairs_seed, const Mat& m = Mat()) {
  const auto pairs = make_pairs(view, bias_attribute, pairs_seed);
  std::vector<std::size_t> pos, neg;
  for (const auto& p : pairs) {
    pos.push_back(p.pos_row);
    neg.push_back(p.neg_row);
  }
  const EmbeddingStore& store = view.store();
  Mat effective = m;
  if (view.transform()) effective = m.size() ? Mat(*view.transform() * m) : *view.transform();
  if (effective.size() == 0) {
    const auto d = static_cast<Eigen::Index>(view.input_dim());
    effective = Mat::Identity(d, d);
  }
  return bcl_grad(detail::rows_of(store, pos), detail::rows_of(store, neg), q_pos, q_neg,
                  effective, false)
      .loss;
}

// ---------------------------------------------------------------------------
// TAS / BFD sweep

struct TasBfdPoint {
  double epsilon;
  double tas;
  double bfd;
};

struct TasBfdCurve {
  std::vector<TasBfdPoint> points;
};

/// A standalone copy of the whole store (seen through the view's transform)
/// with the view's rows replaced by `rows`. Row indices are preserved, so
/// hash-keyed pairing on the copy matches pairing on the original.
inline StoreView materialize(const StoreView& view, const Mat& rows) {
  const EmbeddingStore& src = view.store();
  StoreView full = StoreView::all(view.store_ptr());
  if (view.transform()) full = full.with_transform(*view.transform());
  const std::size_t d = full.dim();
  std::vector<float> values;
  if (view.transform()) {
    const Mat all = full.matrix();
    values.resize(static_cast<std::size_t>(all.size()));
    for (Eigen::Index i = 0; i < all.rows(); ++i)
      for (Eigen::Index j = 0; j < all.cols(); ++j)
        values[static_cast<std::size_t>(i) * d + static_cast<std::size_t>(j)] =
            static_cast<float>(all(i, j));
  } else {
    values.assign(src.values().begin(), src.values().end());
  }
  for (std::size_t k = 0; k < view.size(); ++k)
    for (std::size_t j = 0; j < d; ++j)
      values[view.row(k) * d + j] =
          static_cast<float>(rows(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)));
  auto copy = std::make_shared<const EmbeddingStore>(d, std::move(values), src.ids(),
                                                     src.attributes());
  return StoreView::of_rows(std::move(copy),
                            std::vector<std::size_t>(view.rows().begin(), view.rows().end()));
}

/// Moves every sample by epsilon along the unit gradient of its mean target
/// similarity, then records TAS and BFD on the moved samples.
inline TasBfdCurve tas_bfd_sweep(const StoreView& view, std::string_view bias_attribute,
                                 const std::vector<Vec>& target_queries, const Vec& q_pos,
                                 const Vec& q_neg, const std::vector<double>& epsilons,
                                 std::uint64_t pairs_seed = 0) {
  if (target_queries.empty()) fail(ErrorCode::MissingPrototype, "sweep needs >= 1 target");
  for (std::size_t i = 0; i < epsilons.size(); ++i) {
    if (!std::isfinite(epsilons[i])) fail(ErrorCode::InvalidArgument, "non-finite epsilon");
    if (i > 0 && !(epsilons[i] > epsilons[i - 1]))
      fail(ErrorCode::InvalidArgument, "epsilons must be strictly increasing");
  }
  if (std::find(epsilons.begin(), epsilons.end(), 0.0) == epsilons.end())
    fail(ErrorCode::InvalidArgument, "epsilons must include 0");

  const Mat base = view.matrix();
  Mat direction = Mat::Zero(base.rows(), base.cols());
  const double inv_t = 1.0 / static_cast<double>(target_queries.size());
  for (Eigen::Index i = 0; i < base.rows(); ++i) {
    const Vec v = base.row(i).transpose();
    Vec g = Vec::Zero(v.size());
    for (const Vec& q : target_queries) g += grad_cosine(v, q, inv_t).dv;
    const double n = norm(g);
    if (n > 0.0) direction.row(i) = (g / n).transpose();
  }

  TasBfdCurve curve;
  for (double eps : epsilons) {
    const StoreView moved = materialize(view, base + eps * direction);
    curve.points.push_back({eps, tas(moved, target_queries).mean,
                            bfd(moved, bias_attribute, q_pos, q_neg, pairs_seed)});
  }
  return curve;
}

inline std::string curve_csv(const TasBfdCurve& c) {
  std::ostringstream out;
  out.precision(17);
  out << "epsilon,tas,bfd\n";
  for (const auto& p : c.points) out << p.epsilon << ',' << p.tas << ',' << p.bfd << '\n';
  return out.str();
}

/// Ranks with ties sharing their average rank (1-based).
inline std::vector<double> average_ranks(const std::vector<double>& x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

/// Spearman rank correlation (Pearson on average ranks). Zero when either
/// side is constant.
inline double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2)
    fail(ErrorCode::InvalidArgument, "spearman needs two equal-length series (n >= 2)");
  const auto ra = average_ranks(a);
  const auto rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

// ---------------------------------------------------------------------------
// PCA

struct Pca2d {
  Mat points;  // size x 2
  Vec component_x;
  Vec component_y;
  double variance_x = 0.0;
  double variance_y = 0.0;
  bool degenerate = false;  // rank < 2: second component zeroed
  Eigen::Vector2d centroid_pos = Eigen::Vector2d::Zero();
  Eigen::Vector2d centroid_neg = Eigen::Vector2d::Zero();
  std::vector<Label> labels;

  double centroid_distance() const { return (centroid_pos - centroid_neg).norm(); }
};

namespace detail {

/// Flips `c` so its largest-magnitude coordinate (first on ties) is positive.
inline void fix_sign(Vec& c) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < c.size(); ++i)
    if (std::abs(c[i]) > std::abs(c[best])) best = i;
  if (c[best] < 0) c = -c;
}

}  // namespace detail

inline Pca2d pca_2d(const StoreView& view, std::string_view attribute) {
  if (view.size() < 3) fail(ErrorCode::InvalidArgument, "pca needs >= 3 rows");
  const Mat x = view.matrix();
  const Vec mean = x.colwise().mean().transpose();
  const Mat centered = x.rowwise() - mean.transpose();
  const Mat cov = (centered.transpose() * centered) / static_cast<double>(x.rows() - 1);
  Eigen::SelfAdjointEigenSolver<Mat> eig(cov);
  if (eig.info() != Eigen::Success) fail(ErrorCode::NonFiniteLoss, "pca eigensolver");
  const Eigen::Index d = cov.rows();
  Pca2d out;
  out.component_x = eig.eigenvectors().col(d - 1);
  out.component_y = d >= 2 ? Vec(eig.eigenvectors().col(d - 2)) : Vec::Zero(d);
  const double l1 = eig.eigenvalues()[d - 1];
  const double l2 = d >= 2 ? eig.eigenvalues()[d - 2] : 0.0;
  const double tol = 1e-12 * std::max(std::abs(l1), 1e-300);
  if (!(l2 > tol)) {
    out.degenerate = true;
    out.component_y = Vec::Zero(d);
  }
  detail::fix_sign(out.component_x);
  if (!out.degenerate) detail::fix_sign(out.component_y);

  out.points.resize(x.rows(), 2);
  out.points.col(0) = centered * out.component_x;
  out.points.col(1) = centered * out.component_y;
  out.variance_x = out.points.col(0).squaredNorm() / static_cast<double>(x.rows() - 1);
  out.variance_y = out.points.col(1).squaredNorm() / static_cast<double>(x.rows() - 1);

  const auto& labels = view.store().labels(attribute);
  std::size_t n_pos = 0, n_neg = 0;
  for (std::size_t k = 0; k < view.size(); ++k) {
    const Label l = labels[view.row(k)];
    out.labels.push_back(l);
    const Eigen::Vector2d p = out.points.row(static_cast<Eigen::Index>(k)).transpose();
    if (l == Label::Positive) {
      out.centroid_pos += p;
      ++n_pos;
    } else if (l == Label::Negative) {
      out.centroid_neg += p;
      ++n_neg;
    }
  }
  if (n_pos == 0 || n_neg == 0)
    fail(ErrorCode::EmptyGroup, std::string(attribute) + " needs both groups");
  out.centroid_pos /= static_cast<double>(n_pos);
  out.centroid_neg /= static_cast<double>(n_neg);
  return out;
}

inline std::string pca_csv(const Pca2d& p, const StoreView& view) {
  std::ostringstream out;
  out.precision(17);
  out << "id,label,x,y\n";
  for (std::size_t k = 0; k < view.size(); ++k) {
    const auto i = static_cast<Eigen::Index>(k);
    out << view.store().ids()[view.row(k)] << ',' << static_cast<int>(p.labels[k]) << ','
        << p.points(i, 0) << ',' << p.points(i, 1) << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Zero-shot classification

struct ZeroShotResult {
  double mean_pos = 0.0;  // mean P(label a) over the +1 group
  double mean_neg = 0.0;
  double divergence = 0.0;  // |mean_pos - mean_neg| * 100
};

inline double softmax_first(double a, double b) {
  const double m = std::max(a, b);
  const double ea = std::exp(a - m);
  const double eb = std::exp(b - m);
  return ea / (ea + eb);
}

inline ZeroShotResult zero_shot_divergence(const StoreView& view, std::string_view attribute,
                                           const Vec& query_a, const Vec& query_b,
                                           double temperature = 100.0) {
  if (!(temperature > 0.0) || !std::isfinite(temperature))
    fail(ErrorCode::InvalidArgument, "temperature must be positive");
  const StoreView rows = labeled_rows(view, attribute);
  if (rows.empty()) fail(ErrorCode::NoLabeledRows, std::string(attribute));
  const auto sa = similarity_set(rows, query_a);
  const auto sb = similarity_set(rows, query_b);
  double sum_pos = 0.0, sum_neg = 0.0;
  std::size_t n_pos = 0, n_neg = 0;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const double p = softmax_first(temperature * sa.scores[k], temperature * sb.scores[k]);
    if (rows.label(attribute, k) == Label::Positive) {
      sum_pos += p;
      ++n_pos;
    } else {
      sum_neg += p;
      ++n_neg;
    }
  }
  if (n_pos == 0 || n_neg == 0)
    fail(ErrorCode::EmptyGroup, std::string(attribute) + " needs both groups");
  ZeroShotResult r;
  r.mean_pos = sum_pos / static_cast<double>(n_pos);
  r.mean_neg = sum_neg / static_cast<double>(n_neg);
  r.divergence = std::abs(r.mean_pos - r.mean_neg) * 100.0;
  return r;
}

}  // namespace fairsim
