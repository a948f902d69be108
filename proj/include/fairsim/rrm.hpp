#pragma once

// Representation neutralization: a d x d re-representation matrix applied to
// visual vectors before cosine similarity, trained so that samples from the
// two bias groups score alike against both bias-polarity prototypes (bias
// contrast loss) while similarity to target-attribute prototypes rises
// (target feature loss).

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "fairsim/apl.hpp"
#include "fairsim/bias.hpp"
#include "fairsim/diffcore.hpp"
#include "fairsim/embedstore.hpp"
#include "fairsim/error.hpp"
#include "fairsim/random.hpp"
#include "fairsim/simcore.hpp"

namespace fairsim {

struct Rrm {
  std::string bias_attribute;
  Mat matrix;
  std::size_t trained_epochs = 0;
  double lambda = 0.8;

  static Rrm identity(std::string bias_attribute, std::size_t dim, double lambda = 0.8) {
    const auto d = static_cast<Eigen::Index>(dim);
    return {std::move(bias_attribute), Mat::Identity(d, d), 0, lambda};
  }
  std::size_t dim() const { return static_cast<std::size_t>(matrix.rows()); }
};

enum class TflScope { All, Positives };

struct EarlyStop {
  std::size_t k = 100;
  std::size_t patience = 10;
};

struct RnConfig {
  double lambda = 0.8;
  double lr = 0.5;
  std::size_t max_epochs = 30;
  std::size_t batch_pairs = 64;
  std::uint64_t seed = 0;
  EarlyStop early_stop;
  TflScope tfl_scope = TflScope::All;
  // Ablation switches: drop a term from the loss without reweighting the other.
  bool use_bcl = true;
  bool use_tfl = true;

  void validate() const {
    if (!(lambda >= 0.0 && lambda <= 1.0))
      fail(ErrorCode::InvalidArgument, "lambda must be in [0, 1]");
    if (!(lr >= 0.0) || !std::isfinite(lr)) fail(ErrorCode::InvalidArgument, "lr");
    if (batch_pairs < 1) fail(ErrorCode::InvalidArgument, "batch_pairs must be >= 1");
    if (early_stop.patience < 1) fail(ErrorCode::InvalidArgument, "patience must be >= 1");
    if (early_stop.k < 1) fail(ErrorCode::InvalidArgument, "early-stop k must be >= 1");
  }
};

inline double rrm_similarity(const Vec& v, const Mat& m, const Vec& l) {
  if (m.rows() != v.size()) fail(ErrorCode::DimMismatch, "rrm rows != vector dim");
  return cosine(MatvecRight::forward(v, m), l);
}

inline double rrm_similarity(const Vec& v, const Rrm& rrm, const Vec& l) {
  return rrm_similarity(v, rrm.matrix, l);
}

inline StoreView apply_rrm(const StoreView& view, const Rrm& rrm) {
  if (rrm.dim() != view.dim())
    fail(ErrorCode::DimMismatch, "rrm dim " + std::to_string(rrm.dim()) + " != view dim " +
                                     std::to_string(view.dim()));
  return view.with_transform(rrm.matrix);
}

// ---------------------------------------------------------------------------
// Pairing

struct Pair {
  std::size_t pos_row;  // store row with bias label +1
  std::size_t neg_row;  // store row with bias label -1
  bool operator==(const Pair&) const = default;
};

/// Positional pairing of the two bias groups after a hash-keyed shuffle;
/// the larger group's leftover rows are dropped.
inline std::vector<Pair> make_pairs(const StoreView& view, std::string_view attribute,
                                    std::uint64_t key_seed) {
  const auto& labels = view.store().labels(attribute);
  std::vector<std::size_t> pos, neg;
  for (std::size_t r : view.rows()) {
    if (labels[r] == Label::Positive) pos.push_back(r);
    if (labels[r] == Label::Negative) neg.push_back(r);
  }
  if (pos.empty() || neg.empty())
    fail(ErrorCode::EmptyGroup, std::string(attribute) + " needs both groups");
  pos = hash_shuffle(pos, key_seed);
  neg = hash_shuffle(neg, key_seed);
  std::vector<Pair> pairs(std::min(pos.size(), neg.size()));
  for (std::size_t i = 0; i < pairs.size(); ++i) pairs[i] = {pos[i], neg[i]};
  return pairs;
}

// ---------------------------------------------------------------------------
// Losses on materialized rows (one sample per row of V).

struct LossAndMatrixGrad {
  double loss = 0.0;
  Mat d_matrix;  // empty unless requested
};

namespace detail {

inline Mat rows_of(const EmbeddingStore& store, const std::vector<std::size_t>& rows) {
  Mat out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(store.dim()));
  for (std::size_t k = 0; k < rows.size(); ++k) {
    auto r = store.row(rows[k]);
    for (std::size_t j = 0; j < r.size(); ++j)
      out(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)) = r[j];
  }
  return out;
}

}  // namespace detail

/// mean over pairs of 1/2 [(S_i+ - S_i-)^2 + (S_j+ - S_j-)^2] with all
/// similarities taken after the re-representation.
inline LossAndMatrixGrad bcl_grad(const Mat& pos_rows, const Mat& neg_rows, const Vec& q_pos,
                                  const Vec& q_neg, const Mat& m, bool want_grad = true) {
  if (pos_rows.rows() == 0 || pos_rows.rows() != neg_rows.rows())
    fail(ErrorCode::EmptyPairs, "bias contrast loss needs >= 1 pair");
  const Eigen::Index b = pos_rows.rows();
  const double inv_b = 1.0 / static_cast<double>(b);
  LossAndMatrixGrad out;
  Mat du_pos, du_neg;
  if (want_grad) {
    du_pos = Mat::Zero(b, m.cols());
    du_neg = Mat::Zero(b, m.cols());
  }
  const Mat u_pos = pos_rows * m;
  const Mat u_neg = neg_rows * m;
  double sum = 0.0;
  for (Eigen::Index p = 0; p < b; ++p) {
    const Vec ui = u_pos.row(p).transpose();
    const Vec uj = u_neg.row(p).transpose();
    const double di = cosine(ui, q_pos) - cosine(ui, q_neg);
    const double dj = cosine(uj, q_pos) - cosine(uj, q_neg);
    sum += 0.5 * (di * di + dj * dj);
    if (want_grad) {
      du_pos.row(p) = (grad_cosine(ui, q_pos, di * inv_b).dv +
                       grad_cosine(ui, q_neg, -di * inv_b).dv).transpose();
      du_neg.row(p) = (grad_cosine(uj, q_pos, dj * inv_b).dv +
                       grad_cosine(uj, q_neg, -dj * inv_b).dv).transpose();
    }
  }
  out.loss = sum * inv_b;
  if (want_grad) out.d_matrix = pos_rows.transpose() * du_pos + neg_rows.transpose() * du_neg;
  return out;
}

/// mean over rows of (S_i - 1)^2 after the re-representation.
inline LossAndMatrixGrad tfl_grad(const Mat& rows, const Vec& q, const Mat& m,
                                  bool want_grad = true) {
  LossAndMatrixGrad out;
  if (rows.rows() == 0) {
    out.d_matrix = want_grad ? Mat::Zero(m.rows(), m.cols()) : Mat();
    return out;
  }
  const double inv_n = 1.0 / static_cast<double>(rows.rows());
  const Mat u = rows * m;
  Mat du;
  if (want_grad) du = Mat::Zero(u.rows(), u.cols());
  double sum = 0.0;
  for (Eigen::Index i = 0; i < u.rows(); ++i) {
    const Vec ui = u.row(i).transpose();
    const double s = cosine(ui, q);
    sum += (s - 1.0) * (s - 1.0);
    if (want_grad) du.row(i) = grad_cosine(ui, q, 2.0 * (s - 1.0) * inv_n).dv.transpose();
  }
  out.loss = sum * inv_n;
  if (want_grad) out.d_matrix = rows.transpose() * du;
  return out;
}

inline double bcl(const EmbeddingStore& store, const std::vector<Pair>& pairs,
                  const Prototype& proto_pos, const Prototype& proto_neg, const Mat& m) {
  if (pairs.empty()) fail(ErrorCode::EmptyPairs, "bias contrast loss needs >= 1 pair");
  std::vector<std::size_t> pos, neg;
  for (const auto& p : pairs) {
    pos.push_back(p.pos_row);
    neg.push_back(p.neg_row);
  }
  return bcl_grad(detail::rows_of(store, pos), detail::rows_of(store, neg), proto_pos.query,
                  proto_neg.query, m, false)
      .loss;
}

inline double tfl(const StoreView& rows, const Prototype& target, const Mat& m) {
  return tfl_grad(rows.without_transform().matrix(), target.query, m, false).loss;
}

/// A batch for the combined loss: bias pairs plus the rows the target term sees.
struct RnBatch {
  Mat pos_rows;
  Mat neg_rows;
  std::vector<Mat> target_rows;  // one per target prototype
};

struct RnPrototypes {
  const Prototype* bias_pos = nullptr;
  const Prototype* bias_neg = nullptr;
  std::vector<const Prototype*> targets;
};

/// lambda * BCL + (1 - lambda) * sum_t TFL_t and its matrix gradient.
inline LossAndMatrixGrad rn_loss_grad(const RnBatch& batch, const RnPrototypes& protos,
                                      const Mat& m, const RnConfig& config,
                                      bool want_grad = true) {
  if (!protos.bias_pos || !protos.bias_neg)
    fail(ErrorCode::MissingPrototype, "both bias-polarity prototypes are required");
  if (config.use_tfl && protos.targets.size() != batch.target_rows.size())
    fail(ErrorCode::MissingPrototype, "one row block per target prototype");
  LossAndMatrixGrad out;
  if (want_grad) out.d_matrix = Mat::Zero(m.rows(), m.cols());
  if (config.use_bcl) {
    auto b = bcl_grad(batch.pos_rows, batch.neg_rows, protos.bias_pos->query,
                      protos.bias_neg->query, m, want_grad);
    out.loss += config.lambda * b.loss;
    if (want_grad) out.d_matrix += config.lambda * b.d_matrix;
  }
  if (config.use_tfl) {
    for (std::size_t t = 0; t < protos.targets.size(); ++t) {
      if (!protos.targets[t]) fail(ErrorCode::MissingPrototype, "null target prototype");
      auto g = tfl_grad(batch.target_rows[t], protos.targets[t]->query, m, want_grad);
      out.loss += (1.0 - config.lambda) * g.loss;
      if (want_grad) out.d_matrix += (1.0 - config.lambda) * g.d_matrix;
    }
  }
  return out;
}

inline double rn_loss(const RnBatch& batch, const RnPrototypes& protos, const Mat& m,
                      const RnConfig& config) {
  return rn_loss_grad(batch, protos, m, config, false).loss;
}

/// Builds the batch for `pairs`: the target term sees every row in the pairs
/// (or, under TflScope::Positives, those positive for each target).
inline RnBatch make_rn_batch(const EmbeddingStore& store, std::span<const Pair> pairs,
                             const RnPrototypes& protos, TflScope scope) {
  std::vector<std::size_t> pos, neg, all;
  for (const auto& p : pairs) {
    pos.push_back(p.pos_row);
    neg.push_back(p.neg_row);
  }
  all = pos;
  all.insert(all.end(), neg.begin(), neg.end());
  RnBatch batch;
  batch.pos_rows = detail::rows_of(store, pos);
  batch.neg_rows = detail::rows_of(store, neg);
  for (const Prototype* t : protos.targets) {
    if (!t) fail(ErrorCode::MissingPrototype, "null target prototype");
    if (scope == TflScope::All) {
      batch.target_rows.push_back(detail::rows_of(store, all));
      continue;
    }
    const auto& labels = store.labels(t->attribute);
    std::vector<std::size_t> keep;
    for (std::size_t r : all)
      if (labels[r] != Label::Unlabeled && label_target(labels[r], t->polarity) > 0)
        keep.push_back(r);
    batch.target_rows.push_back(detail::rows_of(store, keep));
  }
  return batch;
}

// ---------------------------------------------------------------------------
// Training

struct RnInputs {
  StoreView train;
  StoreView test;
  std::string bias_attribute;
  RnPrototypes prototypes;
  std::vector<NamedQuery> bias_queries;  // early-stop query set
};

struct RnTrace {
  std::vector<double> epoch_metric;  // index 0 = identity
  std::vector<double> epoch_loss;    // index 0 unused (0.0)
  std::size_t best_epoch = 0;
  double best_metric = 0.0;
};

inline double early_stop_metric(const RnInputs& in, const Mat& m, std::size_t k) {
  return mean_bias_at_k(in.test.with_transform(m), in.bias_attribute, in.bias_queries, k);
}

/// SGD on the matrix entries from the identity. After every epoch the mean
/// Bias@k over the bias-word queries is measured on the test view; the
/// snapshot with the lowest value (epoch 0 included) is returned.
inline Rrm train_rrm(const RnInputs& in, const RnConfig& config, RnTrace* trace = nullptr) {
  config.validate();
  if (in.bias_queries.empty())
    fail(ErrorCode::InvalidArgument, "early stopping needs bias-word queries");
  if (!in.prototypes.bias_pos || !in.prototypes.bias_neg)
    fail(ErrorCode::MissingPrototype, "both bias-polarity prototypes are required");
  const std::size_t d = in.train.dim();
  const EmbeddingStore& store = in.train.store();

  Rrm current = Rrm::identity(in.bias_attribute, d, config.lambda);
  Rrm best = current;
  RnTrace local;
  RnTrace& tr = trace ? *trace : local;
  tr = RnTrace{};
  tr.best_metric = early_stop_metric(in, current.matrix, config.early_stop.k);
  tr.epoch_metric.push_back(tr.best_metric);
  tr.epoch_loss.push_back(0.0);

  std::size_t since_best = 0;
  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto pairs = make_pairs(in.train, in.bias_attribute, mix_seed(config.seed, epoch));
    double loss_sum = 0.0;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < pairs.size(); start += config.batch_pairs) {
      const std::size_t end = std::min(pairs.size(), start + config.batch_pairs);
      const RnBatch batch = make_rn_batch(
          store, std::span<const Pair>(pairs).subspan(start, end - start), in.prototypes,
          config.tfl_scope);
      auto g = rn_loss_grad(batch, in.prototypes, current.matrix, config);
      Mat next = current.matrix - config.lr * g.d_matrix;
      if (!std::isfinite(g.loss) || !next.allFinite())
        throw DivergenceError<Rrm>("RRM loss diverged at epoch " + std::to_string(epoch),
                                   current);
      current.matrix = std::move(next);
      loss_sum += g.loss;
      ++steps;
    }
    current.trained_epochs = epoch;
    const double metric = early_stop_metric(in, current.matrix, config.early_stop.k);
    tr.epoch_metric.push_back(metric);
    tr.epoch_loss.push_back(steps ? loss_sum / static_cast<double>(steps) : 0.0);
    if (metric < tr.best_metric) {
      tr.best_metric = metric;
      tr.best_epoch = epoch;
      best = current;
      since_best = 0;
    } else if (++since_best >= config.early_stop.patience) {
      break;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// FRRM: "FRRM" | u16 version=1 | u32 dim | dim*dim f32 row-major.

inline constexpr std::uint16_t kFrrmVersion = 1;
inline constexpr std::size_t kFrrmHeaderSize = 4 + 2 + 4;

inline std::string encode_frrm(const Mat& m) {
  if (m.rows() != m.cols() || m.rows() == 0)
    fail(ErrorCode::DimMismatch, "FRRM matrix must be square and non-empty");
  std::string out;
  out.append("FRRM", 4);
  detail::put<std::uint16_t>(out, kFrrmVersion);
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(m.rows()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) detail::put<float>(out, static_cast<float>(m(i, j)));
  return out;
}

inline Mat decode_frrm(std::string_view bytes) {
  if (bytes.size() < 4 || bytes.substr(0, 4) != "FRRM")
    fail(ErrorCode::MagicMismatch, "missing FRRM magic");
  if (bytes.size() < kFrrmHeaderSize)
    fail(ErrorCode::TruncatedHeader, "FRRM header shorter than 10 bytes");
  const auto version = detail::get<std::uint16_t>(bytes, 4);
  if (version != kFrrmVersion)
    fail(ErrorCode::UnsupportedVersion, "FRRM version " + std::to_string(version));
  const auto dim = detail::get<std::uint32_t>(bytes, 6);
  if (dim == 0) fail(ErrorCode::DimZero, "FRRM dim is 0");
  const std::size_t expected = std::size_t{dim} * dim * sizeof(float);
  if (bytes.size() - kFrrmHeaderSize != expected)
    fail(ErrorCode::RowCountMismatch, "FRRM body is " +
                                          std::to_string(bytes.size() - kFrrmHeaderSize) +
                                          " bytes, expected " + std::to_string(expected));
  Mat m(dim, dim);
  std::size_t offset = kFrrmHeaderSize;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      const float v = detail::get<float>(bytes, offset);
      if (!std::isfinite(v)) fail(ErrorCode::NonFiniteVector, "FRRM entry");
      m(i, j) = v;
      offset += sizeof(float);
    }
  }
  return m;
}

inline void save_rrm(const std::filesystem::path& path, const Rrm& rrm) {
  detail::write_file_atomic(path, encode_frrm(rrm.matrix));
}

inline Rrm load_rrm(const std::filesystem::path& path, std::string bias_attribute = {}) {
  Rrm r;
  r.matrix = decode_frrm(detail::read_file(path));
  r.bias_attribute = std::move(bias_attribute);
  return r;
}

}  // namespace fairsim
