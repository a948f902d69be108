#pragma once

// Attribute prototype learning: a query built from learnable prefix token
// vectors followed by fixed attribute tokens, trained so that similarity to
// the query, offset by the midpoint of the two group centers, separates
// positive from negative samples.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"

#include "fairsim/diffcore.hpp"
#include "fairsim/embedstore.hpp"
#include "fairsim/encoder.hpp"
#include "fairsim/error.hpp"
#include "fairsim/random.hpp"
#include "fairsim/simcore.hpp"

namespace fairsim {

struct Centers {
  double pos = 0.0;
  double neg = 0.0;
  double mid = 0.0;
  bool operator==(const Centers&) const = default;
};

struct Prototype {
  std::string attribute;
  int polarity = 1;  // +1: positives are label +1; -1: positives are label -1
  std::string encoder_id;
  std::uint64_t encoder_seed = 0;
  Mat prefix;  // n_prefix x token_dim
  std::vector<std::string> suffix_tokens;
  Vec query;
  Centers centers;
  std::string config_hash;

  std::size_t n_prefix() const { return static_cast<std::size_t>(prefix.rows()); }
};

enum class CenterRefresh { Once, PerEpoch };

struct AplConfig {
  std::size_t n_prefix = 6;
  double lr = 0.05;
  std::size_t epochs = 30;
  std::size_t batch = 0;  // 0 = full batch
  std::uint64_t seed = 0;
  double init_scale = 0.02;
  CenterRefresh center_refresh = CenterRefresh::PerEpoch;

  void validate() const {
    if (n_prefix < 1) fail(ErrorCode::InvalidArgument, "n_prefix must be >= 1");
    if (!(lr >= 0.0) || !std::isfinite(lr)) fail(ErrorCode::InvalidArgument, "lr");
    if (epochs < 1) fail(ErrorCode::InvalidArgument, "epochs must be >= 1");
    if (!(init_scale >= 0.0)) fail(ErrorCode::InvalidArgument, "init_scale");
  }
};

inline Mat token_sequence(const Mat& prefix, const TextEncoder& encoder,
                          const std::vector<std::string>& suffix) {
  Mat suffix_vectors = encoder.token_matrix(suffix);
  Mat tokens(prefix.rows() + suffix_vectors.rows(),
             static_cast<Eigen::Index>(encoder.token_dim()));
  if (prefix.rows() > 0) tokens.topRows(prefix.rows()) = prefix;
  tokens.bottomRows(suffix_vectors.rows()) = suffix_vectors;
  return tokens;
}

inline Vec compile_query(const Prototype& proto, const TextEncoder& encoder) {
  if (proto.prefix.rows() > 0 &&
      static_cast<std::size_t>(proto.prefix.cols()) != encoder.token_dim())
    fail(ErrorCode::DimMismatch, "prefix width != encoder token dim");
  return encoder.encode(token_sequence(proto.prefix, encoder, proto.suffix_tokens));
}

/// The no-prefix ablation: the attribute text encoded as is.
inline Vec manual_query(std::string_view attribute_text, const TextEncoder& encoder) {
  return encoder.encode_text(attribute_text);
}

inline double label_target(Label l, int polarity) {
  return static_cast<double>(polarity) * label_value(l);
}

/// Mean similarity of the positive group, the negative group, and their midpoint.
inline Centers compute_centers(const StoreView& view, std::string_view attribute,
                               const Vec& query, int polarity = 1) {
  const auto& labels = view.store().labels(attribute);
  double sum_pos = 0.0, sum_neg = 0.0;
  std::size_t n_pos = 0, n_neg = 0;
  const SimilaritySet sims = similarity_set(view, query);
  for (std::size_t k = 0; k < view.size(); ++k) {
    const Label l = labels[view.row(k)];
    if (l == Label::Unlabeled) continue;
    if (label_target(l, polarity) > 0) {
      sum_pos += sims.scores[k];
      ++n_pos;
    } else {
      sum_neg += sims.scores[k];
      ++n_neg;
    }
  }
  if (n_pos == 0 || n_neg == 0)
    fail(ErrorCode::EmptyGroup, std::string(attribute) + " needs both labels");
  Centers c;
  c.pos = sum_pos / static_cast<double>(n_pos);
  c.neg = sum_neg / static_cast<double>(n_neg);
  c.mid = (c.pos + c.neg) / 2.0;
  return c;
}

struct LossAndQueryGrad {
  double loss = 0.0;
  Vec d_query;
};

/// mean_i (tanh(S_i - center_mid) - y_i)^2 and its gradient w.r.t. the query.
/// Centers are treated as constants.
inline LossAndQueryGrad apl_loss_grad(const StoreView& batch, std::string_view attribute,
                                      const Vec& query, double center_mid,
                                      int polarity = 1) {
  const auto& labels = batch.store().labels(attribute);
  if (batch.empty()) fail(ErrorCode::InvalidArgument, "empty batch");
  LossAndQueryGrad out{0.0, Vec::Zero(query.size())};
  const double n = static_cast<double>(batch.size());
  for (std::size_t k = 0; k < batch.size(); ++k) {
    const Label l = labels[batch.row(k)];
    if (l == Label::Unlabeled)
      fail(ErrorCode::UnlabeledRow, "row " + std::to_string(batch.row(k)));
    const double y = label_target(l, polarity);
    const Vec v = batch.vector(k);
    const double s = cosine(v, query);
    const double t = Tanh::forward(s - center_mid);
    out.loss += (t - y) * (t - y);
    const double d_s = Tanh::vjp(t, 2.0 * (t - y) / n);
    out.d_query += grad_cosine(v, query, d_s).dl;
  }
  out.loss /= n;
  return out;
}

inline double apl_loss(const StoreView& batch, std::string_view attribute,
                       const Vec& query, double center_mid, int polarity = 1) {
  return apl_loss_grad(batch, attribute, query, center_mid, polarity).loss;
}

/// Loss and gradient with respect to the prototype's prefix rows.
inline std::pair<double, Mat> apl_prefix_grad(const StoreView& batch,
                                              std::string_view attribute,
                                              const Prototype& proto,
                                              const TextEncoder& encoder) {
  const Vec query = compile_query(proto, encoder);
  auto g = apl_loss_grad(batch, attribute, query, proto.centers.mid, proto.polarity);
  Mat d_prefix = grad_prefix(encoder, proto.prefix,
                             encoder.token_matrix(proto.suffix_tokens), g.d_query);
  return {g.loss, std::move(d_prefix)};
}

/// Trains a prototype with plain SGD on the prefix. The encoder, suffix
/// tokens and store are never modified. `epoch_loss`, when given, receives
/// the mean step loss of every epoch.
inline Prototype train_prototype(const StoreView& train, std::string_view attribute,
                                 const std::vector<std::string>& suffix_tokens,
                                 const AplConfig& config, const TextEncoder& encoder,
                                 int polarity = 1,
                                 std::vector<double>* epoch_loss = nullptr) {
  config.validate();
  if (polarity != 1 && polarity != -1)
    fail(ErrorCode::InvalidArgument, "polarity must be +1 or -1");
  const StoreView rows = labeled_rows(train, attribute);

  Prototype proto;
  proto.attribute = std::string(attribute);
  proto.polarity = polarity;
  proto.encoder_id = encoder.id();
  if (auto* mp = dynamic_cast<const MeanPoolEncoder*>(&encoder))
    proto.encoder_seed = mp->vocabulary().encoder_seed;
  proto.suffix_tokens = suffix_tokens;
  proto.prefix.resize(static_cast<Eigen::Index>(config.n_prefix),
                      static_cast<Eigen::Index>(encoder.token_dim()));
  {
    Rng rng(config.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (Eigen::Index i = 0; i < proto.prefix.rows(); ++i)
      for (Eigen::Index j = 0; j < proto.prefix.cols(); ++j)
        proto.prefix(i, j) = config.init_scale * normal(rng);
  }
  proto.query = compile_query(proto, encoder);
  proto.centers = compute_centers(rows, attribute, proto.query, polarity);

  const Mat suffix = encoder.token_matrix(suffix_tokens);
  const std::size_t n = rows.size();
  const std::size_t batch = config.batch == 0 ? n : std::min(config.batch, n);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    proto.query = compile_query(proto, encoder);
    if (config.center_refresh == CenterRefresh::PerEpoch || epoch == 0)
      proto.centers = compute_centers(rows, attribute, proto.query, polarity);

    std::vector<std::size_t> order(rows.rows().begin(), rows.rows().end());
    if (batch < n) order = hash_shuffle(order, mix_seed(config.seed, epoch + 1));

    double loss_sum = 0.0;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t end = std::min(n, start + batch);
      const StoreView step_rows = rows.with_rows(
          std::vector<std::size_t>(order.begin() + static_cast<std::ptrdiff_t>(start),
                                   order.begin() + static_cast<std::ptrdiff_t>(end)));
      const Vec query = compile_query(proto, encoder);
      auto g = apl_loss_grad(step_rows, attribute, query, proto.centers.mid, polarity);
      if (!std::isfinite(g.loss) || !g.d_query.allFinite()) {
        proto.query = compile_query(proto, encoder);
        throw DivergenceError<Prototype>(
            "APL loss diverged at epoch " + std::to_string(epoch), proto);
      }
      const Mat d_prefix = grad_prefix(encoder, proto.prefix, suffix, g.d_query);
      Mat next = proto.prefix - config.lr * d_prefix;
      if (!next.allFinite()) {
        proto.query = compile_query(proto, encoder);
        throw DivergenceError<Prototype>(
            "APL prefix diverged at epoch " + std::to_string(epoch), proto);
      }
      proto.prefix = std::move(next);
      loss_sum += g.loss;
      ++steps;
    }
    if (epoch_loss) epoch_loss->push_back(loss_sum / static_cast<double>(steps));
  }
  proto.query = compile_query(proto, encoder);
  proto.centers = compute_centers(rows, attribute, proto.query, polarity);
  return proto;
}

/// A prototype without a learnable prefix: the attribute tokens encoded as is.
inline Prototype manual_prototype(const StoreView& train, std::string_view attribute,
                                  const std::vector<std::string>& tokens,
                                  const TextEncoder& encoder, int polarity = 1) {
  Prototype proto;
  proto.attribute = std::string(attribute);
  proto.polarity = polarity;
  proto.encoder_id = encoder.id();
  if (auto* mp = dynamic_cast<const MeanPoolEncoder*>(&encoder))
    proto.encoder_seed = mp->vocabulary().encoder_seed;
  proto.prefix.resize(0, static_cast<Eigen::Index>(encoder.token_dim()));
  proto.suffix_tokens = tokens;
  proto.query = compile_query(proto, encoder);
  proto.centers = compute_centers(labeled_rows(train, attribute), attribute, proto.query,
                                  polarity);
  return proto;
}

/// Held-out accuracy of sign(S - center_mid) against the polarity-adjusted labels.
inline double prototype_accuracy(const StoreView& view, std::string_view attribute,
                                 const Vec& query, double center_mid, int polarity = 1) {
  const StoreView rows = labeled_rows(view, attribute);
  if (rows.empty()) fail(ErrorCode::NoLabeledRows, std::string(attribute));
  const SimilaritySet sims = similarity_set(rows, query);
  std::size_t correct = 0;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const double predicted = sims.scores[k] - center_mid > 0 ? 1.0 : -1.0;
    if (predicted == label_target(rows.label(attribute, k), polarity)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(rows.size());
}

// ---------------------------------------------------------------------------
// Prototype files.

inline nlohmann::json prototype_to_json(const Prototype& p) {
  nlohmann::json prefix = nlohmann::json::array();
  for (Eigen::Index i = 0; i < p.prefix.rows(); ++i) {
    std::vector<double> row(static_cast<std::size_t>(p.prefix.cols()));
    for (Eigen::Index j = 0; j < p.prefix.cols(); ++j)
      row[static_cast<std::size_t>(j)] = p.prefix(i, j);
    prefix.push_back(row);
  }
  nlohmann::json j = {
      {"attribute", p.attribute},
      {"polarity", p.polarity},
      {"encoder_id", p.encoder_id},
      {"encoder_seed", p.encoder_seed},
      {"n_prefix", p.prefix.rows()},
      {"prefix", prefix},
      {"suffix_tokens", p.suffix_tokens},
      {"query_embedding", std::vector<double>(p.query.data(), p.query.data() + p.query.size())},
      {"centers", {{"pos", p.centers.pos}, {"neg", p.centers.neg}, {"mid", p.centers.mid}}},
  };
  if (!p.config_hash.empty()) j["config_hash"] = p.config_hash;
  return j;
}

inline Prototype prototype_from_json(const nlohmann::json& j) {
  Prototype p;
  try {
    p.attribute = j.at("attribute").get<std::string>();
    p.polarity = j.value("polarity", 1);
    p.encoder_id = j.at("encoder_id").get<std::string>();
    p.encoder_seed = j.value("encoder_seed", std::uint64_t{0});
    const auto query = j.at("query_embedding").get<std::vector<double>>();
    p.query = Eigen::Map<const Vec>(query.data(), static_cast<Eigen::Index>(query.size()));
    const auto rows = j.at("prefix").get<std::vector<std::vector<double>>>();
    const auto n_prefix = j.at("n_prefix").get<std::size_t>();
    if (rows.size() != n_prefix) fail(ErrorCode::MalformedFile, "n_prefix != prefix rows");
    const std::size_t width = rows.empty() ? p.query.size() : rows.front().size();
    p.prefix.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(width));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != width) fail(ErrorCode::MalformedFile, "ragged prefix");
      for (std::size_t k = 0; k < width; ++k)
        p.prefix(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rows[i][k];
    }
    p.suffix_tokens = j.at("suffix_tokens").get<std::vector<std::string>>();
    const auto& c = j.at("centers");
    p.centers = {c.at("pos").get<double>(), c.at("neg").get<double>(), c.at("mid").get<double>()};
    p.config_hash = j.value("config_hash", std::string{});
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::MalformedFile, std::string("prototype: ") + e.what());
  }
  if (p.polarity != 1 && p.polarity != -1) fail(ErrorCode::MalformedFile, "polarity");
  return p;
}

inline void save_prototype(const std::filesystem::path& path, const Prototype& p) {
  detail::write_file_atomic(path, prototype_to_json(p).dump(2) + "\n");
}

inline Prototype load_prototype(const std::filesystem::path& path) {
  try {
    return prototype_from_json(nlohmann::json::parse(detail::read_file(path)));
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorCode::MalformedFile, path.string() + ": " + e.what());
  }
}

}  // namespace fairsim
