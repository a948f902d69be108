#pragma once

// Deterministic synthetic embedding collections with planted directions.
// Images: bias_strength * l_b * b + sum_k s_k * [l_k = +1] * t_k + sigma * noise.
// Bias-word queries: normalize(u + a_w * b) for a base text direction u.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"

#include "fairsim/bias.hpp"
#include "fairsim/embedstore.hpp"
#include "fairsim/encoder.hpp"
#include "fairsim/error.hpp"
#include "fairsim/random.hpp"
#include "fairsim/simcore.hpp"

namespace fairsim {

enum class SynthBasis { Random, Axis };
enum class TargetEncoding { Presence, Bipolar };

struct SynthSpec {
  std::size_t n = 2000;
  std::size_t dim = 64;
  std::uint64_t seed = 7;
  double bias_strength = 1.0;
  std::string bias_attribute = "gender";
  std::string bias_pos_token = "male";
  std::string bias_neg_token = "female";
  // Ordered; the k-th target takes basis direction k+1.
  std::vector<std::pair<std::string, double>> target_strengths = {
      {"glasses", 0.6}, {"hat", 0.6}, {"bangs", 0.6}};
  double noise_sigma = 0.5;
  std::vector<std::pair<std::string, double>> bias_word_affinities = default_affinities();
  SynthBasis basis = SynthBasis::Random;
  TargetEncoding target_encoding = TargetEncoding::Presence;
  double bias_positive_fraction = 0.5;
  double text_noise = 1.0;
  double manual_fidelity = 0.5;  // cosine of an attribute token anchor to its direction

  std::size_t n_target_attrs() const { return target_strengths.size(); }

  static std::vector<std::pair<std::string, double>> default_affinities() {
    // Antonym pairs sit at mirrored affinities.
    static const char* positive[] = {"smart", "rich", "happy", "noble", "nice", "kind"};
    static const char* negative[] = {"stupid", "poor", "sad", "humble", "terrible", "evil"};
    static const double levels[] = {0.4, 0.4 * 9 / 11, 0.4 * 7 / 11,
                                    0.4 * 5 / 11, 0.4 * 3 / 11, 0.4 * 1 / 11};
    std::vector<std::pair<std::string, double>> out;
    for (int i = 0; i < 6; ++i) {
      out.emplace_back(positive[i], levels[i]);
      out.emplace_back(negative[i], -levels[i]);
    }
    return out;
  }

  void validate() const {
    if (n < 4) fail(ErrorCode::InvalidArgument, "n must be >= 4");
    if (dim < n_target_attrs() + 2)
      fail(ErrorCode::DimTooSmall, "dim " + std::to_string(dim) + " < targets + 2");
    if (!(bias_strength >= 0.0)) fail(ErrorCode::InvalidArgument, "bias_strength");
    for (const auto& [name, s] : target_strengths)
      if (!(s >= 0.0)) fail(ErrorCode::InvalidArgument, "target strength " + name);
    if (!(noise_sigma >= 0.0)) fail(ErrorCode::InvalidArgument, "noise_sigma");
    if (!(text_noise >= 0.0)) fail(ErrorCode::InvalidArgument, "text_noise");
    if (!(bias_positive_fraction > 0.0 && bias_positive_fraction < 1.0))
      fail(ErrorCode::InvalidArgument, "bias_positive_fraction must be in (0, 1)");
    if (!(manual_fidelity >= 0.0 && manual_fidelity <= 1.0))
      fail(ErrorCode::InvalidArgument, "manual_fidelity must be in [0, 1]");
    if (bias_word_affinities.empty()) fail(ErrorCode::InvalidArgument, "no bias words");
  }
};

struct GroundTruth {
  Vec bias_direction;
  std::vector<Vec> target_directions;
  Vec text_direction;
  std::map<std::string, double> affinities;
};

struct SynthData {
  StorePtr store;
  std::vector<NamedQuery> bias_queries;
  PairedQueries texts;  // paired caption embeddings, truth = store row
  Vocabulary vocab;
  GroundTruth truth;
  SynthSpec spec;
};

/// Template wrapped around a bias word to form its retrieval prompt.
inline std::string bias_prompt(std::string_view word) {
  return "a photo of a " + std::string(word) + " person";
}

/// Deterministic label pattern: with p = positive fraction, row i is +1
/// exactly when floor((i+1)p) - floor(ip) == 1.
inline Label bias_label(std::size_t i, double p) {
  const auto a = std::floor(static_cast<double>(i + 1) * p);
  const auto b = std::floor(static_cast<double>(i) * p);
  return a - b == 1.0 ? Label::Positive : Label::Negative;
}

inline Label target_label(std::size_t i, std::size_t k) {
  return ((i >> (k + 1)) & 1U) == 0 ? Label::Positive : Label::Negative;
}

inline SynthData generate(const SynthSpec& spec) {
  spec.validate();
  const auto d = static_cast<Eigen::Index>(spec.dim);
  const std::size_t t_count = spec.n_target_attrs();
  const Mat basis = spec.basis == SynthBasis::Axis
                        ? Mat(Mat::Identity(d, d))
                        : random_orthonormal(spec.dim, mix_seed(spec.seed, 0xba515ULL));

  SynthData out;
  out.spec = spec;
  GroundTruth& gt = out.truth;
  gt.bias_direction = basis.col(0);
  for (std::size_t k = 0; k < t_count; ++k)
    gt.target_directions.push_back(basis.col(static_cast<Eigen::Index>(k + 1)));
  gt.text_direction = basis.col(static_cast<Eigen::Index>(t_count + 1));

  Rng rng(mix_seed(spec.seed, 0x1a6e5ULL));
  std::normal_distribution<double> normal(0.0, 1.0);

  std::vector<float> values(spec.n * spec.dim);
  std::vector<std::string> ids(spec.n);
  EmbeddingStore::AttributeMap attrs;
  auto& bias_labels = attrs[spec.bias_attribute];
  bias_labels.resize(spec.n);
  for (const auto& [name, s] : spec.target_strengths) attrs[name].resize(spec.n);

  Mat images(static_cast<Eigen::Index>(spec.n), d);
  for (std::size_t i = 0; i < spec.n; ++i) {
    const Label lb = bias_label(i, spec.bias_positive_fraction);
    bias_labels[i] = lb;
    Vec x = spec.bias_strength * label_value(lb) * gt.bias_direction;
    for (std::size_t k = 0; k < t_count; ++k) {
      const Label lt = target_label(i, k);
      attrs[spec.target_strengths[k].first][i] = lt;
      const double coef = spec.target_encoding == TargetEncoding::Presence
                              ? (lt == Label::Positive ? 1.0 : 0.0)
                              : label_value(lt);
      x += spec.target_strengths[k].second * coef * gt.target_directions[k];
    }
    for (Eigen::Index j = 0; j < d; ++j) x[j] += spec.noise_sigma * normal(rng);
    for (Eigen::Index j = 0; j < d; ++j) {
      const float f = static_cast<float>(x[j]);
      values[i * spec.dim + static_cast<std::size_t>(j)] = f;
      images(static_cast<Eigen::Index>(i), j) = f;
    }
    ids[i] = "img-" + std::to_string(i);
  }
  out.store = std::make_shared<const EmbeddingStore>(spec.dim, std::move(values),
                                                     std::move(ids), std::move(attrs));

  // Paired captions: the image plus text noise.
  out.texts.texts = images;
  for (Eigen::Index i = 0; i < images.rows(); ++i)
    for (Eigen::Index j = 0; j < d; ++j) out.texts.texts(i, j) += spec.text_noise * normal(rng);
  out.texts.truth.resize(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i) out.texts.truth[i] = i;

  // Token anchors. Template words sit on u; a bias word sits at u + 6 a b, so
  // the six-token prompt mean-pools to exactly u + a b.
  Vocabulary& vocab = out.vocab;
  vocab.dim = spec.dim;
  vocab.encoder_seed = mix_seed(spec.seed, 0xe4c0deULL);
  for (const char* w : {"a", "photo", "of", "person"}) vocab.anchors[w] = gt.text_direction;
  for (const auto& [word, a] : spec.bias_word_affinities) {
    gt.affinities[word] = a;
    vocab.anchors[word] = gt.text_direction + 6.0 * a * gt.bias_direction;
    Vec w = gt.text_direction + a * gt.bias_direction;
    out.bias_queries.push_back({word, w / norm(w)});
  }
  Rng token_rng(mix_seed(spec.seed, 0x70c3ULL));
  auto manual = [&](const Vec& dir) {
    Vec r(d);
    for (Eigen::Index j = 0; j < d; ++j) r[j] = normal(token_rng);
    r -= dot(r, dir) * dir;
    r /= norm(r);
    const double f = spec.manual_fidelity;
    return Vec(f * dir + std::sqrt(1.0 - f * f) * r);
  };
  vocab.anchors[spec.bias_pos_token] = manual(gt.bias_direction);
  vocab.anchors[spec.bias_neg_token] = manual(-gt.bias_direction);
  for (std::size_t k = 0; k < t_count; ++k)
    vocab.anchors[spec.target_strengths[k].first] = manual(gt.target_directions[k]);
  return out;
}

/// Noise-free similarity of row i to bias word `word`, in closed form.
inline double oracle_similarity(const SynthData& data, std::size_t i, std::string_view word) {
  const SynthSpec& s = data.spec;
  const double a = data.truth.affinities.at(std::string(word));
  const double lb = label_value(bias_label(i, s.bias_positive_fraction));
  double sq = s.bias_strength * s.bias_strength;
  for (std::size_t k = 0; k < s.n_target_attrs(); ++k) {
    const double st = s.target_strengths[k].second;
    const bool present = target_label(i, k) == Label::Positive;
    if (s.target_encoding == TargetEncoding::Bipolar || present) sq += st * st;
  }
  return s.bias_strength * lb * a / (std::sqrt(sq) * std::sqrt(1.0 + a * a));
}

inline nlohmann::json ground_truth_json(const SynthData& data) {
  auto vec = [](const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  nlohmann::json targets = nlohmann::json::object();
  for (std::size_t k = 0; k < data.truth.target_directions.size(); ++k)
    targets[data.spec.target_strengths[k].first] = vec(data.truth.target_directions[k]);
  return {{"bias_attribute", data.spec.bias_attribute},
          {"bias_direction", vec(data.truth.bias_direction)},
          {"target_directions", targets},
          {"text_direction", vec(data.truth.text_direction)},
          {"affinities", data.truth.affinities}};
}

/// Writes store.femb, meta.jsonl, queries.jsonl, texts.femb, vocab.json and
/// ground_truth.json into `dir`.
inline void write_synth(const SynthData& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  export_store(*data.store, dir / "store.femb", dir / "meta.jsonl");
  detail::write_file_atomic(dir / "queries.jsonl", queries_jsonl(data.bias_queries));
  const Mat& t = data.texts.texts;
  std::vector<float> tv(static_cast<std::size_t>(t.size()));
  for (Eigen::Index i = 0; i < t.rows(); ++i)
    for (Eigen::Index j = 0; j < t.cols(); ++j)
      tv[static_cast<std::size_t>(i * t.cols() + j)] = static_cast<float>(t(i, j));
  write_femb(dir / "texts.femb", static_cast<std::uint32_t>(t.cols()), tv);
  detail::write_file_atomic(dir / "vocab.json", data.vocab.to_json().dump() + "\n");
  detail::write_file_atomic(dir / "ground_truth.json", ground_truth_json(data).dump() + "\n");
}

}  // namespace fairsim
