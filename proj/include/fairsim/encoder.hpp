#pragma once

// Frozen text encoders used for prompt-prefix learning. Both are mean-pool
// encoders: "toy" applies a fixed seeded orthonormal map after pooling,
// "bypass" leaves pooled token vectors in embedding space.

#include <Eigen/Dense>

#include <cctype>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "fairsim/embedstore.hpp"
#include "fairsim/error.hpp"
#include "fairsim/random.hpp"

namespace fairsim {

/// Token anchors in embedding space. A single-token prompt encodes to its
/// anchor under either encoder.
struct Vocabulary {
  std::size_t dim = 0;
  std::uint64_t encoder_seed = 0;
  std::map<std::string, Eigen::VectorXd> anchors;

  const Eigen::VectorXd& anchor(std::string_view token) const {
    auto it = anchors.find(std::string(token));
    if (it == anchors.end()) fail(ErrorCode::UnknownToken, std::string(token));
    return it->second;
  }

  nlohmann::json to_json() const {
    nlohmann::json tokens = nlohmann::json::object();
    for (const auto& [tok, v] : anchors)
      tokens[tok] = std::vector<double>(v.data(), v.data() + v.size());
    return {{"dim", dim}, {"encoder_seed", encoder_seed}, {"tokens", tokens}};
  }

  static Vocabulary from_json(const nlohmann::json& j) {
    Vocabulary v;
    try {
      v.dim = j.at("dim").get<std::size_t>();
      v.encoder_seed = j.at("encoder_seed").get<std::uint64_t>();
      for (const auto& [tok, arr] : j.at("tokens").items()) {
        auto values = arr.get<std::vector<double>>();
        if (values.size() != v.dim) fail(ErrorCode::DimMismatch, "token " + tok);
        v.anchors[tok] = Eigen::Map<const Eigen::VectorXd>(
            values.data(), static_cast<Eigen::Index>(values.size()));
      }
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::MalformedFile, std::string("vocabulary: ") + e.what());
    }
    return v;
  }
};

inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::istringstream in{std::string(text)};
  std::string tok;
  while (in >> tok) {
    for (auto& c : tok) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    out.push_back(tok);
  }
  return out;
}

class TextEncoder {
 public:
  virtual ~TextEncoder() = default;

  virtual std::string id() const = 0;
  virtual std::size_t token_dim() const = 0;
  virtual std::size_t embed_dim() const = 0;

  /// Input-space vector for a vocabulary token.
  virtual Eigen::VectorXd token_vector(std::string_view token) const = 0;

  /// Encodes a token sequence (one token per row).
  virtual Eigen::VectorXd encode(const Eigen::MatrixXd& tokens) const = 0;

  virtual bool differentiable() const { return false; }

  /// Pulls an output sensitivity back to per-token sensitivities.
  virtual Eigen::MatrixXd vjp(const Eigen::MatrixXd& tokens,
                              const Eigen::VectorXd& d_output) const {
    (void)tokens;
    (void)d_output;
    fail(ErrorCode::EncoderNotDifferentiable, id());
  }

  Eigen::MatrixXd token_matrix(const std::vector<std::string>& tokens) const {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(tokens.size()),
                      static_cast<Eigen::Index>(token_dim()));
    for (std::size_t i = 0; i < tokens.size(); ++i)
      m.row(static_cast<Eigen::Index>(i)) = token_vector(tokens[i]).transpose();
    return m;
  }

  Eigen::VectorXd encode_text(std::string_view text) const {
    auto tokens = tokenize(text);
    if (tokens.empty()) fail(ErrorCode::InvalidArgument, "empty text");
    return encode(token_matrix(tokens));
  }
};

/// Seeded random orthonormal d x d matrix (QR of a Gaussian draw).
inline Eigen::MatrixXd random_orthonormal(std::size_t d, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd g(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
  for (Eigen::Index j = 0; j < g.cols(); ++j)
    for (Eigen::Index i = 0; i < g.rows(); ++i) g(i, j) = normal(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(g.rows(), g.cols());
  const Eigen::MatrixXd& r = qr.matrixQR();
  for (Eigen::Index j = 0; j < q.cols(); ++j)
    if (r(j, j) < 0) q.col(j) = -q.col(j);
  return q;
}

class MeanPoolEncoder : public TextEncoder {
 public:
  std::size_t token_dim() const override { return vocab_.dim; }
  std::size_t embed_dim() const override { return vocab_.dim; }
  bool differentiable() const override { return true; }
  const Vocabulary& vocabulary() const { return vocab_; }

  Eigen::VectorXd encode(const Eigen::MatrixXd& tokens) const override {
    check(tokens);
    Eigen::VectorXd pooled = Eigen::VectorXd::Zero(tokens.cols());
    for (Eigen::Index i = 0; i < tokens.rows(); ++i) pooled += tokens.row(i).transpose();
    pooled /= static_cast<double>(tokens.rows());
    return map_ ? Eigen::VectorXd(*map_ * pooled) : pooled;
  }

  Eigen::MatrixXd vjp(const Eigen::MatrixXd& tokens,
                      const Eigen::VectorXd& d_output) const override {
    check(tokens);
    Eigen::VectorXd back = map_ ? Eigen::VectorXd(map_->transpose() * d_output) : d_output;
    back /= static_cast<double>(tokens.rows());
    Eigen::MatrixXd out(tokens.rows(), tokens.cols());
    for (Eigen::Index i = 0; i < tokens.rows(); ++i) out.row(i) = back.transpose();
    return out;
  }

  Eigen::VectorXd token_vector(std::string_view token) const override {
    const auto& a = vocab_.anchor(token);
    return map_ ? Eigen::VectorXd(map_->transpose() * a) : a;
  }

 protected:
  MeanPoolEncoder(Vocabulary vocab, std::optional<Eigen::MatrixXd> map)
      : vocab_(std::move(vocab)), map_(std::move(map)) {}

 private:
  void check(const Eigen::MatrixXd& tokens) const {
    if (tokens.rows() == 0) fail(ErrorCode::InvalidArgument, "empty token sequence");
    if (static_cast<std::size_t>(tokens.cols()) != token_dim())
      fail(ErrorCode::DimMismatch, "token dim");
  }

  Vocabulary vocab_;
  std::optional<Eigen::MatrixXd> map_;
};

class ToyEncoder final : public MeanPoolEncoder {
 public:
  explicit ToyEncoder(Vocabulary vocab)
      : MeanPoolEncoder(vocab, random_orthonormal(vocab.dim, vocab.encoder_seed)) {}
  std::string id() const override { return "toy"; }
};

class BypassEncoder final : public MeanPoolEncoder {
 public:
  explicit BypassEncoder(Vocabulary vocab) : MeanPoolEncoder(std::move(vocab), std::nullopt) {}
  std::string id() const override { return "bypass"; }
};

inline std::unique_ptr<TextEncoder> make_encoder(std::string_view id, Vocabulary vocab) {
  if (id == "toy") return std::make_unique<ToyEncoder>(std::move(vocab));
  if (id == "bypass") return std::make_unique<BypassEncoder>(std::move(vocab));
  fail(ErrorCode::InvalidArgument, "unknown encoder '" + std::string(id) + "'");
}

}  // namespace fairsim
