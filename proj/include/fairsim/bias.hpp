#pragma once

// Retrieval bias: the gap between a group's share of the top-k results for a
// query and its share of the whole (labelled) collection.

#include <Eigen/Dense>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "fairsim/embedstore.hpp"
#include "fairsim/error.hpp"
#include "fairsim/simcore.hpp"

namespace fairsim {

struct NamedQuery {
  std::string word;
  Vec embedding;
};

/// |P(+1 in top k) - P(+1 in collection)|, over rows labelled for `attribute`.
inline double bias_at_k(const StoreView& view, std::string_view attribute,
                        const Vec& query, std::size_t k) {
  if (k == 0) fail(ErrorCode::InvalidArgument, "k must be >= 1");
  const StoreView rows = labeled_rows(view, attribute);
  if (rows.empty()) fail(ErrorCode::NoLabeledRows, std::string(attribute));
  const auto& labels = rows.store().labels(attribute);

  std::size_t positives = 0;
  for (std::size_t r : rows.rows()) positives += labels[r] == Label::Positive ? 1 : 0;
  const double p_dataset = static_cast<double>(positives) / static_cast<double>(rows.size());

  const RetrievalResult top = top_k(similarity_set(rows, query), k);
  std::size_t top_positives = 0;
  for (const Hit& h : top.ranked)
    top_positives += labels[rows.row(h.position)] == Label::Positive ? 1 : 0;
  const double p_top =
      static_cast<double>(top_positives) / static_cast<double>(top.ranked.size());
  return std::abs(p_top - p_dataset);
}

struct BiasReport {
  std::size_t k = 0;
  std::string source;
  std::map<std::string, std::map<std::string, double>> per_query;  // word -> attr -> bias
  double mean_bias = 0.0;
};

inline BiasReport bias_suite(const StoreView& view, const std::vector<std::string>& attributes,
                             const std::vector<NamedQuery>& queries, std::size_t k,
                             std::string source = "vanilla") {
  if (queries.empty()) fail(ErrorCode::InvalidArgument, "bias_suite needs >= 1 query");
  if (attributes.empty()) fail(ErrorCode::InvalidArgument, "bias_suite needs >= 1 attribute");
  BiasReport report{k, std::move(source), {}, 0.0};
  double sum = 0.0;
  std::size_t cells = 0;
  for (const auto& q : queries) {
    for (const auto& attr : attributes) {
      const double b = bias_at_k(view, attr, q.embedding, k);
      report.per_query[q.word][attr] = b;
      sum += b;
      ++cells;
    }
  }
  report.mean_bias = sum / static_cast<double>(cells);
  return report;
}

/// Mean Bias@k of one attribute across a query set.
inline double mean_bias_at_k(const StoreView& view, std::string_view attribute,
                             const std::vector<NamedQuery>& queries, std::size_t k) {
  if (queries.empty()) fail(ErrorCode::InvalidArgument, "empty query set");
  double sum = 0.0;
  for (const auto& q : queries) sum += bias_at_k(view, attribute, q.embedding, k);
  return sum / static_cast<double>(queries.size());
}

inline nlohmann::json bias_report_to_json(const BiasReport& r) {
  nlohmann::json per_query = nlohmann::json::object();
  nlohmann::json per_query_pp = nlohmann::json::object();
  for (const auto& [word, attrs] : r.per_query) {
    for (const auto& [attr, value] : attrs) {
      per_query[word][attr] = value;
      per_query_pp[word][attr] = 100.0 * value;
    }
  }
  return {{"k", r.k},
          {"source", r.source},
          {"per_query", per_query},
          {"per_query_pp", per_query_pp},
          {"mean_bias", r.mean_bias},
          {"mean_bias_pp", 100.0 * r.mean_bias},
          {"population", "rows labelled on the attribute"}};
}

inline BiasReport bias_report_from_json(const nlohmann::json& j) {
  BiasReport r;
  try {
    r.k = j.at("k").get<std::size_t>();
    r.source = j.value("source", std::string{});
    for (const auto& [word, attrs] : j.at("per_query").items())
      for (const auto& [attr, value] : attrs.items()) r.per_query[word][attr] = value.get<double>();
    r.mean_bias = j.at("mean_bias").get<double>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::MalformedFile, std::string("bias report: ") + e.what());
  }
  return r;
}

// Query files: one {"word": str, "embedding": [f32...]} object per line.

inline std::vector<NamedQuery> read_queries_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Io, "cannot open " + path.string());
  std::vector<NamedQuery> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto j = nlohmann::json::parse(line);
      auto values = j.at("embedding").get<std::vector<double>>();
      NamedQuery q{j.at("word").get<std::string>(),
                   Eigen::Map<const Vec>(values.data(), static_cast<Eigen::Index>(values.size()))};
      out.push_back(std::move(q));
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::MalformedFile,
           path.string() + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

inline std::string queries_jsonl(const std::vector<NamedQuery>& queries) {
  std::string out;
  for (const auto& q : queries) {
    // f32 precision on disk, written as the exact double of each float so a
    // reload reproduces the same values.
    std::vector<double> values(static_cast<std::size_t>(q.embedding.size()));
    for (Eigen::Index i = 0; i < q.embedding.size(); ++i)
      values[static_cast<std::size_t>(i)] = static_cast<float>(q.embedding[i]);
    out += nlohmann::json{{"word", q.word}, {"embedding", values}}.dump();
    out += '\n';
  }
  return out;
}

}  // namespace fairsim
