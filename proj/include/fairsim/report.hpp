#pragma once

// Summary tables comparing debiased runs with the vanilla baseline: one CSV
// row of (mean bias, mean retrieval error) per method or parameter point.

#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "fairsim/bias.hpp"
#include "fairsim/error.hpp"
#include "fairsim/simcore.hpp"

namespace fairsim {

struct RecallReport {
  std::string source;
  std::map<std::size_t, double> recall;  // k -> percent
  double mean_error = 0.0;
};

inline RecallReport make_recall_report(std::string source, std::map<std::size_t, double> recall) {
  RecallReport r{std::move(source), std::move(recall), 0.0};
  r.mean_error = mean_error_rate(r.recall);
  return r;
}

inline nlohmann::json recall_report_to_json(const RecallReport& r) {
  nlohmann::json recall = nlohmann::json::object();
  for (const auto& [k, v] : r.recall) recall[std::to_string(k)] = v;
  return {{"source", r.source}, {"recall", recall}, {"mean_error", r.mean_error}};
}

inline RecallReport recall_report_from_json(const nlohmann::json& j) {
  RecallReport r;
  try {
    r.source = j.value("source", std::string{});
    for (const auto& [k, v] : j.at("recall").items())
      r.recall[static_cast<std::size_t>(std::stoull(k))] = v.get<double>();
    r.mean_error = j.at("mean_error").get<double>();
  } catch (const std::exception& e) {
    fail(ErrorCode::MalformedFile, std::string("recall report: ") + e.what());
  }
  return r;
}

struct ReportRow {
  std::string method;
  std::string param;  // e.g. "lambda=0.8"; empty when not swept
  BiasReport bias;
  std::optional<RecallReport> recall;
};

namespace detail {

inline void check_same_queries(const BiasReport& a, const BiasReport& b) {
  if (a.k != b.k)
    fail(ErrorCode::MismatchedQuerySets,
         "k differs: " + std::to_string(a.k) + " vs " + std::to_string(b.k));
  if (a.per_query.size() != b.per_query.size())
    fail(ErrorCode::MismatchedQuerySets, "query counts differ");
  for (const auto& [word, attrs] : a.per_query) {
    auto it = b.per_query.find(word);
    if (it == b.per_query.end()) fail(ErrorCode::MismatchedQuerySets, "missing query " + word);
    for (const auto& [attr, v] : attrs)
      if (!it->second.count(attr))
        fail(ErrorCode::MismatchedQuerySets, "missing attribute " + attr + " for " + word);
  }
}

}  // namespace detail

/// CSV columns: method,param,mean_bias,mean_error,bias_rel_change,error_rel_change.
/// Relative change is (row - vanilla) / vanilla; empty when undefined.
inline std::string summary_csv(const ReportRow& vanilla, const std::vector<ReportRow>& rows) {
  std::ostringstream out;
  out.precision(10);
  out << "method,param,mean_bias,mean_error,bias_rel_change,error_rel_change\n";
  auto emit = [&](const ReportRow& r) {
    detail::check_same_queries(vanilla.bias, r.bias);
    out << r.method << ',' << r.param << ',' << r.bias.mean_bias << ',';
    if (r.recall) out << r.recall->mean_error;
    out << ',';
    if (vanilla.bias.mean_bias != 0.0)
      out << (r.bias.mean_bias - vanilla.bias.mean_bias) / vanilla.bias.mean_bias;
    out << ',';
    if (r.recall && vanilla.recall && vanilla.recall->mean_error != 0.0)
      out << (r.recall->mean_error - vanilla.recall->mean_error) / vanilla.recall->mean_error;
    out << '\n';
  };
  emit(vanilla);
  for (const auto& r : rows) emit(r);
  return out.str();
}

}  // namespace fairsim
