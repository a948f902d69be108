#pragma once

// Run configuration: one JSON document with optional sections apl, rrm,
// synth, metrics and split. Unknown keys are rejected. The canonical dump of
// the effective configuration is hashed and stamped into artifacts.

#include <cstdint>
#include <cstdio>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "fairsim/apl.hpp"
#include "fairsim/embedstore.hpp"
#include "fairsim/error.hpp"
#include "fairsim/random.hpp"
#include "fairsim/rrm.hpp"
#include "fairsim/synth.hpp"

namespace fairsim {

struct MetricsConfig {
  std::size_t k = 100;
  double temperature = 100.0;
  std::vector<std::size_t> recall_ks = {1, 5, 10};
  std::uint64_t pairs_seed = 0;
  std::vector<double> epsilons = {-0.5, -0.4, -0.3, -0.2, -0.1, 0.0, 0.1, 0.2, 0.3, 0.4, 0.5};
};

struct RunConfig {
  AplConfig apl;
  RnConfig rrm;
  SynthSpec synth;
  MetricsConfig metrics;
  SplitSpec split;
};

namespace detail {

inline void reject_unknown(const nlohmann::json& j, const std::set<std::string>& allowed,
                           const std::string& where) {
  if (!j.is_object()) fail(ErrorCode::MalformedFile, where + " must be an object");
  for (const auto& [key, value] : j.items())
    if (!allowed.count(key)) fail(ErrorCode::MalformedFile, "unknown key '" + where + key + "'");
}

template <class T>
void read_opt(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

inline std::vector<std::pair<std::string, double>> ordered_pairs(const nlohmann::json& j) {
  // Arrays of [name, value] keep order; objects are accepted too (key order).
  std::vector<std::pair<std::string, double>> out;
  if (j.is_array()) {
    for (const auto& item : j) out.emplace_back(item.at(0).get<std::string>(), item.at(1).get<double>());
  } else {
    for (const auto& [k, v] : j.items()) out.emplace_back(k, v.get<double>());
  }
  return out;
}

inline nlohmann::json pairs_json(const std::vector<std::pair<std::string, double>>& p) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& [k, v] : p) out.push_back({k, v});
  return out;
}

}  // namespace detail

inline nlohmann::json to_json(const RunConfig& c) {
  return {
      {"apl",
       {{"n_prefix", c.apl.n_prefix},
        {"lr", c.apl.lr},
        {"epochs", c.apl.epochs},
        {"batch", c.apl.batch},
        {"seed", c.apl.seed},
        {"init_scale", c.apl.init_scale},
        {"center_refresh", c.apl.center_refresh == CenterRefresh::Once ? "once" : "per_epoch"}}},
      {"rrm",
       {{"lambda", c.rrm.lambda},
        {"lr", c.rrm.lr},
        {"max_epochs", c.rrm.max_epochs},
        {"batch_pairs", c.rrm.batch_pairs},
        {"seed", c.rrm.seed},
        {"early_stop_k", c.rrm.early_stop.k},
        {"patience", c.rrm.early_stop.patience},
        {"tfl_scope", c.rrm.tfl_scope == TflScope::All ? "all" : "positives"},
        {"use_bcl", c.rrm.use_bcl},
        {"use_tfl", c.rrm.use_tfl}}},
      {"synth",
       {{"n", c.synth.n},
        {"dim", c.synth.dim},
        {"seed", c.synth.seed},
        {"bias_strength", c.synth.bias_strength},
        {"bias_attribute", c.synth.bias_attribute},
        {"bias_pos_token", c.synth.bias_pos_token},
        {"bias_neg_token", c.synth.bias_neg_token},
        {"target_strengths", detail::pairs_json(c.synth.target_strengths)},
        {"noise_sigma", c.synth.noise_sigma},
        {"bias_word_affinities", detail::pairs_json(c.synth.bias_word_affinities)},
        {"basis", c.synth.basis == SynthBasis::Axis ? "axis" : "random"},
        {"target_encoding",
         c.synth.target_encoding == TargetEncoding::Presence ? "presence" : "bipolar"},
        {"bias_positive_fraction", c.synth.bias_positive_fraction},
        {"text_noise", c.synth.text_noise},
        {"manual_fidelity", c.synth.manual_fidelity}}},
      {"metrics",
       {{"k", c.metrics.k},
        {"temperature", c.metrics.temperature},
        {"recall_ks", c.metrics.recall_ks},
        {"pairs_seed", c.metrics.pairs_seed},
        {"epsilons", c.metrics.epsilons}}},
      {"split", {{"train_fraction", c.split.train_fraction}, {"seed", c.split.seed}}},
  };
}

/// Overlays the keys present in `j` onto `base`.
inline RunConfig merge_config(RunConfig base, const nlohmann::json& j) {
  using detail::read_opt;
  try {
    detail::reject_unknown(j, {"apl", "rrm", "synth", "metrics", "split"}, "");
    if (j.contains("apl")) {
      const auto& a = j.at("apl");
      detail::reject_unknown(
          a, {"n_prefix", "lr", "epochs", "batch", "seed", "init_scale", "center_refresh"},
          "apl.");
      read_opt(a, "n_prefix", base.apl.n_prefix);
      read_opt(a, "lr", base.apl.lr);
      read_opt(a, "epochs", base.apl.epochs);
      read_opt(a, "batch", base.apl.batch);
      read_opt(a, "seed", base.apl.seed);
      read_opt(a, "init_scale", base.apl.init_scale);
      if (a.contains("center_refresh")) {
        const auto v = a.at("center_refresh").get<std::string>();
        if (v != "once" && v != "per_epoch")
          fail(ErrorCode::MalformedFile, "apl.center_refresh must be once|per_epoch");
        base.apl.center_refresh = v == "once" ? CenterRefresh::Once : CenterRefresh::PerEpoch;
      }
    }
    if (j.contains("rrm")) {
      const auto& r = j.at("rrm");
      detail::reject_unknown(r,
                             {"lambda", "lr", "max_epochs", "batch_pairs", "seed", "early_stop_k",
                              "patience", "tfl_scope", "use_bcl", "use_tfl"},
                             "rrm.");
      read_opt(r, "lambda", base.rrm.lambda);
      read_opt(r, "lr", base.rrm.lr);
      read_opt(r, "max_epochs", base.rrm.max_epochs);
      read_opt(r, "batch_pairs", base.rrm.batch_pairs);
      read_opt(r, "seed", base.rrm.seed);
      read_opt(r, "early_stop_k", base.rrm.early_stop.k);
      read_opt(r, "patience", base.rrm.early_stop.patience);
      read_opt(r, "use_bcl", base.rrm.use_bcl);
      read_opt(r, "use_tfl", base.rrm.use_tfl);
      if (r.contains("tfl_scope")) {
        const auto v = r.at("tfl_scope").get<std::string>();
        if (v != "all" && v != "positives")
          fail(ErrorCode::MalformedFile, "rrm.tfl_scope must be all|positives");
        base.rrm.tfl_scope = v == "all" ? TflScope::All : TflScope::Positives;
      }
    }
    if (j.contains("synth")) {
      const auto& s = j.at("synth");
      detail::reject_unknown(
          s,
          {"n", "dim", "seed", "bias_strength", "bias_attribute", "bias_pos_token",
           "bias_neg_token", "target_strengths", "noise_sigma", "bias_word_affinities", "basis",
           "target_encoding", "bias_positive_fraction", "text_noise", "manual_fidelity"},
          "synth.");
      read_opt(s, "n", base.synth.n);
      read_opt(s, "dim", base.synth.dim);
      read_opt(s, "seed", base.synth.seed);
      read_opt(s, "bias_strength", base.synth.bias_strength);
      read_opt(s, "bias_attribute", base.synth.bias_attribute);
      read_opt(s, "bias_pos_token", base.synth.bias_pos_token);
      read_opt(s, "bias_neg_token", base.synth.bias_neg_token);
      read_opt(s, "noise_sigma", base.synth.noise_sigma);
      read_opt(s, "bias_positive_fraction", base.synth.bias_positive_fraction);
      read_opt(s, "text_noise", base.synth.text_noise);
      read_opt(s, "manual_fidelity", base.synth.manual_fidelity);
      if (s.contains("target_strengths"))
        base.synth.target_strengths = detail::ordered_pairs(s.at("target_strengths"));
      if (s.contains("bias_word_affinities"))
        base.synth.bias_word_affinities = detail::ordered_pairs(s.at("bias_word_affinities"));
      if (s.contains("basis")) {
        const auto v = s.at("basis").get<std::string>();
        if (v != "random" && v != "axis")
          fail(ErrorCode::MalformedFile, "synth.basis must be random|axis");
        base.synth.basis = v == "axis" ? SynthBasis::Axis : SynthBasis::Random;
      }
      if (s.contains("target_encoding")) {
        const auto v = s.at("target_encoding").get<std::string>();
        if (v != "presence" && v != "bipolar")
          fail(ErrorCode::MalformedFile, "synth.target_encoding must be presence|bipolar");
        base.synth.target_encoding =
            v == "presence" ? TargetEncoding::Presence : TargetEncoding::Bipolar;
      }
    }
    if (j.contains("metrics")) {
      const auto& m = j.at("metrics");
      detail::reject_unknown(m, {"k", "temperature", "recall_ks", "pairs_seed", "epsilons"},
                             "metrics.");
      read_opt(m, "k", base.metrics.k);
      read_opt(m, "temperature", base.metrics.temperature);
      read_opt(m, "recall_ks", base.metrics.recall_ks);
      read_opt(m, "pairs_seed", base.metrics.pairs_seed);
      read_opt(m, "epsilons", base.metrics.epsilons);
    }
    if (j.contains("split")) {
      const auto& s = j.at("split");
      detail::reject_unknown(s, {"train_fraction", "seed"}, "split.");
      read_opt(s, "train_fraction", base.split.train_fraction);
      read_opt(s, "seed", base.split.seed);
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::MalformedFile, std::string("config: ") + e.what());
  }
  return base;
}

inline RunConfig config_from_json(const nlohmann::json& j) { return merge_config(RunConfig{}, j); }

inline RunConfig load_config(const std::filesystem::path& path) {
  try {
    return config_from_json(nlohmann::json::parse(detail::read_file(path)));
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorCode::MalformedFile, path.string() + ": " + e.what());
  }
}

/// 16 hex digits of FNV-1a over the canonical (sorted-key) JSON dump.
inline std::string config_hash(const nlohmann::json& canonical) {
  const std::string text = canonical.dump();
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(text)));
  return buf;
}

inline std::string config_hash(const RunConfig& c) { return config_hash(to_json(c)); }

}  // namespace fairsim
