#pragma once

// End-to-end debiasing on a synthetic collection: split, learn attribute
// prototypes, train the re-representation matrix.

#include <memory>
#include <string>
#include <vector>

#include "fairsim/apl.hpp"
#include "fairsim/config.hpp"
#include "fairsim/encoder.hpp"
#include "fairsim/rrm.hpp"
#include "fairsim/synth.hpp"

namespace fairsim {

struct PrototypeSet {
  Prototype bias_pos;
  Prototype bias_neg;
  std::vector<Prototype> targets;

  RnPrototypes pointers() const {
    RnPrototypes p{&bias_pos, &bias_neg, {}};
    for (const auto& t : targets) p.targets.push_back(&t);
    return p;
  }
};

/// Learned (APL) or manual prototypes for the bias polarities and every target.
inline PrototypeSet make_prototypes(const SynthData& data, const StoreView& train,
                                    const AplConfig& apl, const TextEncoder& encoder,
                                    bool learned = true) {
  const SynthSpec& s = data.spec;
  auto build = [&](const std::string& attr, const std::string& token, int polarity,
                   std::uint64_t slot) {
    if (!learned) return manual_prototype(train, attr, {token}, encoder, polarity);
    AplConfig c = apl;
    c.seed = mix_seed(apl.seed, slot);
    return train_prototype(train, attr, {token}, c, encoder, polarity);
  };
  PrototypeSet set;
  set.bias_pos = build(s.bias_attribute, s.bias_pos_token, 1, 0);
  set.bias_neg = build(s.bias_attribute, s.bias_neg_token, -1, 1);
  for (std::size_t k = 0; k < s.target_strengths.size(); ++k) {
    const auto& name = s.target_strengths[k].first;
    set.targets.push_back(build(name, name, 1, k + 2));
  }
  return set;
}

struct PipelineResult {
  Split split;
  PrototypeSet prototypes;
  Rrm rrm;
  RnTrace trace;
};

inline PipelineResult run_pipeline(const SynthData& data, const RunConfig& config,
                                   bool learned_prototypes = true) {
  PipelineResult r;
  r.split = split(data.store, config.split);
  ToyEncoder encoder(data.vocab);
  r.prototypes = make_prototypes(data, r.split.train, config.apl, encoder, learned_prototypes);
  RnInputs in{r.split.train, r.split.test, data.spec.bias_attribute, r.prototypes.pointers(),
              data.bias_queries};
  r.rrm = train_rrm(in, config.rrm, &r.trace);
  return r;
}

}  // namespace fairsim
