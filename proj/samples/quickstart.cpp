// Generates a small synthetic collection, learns prototypes, trains a
// re-representation matrix and prints bias and recall before and after.

#include <iostream>

#include "fairsim/fairsim.hpp"

int main() {
  using namespace fairsim;
  RunConfig config;
  config.synth.n = 1000;
  const SynthData data = generate(config.synth);
  const PipelineResult run = run_pipeline(data, config);

  const StoreView before = run.split.test;
  const StoreView after = apply_rrm(before, run.rrm);
  const std::size_t k = config.metrics.k;
  const std::string& attr = data.spec.bias_attribute;

  std::cout << "mean Bias@" << k << ": " << mean_bias_at_k(before, attr, data.bias_queries, k)
            << " -> " << mean_bias_at_k(after, attr, data.bias_queries, k) << '\n';

  PairedQueries texts;
  texts.texts.resize(static_cast<Eigen::Index>(before.size()), data.texts.texts.cols());
  for (std::size_t p = 0; p < before.size(); ++p) {
    texts.texts.row(static_cast<Eigen::Index>(p)) =
        data.texts.texts.row(static_cast<Eigen::Index>(before.row(p)));
    texts.truth.push_back(p);
  }
  const auto r0 = recall_at_k(before, texts, config.metrics.recall_ks);
  const auto r1 = recall_at_k(after, texts, config.metrics.recall_ks);
  for (std::size_t cut : config.metrics.recall_ks)
    std::cout << "R@" << cut << ": " << r0.at(cut) << " -> " << r1.at(cut) << '\n';
  std::cout << "best epoch " << run.trace.best_epoch << '\n';
}
