#include <gtest/gtest.h>

#include "fairsim/fairsim.hpp"
#include "support.hpp"

using namespace fairsim;
using namespace fairsim::reference;

namespace {

// 1D-ish store: row i = (score_i, 1) so ranking against e1 follows score_i.
StorePtr ranked_store(const std::vector<float>& first, const std::vector<Label>& labels,
                      const std::string& attr = "gender") {
  std::vector<float> values;
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < first.size(); ++i) {
    values.push_back(first[i]);
    values.push_back(1.0f);
    ids.push_back("r" + std::to_string(i));
  }
  EmbeddingStore::AttributeMap attrs;
  attrs[attr] = labels;
  return std::make_shared<const EmbeddingStore>(2, values, ids, attrs);
}

const Vec e1 = (Vec(2) << 1, 0).finished();
constexpr Label P = Label::Positive, N = Label::Negative, U = Label::Unlabeled;

}  // namespace

TEST(BiasAtK, SixRowsTopTwoPositive) {
  auto s = ranked_store({6, 5, 4, 3, 2, 1}, {P, P, N, N, P, N});
  EXPECT_DOUBLE_EQ(bias_at_k(StoreView::all(s), "gender", e1, 2), 0.5);
}

TEST(BiasAtK, ProportionalTopKIsZeroAndUnlabeledExcluded) {
  auto s = ranked_store({6, 5, 4, 3, 2, 1, 7}, {P, N, P, N, P, N, U});
  EXPECT_DOUBLE_EQ(bias_at_k(StoreView::all(s), "gender", e1, 2), 0.0);
  EXPECT_DOUBLE_EQ(bias_at_k(StoreView::all(s), "gender", e1, 6), 0.0);
}

TEST(BiasAtK, ErrorsAndRange) {
  auto s = ranked_store({1, 2}, {U, U});
  try {
    bias_at_k(StoreView::all(s), "gender", e1, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NoLabeledRows);
  }
  auto r = ranked_store({1, 2}, {P, N});
  EXPECT_THROW(bias_at_k(StoreView::all(r), "gender", e1, 0), Error);
}

TEST(BiasAtK, RandomStoreMatchesSortingOracleAndTopAllIsZero) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto store = random_store(seed, 500, 10, {"gender"}, true);
    Rng rng(seed + 100);
    const Vec q = random_vec(rng, 10);
    std::vector<std::size_t> rows(500);
    for (std::size_t i = 0; i < 500; ++i) rows[i] = i;
    const double b = bias_at_k(StoreView::all(store), "gender", q, 100);
    EXPECT_EQ(b, ref_bias_at_k(*store, rows, "gender", q, 100));
    EXPECT_GE(b, 0.0);
    EXPECT_LE(b, 1.0);
    EXPECT_NEAR(bias_at_k(StoreView::all(store), "gender", q, 500), 0.0, 1e-15);
  }
}

TEST(BiasSuite, SingleQueryReducesAndMeanIsArithmetic) {
  SynthSpec spec;
  spec.n = 400;
  const auto d = generate(spec);
  const auto all = StoreView::all(d.store);
  const auto one = bias_suite(all, {"gender"}, {d.bias_queries[0]}, 50);
  EXPECT_EQ(one.mean_bias, bias_at_k(all, "gender", d.bias_queries[0].embedding, 50));
  const auto full = bias_suite(all, {"gender"}, d.bias_queries, 50);
  double sum = 0;
  for (const auto& q : d.bias_queries) {
    const double v = bias_at_k(all, "gender", q.embedding, 50);
    EXPECT_EQ(full.per_query.at(q.word).at("gender"), v);
    sum += v;
  }
  EXPECT_DOUBLE_EQ(full.mean_bias, sum / 12.0);
  const auto ident = bias_suite(apply_rrm(all, Rrm::identity("gender", spec.dim)), {"gender"},
                                d.bias_queries, 50);
  EXPECT_EQ(bias_report_to_json(ident).dump(), bias_report_to_json(full).dump());
  const auto back = bias_report_from_json(bias_report_to_json(full));
  EXPECT_EQ(back.per_query, full.per_query);
  EXPECT_THROW(bias_suite(all, {"gender"}, {}, 50), Error);
}

TEST(Tas, HandCasesAndGridOracle) {
  auto s = ranked_store({0, 0}, {P, N});
  const Vec e2 = (Vec(2) << 0, 1).finished();
  EXPECT_EQ(tas(StoreView::all(s), std::vector<Vec>{e2}).mean, 1.0);
  auto one = ranked_store({1}, {P});
  EXPECT_NEAR(tas(StoreView::all(one), std::vector<Vec>{e1}).mean, std::sqrt(0.5), 1e-15);

  auto grid = random_store(3, 20, 6);
  Rng rng(4);
  std::vector<Vec> qs = {random_vec(rng, 6), random_vec(rng, 6), random_vec(rng, 6)};
  double total = 0;
  for (std::size_t i = 0; i < 20; ++i)
    for (const auto& q : qs) total += ref_cosine(ref_row(*grid, i), to_std(q));
  EXPECT_NEAR(tas(StoreView::all(grid), qs).mean, total / 60.0, 1e-14);
  EXPECT_THROW(tas(StoreView::all(grid), std::vector<Vec>{}), Error);
}

TEST(Bfd, IdenticalProfilesGiveZero) {
  // Both groups identical vectors, so each sample's S+ - S- is the same and
  // equal queries make it vanish.
  auto s = ranked_store({1, 1, 1, 1}, {P, N, P, N});
  EXPECT_EQ(bfd(StoreView::all(s), "gender", e1, e1, 0), 0.0);
}

TEST(Bfd, HandTwoPairInstance) {
  // Vectors on the unit circle; q+ = e1, q- = e2. Differences S+ - S- per row.
  const double c[] = {1.0, 0.6, 0.0, 0.8};  // cos to e1 per row
  std::vector<float> values;
  for (double x : c) {
    values.push_back(static_cast<float>(x));
    values.push_back(static_cast<float>(std::sqrt(1 - x * x)));
  }
  EmbeddingStore::AttributeMap attrs;
  attrs["gender"] = {P, P, N, N};
  auto s = std::make_shared<const EmbeddingStore>(2, values,
                                                  std::vector<std::string>{"a", "b", "c", "d"}, attrs);
  const Vec e2 = (Vec(2) << 0, 1).finished();
  double hand = 0;
  for (std::size_t r = 0; r < 4; ++r) {
    const double s1 = ref_cosine(ref_row(*s, r), {1, 0}), s2 = ref_cosine(ref_row(*s, r), {0, 1});
    hand += 0.5 * (s1 - s2) * (s1 - s2);
  }
  // Every row sits in exactly one pair, so the pairing does not change the mean.
  EXPECT_NEAR(bfd(StoreView::all(s), "gender", e1, e2, 5), hand / 2.0, 1e-15);
}

TEST(Bfd, EqualsBclOnSamePairsAndIsSwapInvariant) {
  auto store = random_store(8, 60, 5);
  Rng rng(9);
  const Vec qp = random_vec(rng, 5), qn = random_vec(rng, 5);
  const auto view = StoreView::all(store);
  const auto pairs = make_pairs(view, "gender", 3);
  Prototype pp, pn;
  pp.query = qp;
  pn.query = qn;
  EXPECT_EQ(bfd(view, "gender", qp, qn, 3), bcl(*store, pairs, pp, pn, Mat::Identity(5, 5)));

  EmbeddingStore::AttributeMap flipped;
  for (Label l : store->labels("gender"))
    flipped["gender"].push_back(l == P ? N : l == N ? P : U);
  auto swapped = std::make_shared<const EmbeddingStore>(
      5, std::vector<float>(store->values().begin(), store->values().end()), store->ids(), flipped);
  EXPECT_EQ(bfd(StoreView::all(swapped), "gender", qn, qp, 3), bfd(view, "gender", qp, qn, 3));
  auto one_group = ranked_store({1, 2}, {P, P});
  EXPECT_THROW(bfd(StoreView::all(one_group), "gender", e1, e1, 0), Error);
}

TEST(Sweep, EpsilonZeroReproducesVanillaAndTasRises) {
  SynthSpec spec;
  spec.n = 600;
  const auto d = generate(spec);
  const auto view = StoreView::all(d.store);
  std::vector<Vec> targets;
  for (const auto& dir : d.truth.target_directions) targets.push_back(dir);
  const Vec qp = d.vocab.anchor("male"), qn = d.vocab.anchor("female");
  const auto curve = tas_bfd_sweep(view, "gender", targets, qp, qn, {-0.5, 0.0, 0.5});
  ASSERT_EQ(curve.points.size(), 3u);
  EXPECT_EQ(curve.points[1].tas, tas(view, targets).mean);
  EXPECT_EQ(curve.points[1].bfd, bfd(view, "gender", qp, qn, 0));
  EXPECT_GT(curve.points[2].tas, curve.points[1].tas);
  EXPECT_THROW(tas_bfd_sweep(view, "gender", targets, qp, qn, {0.1, 0.2}), Error);
  EXPECT_THROW(tas_bfd_sweep(view, "gender", targets, qp, qn, {0.0, 0.0}), Error);
  EXPECT_NE(curve_csv(curve).find("epsilon,tas,bfd"), std::string::npos);
}

TEST(Spearman, KnownValues) {
  EXPECT_DOUBLE_EQ(spearman({1, 2, 3, 4}, {10, 20, 30, 40}), 1.0);
  EXPECT_DOUBLE_EQ(spearman({1, 2, 3, 4}, {4, 3, 2, 1}), -1.0);
  EXPECT_EQ(average_ranks({3, 1, 3, 2}), (std::vector<double>{3.5, 1, 3.5, 2}));
  EXPECT_EQ(spearman({1, 1, 1}, {1, 2, 3}), 0.0);
}

TEST(Pca, DataOnALineHasZeroSecondCoordinate) {
  auto s = ranked_store({1, 2, 3, 4}, {P, N, P, N});
  std::vector<float> values;
  for (int i = 1; i <= 5; ++i) {
    values.push_back(static_cast<float>(i));
    values.push_back(static_cast<float>(2 * i));
    values.push_back(static_cast<float>(-i));
  }
  EmbeddingStore::AttributeMap attrs;
  attrs["gender"] = {P, N, P, N, P};
  auto line = std::make_shared<const EmbeddingStore>(
      3, values, std::vector<std::string>{"a", "b", "c", "d", "e"}, attrs);
  const auto p = pca_2d(StoreView::all(line), "gender");
  EXPECT_TRUE(p.degenerate);
  for (Eigen::Index i = 0; i < 5; ++i) EXPECT_EQ(p.points(i, 1), 0.0);
  EXPECT_GT(p.component_x.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Pca, ClustersAtPlusMinusE1SeparateOnX) {
  Rng rng(1);
  std::normal_distribution<double> noise(0, 0.05);
  std::vector<float> values;
  std::vector<std::string> ids;
  EmbeddingStore::AttributeMap attrs;
  for (int i = 0; i < 100; ++i) {
    const double c = i % 2 ? 1.0 : -1.0;
    values.push_back(static_cast<float>(c + noise(rng)));
    for (int j = 0; j < 3; ++j) values.push_back(static_cast<float>(noise(rng)));
    ids.push_back("r" + std::to_string(i));
    attrs["gender"].push_back(i % 2 ? P : N);
  }
  auto s = std::make_shared<const EmbeddingStore>(4, values, ids, attrs);
  const auto p = pca_2d(StoreView::all(s), "gender");
  EXPECT_NEAR(std::abs(p.component_x[0]), 1.0, 1e-2);
  EXPECT_GT(p.component_x[0], 0.0);  // sign rule
  EXPECT_GT(p.centroid_pos.x(), 0.9);
  EXPECT_LT(p.centroid_neg.x(), -0.9);
  EXPECT_GE(p.variance_x, p.variance_y);
}

TEST(Pca, TranslationInvariantAndErrors) {
  auto store = random_store(2, 50, 5);
  std::vector<float> shifted(store->values().begin(), store->values().end());
  for (std::size_t i = 0; i < shifted.size(); ++i) shifted[i] += (i % 5 == 0) ? 4.0f : 0.0f;
  auto moved = std::make_shared<const EmbeddingStore>(5, shifted, store->ids(), store->attributes());
  const auto a = pca_2d(StoreView::all(store), "gender");
  const auto b = pca_2d(StoreView::all(moved), "gender");
  EXPECT_TRUE(a.points.isApprox(b.points, 1e-5));
  EXPECT_GE(a.variance_x, a.variance_y);
  EXPECT_THROW(pca_2d(StoreView::all(store).with_rows({0, 1}), "gender"), Error);
  const auto csv = pca_csv(a, StoreView::all(store));
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 51);
}

TEST(ZeroShot, IdenticalQueriesAndHandSoftmax) {
  auto s = ranked_store({1, 2, 3, 4}, {P, N, P, N});
  const auto same = zero_shot_divergence(StoreView::all(s), "gender", e1, e1);
  EXPECT_EQ(same.mean_pos, 0.5);
  EXPECT_EQ(same.divergence, 0.0);
  EXPECT_NEAR(softmax_first(0.6, 0.4), std::exp(0.6) / (std::exp(0.6) + std::exp(0.4)), 1e-15);
  EXPECT_NEAR(softmax_first(0.6, 0.4), 0.549834, 1e-6);
  EXPECT_THROW(zero_shot_divergence(StoreView::all(s), "gender", e1, e1, 0.0), Error);
}

TEST(ZeroShot, SingleSampleHandCase) {
  // One positive and one negative row, temperature 1.
  const double sa = 0.6, sb = 0.4;
  Vec qa(3), qb(3);
  qa << 1, 0, 0;
  qb << 0, 1, 0;
  std::vector<float> values = {static_cast<float>(sa), static_cast<float>(sb),
                               static_cast<float>(std::sqrt(1 - sa * sa - sb * sb)), 1, 0, 0};
  EmbeddingStore::AttributeMap attrs;
  attrs["gender"] = {P, N};
  auto s = std::make_shared<const EmbeddingStore>(3, values, std::vector<std::string>{"a", "b"}, attrs);
  const auto r = zero_shot_divergence(StoreView::all(s), "gender", qa, qb, 1.0);
  EXPECT_NEAR(r.mean_pos, 0.5498, 1e-4);
  EXPECT_NEAR(r.mean_neg, softmax_first(1.0, 0.0), 1e-7);
}
