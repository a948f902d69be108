#include <gtest/gtest.h>

#include <numbers>

#include "fairsim/simcore.hpp"
#include "support.hpp"

using namespace fairsim;
using namespace fairsim::reference;

namespace {

Vec v2(double a, double b) { return (Vec(2) << a, b).finished(); }

StorePtr store_of(const std::vector<std::vector<float>>& rows) {
  std::vector<float> values;
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    values.insert(values.end(), rows[i].begin(), rows[i].end());
    ids.push_back("r" + std::to_string(i));
  }
  return std::make_shared<const EmbeddingStore>(rows.front().size(), values, ids,
                                                EmbeddingStore::AttributeMap{});
}

}  // namespace

TEST(Cosine, HandExamples) {
  EXPECT_EQ(cosine(v2(1, 0), v2(1, 0)), 1.0);
  EXPECT_EQ(cosine(v2(1, 0), v2(0, 1)), 0.0);
  EXPECT_NEAR(cosine(v2(3, 4), v2(4, 3)), 0.96, 1e-15);
}

TEST(Cosine, ErrorsAreTyped) {
  EXPECT_THROW(cosine(v2(0, 0), v2(1, 0)), Error);
  try {
    cosine(v2(1, 0), Vec::Ones(3));
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DimMismatch);
  }
  try {
    cosine(v2(0, 0), v2(1, 0));
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ZeroVector);
  }
}

TEST(Cosine, SymmetricAndScaleInvariant) {
  Rng rng(3);
  for (int i = 0; i < 100; ++i) {
    const Vec a = random_vec(rng, 7), b = random_vec(rng, 7);
    EXPECT_EQ(cosine(a, b), cosine(b, a));
    EXPECT_NEAR(cosine(a, b), cosine(2.5 * a, 0.125 * b), 1e-12);
  }
}

TEST(SimilaritySetTest, SingleRowEqualsQuery) {
  auto store = store_of({{0.5f, -1.0f, 2.0f}});
  const Vec q = StoreView::all(store).vector(0);
  EXPECT_NEAR(similarity_set(StoreView::all(store), q).scores[0], 1.0, 1e-15);
}

TEST(SimilaritySetTest, QueryScalingGivesSameScores) {
  auto store = random_store(1, 50, 8);
  Rng rng(2);
  const Vec q = random_vec(rng, 8);
  const auto a = similarity_set(StoreView::all(store), q);
  const auto b = similarity_set(StoreView::all(store), 5.0 * q);
  for (std::size_t i = 0; i < a.scores.size(); ++i) EXPECT_NEAR(a.scores[i], b.scores[i], 1e-15);
}

TEST(SimilaritySetTest, MatchesNaiveLoopAndStaysInRange) {
  auto store = random_store(9, 50, 8);
  Rng rng(10);
  const Vec q = random_vec(rng, 8);
  std::vector<std::size_t> rows(50);
  for (std::size_t i = 0; i < 50; ++i) rows[i] = i;
  const auto s = similarity_set(StoreView::all(store), q);
  EXPECT_EQ(s.scores, ref_scores(*store, rows, q));
  for (double x : s.scores) EXPECT_LE(std::abs(x), 1.0 + 1e-9);
}

TEST(SimilaritySetTest, ParallelEqualsSerial) {
  auto store = random_store(11, 3000, 16);
  Rng rng(12);
  const Vec q = random_vec(rng, 16);
  setenv("FAIRSIM_THREADS", "1", 1);
  const auto serial = similarity_set(StoreView::all(store), q);
  setenv("FAIRSIM_THREADS", "4", 1);
  const auto parallel = similarity_set(StoreView::all(store), q);
  unsetenv("FAIRSIM_THREADS");
  EXPECT_EQ(serial.scores, parallel.scores);
}

TEST(TopK, HandExamples) {
  SimilaritySet s{"q", "vanilla", {0.2, 0.9, 0.5}};
  const auto r = top_k(s, 2);
  ASSERT_EQ(r.ranked.size(), 2u);
  EXPECT_EQ(r.ranked[0].position, 1u);
  EXPECT_EQ(r.ranked[1].position, 2u);

  SimilaritySet ties{"q", "vanilla", {0.3, 0.3, 0.3, 0.3}};
  const auto t = top_k(ties, 2);
  EXPECT_EQ(t.ranked[0].position, 0u);
  EXPECT_EQ(t.ranked[1].position, 1u);
}

TEST(TopK, KLargerThanCountReturnsAll) {
  SimilaritySet s{"q", "vanilla", {0.1, 0.4}};
  EXPECT_EQ(top_k(s, 10).ranked.size(), 2u);
  EXPECT_THROW(top_k(s, 0), Error);
}

TEST(TopK, TenThousandScoresMatchFullSort) {
  Rng rng(5);
  std::uniform_real_distribution<double> u(-1, 1);
  SimilaritySet s;
  for (int i = 0; i < 10000; ++i) s.scores.push_back(std::round(u(rng) * 1000) / 1000);  // ties
  const auto r = top_k(s, 100);
  const auto order = ref_ranking(s.scores);
  for (std::size_t i = 0; i < 100; ++i) EXPECT_EQ(r.ranked[i].position, order[i]);
}

TEST(TopK, FullKIsSortedPermutation) {
  Rng rng(6);
  std::uniform_int_distribution<int> u(0, 5);
  SimilaritySet s;
  for (int i = 0; i < 300; ++i) s.scores.push_back(u(rng));
  const auto r = top_k(s, 300);
  const auto order = ref_ranking(s.scores);
  ASSERT_EQ(r.ranked.size(), 300u);
  for (std::size_t i = 0; i < 300; ++i) EXPECT_EQ(r.ranked[i].position, order[i]);
}

TEST(Recall, PairRankedFirstGivesFullRecall) {
  auto store = store_of({{1, 0}, {0, 1}});
  PairedQueries q{(Mat(1, 2) << 1, 0.1).finished(), {0}};
  EXPECT_EQ(recall_at_k(StoreView::all(store), q, {1}).at(1), 100.0);
}

TEST(Recall, SeventhPlaceBoundary) {
  // Image i at angle i * 5 degrees; the query sits at image 0, truth is image 6.
  std::vector<std::vector<float>> rows;
  for (int i = 0; i < 12; ++i) {
    const double a = i * 5.0 * std::numbers::pi / 180.0;
    rows.push_back({static_cast<float>(std::cos(a)), static_cast<float>(std::sin(a))});
  }
  auto store = store_of(rows);
  PairedQueries q{(Mat(1, 2) << 1, -0.01).finished(), {6}};
  const auto r = recall_at_k(StoreView::all(store), q, {5, 10});
  EXPECT_EQ(r.at(5), 0.0);
  EXPECT_EQ(r.at(10), 100.0);
}

TEST(Recall, TwoHundredPairsMatchFullRanking) {
  auto store = random_store(21, 200, 12);
  Rng rng(22);
  PairedQueries q;
  q.texts = StoreView::all(store).matrix() + 0.8 * random_mat(rng, 200, 12);
  for (std::size_t i = 0; i < 200; ++i) q.truth.push_back(i);
  EXPECT_EQ(recall_at_k(StoreView::all(store), q, {1, 5, 10}),
            ref_recall(*store, q.texts, q.truth, {1, 5, 10}));
}

TEST(Recall, MissingGroundTruth) {
  auto store = random_store(1, 5, 3);
  PairedQueries q{Mat::Ones(2, 3), {0}};
  try {
    recall_at_k(StoreView::all(store), q, {1});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MissingGroundTruth);
  }
  PairedQueries far{Mat::Ones(1, 3), {9}};
  EXPECT_THROW(recall_at_k(StoreView::all(store), far, {1}), Error);
}

TEST(Recall, MeanErrorRate) {
  EXPECT_DOUBLE_EQ(mean_error_rate({{1, 50.0}, {5, 80.0}, {10, 90.0}}), (50.0 + 20.0 + 10.0) / 3);
}

TEST(Cosine, OverflowedNormIsNaN) {
  Vec big = Vec::Constant(4, 1e200);
  Vec one = Vec::Ones(4);
  EXPECT_TRUE(std::isnan(cosine(big, one)));
  EXPECT_TRUE(std::isnan(cosine(one, big)));
}
