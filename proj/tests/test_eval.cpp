#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "drgo/experiments.hpp"
#include "drgo/metrics.hpp"
#include "drgo/synthetic.hpp"
#include "oracles.hpp"

using namespace drgo;

namespace {

using Idx = std::vector<std::size_t>;

}  // namespace

TEST(Recall, Examples) {
  Idx ranked{4, 2, 9, 1, 0, 3, 5, 6, 7, 8};
  EXPECT_EQ(recall_at_k(ranked, Idx{2, 4}, 10), 1.0);
  EXPECT_EQ(recall_at_k(ranked, Idx{11, 12}, 10), 0.0);
  EXPECT_DOUBLE_EQ(recall_at_k(ranked, Idx{9, 8, 42}, 10), 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(recall_at_k(ranked, Idx{9, 8, 42}, 10), oracle::recall(ranked, Idx{9, 8, 42}, 10));
  EXPECT_THROW(recall_at_k(ranked, Idx{}, 10), std::invalid_argument);
}

TEST(Ndcg, Examples) {
  Idx ranked{4, 2, 9, 1, 0, 3, 5, 6, 7, 8};
  EXPECT_DOUBLE_EQ(ndcg_at_k(ranked, Idx{4}, 10), 1.0);
  EXPECT_NEAR(ndcg_at_k(ranked, Idx{2}, 10), 1.0 / std::log2(3.0), 1e-15);
  EXPECT_NEAR(ndcg_at_k(ranked, Idx{2}, 10), 0.6309, 1e-4);
  EXPECT_DOUBLE_EQ(ndcg_at_k(ranked, Idx{4, 2}, 10), 1.0);
  EXPECT_LT(ndcg_at_k(ranked, Idx{4, 9}, 10), 1.0);
  EXPECT_THROW(ndcg_at_k(ranked, Idx{}, 10), std::invalid_argument);
}

TEST(Metrics, MatchOraclesOnRandomInstances) {
  std::mt19937_64 gen(11);
  for (int n = 0; n < 1000; ++n) {
    const std::size_t items = 5 + gen() % 40;
    Idx perm(items);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), gen);
    const std::size_t npos = 1 + gen() % std::min<std::size_t>(items, 8);
    Idx pos(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(npos));
    std::shuffle(perm.begin(), perm.end(), gen);
    const std::size_t k = 1 + gen() % items;
    const double r = recall_at_k(perm, pos, k), g = ndcg_at_k(perm, pos, k);
    EXPECT_NEAR(r, oracle::recall(perm, pos, k), 1e-12);
    EXPECT_NEAR(g, oracle::ndcg(perm, pos, k), 1e-12);
    EXPECT_GE(g, 0.0);
    EXPECT_LE(g, 1.0 + 1e-12);
    // NDCG is 1 exactly when the leading min(|pos|, K) ranks are hits.
    bool lead = true;
    for (std::size_t i = 0; i < std::min(npos, k); ++i) lead &= std::find(pos.begin(), pos.end(), perm[i]) != pos.end();
    EXPECT_EQ(std::abs(g - 1.0) < 1e-12, lead);
  }
}

TEST(RankItems, ExcludesTrainAndBreaksTiesByIndex) {
  InteractionGraph train(1, 5, {{0, 1, 0}});
  std::vector<double> s{0.5, 9.0, 0.5, 0.7, 0.1};
  EXPECT_EQ(rank_items(s, train, 0, 10), (Idx{3, 0, 2, 4}));
  EXPECT_EQ(rank_items(s, train, 0, 2), (Idx{3, 0}));
}

TEST(Evaluate, SkipsUsersWithoutTestPositives) {
  InteractionGraph train(3, 4, {{0, 0, 0}, {1, 1, 0}, {2, 2, 0}});
  std::vector<Edge> test{{0, 3, 0}, {2, 2, 0}};  // user 2's only test edge is a train edge
  Matrix ue(3, 1, 1.0), ie(4, 1, std::vector<double>{0, 0, 0, 1});
  auto rep = evaluate(ue, ie, train, test, {1, 2});
  EXPECT_EQ(rep.n_evaluable, 1u);
  EXPECT_EQ(rep.users, Idx{0});
  EXPECT_EQ(rep.recall.at(1), 1.0);
  EXPECT_EQ(rep.ndcg.at(2), 1.0);
  EXPECT_EQ(rep.summary()["n_evaluable"], 1);
  EXPECT_THROW(evaluate(ue, ie, train, test, {}), std::invalid_argument);
}

TEST(Evaluate, PreferenceOracleBeatsRandomScorer) {
  SyntheticConfig sc;
  sc.n_users = 200;
  sc.n_items = 150;
  sc.popularity_gamma = 0.0;
  sc.seed = 4;
  auto d = generate_synthetic(sc);
  auto split = split_popularity(d.graph, 0.0, 1);
  const UserScorer truth = [&](std::size_t u, std::span<double> out) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = d.preference(u, i);
  };
  Rng rng = make_rng(5, "random");
  const UserScorer random = [&](std::size_t, std::span<double> out) {
    for (double& v : out) v = uniform01(rng);
  };
  const auto a = evaluate(truth, split.train, split.test_iid, {20});
  const auto b = evaluate(random, split.train, split.test_iid, {20});
  EXPECT_GT(a.recall.at(20), b.recall.at(20));
  EXPECT_GT(a.ndcg.at(20), b.ndcg.at(20));
  const auto again = evaluate(truth, split.train, split.test_iid, {20});
  EXPECT_EQ(again.user_recall.at(20), a.user_recall.at(20));
}

TEST(Evaluate, RandomScorerHitsExpectedRecall) {
  // 100 candidate items, one positive, K = 10: E[Recall@10] = 0.1.
  const std::size_t users = 4000;
  std::vector<Edge> train_edges, test;
  for (std::size_t u = 0; u < users; ++u) {
    train_edges.push_back({u, 100, 0});
    test.push_back({u, u % 100, 0});
  }
  InteractionGraph train(users, 101, train_edges);
  Rng rng = make_rng(6, "random");
  const UserScorer random = [&](std::size_t, std::span<double> out) {
    for (double& v : out) v = uniform01(rng);
  };
  const auto rep = evaluate(random, train, test, {10});
  EXPECT_NEAR(rep.recall.at(10), 0.1, 3.0 * std::sqrt(0.1 * 0.9 / users));
}

// ---- variance diagnostic ----

TEST(VarianceDiagnostic, NoiseFreeLimit) {
  std::vector<double> wc{0.2, 0.3, 0.5}, ac{1.0, 2.0, 0.5}, wo{0.0, 0.0}, ao{3.0, 1.0};
  const double full = weighted_bpr_variance(wc, wo, ac, ao, 1.0, 9.0);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < 3; ++i) {
    num += wc[i] * wc[i] * ac[i];
    den += wc[i] * ac[i];
  }
  EXPECT_NEAR(full, num / (den * den), 1e-15);
}

TEST(VarianceDiagnostic, EqualWeightsEqualVarianceIgnoresSplit) {
  std::vector<double> a{0.4, 1.2, 2.0, 0.7, 1.1};
  std::vector<double> w(5, 0.2);
  const double ref = weighted_bpr_variance(std::span<const double>(w).first(5), std::span<const double>(w).first(0),
                                           std::span<const double>(a).first(5), std::span<const double>(a).first(0), 2.0, 2.0);
  for (std::size_t split = 1; split < 5; ++split) {
    const double v = weighted_bpr_variance(std::span<const double>(w).first(split), std::span<const double>(w).subspan(split),
                                           std::span<const double>(a).first(split), std::span<const double>(a).subspan(split),
                                           2.0, 2.0);
    EXPECT_NEAR(v, ref, 1e-15);
  }
}

TEST(VarianceDiagnostic, GrowsWithNoisyWeight) {
  Rng rng = make_rng(7, "fixture");
  std::vector<double> xc(90), gc(90), xo(10), go(10);
  for (auto* v : {&xc, &gc, &xo, &go})
    for (double& x : *v) x = 0.5 + uniform01(rng);
  const auto ac = squared_gradient_scale(xc, gc), ao = squared_gradient_scale(xo, go);
  double prev = -1.0;
  for (int step = 0; step < 10; ++step) {
    const double s = 0.1 + 0.05 * step;  // total noisy mass, starting from equal weights
    std::vector<double> wc(90, (1.0 - s) / 90.0), wo(10, s / 10.0);
    const double v = weighted_bpr_variance(wc, wo, ac, ao, 1.0, 4.0);
    EXPECT_GT(v, prev) << "step " << step;
    prev = v;
  }
}

TEST(VarianceDiagnostic, Errors) {
  std::vector<double> z{0.0}, one{1.0};
  EXPECT_THROW(weighted_bpr_variance(z, z, one, one, 1.0, 1.0), std::domain_error);
  EXPECT_THROW(weighted_bpr_variance(one, z, std::vector<double>{1.0, 2.0}, one, 1.0, 1.0), std::invalid_argument);
}

TEST(SweepReport, CsvShape) {
  SweepReport r;
  r.rows.push_back({Method::erm, 0.0, 0.5, 0.4, 0.6, 0.5, 0.0, 3});
  r.rows.push_back({Method::erm, 0.25, 0.4, 0.3, 0.5, 0.4, 0.2, 3});
  const auto csv = r.to_csv();
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "method,ratio,metric,k,value");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 11);
  EXPECT_DOUBLE_EQ(r.at(Method::erm, 0.25).relative_decline, 0.2);
  EXPECT_THROW(r.at(Method::drgo, 0.0), std::out_of_range);
}

TEST(BlowupDemo, DisjointSupports) {
  const auto cases = kl_blowup_demo(50, 5, 1);
  ASSERT_EQ(cases.size(), 50u);
  for (const auto& c : cases) {
    EXPECT_TRUE(c.kl.infinite);
    EXPECT_TRUE(std::isfinite(c.sinkhorn));
    for (std::size_t i = 0; i < c.p.size(); ++i) EXPECT_FALSE(c.p[i] > 0.0 && c.q[i] > 0.0);
  }
}
