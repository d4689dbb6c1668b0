#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "drgo/dro.hpp"
#include "drgo/experiments.hpp"
#include "oracles.hpp"

using namespace drgo;

namespace {

std::vector<double> random_simplex(std::size_t n, Rng& rng) {
  std::vector<double> w(n);
  double z = 0.0;
  for (auto& v : w) z += v = 0.05 + uniform01(rng);
  for (auto& v : w) v /= z;
  return w;
}

Matrix random_points(std::size_t n, std::size_t d, Rng& rng, double scale = 1.0) {
  Matrix m(n, d);
  for (double& v : m.data()) v = scale * uniform01(rng);
  return m;
}

std::vector<std::vector<double>> cost_matrix(const Matrix& a, const Matrix& b) {
  std::vector<std::vector<double>> c(a.rows(), std::vector<double>(b.rows()));
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j) c[i][j] = squared_distance(a.row(i), b.row(j));
  return c;
}

void expect_simplex(const GroupWeights& g) {
  double s = 0.0;
  for (double x : g.w) {
    EXPECT_GE(x, 0.0);
    s += x;
  }
  EXPECT_NEAR(s, 1.0, 1e-10);
  EXPECT_LE(g.entropy(), std::log(static_cast<double>(g.size())) + 1e-12);
}

}  // namespace

// ---- nominal ----

TEST(Nominal, AllNodes) {
  std::vector<double> c{3, 1, 2};
  Matrix e(3, 2, std::vector<double>{1, 2, 3, 4, 5, 6});
  auto n = build_nominal(c, e, 100.0);
  EXPECT_EQ(n.node_indices, (std::vector<std::size_t>{0, 2, 1}));
  for (double w : n.weights) EXPECT_DOUBLE_EQ(w, 1.0 / 3.0);
  EXPECT_EQ(n.embeddings(1, 0), 5.0);
}

TEST(Nominal, TopTenPercent) {
  Rng rng = make_rng(1, "c");
  std::vector<double> c(100);
  for (auto& v : c) v = uniform01(rng);
  auto n = build_nominal(c, Matrix(100, 2), 10.0);
  ASSERT_EQ(n.node_indices.size(), 10u);
  std::vector<std::size_t> order(100);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return c[a] > c[b]; });
  order.resize(10);
  EXPECT_EQ(n.node_indices, order);
}

TEST(Nominal, TieAtCutoffPrefersLowerIndex) {
  std::vector<double> c{0.1, 5.0, 2.0, 0.3, 2.0, 0.2, 0.0, 0.0, 0.0, 0.0};
  // 20% of 10 = 2 nodes: node 1 then the lower of the tied pair {2, 4}.
  for (int k = 0; k < 3; ++k) EXPECT_EQ(top_central_nodes(c, 20.0), (std::vector<std::size_t>{1, 2}));
}

TEST(Nominal, Errors) {
  std::vector<double> c{1, 2};
  EXPECT_THROW(top_central_nodes(c, 0.0), std::invalid_argument);
  EXPECT_THROW(top_central_nodes(c, 101.0), std::invalid_argument);
  EXPECT_EQ(top_central_nodes(c, 1.0).size(), 1u);  // ceil rounds a fraction of a node up
}

// ---- kmeans ----

TEST(Kmeans, DistinctPointsGiveZeroObjective) {
  Matrix p(4, 2, std::vector<double>{0, 0, 1, 0, 0, 1, 5, 5});
  auto u = kmeans(p, 4, 50, 1);
  EXPECT_NEAR(u.objective_trace.back(), 0.0, 1e-15);
}

TEST(Kmeans, SingleClusterIsMean) {
  Rng rng = make_rng(2, "k");
  auto p = random_points(30, 3, rng);
  auto u = kmeans(p, 1, 50, 3);
  for (std::size_t c = 0; c < 3; ++c) {
    double m = 0.0;
    for (std::size_t r = 0; r < 30; ++r) m += p(r, c);
    EXPECT_NEAR(u.centroids(0, c), m / 30.0, 1e-12);
  }
}

TEST(Kmeans, SeparatedBlobs) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng = make_rng(seed, "blobs");
    Matrix p(40, 2);
    for (std::size_t r = 0; r < 40; ++r) {
      const double off = r < 20 ? 0.0 : 10.0;
      p(r, 0) = off + 0.5 * standard_normal(rng);
      p(r, 1) = off + 0.5 * standard_normal(rng);
    }
    auto u = kmeans(p, 2, 50, seed);
    for (std::size_t r = 1; r < 40; ++r)
      EXPECT_EQ(u.assignment[r] == u.assignment[0], r < 20) << "seed " << seed << " point " << r;
  }
}

TEST(Kmeans, Invariants) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng = make_rng(seed, "kp");
    auto p = random_points(60, 4, rng);
    auto u = kmeans(p, 6, 100, seed);
    for (std::size_t i = 1; i < u.objective_trace.size(); ++i)
      EXPECT_LE(u.objective_trace[i], u.objective_trace[i - 1] + 1e-12);
    EXPECT_EQ(std::accumulate(u.counts.begin(), u.counts.end(), std::size_t{0}), 60u);
    for (auto c : u.counts) EXPECT_GT(c, 0u);
    if (u.iterations < 100) {
      for (std::size_t r = 0; r < 60; ++r) EXPECT_EQ(u.assignment[r], detail::nearest(u.centroids, p.row(r)));
    }
  }
}

TEST(Kmeans, DuplicatePointsRepairEmptyClusters) {
  Matrix p(6, 1, std::vector<double>{0, 0, 0, 0, 1, 1});
  auto u = kmeans(p, 3, 20, 1);
  for (auto c : u.counts) EXPECT_GT(c, 0u);
  EXPECT_THROW(kmeans(p, 7, 20, 1), std::invalid_argument);
}

// ---- Sinkhorn ----

TEST(Sinkhorn, IdenticalSinglePoints) {
  Matrix a(1, 2, std::vector<double>{0.3, -0.7});
  EXPECT_NEAR(sinkhorn_distance({a, {1.0}}, {a, {1.0}}, {0.1}), 0.0, 1e-15);
}

TEST(Sinkhorn, ForcedTransport) {
  Matrix a(1, 1, std::vector<double>{0.0}), b(1, 1, std::vector<double>{1.0});
  EXPECT_NEAR(sinkhorn_distance({a, {1.0}}, {b, {1.0}}, {1e-3}), 1.0, 1e-2);
}

TEST(Sinkhorn, MatchesLinearProgram5x6) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng = make_rng(seed, "lp");
    auto p = random_points(5, 2, rng), q = random_points(6, 2, rng);
    auto a = random_simplex(5, rng), b = random_simplex(6, rng);
    const double exact = oracle::exact_ot(a, b, cost_matrix(p, q));
    const auto r = sinkhorn({p, a}, {q, b}, {1e-3});
    // The plan's transport cost converges to the LP optimum; the regulariser
    // adds lambda * KL, which is at most lambda * log(min(m, n)).
    EXPECT_NEAR(r.transport_cost, exact, 1e-3);
    EXPECT_GE(r.value, exact - 1e-9);
    EXPECT_LE(r.value, exact + 1e-3 * std::log(5.0) + 1e-3);
    EXPECT_NEAR(r.value, r.transport_cost + 1e-3 * r.kl, 1e-12);
    EXPECT_LT(r.marginal_error, 1e-9);
  }
}

TEST(Sinkhorn, SymmetricAndSelfDistanceSmall) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng = make_rng(seed, "sym");
    auto p = random_points(4, 3, rng), q = random_points(5, 3, rng);
    auto a = random_simplex(4, rng), b = random_simplex(5, rng);
    EXPECT_NEAR(sinkhorn_distance({p, a}, {q, b}, {0.05}), sinkhorn_distance({q, b}, {p, a}, {0.05}), 1e-8);
    EXPECT_LE(sinkhorn_distance({p, a}, {p, a}, {1e-4}), 1e-3);
  }
}

TEST(Sinkhorn, ZeroWeightPointsIgnored) {
  Matrix p(3, 1, std::vector<double>{0.0, 100.0, 1.0}), q(1, 1, std::vector<double>{0.5});
  const double with = sinkhorn_distance({p, {0.5, 0.0, 0.5}}, {q, {1.0}}, {0.1});
  Matrix p2(2, 1, std::vector<double>{0.0, 1.0});
  EXPECT_NEAR(with, sinkhorn_distance({p2, {0.5, 0.5}}, {q, {1.0}}, {0.1}), 1e-12);
}

TEST(Sinkhorn, Errors) {
  Matrix p(2, 1, std::vector<double>{0, 1});
  EXPECT_THROW(sinkhorn({p, {0.5, 0.6}}, {p, {0.5, 0.5}}), std::invalid_argument);
  EXPECT_THROW(sinkhorn({p, {0.5, 0.5}}, {p, {0.5, 0.5}}, {0.0}), std::invalid_argument);
  EXPECT_THROW(sinkhorn({p, {0.5, 0.5}}, {Matrix(2, 2), {0.5, 0.5}}), std::invalid_argument);
  try {
    sinkhorn({p, {0.5, 0.5}}, {p, {0.9, 0.1}}, {1e-3, 2, 1e-12});
    FAIL() << "expected ConvergenceError";
  } catch (const ConvergenceError& e) {
    EXPECT_GT(e.residual(), 0.0);
  }
}

TEST(Sinkhorn, FiniteWhereKlIsInfinite) {
  for (const auto& c : kl_blowup_demo(10, 4, 3)) {
    EXPECT_TRUE(c.kl.infinite);
    EXPECT_TRUE(std::isfinite(c.sinkhorn));
    EXPECT_GT(c.sinkhorn, 0.0);
  }
}

// ---- group losses ----

TEST(GroupLosses, Examples) {
  std::vector<std::size_t> assign{0, 1, 1};
  std::vector<double> l{1.0, 1.0, 3.0};
  auto g = group_losses(l, std::vector<std::size_t>{0, 0, 1}, assign, 2);
  EXPECT_EQ(g.loss, (std::vector<double>{1.0, 3.0}));
  auto one = group_losses(l, std::vector<std::size_t>{1, 2, 1}, assign, 3);
  EXPECT_NEAR(one.loss[1], 5.0 / 3.0, 1e-15);
  EXPECT_EQ(one.loss[0], 0.0);
  EXPECT_FALSE(one.present[0]);
  EXPECT_FALSE(one.present[2]);
  auto perm = group_losses(std::vector<double>{3.0, 1.0, 1.0}, std::vector<std::size_t>{1, 0, 0}, assign, 2);
  EXPECT_EQ(perm.loss, g.loss);
}

// ---- worst-case weights ----

TEST(WorstCase, EqualLossesGiveUniform) {
  std::vector<double> l(4, 0.7);
  for (double beta : {0.01, 1.0, 100.0}) {
    auto w = entropic_weights(l, beta);
    for (double x : w.w) EXPECT_NEAR(x, 0.25, 1e-15);
  }
}

TEST(WorstCase, TwoGroupClosedForm) {
  std::vector<double> l{1.0, 2.0};
  auto w = entropic_weights(l, 1.0);
  EXPECT_NEAR(w[0], 0.2689414213699951, 1e-15);
  EXPECT_NEAR(w[1], 0.7310585786300049, 1e-15);
  auto o = oracle::entropic_argmax(l, 1.0);
  EXPECT_NEAR(o[1], w[1], 1e-9);
}

TEST(WorstCase, TemperatureLimits) {
  std::vector<double> l{0.5, 2.0, 2.0, 1.0};
  auto hot = entropic_weights(l, 1e6);
  for (double x : hot.w) EXPECT_NEAR(x, 0.25, 1e-5);
  auto cold = entropic_weights(l, 1e-4);
  EXPECT_NEAR(cold[1], 0.5, 1e-12);
  EXPECT_NEAR(cold[2], 0.5, 1e-12);
  EXPECT_NEAR(cold[0] + cold[3], 0.0, 1e-12);
}

TEST(WorstCase, MatchesNumericalMaximisation) {
  Rng rng = make_rng(4, "wc");
  for (int n = 0; n < 30; ++n) {
    const std::size_t k = 2 + uniform_index(rng, 9);
    std::vector<double> l(k);
    for (auto& v : l) v = 2.0 * uniform01(rng);
    const double beta = 0.1 + 2.0 * uniform01(rng);
    const auto w = entropic_weights(l, beta);
    const auto o = oracle::entropic_argmax(l, beta);
    EXPECT_NEAR(regularized_objective(l, w, beta), oracle::entropic_objective(l, o, beta), 1e-6);
    EXPECT_GE(regularized_objective(l, w, beta), oracle::entropic_objective(l, o, beta) - 1e-12);
    expect_simplex(w);
  }
}

TEST(WorstCase, ProjectionRespectsRadius) {
  Rng rng = make_rng(5, "proj");
  int projected = 0;
  for (int n = 0; n < 20; ++n) {
    const std::size_t k = 3 + uniform_index(rng, 4);
    auto centroids = random_points(k, 2, rng);
    NominalDistribution nom = nominal_from_nodes({0, 1, 2, 3}, random_points(4, 2, rng));
    std::vector<double> l(k);
    for (auto& v : l) v = 3.0 * uniform01(rng);
    const SinkhornOptions opt{0.05, 100000, 1e-10};
    const double d_unif = sinkhorn_distance({nom.embeddings, nom.weights}, {centroids, GroupWeights::uniform(k).w}, opt);
    const double d_star = sinkhorn_distance({nom.embeddings, nom.weights}, {centroids, entropic_weights(l, 0.5).w}, opt);
    const double rho = std::min(d_unif, d_star) + 0.5 * std::abs(d_star - d_unif);
    const auto r = worst_case_weights(l, 0.5, rho, nom, centroids, opt);
    expect_simplex(r.weights);
    EXPECT_FALSE(r.infeasible);
    EXPECT_LE(r.sinkhorn, rho + 1e-9);
    EXPECT_NEAR(r.sinkhorn, sinkhorn_distance({nom.embeddings, nom.weights}, {centroids, r.weights.w}, opt), 1e-9);
    EXPECT_GE(regularized_objective(l, r.weights, 0.5), regularized_objective(l, GroupWeights::uniform(k), 0.5) - 1e-12);
    projected += r.projected;
  }
  EXPECT_GT(projected, 0);
}

TEST(WorstCase, InfiniteRadiusReturnsMaximiser) {
  NominalDistribution nom = nominal_from_nodes({0}, Matrix(1, 1));
  Matrix c(2, 1, std::vector<double>{5.0, -5.0});
  std::vector<double> l{1.0, 2.0};
  auto r = worst_case_weights(l, 1.0, std::numeric_limits<double>::infinity(), nom, c);
  EXPECT_FALSE(r.projected);
  EXPECT_NEAR(r.weights[1], 0.7310585786300049, 1e-15);
}

TEST(WorstCase, InfeasibleUniformFallsBack) {
  NominalDistribution nom = nominal_from_nodes({0}, Matrix(1, 1));
  Matrix c(2, 1, std::vector<double>{5.0, 6.0});
  std::vector<double> l{1.0, 2.0};
  auto r = worst_case_weights(l, 1.0, 0.01, nom, c);
  EXPECT_TRUE(r.infeasible);
  EXPECT_EQ(r.weights.w, GroupWeights::uniform(2).w);
  // Relative radius: the uniform distance is allowed, so never infeasible.
  auto rel = worst_case_weights(l, 1.0, 0.0, nom, c, {}, 40, RadiusMode::excess_over_uniform);
  EXPECT_FALSE(rel.infeasible);
  EXPECT_TRUE(rel.projected);
}

// ---- entropy gradient ----

TEST(EntropyGrad, Examples) {
  std::vector<double> w{1.0 / std::exp(1.0), 1.0};
  auto g = entropy_grad(w);
  EXPECT_NEAR(g[0], 2.0, 1e-15);
  EXPECT_EQ(g[1], 1.0);
  EXPECT_THROW(entropy_grad(std::vector<double>{0.5, 0.0}), std::domain_error);
}

TEST(EntropyGrad, TangentDirectionalDerivative) {
  Rng rng = make_rng(6, "eg");
  for (int n = 0; n < 20; ++n) {
    auto w = random_simplex(5, rng);
    std::vector<double> dir(5);
    double m = 0.0;
    for (auto& v : dir) m += v = uniform01(rng) - 0.5;
    for (auto& v : dir) v -= m / 5.0;  // tangent to the simplex
    auto h = [&](double t) {
      double s = 0.0;
      for (std::size_t i = 0; i < 5; ++i) {
        const double x = w[i] + t * dir[i];
        s -= x * std::log(x);
      }
      return s;
    };
    const double eps = 1e-6;
    const double numeric = (h(eps) - h(-eps)) / (2.0 * eps);
    const auto g = entropy_grad(w);
    double analytic = 0.0;
    for (std::size_t i = 0; i < 5; ++i) analytic += g[i] * dir[i];
    EXPECT_NEAR(analytic, numeric, 1e-6);
  }
}

// ---- KL ----

TEST(Kl, Examples) {
  std::vector<double> p{0.3, 0.7};
  EXPECT_EQ(kl_divergence(p, p).value, 0.0);
  auto inf = kl_divergence(std::vector<double>{1.0, 0.0}, std::vector<double>{0.0, 1.0});
  EXPECT_TRUE(inf.infinite);
  auto v = kl_divergence(std::vector<double>{0.5, 0.5}, std::vector<double>{0.9, 0.1});
  EXPECT_NEAR(v.value, 0.5 * std::log(5.0 / 9.0) + 0.5 * std::log(5.0), 1e-15);
  EXPECT_NEAR(v.value, 0.5108, 1e-4);
  EXPECT_FALSE(kl_divergence(std::vector<double>{0.0, 1.0}, std::vector<double>{0.5, 0.5}).infinite);
}

TEST(Kl, InfiniteExactlyOnSupportViolation) {
  Rng rng = make_rng(7, "kl");
  for (int n = 0; n < 200; ++n) {
    std::vector<double> p(4), q(4);
    for (std::size_t i = 0; i < 4; ++i) {
      p[i] = uniform01(rng) < 0.3 ? 0.0 : uniform01(rng);
      q[i] = uniform01(rng) < 0.3 ? 0.0 : uniform01(rng);
    }
    bool violates = false;
    for (std::size_t i = 0; i < 4; ++i) violates |= p[i] > 0.0 && q[i] == 0.0;
    EXPECT_EQ(kl_divergence(p, q).infinite, violates);
  }
}

TEST(KlDro, RadiusLimits) {
  std::vector<double> l{0.2, 1.0, 0.5};
  auto tiny = kl_dro_weights(l, 1e-12);
  for (double x : tiny.w) EXPECT_NEAR(x, 1.0 / 3.0, 1e-5);
  auto huge = kl_dro_weights(l, 10.0);
  EXPECT_EQ(huge.w, (std::vector<double>{0.0, 1.0, 0.0}));
  EXPECT_THROW(kl_dro_weights(l, 0.0), std::invalid_argument);
}

TEST(KlDro, BindingRadiusMatchesGridSearch) {
  std::vector<double> l{0.0, 1.0};
  auto w = kl_dro_weights(l, 0.1);
  const double kl = kl_divergence(w.w, GroupWeights::uniform(2).w).value;
  EXPECT_NEAR(kl, 0.1, 1e-6);
  EXPECT_GT(w[1], 0.5);
  // Largest w2 on a fine grid with KL <= 0.1.
  double best = 0.5;
  for (int s = 0; s <= 1000000; ++s) {
    const double x = 0.5 + 0.5 * s / 1e6;
    std::vector<double> c{1.0 - x, x};
    if (kl_divergence(c, GroupWeights::uniform(2).w).value <= 0.1) best = x;
  }
  EXPECT_NEAR(w[1], best, 1e-6);
}
