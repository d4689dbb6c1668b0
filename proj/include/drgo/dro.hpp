#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "drgo/error.hpp"
#include "drgo/matrix.hpp"
#include "drgo/rng.hpp"

namespace drgo {

// ---- nominal distribution ----------------------------------------------------

/// Uniform distribution over the latent rows of the most central nodes.
struct NominalDistribution {
  std::vector<std::size_t> node_indices;  // centrality descending, ties by index
  Matrix embeddings;                      // one row per selected node
  std::vector<double> weights;            // uniform
};

/// Node indices of the ceil(top_pct% * N) highest-centrality nodes.
inline std::vector<std::size_t> top_central_nodes(std::span<const double> centrality, double top_pct) {
  if (!(top_pct > 0.0 && top_pct <= 100.0)) throw std::invalid_argument("top_pct must lie in (0, 100]");
  const std::size_t n = centrality.size();
  const auto count = static_cast<std::size_t>(std::ceil(top_pct * static_cast<double>(n) / 100.0 - 1e-9));
  if (count == 0) throw std::invalid_argument("nominal distribution selects no nodes");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return centrality[a] > centrality[b]; });
  idx.resize(std::min(count, n));
  return idx;
}

inline NominalDistribution nominal_from_nodes(std::vector<std::size_t> nodes, const Matrix& embeddings) {
  NominalDistribution d;
  d.embeddings = select_rows(embeddings, nodes);
  d.node_indices = std::move(nodes);
  d.weights.assign(d.node_indices.size(), 1.0 / static_cast<double>(d.node_indices.size()));
  return d;
}

inline NominalDistribution build_nominal(std::span<const double> centrality, const Matrix& embeddings,
                                         double top_pct) {
  if (centrality.size() != embeddings.rows())
    throw std::invalid_argument("build_nominal: centrality and embedding row counts differ");
  return nominal_from_nodes(top_central_nodes(centrality, top_pct), embeddings);
}

// ---- k-means uncertainty set -------------------------------------------------

struct UncertaintySet {
  Matrix centroids;                     // K x d
  std::vector<std::size_t> assignment;  // point -> cluster
  std::vector<std::size_t> counts;      // per-cluster sizes
  std::vector<double> objective_trace;  // within-cluster SSE after each Lloyd iteration
  int iterations = 0;
};

namespace detail {

inline std::size_t nearest(const Matrix& centroids, std::span<const double> x, double* dist = nullptr) {
  std::size_t best = 0;
  double bd = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < centroids.rows(); ++k) {
    const double d = squared_distance(centroids.row(k), x);
    if (d < bd) {
      bd = d;
      best = k;
    }
  }
  if (dist) *dist = bd;
  return best;
}

}  // namespace detail

/// Lloyd's algorithm from k-means++ seeding. An empty cluster is refilled with
/// the point of the largest cluster farthest from its centroid.
inline UncertaintySet kmeans(const Matrix& points, std::size_t k, int max_iter, std::uint64_t seed) {
  const std::size_t n = points.rows();
  if (k == 0) throw std::invalid_argument("kmeans: K must be positive");
  if (k > n) throw std::invalid_argument("kmeans: K = " + std::to_string(k) + " exceeds point count " + std::to_string(n));
  Rng rng = make_rng(seed, "kmeans");
  UncertaintySet out;
  out.centroids = Matrix(k, points.cols());

  // k-means++ seeding.
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  std::size_t first = uniform_index(rng, n);
  std::copy(points.row(first).begin(), points.row(first).end(), out.centroids.row(0).begin());
  for (std::size_t c = 1; c < k; ++c) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], squared_distance(points.row(i), out.centroids.row(c - 1)));
      total += d2[i];
    }
    std::size_t pick = 0;
    if (total > 0.0) {
      double r = uniform01(rng) * total;
      for (pick = 0; pick + 1 < n; ++pick) {
        r -= d2[pick];
        if (r < 0.0 && d2[pick] > 0.0) break;
      }
    } else {
      pick = uniform_index(rng, n);
    }
    std::copy(points.row(pick).begin(), points.row(pick).end(), out.centroids.row(c).begin());
  }

  out.assignment.assign(n, k);
  std::vector<double> dist(n);
  for (int it = 0; it < max_iter; ++it) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t a = detail::nearest(out.centroids, points.row(i), &dist[i]);
      if (a != out.assignment[i]) {
        out.assignment[i] = a;
        changed = true;
      }
    }
    out.counts.assign(k, 0);
    for (std::size_t a : out.assignment) ++out.counts[a];
    for (std::size_t c = 0; c < k; ++c) {
      if (out.counts[c] > 0) continue;
      const auto largest = static_cast<std::size_t>(
          std::max_element(out.counts.begin(), out.counts.end()) - out.counts.begin());
      std::size_t far = n;
      for (std::size_t i = 0; i < n; ++i)
        if (out.assignment[i] == largest && (far == n || dist[i] > dist[far])) far = i;
      out.assignment[far] = c;
      dist[far] = 0.0;
      --out.counts[largest];
      ++out.counts[c];
      std::copy(points.row(far).begin(), points.row(far).end(), out.centroids.row(c).begin());
      changed = true;
    }
    Matrix next(k, points.cols());
    for (std::size_t i = 0; i < n; ++i) {
      auto dst = next.row(out.assignment[i]);
      const auto src = points.row(i);
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
    }
    for (std::size_t c = 0; c < k; ++c)
      for (double& v : next.row(c)) v /= static_cast<double>(out.counts[c]);
    out.centroids = std::move(next);
    double sse = 0.0;
    for (std::size_t i = 0; i < n; ++i) sse += squared_distance(points.row(i), out.centroids.row(out.assignment[i]));
    out.objective_trace.push_back(sse);
    out.iterations = it + 1;
    if (!changed) break;
  }
  return out;
}

/// Centroids of a fixed assignment (used when groups are known in advance).
inline Matrix group_centroids(const Matrix& points, std::span<const std::size_t> assignment, std::size_t k) {
  Matrix c(k, points.cols());
  std::vector<std::size_t> cnt(k, 0);
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    ++cnt[assignment[i]];
    auto dst = c.row(assignment[i]);
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += points(i, j);
  }
  for (std::size_t g = 0; g < k; ++g)
    if (cnt[g] > 0)
      for (double& v : c.row(g)) v /= static_cast<double>(cnt[g]);
  return c;
}

// ---- Sinkhorn distance -------------------------------------------------------

struct WeightedPoints {
  Matrix points;
  std::vector<double> weights;
};

struct SinkhornOptions {
  double lambda = 0.1;
  int max_iter = 100000;
  double tol = 1e-9;
};

struct SinkhornResult {
  double value = 0.0;           // <C, pi> + lambda * KL(pi || a x b)
  double transport_cost = 0.0;  // <C, pi>
  double kl = 0.0;              // KL(pi || a x b)
  double marginal_error = 0.0;  // L1 violation of the column marginal
  int iterations = 0;
};

namespace detail {

inline double log_sum_exp(std::span<const double> v) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : v) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

}  // namespace detail

/// Entropic optimal transport between two weighted point sets with squared
/// Euclidean cost: min_pi <C, pi> + lambda KL(pi || a x b) over couplings of
/// a and b. Solved by log-domain Sinkhorn-Knopp scaling with the
/// regularisation annealed from max(C) down to lambda.
inline SinkhornResult sinkhorn(const WeightedPoints& p, const WeightedPoints& q, const SinkhornOptions& opt = {}) {
  if (!(opt.lambda > 0.0)) throw std::invalid_argument("sinkhorn: lambda must be positive");
  if (p.points.cols() != q.points.cols()) throw std::invalid_argument("sinkhorn: point dimensions differ");
  if (p.weights.size() != p.points.rows() || q.weights.size() != q.points.rows())
    throw std::invalid_argument("sinkhorn: weight count does not match point count");
  auto support = [](const std::vector<double>& w) {
    std::vector<std::size_t> s;
    double total = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (w[i] < 0.0) throw std::invalid_argument("sinkhorn: negative weight");
      if (w[i] > 0.0) s.push_back(i);
      total += w[i];
    }
    if (std::abs(total - 1.0) > 1e-8) throw std::invalid_argument("sinkhorn: weights must sum to 1");
    return s;
  };
  const auto si = support(p.weights);
  const auto sj = support(q.weights);
  const std::size_t m = si.size(), n = sj.size();
  std::vector<double> la(m), lb(n);
  for (std::size_t i = 0; i < m; ++i) la[i] = std::log(p.weights[si[i]]);
  for (std::size_t j = 0; j < n; ++j) lb[j] = std::log(q.weights[sj[j]]);
  Matrix c(m, n);
  double cmax = 0.0;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      c(i, j) = squared_distance(p.points.row(si[i]), q.points.row(sj[j]));
      cmax = std::max(cmax, c(i, j));
    }

  std::vector<double> f(m, 0.0), g(n, 0.0), buf(std::max(m, n));
  SinkhornResult res;
  auto column_error = [&](double lam) {
    double err = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t i = 0; i < m; ++i) buf[i] = la[i] + (f[i] + g[j] - c(i, j)) / lam;
      err += std::abs(std::exp(detail::log_sum_exp({buf.data(), m}) + lb[j]) - std::exp(lb[j]));
    }
    return err;
  };
  auto sweep = [&](double lam) {
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t i = 0; i < m; ++i) buf[i] = la[i] + (f[i] - c(i, j)) / lam;
      g[j] = -lam * detail::log_sum_exp({buf.data(), m});
    }
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) buf[j] = lb[j] + (g[j] - c(i, j)) / lam;
      f[i] = -lam * detail::log_sum_exp({buf.data(), n});
    }
  };

  double lam = std::max(opt.lambda, cmax);
  for (;;) {
    const bool last = lam <= opt.lambda;
    const double stage_tol = last ? opt.tol : std::max(opt.tol, 1e-4);
    double err = std::numeric_limits<double>::infinity();
    for (; res.iterations < opt.max_iter;) {
      sweep(lam);
      ++res.iterations;
      if (res.iterations % 10 == 0 || last) {
        err = column_error(lam);
        if (err < stage_tol) break;
      }
    }
    res.marginal_error = err;
    if (err >= stage_tol)
      throw ConvergenceError("sinkhorn: no convergence in " + std::to_string(opt.max_iter) +
                                 " iterations (marginal residual " + std::to_string(err) + ")",
                             err);
    if (last) break;
    lam = std::max(opt.lambda, lam * 0.5);
  }

  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double logratio = (f[i] + g[j] - c(i, j)) / lam;  // log(pi / (a b))
      const double pi = std::exp(la[i] + lb[j] + logratio);
      res.transport_cost += pi * c(i, j);
      res.kl += pi * logratio;
    }
  res.value = res.transport_cost + lam * res.kl;
  return res;
}

inline double sinkhorn_distance(const WeightedPoints& p, const WeightedPoints& q, const SinkhornOptions& opt = {}) {
  return sinkhorn(p, q, opt).value;
}

// ---- group weights -----------------------------------------------------------

/// Weights on the probability simplex, one per uncertainty-set group.
struct GroupWeights {
  std::vector<double> w;

  std::size_t size() const noexcept { return w.size(); }
  double operator[](std::size_t i) const { return w[i]; }

  static GroupWeights uniform(std::size_t k) { return {std::vector<double>(k, 1.0 / static_cast<double>(k))}; }

  /// -sum w log w with 0 log 0 = 0.
  double entropy() const {
    double h = 0.0;
    for (double x : w)
      if (x > 0.0) h -= x * std::log(x);
    return h;
  }
};

struct GroupLosses {
  std::vector<double> loss;          // mean loss per group, 0 when absent
  std::vector<std::size_t> count;    // triplets per group in this batch
  std::vector<bool> present;
};

/// Mean per-triplet loss within each group of the triplet's user.
inline GroupLosses group_losses(std::span<const double> losses, std::span<const std::size_t> users,
                                std::span<const std::size_t> assignment, std::size_t k) {
  if (losses.size() != users.size()) throw std::invalid_argument("group_losses: losses and users differ in length");
  GroupLosses g{std::vector<double>(k, 0.0), std::vector<std::size_t>(k, 0), std::vector<bool>(k, false)};
  for (std::size_t t = 0; t < losses.size(); ++t) {
    const std::size_t c = assignment[users[t]];
    if (c >= k) throw std::out_of_range("group_losses: user assigned to a group >= K");
    g.loss[c] += losses[t];
    ++g.count[c];
  }
  for (std::size_t c = 0; c < k; ++c)
    if (g.count[c] > 0) {
      g.loss[c] /= static_cast<double>(g.count[c]);
      g.present[c] = true;
    }
  return g;
}

/// softmax(L / beta): the maximiser of sum w L - beta sum w log w over the simplex.
inline GroupWeights entropic_weights(std::span<const double> losses, double beta) {
  if (!(beta > 0.0)) throw std::invalid_argument("entropic_weights: beta must be positive");
  if (losses.empty()) throw std::invalid_argument("entropic_weights: no groups");
  const double mx = *std::max_element(losses.begin(), losses.end());
  GroupWeights g{std::vector<double>(losses.size())};
  double z = 0.0;
  for (std::size_t i = 0; i < losses.size(); ++i) z += g.w[i] = std::exp((losses[i] - mx) / beta);
  for (double& x : g.w) x /= z;
  return g;
}

/// sum w L - beta sum w log w.
inline double regularized_objective(std::span<const double> losses, const GroupWeights& w, double beta) {
  double s = 0.0;
  for (std::size_t i = 0; i < losses.size(); ++i) s += w.w[i] * losses[i];
  return s + beta * w.entropy();
}

/// How the radius is read: as an absolute bound on the Sinkhorn distance, or
/// as the allowed excess over the distance of the uniform weights.
enum class RadiusMode { absolute, excess_over_uniform };

struct WorstCaseResult {
  GroupWeights weights;
  double sinkhorn = 0.0;   // distance from the nominal to (centroids, weights)
  double tau = 1.0;        // mixing coefficient toward the unconstrained maximiser
  bool projected = false;  // the unconstrained maximiser violated the radius
  bool infeasible = false; // even uniform weights violate the radius; uniform returned
};

/// Entropy-regularised worst case within the Sinkhorn ball around the nominal.
///
/// The unconstrained maximiser softmax(L / beta) is returned when it lies within
/// distance rho of the nominal. Otherwise the weights move along the segment
/// from uniform toward it, and bisection finds the farthest feasible point.
inline WorstCaseResult worst_case_weights(std::span<const double> losses, double beta, double rho,
                                          const NominalDistribution& nominal, const Matrix& centroids,
                                          const SinkhornOptions& opt = {}, int bisection_steps = 40,
                                          RadiusMode mode = RadiusMode::absolute) {
  if (!(rho >= 0.0)) throw std::invalid_argument("worst_case_weights: rho must be non-negative");
  if (centroids.rows() != losses.size()) throw std::invalid_argument("worst_case_weights: one centroid per group");
  const std::size_t k = losses.size();
  WorstCaseResult r;
  const GroupWeights star = entropic_weights(losses, beta);
  const GroupWeights unif = GroupWeights::uniform(k);
  const WeightedPoints p{nominal.embeddings, nominal.weights};
  auto mix = [&](double tau) {
    GroupWeights w{std::vector<double>(k)};
    for (std::size_t i = 0; i < k; ++i) w.w[i] = (1.0 - tau) * unif.w[i] + tau * star.w[i];
    return w;
  };
  auto distance = [&](const GroupWeights& w) { return sinkhorn_distance(p, {centroids, w.w}, opt); };

  std::optional<double> d_unif;
  if (mode == RadiusMode::excess_over_uniform) {
    d_unif = distance(unif);
    rho += *d_unif;
  }
  const double d_star = distance(star);
  if (d_star <= rho) {
    r.weights = star;
    r.sinkhorn = d_star;
    return r;
  }
  if (!d_unif) d_unif = distance(unif);
  if (*d_unif > rho) {
    r.weights = unif;
    r.sinkhorn = *d_unif;
    r.tau = 0.0;
    r.infeasible = true;
    return r;
  }
  double lo = 0.0, hi = 1.0, d_lo = *d_unif;
  for (int s = 0; s < bisection_steps; ++s) {
    const double mid = 0.5 * (lo + hi);
    const double d = distance(mix(mid));
    if (d <= rho) {
      lo = mid;
      d_lo = d;
    } else {
      hi = mid;
    }
  }
  r.weights = mix(lo);
  r.sinkhorn = d_lo;
  r.tau = lo;
  r.projected = true;
  return r;
}

/// Per-coordinate -log w_i + 1, the entropy-term gradient in the convention of
/// the weight update. Differs from d/dw(-sum w log w) = -log w - 1 by a constant,
/// which vanishes along directions tangent to the simplex.
inline std::vector<double> entropy_grad(std::span<const double> w) {
  std::vector<double> g(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (!(w[i] > 0.0)) throw std::domain_error("entropy_grad: weight " + std::to_string(i) + " is not positive");
    g[i] = -std::log(w[i]) + 1.0;
  }
  return g;
}

// ---- KL baselines --------------------------------------------------------------

struct KlValue {
  double value = 0.0;
  bool infinite = false;
};

/// sum p log(p / q), with 0 log(0/q) = 0 and an explicit infinity marker when
/// p puts mass where q has none.
inline KlValue kl_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw std::invalid_argument("kl_divergence: index sets differ");
  KlValue r;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    if (q[i] <= 0.0) {
      r.infinite = true;
      r.value = std::numeric_limits<double>::infinity();
      return r;
    }
    r.value += p[i] * std::log(p[i] / q[i]);
  }
  return r;
}

/// argmax sum w L subject to KL(w || uniform) <= radius: exponential tilting
/// w ~ exp(L / temperature) with the temperature found by bisection in log space.
inline GroupWeights kl_dro_weights(std::span<const double> losses, double radius) {
  if (!(radius > 0.0)) throw std::invalid_argument("kl_dro_weights: radius must be positive");
  const std::size_t k = losses.size();
  const auto unif = GroupWeights::uniform(k);
  const double mx = *std::max_element(losses.begin(), losses.end());
  const double mn = *std::min_element(losses.begin(), losses.end());
  if (mx - mn <= 0.0) return unif;
  auto kl_to_uniform = [&](const GroupWeights& w) {
    return kl_divergence(w.w, unif.w).value;
  };
  // Zero-temperature limit: mass split evenly over the argmax set.
  std::size_t ties = 0;
  for (double l : losses) ties += l == mx;
  GroupWeights hard{std::vector<double>(k, 0.0)};
  for (std::size_t i = 0; i < k; ++i)
    if (losses[i] == mx) hard.w[i] = 1.0 / static_cast<double>(ties);
  if (kl_to_uniform(hard) <= radius) return hard;

  const double spread = mx - mn;
  double lo = std::log(spread) - 40.0, hi = std::log(spread) + 40.0;  // log temperature
  for (int s = 0; s < 200; ++s) {
    const double mid = 0.5 * (lo + hi);
    const double kl = kl_to_uniform(entropic_weights(losses, std::exp(mid)));
    // Larger temperature -> closer to uniform -> smaller KL.
    if (kl > radius)
      lo = mid;
    else
      hi = mid;
  }
  return entropic_weights(losses, std::exp(hi));
}

}  // namespace drgo
