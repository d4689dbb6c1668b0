#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "drgo/graph.hpp"
#include "drgo/matrix.hpp"
#include "drgo/rng.hpp"

namespace drgo {

/// Latent-factor generator: users and items come from Gaussian clusters and
/// each user picks items by Gumbel-top-k over preference + popularity.
struct SyntheticConfig {
  std::size_t n_users = 2000;
  std::size_t n_items = 1500;
  std::size_t latent_dim = 8;
  std::size_t n_clusters = 3;
  double center_scale = 1.0;    // std of the cluster centres
  double spread = 0.5;          // within-cluster std
  double affinity = 3.0;        // multiplier on u . v in the choice logit
  double popularity_gamma = 1.0;
  double zipf_exponent = 0.8;
  std::size_t min_degree = 10;
  double mean_degree = 20.0;
  std::uint64_t seed = 0;
};

struct SyntheticData {
  InteractionGraph graph;
  Matrix user_factors;
  Matrix item_factors;
  std::vector<std::size_t> user_cluster;
  std::vector<std::size_t> item_cluster;
  std::vector<double> item_popularity;  // normalised to sum 1

  /// Ground-truth preference u . v.
  double preference(std::size_t u, std::size_t i) const { return dot(user_factors.row(u), item_factors.row(i)); }
};

namespace detail {

inline double gumbel(Rng& rng) {
  double u = uniform01(rng);
  while (u <= 0.0) u = uniform01(rng);
  return -std::log(-std::log(u));
}

/// Indices of the k largest logits + Gumbel noise: a sample of k items
/// without replacement from softmax(logits).
inline std::vector<std::size_t> gumbel_top_k(std::span<const double> logits, std::size_t k, Rng& rng) {
  std::vector<double> keyed(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) keyed[i] = logits[i] + gumbel(rng);
  std::vector<std::size_t> idx(logits.size());
  std::iota(idx.begin(), idx.end(), 0);
  k = std::min(k, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](std::size_t a, std::size_t b) { return keyed[a] > keyed[b] || (keyed[a] == keyed[b] && a < b); });
  idx.resize(k);
  return idx;
}

inline std::size_t draw_degree(const SyntheticConfig& c, std::size_t n_items, Rng& rng) {
  const double extra = c.mean_degree > static_cast<double>(c.min_degree)
                           ? -std::log(1.0 - uniform01(rng)) * (c.mean_degree - static_cast<double>(c.min_degree))
                           : 0.0;
  return std::min<std::size_t>(c.min_degree + static_cast<std::size_t>(extra), n_items / 2);
}

inline Matrix cluster_centres(const SyntheticConfig& c, Rng& rng) {
  Matrix centres(c.n_clusters, c.latent_dim);
  for (double& v : centres.data()) v = c.center_scale * standard_normal(rng);
  return centres;
}

inline void draw_members(Matrix& out, std::vector<std::size_t>& cluster, const Matrix& centres, double spread,
                         Rng& rng, std::span<const std::size_t> allowed = {}) {
  for (std::size_t r = 0; r < out.rows(); ++r) {
    const std::size_t c = allowed.empty() ? uniform_index(rng, centres.rows()) : allowed[uniform_index(rng, allowed.size())];
    cluster[r] = c;
    for (std::size_t j = 0; j < out.cols(); ++j) out(r, j) = centres(c, j) + spread * standard_normal(rng);
  }
}

}  // namespace detail

/// Items' Zipf popularity under a random rank permutation.
inline std::vector<double> zipf_popularity(std::size_t n_items, double exponent, Rng& rng) {
  std::vector<std::size_t> rank(n_items);
  std::iota(rank.begin(), rank.end(), 0);
  shuffle_in_place(rank, rng);
  std::vector<double> p(n_items);
  double z = 0.0;
  for (std::size_t i = 0; i < n_items; ++i) z += p[i] = std::pow(static_cast<double>(rank[i] + 1), -exponent);
  for (double& v : p) v /= z;
  return p;
}

namespace detail {

/// Interactions for the given users: logit = affinity * u.v + gamma * log pop.
inline std::vector<Edge> choose_items(const SyntheticConfig& c, const Matrix& users, const Matrix& items,
                                      std::span<const double> pop, double gamma, std::size_t user_offset, Rng& rng) {
  std::vector<Edge> edges;
  std::vector<double> logits(items.rows());
  for (std::size_t u = 0; u < users.rows(); ++u) {
    for (std::size_t i = 0; i < items.rows(); ++i)
      logits[i] = c.affinity * dot(users.row(u), items.row(i)) + gamma * std::log(pop[i]);
    const std::size_t deg = draw_degree(c, items.rows(), rng);
    for (std::size_t i : gumbel_top_k(logits, deg, rng))
      edges.push_back({user_offset + u, i, static_cast<std::int64_t>(uniform_index(rng, 1000000))});
  }
  return edges;
}

}  // namespace detail

inline SyntheticData generate_synthetic(const SyntheticConfig& c) {
  if (c.n_users == 0 || c.n_items < 2 || c.n_clusters == 0 || c.latent_dim == 0)
    throw std::invalid_argument("generate_synthetic: empty configuration");
  Rng rng = make_rng(c.seed, "synthetic");
  SyntheticData d;
  const Matrix centres = detail::cluster_centres(c, rng);
  d.user_factors = Matrix(c.n_users, c.latent_dim);
  d.item_factors = Matrix(c.n_items, c.latent_dim);
  d.user_cluster.resize(c.n_users);
  d.item_cluster.resize(c.n_items);
  detail::draw_members(d.user_factors, d.user_cluster, centres, c.spread, rng);
  detail::draw_members(d.item_factors, d.item_cluster, centres, c.spread, rng);
  d.item_popularity = zipf_popularity(c.n_items, c.zipf_exponent, rng);
  auto edges = detail::choose_items(c, d.user_factors, d.item_factors, d.item_popularity, c.popularity_gamma, 0, rng);
  d.graph = InteractionGraph(c.n_users, c.n_items, std::move(edges));
  return d;
}

/// Exposure-shift pair. The biased graph exposes items in proportion to
/// popularity^gamma. For the observed set each user is shown a uniformly random
/// `exposed_share` of the catalogue and picks from it by preference alone.
struct ExposureData {
  SyntheticData biased;
  std::vector<Edge> observed;
};

inline ExposureData generate_exposure(const SyntheticConfig& c, double exposed_share = 0.25,
                                      double observed_share = 0.25) {
  if (!(exposed_share > 0.0 && exposed_share <= 1.0)) throw std::invalid_argument("exposed_share must lie in (0, 1]");
  ExposureData out;
  out.biased = generate_synthetic(c);
  Rng rng = make_rng(c.seed, "exposure");
  const auto& users = out.biased.user_factors;
  const auto& items = out.biased.item_factors;
  const std::size_t n_exposed =
      std::max<std::size_t>(2, static_cast<std::size_t>(std::round(exposed_share * static_cast<double>(items.rows()))));
  SyntheticConfig oc = c;
  oc.mean_degree = std::max(1.0, c.mean_degree * observed_share);
  oc.min_degree = std::max<std::size_t>(1, static_cast<std::size_t>(std::round(static_cast<double>(c.min_degree) * observed_share)));
  std::vector<std::size_t> all(items.rows());
  std::iota(all.begin(), all.end(), 0);
  for (std::size_t u = 0; u < users.rows(); ++u) {
    shuffle_in_place(all, rng);
    std::vector<std::size_t> shown(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(std::min(n_exposed, all.size())));
    std::vector<double> logits(shown.size());
    for (std::size_t n = 0; n < shown.size(); ++n) logits[n] = c.affinity * dot(users.row(u), items.row(shown[n]));
    const std::size_t deg = detail::draw_degree(oc, shown.size() * 2, rng);
    for (std::size_t n : detail::gumbel_top_k(logits, deg, rng))
      out.observed.push_back({u, shown[n], static_cast<std::int64_t>(uniform_index(rng, 1000000))});
  }
  return out;
}

/// Users split into a 90% major and 10% minor preference group, plus a noise
/// group of users whose interactions are uniformly random. The noise users
/// contribute roughly `noise_fraction` of the clean interaction count.
struct GroupBenchmark {
  SyntheticData data;
  std::vector<std::size_t> user_group;  // 0 major, 1 minor, 2 noise
  static constexpr std::size_t n_groups = 3;
  static constexpr std::size_t major = 0, minor = 1, noise = 2;
};

inline GroupBenchmark generate_group_benchmark(const SyntheticConfig& c, double noise_fraction) {
  if (!(noise_fraction >= 0.0 && noise_fraction < 1.0)) throw std::invalid_argument("noise_fraction must lie in [0, 1)");
  if (c.n_clusters < 2) throw std::invalid_argument("group benchmark needs at least two clusters");
  Rng rng = make_rng(c.seed, "groups");
  GroupBenchmark b;
  SyntheticData& d = b.data;
  const Matrix centres = detail::cluster_centres(c, rng);
  const auto n_minor = static_cast<std::size_t>(std::round(0.1 * static_cast<double>(c.n_users)));
  const std::size_t n_major = c.n_users - n_minor;
  const auto n_noise = static_cast<std::size_t>(std::round(noise_fraction * static_cast<double>(c.n_users)));
  const std::size_t n_users = c.n_users + n_noise;

  d.item_factors = Matrix(c.n_items, c.latent_dim);
  d.item_cluster.resize(c.n_items);
  detail::draw_members(d.item_factors, d.item_cluster, centres, c.spread, rng);
  d.item_popularity = zipf_popularity(c.n_items, c.zipf_exponent, rng);

  d.user_factors = Matrix(n_users, c.latent_dim);
  d.user_cluster.assign(n_users, 0);
  b.user_group.assign(n_users, GroupBenchmark::noise);
  Matrix major(n_major, c.latent_dim), minor(n_minor, c.latent_dim);
  std::vector<std::size_t> cl_major(n_major), cl_minor(n_minor);
  const std::size_t only0[] = {0}, only1[] = {1};
  detail::draw_members(major, cl_major, centres, c.spread, rng, only0);
  detail::draw_members(minor, cl_minor, centres, c.spread, rng, only1);
  for (std::size_t u = 0; u < n_major; ++u) {
    std::copy(major.row(u).begin(), major.row(u).end(), d.user_factors.row(u).begin());
    b.user_group[u] = GroupBenchmark::major;
  }
  for (std::size_t u = 0; u < n_minor; ++u) {
    std::copy(minor.row(u).begin(), minor.row(u).end(), d.user_factors.row(n_major + u).begin());
    d.user_cluster[n_major + u] = 1;
    b.user_group[n_major + u] = GroupBenchmark::minor;
  }
  auto edges = detail::choose_items(c, major, d.item_factors, d.item_popularity, c.popularity_gamma, 0, rng);
  const auto minor_edges = detail::choose_items(c, minor, d.item_factors, d.item_popularity, c.popularity_gamma, n_major, rng);
  edges.insert(edges.end(), minor_edges.begin(), minor_edges.end());
  // Noise users: zero factors, uniformly random items.
  std::vector<double> flat(c.n_items, 1.0 / static_cast<double>(c.n_items));
  SyntheticConfig nc = c;
  nc.affinity = 0.0;
  const auto noise_edges = detail::choose_items(nc, Matrix(n_noise, c.latent_dim), d.item_factors, flat, 0.0, c.n_users, rng);
  for (std::size_t u = c.n_users; u < n_users; ++u) d.user_cluster[u] = c.n_clusters;
  edges.insert(edges.end(), noise_edges.begin(), noise_edges.end());
  d.graph = InteractionGraph(n_users, c.n_items, std::move(edges));
  return b;
}

}  // namespace drgo
