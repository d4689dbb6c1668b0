#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <tuple>
#include <unordered_set>
#include <vector>

#include "drgo/error.hpp"
#include "drgo/graph.hpp"
#include "drgo/rng.hpp"
#include "json.hpp"

namespace drgo {

enum class SplitKind { popularity, temporal, exposure };

inline const char* to_string(SplitKind k) {
  switch (k) {
    case SplitKind::popularity: return "popularity";
    case SplitKind::temporal: return "temporal";
    case SplitKind::exposure: return "exposure";
  }
  return "?";
}

inline SplitKind parse_split_kind(std::string_view s) {
  if (s == "popularity") return SplitKind::popularity;
  if (s == "temporal") return SplitKind::temporal;
  if (s == "exposure") return SplitKind::exposure;
  throw UsageError("unknown split kind '" + std::string(s) + "' (popularity, temporal, exposure)");
}

/// Train graph plus three held-out edge sets. The four sets partition the
/// pre-split edges; all share the node numbering of the source graph.
struct SplitBundle {
  InteractionGraph train;
  std::vector<Edge> valid;
  std::vector<Edge> test_iid;
  std::vector<Edge> test_ood;
  SplitKind kind = SplitKind::popularity;
  std::uint64_t seed = 0;
  double ood_fraction = 0.0;
  std::vector<std::string> warnings;
};

namespace detail {

inline std::uint64_t edge_code(const Edge& e) { return (static_cast<std::uint64_t>(e.user) << 32) | e.item; }

/// Largest-remainder allocation of n into 7:1:2; each part is within one of its exact share.
inline std::array<std::size_t, 3> seven_one_two(std::size_t n) {
  constexpr std::array<double, 3> share{0.7, 0.1, 0.2};
  std::array<std::size_t, 3> cnt{};
  std::array<double, 3> frac{};
  std::size_t used = 0;
  for (int k = 0; k < 3; ++k) {
    const double exact = share[k] * static_cast<double>(n);
    cnt[k] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    frac[k] = exact - static_cast<double>(cnt[k]);
    used += cnt[k];
  }
  while (used < n) {
    int best = 0;
    for (int k = 1; k < 3; ++k)
      if (frac[k] > frac[best] + 1e-12) best = k;
    ++cnt[best];
    frac[best] = -1.0;
    ++used;
  }
  return cnt;
}

/// Splits each user's edges 7:1:2 in the given order (already shuffled or time-sorted).
inline void assign_per_user(std::vector<std::vector<Edge>>& per_user, std::vector<Edge>& train,
                            std::vector<Edge>& valid, std::vector<Edge>& test) {
  for (auto& es : per_user) {
    const auto c = seven_one_two(es.size());
    std::size_t k = 0;
    for (; k < c[0]; ++k) train.push_back(es[k]);
    for (; k < c[0] + c[1]; ++k) valid.push_back(es[k]);
    for (; k < es.size(); ++k) test.push_back(es[k]);
  }
}

inline SplitBundle finish_random(const InteractionGraph& g, std::vector<Edge> remainder, std::vector<Edge> ood,
                                 SplitKind kind, std::uint64_t seed, double fraction, Rng& rng) {
  if (remainder.size() < 10)
    throw DataError("split: only " + std::to_string(remainder.size()) +
                    " non-OOD edges remain; too few for a 7:1:2 split");
  std::vector<std::vector<Edge>> per_user(g.n_users());
  std::sort(remainder.begin(), remainder.end(), edge_key_less);
  for (const auto& e : remainder) per_user[e.user].push_back(e);
  for (auto& es : per_user) shuffle_in_place(es, rng);
  SplitBundle b;
  std::vector<Edge> train;
  assign_per_user(per_user, train, b.valid, b.test_iid);
  b.train = InteractionGraph(g.n_users(), g.n_items(), std::move(train), g.features());
  b.train.user_ids = g.user_ids;
  b.train.item_ids = g.item_ids;
  std::sort(ood.begin(), ood.end(), edge_key_less);
  b.test_ood = std::move(ood);
  b.kind = kind;
  b.seed = seed;
  b.ood_fraction = fraction;
  return b;
}

}  // namespace detail

/// Holds out `ood_fraction` of edges with as flat an item histogram as the
/// data allows: each item contributes up to budget / n_items edges, and any
/// shortfall is filled uniformly from what is left.
inline SplitBundle split_popularity(const InteractionGraph& g, double ood_fraction, std::uint64_t seed) {
  if (!(ood_fraction >= 0.0 && ood_fraction < 1.0)) throw UsageError("ood_fraction must lie in [0, 1)");
  Rng rng = make_rng(seed, "split");
  const auto budget = static_cast<std::size_t>(std::llround(ood_fraction * static_cast<double>(g.n_edges())));
  const std::size_t quota = g.n_items() ? budget / g.n_items() : 0;

  std::vector<std::vector<std::size_t>> by_item(g.n_items());
  const auto& edges = g.edges();
  for (std::size_t k = 0; k < edges.size(); ++k) by_item[edges[k].item].push_back(k);

  std::vector<char> chosen(edges.size(), 0);
  std::size_t taken = 0;
  for (auto& ks : by_item) {
    shuffle_in_place(ks, rng);
    const std::size_t take = std::min(ks.size(), quota);
    for (std::size_t j = 0; j < take; ++j) chosen[ks[j]] = 1;
    taken += take;
  }
  if (taken < budget) {
    std::vector<std::size_t> rest;
    for (std::size_t k = 0; k < edges.size(); ++k)
      if (!chosen[k]) rest.push_back(k);
    shuffle_in_place(rest, rng);
    for (std::size_t j = 0; j < budget - taken && j < rest.size(); ++j) chosen[rest[j]] = 1;
  }
  std::vector<Edge> ood, remainder;
  for (std::size_t k = 0; k < edges.size(); ++k) (chosen[k] ? ood : remainder).push_back(edges[k]);
  return detail::finish_random(g, std::move(remainder), std::move(ood), SplitKind::popularity, seed, ood_fraction,
                               rng);
}

/// Per user: the latest round(fraction * degree) edges go to the OOD test set
/// (time order, ties by item index); the rest split 7:1:2 oldest-first.
inline SplitBundle split_temporal(const InteractionGraph& g, double ood_fraction) {
  if (!(ood_fraction >= 0.0 && ood_fraction < 1.0)) throw UsageError("ood_fraction must lie in [0, 1)");
  const bool any_time = std::any_of(g.edges().begin(), g.edges().end(), [](const Edge& e) { return e.timestamp != 0; });
  if (!any_time) throw DataError("split_temporal: interactions carry no timestamps");

  SplitBundle b;
  std::vector<Edge> train;
  for (std::size_t u = 0; u < g.n_users(); ++u) {
    std::vector<Edge> es(g.user_edges(u).begin(), g.user_edges(u).end());
    std::sort(es.begin(), es.end(),
              [](const Edge& a, const Edge& c) { return std::tie(a.timestamp, a.item) < std::tie(c.timestamp, c.item); });
    const auto n_ood = static_cast<std::size_t>(std::llround(ood_fraction * static_cast<double>(es.size())));
    const std::size_t keep = es.size() - n_ood;
    b.test_ood.insert(b.test_ood.end(), es.begin() + static_cast<std::ptrdiff_t>(keep), es.end());
    std::vector<std::vector<Edge>> one{std::vector<Edge>(es.begin(), es.begin() + static_cast<std::ptrdiff_t>(keep))};
    detail::assign_per_user(one, train, b.valid, b.test_iid);
  }
  std::sort(b.test_ood.begin(), b.test_ood.end(), edge_key_less);
  b.train = InteractionGraph(g.n_users(), g.n_items(), std::move(train), g.features());
  b.train.user_ids = g.user_ids;
  b.train.item_ids = g.item_ids;
  b.kind = SplitKind::temporal;
  b.ood_fraction = ood_fraction;
  return b;
}

/// The externally supplied fully-observed edges become the OOD test set; the
/// exposure-biased remainder splits 7:1:2. Overlapping edges are dropped from
/// the remainder and reported in `warnings`.
inline SplitBundle split_exposure(const InteractionGraph& g, const std::vector<Edge>& fully_observed,
                                  std::uint64_t seed) {
  std::unordered_set<std::uint64_t> observed;
  for (const auto& e : fully_observed) {
    if (e.user >= g.n_users() || e.item >= g.n_items())
      throw DataError("split_exposure: observed edge index out of range");
    observed.insert(detail::edge_code(e));
  }
  std::vector<Edge> remainder;
  std::size_t overlap = 0;
  for (const auto& e : g.edges()) {
    if (observed.count(detail::edge_code(e))) {
      ++overlap;
      continue;
    }
    remainder.push_back(e);
  }
  // Deduplicate the observed set itself.
  std::vector<Edge> ood = fully_observed;
  std::sort(ood.begin(), ood.end(), edge_key_less);
  ood.erase(std::unique(ood.begin(), ood.end(),
                        [](const Edge& a, const Edge& c) { return a.user == c.user && a.item == c.item; }),
            ood.end());
  const double fraction = static_cast<double>(ood.size()) / static_cast<double>(ood.size() + remainder.size());
  Rng rng = make_rng(seed, "split");
  auto b = detail::finish_random(g, std::move(remainder), std::move(ood), SplitKind::exposure, seed, fraction, rng);
  if (overlap > 0)
    b.warnings.push_back("split_exposure: removed " + std::to_string(overlap) +
                         " edges that also appear in the fully observed set");
  return b;
}

/// Replaces floor(ratio * |E|) uniformly chosen edges with the same number of
/// uniformly chosen non-edges. Fake edges carry timestamp 0.
inline InteractionGraph inject_noise(const InteractionGraph& g, double ratio, std::uint64_t seed) {
  if (!(ratio >= 0.0 && ratio < 1.0)) throw UsageError("noise ratio must lie in [0, 1)");
  const auto k = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(g.n_edges())));
  if (k == 0) return g;
  const std::size_t capacity = g.n_users() * g.n_items() - g.n_edges();
  if (capacity < k)
    throw DataError("inject_noise: graph has only " + std::to_string(capacity) + " non-edges, need " +
                    std::to_string(k));
  Rng rng = make_rng(seed, "noise");
  std::vector<std::size_t> idx(g.n_edges());
  for (std::size_t j = 0; j < idx.size(); ++j) idx[j] = j;
  // Partial Fisher-Yates: the first k positions are the removed edges.
  for (std::size_t j = 0; j < k; ++j) std::swap(idx[j], idx[j + uniform_index(rng, idx.size() - j)]);
  std::vector<char> removed(g.n_edges(), 0);
  for (std::size_t j = 0; j < k; ++j) removed[idx[j]] = 1;

  std::vector<Edge> edges;
  edges.reserve(g.n_edges());
  for (std::size_t j = 0; j < g.n_edges(); ++j)
    if (!removed[j]) edges.push_back(g.edges()[j]);
  std::unordered_set<std::uint64_t> added;
  while (added.size() < k) {
    const Edge e{uniform_index(rng, g.n_users()), uniform_index(rng, g.n_items()), 0};
    if (g.has_edge(e.user, e.item)) continue;
    if (added.insert(detail::edge_code(e)).second) edges.push_back(e);
  }
  InteractionGraph out(g.n_users(), g.n_items(), std::move(edges), g.features());
  out.user_ids = g.user_ids;
  out.item_ids = g.item_ids;
  return out;
}

// ---- edge-list files -------------------------------------------------------

inline void write_edges(const std::filesystem::path& path, const std::vector<Edge>& edges) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  for (const auto& e : edges) out << e.user << '\t' << e.item << '\t' << e.timestamp << '\n';
}

inline std::vector<Edge> read_edges(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::vector<Edge> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    std::istringstream is(line);
    Edge e;
    if (!(is >> e.user >> e.item >> e.timestamp))
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": malformed edge row");
    out.push_back(e);
  }
  return out;
}

/// Writes train/valid/test_iid/test_ood edge lists and manifest.json into `dir`.
/// `extra` is merged into the manifest (resolved configuration, provenance).
inline void write_split(const std::filesystem::path& dir, const SplitBundle& b,
                        const nlohmann::json& extra = nlohmann::json::object()) {
  std::filesystem::create_directories(dir);
  write_edges(dir / "train.tsv", b.train.edges());
  write_edges(dir / "valid.tsv", b.valid);
  write_edges(dir / "test_iid.tsv", b.test_iid);
  write_edges(dir / "test_ood.tsv", b.test_ood);
  nlohmann::json m = extra;
  m["kind"] = to_string(b.kind);
  m["seed"] = b.seed;
  m["ood_fraction"] = b.ood_fraction;
  m["n_users"] = b.train.n_users();
  m["n_items"] = b.train.n_items();
  m["counts"] = {{"train", b.train.n_edges()},
                 {"valid", b.valid.size()},
                 {"test_iid", b.test_iid.size()},
                 {"test_ood", b.test_ood.size()}};
  m["warnings"] = b.warnings;
  std::ofstream out(dir / "manifest.json");
  out << m.dump(2) << '\n';
}

inline SplitBundle read_split(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw DataError("no manifest.json in '" + dir.string() + "'");
  nlohmann::json m;
  try {
    in >> m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("manifest.json: ") + e.what());
  }
  SplitBundle b;
  b.kind = parse_split_kind(m.at("kind").get<std::string>());
  b.seed = m.at("seed").get<std::uint64_t>();
  b.ood_fraction = m.at("ood_fraction").get<double>();
  const auto nu = m.at("n_users").get<std::size_t>();
  const auto ni = m.at("n_items").get<std::size_t>();
  b.train = InteractionGraph(nu, ni, read_edges(dir / "train.tsv"));
  b.valid = read_edges(dir / "valid.tsv");
  b.test_iid = read_edges(dir / "test_iid.tsv");
  b.test_ood = read_edges(dir / "test_ood.tsv");
  return b;
}

}  // namespace drgo
