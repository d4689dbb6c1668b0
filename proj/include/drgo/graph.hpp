#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <unordered_map>
#include <utility>
#include <vector>

#include "drgo/error.hpp"
#include "drgo/matrix.hpp"
#include "drgo/sparse.hpp"

namespace drgo {

struct Interaction {
  std::string user_id;
  std::string item_id;
  double rating = 0.0;
  std::int64_t timestamp = 0;

  friend bool operator==(const Interaction&, const Interaction&) = default;
};

/// User-item edge with dense indices.
struct Edge {
  std::size_t user = 0;
  std::size_t item = 0;
  std::int64_t timestamp = 0;

  friend bool operator==(const Edge&, const Edge&) = default;
};

/// Orders edges by (user, item); timestamps are payload.
inline bool edge_key_less(const Edge& a, const Edge& b) {
  return std::tie(a.user, a.item) < std::tie(b.user, b.item);
}

struct TextFormat {
  char delimiter = '\t';
  bool header = false;
  bool has_rating = true;
  bool has_timestamp = true;
};

namespace detail {

inline std::vector<std::string_view> split_fields(std::string_view line, char delim) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(delim, start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

template <class T>
bool parse_number(std::string_view s, T& out) {
  std::istringstream is{std::string(s)};
  is >> out;
  return !is.fail() && is.eof();
}

}  // namespace detail

/// Reads delimited user/item/rating/timestamp rows in file order. No filtering.
inline std::vector<Interaction> load_interactions(const std::string& path, const TextFormat& fmt = {}) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open interaction file '" + path + "'");
  std::vector<Interaction> rows;
  std::string line;
  std::size_t line_no = 0;
  const std::size_t expected = 2 + (fmt.has_rating ? 1 : 0) + (fmt.has_timestamp ? 1 : 0);
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 && fmt.header) continue;
    const auto body = detail::trim(line);
    if (body.empty()) continue;
    const auto f = detail::split_fields(body, fmt.delimiter);
    auto fail = [&](const std::string& why) {
      return DataError(path + ":" + std::to_string(line_no) + ": " + why);
    };
    if (f.size() < expected)
      throw fail("expected " + std::to_string(expected) + " fields, found " + std::to_string(f.size()));
    Interaction it;
    it.user_id = std::string(detail::trim(f[0]));
    it.item_id = std::string(detail::trim(f[1]));
    std::size_t col = 2;
    if (fmt.has_rating) {
      if (!detail::parse_number(detail::trim(f[col]), it.rating) || !std::isfinite(it.rating))
        throw fail("non-numeric rating '" + std::string(f[col]) + "'");
      ++col;
    } else {
      it.rating = 1.0;
    }
    if (fmt.has_timestamp) {
      if (!detail::parse_number(detail::trim(f[col]), it.timestamp))
        throw fail("non-integer timestamp '" + std::string(f[col]) + "'");
    }
    rows.push_back(std::move(it));
  }
  return rows;
}

/// Which interactions count as positive feedback.
struct PositiveRule {
  enum class Kind { rating, watch_ratio };
  Kind kind = Kind::rating;
  double threshold = 4.0;

  bool accepts(const Interaction& x) const { return x.rating >= threshold; }

  /// Parses "rating>=4" or "watch>=2".
  static PositiveRule parse(std::string_view text) {
    const auto pos = text.find(">=");
    if (pos == std::string_view::npos) throw UsageError("positive rule must look like 'rating>=4' or 'watch>=2'");
    PositiveRule r;
    const auto name = detail::trim(text.substr(0, pos));
    if (name == "rating") {
      r.kind = Kind::rating;
    } else if (name == "watch" || name == "watch_ratio") {
      r.kind = Kind::watch_ratio;
    } else {
      throw UsageError("unknown positive rule field '" + std::string(name) + "'");
    }
    if (!detail::parse_number(detail::trim(text.substr(pos + 2)), r.threshold))
      throw UsageError("positive rule threshold is not a number");
    return r;
  }
};

/// Bipartite user-item graph. Immutable after construction.
///
/// Node numbering for the joint (n_users + n_items) node set: users first,
/// then items at offset n_users.
class InteractionGraph {
 public:
  InteractionGraph() = default;

  /// Edges are deduplicated on (user, item); the latest timestamp is kept.
  InteractionGraph(std::size_t n_users, std::size_t n_items, std::vector<Edge> edges,
                   std::optional<Matrix> features = std::nullopt)
      : n_users_(n_users), n_items_(n_items), features_(std::move(features)) {
    for (const auto& e : edges)
      if (e.user >= n_users || e.item >= n_items)
        throw std::out_of_range("InteractionGraph: edge (" + std::to_string(e.user) + ", " +
                                std::to_string(e.item) + ") out of range");
    std::sort(edges.begin(), edges.end(), [](const Edge& a, const Edge& b) {
      return std::tie(a.user, a.item, a.timestamp) < std::tie(b.user, b.item, b.timestamp);
    });
    for (const auto& e : edges) {
      if (!edges_.empty() && edges_.back().user == e.user && edges_.back().item == e.item) {
        edges_.back().timestamp = e.timestamp;
        continue;
      }
      edges_.push_back(e);
    }
    if (features_ && features_->rows() != n_nodes())
      throw std::invalid_argument("InteractionGraph: feature rows must equal n_users + n_items");

    user_ptr_.assign(n_users_ + 1, 0);
    for (const auto& e : edges_) ++user_ptr_[e.user + 1];
    for (std::size_t u = 0; u < n_users_; ++u) user_ptr_[u + 1] += user_ptr_[u];
    item_users_.assign(n_items_, {});
    for (const auto& e : edges_) item_users_[e.item].push_back(e.user);

    std::vector<CsrMatrix::Entry> a;
    a.reserve(2 * edges_.size());
    for (const auto& e : edges_) {
      a.push_back({e.user, n_users_ + e.item, 1.0});
      a.push_back({n_users_ + e.item, e.user, 1.0});
    }
    adjacency_ = std::make_shared<CsrMatrix>(CsrMatrix::from_entries(n_nodes(), n_nodes(), std::move(a)));
  }

  std::size_t n_users() const noexcept { return n_users_; }
  std::size_t n_items() const noexcept { return n_items_; }
  std::size_t n_nodes() const noexcept { return n_users_ + n_items_; }
  std::size_t n_edges() const noexcept { return edges_.size(); }

  /// Sorted by (user, item).
  const std::vector<Edge>& edges() const noexcept { return edges_; }

  std::span<const Edge> user_edges(std::size_t u) const {
    return {edges_.data() + user_ptr_[u], user_ptr_[u + 1] - user_ptr_[u]};
  }
  std::size_t user_degree(std::size_t u) const { return user_ptr_[u + 1] - user_ptr_[u]; }
  std::size_t item_degree(std::size_t i) const { return item_users_[i].size(); }

  bool has_edge(std::size_t u, std::size_t i) const {
    const auto es = user_edges(u);
    return std::binary_search(es.begin(), es.end(), Edge{u, i, 0}, edge_key_less);
  }

  /// Symmetric binary adjacency over the joint node set, zero diagonal.
  const CsrMatrix& adjacency() const { return *adjacency_; }
  const std::optional<Matrix>& features() const noexcept { return features_; }

  std::vector<std::string> user_ids;
  std::vector<std::string> item_ids;

 private:
  std::size_t n_users_ = 0;
  std::size_t n_items_ = 0;
  std::vector<Edge> edges_;
  std::optional<Matrix> features_;
  std::vector<std::size_t> user_ptr_{0};
  std::vector<std::vector<std::size_t>> item_users_;
  std::shared_ptr<const CsrMatrix> adjacency_ = std::make_shared<CsrMatrix>();
};

/// Keeps positive interactions, then removes users and items below the degree
/// thresholds repeatedly until nothing changes, and reindexes densely in order
/// of first appearance.
inline InteractionGraph build_graph(const std::vector<Interaction>& interactions, std::size_t min_user_deg,
                                    std::size_t min_item_deg, const PositiveRule& rule) {
  std::vector<const Interaction*> kept;
  for (const auto& x : interactions)
    if (rule.accepts(x)) kept.push_back(&x);

  // Degrees count distinct (user, item) pairs.
  std::map<std::pair<std::string_view, std::string_view>, const Interaction*> unique;
  for (const auto* x : kept) {
    auto [it, inserted] = unique.try_emplace({x->user_id, x->item_id}, x);
    if (!inserted && x->timestamp > it->second->timestamp) it->second = x;
  }
  std::vector<const Interaction*> live;
  live.reserve(unique.size());
  for (const auto* x : kept)
    if (unique.at({x->user_id, x->item_id}) == x) live.push_back(x);

  for (bool changed = true; changed;) {
    changed = false;
    std::unordered_map<std::string_view, std::size_t> udeg, ideg;
    for (const auto* x : live) {
      ++udeg[x->user_id];
      ++ideg[x->item_id];
    }
    std::vector<const Interaction*> next;
    next.reserve(live.size());
    for (const auto* x : live)
      if (udeg[x->user_id] >= min_user_deg && ideg[x->item_id] >= min_item_deg) next.push_back(x);
    changed = next.size() != live.size();
    live = std::move(next);
  }
  if (live.empty()) throw DataError("build_graph: every interaction was filtered out");

  std::unordered_map<std::string_view, std::size_t> uidx, iidx;
  std::vector<std::string> user_ids, item_ids;
  std::vector<Edge> edges;
  edges.reserve(live.size());
  for (const auto* x : live) {
    auto [u, nu] = uidx.try_emplace(x->user_id, user_ids.size());
    if (nu) user_ids.push_back(x->user_id);
    auto [i, ni] = iidx.try_emplace(x->item_id, item_ids.size());
    if (ni) item_ids.push_back(x->item_id);
    edges.push_back({u->second, i->second, x->timestamp});
  }
  InteractionGraph g(user_ids.size(), item_ids.size(), std::move(edges));
  g.user_ids = std::move(user_ids);
  g.item_ids = std::move(item_ids);
  return g;
}

/// D^{-1/2} A D^{-1/2} for a symmetric adjacency; isolated nodes keep empty rows.
inline CsrMatrix normalized_adjacency(const CsrMatrix& adj) {
  std::vector<double> deg(adj.rows(), 0.0);
  for (std::size_t r = 0; r < adj.rows(); ++r)
    for (double v : adj.row_values(r)) deg[r] += v;
  std::vector<CsrMatrix::Entry> e;
  e.reserve(adj.nnz());
  for (std::size_t r = 0; r < adj.rows(); ++r) {
    const auto cs = adj.row_cols(r);
    const auto vs = adj.row_values(r);
    for (std::size_t k = 0; k < cs.size(); ++k)
      e.push_back({r, cs[k], vs[k] / (std::sqrt(deg[r]) * std::sqrt(deg[cs[k]]))});
  }
  return CsrMatrix::from_entries(adj.rows(), adj.cols(), std::move(e));
}

inline CsrMatrix normalized_adjacency(const InteractionGraph& g) { return normalized_adjacency(g.adjacency()); }

}  // namespace drgo
