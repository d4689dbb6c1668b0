#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <span>
#include <stdexcept>
#include <unordered_set>
#include <vector>

#include "drgo/graph.hpp"
#include "drgo/matrix.hpp"
#include "json.hpp"

namespace drgo {

/// |top-K ∩ positives| / |positives|. `ranked` is best-first.
inline double recall_at_k(std::span<const std::size_t> ranked, std::span<const std::size_t> positives, std::size_t k) {
  if (positives.empty()) throw std::invalid_argument("recall_at_k: user has no positives");
  const std::unordered_set<std::size_t> pos(positives.begin(), positives.end());
  std::size_t hits = 0;
  for (std::size_t r = 0; r < std::min(k, ranked.size()); ++r) hits += pos.count(ranked[r]);
  return static_cast<double>(hits) / static_cast<double>(pos.size());
}

/// DCG with gain 1 / log2(rank + 1) over hits, divided by the ideal DCG of
/// min(|positives|, K) hits.
inline double ndcg_at_k(std::span<const std::size_t> ranked, std::span<const std::size_t> positives, std::size_t k) {
  if (positives.empty()) throw std::invalid_argument("ndcg_at_k: user has no positives");
  const std::unordered_set<std::size_t> pos(positives.begin(), positives.end());
  double dcg = 0.0, idcg = 0.0;
  for (std::size_t r = 0; r < std::min(k, ranked.size()); ++r)
    if (pos.count(ranked[r])) dcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
  for (std::size_t r = 0; r < std::min(k, pos.size()); ++r) idcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
  return dcg / idcg;
}

struct EvalReport {
  std::vector<std::size_t> ks;
  std::map<std::size_t, double> recall;
  std::map<std::size_t, double> ndcg;
  std::vector<std::size_t> users;  // evaluable users, ascending
  std::map<std::size_t, std::vector<double>> user_recall;
  std::map<std::size_t, std::vector<double>> user_ndcg;
  std::size_t n_evaluable = 0;

  nlohmann::json summary() const {
    nlohmann::json j;
    j["n_evaluable"] = n_evaluable;
    for (std::size_t k : ks) {
      j["recall@" + std::to_string(k)] = recall.at(k);
      j["ndcg@" + std::to_string(k)] = ndcg.at(k);
    }
    return j;
  }
};

/// Scores every item for one user into `out` (length n_items).
using UserScorer = std::function<void(std::size_t user, std::span<double> out)>;

/// Ranks all items not in the user's training set, best first, ties by item index.
inline std::vector<std::size_t> rank_items(std::span<const double> scores, const InteractionGraph& train,
                                           std::size_t user, std::size_t depth) {
  std::vector<std::size_t> cand;
  cand.reserve(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (!train.has_edge(user, i)) cand.push_back(i);
  depth = std::min(depth, cand.size());
  auto better = [&](std::size_t a, std::size_t b) { return scores[a] > scores[b] || (scores[a] == scores[b] && a < b); };
  std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(depth), cand.end(), better);
  cand.resize(depth);
  return cand;
}

inline EvalReport evaluate(const UserScorer& scorer, const InteractionGraph& train, std::span<const Edge> test,
                           std::vector<std::size_t> ks) {
  if (ks.empty()) throw std::invalid_argument("evaluate: no cutoffs given");
  std::sort(ks.begin(), ks.end());
  ks.erase(std::unique(ks.begin(), ks.end()), ks.end());
  std::map<std::size_t, std::vector<std::size_t>> positives;
  for (const auto& e : test)
    if (!train.has_edge(e.user, e.item)) positives[e.user].push_back(e.item);

  EvalReport rep;
  rep.ks = ks;
  std::vector<double> scores(train.n_items());
  for (auto& [u, pos] : positives) {
    std::sort(pos.begin(), pos.end());
    pos.erase(std::unique(pos.begin(), pos.end()), pos.end());
    scorer(u, scores);
    const auto ranked = rank_items(scores, train, u, ks.back());
    rep.users.push_back(u);
    for (std::size_t k : ks) {
      rep.user_recall[k].push_back(recall_at_k(ranked, pos, k));
      rep.user_ndcg[k].push_back(ndcg_at_k(ranked, pos, k));
    }
  }
  rep.n_evaluable = rep.users.size();
  for (std::size_t k : ks) {
    double r = 0.0, n = 0.0;
    for (double v : rep.user_recall[k]) r += v;
    for (double v : rep.user_ndcg[k]) n += v;
    const double d = rep.n_evaluable ? static_cast<double>(rep.n_evaluable) : 1.0;
    rep.recall[k] = r / d;
    rep.ndcg[k] = n / d;
  }
  return rep;
}

/// Inner-product scorer over final user and item embeddings.
inline EvalReport evaluate(const Matrix& user_emb, const Matrix& item_emb, const InteractionGraph& train,
                           std::span<const Edge> test, std::vector<std::size_t> ks) {
  if (user_emb.rows() != train.n_users() || item_emb.rows() != train.n_items())
    throw std::invalid_argument("evaluate: embedding tables do not match the graph");
  const UserScorer scorer = [&](std::size_t u, std::span<double> out) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = dot(user_emb.row(u), item_emb.row(i));
  };
  return evaluate(scorer, train, test, std::move(ks));
}

}  // namespace drgo
