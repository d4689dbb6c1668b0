#pragma once

#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "drgo/autodiff.hpp"
#include "drgo/graph.hpp"
#include "drgo/rng.hpp"
#include "drgo/sparse.hpp"

namespace drgo {

/// Embedding-propagation recommender: layer-0 embeddings smoothed over the
/// normalized bipartite adjacency, scored by inner product.
struct BackboneModel {
  ad::Tensor user_embeddings;  // n_users x d
  ad::Tensor item_embeddings;  // n_items x d
  int n_layers = 3;
  std::shared_ptr<const CsrMatrix> adjacency;  // normalized, (n_users + n_items) square

  std::size_t n_users() const { return user_embeddings.rows(); }
  std::size_t n_items() const { return item_embeddings.rows(); }
  std::size_t dim() const { return user_embeddings.cols(); }

  /// Gaussian N(0, std^2) initialisation.
  static BackboneModel init(const InteractionGraph& g, std::size_t dim, int n_layers, Rng& rng, double std = 0.1) {
    BackboneModel m;
    Matrix u(g.n_users(), dim), i(g.n_items(), dim);
    for (double& x : u.data()) x = std * standard_normal(rng);
    for (double& x : i.data()) x = std * standard_normal(rng);
    m.user_embeddings = ad::Tensor(std::move(u), true);
    m.item_embeddings = ad::Tensor(std::move(i), true);
    m.n_layers = n_layers;
    m.adjacency = std::make_shared<CsrMatrix>(normalized_adjacency(g));
    return m;
  }
};

/// Final embeddings of the joint node set; users occupy rows [0, n_users).
struct Propagated {
  ad::Tensor nodes;
  std::size_t n_users = 0;

  std::size_t item_row(std::size_t i) const { return n_users + i; }
};

/// Mean of the layer-0 embeddings and their 1..L fold propagations.
inline ad::Tensor propagate_layers(std::shared_ptr<const CsrMatrix> adj, const ad::Tensor& e0, int n_layers) {
  if (n_layers < 0) throw std::invalid_argument("propagate: negative layer count");
  ad::Tensor acc = e0;
  ad::Tensor cur = e0;
  for (int l = 0; l < n_layers; ++l) {
    cur = ad::spmm(adj, cur);
    acc = ad::add(acc, cur);
  }
  return n_layers == 0 ? acc : ad::scale(acc, 1.0 / static_cast<double>(n_layers + 1));
}

/// Propagates `layer0` (n_users + n_items rows) over the model's adjacency.
inline Propagated propagate(const BackboneModel& m, const ad::Tensor& layer0) {
  return {propagate_layers(m.adjacency, layer0, m.n_layers), m.n_users()};
}

inline Propagated propagate(const BackboneModel& m) {
  return propagate(m, ad::concat_rows({m.user_embeddings, m.item_embeddings}));
}

inline double score(const Propagated& p, std::size_t u, std::size_t i) {
  if (u >= p.n_users || p.item_row(i) >= p.nodes.rows())
    throw std::out_of_range("score: index out of range (user " + std::to_string(u) + ", item " + std::to_string(i) + ")");
  return dot(p.nodes.value().row(u), p.nodes.value().row(p.item_row(i)));
}

struct Triplet {
  std::size_t user;
  std::size_t pos;
  std::size_t neg;
};
using TripletBatch = std::vector<Triplet>;

/// Column of r_hat(u, i) for the given (user, item) pairs; differentiable.
inline ad::Tensor pair_scores(const Propagated& p, std::span<const std::size_t> users,
                              std::span<const std::size_t> items) {
  std::vector<std::size_t> rows(items.size());
  for (std::size_t k = 0; k < items.size(); ++k) rows[k] = p.item_row(items[k]);
  return ad::row_sum(ad::hadamard(ad::gather_rows(p.nodes, users), ad::gather_rows(p.nodes, rows)));
}

struct TripletScores {
  ad::Tensor pos;
  ad::Tensor neg;
};

inline TripletScores triplet_scores(const Propagated& p, const TripletBatch& batch) {
  std::vector<std::size_t> u, ip, in;
  for (const auto& t : batch) {
    u.push_back(t.user);
    ip.push_back(t.pos);
    in.push_back(t.neg);
  }
  return {pair_scores(p, u, ip), pair_scores(p, u, in)};
}

/// Per-triplet -log sigma(pos - neg) as softplus(neg - pos).
inline ad::Tensor bpr_terms(const ad::Tensor& pos, const ad::Tensor& neg) {
  if (pos.rows() != neg.rows() || pos.cols() != neg.cols())
    throw std::invalid_argument("bpr_loss: score vectors differ in length");
  return ad::softplus(ad::sub(neg, pos));
}

/// Sum over triplets of -log sigma(r_hat+ - r_hat-).
inline ad::Tensor bpr_loss(const ad::Tensor& pos, const ad::Tensor& neg) { return ad::sum(bpr_terms(pos, neg)); }

/// Users are drawn uniformly among those with training positives, the positive
/// uniformly from the user's items, the negative by rejection from the rest.
inline TripletBatch sample_triplets(const InteractionGraph& train, std::size_t batch_size, Rng& rng) {
  std::vector<std::size_t> users;
  for (std::size_t u = 0; u < train.n_users(); ++u)
    if (train.user_degree(u) > 0) users.push_back(u);
  if (users.empty()) throw std::invalid_argument("sample_triplets: training graph has no edges");
  TripletBatch batch;
  batch.reserve(batch_size);
  for (std::size_t b = 0; b < batch_size; ++b) {
    const std::size_t u = users[uniform_index(rng, users.size())];
    const auto es = train.user_edges(u);
    if (es.size() >= train.n_items())
      throw std::invalid_argument("sample_triplets: user " + std::to_string(u) + " has interacted with every item");
    const std::size_t pos = es[uniform_index(rng, es.size())].item;
    std::size_t neg;
    do {
      neg = uniform_index(rng, train.n_items());
    } while (train.has_edge(u, neg));
    batch.push_back({u, pos, neg});
  }
  return batch;
}

}  // namespace drgo
