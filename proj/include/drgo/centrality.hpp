#pragma once

#include <cstddef>
#include <vector>

#include "drgo/graph.hpp"
#include "drgo/sparse.hpp"

namespace drgo {

/// Exact betweenness centrality (Brandes accumulation) of an undirected,
/// unweighted graph given by its symmetric adjacency:
///   c_v = sum over unordered pairs {s, t}, s != t != v, of sigma(s,t|v) / sigma(s,t).
/// Pairs in different components contribute nothing.
inline std::vector<double> betweenness_centrality(const CsrMatrix& adj) {
  const std::size_t n = adj.rows();
  std::vector<double> score(n, 0.0);
  std::vector<std::size_t> order;
  std::vector<std::ptrdiff_t> dist(n);
  std::vector<double> sigma(n), delta(n);
  std::vector<std::size_t> queue(n);
  order.reserve(n);

  for (std::size_t s = 0; s < n; ++s) {
    std::fill(dist.begin(), dist.end(), -1);
    std::fill(sigma.begin(), sigma.end(), 0.0);
    std::fill(delta.begin(), delta.end(), 0.0);
    order.clear();

    dist[s] = 0;
    sigma[s] = 1.0;
    std::size_t head = 0, tail = 0;
    queue[tail++] = s;
    while (head < tail) {
      const std::size_t v = queue[head++];
      order.push_back(v);
      for (std::size_t w : adj.row_cols(v)) {
        if (dist[w] < 0) {
          dist[w] = dist[v] + 1;
          queue[tail++] = w;
        }
        if (dist[w] == dist[v] + 1) sigma[w] += sigma[v];
      }
    }
    // Predecessors of w are the neighbours one level closer to s.
    for (std::size_t k = order.size(); k-- > 1;) {
      const std::size_t w = order[k];
      const double coeff = (1.0 + delta[w]) / sigma[w];
      for (std::size_t v : adj.row_cols(w))
        if (dist[v] == dist[w] - 1) delta[v] += sigma[v] * coeff;
      score[w] += delta[w];
    }
  }
  // Every unordered pair was visited from both endpoints.
  for (double& c : score) c *= 0.5;
  return score;
}

/// Centrality over the joint user+item node set of the interaction graph.
inline std::vector<double> betweenness_centrality(const InteractionGraph& g) {
  return betweenness_centrality(g.adjacency());
}

}  // namespace drgo
