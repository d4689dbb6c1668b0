#pragma once

#include <cmath>
#include <memory>
#include <optional>
#include <stdexcept>
#include <vector>

#include "drgo/autodiff.hpp"
#include "drgo/graph.hpp"
#include "drgo/rng.hpp"
#include "drgo/sparse.hpp"

namespace drgo {

/// Two-headed graph convolutional encoder with a shared first layer.
/// When the graph carries no node features, `features` is a trainable
/// free embedding table standing in for X.
struct EncoderParams {
  ad::Tensor features;  // N x f
  ad::Tensor w_shared;  // f x h
  ad::Tensor w_mu;      // h x d
  ad::Tensor w_logvar;  // h x d

  std::vector<ad::Tensor> trainable() const {
    std::vector<ad::Tensor> out;
    if (features.requires_grad()) out.push_back(features);
    out.insert(out.end(), {w_shared, w_mu, w_logvar});
    return out;
  }

  /// Glorot-uniform weights. `given_features` fixes X; otherwise X ~ N(0, 1) and is trained.
  static EncoderParams init(std::size_t n_nodes, std::size_t feature_dim, std::size_t hidden_dim,
                            std::size_t latent_dim, Rng& rng, std::optional<Matrix> given_features = std::nullopt) {
    auto glorot = [&rng](std::size_t fan_in, std::size_t fan_out) {
      const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
      Matrix w(fan_in, fan_out);
      for (double& x : w.data()) x = a * (2.0 * uniform01(rng) - 1.0);
      return ad::Tensor(std::move(w), true);
    };
    EncoderParams p;
    if (given_features) {
      if (given_features->rows() != n_nodes) throw std::invalid_argument("EncoderParams: feature rows != nodes");
      feature_dim = given_features->cols();
      p.features = ad::Tensor(std::move(*given_features), false);
    } else {
      Matrix x(n_nodes, feature_dim);
      for (double& v : x.data()) v = standard_normal(rng);
      p.features = ad::Tensor(std::move(x), true);
    }
    p.w_shared = glorot(feature_dim, hidden_dim);
    p.w_mu = glorot(hidden_dim, latent_dim);
    p.w_logvar = glorot(hidden_dim, latent_dim);
    return p;
  }
};

struct Encoded {
  ad::Tensor mu;
  ad::Tensor logvar;
  ad::Tensor sigma;  // exp(logvar / 2)
};

/// H = A X W1;  mu = A H W_mu;  logvar = A H W_logvar. No nonlinearity between layers.
inline Encoded encode(std::shared_ptr<const CsrMatrix> adj, const ad::Tensor& x, const EncoderParams& p) {
  if (x.cols() != p.w_shared.rows() || x.rows() != adj->cols())
    throw std::invalid_argument("encode: feature matrix shape does not match adjacency / weights");
  const auto h = ad::spmm(adj, ad::matmul(x, p.w_shared));
  Encoded e;
  e.mu = ad::spmm(adj, ad::matmul(h, p.w_mu));
  e.logvar = ad::spmm(adj, ad::matmul(h, p.w_logvar));
  e.sigma = ad::exp(ad::scale(e.logvar, 0.5));
  return e;
}

inline Encoded encode(std::shared_ptr<const CsrMatrix> adj, const EncoderParams& p) {
  return encode(std::move(adj), p.features, p);
}

struct Reparameterized {
  ad::Tensor e0;
  Matrix noise;
};

/// e0 = mu + sigma * eps, eps ~ N(0, I). Gradients reach mu and sigma only.
inline Reparameterized reparameterize(const ad::Tensor& mu, const ad::Tensor& sigma, Rng& rng) {
  if (mu.rows() != sigma.rows() || mu.cols() != sigma.cols())
    throw std::invalid_argument("reparameterize: mu and sigma shapes differ");
  Matrix eps(mu.rows(), mu.cols());
  for (double& v : eps.data()) v = standard_normal(rng);
  auto e0 = ad::add(mu, ad::hadamard(sigma, ad::Tensor(eps)));
  return {e0, std::move(eps)};
}

/// Dense sigma(E E^T). Symmetric with entries in (0, 1).
inline Matrix decode(const Matrix& e) {
  Matrix out(e.rows(), e.rows());
  for (std::size_t a = 0; a < e.rows(); ++a)
    for (std::size_t b = a; b < e.rows(); ++b) {
      const double p = ad::detail::stable_sigmoid(dot(e.row(a), e.row(b)));
      out(a, b) = p;
      out(b, a) = p;
    }
  return out;
}

/// Entries of the adjacency to reconstruct, with per-entry loss weights.
struct ReconstructionBatch {
  std::vector<std::size_t> a;
  std::vector<std::size_t> b;
  std::vector<double> target;
  std::vector<double> weight;
};

/// All N^2 entries. Positives are up-weighted by #non-edges / #edges and the
/// whole sum is normalised so that each class contributes half the loss.
inline ReconstructionBatch dense_reconstruction(const CsrMatrix& adj) {
  const std::size_t n = adj.rows();
  const double pos = static_cast<double>(adj.nnz());
  const double neg = static_cast<double>(n * n) - pos;
  if (pos == 0.0 || neg == 0.0) throw std::invalid_argument("dense_reconstruction: degenerate adjacency");
  ReconstructionBatch r;
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < n; ++b) {
      const bool edge = adj.at(a, b) != 0.0;
      r.a.push_back(a);
      r.b.push_back(b);
      r.target.push_back(edge ? 1.0 : 0.0);
      r.weight.push_back(edge ? 0.5 / pos : 0.5 / neg);
    }
  return r;
}

/// Sampled estimate of the same objective: positives and negatives each
/// contribute half, averaged over their samples.
inline ReconstructionBatch sampled_reconstruction(const std::vector<std::pair<std::size_t, std::size_t>>& positives,
                                                  const std::vector<std::pair<std::size_t, std::size_t>>& negatives) {
  if (positives.empty() || negatives.empty())
    throw std::invalid_argument("sampled_reconstruction: need at least one positive and one negative");
  ReconstructionBatch r;
  for (const auto& [a, b] : positives) {
    r.a.push_back(a);
    r.b.push_back(b);
    r.target.push_back(1.0);
    r.weight.push_back(0.5 / static_cast<double>(positives.size()));
  }
  for (const auto& [a, b] : negatives) {
    r.a.push_back(a);
    r.b.push_back(b);
    r.target.push_back(0.0);
    r.weight.push_back(0.5 / static_cast<double>(negatives.size()));
  }
  return r;
}

/// Inner-product decoder logits e_a . e_b for the batch entries (column vector).
inline ad::Tensor decode_logits(const ad::Tensor& e, const ReconstructionBatch& batch) {
  return ad::row_sum(ad::hadamard(ad::gather_rows(e, batch.a), ad::gather_rows(e, batch.b)));
}

/// Weighted binary cross-entropy from logits: y softplus(-s) + (1 - y) softplus(s).
inline ad::Tensor reconstruction_bce(const ad::Tensor& logits, const ReconstructionBatch& batch) {
  const std::size_t n = batch.target.size();
  if (logits.rows() != n || logits.cols() != 1) throw std::invalid_argument("reconstruction_bce: shape mismatch");
  Matrix wy(n, 1), wny(n, 1);
  for (std::size_t k = 0; k < n; ++k) {
    wy(k, 0) = batch.weight[k] * batch.target[k];
    wny(k, 0) = batch.weight[k] * (1.0 - batch.target[k]);
  }
  const auto pos = ad::hadamard(ad::Tensor(std::move(wy)), ad::softplus(ad::scale(logits, -1.0)));
  const auto neg = ad::hadamard(ad::Tensor(std::move(wny)), ad::softplus(logits));
  return ad::sum(ad::add(pos, neg));
}

/// KL(N(mu, sigma^2) || N(0, I)) = 1/2 sum(mu^2 + sigma^2 - 1 - log sigma^2).
inline ad::Tensor kl_to_standard_normal(const ad::Tensor& mu, const ad::Tensor& logvar) {
  const auto terms = ad::sub(ad::add(ad::square(mu), ad::exp(logvar)), logvar);
  return ad::scale(ad::sub(ad::sum(terms), ad::Tensor::scalar(static_cast<double>(mu.size()))), 0.5);
}

/// Negative evidence lower bound: reconstruction BCE plus KL / N^2.
inline ad::Tensor vgae_loss(const ad::Tensor& logits, const ReconstructionBatch& batch, const ad::Tensor& mu,
                            const ad::Tensor& logvar) {
  const double n = static_cast<double>(mu.rows());
  return ad::add(reconstruction_bce(logits, batch), ad::scale(kl_to_standard_normal(mu, logvar), 1.0 / (n * n)));
}

}  // namespace drgo
