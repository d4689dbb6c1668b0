#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "drgo/autodiff.hpp"
#include "drgo/centrality.hpp"
#include "drgo/checkpoint.hpp"
#include "drgo/config.hpp"
#include "drgo/diffusion.hpp"
#include "drgo/dro.hpp"
#include "drgo/error.hpp"
#include "drgo/lightgcn.hpp"
#include "drgo/metrics.hpp"
#include "drgo/optim.hpp"
#include "drgo/splits.hpp"
#include "drgo/vgae.hpp"

namespace drgo {

/// Sum_i w_i L_i - beta sum_i w_i log w_i + (L_vgae + L_sample). The weights
/// are constants: no gradient reaches them.
inline ad::Tensor total_loss(std::span<const ad::Tensor> group_losses, std::span<const double> w, double beta,
                             const ad::Tensor& vgae_loss, const ad::Tensor& sample_loss) {
  if (group_losses.size() != w.size()) throw std::invalid_argument("total_loss: one weight per group loss");
  ad::Tensor acc = ad::Tensor::scalar(0.0);
  double entropy = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    acc = ad::add(acc, ad::scale(group_losses[i], w[i]));
    if (w[i] > 0.0) entropy -= w[i] * std::log(w[i]);
  }
  acc = ad::add(acc, ad::Tensor::scalar(beta * entropy));
  return ad::add(acc, ad::add(vgae_loss, sample_loss));
}

/// Symmetrically normalised adjacency with self loops, D^-1/2 (A + I) D^-1/2.
inline CsrMatrix gcn_adjacency(const InteractionGraph& g) {
  const auto& a = g.adjacency();
  std::vector<CsrMatrix::Entry> e;
  e.reserve(a.nnz() + a.rows());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    e.push_back({r, r, 1.0});
    for (std::size_t c : a.row_cols(r)) e.push_back({r, c, 1.0});
  }
  return normalized_adjacency(CsrMatrix::from_entries(a.rows(), a.cols(), std::move(e)));
}

/// Row-wise unit-norm copy; zero rows stay zero.
inline Matrix normalize_rows(const Matrix& m) {
  Matrix out = m;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    const double n = std::sqrt(dot(row, row));
    if (n > 0.0)
      for (double& v : row) v /= n;
  }
  return out;
}

/// All trainable state: backbone tables plus, when denoising is on, the
/// variational encoder and the noise predictor.
struct ModelState {
  BackboneModel backbone;
  bool denoising = false;
  EncoderParams encoder;
  DenoiserParams denoiser;
  std::shared_ptr<const CsrMatrix> gcn_adj;
  DiffusionSchedule schedule;

  std::vector<ad::Tensor> trainable() const {
    std::vector<ad::Tensor> p{backbone.user_embeddings, backbone.item_embeddings};
    if (denoising) {
      for (const auto& t : encoder.trainable()) p.push_back(t);
      for (const auto& t : denoiser.trainable()) p.push_back(t);
    }
    return p;
  }

  static ModelState init(const InteractionGraph& g, const TrainConfig& c, bool denoising) {
    Rng rng = make_rng(c.seed, "init");
    ModelState s;
    s.backbone = BackboneModel::init(g, c.embed_dim, c.n_layers, rng);
    s.denoising = denoising;
    if (denoising) {
      s.gcn_adj = std::make_shared<CsrMatrix>(gcn_adjacency(g));
      s.encoder = EncoderParams::init(g.n_nodes(), c.embed_dim, 2 * c.embed_dim, c.embed_dim, rng, g.features());
      s.denoiser = DenoiserParams::init(c.embed_dim, rng);
      s.schedule = make_schedule(c.diffusion_steps, c.beta_start, c.beta_end);
    }
    return s;
  }
};

/// Corrupt-and-reverse pass: VGAE sample E0, forward noise to t_start, then
/// the learned reverse chain back to step 0. Runs outside any tape.
inline Matrix denoised_latents(const ModelState& s, int t_start, Rng& rng) {
  const auto enc = encode(s.gcn_adj, s.encoder);
  Matrix e0 = enc.mu.value();
  for (std::size_t k = 0; k < e0.size(); ++k) e0.data()[k] += enc.sigma.value().data()[k] * standard_normal(rng);
  Matrix eps(e0.rows(), e0.cols());
  for (double& v : eps.data()) v = standard_normal(rng);
  return reverse_denoise(q_sample(e0, t_start, eps, s.schedule), t_start, s.schedule, s.denoiser, rng);
}

/// Denoised latents as they enter the backbone's layer 0: unit rows scaled to
/// the expected norm of the initial embeddings, so that neither part swamps the other.
inline Matrix backbone_input(const Matrix& denoised, std::size_t dim, double init_std = 0.1) {
  Matrix m = normalize_rows(denoised);
  const double s = init_std * std::sqrt(static_cast<double>(dim));
  for (double& v : m.data()) v *= s;
  return m;
}

inline Propagated propagate_with(const ModelState& s, const Matrix* denoised) {
  auto layer0 = ad::concat_rows({s.backbone.user_embeddings, s.backbone.item_embeddings});
  if (denoised) layer0 = ad::add(layer0, ad::Tensor(*denoised));
  return propagate(s.backbone, layer0);
}

struct BatchTerms {
  ad::Tensor total;
  ad::Tensor rec;     // sum_i w_i L_i
  ad::Tensor vgae;
  ad::Tensor sample;
  double entropy_term = 0.0;  // -beta sum w log w
  GroupLosses groups;
  std::vector<double> weights;
};

/// Chooses group weights from this batch's group losses.
using WeightRule = std::function<std::vector<double>(const GroupLosses&)>;

/// One batch of the joint objective. `user_group` maps users to [0, K).
inline BatchTerms batch_objective(const ModelState& s, const Matrix* denoised, const TripletBatch& batch,
                                  std::span<const std::size_t> user_group, std::size_t k, double beta,
                                  const WeightRule& rule, Rng& rng) {
  const auto prop = propagate_with(s, denoised);
  const auto sc = triplet_scores(prop, batch);
  const auto terms = bpr_terms(sc.pos, sc.neg);

  std::vector<std::size_t> users(batch.size());
  for (std::size_t t = 0; t < batch.size(); ++t) users[t] = batch[t].user;
  BatchTerms out;
  out.groups = group_losses(terms.value().data(), users, user_group, k);
  out.weights = rule(out.groups);

  std::vector<ad::Tensor> lg;
  for (std::size_t g = 0; g < k; ++g) {
    if (!out.groups.present[g]) {
      lg.push_back(ad::Tensor::scalar(0.0));
      continue;
    }
    Matrix mask(batch.size(), 1);
    for (std::size_t t = 0; t < batch.size(); ++t)
      if (user_group[users[t]] == g) mask(t, 0) = 1.0 / static_cast<double>(out.groups.count[g]);
    lg.push_back(ad::sum(ad::hadamard(ad::Tensor(std::move(mask)), terms)));
  }

  if (s.denoising) {
    const auto enc = encode(s.gcn_adj, s.encoder);
    const auto rep = reparameterize(enc.mu, enc.sigma, rng);
    std::vector<std::pair<std::size_t, std::size_t>> pos, neg;
    const std::size_t nu = s.backbone.n_users();
    for (const auto& t : batch) {
      pos.emplace_back(t.user, nu + t.pos);
      neg.emplace_back(t.user, nu + t.neg);
    }
    const auto rb = sampled_reconstruction(pos, neg);
    out.vgae = vgae_loss(decode_logits(rep.e0, rb), rb, enc.mu, enc.logvar);
    out.sample = sample_loss(rep.e0.detach(), s.schedule, s.denoiser, rng);
  } else {
    out.vgae = ad::Tensor::scalar(0.0);
    out.sample = ad::Tensor::scalar(0.0);
  }
  out.total = total_loss(lg, out.weights, beta, out.vgae, out.sample);
  ad::Tensor rec = ad::Tensor::scalar(0.0);
  for (std::size_t g = 0; g < k; ++g) rec = ad::add(rec, ad::scale(lg[g], out.weights[g]));
  out.rec = rec.detach();
  out.entropy_term = beta * GroupWeights{out.weights}.entropy();
  return out;
}

struct EpochRecord {
  int epoch = 0;
  double total_loss = 0.0;
  double rec_loss = 0.0;
  double entropy_term = 0.0;
  double vgae_loss = 0.0;
  double sample_loss = 0.0;
  double sinkhorn = 0.0;
  double valid_recall = 0.0;
  std::size_t projected_batches = 0;
  std::size_t infeasible_batches = 0;
  std::vector<double> weights;       // epoch mean of the per-batch weights
  std::vector<double> group_losses;  // epoch mean over batches where the group appeared
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  double best_valid = -1.0;
  bool early_stopped = false;
  std::vector<std::string> warnings;
};

struct TrainedModel {
  Matrix user_final;  // propagated embeddings used for scoring
  Matrix item_final;
  NamedArrays arrays;  // raw parameters
};

struct TrainResult {
  TrainedModel model;
  TrainHistory history;
};

struct TrainOptions {
  /// Known user groups (e.g. synthetic ground truth) used instead of k-means.
  std::optional<std::vector<std::size_t>> fixed_groups;
  std::size_t fixed_group_count = 0;
  /// Called after each epoch; handy for progress output.
  std::function<void(const EpochRecord&)> on_epoch;
};

namespace detail {

inline TrainedModel snapshot(const ModelState& s, const Matrix* denoised) {
  TrainedModel m;
  const auto prop = propagate_with(s, denoised);
  const std::size_t nu = s.backbone.n_users();
  const std::size_t ni = s.backbone.n_items();
  m.user_final = Matrix(nu, prop.nodes.cols());
  m.item_final = Matrix(ni, prop.nodes.cols());
  for (std::size_t u = 0; u < nu; ++u)
    std::copy(prop.nodes.value().row(u).begin(), prop.nodes.value().row(u).end(), m.user_final.row(u).begin());
  for (std::size_t i = 0; i < ni; ++i)
    std::copy(prop.nodes.value().row(nu + i).begin(), prop.nodes.value().row(nu + i).end(), m.item_final.row(i).begin());
  m.arrays["backbone.user"] = s.backbone.user_embeddings.value();
  m.arrays["backbone.item"] = s.backbone.item_embeddings.value();
  m.arrays["final.user"] = m.user_final;
  m.arrays["final.item"] = m.item_final;
  if (s.denoising) {
    m.arrays["vgae.features"] = s.encoder.features.value();
    m.arrays["vgae.w_shared"] = s.encoder.w_shared.value();
    m.arrays["vgae.w_mu"] = s.encoder.w_mu.value();
    m.arrays["vgae.w_logvar"] = s.encoder.w_logvar.value();
    m.arrays["denoiser.w_in"] = s.denoiser.w_in.value();
    m.arrays["denoiser.w_time"] = s.denoiser.w_time.value();
    m.arrays["denoiser.b_hidden"] = s.denoiser.b_hidden.value();
    m.arrays["denoiser.w_out"] = s.denoiser.w_out.value();
    m.arrays["denoiser.b_out"] = s.denoiser.b_out.value();
    if (denoised) m.arrays["denoised_latents"] = *denoised;
  }
  return m;
}

inline Matrix user_rows(const Matrix& m, std::size_t n_users) {
  Matrix out(n_users, m.cols());
  std::copy(m.data().begin(), m.data().begin() + static_cast<std::ptrdiff_t>(n_users * m.cols()), out.data().begin());
  return out;
}

}  // namespace detail

/// Joint training loop. Per epoch: refresh the denoised latents, the nominal
/// embeddings and the user groups; then per batch choose group weights from
/// the batch's group losses, step AdamW on the total loss; finally evaluate
/// validation Recall@eval_k and keep the best snapshot.
inline TrainResult train(const TrainConfig& cfg, const SplitBundle& split, const TrainOptions& opt = {}) {
  const InteractionGraph& g = split.train;
  if (g.n_edges() == 0) throw DataError("train: training graph has no edges");
  TrainResult res;
  res.history.warnings = validate_config(cfg);

  const bool denoising = cfg.method == Method::drgo;
  ModelState state = ModelState::init(g, cfg, denoising);
  ad::AdamW optim(state.trainable(), {cfg.lr, cfg.weight_decay});
  Rng sampling = make_rng(cfg.seed, "sampling");
  Rng diffusion_rng = make_rng(cfg.seed, "diffusion");

  const std::size_t nu = g.n_users();
  const bool fixed = opt.fixed_groups.has_value();
  std::size_t k = cfg.method == Method::erm ? 1 : (fixed ? opt.fixed_group_count : cfg.n_clusters);
  if (fixed && opt.fixed_groups->size() != nu) throw std::invalid_argument("train: fixed groups must cover every user");
  if (!fixed && k > nu) throw UsageError("n_clusters exceeds the number of users");
  std::vector<std::size_t> group_size(k, 0);
  std::vector<std::size_t> user_group(nu, 0);
  if (fixed && cfg.method != Method::erm) {
    user_group = *opt.fixed_groups;
    for (std::size_t gi : user_group) {
      if (gi >= k) throw std::invalid_argument("train: fixed group index out of range");
      ++group_size[gi];
    }
  }

  std::vector<std::size_t> central;
  if (denoising) {
    const auto bc = betweenness_centrality(g.adjacency());
    central = top_central_nodes(bc, cfg.top_pct);
  }
  const SinkhornOptions sk{cfg.sinkhorn_lambda, 100000, 1e-4};
  const std::size_t batches = (g.n_edges() + cfg.batch_size - 1) / cfg.batch_size;

  std::optional<TrainedModel> best;
  int since_best = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::optional<Matrix> denoised;
    NominalDistribution nominal;
    Matrix centroids;
    if (denoising) {
      const Matrix raw = denoised_latents(state, cfg.t_start, diffusion_rng);
      const Matrix geo = cfg.normalize_latents ? normalize_rows(raw) : raw;
      denoised = backbone_input(raw, cfg.embed_dim);
      nominal = nominal_from_nodes(central, geo);
      const Matrix users = detail::user_rows(geo, nu);
      if (fixed) {
        centroids = group_centroids(users, user_group, k);
      } else if (k > 1) {
        auto us = kmeans(users, k, cfg.kmeans_iter, derive_seed(cfg.seed, "kmeans" + std::to_string(epoch)));
        user_group = us.assignment;
        centroids = us.centroids;
      } else {
        centroids = group_centroids(users, user_group, 1);
      }
    } else if (cfg.method == Method::kl_dro && !fixed && k > 1) {
      const auto prop = propagate_with(state, nullptr);
      auto us = kmeans(detail::user_rows(prop.nodes.value(), nu), k, cfg.kmeans_iter,
                       derive_seed(cfg.seed, "kmeans" + std::to_string(epoch)));
      user_group = us.assignment;
    }
    if (!fixed) {
      group_size.assign(k, 0);
      for (std::size_t gi : user_group) ++group_size[gi];
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.weights.assign(k, 0.0);
    rec.group_losses.assign(k, 0.0);
    std::vector<std::size_t> seen(k, 0);

    // Structurally empty groups get weight 0 and take no part in the weighting.
    std::vector<std::size_t> live;
    for (std::size_t gi = 0; gi < k; ++gi)
      if (group_size[gi] > 0) live.push_back(gi);
    Matrix live_centroids;
    if (denoising) {
      live_centroids = Matrix(live.size(), centroids.cols());
      for (std::size_t j = 0; j < live.size(); ++j)
        std::copy(centroids.row(live[j]).begin(), centroids.row(live[j]).end(), live_centroids.row(j).begin());
    }
    double sinkhorn_sum = 0.0;
    const WeightRule rule = [&](const GroupLosses& gl) {
      std::vector<double> w(k, 0.0);
      if (live.size() == 1) {
        w[live[0]] = 1.0;
        return w;
      }
      std::vector<double> l(live.size());
      for (std::size_t j = 0; j < live.size(); ++j) l[j] = gl.loss[live[j]];
      std::vector<double> lw;
      if (cfg.method == Method::drgo) {
        const auto r = worst_case_weights(l, cfg.entropy_beta, cfg.rho, nominal, live_centroids, sk, 30,
                                          cfg.rho_relative ? RadiusMode::excess_over_uniform : RadiusMode::absolute);
        lw = r.weights.w;
        sinkhorn_sum += r.sinkhorn;
        rec.projected_batches += r.projected;
        rec.infeasible_batches += r.infeasible;
      } else if (cfg.method == Method::kl_dro) {
        lw = kl_dro_weights(l, cfg.kl_radius).w;
      } else {
        lw.assign(live.size(), 1.0 / static_cast<double>(live.size()));
      }
      for (std::size_t j = 0; j < live.size(); ++j) w[live[j]] = lw[j];
      return w;
    };

    for (std::size_t b = 0; b < batches; ++b) {
      const auto batch = sample_triplets(g, cfg.batch_size, sampling);
      BatchTerms bt;
      {
        ad::Tape tape;
        try {
          bt = batch_objective(state, denoised ? &*denoised : nullptr, batch, user_group, k, cfg.entropy_beta, rule,
                               diffusion_rng);
        } catch (const ConvergenceError& e) {
          throw DivergenceError(std::string(e.what()) + " at epoch " + std::to_string(epoch) + ", batch " +
                                    std::to_string(b),
                                epoch, static_cast<int>(b));
        }
        if (!std::isfinite(bt.total.item()))
          throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(b),
                                epoch, static_cast<int>(b));
        tape.backward(bt.total);
      }
      optim.step();
      rec.total_loss += bt.total.item();
      rec.rec_loss += bt.rec.item();
      rec.entropy_term += bt.entropy_term;
      rec.vgae_loss += bt.vgae.item();
      rec.sample_loss += bt.sample.item();
      for (std::size_t gi = 0; gi < k; ++gi) {
        rec.weights[gi] += bt.weights[gi];
        if (bt.groups.present[gi]) {
          rec.group_losses[gi] += bt.groups.loss[gi];
          ++seen[gi];
        }
      }
    }
    const double nb = static_cast<double>(batches);
    rec.total_loss /= nb;
    rec.rec_loss /= nb;
    rec.entropy_term /= nb;
    rec.vgae_loss /= nb;
    rec.sample_loss /= nb;
    rec.sinkhorn = sinkhorn_sum / nb;
    for (std::size_t gi = 0; gi < k; ++gi) {
      rec.weights[gi] /= nb;
      if (seen[gi]) rec.group_losses[gi] /= static_cast<double>(seen[gi]);
    }

    auto snap = detail::snapshot(state, denoised ? &*denoised : nullptr);
    if (!split.valid.empty()) {
      rec.valid_recall =
          evaluate(snap.user_final, snap.item_final, g, split.valid, {cfg.eval_k}).recall.at(cfg.eval_k);
    }
    res.history.epochs.push_back(rec);
    if (opt.on_epoch) opt.on_epoch(rec);

    if (split.valid.empty() || rec.valid_recall > res.history.best_valid) {
      res.history.best_valid = rec.valid_recall;
      res.history.best_epoch = epoch;
      best = std::move(snap);
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      res.history.early_stopped = true;
      break;
    }
  }
  res.model = std::move(*best);
  return res;
}

// ---- artifacts ------------------------------------------------------------------

inline std::string fmt17(double v) { return detail::format_double(v); }

inline void write_history_csv(const std::filesystem::path& path, const TrainHistory& h) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << "epoch,total_loss,rec_loss,entropy_term,vgae_loss,sample_loss,sinkhorn,valid_recall,projected_batches,"
         "infeasible_batches\n";
  for (const auto& r : h.epochs)
    out << r.epoch << ',' << fmt17(r.total_loss) << ',' << fmt17(r.rec_loss) << ',' << fmt17(r.entropy_term) << ','
        << fmt17(r.vgae_loss) << ',' << fmt17(r.sample_loss) << ',' << fmt17(r.sinkhorn) << ','
        << fmt17(r.valid_recall) << ',' << r.projected_batches << ',' << r.infeasible_batches << '\n';
}

/// epoch, cluster_id, weight, group_loss
inline void write_weights_csv(const std::filesystem::path& path, const TrainHistory& h) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << "epoch,cluster_id,weight,group_loss\n";
  for (const auto& r : h.epochs)
    for (std::size_t c = 0; c < r.weights.size(); ++c)
      out << r.epoch << ',' << c << ',' << fmt17(r.weights[c]) << ',' << fmt17(r.group_losses[c]) << '\n';
}

inline void save_model(const std::filesystem::path& path, const TrainedModel& m, const TrainConfig& cfg,
                       int best_epoch) {
  save_checkpoint(path, m.arrays, {{"config", config_json(cfg)}, {"best_epoch", best_epoch}});
}

inline TrainedModel load_model(const std::filesystem::path& path) {
  auto ck = load_checkpoint(path);
  TrainedModel m;
  auto it_u = ck.arrays.find("final.user");
  auto it_i = ck.arrays.find("final.item");
  if (it_u == ck.arrays.end() || it_i == ck.arrays.end())
    throw DataError("checkpoint '" + path.string() + "' lacks final embeddings");
  m.user_final = it_u->second;
  m.item_final = it_i->second;
  m.arrays = std::move(ck.arrays);
  return m;
}

}  // namespace drgo
