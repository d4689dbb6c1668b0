#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "drgo/dro.hpp"
#include "drgo/metrics.hpp"
#include "drgo/splits.hpp"
#include "drgo/synthetic.hpp"
#include "drgo/trainer.hpp"
#include "json.hpp"

namespace drgo {

// ---- noise robustness ---------------------------------------------------------

struct SweepRow {
  Method method;
  double ratio = 0.0;
  double recall = 0.0;  // Recall@eval_k on the OOD test set
  double ndcg = 0.0;
  double recall_iid = 0.0;
  double ndcg_iid = 0.0;
  double relative_decline = 0.0;  // (recall at ratio 0 - recall) / recall at ratio 0
  int best_epoch = 0;
};

struct SweepReport {
  std::vector<SweepRow> rows;
  std::size_t k = 20;

  const SweepRow& at(Method m, double ratio) const {
    for (const auto& r : rows)
      if (r.method == m && std::abs(r.ratio - ratio) < 1e-12) return r;
    throw std::out_of_range("sweep report has no row for this method and ratio");
  }

  nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& r : rows)
      j.push_back({{"method", to_string(r.method)},
                   {"ratio", r.ratio},
                   {"recall@" + std::to_string(k), r.recall},
                   {"ndcg@" + std::to_string(k), r.ndcg},
                   {"recall_iid@" + std::to_string(k), r.recall_iid},
                   {"ndcg_iid@" + std::to_string(k), r.ndcg_iid},
                   {"relative_decline", r.relative_decline},
                   {"best_epoch", r.best_epoch}});
    return j;
  }

  /// One row per method x ratio x metric x K.
  std::string to_csv() const {
    std::string s = "method,ratio,metric,k,value\n";
    for (const auto& r : rows) {
      const std::string head = std::string(to_string(r.method)) + "," + fmt17(r.ratio) + ",";
      const std::string ks = std::to_string(k);
      s += head + "recall," + ks + "," + fmt17(r.recall) + "\n";
      s += head + "ndcg," + ks + "," + fmt17(r.ndcg) + "\n";
      s += head + "recall_iid," + ks + "," + fmt17(r.recall_iid) + "\n";
      s += head + "ndcg_iid," + ks + "," + fmt17(r.ndcg_iid) + "\n";
      s += head + "relative_decline," + ks + "," + fmt17(r.relative_decline) + "\n";
    }
    return s;
  }
};

/// For each method: train on the clean split and on copies whose training
/// graph had `ratio` of its edges replaced by random non-edges, evaluating
/// every run on the same held-out sets. The clean run is always trained as the
/// reference for the relative decline but only reported when 0 is requested.
inline SweepReport noise_robustness_sweep(const TrainConfig& base, const SplitBundle& split, std::vector<double> ratios,
                                          const std::vector<Method>& methods,
                                          const std::function<void(const SweepRow&)>& progress = {}) {
  for (double r : ratios)
    if (!(r >= 0.0 && r < 1.0)) throw UsageError("noise ratios must lie in [0, 1)");
  const bool report_clean = std::find(ratios.begin(), ratios.end(), 0.0) != ratios.end();
  if (!report_clean) ratios.insert(ratios.begin(), 0.0);
  std::sort(ratios.begin(), ratios.end());
  ratios.erase(std::unique(ratios.begin(), ratios.end()), ratios.end());
  SweepReport rep;
  rep.k = base.eval_k;
  for (Method m : methods) {
    double clean = 0.0;
    for (double ratio : ratios) {
      TrainConfig c = base;
      c.method = m;
      SplitBundle s = split;
      s.train = inject_noise(split.train, ratio, derive_seed(base.seed, "noise-" + fmt17(ratio)));
      const auto res = train(c, s);
      const auto ood = evaluate(res.model.user_final, res.model.item_final, s.train, split.test_ood, {c.eval_k});
      const auto iid = evaluate(res.model.user_final, res.model.item_final, s.train, split.test_iid, {c.eval_k});
      SweepRow row{m, ratio, ood.recall.at(c.eval_k), ood.ndcg.at(c.eval_k), iid.recall.at(c.eval_k),
                   iid.ndcg.at(c.eval_k), 0.0, res.history.best_epoch};
      if (ratio == 0.0) clean = row.recall;
      row.relative_decline = clean > 0.0 ? (clean - row.recall) / clean : 0.0;
      if (ratio == 0.0 && !report_clean) continue;
      rep.rows.push_back(row);
      if (progress) progress(row);
    }
  }
  return rep;
}

// ---- group weight trajectories --------------------------------------------------

struct WeightTrajectory {
  Method method;
  std::vector<std::vector<double>> weights;  // per epoch, one entry per group
  std::vector<std::vector<double>> losses;
  TrainHistory history;

  const std::vector<double>& final_weights() const { return weights.back(); }
};

struct WeightFigure {
  GroupBenchmark bench;
  WeightTrajectory drgo;
  WeightTrajectory plain_dro;

  /// epoch, method, group, weight, group_loss
  std::string to_csv() const {
    static const char* names[] = {"major", "minor", "noise"};
    std::string s = "epoch,method,group,weight,group_loss\n";
    for (const auto* t : {&drgo, &plain_dro})
      for (std::size_t e = 0; e < t->weights.size(); ++e)
        for (std::size_t g = 0; g < t->weights[e].size(); ++g)
          s += std::to_string(e + 1) + "," + to_string(t->method) + "," + names[g] + "," + fmt17(t->weights[e][g]) +
               "," + fmt17(t->losses[e][g]) + "\n";
    return s;
  }
};

/// Trains the KL-DRO baseline (no denoising) and DRGO on a benchmark with a
/// 90% major group, a 10% minor group and a noise group, with groups fixed to
/// the ground truth, and records the per-epoch group weights of both.
inline WeightFigure weight_trajectory_experiment(const TrainConfig& base, const SyntheticConfig& sc,
                                                 double noise_fraction) {
  WeightFigure fig;
  fig.bench = generate_group_benchmark(sc, noise_fraction);
  const auto split = split_popularity(fig.bench.data.graph, 0.2, base.seed);
  TrainOptions opt;
  opt.fixed_groups = fig.bench.user_group;
  opt.fixed_group_count = GroupBenchmark::n_groups;
  auto run = [&](Method m) {
    TrainConfig c = base;
    c.method = m;
    WeightTrajectory t{m, {}, {}, {}};
    t.history = train(c, split, opt).history;
    for (const auto& r : t.history.epochs) {
      t.weights.push_back(r.weights);
      t.losses.push_back(r.group_losses);
    }
    return t;
  };
  fig.drgo = run(Method::drgo);
  fig.plain_dro = run(Method::kl_dro);
  return fig;
}

// ---- diagnostics ----------------------------------------------------------------

/// Ratio of sum w^2 a sigma^2 to (sum w a)^2 over clean and noisy triplets,
/// where a = (x * score_gap)^2 per triplet.
inline double weighted_bpr_variance(std::span<const double> w_clean, std::span<const double> w_noisy,
                                    std::span<const double> a_clean, std::span<const double> a_noisy,
                                    double var_clean, double var_noisy) {
  if (w_clean.size() != a_clean.size() || w_noisy.size() != a_noisy.size())
    throw std::invalid_argument("weighted_bpr_variance: weights and features differ in length");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < w_clean.size(); ++i) {
    num += w_clean[i] * w_clean[i] * a_clean[i] * var_clean;
    den += w_clean[i] * a_clean[i];
  }
  for (std::size_t j = 0; j < w_noisy.size(); ++j) {
    num += w_noisy[j] * w_noisy[j] * a_noisy[j] * var_noisy;
    den += w_noisy[j] * a_noisy[j];
  }
  if (den == 0.0) throw std::domain_error("weighted_bpr_variance: zero denominator");
  return num / (den * den);
}

/// Per-triplet a = (x * gap)^2 from feature values and score gaps.
inline std::vector<double> squared_gradient_scale(std::span<const double> x, std::span<const double> gap) {
  if (x.size() != gap.size()) throw std::invalid_argument("squared_gradient_scale: length mismatch");
  std::vector<double> a(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) a[i] = (x[i] * gap[i]) * (x[i] * gap[i]);
  return a;
}

struct BlowupCase {
  std::vector<double> p, q;
  KlValue kl;
  double sinkhorn = 0.0;
};

/// Pairs of distributions on disjoint supports of a shared index set placed on
/// the line: KL is infinite for every pair while the Sinkhorn distance stays finite.
inline std::vector<BlowupCase> kl_blowup_demo(std::size_t n_pairs, std::size_t support, std::uint64_t seed,
                                              double lambda = 0.1) {
  Rng rng = make_rng(seed, "blowup");
  std::vector<BlowupCase> out;
  Matrix pts(2 * support, 1);
  for (std::size_t i = 0; i < 2 * support; ++i) pts(i, 0) = static_cast<double>(i) / static_cast<double>(support);
  for (std::size_t n = 0; n < n_pairs; ++n) {
    BlowupCase c;
    c.p.assign(2 * support, 0.0);
    c.q.assign(2 * support, 0.0);
    double zp = 0.0, zq = 0.0;
    for (std::size_t i = 0; i < support; ++i) {
      zp += c.p[i] = 0.05 + uniform01(rng);
      zq += c.q[support + i] = 0.05 + uniform01(rng);
    }
    for (double& v : c.p) v /= zp;
    for (double& v : c.q) v /= zq;
    c.kl = kl_divergence(c.p, c.q);
    c.sinkhorn = sinkhorn_distance({pts, c.p}, {pts, c.q}, {lambda, 100000, 1e-9});
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace drgo
