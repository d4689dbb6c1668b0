#pragma once

// Subcommand dispatch for the drgo binary. Kept in a header so tests can call
// run() in-process.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "drgo/experiments.hpp"
#include "drgo/graph.hpp"
#include "drgo/metrics.hpp"
#include "drgo/splits.hpp"
#include "drgo/synthetic.hpp"
#include "drgo/trainer.hpp"
#include "json.hpp"

namespace drgo::cli {

enum ExitCode { ok = 0, internal = 1, usage = 2, data = 3, divergence = 4 };

namespace detail {

inline std::string dashed(std::string key) {
  for (char& c : key)
    if (c == '_') c = '-';
  return key;
}

inline std::filesystem::path default_out(const std::string& sub) {
  const char* root = std::getenv("DRGO_OUTPUT_ROOT");
  return std::filesystem::path(root && *root ? root : "runs") / sub;
}

inline std::vector<double> parse_doubles(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    double v = 0.0;
    if (!drgo::detail::parse_number(drgo::detail::trim(tok), v)) throw UsageError("not a number: '" + tok + "'");
    out.push_back(v);
  }
  if (out.empty()) throw UsageError("empty number list");
  return out;
}

/// Config resolution: defaults, then --config file, then mirrored flags, then --set.
struct ConfigFlags {
  std::string config_path;
  std::vector<std::string> sets;
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> options;

  void attach(CLI::App* app) {
    app->add_option("--config", config_path, "key = value config file")->check(CLI::ExistingFile);
    app->add_option("--set", sets, "override, key=value (repeatable)");
    for (const auto& key : config_keys())
      options[key] = app->add_option("--" + dashed(key), values[key], "config key " + key);
  }

  TrainConfig resolve() const {
    TrainConfig c;
    if (!config_path.empty()) c = load_config(config_path);
    for (const auto& [key, opt] : options)
      if (opt->count() > 0) set_config_value(c, key, values.at(key));
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + s + "'");
      set_config_value(c, drgo::detail::trim(std::string_view(s).substr(0, eq)),
                       drgo::detail::trim(std::string_view(s).substr(eq + 1)));
    }
    return c;
  }
};

inline nlohmann::json manifest(const std::string& sub, const std::vector<std::string>& argv,
                               const std::vector<std::string>& artifacts) {
  return {{"subcommand", sub}, {"argv", argv}, {"artifacts", artifacts}};
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << j.dump(2) << '\n';
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << text;
}

inline nlohmann::json error_record(const char* kind, int code, const std::string& msg) {
  return {{"error", kind}, {"exit_code", code}, {"message", msg}};
}

}  // namespace detail

inline int run(int argc, char** argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  using namespace detail;
  const std::vector<std::string> args(argv, argv + argc);

  CLI::App app{"Distributionally robust graph recommender: data preparation, training, evaluation, experiments"};
  app.require_subcommand(1);
  std::string out_dir;

  // prepare
  auto* prepare = app.add_subcommand("prepare", "raw interaction file -> split directory");
  std::string input, observed, split_kind = "popularity", delimiter = "tab", positive = "rating>=4";
  bool header = false, no_timestamp = false, no_rating = false;
  std::size_t min_user = 10, min_item = 10;
  double ood_fraction = 0.2;
  std::uint64_t seed = 0;
  prepare->add_option("--input", input, "interaction file (user item rating timestamp)")->required()->check(CLI::ExistingFile);
  prepare->add_option("--split", split_kind, "popularity | temporal | exposure")
      ->check(CLI::IsMember({"popularity", "temporal", "exposure"}));
  prepare->add_option("--observed", observed, "fully observed interactions (exposure split)")->check(CLI::ExistingFile);
  prepare->add_option("--delimiter", delimiter, "tab | comma")->check(CLI::IsMember({"tab", "comma"}));
  prepare->add_flag("--header", header, "first line is a header");
  prepare->add_flag("--no-rating", no_rating, "file has no rating column");
  prepare->add_flag("--no-timestamp", no_timestamp, "file has no timestamp column");
  prepare->add_option("--positive", positive, "positive rule, e.g. rating>=4 or watch>=2");
  prepare->add_option("--min-user-degree", min_user);
  prepare->add_option("--min-item-degree", min_item);
  prepare->add_option("--ood-fraction", ood_fraction);
  prepare->add_option("--seed", seed);
  prepare->add_option("--out", out_dir, "output directory");

  // synth
  auto* synth = app.add_subcommand("synth", "synthetic benchmark -> split directory");
  SyntheticConfig sc;
  std::string synth_split = "popularity";
  synth->add_option("--users", sc.n_users);
  synth->add_option("--items", sc.n_items);
  synth->add_option("--latent-dim", sc.latent_dim);
  synth->add_option("--clusters", sc.n_clusters);
  synth->add_option("--popularity-gamma", sc.popularity_gamma);
  synth->add_option("--min-degree", sc.min_degree);
  synth->add_option("--mean-degree", sc.mean_degree);
  synth->add_option("--split", synth_split, "popularity | exposure")->check(CLI::IsMember({"popularity", "exposure"}));
  synth->add_option("--ood-fraction", ood_fraction);
  synth->add_option("--seed", seed);
  synth->add_option("--out", out_dir);

  // train
  auto* train_cmd = app.add_subcommand("train", "train one model on a split directory");
  std::string data_dir;
  ConfigFlags train_cfg;
  train_cmd->add_option("--data", data_dir, "split directory")->required()->check(CLI::ExistingDirectory);
  train_cmd->add_option("--out", out_dir);
  train_cfg.attach(train_cmd);

  // evaluate
  auto* eval_cmd = app.add_subcommand("evaluate", "Recall@K / NDCG@K of a checkpoint");
  std::string model_path, ks_text = "20";
  eval_cmd->add_option("--data", data_dir)->required()->check(CLI::ExistingDirectory);
  eval_cmd->add_option("--model", model_path, "checkpoint written by train")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--k", ks_text, "comma separated cutoffs");
  eval_cmd->add_option("--out", out_dir);

  // sweep-noise
  auto* sweep = app.add_subcommand("sweep-noise", "recall decline under injected training noise");
  std::string ratios_text = "0.05,0.10,0.15,0.25", methods_text = "drgo,erm,kl_dro";
  ConfigFlags sweep_cfg;
  sweep->add_option("--data", data_dir)->required()->check(CLI::ExistingDirectory);
  sweep->add_option("--ratios", ratios_text, "comma separated noise ratios; 0 is always added");
  sweep->add_option("--methods", methods_text, "comma separated methods");
  sweep->add_option("--out", out_dir);
  sweep_cfg.attach(sweep);

  // weights-fig
  auto* fig = app.add_subcommand("weights-fig", "group weight trajectories on the major/minor/noise benchmark");
  SyntheticConfig fig_sc;
  fig_sc.n_users = 400;
  fig_sc.n_items = 300;
  double noise_fraction = 0.1;
  ConfigFlags fig_cfg;
  fig->add_option("--users", fig_sc.n_users);
  fig->add_option("--items", fig_sc.n_items);
  fig->add_option("--data-seed", fig_sc.seed);
  fig->add_option("--noise-fraction", noise_fraction);
  fig->add_option("--out", out_dir);
  fig_cfg.attach(fig);

  // diagnose
  auto* diag = app.add_subcommand("diagnose", "KL blow-up demo and weighted-BPR variance diagnostic");
  std::size_t pairs = 50, support = 5;
  diag->add_option("--pairs", pairs);
  diag->add_option("--support", support);
  diag->add_option("--seed", seed);
  diag->add_option("--out", out_dir);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::Success& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << error_record("usage", ExitCode::usage, e.what()).dump() << '\n';
    return ExitCode::usage;
  }

  auto* sub = app.get_subcommands().front();
  const std::string name = sub->get_name();
  const std::filesystem::path dir = out_dir.empty() ? default_out(name) : std::filesystem::path(out_dir);

  try {
    std::filesystem::create_directories(dir);

    if (sub == prepare) {
      TextFormat fmt;
      fmt.delimiter = delimiter == "comma" ? ',' : '\t';
      fmt.header = header;
      fmt.has_rating = !no_rating;
      fmt.has_timestamp = !no_timestamp;
      const auto rule = no_rating ? PositiveRule{PositiveRule::Kind::rating, 1.0} : PositiveRule::parse(positive);
      const auto g = build_graph(load_interactions(input, fmt), min_user, min_item, rule);
      SplitBundle b;
      const auto kind = parse_split_kind(split_kind);
      if (kind == SplitKind::popularity) {
        b = split_popularity(g, ood_fraction, seed);
      } else if (kind == SplitKind::temporal) {
        if (no_timestamp) throw UsageError("temporal split needs timestamps");
        b = split_temporal(g, ood_fraction);
        b.seed = seed;
      } else {
        if (observed.empty()) throw UsageError("exposure split needs --observed");
        std::unordered_map<std::string, std::size_t> uidx, iidx;
        for (std::size_t u = 0; u < g.user_ids.size(); ++u) uidx[g.user_ids[u]] = u;
        for (std::size_t i = 0; i < g.item_ids.size(); ++i) iidx[g.item_ids[i]] = i;
        std::vector<Edge> obs;
        std::size_t dropped = 0;
        for (const auto& x : load_interactions(observed, fmt)) {
          auto u = uidx.find(x.user_id);
          auto i = iidx.find(x.item_id);
          if (u == uidx.end() || i == iidx.end() || !rule.accepts(x)) {
            ++dropped;
            continue;
          }
          obs.push_back({u->second, i->second, x.timestamp});
        }
        b = split_exposure(g, obs, seed);
        if (dropped) b.warnings.push_back(std::to_string(dropped) + " observed rows skipped (filtered or unknown ids)");
      }
      auto m = manifest(name, args, {"train.tsv", "valid.tsv", "test_iid.tsv", "test_ood.tsv"});
      m["source"] = input;
      m["min_user_degree"] = min_user;
      m["min_item_degree"] = min_item;
      m["positive"] = no_rating ? "all" : positive;
      write_split(dir, b, m);
      out << "prepare: " << b.train.n_users() << " users, " << b.train.n_items() << " items, " << b.train.n_edges()
          << " train edges -> " << dir.string() << '\n';
      return ExitCode::ok;
    }

    if (sub == synth) {
      sc.seed = seed;
      SplitBundle b;
      if (synth_split == "exposure") {
        const auto ex = generate_exposure(sc);
        b = split_exposure(ex.biased.graph, ex.observed, seed);
      } else {
        b = split_popularity(generate_synthetic(sc).graph, ood_fraction, seed);
      }
      auto m = manifest(name, args, {"train.tsv", "valid.tsv", "test_iid.tsv", "test_ood.tsv"});
      m["synthetic"] = {{"n_users", sc.n_users},           {"n_items", sc.n_items},
                        {"latent_dim", sc.latent_dim},     {"n_clusters", sc.n_clusters},
                        {"popularity_gamma", sc.popularity_gamma}, {"min_degree", sc.min_degree},
                        {"mean_degree", sc.mean_degree},   {"seed", sc.seed}};
      write_split(dir, b, m);
      out << "synth: " << b.train.n_edges() << " train edges -> " << dir.string() << '\n';
      return ExitCode::ok;
    }

    if (sub == train_cmd) {
      const TrainConfig cfg = train_cfg.resolve();
      const auto warnings = validate_config(cfg);
      for (const auto& w : warnings) err << "warning: " << w << '\n';
      const auto split = read_split(data_dir);
      const auto res = train(cfg, split);
      write_history_csv(dir / "history.csv", res.history);
      write_weights_csv(dir / "weights.csv", res.history);
      save_model(dir / "model.ckpt", res.model, cfg, res.history.best_epoch);
      auto m = manifest(name, args, {"history.csv", "weights.csv", "model.ckpt"});
      m["config"] = config_json(cfg);
      m["seed"] = cfg.seed;
      m["data"] = data_dir;
      m["best_epoch"] = res.history.best_epoch;
      m["best_valid_recall"] = res.history.best_valid;
      m["early_stopped"] = res.history.early_stopped;
      auto all_warnings = warnings;
      all_warnings.insert(all_warnings.end(), res.history.warnings.begin(), res.history.warnings.end());
      m["warnings"] = all_warnings;
      write_json(dir / "manifest.json", m);
      out << "train: " << res.history.epochs.size() << " epochs, best epoch " << res.history.best_epoch
          << ", valid recall@" << cfg.eval_k << " " << fmt17(res.history.best_valid) << '\n';
      return ExitCode::ok;
    }

    if (sub == eval_cmd) {
      std::vector<std::size_t> ks;
      for (double k : parse_doubles(ks_text)) {
        if (!(k >= 1.0) || k != std::floor(k)) throw UsageError("--k entries must be positive integers");
        ks.push_back(static_cast<std::size_t>(k));
      }
      const auto split = read_split(data_dir);
      const auto ck = load_checkpoint(model_path);
      const auto model = load_model(model_path);
      if (model.user_final.rows() != split.train.n_users() || model.item_final.rows() != split.train.n_items())
        throw DataError("checkpoint shape does not match the split's node counts");
      nlohmann::json report;
      std::string per_user = "split,user,k,recall,ndcg\n";
      const std::pair<const char*, const std::vector<Edge>*> sets[] = {
          {"valid", &split.valid}, {"test_iid", &split.test_iid}, {"test_ood", &split.test_ood}};
      for (const auto& [label, edges] : sets) {
        const auto rep = evaluate(model.user_final, model.item_final, split.train, *edges, ks);
        report[label] = rep.summary();
        for (std::size_t k : ks)
          for (std::size_t n = 0; n < rep.users.size(); ++n)
            per_user += std::string(label) + "," + std::to_string(rep.users[n]) + "," + std::to_string(k) + "," +
                        fmt17(rep.user_recall.at(k)[n]) + "," + fmt17(rep.user_ndcg.at(k)[n]) + "\n";
      }
      write_json(dir / "report.json", report);
      write_text(dir / "per_user.csv", per_user);
      auto m = manifest(name, args, {"report.json", "per_user.csv"});
      m["config"] = ck.meta.value("config", nlohmann::json::object());
      m["seed"] = m["config"].value("seed", std::uint64_t{0});
      m["data"] = data_dir;
      m["model"] = model_path;
      write_json(dir / "manifest.json", m);
      out << report.dump(2) << '\n';
      return ExitCode::ok;
    }

    if (sub == sweep) {
      const TrainConfig cfg = sweep_cfg.resolve();
      for (const auto& w : validate_config(cfg)) err << "warning: " << w << '\n';
      std::vector<Method> methods;
      std::stringstream ms(methods_text);
      for (std::string tok; std::getline(ms, tok, ',');) {
        try {
          methods.push_back(parse_method(drgo::detail::trim(tok)));
        } catch (const std::invalid_argument& e) {
          throw UsageError(e.what());
        }
      }
      const auto split = read_split(data_dir);
      const auto rep = noise_robustness_sweep(cfg, split, parse_doubles(ratios_text), methods, [&](const SweepRow& r) {
        out << "sweep-noise: " << to_string(r.method) << " ratio " << fmt17(r.ratio) << " recall@" << cfg.eval_k << " "
            << fmt17(r.recall) << '\n';
      });
      write_text(dir / "sweep.csv", rep.to_csv());
      write_json(dir / "sweep.json", rep.to_json());
      auto m = manifest(name, args, {"sweep.csv", "sweep.json"});
      m["config"] = config_json(cfg);
      m["seed"] = cfg.seed;
      m["data"] = data_dir;
      write_json(dir / "manifest.json", m);
      return ExitCode::ok;
    }

    if (sub == fig) {
      const TrainConfig cfg = fig_cfg.resolve();
      for (const auto& w : validate_config(cfg)) err << "warning: " << w << '\n';
      const auto f = weight_trajectory_experiment(cfg, fig_sc, noise_fraction);
      write_text(dir / "weights_fig.csv", f.to_csv());
      auto m = manifest(name, args, {"weights_fig.csv"});
      m["config"] = config_json(cfg);
      m["seed"] = cfg.seed;
      m["benchmark"] = {{"n_users", fig_sc.n_users}, {"n_items", fig_sc.n_items}, {"seed", fig_sc.seed},
                        {"noise_fraction", noise_fraction}};
      m["final_noise_weight"] = {{"drgo", f.drgo.final_weights()[GroupBenchmark::noise]},
                                 {"kl_dro", f.plain_dro.final_weights()[GroupBenchmark::noise]}};
      write_json(dir / "manifest.json", m);
      out << "weights-fig: final noise weight drgo " << fmt17(f.drgo.final_weights()[GroupBenchmark::noise])
          << ", kl_dro " << fmt17(f.plain_dro.final_weights()[GroupBenchmark::noise]) << '\n';
      return ExitCode::ok;
    }

    if (sub == diag) {
      std::string blow = "pair,kl_infinite,kl,sinkhorn\n";
      std::size_t infinite = 0;
      const auto cases = kl_blowup_demo(pairs, support, seed);
      for (std::size_t n = 0; n < cases.size(); ++n) {
        infinite += cases[n].kl.infinite;
        blow += std::to_string(n) + "," + (cases[n].kl.infinite ? "1" : "0") + "," +
                (cases[n].kl.infinite ? std::string("inf") : fmt17(cases[n].kl.value)) + "," +
                fmt17(cases[n].sinkhorn) + "\n";
      }
      // Fixed fixture: 90 clean and 10 noisy triplets, noisy variance 4x the clean one.
      Rng rng = make_rng(seed, "variance-fixture");
      std::vector<double> xc(90), gc(90), xo(10), go(10);
      for (auto* v : {&xc, &gc, &xo, &go})
        for (double& x : *v) x = 0.5 + uniform01(rng);
      const auto ac = squared_gradient_scale(xc, gc), ao = squared_gradient_scale(xo, go);
      std::string var = "step,noisy_mass,diagnostic\n";
      for (int step = 0; step < 10; ++step) {
        const double s = 0.1 + 0.05 * step;
        std::vector<double> wc(90, (1.0 - s) / 90.0), wo(10, s / 10.0);
        var += std::to_string(step) + "," + fmt17(s) + "," + fmt17(weighted_bpr_variance(wc, wo, ac, ao, 1.0, 4.0)) + "\n";
      }
      write_text(dir / "kl_blowup.csv", blow);
      write_text(dir / "variance.csv", var);
      auto m = manifest(name, args, {"kl_blowup.csv", "variance.csv"});
      m["seed"] = seed;
      m["pairs"] = pairs;
      m["support"] = support;
      m["sigma2"] = {{"clean", 1.0}, {"noisy", 4.0}};
      write_json(dir / "manifest.json", m);
      out << "diagnose: KL infinite on " << infinite << "/" << cases.size() << " pairs -> " << dir.string() << '\n';
      return ExitCode::ok;
    }
  } catch (const UsageError& e) {
    err << error_record("usage", ExitCode::usage, e.what()).dump() << '\n';
    return ExitCode::usage;
  } catch (const DataError& e) {
    err << error_record("data", ExitCode::data, e.what()).dump() << '\n';
    return ExitCode::data;
  } catch (const DivergenceError& e) {
    auto rec = error_record("divergence", ExitCode::divergence, e.what());
    rec["epoch"] = e.epoch();
    rec["batch"] = e.batch();
    err << rec.dump() << '\n';
    return ExitCode::divergence;
  } catch (const std::filesystem::filesystem_error& e) {
    err << error_record("data", ExitCode::data, e.what()).dump() << '\n';
    return ExitCode::data;
  } catch (const std::exception& e) {
    err << error_record("internal", ExitCode::internal, e.what()).dump() << '\n';
    return ExitCode::internal;
  }
  return ExitCode::internal;
}

}  // namespace drgo::cli
