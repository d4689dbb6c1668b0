#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "drgo/error.hpp"
#include "json.hpp"

namespace drgo {

enum class Method { drgo, erm, kl_dro };

inline const char* to_string(Method m) {
  switch (m) {
    case Method::drgo: return "drgo";
    case Method::erm: return "erm";
    case Method::kl_dro: return "kl_dro";
  }
  return "?";
}

inline Method parse_method(std::string_view s) {
  if (s == "drgo") return Method::drgo;
  if (s == "erm") return Method::erm;
  if (s == "kl_dro" || s == "kl-dro") return Method::kl_dro;
  throw UsageError("unknown method '" + std::string(s) + "' (expected drgo, erm or kl_dro)");
}

struct TrainConfig {
  Method method = Method::drgo;
  std::size_t embed_dim = 32;
  int n_layers = 3;
  std::size_t n_clusters = 5;
  double rho = 0.05;
  double sinkhorn_lambda = 0.01;
  double entropy_beta = 1.0;
  double top_pct = 10.0;
  int diffusion_steps = 100;
  int t_start = 50;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  double lr = 5e-3;
  double weight_decay = 1e-4;
  int epochs = 100;
  std::size_t batch_size = 1024;
  std::uint64_t seed = 0;
  double kl_radius = 0.5;
  int patience = 10;
  int kmeans_iter = 50;
  std::size_t eval_k = 20;
  bool normalize_latents = true;
  bool rho_relative = true;  // rho bounds the excess over the uniform-weight distance
};

namespace detail {

template <class T>
T parse_number(std::string_view key, std::string_view v) {
  T out{};
  const auto* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end)
    throw UsageError("config key '" + std::string(key) + "': cannot parse '" + std::string(v) + "'");
  return out;
}

inline bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "1" || v == "true") return true;
  if (v == "0" || v == "false") return false;
  throw UsageError("config key '" + std::string(key) + "': expected true/false, got '" + std::string(v) + "'");
}

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct Field {
  std::function<void(TrainConfig&, std::string_view)> set;
  std::function<std::string(const TrainConfig&)> get;
};

template <class T>
Field number_field(T TrainConfig::*m, const char* key) {
  return {[m, key](TrainConfig& c, std::string_view v) { c.*m = parse_number<T>(key, v); },
          [m](const TrainConfig& c) {
            if constexpr (std::is_floating_point_v<T>)
              return format_double(c.*m);
            else
              return std::to_string(c.*m);
          }};
}

inline const std::map<std::string, Field, std::less<>>& fields() {
  static const std::map<std::string, Field, std::less<>> f = {
      {"method", {[](TrainConfig& c, std::string_view v) { c.method = parse_method(v); },
                  [](const TrainConfig& c) { return std::string(to_string(c.method)); }}},
      {"embed_dim", number_field(&TrainConfig::embed_dim, "embed_dim")},
      {"n_layers", number_field(&TrainConfig::n_layers, "n_layers")},
      {"n_clusters", number_field(&TrainConfig::n_clusters, "n_clusters")},
      {"rho", number_field(&TrainConfig::rho, "rho")},
      {"sinkhorn_lambda", number_field(&TrainConfig::sinkhorn_lambda, "sinkhorn_lambda")},
      {"entropy_beta", number_field(&TrainConfig::entropy_beta, "entropy_beta")},
      {"top_pct", number_field(&TrainConfig::top_pct, "top_pct")},
      {"diffusion_steps", number_field(&TrainConfig::diffusion_steps, "diffusion_steps")},
      {"t_start", number_field(&TrainConfig::t_start, "t_start")},
      {"beta_start", number_field(&TrainConfig::beta_start, "beta_start")},
      {"beta_end", number_field(&TrainConfig::beta_end, "beta_end")},
      {"lr", number_field(&TrainConfig::lr, "lr")},
      {"weight_decay", number_field(&TrainConfig::weight_decay, "weight_decay")},
      {"epochs", number_field(&TrainConfig::epochs, "epochs")},
      {"batch_size", number_field(&TrainConfig::batch_size, "batch_size")},
      {"seed", number_field(&TrainConfig::seed, "seed")},
      {"kl_radius", number_field(&TrainConfig::kl_radius, "kl_radius")},
      {"patience", number_field(&TrainConfig::patience, "patience")},
      {"kmeans_iter", number_field(&TrainConfig::kmeans_iter, "kmeans_iter")},
      {"eval_k", number_field(&TrainConfig::eval_k, "eval_k")},
      {"normalize_latents", {[](TrainConfig& c, std::string_view v) { c.normalize_latents = parse_bool("normalize_latents", v); },
                             [](const TrainConfig& c) { return std::string(c.normalize_latents ? "true" : "false"); }}},
      {"rho_relative", {[](TrainConfig& c, std::string_view v) { c.rho_relative = parse_bool("rho_relative", v); },
                        [](const TrainConfig& c) { return std::string(c.rho_relative ? "true" : "false"); }}},
  };
  return f;
}

}  // namespace detail

inline std::vector<std::string> config_keys() {
  std::vector<std::string> k;
  for (const auto& [name, f] : detail::fields()) k.push_back(name);
  return k;
}

/// Sets one key; unknown keys and unparsable values throw UsageError.
inline void set_config_value(TrainConfig& c, std::string_view key, std::string_view value) {
  const auto it = detail::fields().find(key);
  if (it == detail::fields().end()) throw UsageError("unknown config key '" + std::string(key) + "'");
  it->second.set(c, value);
}

inline std::string get_config_value(const TrainConfig& c, std::string_view key) {
  const auto it = detail::fields().find(key);
  if (it == detail::fields().end()) throw UsageError("unknown config key '" + std::string(key) + "'");
  return it->second.get(c);
}

/// Applies "key=value" lines. Blank lines and lines starting with '#' are skipped.
inline void apply_config_text(TrainConfig& c, std::string_view text, std::string_view origin = "config") {
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw UsageError(std::string(origin) + ":" + std::to_string(lineno) + ": expected key=value");
    auto strip = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    try {
      set_config_value(c, strip(line.substr(0, eq)), strip(line.substr(eq + 1)));
    } catch (const UsageError& e) {
      throw UsageError(std::string(origin) + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

inline TrainConfig load_config(const std::filesystem::path& path, TrainConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config file '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  apply_config_text(base, ss.str(), path.string());
  return base;
}

inline std::string config_text(const TrainConfig& c) {
  std::string out;
  for (const auto& [name, f] : detail::fields()) out += name + "=" + f.get(c) + "\n";
  return out;
}

inline nlohmann::json config_json(const TrainConfig& c) {
  nlohmann::json j;
  for (const auto& [name, f] : detail::fields()) {
    const auto text = f.get(c);
    const auto parsed = nlohmann::json::parse(text, nullptr, false);
    j[name] = name == "method" || parsed.is_discarded() ? nlohmann::json(text) : parsed;
  }
  return j;
}

/// Hard errors for values the trainer cannot run with; returns warnings for
/// values outside the usual tuning grid.
inline std::vector<std::string> validate_config(const TrainConfig& c) {
  if (c.embed_dim == 0) throw UsageError("embed_dim must be positive");
  if (c.n_layers < 0) throw UsageError("n_layers must be non-negative");
  if (c.n_clusters == 0) throw UsageError("n_clusters must be positive");
  if (!(c.rho >= 0.0)) throw UsageError("rho must be non-negative");
  if (!(c.sinkhorn_lambda > 0.0)) throw UsageError("sinkhorn_lambda must be positive");
  if (!(c.entropy_beta > 0.0)) throw UsageError("entropy_beta must be positive");
  if (!(c.top_pct > 0.0 && c.top_pct <= 100.0)) throw UsageError("top_pct must lie in (0, 100]");
  if (c.diffusion_steps < 1) throw UsageError("diffusion_steps must be >= 1");
  if (c.t_start < 1 || c.t_start > c.diffusion_steps) throw UsageError("t_start must lie in [1, diffusion_steps]");
  if (!(c.lr > 0.0)) throw UsageError("lr must be positive");
  if (!(c.weight_decay >= 0.0)) throw UsageError("weight_decay must be non-negative");
  if (c.epochs < 1) throw UsageError("epochs must be >= 1");
  if (c.batch_size == 0) throw UsageError("batch_size must be positive");
  if (!(c.kl_radius > 0.0)) throw UsageError("kl_radius must be positive");
  if (c.eval_k == 0) throw UsageError("eval_k must be positive");

  std::vector<std::string> warn;
  auto check = [&warn](const char* key, double v, std::initializer_list<double> grid) {
    for (double g : grid)
      if (std::abs(v - g) <= 1e-12 * std::max(1.0, std::abs(g))) return;
    std::string list;
    for (double g : grid) list += (list.empty() ? "" : ", ") + detail::format_double(g);
    warn.push_back(std::string(key) + "=" + detail::format_double(v) + " is outside the tuning grid {" + list + "}");
  };
  check("embed_dim", static_cast<double>(c.embed_dim), {16, 32, 64, 128});
  check("n_layers", c.n_layers, {1, 2, 3, 4, 5});
  check("n_clusters", static_cast<double>(c.n_clusters), {1, 3, 5, 8, 10});
  check("rho", c.rho, {0.001, 0.01, 0.05, 0.1, 0.5});
  check("top_pct", c.top_pct, {1, 5, 10, 15, 25});
  check("diffusion_steps", c.diffusion_steps, {20, 50, 100, 200, 500});
  check("weight_decay", c.weight_decay, {0.1, 0.001, 0.0001, 0.00001});
  return warn;
}

}  // namespace drgo
