#pragma once

#include <cmath>
#include <concepts>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "drgo/autodiff.hpp"
#include "drgo/rng.hpp"

namespace drgo {

/// Linear noise schedule over steps t = 1..T. alpha_bar(0) = 1.
class DiffusionSchedule {
 public:
  DiffusionSchedule() = default;
  explicit DiffusionSchedule(std::vector<double> betas) : beta_(std::move(betas)) {
    if (beta_.empty()) throw std::invalid_argument("DiffusionSchedule: need at least one step");
    double prod = 1.0;
    for (double b : beta_) {
      if (!(b > 0.0 && b < 1.0)) throw std::invalid_argument("DiffusionSchedule: beta outside (0, 1)");
      alpha_.push_back(1.0 - b);
      prod *= 1.0 - b;
      alpha_bar_.push_back(prod);
    }
  }

  int steps() const noexcept { return static_cast<int>(beta_.size()); }
  double beta(int t) const { return beta_.at(index(t)); }
  double alpha(int t) const { return alpha_.at(index(t)); }
  double alpha_bar(int t) const { return t == 0 ? 1.0 : alpha_bar_.at(index(t)); }

  /// Variance of the ancestral reverse step, beta_t (1 - abar_{t-1}) / (1 - abar_t).
  double posterior_variance(int t) const { return beta(t) * (1.0 - alpha_bar(t - 1)) / (1.0 - alpha_bar(t)); }

 private:
  std::size_t index(int t) const {
    if (t < 1 || t > steps())
      throw std::out_of_range("diffusion step " + std::to_string(t) + " outside [1, " + std::to_string(steps()) + "]");
    return static_cast<std::size_t>(t - 1);
  }

  std::vector<double> beta_, alpha_, alpha_bar_;
};

inline DiffusionSchedule make_schedule(int steps, double beta_start, double beta_end) {
  if (steps < 1) throw std::invalid_argument("make_schedule: T must be >= 1");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
    throw std::invalid_argument("make_schedule: need 0 < beta_start <= beta_end < 1");
  std::vector<double> b(static_cast<std::size_t>(steps));
  for (int t = 0; t < steps; ++t)
    b[static_cast<std::size_t>(t)] =
        steps == 1 ? beta_start : beta_start + (beta_end - beta_start) * t / static_cast<double>(steps - 1);
  return DiffusionSchedule(std::move(b));
}

namespace detail {

/// Per-row coefficient matrix c(t_r) broadcast across `cols`.
template <class F>
Matrix row_coefficients(std::span<const int> t, std::size_t cols, F f) {
  Matrix m(t.size(), cols);
  for (std::size_t r = 0; r < t.size(); ++r) {
    const double c = f(t[r]);
    for (double& v : m.row(r)) v = c;
  }
  return m;
}

}  // namespace detail

/// sqrt(abar_t) e0 + sqrt(1 - abar_t) eps, with a step per row of e0.
inline ad::Tensor q_sample(const ad::Tensor& e0, std::span<const int> t, const Matrix& eps,
                           const DiffusionSchedule& s) {
  if (t.size() != e0.rows() || eps.rows() != e0.rows() || eps.cols() != e0.cols())
    throw std::invalid_argument("q_sample: shape mismatch");
  const auto keep = detail::row_coefficients(t, e0.cols(), [&](int tt) { return std::sqrt(s.alpha_bar(tt)); });
  Matrix noise = detail::row_coefficients(t, e0.cols(), [&](int tt) { return std::sqrt(1.0 - s.alpha_bar(tt)); });
  for (std::size_t k = 0; k < noise.size(); ++k) noise.data()[k] *= eps.data()[k];
  return ad::add(ad::hadamard(e0, ad::Tensor(keep)), ad::Tensor(std::move(noise)));
}

inline Matrix q_sample(const Matrix& e0, int t, const Matrix& eps, const DiffusionSchedule& s) {
  std::vector<int> steps(e0.rows(), t);
  return q_sample(ad::Tensor(e0), steps, eps, s).value();
}

/// Sinusoidal embedding of step t: sin over the first half of the width, cos over the second.
inline std::vector<double> time_embedding(int t, std::size_t width) {
  std::vector<double> out(width);
  const std::size_t half = width / 2;
  for (std::size_t k = 0; k < width; ++k) {
    const std::size_t j = k < half ? k : k - half;
    const double freq = std::pow(10000.0, -static_cast<double>(2 * j) / static_cast<double>(std::max<std::size_t>(width, 1)));
    out[k] = k < half ? std::sin(t * freq) : std::cos(t * freq);
  }
  return out;
}

/// Noise predictor: two-layer perceptron over [x_t, emb(t)] with SiLU hidden units.
struct DenoiserParams {
  ad::Tensor w_in;    // d x h
  ad::Tensor w_time;  // d_t x h
  ad::Tensor b_hidden;  // 1 x h
  ad::Tensor w_out;   // h x d
  ad::Tensor b_out;   // 1 x d

  std::size_t dim() const { return w_in.rows(); }
  std::size_t time_dim() const { return w_time.rows(); }

  std::vector<ad::Tensor> trainable() const { return {w_in, w_time, b_hidden, w_out, b_out}; }

  static DenoiserParams init(std::size_t dim, Rng& rng, std::size_t hidden = 0, std::size_t time_dim = 0) {
    if (hidden == 0) hidden = 2 * dim;
    if (time_dim == 0) time_dim = dim;
    auto glorot = [&rng](std::size_t fan_in, std::size_t fan_out) {
      const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
      Matrix w(fan_in, fan_out);
      for (double& x : w.data()) x = a * (2.0 * uniform01(rng) - 1.0);
      return ad::Tensor(std::move(w), true);
    };
    DenoiserParams p;
    p.w_in = glorot(dim, hidden);
    p.w_time = glorot(time_dim, hidden);
    p.b_hidden = ad::Tensor::zeros(1, hidden, true);
    p.w_out = glorot(hidden, dim);
    p.b_out = ad::Tensor::zeros(1, dim, true);
    return p;
  }
};

inline ad::Tensor denoiser_predict(const ad::Tensor& x_t, std::span<const int> t, const DenoiserParams& p) {
  if (x_t.cols() != p.dim() || t.size() != x_t.rows()) throw std::invalid_argument("denoiser_predict: shape mismatch");
  Matrix emb(x_t.rows(), p.time_dim());
  for (std::size_t r = 0; r < t.size(); ++r) {
    if (r > 0 && t[r] == t[r - 1]) {
      std::copy(emb.row(r - 1).begin(), emb.row(r - 1).end(), emb.row(r).begin());
      continue;
    }
    const auto e = time_embedding(t[r], p.time_dim());
    std::copy(e.begin(), e.end(), emb.row(r).begin());
  }
  const auto pre = ad::add_row_bias(ad::add(ad::matmul(x_t, p.w_in), ad::matmul(ad::Tensor(std::move(emb)), p.w_time)),
                                    p.b_hidden);
  return ad::add_row_bias(ad::matmul(ad::silu(pre), p.w_out), p.b_out);
}

/// Adapts DenoiserParams to the predictor signature used below.
struct MlpDenoiser {
  const DenoiserParams* params;
  ad::Tensor operator()(const ad::Tensor& x_t, std::span<const int> t) const { return denoiser_predict(x_t, t, *params); }
};

/// ||eps - eps_hat(q_sample(e0, t, eps), t)||^2 summed over all entries, with
/// t ~ U{1..T} drawn per row and eps ~ N(0, I). `predict(x_t, t)` returns eps_hat.
template <class Predictor>
  requires std::invocable<Predictor&, const ad::Tensor&, std::span<const int>>
ad::Tensor sample_loss(const ad::Tensor& e0, const DiffusionSchedule& s, Predictor&& predict, Rng& rng) {
  std::vector<int> t(e0.rows());
  for (int& v : t) v = 1 + static_cast<int>(uniform_index(rng, static_cast<std::size_t>(s.steps())));
  Matrix eps(e0.rows(), e0.cols());
  for (double& v : eps.data()) v = standard_normal(rng);
  const auto x_t = q_sample(e0, t, eps, s);
  const auto eps_hat = predict(x_t, std::span<const int>(t));
  return ad::sum(ad::square(ad::sub(ad::Tensor(std::move(eps)), eps_hat)));
}

inline ad::Tensor sample_loss(const ad::Tensor& e0, const DiffusionSchedule& s, const DenoiserParams& p, Rng& rng) {
  return sample_loss(e0, s, MlpDenoiser{&p}, rng);
}

/// Ancestral reverse chain from step t_start down to 0:
///   x_{t-1} = (x_t - beta_t / sqrt(1 - abar_t) eps_hat) / sqrt(alpha_t) + sqrt(beta_tilde_t) z,
/// with z = 0 on the final step.
template <class Predictor>
  requires std::invocable<Predictor&, const ad::Tensor&, std::span<const int>>
Matrix reverse_denoise(const Matrix& x_start, int t_start, const DiffusionSchedule& s, Predictor&& predict, Rng& rng) {
  if (t_start < 1 || t_start > s.steps())
    throw std::out_of_range("reverse_denoise: t_start " + std::to_string(t_start) + " outside [1, " +
                            std::to_string(s.steps()) + "]");
  Matrix x = x_start;
  std::vector<int> steps(x.rows());
  for (int t = t_start; t >= 1; --t) {
    std::fill(steps.begin(), steps.end(), t);
    const Matrix eps_hat = predict(ad::Tensor(x), std::span<const int>(steps)).value();
    const double c_eps = s.beta(t) / std::sqrt(1.0 - s.alpha_bar(t));
    const double inv_sqrt_alpha = 1.0 / std::sqrt(s.alpha(t));
    const double sd = t > 1 ? std::sqrt(s.posterior_variance(t)) : 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
      double v = inv_sqrt_alpha * (x.data()[k] - c_eps * eps_hat.data()[k]);
      if (sd > 0.0) v += sd * standard_normal(rng);
      x.data()[k] = v;
    }
  }
  return x;
}

inline Matrix reverse_denoise(const Matrix& x_start, int t_start, const DiffusionSchedule& s, const DenoiserParams& p,
                              Rng& rng) {
  return reverse_denoise(x_start, t_start, s, MlpDenoiser{&p}, rng);
}

}  // namespace drgo
