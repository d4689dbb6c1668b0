#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "drgo/autodiff.hpp"

namespace drgo::ad {

struct AdamWOptions {
  double lr = 1e-3;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with decoupled weight decay. Holds the parameter handles it updates.
class AdamW {
 public:
  AdamW(std::vector<Tensor> params, AdamWOptions opt = {}) : params_(std::move(params)), opt_(opt) {
    for (const auto& p : params_) {
      if (!p.requires_grad()) throw std::invalid_argument("AdamW: parameter does not require grad");
      m_.emplace_back(p.rows(), p.cols());
      v_.emplace_back(p.rows(), p.cols());
    }
  }

  /// Applies one update from the populated gradients, then zeroes them.
  void step() {
    for (const auto& p : params_)
      if (!p.has_grad()) throw std::logic_error("AdamW::step: parameter has no gradient; run backward first");
    ++step_;
    const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(step_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& p = params_[k];
      auto& w = p.mutable_value().data();
      const auto& g = p.grad().data();
      auto& m = m_[k].data();
      auto& v = v_[k].data();
      const double decay = 1.0 - opt_.lr * opt_.weight_decay;
      for (std::size_t j = 0; j < w.size(); ++j) {
        m[j] = opt_.beta1 * m[j] + (1.0 - opt_.beta1) * g[j];
        v[j] = opt_.beta2 * v[j] + (1.0 - opt_.beta2) * g[j] * g[j];
        const double mhat = m[j] / bc1;
        const double vhat = v[j] / bc2;
        w[j] = w[j] * decay - opt_.lr * mhat / (std::sqrt(vhat) + opt_.eps);
      }
      p.zero_grad();
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  std::size_t step_count() const noexcept { return step_; }
  const std::vector<Tensor>& params() const noexcept { return params_; }
  AdamWOptions& options() noexcept { return opt_; }

 private:
  std::vector<Tensor> params_;
  AdamWOptions opt_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  std::size_t step_ = 0;
};

/// Maximum over all coordinates of |analytic - central difference| / max(1, |analytic|).
///
/// `fn` must rebuild the scalar loss from the current parameter values on each
/// call, using fixed randomness, so that repeated evaluations are comparable.
inline double grad_check(const std::function<Tensor()>& fn, std::vector<Tensor> params, double eps = 1e-5) {
  std::vector<Matrix> analytic;
  {
    for (auto& p : params) p.clear_grad();
    Tape tape;
    const Tensor loss = fn();
    if (!std::isfinite(loss.item())) throw std::domain_error("grad_check: non-finite loss");
    tape.backward(loss);
    for (auto& p : params) {
      analytic.push_back(p.has_grad() ? p.grad() : Matrix(p.rows(), p.cols()));
      p.clear_grad();
    }
  }
  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& w = params[k].mutable_value().data();
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double orig = w[j];
      w[j] = orig + eps;
      const double up = fn().item();
      w[j] = orig - eps;
      const double down = fn().item();
      w[j] = orig;
      if (!std::isfinite(up) || !std::isfinite(down))
        throw std::domain_error("grad_check: non-finite loss under perturbation");
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[k].data()[j];
      worst = std::max(worst, std::abs(a - numeric) / std::max(1.0, std::abs(a)));
    }
  }
  return worst;
}

}  // namespace drgo::ad
