#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "distill/linalg.hpp"

namespace distill {

struct AdamWOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// Adaptive-moment optimizer with decoupled weight decay over a flat vector.
/// Matches the usual AdamW update: bias-corrected moments, eps added after the
/// square root, decay applied before the moment step.
class AdamW {
 public:
  using Options = AdamWOptions;

  AdamW() = default;
  explicit AdamW(Eigen::Index size, Options opts = {})
      : opts_(opts), m_(Eigen::VectorXd::Zero(size)), v_(Eigen::VectorXd::Zero(size)) {}

  Eigen::Index size() const { return m_.size(); }
  long steps() const { return steps_; }
  const Options& options() const { return opts_; }

  /// Returns the displacement that `step` would apply, without mutating state.
  Eigen::VectorXd peek(const Eigen::VectorXd& params, const Eigen::VectorXd& grad, double lr) const {
    AdamW copy = *this;
    Eigen::VectorXd p = params;
    copy.step(p, grad, lr);
    return p - params;
  }

  void step(Eigen::VectorXd& params, const Eigen::VectorXd& grad, double lr) {
    if (params.size() != m_.size() || grad.size() != m_.size())
      throw std::invalid_argument("AdamW: parameter/gradient size mismatch");
    ++steps_;
    if (opts_.weight_decay != 0.0) params *= (1.0 - lr * opts_.weight_decay);
    m_ = opts_.beta1 * m_ + (1.0 - opts_.beta1) * grad;
    v_ = opts_.beta2 * v_ + (1.0 - opts_.beta2) * grad.cwiseAbs2();
    const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(steps_));
    const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(steps_));
    const Eigen::ArrayXd denom = (v_.array() / bc2).sqrt() + opts_.eps;
    params.array() -= (lr / bc1) * m_.array() / denom;
  }

 private:
  Options opts_{};
  Eigen::VectorXd m_;
  Eigen::VectorXd v_;
  long steps_ = 0;
};

/// Multiplicative learning-rate factor: linear warmup, then half-cosine decay
/// over [warmup, total] floored at min_factor.
inline double cosine_warmup_factor(long step, long warmup, long total, double min_factor = 0.0,
                                   double cycles = 0.5) {
  if (step < warmup) return static_cast<double>(step) / static_cast<double>(std::max(1L, warmup));
  const double progress = static_cast<double>(step - warmup) / static_cast<double>(std::max(1L, total - warmup));
  return std::max(min_factor, 0.5 * (1.0 + std::cos(std::numbers::pi * cycles * 2.0 * progress)));
}

}  // namespace distill
