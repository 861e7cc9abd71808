#pragma once

#include <cstdint>
#include <vector>

#include "distill/linalg.hpp"

namespace distill {

/// Signal and noise coefficients of one noise level: x_t = alpha * x_0 + sigma * eps.
struct NoiseLevel {
  double alpha = 1.0;
  double sigma = 0.0;

  /// sigma = sqrt((1 - alpha) / alpha), the convention of the reference Gaussian code.
  static NoiseLevel from_alpha(double alpha);
};

/// Discrete schedule with betas evenly spaced in [beta_start, beta_end].
/// Index 0 is the clean level (alpha_bar = 1, sigma = 0); indices 1..T are noisy.
class NoiseSchedule {
 public:
  NoiseSchedule(double beta_start, double beta_end, int steps);

  double beta_start() const { return beta_start_; }
  double beta_end() const { return beta_end_; }
  int steps() const { return steps_; }

  const Eigen::VectorXd& betas() const { return betas_; }
  const Eigen::VectorXd& alpha_bar() const { return alpha_bar_; }
  const Eigen::VectorXd& sigma() const { return sigma_; }

  NoiseLevel level(int t) const;
  void check_timestep(int t) const;

 private:
  double beta_start_;
  double beta_end_;
  int steps_;
  Eigen::VectorXd betas_;      // size T, betas_[t-1] is beta_t
  Eigen::VectorXd alpha_bar_;  // size T+1
  Eigen::VectorXd sigma_;      // size T+1
};

NoiseSchedule make_schedule(double beta_start, double beta_end, int steps);

/// Noise draw for one diffusion evaluation, locatable in its seeded stream.
struct NoiseDraw {
  Point epsilon;
  int t = 0;
  std::uint64_t stream_position = 0;
};

Point perturb(const Point& x0, const NoiseLevel& level, const Point& eps);
Point perturb(const Point& x0, int t, const Point& eps, const NoiseSchedule& s);

/// Distillation weight w = (1 - alpha_bar) * sigma.
double weight_w(const NoiseLevel& level);
double weight_w(int t, const NoiseSchedule& s);

/// Noise-prediction convention of a score: eps = -sigma * score.
Point score_to_eps(const Point& score, const NoiseLevel& level);
Point score_to_eps(const Point& score, int t, const NoiseSchedule& s);

/// Classifier-free guidance: (1 + s) * eps_cond - s * eps_uncond.
Point cfg_combine(const Point& eps_cond, const Point& eps_uncond, double scale);

}  // namespace distill
