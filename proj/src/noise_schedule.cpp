#include "distill/noise_schedule.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace distill {

NoiseLevel NoiseLevel::from_alpha(double alpha) { return {alpha, std::sqrt((1.0 - alpha) / alpha)}; }

NoiseSchedule::NoiseSchedule(double beta_start, double beta_end, int steps)
    : beta_start_(beta_start), beta_end_(beta_end), steps_(steps) {
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    std::ostringstream os;
    os << "noise schedule requires 0 < beta_start <= beta_end < 1, got [" << beta_start << ", " << beta_end << "]";
    throw std::invalid_argument(os.str());
  }
  if (steps < 1) throw std::invalid_argument("noise schedule requires at least one step");

  betas_.resize(steps);
  for (int i = 0; i < steps; ++i) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(steps - 1);
    betas_[i] = beta_start + frac * (beta_end - beta_start);
  }
  if (beta_start == beta_end) betas_.setConstant(beta_start);

  alpha_bar_.resize(steps + 1);
  sigma_.resize(steps + 1);
  alpha_bar_[0] = 1.0;
  sigma_[0] = 0.0;
  for (int t = 1; t <= steps; ++t) {
    alpha_bar_[t] = alpha_bar_[t - 1] * (1.0 - betas_[t - 1]);
    sigma_[t] = std::sqrt((1.0 - alpha_bar_[t]) / alpha_bar_[t]);
  }
  for (int t = 1; t <= steps; ++t) {
    if (!(alpha_bar_[t] < alpha_bar_[t - 1] && sigma_[t] > sigma_[t - 1] && std::isfinite(sigma_[t]) &&
          alpha_bar_[t] > 0.0)) {
      std::ostringstream os;
      os << "noise schedule loses monotonicity or finiteness at t=" << t;
      throw std::domain_error(os.str());
    }
  }
}

void NoiseSchedule::check_timestep(int t) const {
  if (t < 0 || t > steps_) {
    std::ostringstream os;
    os << "timestep " << t << " outside [0, " << steps_ << "]";
    throw std::out_of_range(os.str());
  }
}

NoiseLevel NoiseSchedule::level(int t) const {
  check_timestep(t);
  return {alpha_bar_[t], sigma_[t]};
}

NoiseSchedule make_schedule(double beta_start, double beta_end, int steps) {
  return NoiseSchedule(beta_start, beta_end, steps);
}

Point perturb(const Point& x0, const NoiseLevel& level, const Point& eps) {
  if (x0.size() != eps.size()) throw std::invalid_argument("perturb: dimension mismatch");
  return level.alpha * x0 + level.sigma * eps;
}

Point perturb(const Point& x0, int t, const Point& eps, const NoiseSchedule& s) { return perturb(x0, s.level(t), eps); }

double weight_w(const NoiseLevel& level) { return (1.0 - level.alpha) * level.sigma; }

double weight_w(int t, const NoiseSchedule& s) { return weight_w(s.level(t)); }

Point score_to_eps(const Point& score, const NoiseLevel& level) { return -level.sigma * score; }

Point score_to_eps(const Point& score, int t, const NoiseSchedule& s) { return score_to_eps(score, s.level(t)); }

Point cfg_combine(const Point& eps_cond, const Point& eps_uncond, double scale) {
  if (eps_cond.size() != eps_uncond.size()) throw std::invalid_argument("cfg_combine: dimension mismatch");
  return (1.0 + scale) * eps_cond - scale * eps_uncond;
}

}  // namespace distill
