#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "distill/analytic_target.hpp"
#include "distill/denoiser_net.hpp"
#include "distill/particles.hpp"
#include "distill/rng.hpp"

namespace distill {

/// Ridge added to both covariances before any closed-form divergence.
inline constexpr double kCovarianceRidge = 1e-12;

/// KL(N(mean_q, cov_q) || N(mean_p, cov_p)).
double gaussian_kl(const Point& mean_q, const Eigen::MatrixXd& cov_q, const Point& mean_p, const Eigen::MatrixXd& cov_p);
double gaussian_kl(const ParticleGaussian& q, const GaussianTarget& p);
/// KL(q||p) + KL(p||q).
double symmetric_gaussian_kl(const ParticleGaussian& q, const GaussianTarget& p);

struct MonteCarloEstimate {
  double value = 0.0;
  double std_error = 0.0;
  int samples = 0;
};

inline constexpr int kMinMixtureKlSamples = 10000;

/// Monte-Carlo KL(q||p) for a mixture p, with its standard error. n >= 10^4.
MonteCarloEstimate mixture_kl_mc(const ParticleGaussian& q, const MixtureTarget& p, int n, Rng& rng);
/// Monte-Carlo KL(p||q), the reverse direction.
MonteCarloEstimate mixture_reverse_kl_mc(const ParticleGaussian& q, const MixtureTarget& p, int n, Rng& rng);

/// KL(q||p) by closed form for a Gaussian target, Monte Carlo for a mixture.
double divergence_to_target(const ParticleGaussian& q, const AnalyticTarget& p, int mc_samples, Rng& rng);
/// Symmetric KL, same dispatch.
double symmetric_divergence_to_target(const ParticleGaussian& q, const AnalyticTarget& p, int mc_samples, Rng& rng);

/// Independent stream for Monte-Carlo divergences logged at `step`, so that
/// logging never perturbs the optimization stream.
inline Rng divergence_rng(std::uint64_t seed, long step) {
  return Rng(seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(step) + 0xD1B54A32D192ED03ULL);
}

/// Moment-matched Gaussian of a point set (sample mean, biased covariance).
ParticleGaussian moment_match(const PointBatch& points);

struct TaylorProbe {
  Point x_t;
  int t = 0;
  std::optional<int> cond;
};

/// Output change across one estimator update, split into its first-order part
/// (JVP at the old parameters along the parameter step) and the remainder.
struct TaylorTerms {
  Point eps_before;
  Point eps_after;
  Point delta_first;
  Point delta_high;
  double norm_eps_phi = 0.0;
  double norm_delta_first = 0.0;
  double norm_delta_high = 0.0;
  /// max |delta_first + delta_high - (eps_after - eps_before)|
  double residual = 0.0;
};

/// Three-pass split: eps_before, eps_after and the first-order term are
/// evaluated separately and delta_high is their remainder.
TaylorTerms taylor_terms(const DenoiserNet& before, const DenoiserNet& after, const TaylorProbe& probe,
                         const Point& delta_first);

/// Per-probe report using the full parameter step (after - before) as the tangent.
std::vector<TaylorTerms> taylor_report(const DenoiserNet& before, const DenoiserNet& after,
                                       std::span<const TaylorProbe> probes);

/// Final divergences of one arm over a seed list. Non-finite runs stay in the
/// list and rank as +infinity in the order statistics.
struct EnsembleSummary {
  std::string label;
  std::vector<std::uint64_t> seeds;
  std::vector<double> values;
  std::vector<std::string> errors;  // empty string when the seed ran cleanly
  double median = 0.0;
  double q1 = 0.0;
  double q3 = 0.0;
  double iqr() const { return q3 - q1; }
  int failures() const;
};

/// Linear-interpolated quantile over values with non-finite entries mapped to +inf.
double quantile(std::vector<double> values, double q);

EnsembleSummary summarize(std::string label, std::vector<std::uint64_t> seeds, std::vector<double> values,
                          std::vector<std::string> errors = {});

enum class Ordering { a_lower, b_lower, tie };
const char* to_string(Ordering o);

struct EnsembleComparison {
  EnsembleSummary a;
  EnsembleSummary b;
  double median_difference = 0.0;  // a.median - b.median
  Ordering verdict = Ordering::tie;
};

/// Seed-indexed runner returning the final divergence of one run.
using SeedRunner = std::function<double(std::uint64_t seed)>;

/// Runs `runner` for every seed, optionally over `workers` threads. Results
/// are stored by seed index, so the output does not depend on scheduling.
EnsembleSummary run_ensemble(const std::string& label, const SeedRunner& runner, std::span<const std::uint64_t> seeds,
                             int workers = 1);

EnsembleComparison ensemble_compare(const std::string& label_a, const SeedRunner& run_a, const std::string& label_b,
                                    const SeedRunner& run_b, std::span<const std::uint64_t> seeds, int workers = 1);

/// seed_i = base + i.
std::vector<std::uint64_t> split_seeds(std::uint64_t base, int count);

}  // namespace distill
