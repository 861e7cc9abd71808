#pragma once

#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "distill/linalg.hpp"
#include "distill/noise_schedule.hpp"
#include "distill/rng.hpp"

namespace distill {

/// N(mu, S S^T), parameterized by an unconstrained factor S.
struct GaussianTarget {
  Point mu;
  Eigen::MatrixXd factor;

  Eigen::Index dim() const { return mu.size(); }
  Eigen::MatrixXd covariance() const { return factor * factor.transpose(); }
};

struct MixtureComponent {
  double weight = 0.0;
  GaussianTarget gaussian;
};

/// Finite Gaussian mixture; weights are non-negative and sum to one.
struct MixtureTarget {
  std::vector<MixtureComponent> components;

  Eigen::Index dim() const { return components.front().gaussian.dim(); }
};

using AnalyticTarget = std::variant<GaussianTarget, MixtureTarget>;

void validate(const GaussianTarget& g);
void validate(const MixtureTarget& m);
void validate(const AnalyticTarget& tgt);
Eigen::Index target_dim(const AnalyticTarget& tgt);

/// n samples as columns of a d x n matrix.
PointBatch sample_target(const GaussianTarget& tgt, int n, Rng& rng);
/// Draws all n*d normals first, then one uniform per sample for the component
/// choice, so a mixture with weights (1, 0, ...) returns exactly the samples of
/// its first component.
PointBatch sample_target(const MixtureTarget& tgt, int n, Rng& rng);
PointBatch sample_target(const AnalyticTarget& tgt, int n, Rng& rng);

/// Score of the perturbed marginal N(alpha mu, alpha^2 S S^T + sigma^2 I).
/// Throws std::domain_error when the perturbed covariance is singular.
Point gaussian_perturbed_score(const Point& x_t, const GaussianTarget& tgt, const NoiseLevel& level);
Point gaussian_perturbed_score(const Point& x_t, const GaussianTarget& tgt, int t, const NoiseSchedule& s);

/// Non-throwing variant: nullopt when the perturbed covariance is singular.
std::optional<Point> try_gaussian_perturbed_score(const Point& x_t, const GaussianTarget& tgt, const NoiseLevel& level);

/// Posterior component responsibilities under the perturbed components.
Eigen::VectorXd mixture_responsibilities(const Point& x_t, const MixtureTarget& tgt, const NoiseLevel& level);

Point mixture_perturbed_score(const Point& x_t, const MixtureTarget& tgt, const NoiseLevel& level);
Point mixture_perturbed_score(const Point& x_t, const MixtureTarget& tgt, int t, const NoiseSchedule& s);

Point perturbed_score(const Point& x_t, const AnalyticTarget& tgt, const NoiseLevel& level);
Point perturbed_score(const Point& x_t, const AnalyticTarget& tgt, int t, const NoiseSchedule& s);

double log_density_t(const Point& x_t, const GaussianTarget& tgt, const NoiseLevel& level);
double log_density_t(const Point& x_t, const MixtureTarget& tgt, const NoiseLevel& level);
double log_density_t(const Point& x_t, const AnalyticTarget& tgt, const NoiseLevel& level);
double log_density_t(const Point& x_t, const AnalyticTarget& tgt, int t, const NoiseSchedule& s);

/// Clean-data log density (alpha = 1, sigma = 0).
double log_density(const Point& x, const AnalyticTarget& tgt);

/// Ground truth of the reference toy protocol: mu ~ U[0,1]^d, S = U[0,1]^{d x d} + I.
GaussianTarget random_listing_target(int dim, Rng& rng);

/// Two equal-weight identity-covariance modes at center -/+ (separation/2) e_1.
MixtureTarget two_mode_target(const Point& center, double separation);

/// Declarative target choice as it appears in run configurations.
struct TargetSpec {
  enum class Kind { random_gaussian, gaussian, mixture, two_mode };
  Kind kind = Kind::random_gaussian;
  GaussianTarget gaussian;   // Kind::gaussian
  MixtureTarget mixture;     // Kind::mixture
  double separation = 6.0;   // Kind::two_mode
};

/// random_gaussian draws d + d*d uniforms; two_mode draws its center (d uniforms)
/// from U[0,1]^d; fixed kinds draw nothing.
AnalyticTarget materialize(const TargetSpec& spec, int dim, Rng& rng);

/// Mean of the clean target (weighted mean for mixtures).
Point target_mean(const AnalyticTarget& tgt);

}  // namespace distill
