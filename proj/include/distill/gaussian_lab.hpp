#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "distill/analytic_target.hpp"
#include "distill/noise_schedule.hpp"
#include "distill/optim.hpp"
#include "distill/particles.hpp"
#include "distill/rng.hpp"
#include "distill/trajectory.hpp"

namespace distill {

/// Update rules of the 2D Gaussian distillation example.
///  - sds:           reference score is the raw injected noise.
///  - vsd:           reference is the delta distribution at the rendered sample.
///  - real_vsd:      reference is the fitted estimator r, fitted after each q update.
///  - l_vsd:         same reference, but r is fitted before each q update.
///  - overfit_delta: r is refitted exactly onto the rendered sample every iteration.
enum class GaussianMethod { sds, vsd, real_vsd, l_vsd, overfit_delta };

std::string_view to_string(GaussianMethod m);
GaussianMethod parse_gaussian_method(std::string_view name);

/// How noise levels are drawn for each render.
///  - listing:  beta ~ U[beta_start, beta_end] per render, alpha = cumulative
///              product of (1 - beta) across the render batch.
///  - schedule: t ~ U{t_min..t_max} per render on a discrete schedule.
enum class NoiseMode { listing, schedule };

std::string_view to_string(NoiseMode m);
NoiseMode parse_noise_mode(std::string_view name);

struct ScheduleConfig {
  double beta_start = 1e-4;
  double beta_end = 0.02;
  int steps = 1000;
  int t_min = 1;
  int t_max = 1000;

  void validate() const;
  NoiseSchedule build() const { return make_schedule(beta_start, beta_end, steps); }

  friend bool operator==(const ScheduleConfig&, const ScheduleConfig&) = default;
};

struct GaussianRunConfig {
  GaussianMethod method = GaussianMethod::l_vsd;
  int dim = 2;
  int n_render = 1;
  double lr = 1e-2;
  double estimator_lr = 5e-2;
  int lora_steps = 10;
  int total_steps = 2000;
  double dist_0 = 10.0;
  std::uint64_t seed = 0;
  NoiseMode noise_mode = NoiseMode::listing;
  ScheduleConfig schedule;
  int warmup_steps = 100;
  /// Horizon of the cosine decay; 0 resolves to floor(1.5 * total_steps).
  int decay_steps = 0;
  double min_lr_factor = 0.0;
  double weight_decay = 0.0;
  int logging_interval = 10;
  /// Points per visualization snapshot for p, q and r; 0 disables snapshots.
  int vis_samples = 256;
  /// Monte-Carlo sample count for mixture divergences.
  int kl_mc_samples = 10000;
  TargetSpec target;

  void validate() const;
  /// Copy with every derived default filled in.
  GaussianRunConfig resolved() const;
};

/// Rendered samples x = mu + factor * z with the z draws kept for backpropagation.
struct RenderBatch {
  PointBatch x;
  PointBatch z;

  int size() const { return static_cast<int>(x.cols()); }
};

RenderBatch render_samples(const ParticleGaussian& q, int n, Rng& rng);

/// Noise levels for one iteration's renders.
std::vector<NoiseLevel> draw_noise_levels(NoiseMode mode, const ScheduleConfig& sc, const NoiseSchedule& schedule,
                                          int n, Rng& rng);

struct EstimatorFit {
  EstimatorGaussian r;
  /// Fitting loss evaluated before each inner step.
  std::vector<double> losses;
};

/// Sum-of-squares loss between r's and q's parameters.
double estimator_loss(const EstimatorGaussian& r, const ParticleGaussian& q);

/// inner_steps adaptive-moment steps of r toward q's parameters; q is untouched.
/// The optimizer state persists across calls, as one optimizer serves the whole run.
EstimatorFit fit_estimator(const EstimatorGaussian& r, const ParticleGaussian& q, int inner_steps, double estimator_lr,
                           AdamW& optimizer);

struct DistillGradient {
  /// Per-sample gradient on x_t, one column per render.
  PointBatch grad;
  PointBatch x_t;
  long nan_replaced = 0;
};

/// grad = -w * (score_p(x_t) - score_ref(x_t)), non-finite entries zeroed.
DistillGradient gaussian_distill_grad(GaussianMethod method, const RenderBatch& batch, const EstimatorGaussian& r,
                                      const AnalyticTarget& tgt, std::span<const NoiseLevel> levels,
                                      const PointBatch& eps);

/// Gradient of the reparameterized loss 0.5 * ||x_t - sg(x_t - grad)||^2 / n
/// with respect to (mu, factor), packed mu first.
Eigen::VectorXd reparam_param_grad(const RenderBatch& batch, std::span<const NoiseLevel> levels, const PointBatch& grad);

double reparam_loss(const PointBatch& grad);

/// One optimizer step on q driven by the per-sample x_t gradient.
ParticleGaussian apply_reparam_update(const ParticleGaussian& q, const RenderBatch& batch,
                                      std::span<const NoiseLevel> levels, const PointBatch& grad, AdamW& optimizer,
                                      double lr);

/// Test hook: hold the estimator fixed instead of fitting it.
struct GaussianRunHooks {
  std::optional<EstimatorGaussian> frozen_estimator;
};

/// Fixed-noise visualization samples of p, q and r at one logged step.
struct SampleSnapshot {
  long step = 0;
  PointBatch p;
  PointBatch q;
  PointBatch r;
};

struct GaussianRunResult {
  GaussianRunConfig config;  // resolved
  AnalyticTarget target;
  ParticleGaussian initial_q;
  ParticleGaussian final_q;
  EstimatorGaussian final_r;
  TrajectoryRecord trajectory;
  std::vector<SampleSnapshot> snapshots;
  double final_kl = 0.0;
  double final_symmetric_kl = 0.0;
  std::vector<double> iteration_seconds;
};

GaussianRunResult run_gaussian_experiment(const GaussianRunConfig& cfg, const GaussianRunHooks& hooks = {});

}  // namespace distill
