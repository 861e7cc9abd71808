#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "distill/analytic_target.hpp"
#include "distill/denoiser_net.hpp"
#include "distill/diagnostics.hpp"
#include "distill/gaussian_lab.hpp"
#include "distill/noise_schedule.hpp"
#include "distill/optim.hpp"
#include "distill/particles.hpp"
#include "distill/rng.hpp"
#include "distill/trajectory.hpp"

namespace distill {

/// Distillation update rules with a neural score estimator.
///  - sds:    w (eps_pretrain - eps); the estimator is not used.
///  - vsd:    theta step with the current estimator, estimator trained afterwards.
///  - l_vsd:  estimator trained first, theta step with the updated estimator.
///  - l2_vsd: theta step with the estimator plus its linearized lookahead correction.
///  - hl_vsd: theta step with the estimator plus only the higher-order remainder.
enum class NeuralMethod { sds, vsd, l_vsd, l2_vsd, hl_vsd };

std::string_view to_string(NeuralMethod m);
NeuralMethod parse_neural_method(std::string_view name);

/// Parameter step used for the linearized correction.
///  - raw:       -2 eta Delta with Delta = (eps_phi(x_t', t') - eps') J, a plain gradient step.
///  - optimizer: the displacement the estimator's adaptive-moment optimizer would take at learning rate eta.
enum class DeltaMode { raw, optimizer };
enum class OptimizerKind { sgd, adam };
enum class ThetaKind { cloud, gaussian };

std::string_view to_string(DeltaMode m);
std::string_view to_string(OptimizerKind k);
std::string_view to_string(ThetaKind k);
DeltaMode parse_delta_mode(std::string_view name);
OptimizerKind parse_optimizer_kind(std::string_view name);
ThetaKind parse_theta_kind(std::string_view name);

struct DistillMethod {
  NeuralMethod tag = NeuralMethod::vsd;
  int gamma = 1;
  double eta = 0.01;
  bool last_layer_only = false;
  std::optional<double> esd_lambda;
  std::optional<double> cfg_scale;

  void validate() const;
};

struct NeuralRunConfig {
  DistillMethod method;
  int dim = 2;
  std::uint64_t seed = 0;
  ThetaKind theta = ThetaKind::cloud;
  int particles = 16;
  /// Initial particle center is target_mean + dist_0 * U[0,1]^d.
  double dist_0 = 3.0;
  double init_spread = 1.0;
  double theta_lr = 1e-2;
  OptimizerKind theta_optimizer = OptimizerKind::adam;
  double lora_lr = 1e-3;
  OptimizerKind lora_optimizer = OptimizerKind::adam;
  DeltaMode delta_mode = DeltaMode::raw;
  /// Probability that an estimator training step uses the null condition.
  double lora_uncond_prob = 0.0;
  ScheduleConfig schedule{1e-4, 0.02, 1000, 1, 200};
  std::vector<int> hidden = {32, 32};
  /// Width of the learned condition embedding; 0 disables conditioning.
  int condition_width = 0;
  int total_steps = 2000;
  int logging_interval = 10;
  int kl_mc_samples = 10000;
  /// Target points per snapshot (and theta samples for a Gaussian theta); 0 disables snapshots.
  int vis_samples = 256;
  TargetSpec target;
  /// Unconditional ground truth for guidance; used only with method.cfg_scale.
  std::optional<TargetSpec> uncond_target;

  void validate() const;
  NetArchitecture architecture() const;
};

/// Ground-truth noise prediction: -sigma_t * grad log p_t(x_t).
Point eps_pretrain_eval(const AnalyticTarget& tgt, const Point& x_t, int t, const NoiseSchedule& s);

/// Frozen prior with optional guidance against an unconditional target.
struct Pretrained {
  AnalyticTarget target;
  std::optional<AnalyticTarget> uncond;
  std::optional<double> cfg_scale;

  Point eval(const Point& x_t, int t, const NoiseSchedule& s) const;
};

/// lambda * eps_cond + (1 - lambda) * eps_uncond.
Point esd_combine(const Point& eps_cond, const Point& eps_uncond, double lambda);

/// Estimator prediction used as the score reference: the conditional output,
/// or its ESD combination with the null-condition output when lambda is set.
Point estimator_eps(const DenoiserNet& net, const Point& x_t, int t, const DistillMethod& method);
/// JVP of estimator_eps along a parameter tangent.
Point estimator_jvp(const DenoiserNet& net, const Point& x_t, int t, const DistillMethod& method,
                    const ParamTangent& tangent);

/// w(t) (eps_pretrain(x_t) - eps) with x_t = perturb(x, t, eps).
Point sds_grad(const Pretrained& prior, const Point& x, int t, const Point& eps, const NoiseSchedule& s);

/// w(t) (eps_pretrain(x_t) - estimator_eps(x_t)).
Point vsd_grad(const Pretrained& prior, const DenoiserNet& net, const Point& x, int t, const Point& eps,
               const NoiseSchedule& s, const DistillMethod& method);

/// One estimator training draw (t', eps', condition).
struct LoraDraw {
  int t = 0;
  Point eps;
  std::optional<int> cond;
};

struct LoraUpdate {
  DenoiserNet net;
  /// Denoising loss of the final step, evaluated before that step.
  double loss = 0.0;
  /// Parameter displacement of the first step.
  ParamTangent first_step;
};

/// Mutable estimator optimizer: plain gradient descent or adaptive moments.
class EstimatorOptimizer {
 public:
  EstimatorOptimizer(OptimizerKind kind, Eigen::Index size) : kind_(kind), adam_(size) {}

  OptimizerKind kind() const { return kind_; }
  /// In-place step on params; returns the displacement.
  Eigen::VectorXd step(Eigen::VectorXd& params, const Eigen::VectorXd& grad, double lr);
  Eigen::VectorXd peek(const Eigen::VectorXd& params, const Eigen::VectorXd& grad, double lr) const;

 private:
  OptimizerKind kind_;
  AdamW adam_;
};

/// gamma = draws.size() denoising-loss steps on the rendered point x, each with its own (t', eps').
LoraUpdate lora_update(const DenoiserNet& net, const Point& x, std::span<const LoraDraw> draws, double lr,
                       const NoiseSchedule& s, EstimatorOptimizer& optimizer);

/// Convenience form drawing gamma fresh (t', eps') pairs from rng.
LoraUpdate lora_update(const DenoiserNet& net, const Point& x, int gamma, double lr, const NoiseSchedule& s,
                       const ScheduleConfig& sc, Rng& rng, EstimatorOptimizer& optimizer);

struct CorrectionRequest {
  Point x_t;
  int t = 0;
  Point x_tp;
  int tp = 0;
  Point eps_p;
  std::optional<int> cond_p;
  double eta = 0.0;
  bool last_layer_only = false;
  DeltaMode mode = DeltaMode::raw;
};

/// Delta_phi = (eps_phi(x_tp, tp) - eps') J_phi(x_tp, tp), by one reverse pass.
FlatParams lookahead_direction(const DenoiserNet& net, const Point& x_tp, int tp, std::optional<int> cond,
                               const Point& eps_p);

/// Parameter tangent of the lookahead step (masked to the last layer when requested).
ParamTangent lookahead_tangent(const DenoiserNet& net, const CorrectionRequest& req,
                               const EstimatorOptimizer* optimizer = nullptr);

/// Delta eps_first = -2 eta Delta_phi J_phi^T(x_t, t), by one dual-valued forward pass.
Point linearized_correction(const DenoiserNet& net, const CorrectionRequest& req, const DistillMethod& method,
                            const EstimatorOptimizer* optimizer = nullptr);

/// w(t) (eps_pretrain(x_t) - [estimator_eps(x_t) + Delta eps_first]).
Point l2vsd_grad(const Pretrained& prior, const DenoiserNet& net, const Point& x, int t, const Point& eps,
                 const LoraDraw& lookahead, const NoiseSchedule& s, const DistillMethod& method,
                 DeltaMode mode = DeltaMode::raw, const EstimatorOptimizer* optimizer = nullptr);

/// eps_phi_i(x_t) + J_phi_i(x_t) (phi - phi_i): the network linearized at its current parameters.
Point linear_model_eval(const DenoiserNet& net_at, const FlatParams& phi, const Point& x_t, int t,
                        std::optional<int> cond = std::nullopt);

/// eps_after(x_t) - eps_before(x_t) - Delta eps_first.
Point hl_correction(const DenoiserNet& before, const DenoiserNet& after, const Point& x_t, int t,
                    const Point& delta_first, const DistillMethod& method);

/// All random inputs of one iteration, drawn up front in a fixed order so that
/// every method consumes an identical stream.
struct IterationDraws {
  int particle = 0;  // cloud: which point is rendered
  Point z;           // gaussian theta: render noise
  int t = 0;
  Point eps;
  std::vector<LoraDraw> lora;
};

IterationDraws draw_iteration(const NeuralRunConfig& cfg, Rng& rng);

struct NeuralState {
  ThetaKind theta_kind = ThetaKind::cloud;
  ParticleCloud cloud;
  ParticleGaussian gaussian;
  DenoiserNet net;
  AdamW theta_adam;
  EstimatorOptimizer lora_opt;
  long step = 0;

  bool theta_finite() const { return theta_kind == ThetaKind::cloud ? cloud.finite() : gaussian.finite(); }
};

NeuralState initial_state(const NeuralRunConfig& cfg, const AnalyticTarget& target, Rng& rng);

/// Diagnostics of one iteration.
struct StepOutcome {
  Point x;
  Point x_t;
  Point x_tp;
  int tp = 0;
  Point theta_grad;  // w (eps_pretrain - reference) on the rendered point
  Point applied_correction;  // correction added to the estimator reference (zero for sds/vsd/l-vsd)
  TaylorTerms taylor;        // eps_before/after and the split of their difference
  double lora_loss = 0.0;
  double theta_loss = 0.0;
  /// Parameters of the network whose output formed the score reference.
  FlatParams reference_params;
};

/// One iteration of the configured method: estimator and theta updates in the
/// method's order, with the first-order / higher-order split of the estimator
/// change logged for every method.
StepOutcome distill_step(NeuralState& state, const IterationDraws& draws, const NeuralRunConfig& cfg,
                         const Pretrained& prior, const NoiseSchedule& s);

struct NormRecord {
  long step = 0;
  double norm_eps_phi = 0.0;
  double norm_delta_first = 0.0;
  double norm_delta_high = 0.0;
  double lora_loss = 0.0;
  double theta_loss = 0.0;
};

struct NeuralRunResult {
  NeuralRunConfig config;
  AnalyticTarget target;
  TrajectoryRecord trajectory;
  std::vector<NormRecord> norms;
  NeuralState final_state;
  /// Logged-step snapshots: p holds target samples, q the cloud points (or theta samples), r is empty.
  std::vector<SampleSnapshot> snapshots;
  double final_divergence = 0.0;
  std::vector<double> iteration_seconds;
};

NeuralRunResult run_neural_experiment(const NeuralRunConfig& cfg);

/// NormRecord stream as a table with columns
/// step, norm_eps_phi, norm_delta_first, norm_delta_high, lora_loss, theta_loss.
TrajectoryRecord norm_table(const std::vector<NormRecord>& norms);

}  // namespace distill
