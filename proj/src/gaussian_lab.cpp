#include "distill/gaussian_lab.hpp"

#include <chrono>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <string>

#include "distill/diagnostics.hpp"

namespace distill {

std::string_view to_string(GaussianMethod m) {
  switch (m) {
    case GaussianMethod::sds: return "sds";
    case GaussianMethod::vsd: return "vsd";
    case GaussianMethod::real_vsd: return "real-vsd";
    case GaussianMethod::l_vsd: return "l-vsd";
    case GaussianMethod::overfit_delta: return "overfit-delta";
  }
  return "?";
}

GaussianMethod parse_gaussian_method(std::string_view name) {
  for (auto m : {GaussianMethod::sds, GaussianMethod::vsd, GaussianMethod::real_vsd, GaussianMethod::l_vsd,
                 GaussianMethod::overfit_delta})
    if (to_string(m) == name) return m;
  throw std::invalid_argument("unknown gaussian method '" + std::string(name) +
                              "' (expected sds, vsd, real-vsd, l-vsd or overfit-delta)");
}

std::string_view to_string(NoiseMode m) { return m == NoiseMode::listing ? "listing" : "schedule"; }

NoiseMode parse_noise_mode(std::string_view name) {
  if (name == "listing") return NoiseMode::listing;
  if (name == "schedule") return NoiseMode::schedule;
  throw std::invalid_argument("unknown noise mode '" + std::string(name) + "' (expected listing or schedule)");
}

void ScheduleConfig::validate() const {
  (void)build();
  if (t_min < 1 || t_max > steps || t_min > t_max) {
    std::ostringstream os;
    os << "timestep range [" << t_min << ", " << t_max << "] must lie within [1, " << steps << "]";
    throw std::invalid_argument(os.str());
  }
}

void GaussianRunConfig::validate() const {
  auto positive = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string(what) + " must be positive");
  };
  positive(dim >= 1, "dim");
  positive(n_render >= 1, "n_render");
  positive(lr > 0.0, "lr");
  positive(estimator_lr > 0.0, "estimator_lr");
  positive(lora_steps >= 1, "lora_steps");
  positive(logging_interval >= 1, "logging_interval");
  if (total_steps < 0) throw std::invalid_argument("total_steps must be non-negative");
  if (dist_0 < 0.0) throw std::invalid_argument("dist_0 must be non-negative");
  if (warmup_steps < 0 || decay_steps < 0) throw std::invalid_argument("warmup/decay steps must be non-negative");
  if (vis_samples < 0) throw std::invalid_argument("vis_samples must be non-negative");
  if (kl_mc_samples < kMinMixtureKlSamples) throw std::invalid_argument("kl_mc_samples must be at least 10000");
  schedule.validate();
}

GaussianRunConfig GaussianRunConfig::resolved() const {
  GaussianRunConfig c = *this;
  if (c.decay_steps == 0) c.decay_steps = static_cast<int>(1.5 * c.total_steps);
  return c;
}

RenderBatch render_samples(const ParticleGaussian& q, int n, Rng& rng) {
  if (n < 1) throw std::invalid_argument("render_samples: n must be positive");
  RenderBatch b;
  b.z = rng.normal_matrix(n, q.dim()).transpose();
  b.x = (q.factor * b.z).colwise() + q.mu;
  return b;
}

std::vector<NoiseLevel> draw_noise_levels(NoiseMode mode, const ScheduleConfig& sc, const NoiseSchedule& schedule,
                                          int n, Rng& rng) {
  std::vector<NoiseLevel> levels;
  levels.reserve(static_cast<std::size_t>(n));
  if (mode == NoiseMode::listing) {
    double alpha = 1.0;
    for (int k = 0; k < n; ++k) {
      const double beta = rng.uniform() * (sc.beta_end - sc.beta_start) + sc.beta_start;
      alpha *= 1.0 - beta;
      levels.push_back(NoiseLevel::from_alpha(alpha));
    }
  } else {
    for (int k = 0; k < n; ++k) levels.push_back(schedule.level(rng.uniform_int(sc.t_min, sc.t_max)));
  }
  return levels;
}

double estimator_loss(const EstimatorGaussian& r, const ParticleGaussian& q) {
  return (q.mu - r.mu).squaredNorm() + (q.factor - r.factor).squaredNorm();
}

EstimatorFit fit_estimator(const EstimatorGaussian& r, const ParticleGaussian& q, int inner_steps, double estimator_lr,
                           AdamW& optimizer) {
  if (inner_steps < 1) throw std::invalid_argument("fit_estimator: inner_steps must be positive");
  EstimatorFit fit{r, {}};
  Eigen::VectorXd params = pack(r.mu, r.factor);
  const Eigen::VectorXd target = pack(q.mu, q.factor);
  for (int j = 0; j < inner_steps; ++j) {
    fit.losses.push_back((target - params).squaredNorm());
    optimizer.step(params, 2.0 * (params - target), estimator_lr);
  }
  unpack(params, fit.r.mu, fit.r.factor);
  return fit;
}

DistillGradient gaussian_distill_grad(GaussianMethod method, const RenderBatch& batch, const EstimatorGaussian& r,
                                      const AnalyticTarget& tgt, std::span<const NoiseLevel> levels,
                                      const PointBatch& eps) {
  const int n = batch.size();
  if (static_cast<int>(levels.size()) != n || eps.cols() != n || eps.rows() != batch.x.rows()) {
    std::ostringstream os;
    os << "gaussian_distill_grad: " << n << " samples, " << levels.size() << " noise levels, " << eps.cols()
       << " noise draws";
    throw std::invalid_argument(os.str());
  }
  const Eigen::Index d = batch.x.rows();
  const Point nan_point = Point::Constant(d, std::nan(""));
  DistillGradient out{PointBatch(d, n), PointBatch(d, n), 0};
  for (int k = 0; k < n; ++k) {
    const NoiseLevel& lv = levels[static_cast<std::size_t>(k)];
    const Point x = batch.x.col(k);
    const Point x_t = lv.alpha * x + lv.sigma * eps.col(k);
    out.x_t.col(k) = x_t;

    Point score_p;
    try {
      score_p = perturbed_score(x_t, tgt, lv);
    } catch (const std::domain_error&) {
      score_p = nan_point;
    }

    Point score_ref;
    switch (method) {
      case GaussianMethod::sds:
        score_ref = eps.col(k);
        break;
      case GaussianMethod::vsd:
      case GaussianMethod::overfit_delta:
        score_ref = try_gaussian_perturbed_score(x_t, GaussianTarget{x, Eigen::MatrixXd::Zero(d, d)}, lv)
                        .value_or(nan_point);
        break;
      case GaussianMethod::real_vsd:
      case GaussianMethod::l_vsd:
        score_ref = try_gaussian_perturbed_score(x_t, GaussianTarget{r.mu, r.factor}, lv).value_or(nan_point);
        break;
    }
    out.grad.col(k) = -weight_w(lv) * (score_p - score_ref);
  }
  for (Eigen::Index i = 0; i < out.grad.size(); ++i) {
    if (!std::isfinite(out.grad.data()[i])) {
      out.grad.data()[i] = 0.0;
      ++out.nan_replaced;
    }
  }
  return out;
}

Eigen::VectorXd reparam_param_grad(const RenderBatch& batch, std::span<const NoiseLevel> levels, const PointBatch& grad) {
  const int n = batch.size();
  const Eigen::Index d = batch.x.rows();
  Point d_mu = Point::Zero(d);
  Eigen::MatrixXd d_factor = Eigen::MatrixXd::Zero(d, d);
  for (int k = 0; k < n; ++k) {
    // x_t = alpha * (mu + factor z) + sigma * eps, and dloss/dx_t = grad / n
    const Point g = levels[static_cast<std::size_t>(k)].alpha * grad.col(k) / static_cast<double>(n);
    d_mu += g;
    d_factor += g * batch.z.col(k).transpose();
  }
  return pack(d_mu, d_factor);
}

double reparam_loss(const PointBatch& grad) { return 0.5 * grad.squaredNorm() / static_cast<double>(grad.cols()); }

ParticleGaussian apply_reparam_update(const ParticleGaussian& q, const RenderBatch& batch,
                                      std::span<const NoiseLevel> levels, const PointBatch& grad, AdamW& optimizer,
                                      double lr) {
  Eigen::VectorXd params = pack(q.mu, q.factor);
  optimizer.step(params, reparam_param_grad(batch, levels, grad), lr);
  ParticleGaussian out = q;
  unpack(params, out.mu, out.factor);
  return out;
}

namespace {

std::vector<std::string> gaussian_columns(int d, bool symmetric_kl) {
  std::vector<std::string> cols{"step"};
  for (int i = 0; i < d; ++i) cols.push_back("q_mu_" + std::to_string(i));
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) cols.push_back("q_sigma_" + std::to_string(i) + "_" + std::to_string(j));
  for (int i = 0; i < d; ++i) cols.push_back("r_mu_" + std::to_string(i));
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) cols.push_back("r_sigma_" + std::to_string(i) + "_" + std::to_string(j));
  for (const char* c : {"loss", "estimator_loss", "kl"}) cols.emplace_back(c);
  if (symmetric_kl) cols.emplace_back("sym_kl");
  cols.emplace_back("nan_count");
  return cols;
}

void append_params(std::vector<double>& row, const Point& mu, const Eigen::MatrixXd& factor) {
  for (Eigen::Index i = 0; i < mu.size(); ++i) row.push_back(mu[i]);
  for (Eigen::Index i = 0; i < factor.rows(); ++i)
    for (Eigen::Index j = 0; j < factor.cols(); ++j) row.push_back(factor(i, j));
}

}  // namespace

GaussianRunResult run_gaussian_experiment(const GaussianRunConfig& cfg_in, const GaussianRunHooks& hooks) {
  const GaussianRunConfig cfg = cfg_in.resolved();
  cfg.validate();
  const int d = cfg.dim;
  const int n = cfg.n_render;
  const NoiseSchedule schedule = cfg.schedule.build();

  GaussianRunResult res;
  res.config = cfg;
  Rng rng(cfg.seed);
  res.target = materialize(cfg.target, d, rng);
  const Point center = target_mean(res.target);

  ParticleGaussian q;
  q.mu = Point(d);
  for (int i = 0; i < d; ++i) q.mu[i] = rng.uniform() * cfg.dist_0 + center[i];
  q.factor = rng.uniform_matrix(d, d);
  res.initial_q = q;
  EstimatorGaussian r{Point::Zero(d), Eigen::MatrixXd::Zero(d, d)};
  if (hooks.frozen_estimator) r = *hooks.frozen_estimator;

  const AdamW::Options opts{.weight_decay = cfg.weight_decay};
  AdamW q_opt(d + d * d, opts);
  AdamW r_opt(d + d * d, opts);

  PointBatch vis_p, vis_q, vis_r;
  if (cfg.vis_samples > 0) {
    Rng vis_rng(cfg.seed ^ 0x5DEECE66DULL);
    vis_q = vis_rng.normal_matrix(cfg.vis_samples, d).transpose();
    vis_p = vis_rng.normal_matrix(cfg.vis_samples, d).transpose();
    vis_r = vis_rng.normal_matrix(cfg.vis_samples, d).transpose();
  }

  // Symmetric KL per row only where it is closed-form; mixtures report it once at the end.
  const bool row_sym_kl = std::holds_alternative<GaussianTarget>(res.target);
  res.trajectory = TrajectoryRecord(gaussian_columns(d, row_sym_kl));
  const bool fits_estimator =
      (cfg.method == GaussianMethod::real_vsd || cfg.method == GaussianMethod::l_vsd) && !hooks.frozen_estimator;
  double last_estimator_loss = 0.0;
  auto fit = [&] {
    auto f = fit_estimator(r, q, cfg.lora_steps, cfg.estimator_lr, r_opt);
    r = f.r;
    last_estimator_loss = f.losses.back();
  };

  auto log_row = [&](long step, double loss) {
    std::vector<double> row{static_cast<double>(step)};
    append_params(row, q.mu, q.factor);
    append_params(row, r.mu, r.factor);
    Rng div_rng = divergence_rng(cfg.seed, step);
    row.push_back(loss);
    row.push_back(last_estimator_loss);
    row.push_back(divergence_to_target(q, res.target, cfg.kl_mc_samples, div_rng));
    if (row_sym_kl) row.push_back(symmetric_divergence_to_target(q, res.target, cfg.kl_mc_samples, div_rng));
    row.push_back(static_cast<double>(res.trajectory.nan_replacements));
    res.trajectory.append(std::move(row));
    if (cfg.vis_samples > 0) {
      const auto& p_gauss = std::get_if<GaussianTarget>(&res.target);
      SampleSnapshot snap{step, {}, (q.factor * vis_q).colwise() + q.mu, (r.factor * vis_r).colwise() + r.mu};
      if (p_gauss) {
        snap.p = (p_gauss->factor * vis_p).colwise() + p_gauss->mu;
      } else {
        Rng p_rng(cfg.seed ^ 0x5DEECE66DULL);
        snap.p = sample_target(res.target, cfg.vis_samples, p_rng);
      }
      res.snapshots.push_back(std::move(snap));
    }
  };

  for (long i = 0; i < cfg.total_steps; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto levels = draw_noise_levels(cfg.noise_mode, cfg.schedule, schedule, n, rng);
    const RenderBatch batch = render_samples(q, n, rng);
    const PointBatch eps = rng.normal_matrix(n, d).transpose();

    if (cfg.method == GaussianMethod::l_vsd && fits_estimator) fit();
    if (cfg.method == GaussianMethod::overfit_delta) {
      // The estimator collapses onto the rendered sample: a delta at x.
      r = EstimatorGaussian{batch.x.col(0), Eigen::MatrixXd::Zero(d, d)};
      last_estimator_loss = 0.0;
    }

    const DistillGradient dg = gaussian_distill_grad(cfg.method, batch, r, res.target, levels, eps);
    res.trajectory.nan_replacements += dg.nan_replaced;
    const double lr_now =
        cfg.lr * cosine_warmup_factor(i, cfg.warmup_steps, cfg.decay_steps, cfg.min_lr_factor);
    q = apply_reparam_update(q, batch, levels, dg.grad, q_opt, lr_now);

    if (cfg.method == GaussianMethod::real_vsd && fits_estimator) fit();
    res.iteration_seconds.push_back(
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());

    if (!q.finite()) {
      res.trajectory.truncated = true;
      std::ostringstream os;
      os << "particle parameters became non-finite at step " << i;
      res.trajectory.truncation_reason = os.str();
      break;
    }
    if (i % cfg.logging_interval == 0 || i + 1 == cfg.total_steps) log_row(i, reparam_loss(dg.grad));
  }

  res.final_q = q;
  res.final_r = r;
  if (q.finite()) {
    Rng div_rng = divergence_rng(cfg.seed, -1);
    res.final_kl = divergence_to_target(q, res.target, cfg.kl_mc_samples, div_rng);
    res.final_symmetric_kl = symmetric_divergence_to_target(q, res.target, cfg.kl_mc_samples, div_rng);
  } else {
    res.final_kl = res.final_symmetric_kl = std::nan("");
  }
  return res;
}

}  // namespace distill
