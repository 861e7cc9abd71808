#include "distill/neural_lab.hpp"

#include <chrono>
#include <sstream>
#include <stdexcept>
#include <string>

namespace distill {

std::string_view to_string(NeuralMethod m) {
  switch (m) {
    case NeuralMethod::sds: return "SDS";
    case NeuralMethod::vsd: return "VSD";
    case NeuralMethod::l_vsd: return "L-VSD";
    case NeuralMethod::l2_vsd: return "L2-VSD";
    case NeuralMethod::hl_vsd: return "HL-VSD";
  }
  return "?";
}

NeuralMethod parse_neural_method(std::string_view name) {
  for (auto m : {NeuralMethod::sds, NeuralMethod::vsd, NeuralMethod::l_vsd, NeuralMethod::l2_vsd, NeuralMethod::hl_vsd})
    if (to_string(m) == name) return m;
  throw std::invalid_argument("unknown method '" + std::string(name) +
                              "' (expected SDS, VSD, L-VSD, L2-VSD or HL-VSD)");
}

std::string_view to_string(DeltaMode m) { return m == DeltaMode::raw ? "raw" : "optimizer"; }
std::string_view to_string(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adam"; }
std::string_view to_string(ThetaKind k) { return k == ThetaKind::cloud ? "cloud" : "gaussian"; }

DeltaMode parse_delta_mode(std::string_view name) {
  if (name == "raw") return DeltaMode::raw;
  if (name == "optimizer") return DeltaMode::optimizer;
  throw std::invalid_argument("unknown delta mode '" + std::string(name) + "' (expected raw or optimizer)");
}

OptimizerKind parse_optimizer_kind(std::string_view name) {
  if (name == "sgd") return OptimizerKind::sgd;
  if (name == "adam") return OptimizerKind::adam;
  throw std::invalid_argument("unknown optimizer '" + std::string(name) + "' (expected sgd or adam)");
}

ThetaKind parse_theta_kind(std::string_view name) {
  if (name == "cloud") return ThetaKind::cloud;
  if (name == "gaussian") return ThetaKind::gaussian;
  throw std::invalid_argument("unknown theta kind '" + std::string(name) + "' (expected cloud or gaussian)");
}

void DistillMethod::validate() const {
  if (gamma < 1) throw std::invalid_argument("gamma must be at least 1");
  if (!(eta >= 0.0)) throw std::invalid_argument("eta must be non-negative");
  if (esd_lambda && !(*esd_lambda >= 0.0 && *esd_lambda <= 1.0))
    throw std::invalid_argument("esd_lambda must lie in [0, 1]");
  if (cfg_scale && !std::isfinite(*cfg_scale)) throw std::invalid_argument("cfg_scale must be finite");
}

void NeuralRunConfig::validate() const {
  method.validate();
  auto positive = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string(what) + " must be positive");
  };
  positive(dim >= 1, "dim");
  positive(particles >= 1, "particles");
  positive(theta_lr > 0.0, "theta_lr");
  positive(lora_lr > 0.0, "lora_lr");
  positive(logging_interval >= 1, "logging_interval");
  positive(init_spread > 0.0, "init_spread");
  if (total_steps < 0) throw std::invalid_argument("total_steps must be non-negative");
  if (dist_0 < 0.0) throw std::invalid_argument("dist_0 must be non-negative");
  if (condition_width < 0) throw std::invalid_argument("condition_width must be non-negative");
  if (!(lora_uncond_prob >= 0.0 && lora_uncond_prob <= 1.0))
    throw std::invalid_argument("lora_uncond_prob must lie in [0, 1]");
  if (method.esd_lambda && condition_width == 0)
    throw std::invalid_argument("esd_lambda needs a conditioned estimator (condition_width > 0)");
  if (method.cfg_scale && !uncond_target) throw std::invalid_argument("cfg_scale needs an uncond_target");
  if (kl_mc_samples < kMinMixtureKlSamples) throw std::invalid_argument("kl_mc_samples must be at least 10000");
  if (vis_samples < 0) throw std::invalid_argument("vis_samples must be non-negative");
  for (int h : hidden) positive(h >= 1, "hidden layer width");
  schedule.validate();
}

NetArchitecture NeuralRunConfig::architecture() const {
  NetArchitecture a;
  a.data_dim = dim;
  a.hidden = hidden;
  a.activation = Activation::tanh;
  a.num_timesteps = schedule.steps;
  a.condition_count = condition_width > 0 ? 1 : 0;
  a.condition_width = condition_width;
  return a;
}

Point eps_pretrain_eval(const AnalyticTarget& tgt, const Point& x_t, int t, const NoiseSchedule& s) {
  return score_to_eps(perturbed_score(x_t, tgt, t, s), t, s);
}

Point Pretrained::eval(const Point& x_t, int t, const NoiseSchedule& s) const {
  Point eps = eps_pretrain_eval(target, x_t, t, s);
  if (cfg_scale && uncond) eps = cfg_combine(eps, eps_pretrain_eval(*uncond, x_t, t, s), *cfg_scale);
  return eps;
}

Point esd_combine(const Point& eps_cond, const Point& eps_uncond, double lambda) {
  if (eps_cond.size() != eps_uncond.size()) throw std::invalid_argument("esd_combine: dimension mismatch");
  return lambda * eps_cond + (1.0 - lambda) * eps_uncond;
}

namespace {

std::optional<int> conditional_id(const DenoiserNet& net) {
  if (net.architecture().condition_count > 0) return 0;
  return std::nullopt;
}

void require_esd_support(const DenoiserNet& net, const DistillMethod& method) {
  if (method.esd_lambda && net.architecture().condition_count == 0)
    throw std::invalid_argument("esd_lambda needs a network with condition embeddings");
}

Point weighted_residual(double w, const Point& eps_pre, const Point& reference) { return w * (eps_pre - reference); }

}  // namespace

Point estimator_eps(const DenoiserNet& net, const Point& x_t, int t, const DistillMethod& method) {
  require_esd_support(net, method);
  Point eps = net_forward(net, x_t, t, conditional_id(net));
  if (method.esd_lambda) eps = esd_combine(eps, net_forward(net, x_t, t, std::nullopt), *method.esd_lambda);
  return eps;
}

Point estimator_jvp(const DenoiserNet& net, const Point& x_t, int t, const DistillMethod& method,
                    const ParamTangent& tangent) {
  require_esd_support(net, method);
  Point j = net_jvp(net, x_t, t, conditional_id(net), tangent);
  if (method.esd_lambda) j = esd_combine(j, net_jvp(net, x_t, t, std::nullopt, tangent), *method.esd_lambda);
  return j;
}

Point sds_grad(const Pretrained& prior, const Point& x, int t, const Point& eps, const NoiseSchedule& s) {
  const Point x_t = perturb(x, t, eps, s);
  return weighted_residual(weight_w(t, s), prior.eval(x_t, t, s), eps);
}

Point vsd_grad(const Pretrained& prior, const DenoiserNet& net, const Point& x, int t, const Point& eps,
               const NoiseSchedule& s, const DistillMethod& method) {
  const Point x_t = perturb(x, t, eps, s);
  return weighted_residual(weight_w(t, s), prior.eval(x_t, t, s), estimator_eps(net, x_t, t, method));
}

Eigen::VectorXd EstimatorOptimizer::step(Eigen::VectorXd& params, const Eigen::VectorXd& grad, double lr) {
  const Eigen::VectorXd before = params;
  if (kind_ == OptimizerKind::sgd) {
    if (grad.size() != params.size()) throw std::invalid_argument("optimizer: parameter/gradient size mismatch");
    params -= lr * grad;
  } else {
    adam_.step(params, grad, lr);
  }
  return params - before;
}

Eigen::VectorXd EstimatorOptimizer::peek(const Eigen::VectorXd& params, const Eigen::VectorXd& grad,
                                         double lr) const {
  if (kind_ == OptimizerKind::sgd) return (params - lr * grad) - params;
  return adam_.peek(params, grad, lr);
}

LoraUpdate lora_update(const DenoiserNet& net, const Point& x, std::span<const LoraDraw> draws, double lr,
                       const NoiseSchedule& s, EstimatorOptimizer& optimizer) {
  if (draws.empty()) throw std::invalid_argument("lora_update: gamma must be at least 1");
  const auto& layout = net.layout();
  LoraUpdate out{net, 0.0, ParamTangent::zeros(layout)};
  Eigen::VectorXd phi = net.params().values();
  const double weight = 1.0;
  for (std::size_t j = 0; j < draws.size(); ++j) {
    const LoraDraw& d = draws[j];
    const DenoiserNet current = net.with_params(FlatParams(phi, layout));
    const DenoisingSample sample{perturb(x, d.t, d.eps, s), d.t, d.cond, d.eps};
    const std::span<const DenoisingSample> batch(&sample, 1);
    const std::span<const double> weights(&weight, 1);
    out.loss = net_loss(current, batch, weights);
    const Eigen::VectorXd step = optimizer.step(phi, net_grad(current, batch, weights).values(), lr);
    if (j == 0) out.first_step = ParamTangent(step, layout);
  }
  out.net = net.with_params(FlatParams(phi, layout));
  return out;
}

LoraUpdate lora_update(const DenoiserNet& net, const Point& x, int gamma, double lr, const NoiseSchedule& s,
                       const ScheduleConfig& sc, Rng& rng, EstimatorOptimizer& optimizer) {
  if (gamma < 1) throw std::invalid_argument("lora_update: gamma must be at least 1");
  std::vector<LoraDraw> draws;
  for (int j = 0; j < gamma; ++j) {
    LoraDraw d;
    d.t = rng.uniform_int(sc.t_min, sc.t_max);
    d.eps = rng.normal_vector(x.size());
    d.cond = conditional_id(net);
    draws.push_back(std::move(d));
  }
  return lora_update(net, x, draws, lr, s, optimizer);
}

FlatParams lookahead_direction(const DenoiserNet& net, const Point& x_tp, int tp, std::optional<int> cond,
                               const Point& eps_p) {
  const DenoisingSample sample{x_tp, tp, cond, eps_p};
  const double weight = 1.0;
  FlatParams g = net_grad(net, std::span<const DenoisingSample>(&sample, 1), std::span<const double>(&weight, 1));
  g.values() *= 0.5;
  return g;
}

ParamTangent lookahead_tangent(const DenoiserNet& net, const CorrectionRequest& req,
                               const EstimatorOptimizer* optimizer) {
  const FlatParams delta = lookahead_direction(net, req.x_tp, req.tp, req.cond_p, req.eps_p);
  ParamTangent v;
  if (req.mode == DeltaMode::raw) {
    v = ParamTangent(-2.0 * req.eta * delta.values(), net.layout());
  } else {
    if (!optimizer) throw std::invalid_argument("optimizer delta mode needs the estimator optimizer");
    v = ParamTangent(optimizer->peek(net.params().values(), 2.0 * delta.values(), req.eta), net.layout());
  }
  if (req.last_layer_only) v = hadamard(last_layer_mask(net), v);
  return v;
}

Point linearized_correction(const DenoiserNet& net, const CorrectionRequest& req, const DistillMethod& method,
                            const EstimatorOptimizer* optimizer) {
  return estimator_jvp(net, req.x_t, req.t, method, lookahead_tangent(net, req, optimizer));
}

Point l2vsd_grad(const Pretrained& prior, const DenoiserNet& net, const Point& x, int t, const Point& eps,
                 const LoraDraw& lookahead, const NoiseSchedule& s, const DistillMethod& method, DeltaMode mode,
                 const EstimatorOptimizer* optimizer) {
  CorrectionRequest req;
  req.x_t = perturb(x, t, eps, s);
  req.t = t;
  req.x_tp = perturb(x, lookahead.t, lookahead.eps, s);
  req.tp = lookahead.t;
  req.eps_p = lookahead.eps;
  req.cond_p = lookahead.cond;
  req.eta = method.eta;
  req.last_layer_only = method.last_layer_only;
  req.mode = mode;
  const Point reference = estimator_eps(net, req.x_t, t, method) + linearized_correction(net, req, method, optimizer);
  return weighted_residual(weight_w(t, s), prior.eval(req.x_t, t, s), reference);
}

Point linear_model_eval(const DenoiserNet& net_at, const FlatParams& phi, const Point& x_t, int t,
                        std::optional<int> cond) {
  return net_forward(net_at, x_t, t, cond) + net_jvp(net_at, x_t, t, cond, phi - net_at.params());
}

Point hl_correction(const DenoiserNet& before, const DenoiserNet& after, const Point& x_t, int t,
                    const Point& delta_first, const DistillMethod& method) {
  return estimator_eps(after, x_t, t, method) - estimator_eps(before, x_t, t, method) - delta_first;
}

IterationDraws draw_iteration(const NeuralRunConfig& cfg, Rng& rng) {
  IterationDraws d;
  if (cfg.theta == ThetaKind::cloud) {
    d.particle = rng.uniform_int(0, cfg.particles - 1);
  } else {
    d.z = rng.normal_vector(cfg.dim);
  }
  d.t = rng.uniform_int(cfg.schedule.t_min, cfg.schedule.t_max);
  d.eps = rng.normal_vector(cfg.dim);
  for (int j = 0; j < cfg.method.gamma; ++j) {
    LoraDraw l;
    l.t = rng.uniform_int(cfg.schedule.t_min, cfg.schedule.t_max);
    l.eps = rng.normal_vector(cfg.dim);
    if (cfg.condition_width > 0) {
      if (rng.uniform() >= cfg.lora_uncond_prob) l.cond = 0;
    }
    d.lora.push_back(std::move(l));
  }
  return d;
}

NeuralState initial_state(const NeuralRunConfig& cfg, const AnalyticTarget& target, Rng& rng) {
  const int d = cfg.dim;
  Point center = target_mean(target);
  for (int i = 0; i < d; ++i) center[i] += cfg.dist_0 * rng.uniform();
  NeuralState st{cfg.theta, {}, {}, DenoiserNet::zeros(cfg.architecture()), AdamW(),
                 EstimatorOptimizer(cfg.lora_optimizer, 0), 0};
  if (cfg.theta == ThetaKind::cloud) {
    st.cloud.points = (cfg.init_spread * rng.normal_matrix(cfg.particles, d).transpose()).colwise() + center;
    st.theta_adam = AdamW(d * cfg.particles);
  } else {
    st.gaussian.mu = center;
    st.gaussian.factor = cfg.init_spread * Eigen::MatrixXd::Identity(d, d);
    st.theta_adam = AdamW(d + d * d);
  }
  st.net = DenoiserNet::initialize(cfg.architecture(), rng);
  st.lora_opt = EstimatorOptimizer(cfg.lora_optimizer, static_cast<Eigen::Index>(st.net.layout()->size()));
  return st;
}

namespace {

Point render(const NeuralState& st, const IterationDraws& d) {
  if (st.theta_kind == ThetaKind::cloud) {
    if (d.particle < 0 || d.particle >= st.cloud.count()) throw std::out_of_range("particle index out of range");
    return st.cloud.points.col(d.particle);
  }
  if (d.z.size() != st.gaussian.dim()) throw std::invalid_argument("render noise dimension mismatch");
  return st.gaussian.mu + st.gaussian.factor * d.z;
}

void apply_theta_grad(NeuralState& st, const IterationDraws& d, const Point& grad, const NeuralRunConfig& cfg) {
  Eigen::VectorXd flat;
  Eigen::VectorXd g;
  if (st.theta_kind == ThetaKind::cloud) {
    flat = st.cloud.points.reshaped();
    g = Eigen::VectorXd::Zero(flat.size());
    g.segment(static_cast<Eigen::Index>(d.particle) * cfg.dim, cfg.dim) = grad;
  } else {
    flat = pack(st.gaussian.mu, st.gaussian.factor);
    g = pack(grad, grad * d.z.transpose());
  }
  if (cfg.theta_optimizer == OptimizerKind::sgd) {
    flat -= cfg.theta_lr * g;
  } else {
    st.theta_adam.step(flat, g, cfg.theta_lr);
  }
  if (st.theta_kind == ThetaKind::cloud) {
    st.cloud.points = flat.reshaped(cfg.dim, cfg.particles);
  } else {
    unpack(flat, st.gaussian.mu, st.gaussian.factor);
  }
}

}  // namespace

StepOutcome distill_step(NeuralState& state, const IterationDraws& draws, const NeuralRunConfig& cfg,
                         const Pretrained& prior, const NoiseSchedule& s) {
  const DistillMethod& m = cfg.method;
  if (draws.lora.empty()) throw std::invalid_argument("iteration draws carry no estimator draws");
  StepOutcome out;
  out.x = render(state, draws);
  const NoiseLevel level = s.level(draws.t);
  out.x_t = perturb(out.x, level, draws.eps);
  const LoraDraw& first = draws.lora.front();
  out.tp = first.t;
  out.x_tp = perturb(out.x, first.t, first.eps, s);
  const Point eps_pre = prior.eval(out.x_t, draws.t, s);
  const double w = weight_w(level);

  const DenoiserNet before = state.net;
  const Point eps_before = estimator_eps(before, out.x_t, draws.t, m);
  out.applied_correction = Point::Zero(cfg.dim);

  auto update_theta = [&](const Point& reference, const FlatParams& reference_params) {
    out.theta_grad = weighted_residual(w, eps_pre, reference);
    out.theta_loss = 0.5 * out.theta_grad.squaredNorm();
    out.reference_params = reference_params;
    apply_theta_grad(state, draws, out.theta_grad, cfg);
  };
  auto update_estimator = [&] {
    LoraUpdate u = lora_update(before, out.x, draws.lora, cfg.lora_lr, s, state.lora_opt);
    state.net = std::move(u.net);
    out.lora_loss = u.loss;
    return u.first_step;
  };

  ParamTangent first_step = ParamTangent::zeros(before.layout());
  switch (m.tag) {
    case NeuralMethod::sds:
      update_theta(draws.eps, before.params());
      break;
    case NeuralMethod::vsd:
      update_theta(eps_before, before.params());
      first_step = update_estimator();
      break;
    case NeuralMethod::l_vsd:
      first_step = update_estimator();
      update_theta(estimator_eps(state.net, out.x_t, draws.t, m), state.net.params());
      break;
    case NeuralMethod::l2_vsd: {
      CorrectionRequest req{out.x_t, draws.t, out.x_tp, first.t, first.eps, first.cond,
                            m.eta, m.last_layer_only, cfg.delta_mode};
      out.applied_correction = linearized_correction(before, req, m, &state.lora_opt);
      update_theta(eps_before + out.applied_correction, before.params());
      first_step = update_estimator();
      break;
    }
    case NeuralMethod::hl_vsd: {
      first_step = update_estimator();
      const Point delta_first = estimator_jvp(before, out.x_t, draws.t, m, first_step);
      out.applied_correction = hl_correction(before, state.net, out.x_t, draws.t, delta_first, m);
      update_theta(eps_before + out.applied_correction, state.net.params());
      break;
    }
  }

  TaylorTerms& tt = out.taylor;
  tt.eps_before = eps_before;
  tt.eps_after = estimator_eps(state.net, out.x_t, draws.t, m);
  tt.delta_first = estimator_jvp(before, out.x_t, draws.t, m, first_step);
  tt.delta_high = tt.eps_after - tt.eps_before - tt.delta_first;
  tt.norm_eps_phi = tt.eps_before.norm();
  tt.norm_delta_first = tt.delta_first.norm();
  tt.norm_delta_high = tt.delta_high.norm();
  tt.residual = ((tt.delta_first + tt.delta_high) - (tt.eps_after - tt.eps_before)).cwiseAbs().maxCoeff();
  ++state.step;
  return out;
}

TrajectoryRecord norm_table(const std::vector<NormRecord>& norms) {
  TrajectoryRecord t({"step", "norm_eps_phi", "norm_delta_first", "norm_delta_high", "lora_loss", "theta_loss"});
  for (const auto& n : norms)
    t.append({static_cast<double>(n.step), n.norm_eps_phi, n.norm_delta_first, n.norm_delta_high, n.lora_loss,
              n.theta_loss});
  return t;
}

namespace {

std::vector<std::string> neural_columns(int d) {
  std::vector<std::string> cols{"step", "t", "tp"};
  auto vec = [&](const std::string& name) {
    for (int i = 0; i < d; ++i) cols.push_back(name + "_" + std::to_string(i));
  };
  vec("x");
  vec("x_t");
  vec("x_tp");
  vec("eps_phi");
  vec("eps_after");
  vec("delta_first");
  vec("delta_high");
  vec("applied_correction");
  vec("theta_mean");
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) cols.push_back("theta_cov_" + std::to_string(i) + "_" + std::to_string(j));
  for (const char* c : {"lora_loss", "theta_loss", "norm_eps_phi", "norm_delta_first", "norm_delta_high",
                        "taylor_residual", "kl", "nan_count"})
    cols.emplace_back(c);
  return cols;
}

ParticleGaussian theta_gaussian(const NeuralState& st) {
  return st.theta_kind == ThetaKind::cloud ? moment_match(st.cloud.points) : st.gaussian;
}

}  // namespace

NeuralRunResult run_neural_experiment(const NeuralRunConfig& cfg) {
  cfg.validate();
  const int d = cfg.dim;
  const NoiseSchedule s = cfg.schedule.build();
  Rng rng(cfg.seed);
  const AnalyticTarget target = materialize(cfg.target, d, rng);
  Pretrained prior{target, std::nullopt, cfg.method.cfg_scale};
  if (cfg.uncond_target) prior.uncond = materialize(*cfg.uncond_target, d, rng);
  NeuralState state = initial_state(cfg, target, rng);
  NeuralRunResult res{cfg, target, TrajectoryRecord(neural_columns(d)), {}, state, {}, 0.0, {}};

  PointBatch vis_p, vis_z;
  if (cfg.vis_samples > 0) {
    Rng vis_rng(cfg.seed ^ 0x5DEECE66DULL);
    vis_p = sample_target(target, cfg.vis_samples, vis_rng);
    vis_z = vis_rng.normal_matrix(cfg.vis_samples, d).transpose();
  }

  for (long i = 0; i < cfg.total_steps; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    const IterationDraws draws = draw_iteration(cfg, rng);
    StepOutcome o;
    try {
      o = distill_step(state, draws, cfg, prior, s);
    } catch (const std::invalid_argument& e) {
      res.trajectory.truncated = true;
      res.trajectory.truncation_reason = "step " + std::to_string(i) + ": " + e.what();
      break;
    }
    res.iteration_seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    const TaylorTerms& tt = o.taylor;
    res.norms.push_back({i, tt.norm_eps_phi, tt.norm_delta_first, tt.norm_delta_high, o.lora_loss, o.theta_loss});

    if (!state.theta_finite() || !state.net.params().values().allFinite()) {
      res.trajectory.truncated = true;
      std::ostringstream os;
      os << "parameters became non-finite at step " << i;
      res.trajectory.truncation_reason = os.str();
      break;
    }
    if (i % cfg.logging_interval != 0 && i + 1 != cfg.total_steps) continue;

    std::vector<double> row{static_cast<double>(i), static_cast<double>(draws.t), static_cast<double>(o.tp)};
    for (const Point* v : std::initializer_list<const Point*>{&o.x, &o.x_t, &o.x_tp, &tt.eps_before, &tt.eps_after, &tt.delta_first, &tt.delta_high,
                           &o.applied_correction})
      row.insert(row.end(), v->data(), v->data() + v->size());
    const ParticleGaussian g = theta_gaussian(state);
    row.insert(row.end(), g.mu.data(), g.mu.data() + d);
    const Eigen::MatrixXd cov = g.covariance();
    for (int a = 0; a < d; ++a)
      for (int b = 0; b < d; ++b) row.push_back(cov(a, b));
    Rng div_rng = divergence_rng(cfg.seed, i);
    for (double v : {o.lora_loss, o.theta_loss, tt.norm_eps_phi, tt.norm_delta_first, tt.norm_delta_high,
                     tt.residual, divergence_to_target(g, res.target, cfg.kl_mc_samples, div_rng),
                     static_cast<double>(res.trajectory.nan_replacements)})
      row.push_back(v);
    res.trajectory.append(std::move(row));
    if (cfg.vis_samples > 0) {
      PointBatch q = state.theta_kind == ThetaKind::cloud
                         ? state.cloud.points
                         : PointBatch((state.gaussian.factor * vis_z).colwise() + state.gaussian.mu);
      res.snapshots.push_back({i, vis_p, std::move(q), PointBatch(d, 0)});
    }
  }

  if (state.theta_finite()) {
    Rng div_rng = divergence_rng(cfg.seed, -1);
    res.final_divergence = divergence_to_target(theta_gaussian(state), res.target, cfg.kl_mc_samples, div_rng);
  } else {
    res.final_divergence = std::nan("");
  }
  res.final_state = std::move(state);
  return res;
}

}  // namespace distill
