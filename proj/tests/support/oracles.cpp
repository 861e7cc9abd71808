#include "oracles.hpp"

#include <cmath>
#include <numbers>
#include <ostream>

#include <Eigen/LU>

#include "distill/neural_lab.hpp"

namespace distill::oracle {

namespace {

std::vector<double> features(const NetArchitecture& arch, const Eigen::VectorXd& params, const Point& x_t, int t,
                             std::optional<int> cond) {
  std::vector<double> in(x_t.data(), x_t.data() + x_t.size());
  const double tau = double(t) / double(arch.num_timesteps);
  const double pi = std::numbers::pi;
  in.push_back(tau);
  in.push_back(std::sin(pi * tau));
  in.push_back(std::cos(pi * tau));
  in.push_back(std::sin(2 * pi * tau));
  in.push_back(std::cos(2 * pi * tau));
  if (arch.condition_count > 0) {
    // embedding table is stored first, one column per condition, null last
    const int column = cond ? *cond : arch.condition_count;
    for (int i = 0; i < arch.condition_width; ++i) in.push_back(params[column * arch.condition_width + i]);
  }
  return in;
}

}  // namespace

Point naive_forward(const DenoiserNet& net, const Eigen::VectorXd& params, const Point& x_t, int t,
                    std::optional<int> cond) {
  const NetArchitecture& arch = net.architecture();
  std::vector<double> a = features(arch, params, x_t, t, cond);
  std::size_t off = arch.condition_count > 0 ? std::size_t(arch.condition_width) * (arch.condition_count + 1) : 0;
  std::vector<int> widths = arch.hidden;
  widths.push_back(arch.data_dim);
  for (std::size_t l = 0; l < widths.size(); ++l) {
    const std::size_t rows = widths[l], cols = a.size();
    std::vector<double> z(rows, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
      double acc = params[static_cast<Eigen::Index>(off + rows * cols + r)];
      for (std::size_t c = 0; c < cols; ++c) acc += params[static_cast<Eigen::Index>(off + c * rows + r)] * a[c];
      z[r] = acc;
    }
    off += rows * cols + rows;
    if (l + 1 < widths.size() && arch.activation == Activation::tanh)
      for (double& v : z) v = std::tanh(v);
    a = std::move(z);
  }
  return Eigen::Map<const Point>(a.data(), static_cast<Eigen::Index>(a.size()));
}

Point fd_jvp(const DenoiserNet& net, const Point& x_t, int t, std::optional<int> cond, const Eigen::VectorXd& v,
             double h) {
  const Eigen::VectorXd& p = net.params().values();
  return (naive_forward(net, p + h * v, x_t, t, cond) - naive_forward(net, p - h * v, x_t, t, cond)) / (2 * h);
}

Eigen::VectorXd fd_loss_grad(const DenoiserNet& net, const Point& x_t, int t, std::optional<int> cond,
                             const Point& target, double h) {
  Eigen::VectorXd p = net.params().values();
  Eigen::VectorXd g(p.size());
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const double keep = p[i];
    p[i] = keep + h;
    const double up = (naive_forward(net, p, x_t, t, cond) - target).squaredNorm();
    p[i] = keep - h;
    const double down = (naive_forward(net, p, x_t, t, cond) - target).squaredNorm();
    p[i] = keep;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

double gaussian_log_density(const GaussianTarget& g, const Point& x, double alpha, double sigma) {
  const Eigen::Index d = x.size();
  const Eigen::MatrixXd cov =
      alpha * alpha * g.factor * g.factor.transpose() + sigma * sigma * Eigen::MatrixXd::Identity(d, d);
  const Eigen::FullPivLU<Eigen::MatrixXd> lu(cov);
  const Point diff = x - alpha * g.mu;
  const double quad = diff.dot(lu.inverse() * diff);
  return -0.5 * (double(d) * std::log(2 * std::numbers::pi) + std::log(lu.determinant()) + quad);
}

double log_density(const AnalyticTarget& tgt, const Point& x, double alpha, double sigma) {
  if (const auto* g = std::get_if<GaussianTarget>(&tgt)) return gaussian_log_density(*g, x, alpha, sigma);
  const auto& m = std::get<MixtureTarget>(tgt);
  double total = 0.0;
  for (const auto& c : m.components)
    if (c.weight > 0) total += c.weight * std::exp(gaussian_log_density(c.gaussian, x, alpha, sigma));
  return std::log(total);
}

Point closed_form_score(const AnalyticTarget& tgt, const Point& x, double alpha, double sigma) {
  const Eigen::Index d = x.size();
  auto component = [&](const GaussianTarget& g) -> Point {
    const Eigen::MatrixXd cov =
        alpha * alpha * g.factor * g.factor.transpose() + sigma * sigma * Eigen::MatrixXd::Identity(d, d);
    return -(cov.fullPivLu().inverse() * (x - alpha * g.mu));
  };
  if (const auto* g = std::get_if<GaussianTarget>(&tgt)) return component(*g);
  Point num = Point::Zero(d);
  double den = 0.0;
  for (const auto& c : std::get<MixtureTarget>(tgt).components) {
    const double p = c.weight * std::exp(gaussian_log_density(c.gaussian, x, alpha, sigma));
    num += p * component(c.gaussian);
    den += p;
  }
  return num / den;
}

Point fd_score(const AnalyticTarget& tgt, const Point& x, double alpha, double sigma, double h) {
  Point g(x.size());
  Point xp = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    xp[i] = x[i] + h;
    const double up = log_density(tgt, xp, alpha, sigma);
    xp[i] = x[i] - h;
    const double down = log_density(tgt, xp, alpha, sigma);
    xp[i] = x[i];
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

double quadrature_mass_2d(const AnalyticTarget& tgt, double alpha, double sigma, double half_width, int n) {
  const Point c = alpha * target_mean(tgt);
  const double step = 2 * half_width / n;
  double mass = 0.0;
  Point x(2);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      x << c[0] - half_width + (i + 0.5) * step, c[1] - half_width + (j + 0.5) * step;
      mass += std::exp(log_density(tgt, x, alpha, sigma));
    }
  return mass * step * step;
}

Level schedule_level(double beta_start, double beta_end, int steps, int t) {
  double a = 1.0;
  for (int s = 1; s <= t; ++s) {
    const double beta = steps == 1 ? beta_start : beta_start + (beta_end - beta_start) * (s - 1) / double(steps - 1);
    a *= 1.0 - beta;
  }
  return {a, std::sqrt((1 - a) / a)};
}

Point sds_reference(const AnalyticTarget& tgt, const Point& x, int t, const Point& eps, double beta_start,
                    double beta_end, int steps) {
  const Level lv = schedule_level(beta_start, beta_end, steps, t);
  const Point x_t = lv.alpha * x + lv.sigma * eps;
  const Point eps_pre = -lv.sigma * closed_form_score(tgt, x_t, lv.alpha, lv.sigma);
  return (1 - lv.alpha) * lv.sigma * (eps_pre - eps);
}

double sds_mismatch(const AnalyticTarget& tgt, const Point& x, int t, const Point& eps, const Point& grad) {
  const Level lv = schedule_level(1e-4, 0.02, 1000, t);
  const Point x_t = lv.alpha * x + lv.sigma * eps;
  const Point eps_pre = -lv.sigma * closed_form_score(tgt, x_t, lv.alpha, lv.sigma);
  const double scale = (1 - lv.alpha) * lv.sigma * (eps_pre.norm() + eps.norm());
  return (grad - sds_reference(tgt, x, t, eps, 1e-4, 0.02, 1000)).norm() / scale;
}

Point listing_grad_reference(GaussianMethod method, const Point& x, const Point& r_mu, const Eigen::MatrixXd& r_factor,
                             const GaussianTarget& p, double alpha, const Point& eps) {
  const double sigma = std::sqrt((1 - alpha) / alpha);
  const Point x_t = alpha * x + sigma * eps;
  const Eigen::Index d = x.size();
  auto score = [&](const Point& mu, const Eigen::MatrixXd& f) -> Point {
    const Eigen::MatrixXd cov = alpha * alpha * f * f.transpose() + sigma * sigma * Eigen::MatrixXd::Identity(d, d);
    return -(cov.fullPivLu().inverse() * (x_t - alpha * mu));
  };
  Point ref;
  switch (method) {
    case GaussianMethod::sds: ref = eps; break;
    case GaussianMethod::vsd:
    case GaussianMethod::overfit_delta: ref = -eps / sigma; break;
    default: ref = score(r_mu, r_factor);
  }
  return -(1 - alpha) * sigma * (score(p.mu, p.factor) - ref);
}

MonteCarloEstimate kl_mc_gaussians(const Point& mq, const Eigen::MatrixXd& cq, const Point& mp,
                                   const Eigen::MatrixXd& cp, int n, Rng& rng) {
  const Eigen::MatrixXd lq = cq.llt().matrixL();
  const GaussianTarget q{mq, lq};
  const GaussianTarget p{mp, Eigen::MatrixXd(cp.llt().matrixL())};
  double sum = 0, sum2 = 0;
  for (int k = 0; k < n; ++k) {
    const Point x = mq + lq * rng.normal_vector(mq.size());
    const double v = gaussian_log_density(q, x, 1.0, 0.0) - gaussian_log_density(p, x, 1.0, 0.0);
    sum += v;
    sum2 += v * v;
  }
  const double mean = sum / n;
  const double var = std::max(0.0, sum2 / n - mean * mean);
  return {mean, std::sqrt(var / n), n};
}

Point linear_lookahead_closed_form(const DenoiserNet& net, const Point& x_t, int t, const Point& x_tp, int tp,
                                   const Point& eps_p, double eta) {
  const NetArchitecture& arch = net.architecture();
  const auto& p = net.params().values();
  const auto a = features(arch, p, x_t, t, std::nullopt);
  const auto ap = features(arch, p, x_tp, tp, std::nullopt);
  double dot = 1.0;
  for (std::size_t i = 0; i < a.size(); ++i) dot += a[i] * ap[i];
  return -2 * eta * (naive_forward(net, x_tp, tp, std::nullopt) - eps_p) * dot;
}

NetArchitecture random_architecture(Rng& rng, int data_dim, bool conditioned) {
  NetArchitecture a;
  a.data_dim = data_dim;
  a.hidden.clear();
  const int layers = rng.uniform_int(1, 3);
  for (int l = 0; l < layers; ++l) a.hidden.push_back(rng.uniform_int(2, 12));
  a.activation = Activation::tanh;
  a.num_timesteps = 1000;
  if (conditioned) {
    a.condition_count = rng.uniform_int(1, 3);
    a.condition_width = rng.uniform_int(1, 4);
  }
  return a;
}

DenoiserNet random_net(const NetArchitecture& arch, Rng& rng, double scale) {
  DenoiserNet net = DenoiserNet::zeros(arch);
  Eigen::VectorXd v = scale * rng.normal_vector(net.params().size());
  return net.with_params(FlatParams(std::move(v), net.layout()));
}

GaussianRunConfig listing_defaults(GaussianMethod method, int n_render, bool two_mode) {
  GaussianRunConfig c;
  c.method = method;
  c.n_render = n_render;
  c.vis_samples = 0;
  if (two_mode) c.target.kind = TargetSpec::Kind::two_mode;
  return c;
}

FixturePilot run_fixture_pilot(int seeds, int workers) {
  const auto list = split_seeds(0, seeds);
  auto arm = [&](GaussianMethod m, int n_render, bool two_mode) {
    const GaussianRunConfig base = listing_defaults(m, n_render, two_mode);
    return run_ensemble(std::string(to_string(m)),
                        [base](std::uint64_t s) {
                          GaussianRunConfig c = base;
                          c.seed = s;
                          return run_gaussian_experiment(c).final_kl;
                        },
                        list, workers)
        .median;
  };
  return {arm(GaussianMethod::l_vsd, 1, false), arm(GaussianMethod::real_vsd, 1, false),
          arm(GaussianMethod::real_vsd, 4, false), arm(GaussianMethod::l_vsd, 1, true),
          arm(GaussianMethod::overfit_delta, 1, true)};
}

namespace {

double rel_err(const Point& a, const Point& b) {
  return (a - b).norm() / std::max({a.norm(), b.norm(), 1e-12});
}

bool jvp_suite(std::ostream& os) {
  Rng rng(101);
  double worst = 0;
  for (int k = 0; k < 100; ++k) {
    const DenoiserNet net = random_net(random_architecture(rng, 2, k % 2 == 1), rng);
    const Point x = rng.normal_vector(2);
    const int t = rng.uniform_int(0, 1000);
    const ParamTangent v(rng.normal_vector(net.params().size()), net.layout());
    worst = std::max(worst, rel_err(net_jvp(net, x, t, std::nullopt, v), fd_jvp(net, x, t, std::nullopt, v.values())));
  }
  os << "jvp vs central differences, 100 nets: max relative error " << worst << "\n";
  return worst < 1e-5;
}

bool scores_suite(std::ostream& os) {
  Rng rng(202);
  const NoiseSchedule s = make_schedule(1e-4, 0.02, 1000);
  double worst = 0;
  for (int k = 0; k < 100; ++k) {
    const int d = rng.uniform_int(1, 3);
    AnalyticTarget tgt = k % 2 ? AnalyticTarget(random_listing_target(d, rng))
                               : AnalyticTarget(two_mode_target(rng.normal_vector(d), rng.uniform(1, 6)));
    const int t = rng.uniform_int(1, 1000);
    const NoiseLevel lv = s.level(t);
    const Point x = lv.alpha * target_mean(tgt) + rng.normal_vector(d);
    const double h = 1e-4 * std::sqrt(lv.alpha * lv.alpha + lv.sigma * lv.sigma);
    worst = std::max(worst, rel_err(perturbed_score(x, tgt, lv), fd_score(tgt, x, lv.alpha, lv.sigma, h)));
  }
  os << "perturbed scores vs numeric log-density gradients, 100 triples: max relative error " << worst << "\n";
  const MixtureTarget mix = two_mode_target(Point::Zero(2), 4.0);
  const double mass = quadrature_mass_2d(mix, 0.9, 0.5, 12.0, 400);
  os << "quadrature mass of a perturbed two-mode density: " << mass << "\n";
  return worst < 1e-6 && std::abs(mass - 1) < 1e-3;
}

bool sds_suite(std::ostream& os) {
  Rng rng(303);
  const NoiseSchedule s = make_schedule(1e-4, 0.02, 1000);
  double worst = 0;
  for (int k = 0; k < 100; ++k) {
    const AnalyticTarget tgt = random_listing_target(2, rng);
    const Point x = rng.normal_vector(2);
    const Point eps = rng.normal_vector(2);
    const int t = rng.uniform_int(1, 1000);
    const Pretrained prior{tgt, std::nullopt, std::nullopt};
    worst = std::max(worst, sds_mismatch(tgt, x, t, eps, sds_grad(prior, x, t, eps, s)));
  }
  os << "sds_grad vs independent reference, 100 draws: max error relative to the operand scale " << worst << "\n";
  return worst < 1e-12;
}

bool kl_suite(std::ostream& os) {
  Rng rng(404);
  const GaussianTarget p = random_listing_target(2, rng);
  const ParticleGaussian q{rng.normal_vector(2), rng.uniform_matrix(2, 2) + Eigen::MatrixXd::Identity(2, 2)};
  const double closed = gaussian_kl(q, p);
  const MonteCarloEstimate mc = kl_mc_gaussians(q.mu, q.covariance(), p.mu, p.covariance(), 1000000, rng);
  os << "gaussian_kl " << closed << " vs Monte Carlo " << mc.value << " +- " << mc.std_error << "\n";
  return std::abs(closed - mc.value) < 3 * mc.std_error;
}

bool fixtures_suite(std::ostream& os) {
  const FixturePilot f = run_fixture_pilot(20, 1);
  os << "pilot over seeds 0..19 (listing defaults)\n"
     << "  l-vsd median KL             " << f.lvsd_median << "\n"
     << "  real-vsd median KL          " << f.real_vsd_median << "\n"
     << "  real-vsd n_render=4 median  " << f.real_vsd_n4_median << "\n"
     << "  two-mode l-vsd median       " << f.mixture_lvsd_median << "\n"
     << "  two-mode overfit-delta      " << f.mixture_overfit_median << "\n"
     << "  overfit / l-vsd ratio       " << f.mixture_overfit_median / f.mixture_lvsd_median << "\n";
  return f.lvsd_median < f.real_vsd_median;
}

}  // namespace

std::vector<Suite> suites() {
  return {{"jvp", "forward-mode JVP against central differences", jvp_suite},
          {"scores", "analytic perturbed scores against numeric gradients and quadrature", scores_suite},
          {"sds", "SDS gradient against an independent reimplementation", sds_suite},
          {"kl", "closed-form Gaussian KL against 10^6-sample Monte Carlo", kl_suite},
          {"fixtures", "pilot ensembles behind the acceptance fixtures", fixtures_suite}};
}

}  // namespace distill::oracle
