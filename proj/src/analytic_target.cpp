#include "distill/analytic_target.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace distill {

namespace {

struct PerturbedGaussian {
  Eigen::LLT<Eigen::MatrixXd> chol;
  Point mean;
};

std::optional<PerturbedGaussian> perturbed(const GaussianTarget& tgt, const NoiseLevel& level) {
  Eigen::MatrixXd cov = (level.alpha * level.alpha) * tgt.covariance();
  cov.diagonal().array() += level.sigma * level.sigma;
  PerturbedGaussian pg{Eigen::LLT<Eigen::MatrixXd>(cov), level.alpha * tgt.mu};
  if (pg.chol.info() != Eigen::Success) return std::nullopt;
  const Eigen::VectorXd diag = pg.chol.matrixLLT().diagonal();
  if (!(diag.minCoeff() > 0.0) || !diag.allFinite()) return std::nullopt;
  return pg;
}

PerturbedGaussian perturbed_or_throw(const GaussianTarget& tgt, const NoiseLevel& level) {
  auto pg = perturbed(tgt, level);
  if (!pg) {
    std::ostringstream os;
    os << "perturbed covariance is singular at noise level (alpha=" << level.alpha << ", sigma=" << level.sigma << ")";
    throw std::domain_error(os.str());
  }
  return std::move(*pg);
}

double log_normal(const Point& x, const PerturbedGaussian& pg) {
  const Point r = x - pg.mean;
  const Eigen::VectorXd white = pg.chol.matrixL().solve(r);
  const double log_det_half = pg.chol.matrixLLT().diagonal().array().log().sum();
  const double d = static_cast<double>(x.size());
  return -0.5 * white.squaredNorm() - 0.5 * d * std::log(2.0 * std::numbers::pi) - log_det_half;
}

void check_point(const Point& x, Eigen::Index dim) {
  if (x.size() != dim) {
    std::ostringstream os;
    os << "point has dimension " << x.size() << ", target has " << dim;
    throw std::invalid_argument(os.str());
  }
}

template <typename F>
auto at_timestep(int t, const NoiseSchedule& s, F&& f) {
  try {
    return f(s.level(t));
  } catch (const std::domain_error& e) {
    std::ostringstream os;
    os << "timestep " << t << ": " << e.what();
    throw std::domain_error(os.str());
  }
}

}  // namespace

void validate(const GaussianTarget& g) {
  if (g.mu.size() < 1) throw std::invalid_argument("gaussian target has empty mean");
  if (g.factor.rows() != g.mu.size() || g.factor.cols() != g.mu.size())
    throw std::invalid_argument("gaussian target factor must be d x d");
  if (!g.mu.allFinite() || !g.factor.allFinite()) throw std::invalid_argument("gaussian target has non-finite entries");
}

void validate(const MixtureTarget& m) {
  if (m.components.empty()) throw std::invalid_argument("mixture target has no components");
  double total = 0.0;
  bool any_positive = false;
  for (const auto& c : m.components) {
    validate(c.gaussian);
    if (c.gaussian.dim() != m.components.front().gaussian.dim())
      throw std::invalid_argument("mixture components differ in dimension");
    if (!(c.weight >= 0.0) || !std::isfinite(c.weight)) throw std::invalid_argument("mixture weights must be non-negative");
    any_positive = any_positive || c.weight > 0.0;
    total += c.weight;
  }
  if (!any_positive) throw std::invalid_argument("mixture needs at least one positive weight");
  if (std::abs(total - 1.0) > 1e-12) {
    std::ostringstream os;
    os << "mixture weights sum to " << total << ", expected 1";
    throw std::invalid_argument(os.str());
  }
}

void validate(const AnalyticTarget& tgt) {
  std::visit([](const auto& t) { validate(t); }, tgt);
}

Eigen::Index target_dim(const AnalyticTarget& tgt) {
  return std::visit([](const auto& t) { return t.dim(); }, tgt);
}

PointBatch sample_target(const GaussianTarget& tgt, int n, Rng& rng) {
  if (n < 1) throw std::invalid_argument("sample_target: n must be positive");
  const Eigen::MatrixXd z = rng.normal_matrix(n, tgt.dim()).transpose();
  return (tgt.factor * z).colwise() + tgt.mu;
}

PointBatch sample_target(const MixtureTarget& tgt, int n, Rng& rng) {
  if (n < 1) throw std::invalid_argument("sample_target: n must be positive");
  const Eigen::Index d = tgt.dim();
  const Eigen::MatrixXd z = rng.normal_matrix(n, d).transpose();
  PointBatch out(d, n);
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    std::size_t k = 0;
    double cumulative = tgt.components[0].weight;
    while (u >= cumulative && k + 1 < tgt.components.size()) cumulative += tgt.components[++k].weight;
    while (tgt.components[k].weight == 0.0 && k > 0) --k;  // u landed past a zero-weight tail
    const auto& g = tgt.components[k].gaussian;
    out.col(i) = g.mu + g.factor * z.col(i);
  }
  return out;
}

PointBatch sample_target(const AnalyticTarget& tgt, int n, Rng& rng) {
  return std::visit([&](const auto& t) { return sample_target(t, n, rng); }, tgt);
}

std::optional<Point> try_gaussian_perturbed_score(const Point& x_t, const GaussianTarget& tgt, const NoiseLevel& level) {
  check_point(x_t, tgt.dim());
  auto pg = perturbed(tgt, level);
  if (!pg) return std::nullopt;
  return Point(pg->chol.solve(Point(pg->mean - x_t)));
}

Point gaussian_perturbed_score(const Point& x_t, const GaussianTarget& tgt, const NoiseLevel& level) {
  check_point(x_t, tgt.dim());
  const auto pg = perturbed_or_throw(tgt, level);
  return pg.chol.solve(Point(pg.mean - x_t));
}

Point gaussian_perturbed_score(const Point& x_t, const GaussianTarget& tgt, int t, const NoiseSchedule& s) {
  return at_timestep(t, s, [&](const NoiseLevel& l) { return gaussian_perturbed_score(x_t, tgt, l); });
}

Eigen::VectorXd mixture_responsibilities(const Point& x_t, const MixtureTarget& tgt, const NoiseLevel& level) {
  check_point(x_t, tgt.dim());
  const auto k = static_cast<Eigen::Index>(tgt.components.size());
  Eigen::VectorXd logits = Eigen::VectorXd::Constant(k, -std::numeric_limits<double>::infinity());
  for (Eigen::Index i = 0; i < k; ++i) {
    const auto& c = tgt.components[static_cast<std::size_t>(i)];
    if (c.weight == 0.0) continue;
    logits[i] = std::log(c.weight) + log_normal(x_t, perturbed_or_throw(c.gaussian, level));
  }
  const double top = logits.maxCoeff();
  Eigen::VectorXd r = (logits.array() - top).exp();
  return r / r.sum();
}

Point mixture_perturbed_score(const Point& x_t, const MixtureTarget& tgt, const NoiseLevel& level) {
  const Eigen::VectorXd resp = mixture_responsibilities(x_t, tgt, level);
  Point score = Point::Zero(x_t.size());
  for (std::size_t i = 0; i < tgt.components.size(); ++i) {
    if (resp[static_cast<Eigen::Index>(i)] == 0.0) continue;
    score += resp[static_cast<Eigen::Index>(i)] * gaussian_perturbed_score(x_t, tgt.components[i].gaussian, level);
  }
  return score;
}

Point mixture_perturbed_score(const Point& x_t, const MixtureTarget& tgt, int t, const NoiseSchedule& s) {
  return at_timestep(t, s, [&](const NoiseLevel& l) { return mixture_perturbed_score(x_t, tgt, l); });
}

Point perturbed_score(const Point& x_t, const AnalyticTarget& tgt, const NoiseLevel& level) {
  if (const auto* g = std::get_if<GaussianTarget>(&tgt)) return gaussian_perturbed_score(x_t, *g, level);
  return mixture_perturbed_score(x_t, std::get<MixtureTarget>(tgt), level);
}

Point perturbed_score(const Point& x_t, const AnalyticTarget& tgt, int t, const NoiseSchedule& s) {
  return at_timestep(t, s, [&](const NoiseLevel& l) { return perturbed_score(x_t, tgt, l); });
}

double log_density_t(const Point& x_t, const GaussianTarget& tgt, const NoiseLevel& level) {
  check_point(x_t, tgt.dim());
  return log_normal(x_t, perturbed_or_throw(tgt, level));
}

double log_density_t(const Point& x_t, const MixtureTarget& tgt, const NoiseLevel& level) {
  check_point(x_t, tgt.dim());
  double top = -std::numeric_limits<double>::infinity();
  std::vector<double> logits;
  for (const auto& c : tgt.components) {
    if (c.weight == 0.0) continue;
    logits.push_back(std::log(c.weight) + log_normal(x_t, perturbed_or_throw(c.gaussian, level)));
    top = std::max(top, logits.back());
  }
  double acc = 0.0;
  for (double l : logits) acc += std::exp(l - top);
  return top + std::log(acc);
}

double log_density_t(const Point& x_t, const AnalyticTarget& tgt, const NoiseLevel& level) {
  return std::visit([&](const auto& t) { return log_density_t(x_t, t, level); }, tgt);
}

double log_density_t(const Point& x_t, const AnalyticTarget& tgt, int t, const NoiseSchedule& s) {
  return at_timestep(t, s, [&](const NoiseLevel& l) { return log_density_t(x_t, tgt, l); });
}

double log_density(const Point& x, const AnalyticTarget& tgt) { return log_density_t(x, tgt, NoiseLevel{1.0, 0.0}); }

GaussianTarget random_listing_target(int dim, Rng& rng) {
  GaussianTarget g;
  g.mu = Eigen::VectorXd(dim);
  for (int i = 0; i < dim; ++i) g.mu[i] = rng.uniform();
  g.factor = rng.uniform_matrix(dim, dim) + Eigen::MatrixXd::Identity(dim, dim);
  return g;
}

MixtureTarget two_mode_target(const Point& center, double separation) {
  const Eigen::Index d = center.size();
  Point offset = Point::Zero(d);
  offset[0] = 0.5 * separation;
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(d, d);
  return MixtureTarget{{{0.5, GaussianTarget{center - offset, eye}}, {0.5, GaussianTarget{center + offset, eye}}}};
}

AnalyticTarget materialize(const TargetSpec& spec, int dim, Rng& rng) {
  AnalyticTarget out;
  switch (spec.kind) {
    case TargetSpec::Kind::random_gaussian:
      out = random_listing_target(dim, rng);
      break;
    case TargetSpec::Kind::gaussian:
      out = spec.gaussian;
      break;
    case TargetSpec::Kind::mixture:
      out = spec.mixture;
      break;
    case TargetSpec::Kind::two_mode: {
      Point center(dim);
      for (int i = 0; i < dim; ++i) center[i] = rng.uniform();
      out = two_mode_target(center, spec.separation);
      break;
    }
  }
  validate(out);
  if (target_dim(out) != dim) {
    std::ostringstream os;
    os << "target has dimension " << target_dim(out) << ", run expects " << dim;
    throw std::invalid_argument(os.str());
  }
  return out;
}

Point target_mean(const AnalyticTarget& tgt) {
  if (const auto* g = std::get_if<GaussianTarget>(&tgt)) return g->mu;
  const auto& m = std::get<MixtureTarget>(tgt);
  Point mean = Point::Zero(m.dim());
  for (const auto& c : m.components) mean += c.weight * c.gaussian.mu;
  return mean;
}

}  // namespace distill
