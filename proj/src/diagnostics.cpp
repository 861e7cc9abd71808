#include "distill/diagnostics.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace distill {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Eigen::MatrixXd ridged(const Eigen::MatrixXd& cov) {
  Eigen::MatrixXd c = 0.5 * (cov + cov.transpose());
  c.diagonal().array() += kCovarianceRidge;
  return c;
}

Eigen::LLT<Eigen::MatrixXd> factorize(const Eigen::MatrixXd& cov, const char* what) {
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success) throw std::domain_error(std::string(what) + ": covariance is not positive definite");
  return llt;
}

double log_det(const Eigen::LLT<Eigen::MatrixXd>& llt) { return 2.0 * llt.matrixLLT().diagonal().array().log().sum(); }

/// Gaussian log-density with its factorization computed once.
class GaussianDensity {
 public:
  GaussianDensity(Point mean, const Eigen::MatrixXd& cov)
      : mean_(std::move(mean)), llt_(factorize(cov, "density")) {
    const double d = static_cast<double>(mean_.size());
    log_norm_ = -0.5 * d * std::log(2.0 * std::numbers::pi) - 0.5 * log_det(llt_);
  }

  /// Log-density of every column of xs.
  Eigen::ArrayXd log_pdf(const PointBatch& xs) const {
    const Eigen::MatrixXd white = llt_.matrixL().solve(xs.colwise() - mean_);
    return log_norm_ - 0.5 * white.colwise().squaredNorm().transpose().array();
  }

 private:
  Point mean_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
  double log_norm_ = 0.0;
};

class MixtureDensity {
 public:
  explicit MixtureDensity(const MixtureTarget& p) {
    for (const auto& c : p.components) {
      if (c.weight == 0.0) continue;
      log_weights_.push_back(std::log(c.weight));
      parts_.emplace_back(c.gaussian.mu, ridged(c.gaussian.covariance()));
    }
  }

  Eigen::ArrayXd log_pdf(const PointBatch& xs) const {
    Eigen::MatrixXd l(xs.cols(), static_cast<Eigen::Index>(parts_.size()));
    for (std::size_t k = 0; k < parts_.size(); ++k)
      l.col(static_cast<Eigen::Index>(k)) = log_weights_[k] + parts_[k].log_pdf(xs);
    const Eigen::VectorXd top = l.rowwise().maxCoeff();
    const Eigen::ArrayXd acc = (l.colwise() - top).array().exp().rowwise().sum();
    return top.array() + acc.log();
  }

 private:
  std::vector<double> log_weights_;
  std::vector<GaussianDensity> parts_;
};

void require_finite(const ParticleGaussian& q) {
  if (!q.finite()) throw std::domain_error("divergence: particle parameters are not finite");
}

MonteCarloEstimate summarize_samples(const Eigen::ArrayXd& f) {
  const double n = static_cast<double>(f.size());
  const double mean = f.mean();
  const double sd = std::sqrt((f - mean).square().sum() / (n - 1.0));
  return {mean, sd / std::sqrt(n), static_cast<int>(f.size())};
}

}  // namespace

double gaussian_kl(const Point& mean_q, const Eigen::MatrixXd& cov_q, const Point& mean_p, const Eigen::MatrixXd& cov_p) {
  if (!mean_q.allFinite() || !cov_q.allFinite() || !mean_p.allFinite() || !cov_p.allFinite())
    throw std::domain_error("gaussian_kl: non-finite parameters");
  const auto d = static_cast<double>(mean_q.size());
  const Eigen::MatrixXd sq = ridged(cov_q);
  const auto lq = factorize(sq, "gaussian_kl (q)");
  const auto lp = factorize(ridged(cov_p), "gaussian_kl (p)");
  const double trace = lp.solve(sq).trace();
  const Point dm = mean_p - mean_q;
  const double maha = dm.dot(lp.solve(dm));
  const double kl = 0.5 * (trace + maha - d + log_det(lp) - log_det(lq));
  return std::max(0.0, kl);
}

double gaussian_kl(const ParticleGaussian& q, const GaussianTarget& p) {
  return gaussian_kl(q.mu, q.covariance(), p.mu, p.covariance());
}

double symmetric_gaussian_kl(const ParticleGaussian& q, const GaussianTarget& p) {
  return gaussian_kl(q.mu, q.covariance(), p.mu, p.covariance()) +
         gaussian_kl(p.mu, p.covariance(), q.mu, q.covariance());
}

MonteCarloEstimate mixture_kl_mc(const ParticleGaussian& q, const MixtureTarget& p, int n, Rng& rng) {
  if (n < kMinMixtureKlSamples) throw std::invalid_argument("mixture_kl_mc: needs at least 10^4 samples");
  require_finite(q);
  const GaussianDensity qd(q.mu, ridged(q.covariance()));
  const MixtureDensity pd(p);
  const PointBatch xs = (q.factor * rng.normal_matrix(n, q.dim()).transpose()).colwise() + q.mu;
  return summarize_samples(qd.log_pdf(xs) - pd.log_pdf(xs));
}

MonteCarloEstimate mixture_reverse_kl_mc(const ParticleGaussian& q, const MixtureTarget& p, int n, Rng& rng) {
  if (n < kMinMixtureKlSamples) throw std::invalid_argument("mixture_reverse_kl_mc: needs at least 10^4 samples");
  require_finite(q);
  const GaussianDensity qd(q.mu, ridged(q.covariance()));
  const MixtureDensity pd(p);
  const PointBatch xs = sample_target(p, n, rng);
  return summarize_samples(pd.log_pdf(xs) - qd.log_pdf(xs));
}

double divergence_to_target(const ParticleGaussian& q, const AnalyticTarget& p, int mc_samples, Rng& rng) {
  if (const auto* g = std::get_if<GaussianTarget>(&p)) return gaussian_kl(q, *g);
  return mixture_kl_mc(q, std::get<MixtureTarget>(p), mc_samples, rng).value;
}

double symmetric_divergence_to_target(const ParticleGaussian& q, const AnalyticTarget& p, int mc_samples, Rng& rng) {
  if (const auto* g = std::get_if<GaussianTarget>(&p)) return symmetric_gaussian_kl(q, *g);
  const auto& m = std::get<MixtureTarget>(p);
  return mixture_kl_mc(q, m, mc_samples, rng).value + mixture_reverse_kl_mc(q, m, mc_samples, rng).value;
}

ParticleGaussian moment_match(const PointBatch& points) {
  if (points.cols() < 1) throw std::invalid_argument("moment_match: empty point set");
  const Point mean = points.rowwise().mean();
  const Eigen::MatrixXd centered = points.colwise() - mean;
  const Eigen::MatrixXd cov = centered * centered.transpose() / static_cast<double>(points.cols());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  const Eigen::VectorXd root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return {mean, eig.eigenvectors() * root.asDiagonal() * eig.eigenvectors().transpose()};
}

TaylorTerms taylor_terms(const DenoiserNet& before, const DenoiserNet& after, const TaylorProbe& probe,
                         const Point& delta_first) {
  if (!(before.architecture() == after.architecture()))
    throw std::invalid_argument("taylor terms: networks differ in architecture");
  TaylorTerms out;
  out.eps_before = net_forward(before, probe.x_t, probe.t, probe.cond);
  out.eps_after = net_forward(after, probe.x_t, probe.t, probe.cond);
  out.delta_first = delta_first;
  out.delta_high = out.eps_after - out.eps_before - delta_first;
  out.norm_eps_phi = out.eps_before.norm();
  out.norm_delta_first = out.delta_first.norm();
  out.norm_delta_high = out.delta_high.norm();
  out.residual = ((out.delta_first + out.delta_high) - (out.eps_after - out.eps_before)).cwiseAbs().maxCoeff();
  return out;
}

std::vector<TaylorTerms> taylor_report(const DenoiserNet& before, const DenoiserNet& after,
                                       std::span<const TaylorProbe> probes) {
  if (!(before.architecture() == after.architecture()))
    throw std::invalid_argument("taylor_report: networks differ in architecture");
  const ParamTangent step = after.params() - before.params();
  std::vector<TaylorTerms> out;
  out.reserve(probes.size());
  for (const auto& p : probes)
    out.push_back(taylor_terms(before, after, p, net_jvp(before, p.x_t, p.t, p.cond, step)));
  return out;
}

int EnsembleSummary::failures() const {
  int n = 0;
  for (std::size_t i = 0; i < values.size(); ++i)
    if (!std::isfinite(values[i]) || (i < errors.size() && !errors[i].empty())) ++n;
  return n;
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw std::invalid_argument("quantile of an empty list");
  for (double& v : values)
    if (!std::isfinite(v)) v = kInf;
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  if (frac == 0.0 || lo == hi) return values[lo];
  if (std::isinf(values[hi])) return kInf;
  return values[lo] + frac * (values[hi] - values[lo]);
}

EnsembleSummary summarize(std::string label, std::vector<std::uint64_t> seeds, std::vector<double> values,
                          std::vector<std::string> errors) {
  if (seeds.size() != values.size()) throw std::invalid_argument("summarize: seeds and values differ in length");
  errors.resize(values.size());
  EnsembleSummary s{std::move(label), std::move(seeds), std::move(values), std::move(errors)};
  s.median = quantile(s.values, 0.5);
  s.q1 = quantile(s.values, 0.25);
  s.q3 = quantile(s.values, 0.75);
  return s;
}

const char* to_string(Ordering o) {
  switch (o) {
    case Ordering::a_lower: return "a_lower";
    case Ordering::b_lower: return "b_lower";
    case Ordering::tie: return "tie";
  }
  return "tie";
}

EnsembleSummary run_ensemble(const std::string& label, const SeedRunner& runner, std::span<const std::uint64_t> seeds,
                             int workers) {
  const std::size_t n = seeds.size();
  std::vector<double> values(n, std::nan(""));
  std::vector<std::string> errors(n);
  auto run_one = [&](std::size_t i) {
    try {
      values[i] = runner(seeds[i]);
    } catch (const std::exception& e) {
      values[i] = std::nan("");
      errors[i] = e.what();
    }
  };
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) run_one(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    const auto count = std::min<std::size_t>(static_cast<std::size_t>(workers), n);
    for (std::size_t w = 0; w < count; ++w)
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) run_one(i);
      });
    for (auto& th : pool) th.join();
  }
  return summarize(label, {seeds.begin(), seeds.end()}, std::move(values), std::move(errors));
}

EnsembleComparison ensemble_compare(const std::string& label_a, const SeedRunner& run_a, const std::string& label_b,
                                    const SeedRunner& run_b, std::span<const std::uint64_t> seeds, int workers) {
  if (seeds.size() < 2) throw std::invalid_argument("ensemble_compare: needs at least two seeds");
  EnsembleComparison c{run_ensemble(label_a, run_a, seeds, workers), run_ensemble(label_b, run_b, seeds, workers)};
  const double a = c.a.median;
  const double b = c.b.median;
  if (a == b) {
    c.median_difference = 0.0;
    c.verdict = Ordering::tie;
  } else {
    c.median_difference = a - b;
    c.verdict = a < b ? Ordering::a_lower : Ordering::b_lower;
  }
  return c;
}

std::vector<std::uint64_t> split_seeds(std::uint64_t base, int count) {
  if (count < 1) throw std::invalid_argument("seed count must be positive");
  std::vector<std::uint64_t> out;
  for (int i = 0; i < count; ++i) out.push_back(base + static_cast<std::uint64_t>(i));
  return out;
}

}  // namespace distill
