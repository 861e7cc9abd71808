#include <doctest.h>

#include <cmath>
#include <numbers>

#include "distill/analytic_target.hpp"
#include "oracles.hpp"

using namespace distill;

namespace {

double rel(const Point& a, const Point& b) { return (a - b).norm() / std::max({a.norm(), b.norm(), 1e-300}); }

GaussianTarget gauss(Point mu, Eigen::MatrixXd factor) { return {std::move(mu), std::move(factor)}; }

MixtureTarget random_mixture(int d, int k, Rng& rng) {
  MixtureTarget m;
  double total = 0;
  for (int i = 0; i < k; ++i) {
    const double w = rng.uniform(0.2, 1.0);
    total += w;
    m.components.push_back({w, gauss(3 * rng.normal_vector(d), rng.uniform_matrix(d, d) + 0.5 * Eigen::MatrixXd::Identity(d, d))});
  }
  for (auto& c : m.components) c.weight /= total;
  double sum = 0;
  for (std::size_t i = 0; i + 1 < m.components.size(); ++i) sum += m.components[i].weight;
  m.components.back().weight = 1.0 - sum;
  return m;
}

}  // namespace

TEST_CASE("sampling a degenerate Gaussian returns its mean") {
  Rng rng(1);
  Point mu(2);
  mu << 1.5, -2;
  const PointBatch x = sample_target(gauss(mu, Eigen::MatrixXd::Zero(2, 2)), 10, rng);
  for (Eigen::Index k = 0; k < x.cols(); ++k) CHECK(x.col(k) == mu);
}

TEST_CASE("standard normal samples have mean 0 and covariance I within 3 standard errors") {
  Rng rng(2);
  const int n = 100000;
  const PointBatch x = sample_target(gauss(Point::Zero(2), Eigen::MatrixXd::Identity(2, 2)), n, rng);
  const Point mean = x.rowwise().mean();
  for (int i = 0; i < 2; ++i) CHECK(std::abs(mean[i]) < 3.0 / std::sqrt(n));
  const Eigen::MatrixXd cov = (x.colwise() - mean) * (x.colwise() - mean).transpose() / n;
  // var of x_i x_j is 2 on the diagonal and 1 off it
  CHECK(std::abs(cov(0, 0) - 1) < 3 * std::sqrt(2.0 / n));
  CHECK(std::abs(cov(1, 1) - 1) < 3 * std::sqrt(2.0 / n));
  CHECK(std::abs(cov(0, 1)) < 3 * std::sqrt(1.0 / n));
}

TEST_CASE("mixture with weights (1, 0) samples exactly its first component") {
  Rng a(3), b(3), r(9);
  const GaussianTarget g1 = random_listing_target(2, r), g2 = random_listing_target(2, r);
  const MixtureTarget m{{{1.0, g1}, {0.0, g2}}};
  const PointBatch xm = sample_target(m, 50, a);
  const PointBatch xg = sample_target(g1, 50, b);
  CHECK(xm == xg);
}

TEST_CASE("mixture validation") {
  Rng r(4);
  const GaussianTarget g = random_listing_target(2, r);
  CHECK_NOTHROW(validate(MixtureTarget{{{0.25, g}, {0.75, g}}}));
  CHECK_THROWS(validate(MixtureTarget{{{0.5, g}, {0.6, g}}}));
  CHECK_THROWS(validate(MixtureTarget{{{-0.5, g}, {1.5, g}}}));
  CHECK_THROWS(validate(MixtureTarget{{}}));
}

TEST_CASE("gaussian perturbed score: mode, pure noise, singular covariance") {
  const NoiseSchedule s = make_schedule(1e-4, 0.02, 1000);
  Rng rng(5);
  const GaussianTarget g = random_listing_target(2, rng);
  const int t = 123;
  const NoiseLevel lv = s.level(t);
  CHECK(gaussian_perturbed_score(lv.alpha * g.mu, g, t, s).norm() < 1e-14);

  const Point x = rng.normal_vector(2);
  const GaussianTarget noise = gauss(Point::Zero(2), Eigen::MatrixXd::Zero(2, 2));
  CHECK(rel(gaussian_perturbed_score(x, noise, t, s), -x / (lv.sigma * lv.sigma)) < 1e-14);

  try {
    gaussian_perturbed_score(x, noise, 0, s);
    FAIL("expected a singular covariance error");
  } catch (const std::domain_error& e) {
    CHECK(std::string(e.what()).find("timestep 0") != std::string::npos);
  }
}

TEST_CASE("perturbed scores match numeric log-density gradients") {
  const NoiseSchedule s = make_schedule(1e-4, 0.02, 1000);
  Rng rng(6);
  for (int k = 0; k < 100; ++k) {
    const int d = rng.uniform_int(1, 3);
    const AnalyticTarget tgt =
        k % 2 ? AnalyticTarget(random_listing_target(d, rng)) : AnalyticTarget(random_mixture(d, 3, rng));
    const int t = rng.uniform_int(1, 1000);
    const NoiseLevel lv = s.level(t);
    const Point x = lv.alpha * target_mean(tgt) + std::sqrt(lv.alpha * lv.alpha + lv.sigma * lv.sigma) * rng.normal_vector(d);
    const double h = 1e-4 * std::sqrt(lv.alpha * lv.alpha + lv.sigma * lv.sigma);
    CHECK(rel(perturbed_score(x, tgt, t, s), oracle::fd_score(tgt, x, lv.alpha, lv.sigma, h)) < 1e-6);
    // and against the library's own density
    Point fd(d);
    for (int i = 0; i < d; ++i) {
      Point up = x, down = x;
      up[i] += h;
      down[i] -= h;
      fd[i] = (log_density_t(up, tgt, lv) - log_density_t(down, tgt, lv)) / (2 * h);
    }
    CHECK(rel(perturbed_score(x, tgt, lv), fd) < 1e-6);
  }
}

TEST_CASE("perturbed Gaussian score is affine in x_t") {
  const NoiseSchedule s = make_schedule(1e-4, 0.02, 1000);
  Rng rng(7);
  const GaussianTarget g = random_listing_target(2, rng);
  const NoiseLevel lv = s.level(40);
  const Eigen::MatrixXd cov = lv.alpha * lv.alpha * g.covariance() + lv.sigma * lv.sigma * Eigen::MatrixXd::Identity(2, 2);
  const Point x1 = rng.normal_vector(2), x2 = rng.normal_vector(2);
  const Point diff = gaussian_perturbed_score(x1, g, lv) - gaussian_perturbed_score(x2, g, lv);
  CHECK(rel(diff, -cov.inverse() * (x1 - x2)) < 1e-12);
}

TEST_CASE("mixture score: single component, symmetry, responsibilities") {
  const NoiseSchedule s = make_schedule(1e-4, 0.02, 1000);
  Rng rng(8);
  const GaussianTarget g = random_listing_target(2, rng);
  const Point x = rng.normal_vector(2);
  CHECK(rel(mixture_perturbed_score(x, MixtureTarget{{{1.0, g}}}, 77, s), gaussian_perturbed_score(x, g, 77, s)) <
        1e-14);

  Point center(2);
  center << 0.4, -0.3;
  const MixtureTarget two = two_mode_target(center, 6.0);
  const NoiseLevel lv = s.level(20);
  const Point score = mixture_perturbed_score(lv.alpha * center, two, lv);
  CHECK(std::abs(score[0]) < 1e-13);

  for (int k = 0; k < 50; ++k) {
    const MixtureTarget m = random_mixture(2, 4, rng);
    const Eigen::VectorXd r = mixture_responsibilities(10 * rng.normal_vector(2), m, s.level(rng.uniform_int(1, 1000)));
    CHECK(std::abs(r.sum() - 1.0) < 1e-12);
    CHECK(r.minCoeff() >= 0.0);
  }
  // far from every mode the naive exponentials underflow; max-subtraction keeps the score finite
  Point far(2);
  far << 200.0, 0.0;
  CHECK(mixture_perturbed_score(far, two, s.level(1)).allFinite());
}

TEST_CASE("log density constant, shift invariance and normalization") {
  const GaussianTarget std2 = gauss(Point::Zero(2), Eigen::MatrixXd::Identity(2, 2));
  CHECK(log_density_t(Point::Zero(2), std2, NoiseLevel{1.0, 0.0}) ==
        doctest::Approx(-std::log(2 * std::numbers::pi)).epsilon(1e-14));

  const NoiseSchedule s = make_schedule(1e-4, 0.02, 1000);
  Rng rng(9);
  const GaussianTarget g = random_listing_target(2, rng);
  const NoiseLevel lv = s.level(300);
  const Point x = rng.normal_vector(2), delta = rng.normal_vector(2);
  const GaussianTarget shifted = gauss(g.mu + delta / lv.alpha, g.factor);
  CHECK(log_density_t(x, g, lv) == doctest::Approx(log_density_t(x + delta, shifted, lv)).epsilon(1e-12));

  for (const AnalyticTarget& tgt : {AnalyticTarget(g), AnalyticTarget(two_mode_target(Point::Zero(2), 3.0))}) {
    const NoiseLevel mild = s.level(10);
    const double step = 20.0 / 500;
    double mass = 0;
    Point p(2);
    for (int i = 0; i < 500; ++i)
      for (int j = 0; j < 500; ++j) {
        p << -10 + (i + 0.5) * step, -10 + (j + 0.5) * step;
        mass += std::exp(log_density_t(p, tgt, mild));
      }
    CHECK(std::abs(mass * step * step - 1.0) < 1e-3);
  }
}

TEST_CASE("listing target and two-mode builders") {
  Rng rng(10);
  const GaussianTarget g = random_listing_target(3, rng);
  CHECK(g.mu.minCoeff() >= 0.0);
  CHECK(g.mu.maxCoeff() < 1.0);
  CHECK((g.factor - Eigen::MatrixXd::Identity(3, 3)).minCoeff() >= 0.0);
  const MixtureTarget m = two_mode_target(Point::Zero(2), 6.0);
  REQUIRE(m.components.size() == 2);
  CHECK(m.components[0].gaussian.mu[0] == -3.0);
  CHECK(m.components[1].gaussian.mu[0] == 3.0);
  CHECK(target_mean(m).isZero(0.0));
}
