#include <doctest.h>

#include <cmath>

#include "distill/analytic_target.hpp"
#include "distill/noise_schedule.hpp"
#include "oracles.hpp"

using namespace distill;

TEST_CASE("constant beta gives alpha_bar = (1 - c)^t") {
  const double c = 0.01;
  const NoiseSchedule s = make_schedule(c, c, 50);
  for (int t = 0; t <= 50; ++t) CHECK(s.alpha_bar()[t] == doctest::Approx(std::pow(1 - c, t)).epsilon(1e-14));
}

TEST_CASE("reference schedule is monotone and matches a scalar recomputation") {
  const NoiseSchedule s = make_schedule(1e-4, 0.02, 1000);
  CHECK(s.alpha_bar()[0] == 1.0);
  CHECK(s.sigma()[0] == 0.0);
  for (int t = 1; t <= 1000; ++t) {
    CHECK(s.alpha_bar()[t] < s.alpha_bar()[t - 1]);
    CHECK(s.sigma()[t] > s.sigma()[t - 1]);
    CHECK(s.alpha_bar()[t] > 0.0);
  }
  const auto ref = oracle::schedule_level(1e-4, 0.02, 1000, 1000);
  CHECK(s.level(1000).alpha == doctest::Approx(ref.alpha).epsilon(1e-12));
  CHECK(s.level(1000).sigma == doctest::Approx(ref.sigma).epsilon(1e-12));
}

TEST_CASE("schedule bounds are validated") {
  CHECK_THROWS(make_schedule(0.0, 0.02, 10));
  CHECK_THROWS(make_schedule(0.03, 0.02, 10));
  CHECK_THROWS(make_schedule(1e-4, 1.0, 10));
  CHECK_THROWS(make_schedule(1e-4, 0.02, 0));
  const NoiseSchedule s = make_schedule(1e-4, 0.02, 10);
  CHECK_THROWS(s.level(11));
  CHECK_THROWS(s.level(-1));
}

TEST_CASE("perturb: noiseless, identity and inversion") {
  const NoiseSchedule s = make_schedule(1e-4, 0.02, 1000);
  Rng rng(1);
  const Point x0 = rng.normal_vector(3);
  CHECK((perturb(x0, 400, Point::Zero(3), s) - s.level(400).alpha * x0).isZero(0.0));
  CHECK(perturb(x0, 0, rng.normal_vector(3), s) == x0);
  for (int k = 0; k < 200; ++k) {
    const int t = rng.uniform_int(1, 1000);
    const Point eps = rng.normal_vector(3);
    const Point x_t = perturb(x0, t, eps, s);
    const NoiseLevel lv = s.level(t);
    // relative to the operands of the inversion, whose difference is divided by alpha_bar
    const double scale = (x_t.norm() + lv.sigma * eps.norm()) / lv.alpha;
    CHECK(((x_t - lv.sigma * eps) / lv.alpha - x0).norm() < 1e-12 * scale);
  }
}

TEST_CASE("weight w = (1 - alpha_bar) sigma") {
  const double beta = 0.01;
  const NoiseSchedule c = make_schedule(beta, beta, 10);
  CHECK(weight_w(1, c) == doctest::Approx(beta * std::sqrt(beta / (1 - beta))).epsilon(1e-14));
  CHECK(weight_w(NoiseLevel{1.0, 0.0}) == 0.0);
  CHECK(weight_w(NoiseLevel::from_alpha(1 - 1e-12)) < 1e-17);

  const NoiseSchedule s = make_schedule(1e-4, 0.02, 1000);
  for (int t : {1, 17, 250, 999}) {
    const auto ref = oracle::schedule_level(1e-4, 0.02, 1000, t);
    CHECK(weight_w(t, s) == doctest::Approx((1 - ref.alpha) * ref.sigma).epsilon(1e-12));
    CHECK(weight_w(t, s) > 0.0);
  }
}

TEST_CASE("score_to_eps conventions") {
  const NoiseSchedule s = make_schedule(1e-4, 0.02, 1000);
  CHECK(score_to_eps(Point::Zero(2), 10, s).isZero(0.0));
  Point x(2);
  x << 0.3, -1.2;
  CHECK(score_to_eps(-x, NoiseLevel{1.0, 1.0}) == x);
}

TEST_CASE("predicted noise is the conditional mean of the injected noise") {
  // E[(eps_hat(x_t) - eps) x_t^T] = 0 and E[eps_hat - eps] = 0 over (x0 ~ p, eps).
  Rng rng(5);
  const GaussianTarget p = random_listing_target(2, rng);
  const NoiseSchedule s = make_schedule(1e-4, 0.02, 1000);
  const int t = 300;
  const int n = 100000;
  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(2, 3), sum2 = Eigen::MatrixXd::Zero(2, 3);
  for (int k = 0; k < n; ++k) {
    const Point x0 = p.mu + p.factor * rng.normal_vector(2);
    const Point eps = rng.normal_vector(2);
    const Point x_t = perturb(x0, t, eps, s);
    const Point r = score_to_eps(gaussian_perturbed_score(x_t, p, t, s), t, s) - eps;
    Eigen::MatrixXd m(2, 3);
    m.col(0) = r;
    m.col(1) = r * x_t[0];
    m.col(2) = r * x_t[1];
    sum += m;
    sum2 += m.cwiseAbs2();
  }
  const Eigen::MatrixXd mean = sum / n;
  const Eigen::MatrixXd se = ((sum2 / n - mean.cwiseAbs2()) / n).cwiseSqrt();
  for (Eigen::Index i = 0; i < mean.size(); ++i) CHECK(std::abs(mean.data()[i]) < 3 * se.data()[i] + 1e-12);
}

TEST_CASE("classifier-free guidance combination") {
  Point c(2), u(2);
  c << 1, 0;
  u << 0, 1;
  CHECK(cfg_combine(c, u, 0.0) == c);
  CHECK(cfg_combine(c, c, 7.5) == c);
  const Point g = cfg_combine(c, u, 1.0);
  CHECK(g[0] == 2.0);
  CHECK(g[1] == -1.0);
  Rng rng(2);
  const Point a = rng.normal_vector(2), b = rng.normal_vector(2), a2 = rng.normal_vector(2);
  const double sc = 3.0;
  CHECK((cfg_combine(0.5 * a + 0.5 * a2, b, sc) - 0.5 * (cfg_combine(a, b, sc) + cfg_combine(a2, b, sc)))
            .cwiseAbs()
            .maxCoeff() < 1e-14);
  CHECK_THROWS(cfg_combine(Point::Zero(2), Point::Zero(3), 1.0));
}

TEST_CASE("noise draws are reproducible from seed and stream position") {
  Rng a(42), b(42);
  a.normal_vector(5);
  const auto pos = a.position();
  const NoiseDraw d{a.normal_vector(2), a.uniform_int(1, 1000), pos};
  b.normal_vector(5);
  CHECK(b.position() == d.stream_position);
  CHECK(b.normal_vector(2) == d.epsilon);
  CHECK(b.uniform_int(1, 1000) == d.t);
}
