#include <doctest.h>

#include <cmath>
#include <limits>

#include "distill/diagnostics.hpp"
#include "oracles.hpp"

using namespace distill;

namespace {

ParticleGaussian random_q(int d, Rng& rng) {
  return {rng.normal_vector(d), rng.uniform_matrix(d, d) + Eigen::MatrixXd::Identity(d, d)};
}

}  // namespace

TEST_CASE("gaussian KL: identity, one-dimensional value, Monte-Carlo agreement") {
  Rng rng(1);
  const GaussianTarget p = random_listing_target(2, rng);
  CHECK(std::abs(gaussian_kl(ParticleGaussian{p.mu, p.factor}, p)) < 1e-12);

  const Point zero = Point::Zero(1), one = Point::Ones(1);
  const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(1, 1);
  CHECK(gaussian_kl(one, id, zero, id) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(gaussian_kl(zero, 4 * id, zero, id) == doctest::Approx(0.5 * (4 - 1 - std::log(4.0))).epsilon(1e-12));

  for (int k = 0; k < 3; ++k) {
    const ParticleGaussian q = random_q(2, rng);
    const auto mc = oracle::kl_mc_gaussians(q.mu, q.covariance(), p.mu, p.covariance(), 200000, rng);
    CHECK(std::abs(gaussian_kl(q, p) - mc.value) < 4 * mc.std_error);
  }
  const ParticleGaussian q = random_q(2, rng);
  CHECK(symmetric_gaussian_kl(q, p) ==
        doctest::Approx(gaussian_kl(q, p) + gaussian_kl(p.mu, p.covariance(), q.mu, q.covariance())).epsilon(1e-12));
  CHECK_THROWS(gaussian_kl(ParticleGaussian{Point::Constant(2, std::nan("")), q.factor}, p));
}

TEST_CASE("mixture KL estimates") {
  Rng rng(2);
  const GaussianTarget g = random_listing_target(2, rng);
  const ParticleGaussian q = random_q(2, rng);
  const MixtureTarget single{{{1.0, g}}};
  const auto mc = mixture_kl_mc(q, single, 100000, rng);
  CHECK(std::abs(mc.value - gaussian_kl(q, g)) < 4 * mc.std_error);
  const auto rev = mixture_reverse_kl_mc(q, single, 100000, rng);
  CHECK(std::abs(rev.value - gaussian_kl(g.mu, g.covariance(), q.mu, q.covariance())) < 4 * rev.std_error);

  // q on one of two far-apart equal-weight modes: KL tends to log 2
  const MixtureTarget two = two_mode_target(Point::Zero(2), 40.0);
  const ParticleGaussian on_mode{two.components[0].gaussian.mu, two.components[0].gaussian.factor};
  CHECK(mixture_kl_mc(on_mode, two, 10000, rng).value == doctest::Approx(std::log(2.0)).epsilon(1e-9));

  const ParticleGaussian off{Point::Zero(2), Eigen::MatrixXd::Identity(2, 2)};
  const auto small = mixture_kl_mc(off, two_mode_target(Point::Zero(2), 3.0), 20000, rng);
  const auto large = mixture_kl_mc(off, two_mode_target(Point::Zero(2), 3.0), 40000, rng);
  CHECK(small.std_error / large.std_error == doctest::Approx(std::sqrt(2.0)).epsilon(0.1));
  CHECK_THROWS_AS(mixture_kl_mc(off, two, 100, rng), std::invalid_argument);
}

TEST_CASE("divergence dispatch and separate logging stream") {
  Rng rng(3);
  const GaussianTarget g = random_listing_target(2, rng);
  const ParticleGaussian q = random_q(2, rng);
  Rng r1 = divergence_rng(7, 10), r2 = divergence_rng(7, 10), r3 = divergence_rng(7, 11);
  CHECK(divergence_to_target(q, g, 10000, r1) == gaussian_kl(q, g));
  CHECK(r1.position() == 0);
  CHECK(r2.normal() != r3.normal());
  const MixtureTarget m = two_mode_target(Point::Zero(2), 3.0);
  Rng a = divergence_rng(1, 0), b = divergence_rng(1, 0);
  CHECK(divergence_to_target(q, m, 10000, a) == divergence_to_target(q, m, 10000, b));
}

TEST_CASE("moment matching") {
  PointBatch pts(2, 4);
  pts << 0, 2, 0, 2, 0, 0, 2, 2;
  const ParticleGaussian g = moment_match(pts);
  CHECK(g.mu == Point::Ones(2));
  CHECK((g.covariance() - Eigen::MatrixXd::Identity(2, 2)).norm() < 1e-14);
  CHECK_THROWS_AS(moment_match(PointBatch(2, 0)), std::invalid_argument);
}

TEST_CASE("taylor report splits the output change") {
  Rng rng(4);
  NetArchitecture arch;
  arch.hidden = {8, 8};
  const DenoiserNet before = oracle::random_net(arch, rng);
  const DenoiserNet after = before.with_params(
      FlatParams(before.params().values() + 1e-3 * rng.normal_vector(before.params().size()), before.layout()));
  std::vector<TaylorProbe> probes;
  for (int k = 0; k < 10; ++k) probes.push_back({rng.normal_vector(2), rng.uniform_int(1, 1000), std::nullopt});
  const auto report = taylor_report(before, after, probes);
  REQUIRE(report.size() == 10);
  for (std::size_t k = 0; k < report.size(); ++k) {
    const TaylorTerms& tt = report[k];
    CHECK(tt.residual < 1e-14);
    CHECK(tt.eps_before == net_forward(before, probes[k].x_t, probes[k].t));
    CHECK(tt.norm_delta_high < 0.1 * tt.norm_delta_first);
    CHECK(tt.norm_eps_phi == tt.eps_before.norm());
  }
  NetArchitecture lin;
  lin.hidden = {};
  const DenoiserNet lb = oracle::random_net(lin, rng);
  const DenoiserNet la =
      lb.with_params(FlatParams(lb.params().values() + rng.normal_vector(lb.params().size()), lb.layout()));
  for (const auto& tt : taylor_report(lb, la, probes)) CHECK(tt.norm_delta_high < 1e-12);
  CHECK_THROWS_AS(taylor_report(before, lb, probes), std::invalid_argument);
}

TEST_CASE("quantiles and summaries") {
  CHECK(quantile({4, 1, 3, 2}, 0.5) == 2.5);
  CHECK(quantile({4, 1, 3, 2}, 0.25) == 1.75);
  CHECK(quantile({5}, 0.75) == 5);
  CHECK(std::isinf(quantile({1, std::nan(""), 2}, 1.0)));
  CHECK(quantile({1, std::nan(""), 2}, 0.5) == 2);
  CHECK_THROWS_AS(quantile({}, 0.5), std::invalid_argument);

  const std::vector<double> vals{3, 1, 2, 5, 4};
  const EnsembleSummary s = summarize("arm", split_seeds(10, 5), vals);
  CHECK(s.seeds == std::vector<std::uint64_t>{10, 11, 12, 13, 14});
  CHECK(s.median == quantile(vals, 0.5));
  CHECK(s.iqr() == quantile(vals, 0.75) - quantile(vals, 0.25));
  CHECK(s.failures() == 0);
  CHECK_THROWS_AS(summarize("x", split_seeds(0, 2), {1.0}), std::invalid_argument);
  CHECK_THROWS_AS(split_seeds(0, 0), std::invalid_argument);
}

TEST_CASE("ensembles: ordering, identical arms, failures, concurrency") {
  const auto seeds = split_seeds(0, 9);
  const SeedRunner low = [](std::uint64_t s) { return 0.1 * static_cast<double>(s); };
  const SeedRunner high = [](std::uint64_t s) { return 1.0 + 0.1 * static_cast<double>(s); };
  const EnsembleComparison c = ensemble_compare("low", low, "high", high, seeds);
  CHECK(c.verdict == Ordering::a_lower);
  CHECK(c.median_difference == doctest::Approx(-1.0));
  const EnsembleComparison same = ensemble_compare("a", low, "b", low, seeds);
  CHECK(same.verdict == Ordering::tie);
  CHECK(same.median_difference == 0.0);
  const std::vector<std::uint64_t> one{0};
  CHECK_THROWS_AS(ensemble_compare("a", low, "b", high, one), std::invalid_argument);

  const SeedRunner flaky = [](std::uint64_t s) -> double {
    if (s == 3) throw std::runtime_error("diverged");
    return static_cast<double>(s);
  };
  const EnsembleSummary f = run_ensemble("flaky", flaky, seeds);
  CHECK(f.failures() == 1);
  CHECK(f.errors[3] == "diverged");
  CHECK(std::isnan(f.values[3]));

  const SeedRunner real = [](std::uint64_t s) {
    GaussianRunConfig cfg = oracle::listing_defaults(GaussianMethod::l_vsd);
    cfg.seed = s;
    cfg.total_steps = 100;
    return run_gaussian_experiment(cfg).final_kl;
  };
  const EnsembleSummary serial = run_ensemble("l-vsd", real, seeds, 1);
  const EnsembleSummary threaded = run_ensemble("l-vsd", real, seeds, 4);
  CHECK(serial.values == threaded.values);
  CHECK(serial.median == threaded.median);
}
