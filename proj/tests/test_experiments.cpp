#include <doctest.h>

#include <cmath>
#include <numbers>

#include "levyfilter/errors.hpp"
#include "levyfilter/experiments.hpp"

using namespace levyfilter;

TEST_CASE("two-sample KS statistic") {
  const std::vector<double> a{0.3, -1.0, 2.0};
  CHECK(ks_statistic(a, a) == 0.0);
  CHECK(ks_statistic(std::vector<double>{0, 0}, std::vector<double>{1, 1}) == 1.0);
  CHECK(ks_statistic(std::vector<double>(7, 0.0), std::vector<double>(7, 1.0)) == 1.0);
  // ECDF steps: at 0 -> 1/2 vs 0; at 0.5 -> 1/2 vs 1/2; at 1 -> 1 vs 1/2; at 1.5 -> 1 vs 1
  CHECK(ks_statistic(std::vector<double>{0, 1}, std::vector<double>{0.5, 1.5}) == 0.5);
  CHECK_THROWS_AS(ks_statistic(std::vector<double>{}, a), InvalidArgument);
  CHECK(ks_critical(5000, 5000) == doctest::Approx(1.63 * std::sqrt(2.0 / 5000.0)));
}

TEST_CASE("Poisson martingale series") {
  // sum_k e^{-1}/k! 0.5^k e^{0.5}, summed independently
  double direct = 0.0, term = std::exp(-1.0);
  for (int k = 0; k < 60; ++k) {
    direct += term * std::exp(0.5);
    term *= 0.5 / (k + 1);
  }
  CHECK(direct == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(poisson_martingale_mean(0.5, 1.0, 1.0) == doctest::Approx(direct).epsilon(1e-14));
  CHECK(poisson_martingale_mean(0.2, 3.0, 2.0) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("silent sensor gives a unit likelihood") {
  auto p = build_preset("example6");
  p.observation.h = Field::zero(1, 1);
  p.observation.h_bound = 0.0;
  p.observation.lambda = Intensity::constant(1.0);
  p.observation.lambda_lower = 1.0;
  p.observation.nu3_small = LevyMeasureSpec::none(Region::U3);
  p.observation.nu3_large = LevyMeasureSpec::none(Region::U3_complement);
  MartingaleOptions opt;
  opt.runs = 200;
  opt.rho0_runs = 0;
  const auto r = martingale_check(p, nullptr, opt);
  CHECK(r.mean_lambda == 1.0);
  CHECK(r.se_lambda == 0.0);
}

TEST_CASE("Riccati and Kalman oracle") {
  SUBCASE("stationary variance is the quadratic root") {
    // -2 a P + sigma^2 - P^2 = 0 with a = 1, sigma^2 = 3
    const double a = 1.0, s2 = 3.0;
    const double root = -a + std::sqrt(a * a + s2);
    CHECK(root == doctest::Approx(1.0));
    const auto P = riccati_path({a, 0.0, std::sqrt(s2), 0.0, 0.0}, 20.0, 1e-3);
    CHECK(P.back() == doctest::Approx(root).epsilon(0.01));
    for (double v : P) CHECK(v >= 0.0);
  }
  SUBCASE("noise-free signal is tracked deterministically") {
    const LinearSpec spec{2.0, 0.5, 0.0, 1.0, 0.0};
    std::vector<double> dy(1000, 0.01);
    const auto r = kalman_oracle(spec, 1e-3, dy);
    for (std::size_t k = 0; k < r.times.size(); ++k) {
      CHECK(r.oracle_variance[k] == 0.0);
      // x' = -2x + 0.5 from x(0) = 1, Euler error O(dt)
      const double exact = 0.25 + 0.75 * std::exp(-2.0 * r.times[k]);
      CHECK(std::abs(r.oracle_mean[k] - exact) < 2e-3);
    }
  }
  SUBCASE("coefficients are read off linear presets only") {
    const auto s = linear_spec_from_preset(build_linear_gaussian(1.5, 0.25, 0.8, -0.3));
    CHECK(s.a == doctest::Approx(1.5));
    CHECK(s.c == doctest::Approx(0.25));
    CHECK(s.sigma == doctest::Approx(0.8));
    CHECK(s.x0 == doctest::Approx(-0.3));
    CHECK_THROWS_AS(linear_spec_from_preset(build_preset("example6")), InvalidArgument);
  }
  SUBCASE("particle filter follows the oracle") {
    const auto r = kalman_comparison(build_preset("linear_gaussian"), 2000, 1.0, 1e-2, 5);
    CHECK(r.rmse < 0.05);
  }
}

TEST_CASE("convergence study bookkeeping") {
  const auto p = build_preset("example6");
  const auto hm = build_homogenized(p, ClosedFormMode{});

  SUBCASE("a single replication is flagged") {
    ConvergenceOptions o;
    o.epsilons = {0.5, 0.1};
    o.replications = 1;
    o.particles = 50;
    const auto r = filter_convergence_study(p, hm, o);
    CHECK(r.insufficient_replications);
    CHECK_FALSE(assess_trend(r).gap_decreasing);
    const auto j = convergence_summary(r);
    CHECK(j.at("insufficient_replications").get<bool>());
  }
  SUBCASE("epsilons must decrease strictly") {
    ConvergenceOptions o;
    o.epsilons = {0.1, 0.5};
    o.replications = 2;
    o.particles = 10;
    CHECK_THROWS_AS(filter_convergence_study(p, hm, o), InvalidArgument);
  }
  SUBCASE("z-free model: the gap is particle noise only") {
    const auto lin = build_preset("linear_gaussian");
    const auto lh = build_homogenized(lin, OnDemandMode{}, {1.0, 1000, 5, 0.01, 1});
    ConvergenceOptions o;
    o.epsilons = {0.5, 0.1};
    o.replications = 20;
    o.particles = 200;
    o.psi = {"tanh"};
    const auto r = filter_convergence_study(lin, lh, o);
    REQUIRE(r.per_eps.size() == 2);
    CHECK(r.diagnostics.ok());

    // particle noise baseline: spread of pi_T(tanh) over independent particle
    // clouds on one observation path
    const auto psi = TestFunction::parse_list("tanh");
    const auto sc = make_scheme(lin.slow_fast, 0.01, FastMode::exact_ou);
    const auto obs = simulate_full(lin.slow_fast, lin.observation, 1.0, sc, 3, 0);
    std::vector<double> pis;
    for (std::uint64_t seed = 1; seed <= 10; ++seed)
      pis.push_back(run_filter(HomogenizedDynamics{&lh}, lin.observation, obs, psi,
                               {200, 0.5, true, seed}).pi[0].back());
    double m = 0.0, v = 0.0;
    for (double x : pis) m += x / pis.size();
    for (double x : pis) v += (x - m) * (x - m) / (pis.size() - 1);
    const double baseline = std::sqrt(v);
    REQUIRE(baseline > 0.0);
    for (const auto& st : r.per_eps) CHECK(st.mean_gap[0] < 3.0 * baseline);
  }
}

TEST_CASE("trend assessment") {
  ConvergenceReport r;
  r.psi_names = {"tanh"};
  const double gaps[3] = {0.3, 0.2, 0.05}, ks[3] = {0.5, 0.4, 0.1};
  for (int i = 0; i < 3; ++i) {
    EpsilonStats s;
    s.mean_gap = {gaps[i]};
    s.gap_se = {0.01};
    s.ks_pi = {ks[i]};
    r.per_eps.push_back(s);
  }
  auto t = assess_trend(r);
  CHECK(t.gap_decreasing);
  CHECK(t.ks_decreasing);
  CHECK(t.gap_decrements[0] == doctest::Approx(0.1));
  CHECK(t.combined_se[0] == doctest::Approx(std::sqrt(2.0) * 0.01));
  r.per_eps[1].gap_se = {0.2};
  CHECK_FALSE(assess_trend(r).gap_decreasing);
  r.per_eps[2].ks_pi = {0.4};
  CHECK_FALSE(assess_trend(r).ks_decreasing);
}
