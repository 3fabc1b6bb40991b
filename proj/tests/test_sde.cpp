#include <doctest.h>

#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

#include "levyfilter/averaging.hpp"
#include "levyfilter/errors.hpp"
#include "levyfilter/sde.hpp"

using namespace levyfilter;

namespace {

// Scalar model with constant drift c, slow noise s, OU fast variable and a
// silent sensor (h = 0, no observation jumps).
ModelPreset scalar_preset(double c, double s, double x0) {
  ModelPreset p;
  p.name = "scalar";
  auto& m = p.slow_fast;
  m.n = m.m = m.l = 1;
  m.epsilon = 0.1;
  m.x0 = {x0};
  m.z0 = {0.0};
  m.b1 = Field::constant(1, 1, {c});
  m.sigma1 = s == 0.0 ? Field::zero(1, 1) : Field::constant(1, 1, {s});
  m.f1 = Field::zero(1, 1);
  m.b2 = Field::from_expressions(1, 1, {"-z[0]"}, {1, 1, 0, false}, "b2");
  m.sigma2 = Field::constant(1, 1, {1.0});
  m.f2 = Field::zero(1, 1);
  m.ou_sigma2 = 1.0;
  auto& o = p.observation;
  o.d = 1;
  o.h = Field::zero(1, 1);
  o.f3 = Field::zero(1, 1);
  o.g3 = Field::zero(1, 1);
  o.lambda = Intensity::constant(1.0);
  o.lambda_lower = 1.0;
  ClosedForm cf;
  cf.invariant_mean = {0.0};
  cf.invariant_variance = {0.5};
  cf.bbar1 = {c};
  cf.abar = {s * s};
  cf.hbar = Field::zero(1, 1);
  p.closed_form = cf;
  return p;
}

double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double var_of(const std::vector<double>& v) {
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

}  // namespace

TEST_CASE("exact OU transition") {
  RngStream s(5, 1);
  SUBCASE("variance at dt = ln 2") {
    // sigma2^2 (1 - e^{-2 dt}) / 2 with sigma2^2 = 2
    const double oracle = 2.0 * (1.0 - std::exp(-2.0 * std::numbers::ln2)) / 2.0;
    CHECK(oracle == doctest::Approx(0.75).epsilon(1e-15));
    std::vector<double> v;
    for (int i = 0; i < 100000; ++i) v.push_back(exact_ou_step(0.0, std::numbers::ln2, std::numbers::sqrt2, s));
    CHECK(std::abs(mean_of(v)) < 4.0 * std::sqrt(0.75 / v.size()));
    CHECK(var_of(v) == doctest::Approx(oracle).epsilon(0.02));
  }
  SUBCASE("long step reaches the invariant law") {
    std::vector<double> v;
    for (int i = 0; i < 100000; ++i) v.push_back(exact_ou_step(1.0, 50.0, 0.8, s));
    CHECK(std::abs(mean_of(v)) < 4.0 * std::sqrt(0.32 / v.size()));
    CHECK(var_of(v) == doctest::Approx(0.32).epsilon(0.02));
  }
  SUBCASE("tiny step barely moves") {
    CHECK(std::abs(exact_ou_step(1.0, 1e-8, 1.0, s) - 1.0) < 1e-3);
  }
}

TEST_CASE("step schemes") {
  auto p = build_preset("example6");
  p.slow_fast.epsilon = 0.01;
  const auto e = make_scheme(p.slow_fast, 0.01, FastMode::euler);
  CHECK(e.dt_fast <= 0.001 * (1 + 1e-12));
  CHECK(std::abs(e.dt_slow / e.dt_fast - std::round(e.dt_slow / e.dt_fast)) < 1e-9);
  CHECK(make_scheme(p.slow_fast, 0.01, FastMode::exact_ou).dt_fast == 0.01);
  CHECK_THROWS_AS(check_scheme(p.slow_fast, {0.01, 0.01, FastMode::euler}), StiffnessRejected);
  CHECK_THROWS_AS(check_scheme(p.slow_fast, {0.01, 0.003, FastMode::euler}), InvalidArgument);
  CHECK_THROWS_AS(simulate_full(p.slow_fast, p.observation, 1.0, {0.01, 0.01, FastMode::euler}, 1, 0),
                  StiffnessRejected);
  CHECK(grid_steps(1.0, 0.01) == 100);
  CHECK_THROWS_AS(grid_steps(1.0, 0.03), InvalidArgument);
  auto lin = build_preset("linear_gaussian");
  lin.slow_fast.ou_sigma2.reset();
  CHECK_THROWS_AS(check_scheme(lin.slow_fast, {0.01, 0.01, FastMode::exact_ou}), InvalidArgument);
}

TEST_CASE("null slow dynamics keep x0") {
  auto p = scalar_preset(0.0, 0.0, 1.25);
  const auto path = simulate_full(p.slow_fast, p.observation, 1.0,
                                  make_scheme(p.slow_fast, 0.01, FastMode::euler), 3, 0);
  REQUIRE(path.steps() == 100);
  for (const auto& x : path.X) CHECK(x[0] == 1.25);
}

TEST_CASE("silent sensor gives pure Brownian observations") {
  auto p = scalar_preset(0.3, 1.0, 0.0);
  const auto path = simulate_full(p.slow_fast, p.observation, 1.0,
                                  make_scheme(p.slow_fast, 0.01, FastMode::exact_ou), 4, 0);
  double y = 0.0;
  CHECK(path.Y[0][0] == 0.0);
  for (std::size_t k = 0; k < path.steps(); ++k) {
    CHECK(path.drift_increments[k][0] == 0.0);
    CHECK(path.compensator_increments[k][0] == 0.0);
    y += path.bbar_increments[k][0];
    CHECK(path.Y[k + 1][0] == doctest::Approx(y).epsilon(1e-14));
  }
  CHECK(path.jump_log.observation_small.empty());
  CHECK(path.jump_log.observation_large.empty());
}

TEST_CASE("paths are deterministic in the seed") {
  const auto p = build_preset("example6");
  const auto sc = make_scheme(p.slow_fast, 0.01, FastMode::euler);
  const auto a = simulate_full(p.slow_fast, p.observation, 0.5, sc, 9, 2);
  const auto b = simulate_full(p.slow_fast, p.observation, 0.5, sc, 9, 2);
  const auto c = simulate_full(p.slow_fast, p.observation, 0.5, sc, 9, 3);
  std::ostringstream sa, sb, scs;
  write_path_csv(a, sa);
  write_path_csv(b, sb);
  write_path_csv(c, scs);
  CHECK(sa.str() == sb.str());
  CHECK(sa.str() != scs.str());
  CHECK(sa.str().rfind("t,x_0,z_0,y_0\n", 0) == 0);
}

TEST_CASE("small epsilon matches the homogenized variance") {
  auto p = build_example6(1.0, std::numbers::sqrt2, 0.0, 0.0, 0.8, 0.01);
  const auto sc = make_scheme(p.slow_fast, 0.01, FastMode::exact_ou);
  std::vector<double> x1;
  for (std::uint32_t i = 0; i < 5000; ++i)
    x1.push_back(simulate_full(p.slow_fast, p.observation, 1.0, sc, 77, i).X.back()[0]);
  CHECK(var_of(x1) == doctest::Approx(1.0).epsilon(0.10));
}

TEST_CASE("frozen fast process") {
  const auto p = build_preset("example6");
  const double x[1] = {0.7};
  SUBCASE("stationary variance and lag autocorrelation") {
    const double z0[1] = {0.0};
    const auto fp = simulate_frozen_fast(p.slow_fast, x, z0, 2000.0, 0.01, 13, 0);
    std::vector<double> z;
    for (std::size_t k = 1000; k < fp.Z.size(); ++k) z.push_back(fp.Z[k][0]);
    CHECK(var_of(z) == doctest::Approx(1.0).epsilon(0.05));
    // lag 0.5 autocorrelation e^{-0.5}
    const std::size_t lag = 50;
    const double m = mean_of(z);
    double num = 0.0, den = 0.0;
    for (std::size_t k = 0; k + lag < z.size(); ++k) num += (z[k] - m) * (z[k + lag] - m);
    for (double v : z) den += (v - m) * (v - m);
    CHECK(num / den == doctest::Approx(std::exp(-0.5)).epsilon(0.05));
  }
  SUBCASE("null fast dynamics stay put") {
    auto q = p;
    q.slow_fast.b2 = Field::zero(1, 1);
    q.slow_fast.sigma2 = Field::zero(1, 1);
    const double z0[1] = {2.5};
    const auto fp = simulate_frozen_fast(q.slow_fast, x, z0, 1.0, 0.01, 13, 0);
    for (const auto& z : fp.Z) CHECK(z[0] == 2.5);
  }
}

TEST_CASE("homogenized signal") {
  SUBCASE("example6 is a scaled Brownian motion") {
    const auto p = build_preset("example6");
    const auto hm = build_homogenized(p, ClosedFormMode{});
    std::vector<double> x1;
    for (std::uint32_t i = 0; i < 4000; ++i) x1.push_back(simulate_homogenized(hm, 1.0, 0.01, 3, i).X.back()[0]);
    CHECK(std::abs(mean_of(x1)) < 3.0 * std::sqrt(var_of(x1) / x1.size()));
    CHECK(var_of(x1) == doctest::Approx(1.0).epsilon(0.08));
  }
  SUBCASE("deterministic drift") {
    const auto p = scalar_preset(0.4, 0.0, 1.0);
    const auto hm = build_homogenized(p, ClosedFormMode{});
    const auto sp = simulate_homogenized(hm, 1.0, 0.01, 3, 0);
    for (std::size_t k = 0; k < sp.times.size(); ++k)
      CHECK(sp.X[k][0] == doctest::Approx(1.0 + 0.4 * sp.times[k]).epsilon(1e-12));
  }
  SUBCASE("compensated jumps are centred") {
    auto p = scalar_preset(0.0, 0.0, 0.5);
    p.slow_fast.f1 = Field::constant(1, 1, {1.0});
    p.slow_fast.nu1 = LevyMeasureSpec(2.0, MarkSampler(PointMarks{{1.0}}), Region::U1);
    const auto hm = build_homogenized(p, ClosedFormMode{});
    std::vector<double> x1;
    for (std::uint32_t i = 0; i < 20000; ++i) x1.push_back(simulate_homogenized(hm, 1.0, 0.01, 5, i).X.back()[0]);
    // Var = r T = 2
    CHECK(std::abs(mean_of(x1) - 0.5) < 4.0 * std::sqrt(2.0 / x1.size()));
    CHECK(var_of(x1) == doctest::Approx(2.0).epsilon(0.05));
  }
}
