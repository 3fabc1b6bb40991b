#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include <tbb/global_control.h>

#include "levyfilter/errors.hpp"
#include "levyfilter/filter.hpp"

using namespace levyfilter;

namespace {

ParticleEnsemble weighted(std::vector<double> xs, std::vector<double> log_w) {
  ParticleEnsemble e;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    Particle p;
    p.x = {xs[i]};
    p.log_weight = log_w.empty() ? 0.0 : log_w[i];
    p.streams = SignalStreams::for_path(1, static_cast<std::uint32_t>(i));
    e.particles.push_back(std::move(p));
  }
  return e;
}

// example6 signal with a silent sensor and no observation jumps
ModelPreset silent_example6() {
  auto p = build_preset("example6");
  p.observation.h = Field::zero(1, 1);
  p.observation.h_bound = 0.0;
  p.observation.lambda = Intensity::constant(1.0);
  p.observation.lambda_lower = 1.0;
  p.observation.nu3_small = LevyMeasureSpec::none(Region::U3);
  p.observation.nu3_large = LevyMeasureSpec::none(Region::U3_complement);
  p.closed_form->hbar = Field::zero(1, 1);
  return p;
}

}  // namespace

TEST_CASE("test functions") {
  CHECK(TestFunction::parse("tanh").fn(0.5) == std::tanh(0.5));
  CHECK(TestFunction::parse("arctan").hi == doctest::Approx(std::numbers::pi / 2));
  CHECK(TestFunction::parse("one").fn(123.0) == 1.0);
  const auto ind = TestFunction::parse("indicator(0,1)");
  CHECK(ind.fn(0.5) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(ind.fn(-0.5) == doctest::Approx(0.0));
  const auto poly = TestFunction::parse("poly(1,2,0,-1,3)");
  CHECK(poly.fn(0.5) == 2.0);
  CHECK(poly.fn(10.0) == 3.0);
  CHECK(poly.fn(-10.0) == -1.0);
  const auto list = TestFunction::parse_list("tanh, poly(0,1,0), one");
  REQUIRE(list.size() == 3);
  CHECK(list[1].name == "poly(0,1,0)");
  CHECK_THROWS(TestFunction::parse("sinh"));
}

TEST_CASE("log weight increment") {
  const double x[1] = {0.0};
  const auto none = LevyMeasureSpec::none(Region::U3);
  const double zero[1] = {0.0};
  CHECK(log_weight_increment(zero, std::vector<double>{0.7}, 0.1, {}, Intensity::constant(1.0), x,
                             0.0, none) == 0.0);
  const double one[1] = {1.0};
  CHECK(log_weight_increment(one, std::vector<double>{0.3}, 0.1, {}, Intensity::constant(1.0), x,
                             0.0, none) == doctest::Approx(0.3 - 0.05).epsilon(1e-15));

  const LevyMeasureSpec nu(1.0, MarkSampler(UniformMarks{-1.0, 1.0}), Region::U3);
  std::vector<JumpEvent> jumps(1);
  jumps[0].time = 0.05;
  jumps[0].mark = {0.2};
  const double got =
      log_weight_increment(zero, std::vector<double>{0.0}, 0.1, jumps, Intensity::constant(0.5),
                           x, 0.0, nu);
  CHECK(got == doctest::Approx(std::log(0.5) + 0.1 * 0.5).epsilon(1e-14));
  CHECK(got == doctest::Approx(-0.643147).epsilon(1e-6));

  CHECK_THROWS_AS(Intensity::constant(1.5), InvalidArgument);
  const auto too_big = Intensity::callback(
      [](double, std::span<const double>, std::span<const double>) { return 1.5; });
  CHECK_THROWS_AS(
      log_weight_increment(zero, std::vector<double>{0.0}, 0.1, jumps, too_big, x, 0.0, nu),
      ModelViolation);
}

TEST_CASE("weighted estimates") {
  const auto psi = TestFunction::parse("poly(0,1,0)");
  CHECK(estimate(weighted({1, 2, 3}, {}), psi).pi == doctest::Approx(2.0));
  const auto e = estimate(weighted({1, 0}, {std::log(3.0), 0.0}), psi);
  CHECK(e.pi == doctest::Approx(0.75));
  CHECK(e.rho_1 == doctest::Approx(2.0));
  CHECK(e.rho_psi == doctest::Approx(1.5));
  const auto c = TestFunction::parse("poly(2.5,0,0)");
  CHECK(estimate(weighted({-4, 1, 9}, {-700.0, 3.0, 0.1}), c).pi == 2.5);
  const auto big = weighted({1, 2}, {1000.0, 1000.0});
  CHECK(estimate(big, psi).pi == doctest::Approx(1.5));
  CHECK(big.log_mass() == doctest::Approx(1000.0));
  CHECK(big.ess() == doctest::Approx(2.0));
}

TEST_CASE("pairwise summation") {
  std::vector<double> v(1000, 0.1);
  CHECK(pairwise_sum(v) == doctest::Approx(100.0).epsilon(1e-14));
  CHECK(pairwise_sum(std::vector<double>{}) == 0.0);
}

TEST_CASE("systematic resampling") {
  SUBCASE("two particles, weights 3:1, four offspring") {
    // every offset in [0, 1/4) places the points u+k/4 as three below 0.75
    const std::vector<double> w{0.75, 0.25};
    for (int i = 0; i < 100; ++i) {
      const double off = 0.25 * i / 100.0;
      const auto c = systematic_counts(w, 4, off);
      CHECK(c[0] == 3);
      CHECK(c[1] == 1);
    }
  }
  SUBCASE("equal weights preserve the multiset") {
    auto e = weighted({0.1, 0.2, 0.3, 0.4, 0.5}, {});
    const double err = resample(e, 7);
    std::vector<double> xs;
    for (const auto& p : e.particles) xs.push_back(p.x[0]);
    std::sort(xs.begin(), xs.end());
    CHECK(xs == std::vector<double>{0.1, 0.2, 0.3, 0.4, 0.5});
    CHECK(err < 1e-12);
  }
  SUBCASE("dominant weight takes every offspring") {
    auto e = weighted({1, 2, 3, 4}, {0.0, 20.0, 0.0, 0.0});
    const double before = e.log_mass();
    const double err = resample(e, 7);
    for (const auto& p : e.particles) CHECK(p.x[0] == 2.0);
    CHECK(e.size() == 4);
    CHECK(e.resample_count == 1);
    CHECK(err < 1e-12);
    CHECK(e.log_mass() == doctest::Approx(before).epsilon(1e-14));
  }
  SUBCASE("random weights keep the mass and refresh streams") {
    RngStream s(3, 3);
    std::vector<double> xs, lw;
    for (int i = 0; i < 257; ++i) {
      xs.push_back(s.normal());
      lw.push_back(3.0 * s.normal());
    }
    auto e = weighted(xs, lw);
    const double before = e.log_mass();
    const double err = resample(e, 99);
    CHECK(err <= 1e-12);
    CHECK(std::abs(e.log_mass() - before) < 1e-12 * std::max(1.0, std::abs(before)));
    for (const auto& p : e.particles) CHECK(p.log_weight == before);
    CHECK(e.particles[0].streams.slow.root_seed() != 1);
  }
}

TEST_CASE("propagation") {
  const auto p = build_preset("example6");
  const auto hm = build_homogenized(p, ClosedFormMode{});
  const FilterDynamics dyn = HomogenizedDynamics{&hm};

  SUBCASE("null signal dynamics leave states alone") {
    auto q = p;
    q.slow_fast.b1 = Field::zero(1, 1);
    q.slow_fast.sigma1 = Field::zero(1, 1);
    const FilterDynamics full =
        FullDynamics{&q.slow_fast, make_scheme(q.slow_fast, 0.01, FastMode::exact_ou), nullptr};
    auto e = make_ensemble(full, 16, 4);
    for (int k = 0; k < 10; ++k) propagate(e, full, 0.01);
    for (const auto& pt : e.particles) CHECK(pt.x[0] == q.slow_fast.x0[0]);
  }
  SUBCASE("permutation commutes with propagation") {
    auto a = make_ensemble(dyn, 64, 8);
    auto b = a;
    std::reverse(b.particles.begin(), b.particles.end());
    for (int k = 0; k < 5; ++k) {
      propagate(a, dyn, 0.01);
      propagate(b, dyn, 0.01);
    }
    std::reverse(b.particles.begin(), b.particles.end());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.particles[i].x == b.particles[i].x);
  }
  SUBCASE("full model at small epsilon stays finite") {
    auto q = p;
    q.slow_fast.epsilon = 0.01;
    const FilterDynamics full =
        FullDynamics{&q.slow_fast, make_scheme(q.slow_fast, 0.01, FastMode::euler), nullptr};
    auto e = make_ensemble(full, 1000, 4);
    for (int k = 0; k < 100; ++k) propagate(e, full, 0.01);
    for (const auto& pt : e.particles) REQUIRE(std::isfinite(pt.x[0]));
  }
}

TEST_CASE("filter runs") {
  const auto psi = TestFunction::parse_list("tanh,one,indicator(-0.5,0.5)");

  SUBCASE("uninformative observations keep unit weights") {
    const auto p = silent_example6();
    const auto hm = build_homogenized(p, ClosedFormMode{});
    const auto obs = simulate_full(p.slow_fast, p.observation, 1.0,
                                   make_scheme(p.slow_fast, 0.01, FastMode::exact_ou), 5, 0);
    const auto out = run_filter(HomogenizedDynamics{&hm}, p.observation, obs, psi, {200, 0.5, true, 3});
    for (double r : out.rho1) CHECK(r == 1.0);
    CHECK(out.resample_times.empty());
    // pi equals the plain average over an unconditioned signal sample
    auto e = make_ensemble(HomogenizedDynamics{&hm}, 200, 3);
    for (std::size_t k = 0; k < obs.steps(); ++k) propagate(e, HomogenizedDynamics{&hm}, 0.01);
    double avg = 0.0;
    for (const auto& pt : e.particles) avg += std::tanh(pt.x[0]);
    CHECK(out.pi[0].back() == doctest::Approx(avg / 200.0).epsilon(1e-12));
  }

  SUBCASE("normalization, bounds and determinism across thread counts") {
    const auto p = build_preset("example6");
    const auto hm = build_homogenized(p, ClosedFormMode{});
    const auto sc = make_scheme(p.slow_fast, 0.01, FastMode::exact_ou);
    const auto obs = simulate_full(p.slow_fast, p.observation, 1.0, sc, 6, 0);
    const FilterDynamics full = FullDynamics{&p.slow_fast, sc, &p.observation.h};
    auto run = [&](std::size_t threads, const FilterDynamics& d) {
      tbb::global_control gc(tbb::global_control::max_allowed_parallelism, threads);
      std::ostringstream os;
      const auto out = run_filter(d, p.observation, obs, psi, {500, 0.9, true, 11});
      write_filter_csv(out, os);
      return std::pair{out, os.str()};
    };
    for (const auto& d : {full, FilterDynamics{HomogenizedDynamics{&hm}}}) {
      const auto [a, text_a] = run(1, d);
      const auto [b, text_b] = run(4, d);
      CHECK(text_a == text_b);
      CHECK(a.diagnostics.ok());
      CHECK(a.diagnostics.steps == 100);
      for (double v : a.pi[1]) CHECK(v == 1.0);
      for (double v : a.pi[0]) CHECK(std::abs(v) <= 1.0);
      for (double r : a.rho1) CHECK(r > 0.0);
      CHECK_FALSE(a.resample_times.empty());
    }
  }

  SUBCASE("grid mismatch is rejected") {
    const auto p = build_preset("example6");
    const auto hm = build_homogenized(p, ClosedFormMode{});
    auto obs = simulate_full(p.slow_fast, p.observation, 0.1,
                             make_scheme(p.slow_fast, 0.01, FastMode::exact_ou), 6, 0);
    obs.bbar_increments.pop_back();
    CHECK_THROWS_AS(run_filter(HomogenizedDynamics{&hm}, p.observation, obs, psi, {}),
                    InvalidArgument);
  }
}
