#include <doctest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "levyfilter/errors.hpp"
#include "levyfilter/expression.hpp"
#include "levyfilter/models.hpp"
#include "levyfilter/serialization.hpp"

using namespace levyfilter;

namespace {

// Composite Simpson rule of g against the N(0, var) density on [-12 sd, 12 sd].
template <class G>
double gauss_simpson(G g, double var, int panels = 4000) {
  const double sd = std::sqrt(var);
  const double a = -12.0 * sd, b = 12.0 * sd;
  const double h = (b - a) / panels;
  double acc = 0.0;
  for (int i = 0; i <= panels; ++i) {
    const double z = a + i * h;
    const double w = (i == 0 || i == panels) ? 1.0 : (i % 2 ? 4.0 : 2.0);
    acc += w * g(z) * std::exp(-z * z / (2.0 * var)) / std::sqrt(2.0 * std::numbers::pi * var);
  }
  return acc * h / 3.0;
}

double eval1(const Field& f, double x, double z) {
  const double xs[1] = {x}, zs[1] = {z};
  return f.eval({xs, zs, {}, 0.0})[0];
}

}  // namespace

TEST_CASE("expressions compile and evaluate") {
  const double x[2] = {0.5, -1.0}, z[1] = {2.0}, u[1] = {3.0};
  const EvalPoint p{x, z, u, 0.25};
  CHECK(Expression::parse("1 + 2 * 3").evaluate(p) == 7.0);
  CHECK(Expression::parse("-(x[0] - x[1]) / 2").evaluate(p) == doctest::Approx(-0.75));
  CHECK(Expression::parse("sin(z[0]) * cos(u[0])").evaluate(p) ==
        doctest::Approx(std::sin(2.0) * std::cos(3.0)));
  CHECK(Expression::parse("exp(t) + tanh(x[0]) + atan(x[1]) + arctan(1)").evaluate(p) ==
        doctest::Approx(std::exp(0.25) + std::tanh(0.5) + std::atan(-1.0) + std::atan(1.0)));
  CHECK(Expression::parse("2*pi").evaluate(p) == doctest::Approx(2.0 * std::numbers::pi));

  const auto e = Expression::parse("x[1] + z[0] * t");
  CHECK(e.max_x_index() == 1);
  CHECK(e.max_z_index() == 0);
  CHECK(e.max_u_index() == -1);
  CHECK(e.uses_time());

  CHECK_THROWS_AS(Expression::parse("1 +"), ConfigError);
  CHECK_THROWS_AS(Expression::parse("foo(1)"), ConfigError);
  CHECK_THROWS_AS(Expression::parse("(1"), ConfigError);
  CHECK_THROWS_AS(Field::from_expressions(1, 1, {"z[0]"}, {1, 0, 0, false}, "b1"), ConfigError);
  CHECK_THROWS_AS(Field::from_expressions(1, 1, {"t"}, {1, 1, 0, false}, "b1"), ConfigError);
  CHECK_THROWS_AS(Field::from_expressions(2, 1, {"x[0]"}, {1, 1, 0, false}, "b1"), ConfigError);
}

TEST_CASE("example6 preset facts") {
  const auto p = build_example6(1.0, std::numbers::sqrt2, 0.0, 0.0, 0.8);
  REQUIRE(p.closed_form);
  const auto& cf = *p.closed_form;
  CHECK(cf.invariant_variance[0] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(cf.invariant_mean[0] == 0.0);

  // transition mean z0 e^{-t} decays to 0
  const auto [m_short, v_short] = cf.transition(2.0, 0.5);
  CHECK(m_short == doctest::Approx(2.0 * std::exp(-0.5)));
  CHECK(v_short == doctest::Approx(1.0 - std::exp(-1.0)));
  CHECK(std::abs(cf.transition(2.0, 60.0).first) < 1e-20);

  for (double s1 : {0.3, 1.0, -2.5}) {
    const auto q = build_example6(s1, 0.7, 0.0, 0.0, 0.5);
    CHECK(q.closed_form->abar[0] == doctest::Approx(s1 * s1).epsilon(1e-15));
  }

  // closed-form averages against an independent quadrature of the Gaussian law
  const double var = cf.invariant_variance[0];
  const double sin_avg = gauss_simpson([&](double z) { return eval1(p.slow_fast.b1, 0.3, z); }, var);
  CHECK(std::abs(sin_avg - cf.bbar1[0]) < 1e-10);
  const double s1sq = gauss_simpson(
      [&](double z) {
        const double s = eval1(p.slow_fast.sigma1, 0.3, z);
        return s * s;
      },
      var);
  CHECK(std::abs(s1sq - cf.abar[0]) < 1e-10);

  CHECK_THROWS_AS(build_example6(1.0, 1.0, 0.0, 0.0, 1.0), InvalidArgument);
  CHECK_THROWS_AS(build_example6(1.0, 1.0, 0.0, 0.0, 0.0), InvalidArgument);
  CHECK_THROWS_AS(build_example6(0.0, 1.0, 0.0, 0.0, 0.5), InvalidArgument);
  CHECK_THROWS_AS(build_preset("nope"), ConfigError);
}

TEST_CASE("assumption validation") {
  RngStream s(3, stream_id(NoiseSource::validation, 0));
  SUBCASE("example6 is clean") {
    const auto r = validate_assumptions(build_preset("example6"), 2000, s);
    CHECK(r.ok());
    for (const auto& c : r.checks) CHECK_MESSAGE(c.violations == 0, c.name);
  }
  SUBCASE("lambda equal to one is reported") {
    auto p = build_preset("example6");
    p.observation.lambda = Intensity::constant(1.0);
    const auto r = validate_assumptions(p, 500, s);
    const auto* c = r.find("A5_lambda_range");
    REQUIRE(c != nullptr);
    CHECK(c->violations > 0);
    CHECK_FALSE(r.ok());
  }
  SUBCASE("unbounded sensor is reported with a witness") {
    auto p = build_preset("example6");
    p.observation.h = Field::from_expressions(1, 1, {"x[0]"}, {1, 1, 0, false}, "h");
    p.observation.h_bound = 1.0;
    const auto r = validate_assumptions(p, 2000, s);
    const auto* c = r.find("A4_h_bounded");
    REQUIRE(c != nullptr);
    CHECK(c->violations > 0);
    CHECK_FALSE(c->witness.empty());
  }
}

TEST_CASE("intensity kinds") {
  const double x0[1] = {0.0}, u[1] = {0.2};
  const auto l = Intensity::logistic(0.2, 0.8, 3.0);
  CHECK(l(0.0, x0, u) == doctest::Approx(0.5));
  const LevyMeasureSpec nu(2.0, MarkSampler(UniformMarks{-1.0, 1.0}), Region::U3);
  CHECK(Intensity::constant(0.25).complement_integral(0.0, x0, nu) == doctest::Approx(1.5));
  const auto cb = Intensity::callback(
      [](double, std::span<const double>, std::span<const double> m) { return 0.5 + 0.25 * m[0]; });
  // int (1 - 0.5 - 0.25 u) 2 dU(-1,1) = 1
  CHECK(cb.complement_integral(0.0, x0, nu) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("model json round trip") {
  for (const char* name : {"example6", "linear_gaussian"}) {
    const auto p = build_preset(name);
    const Json j = preset_to_json(p);
    const auto q = preset_from_json(j.at("model"), &j.at("observation"));
    CHECK(preset_to_json(q) == j);
    for (double x : {-1.3, 0.0, 2.2}) {
      for (double z : {-0.7, 0.4}) {
        CHECK(eval1(q.slow_fast.b1, x, z) == eval1(p.slow_fast.b1, x, z));
        CHECK(eval1(q.observation.h, x, z) == eval1(p.observation.h, x, z));
      }
    }
  }
  SUBCASE("unknown keys are named") {
    Json j = preset_to_json(build_preset("example6"));
    j["model"]["bogus"] = 1;
    try {
      preset_from_json(j.at("model"), &j.at("observation"));
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("bogus") != std::string::npos);
    }
  }
}
