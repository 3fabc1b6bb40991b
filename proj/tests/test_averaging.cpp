#include <doctest.h>

#include <cmath>
#include <numbers>

#include "levyfilter/averaging.hpp"
#include "levyfilter/errors.hpp"

using namespace levyfilter;

namespace {

struct Moments {
  double mean = 0.0, var = 0.0, se_mean = 0.0;
};

// Batch-means SE so that serial correlation of the chain is accounted for.
Moments moments(const EmpiricalMeasure& m) {
  const std::size_t n = m.samples.size();
  Moments r;
  for (const auto& s : m.samples) r.mean += s[0];
  r.mean /= static_cast<double>(n);
  for (const auto& s : m.samples) r.var += (s[0] - r.mean) * (s[0] - r.mean);
  r.var /= static_cast<double>(n - 1);
  const std::size_t batches = 50, len = n / batches;
  double bv = 0.0;
  for (std::size_t b = 0; b < batches; ++b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < len; ++i) acc += m.samples[b * len + i][0];
    const double d = acc / static_cast<double>(len) - r.mean;
    bv += d * d;
  }
  r.se_mean = std::sqrt(bv / (batches - 1) / batches);
  return r;
}

}  // namespace

TEST_CASE("invariant measure of the OU fast process") {
  const auto p = build_preset("example6");
  const double x[1] = {0.4};
  const auto m = estimate_invariant_measure(p.slow_fast, x, 10.0, 100000, 100, 0.01, 11, 0);
  REQUIRE(m.samples.size() == 100000);
  CHECK(m.thinning_stride == 100);
  const auto r = moments(m);
  CHECK(std::abs(r.mean) < 0.02);
  CHECK(r.var == doctest::Approx(1.0).epsilon(0.05));

  SUBCASE("disjoint streams agree") {
    const auto m2 = estimate_invariant_measure(p.slow_fast, x, 10.0, 100000, 100, 0.01, 11, 1);
    const auto r2 = moments(m2);
    CHECK(std::abs(r.mean - r2.mean) < 3.0 * std::hypot(r.se_mean, r2.se_mean));
    // second moment: SE of a sample variance of a near-Gaussian law, inflated by 2 for correlation
    const double se_var = 2.0 * std::sqrt(2.0 / m.samples.size());
    CHECK(std::abs(r.var - r2.var) < 3.0 * std::hypot(se_var, se_var));
  }
}

TEST_CASE("degenerate fast dynamics give a point mass") {
  auto p = build_preset("example6");
  p.slow_fast.b2 = Field::zero(1, 1);
  p.slow_fast.sigma2 = Field::zero(1, 1);
  p.slow_fast.z0 = {1.5};
  const double x[1] = {0.0};
  const auto m = estimate_invariant_measure(p.slow_fast, x, 1.0, 1000, 5, 0.01, 1, 0);
  for (const auto& s : m.samples) CHECK(s[0] == 1.5);
  CHECK_THROWS_AS(estimate_invariant_measure(p.slow_fast, x, 1.0, 10, 5, 0.01, 1, 0),
                  InvalidArgument);
}

TEST_CASE("averaged coefficients of example6") {
  const auto p = build_example6(0.7, std::numbers::sqrt2, 0.0, 0.0, 0.8);
  for (double xv : {-2.0, 0.0, 1.5}) {
    const double x[1] = {xv};
    const auto m = estimate_invariant_measure(p.slow_fast, x, 10.0, 20000, 50, 0.01, 23, 0);
    const auto a = average_coefficients(p.slow_fast, p.observation, x, m);
    CHECK(std::abs(a.bbar1[0]) < 3.0 * a.bbar1_se[0]);
    CHECK(a.abar[0] == 0.7 * 0.7);
    CHECK(a.hbar[0] == std::atan(xv));
  }
  const double bad[2] = {0.0, 0.0};
  const auto m = estimate_invariant_measure(p.slow_fast, std::span<const double>(bad, 1), 1.0,
                                            1000, 1, 0.01, 1, 0);
  CHECK_THROWS_AS(average_coefficients(p.slow_fast, p.observation, bad, m), InvalidArgument);
}

TEST_CASE("diffusion factor") {
  Eigen::MatrixXd a(1, 1);
  a << 4.0;
  CHECK(factor_diffusion(a)(0, 0) == doctest::Approx(2.0));
  const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(3, 3);
  CHECK((factor_diffusion(id) - id).norm() < 1e-14);

  Eigen::MatrixXd b(2, 2);
  b << 2.0, 1.0, 1.0, 2.0;
  const auto f = factor_diffusion(b);
  CHECK(f(0, 1) == 0.0);
  CHECK((f * f.transpose() - b).cwiseAbs().maxCoeff() < 1e-12);

  Eigen::MatrixXd asym(2, 2);
  asym << 2.0, 1.0, 0.5, 2.0;
  CHECK_THROWS_AS(factor_diffusion(asym), InvalidArgument);

  // rank deficient PSD input still recomposes
  Eigen::MatrixXd r(2, 2);
  r << 1.0, 1.0, 1.0, 1.0;
  const auto g = factor_diffusion(r);
  CHECK((g * g.transpose() - r).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("homogenized model modes") {
  const auto p = build_preset("example6");
  const auto cf = build_homogenized(p, ClosedFormMode{});
  CHECK(cf.provenance() == Provenance::closed_form);
  for (double xv : {-1.0, 0.0, 2.0}) {
    const double x[1] = {xv};
    const auto c = cf.at(x);
    CHECK(c.bbar1[0] == 0.0);
    CHECK(c.sigmabar1[0] == doctest::Approx(1.0));
    CHECK(c.hbar[0] == doctest::Approx(std::atan(xv)));
  }

  SUBCASE("z-free model averages to itself") {
    auto q = build_preset("linear_gaussian");
    const auto od = build_homogenized(q, OnDemandMode{}, {1.0, 1000, 5, 0.01, 1});
    for (double xv : {-1.0, 0.5}) {
      const double x[1] = {xv};
      const auto c = od.at(x);
      CHECK(c.bbar1[0] == doctest::Approx(-xv).epsilon(1e-12));
      CHECK(c.abar[0] == doctest::Approx(1.0).epsilon(1e-12));
      CHECK(c.hbar[0] == doctest::Approx(xv).epsilon(1e-12));
    }
  }

  SUBCASE("lattice agrees with the closed form and refuses to extrapolate") {
    const auto axis = lattice_axis(-3.0, 3.0, 7);
    CHECK(axis.front() == doctest::Approx(-3.6));
    CHECK(axis.back() == doctest::Approx(3.6));
    const AveragingParams ap{10.0, 5000, 20, 0.01, 5};
    const auto table = average_on_lattice(p, LatticeMode{{axis}}, ap);
    double pooled = 0.0, worst = 0.0;
    for (const auto& v : table.values) {
      pooled += v.bbar1_se[0] * v.bbar1_se[0];
      worst = std::max(worst, std::abs(v.bbar1[0]));
    }
    pooled = std::sqrt(pooled / static_cast<double>(table.values.size()));
    CHECK(worst < 3.0 * pooled);

    const auto lm = build_homogenized(p, LatticeMode{{axis}}, ap);
    const double out[1] = {4.0};
    CHECK_THROWS_AS(lm.at(out), ExtrapolationError);
    const double in[1] = {0.3};
    // nodes at 0 and 1.2; h is z-free so node values are exact
    CHECK(lm.at(in).hbar[0] == doctest::Approx(0.75 * std::atan(0.0) + 0.25 * std::atan(1.2)).epsilon(1e-12));
  }
}
