#include "levyfilter/models.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "levyfilter/errors.hpp"

namespace levyfilter {

namespace {

void expect_shape(const Field& f, std::size_t rows, std::size_t cols, const char* name) {
  if (!f) throw InvalidArgument(fmt::format("{} is not set", name));
  if (f.rows() != rows || f.cols() != cols) {
    throw InvalidArgument(fmt::format("{} has shape {}x{}, expected {}x{}", name, f.rows(),
                                      f.cols(), rows, cols));
  }
}

}  // namespace

void SlowFastModel::check() const {
  if (n == 0 || m == 0 || l == 0) throw InvalidArgument("model dimensions must be positive");
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) {
    throw InvalidArgument("epsilon must be positive and finite");
  }
  if (x0.size() != n) throw InvalidArgument("x0 has the wrong dimension");
  if (z0.size() != m) throw InvalidArgument("z0 has the wrong dimension");
  expect_shape(b1, n, 1, "b1");
  expect_shape(sigma1, n, l, "sigma1");
  expect_shape(f1, n, 1, "f1");
  expect_shape(b2, m, 1, "b2");
  expect_shape(sigma2, m, m, "sigma2");
  expect_shape(f2, m, 1, "f2");
}

void ObservationModel::check(const SlowFastModel&) const {
  if (d == 0) throw InvalidArgument("observation dimension must be positive");
  expect_shape(h, d, 1, "h");
  expect_shape(f3, d, 1, "f3");
  expect_shape(g3, d, 1, "g3");
  if (!(lambda_lower >= 0.0 && lambda_lower <= 1.0)) {
    throw InvalidArgument("lambda_lower must lie in [0,1]");
  }
  if (std::isnan(h_bound) || h_bound < 0.0) throw InvalidArgument("h_bound must be >= 0");
}

// ---------------------------------------------------------------------------

Intensity Intensity::constant(double c) {
  if (!(c > 0.0 && c <= 1.0)) {
    throw InvalidArgument(fmt::format("constant intensity {} outside (0,1]", c));
  }
  Intensity i;
  i.kind_ = Kind::constant;
  i.c0_ = c;
  i.c1_ = c;
  return i;
}

Intensity Intensity::logistic(double c0, double c1, double a) {
  const bool in_range = c0 > 0.0 && c0 <= 1.0 && c1 > 0.0 && c1 <= 1.0;
  if (!in_range) throw InvalidArgument("logistic intensity bounds must lie in (0,1]");
  Intensity i;
  i.kind_ = Kind::logistic;
  i.c0_ = c0;
  i.c1_ = c1;
  i.a_ = a;
  return i;
}

Intensity Intensity::callback(IntensityFn fn, bool depends_on_mark) {
  Intensity i;
  i.kind_ = Kind::callback;
  i.fn_ = std::move(fn);
  i.depends_on_mark_ = depends_on_mark;
  return i;
}

double Intensity::operator()(double t, std::span<const double> x,
                             std::span<const double> u) const {
  switch (kind_) {
    case Kind::constant: return c0_;
    case Kind::logistic: return c0_ + (c1_ - c0_) / (1.0 + std::exp(-a_ * x[0]));
    case Kind::callback: return fn_(t, x, u);
  }
  return c0_;
}

double Intensity::complement_integral(double t, std::span<const double> x,
                                      const LevyMeasureSpec& nu) const {
  if (nu.is_null()) return 0.0;
  if (!depends_on_mark_) {
    const double value = (*this)(t, x, nu.marks().node(0));
    check_intensity(value, t, x, nu.marks().node(0));
    return (1.0 - value) * nu.total_intensity();
  }
  return nu.integrate([&](std::span<const double> u) {
    const double value = (*this)(t, x, u);
    check_intensity(value, t, x, u);
    return 1.0 - value;
  });
}

// ---------------------------------------------------------------------------

ModelPreset build_example6(double sigma1, double sigma2, double x0, double z0,
                           double lambda_const, double epsilon) {
  if (sigma1 == 0.0 || !std::isfinite(sigma1)) throw InvalidArgument("sigma1 must be nonzero");
  if (sigma2 == 0.0 || !std::isfinite(sigma2)) throw InvalidArgument("sigma2 must be nonzero");
  if (!(lambda_const > 0.0 && lambda_const < 1.0)) {
    throw InvalidArgument(fmt::format("lambda_const {} outside (0,1)", lambda_const));
  }

  ModelPreset p;
  p.name = "example6";

  auto& s = p.slow_fast;
  s.n = s.m = s.l = 1;
  s.epsilon = epsilon;
  s.x0 = {x0};
  s.z0 = {z0};
  s.b1 = Field(1, 1, [](const EvalPoint& e, std::span<double> out) { out[0] = std::sin(e.z[0]); },
               {"sin(z[0])"});
  s.sigma1 = Field::constant(1, 1, {sigma1});
  s.f1 = Field::zero(1, 1);
  s.b2 = Field(1, 1, [](const EvalPoint& e, std::span<double> out) { out[0] = -e.z[0]; },
               {"-z[0]"});
  s.sigma2 = Field::constant(1, 1, {sigma2});
  s.f2 = Field::zero(1, 1);
  s.ou_sigma2 = sigma2;
  // sin and -z are 1-Lipschitz; |sin z|^2 + sigma1^2 <= 1 + sigma1^2
  s.bounds = BoundConstants{1.0, 1.0 + sigma1 * sigma1, 1.0};
  s.check();

  auto& o = p.observation;
  o.d = 1;
  o.h = Field(1, 1, [](const EvalPoint& e, std::span<double> out) { out[0] = std::atan(e.x[0]); },
              {"arctan(x[0])"});
  o.h_bound = std::numbers::pi / 2.0;
  o.f3 = Field(1, 1, [](const EvalPoint& e, std::span<double> out) { out[0] = e.u[0]; },
               {"u[0]"});
  o.g3 = Field(1, 1, [](const EvalPoint& e, std::span<double> out) { out[0] = e.u[0]; },
               {"u[0]"});
  o.lambda = Intensity::constant(lambda_const);
  o.lambda_lower = lambda_const;
  o.nu3_small = LevyMeasureSpec(1.0, MarkSampler(UniformMarks{-1.0, 1.0}), Region::U3);
  o.nu3_large = LevyMeasureSpec(0.5, MarkSampler(UniformMarks{1.0, 2.0}), Region::U3_complement);
  o.check(s);

  ClosedForm cf;
  const double s2 = sigma2 * sigma2;
  cf.invariant_mean = {0.0};
  cf.invariant_variance = {s2 / 2.0};
  cf.transition = [s2](double z_start, double t) {
    return std::pair{z_start * std::exp(-t), -s2 * std::expm1(-2.0 * t) / 2.0};
  };
  cf.bbar1 = {0.0};
  cf.abar = {sigma1 * sigma1};
  cf.hbar = o.h;
  p.closed_form = std::move(cf);
  return p;
}

ModelPreset build_linear_gaussian(double a, double c, double sigma, double x0) {
  ModelPreset p;
  p.name = "linear_gaussian";
  auto& s = p.slow_fast;
  s.n = s.m = s.l = 1;
  s.epsilon = 1.0;
  s.x0 = {x0};
  s.z0 = {0.0};
  const FieldSignature xz{1, 1, 0, false};
  s.b1 = Field::from_expressions(1, 1, {fmt::format("({:.17g})*x[0] + ({:.17g})", -a, c)}, xz,
                                 "b1");
  s.sigma1 = Field::constant(1, 1, {sigma});
  s.f1 = Field::zero(1, 1);
  s.b2 = Field::from_expressions(1, 1, {"-z[0]"}, xz, "b2");
  s.sigma2 = Field::zero(1, 1);
  s.f2 = Field::zero(1, 1);
  s.ou_sigma2 = 0.0;
  s.check();

  auto& o = p.observation;
  o.d = 1;
  o.h = Field::from_expressions(1, 1, {"x[0]"}, xz, "h");
  o.h_bound = std::numeric_limits<double>::infinity();
  o.f3 = Field::zero(1, 1);
  o.g3 = Field::zero(1, 1);
  o.lambda = Intensity::constant(1.0);
  o.lambda_lower = 1.0;
  o.check(s);
  return p;
}

ModelPreset build_preset(const std::string& name) {
  if (name == "example6") return build_example6(1.0, std::numbers::sqrt2, 0.0, 0.0, 0.8, 0.1);
  if (name == "linear_gaussian") return build_linear_gaussian(1.0, 0.0, 1.0, 0.0);
  throw ConfigError(fmt::format("unknown preset '{}'", name));
}

// ---------------------------------------------------------------------------

bool ValidationReport::ok() const {
  for (const auto& c : checks) {
    if (!c.skipped && c.violations > 0) return false;
  }
  return true;
}

const AssumptionCheck* ValidationReport::find(const std::string& name) const {
  for (const auto& c : checks) {
    if (c.name == name) return &c;
  }
  return nullptr;
}

namespace {

constexpr double kSampleScale = 3.0;

double norm2(std::span<const double> v) {
  double s = 0.0;
  for (double c : v) s += c * c;
  return s;
}

double diff_norm2(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

void fill_gauss(RngStream& stream, std::vector<double>& v) {
  for (auto& c : v) c = kSampleScale * stream.normal();
}

// Records a candidate violation `excess` (> tolerance counts).
void record(AssumptionCheck& check, double excess, double scale, const std::string& witness) {
  ++check.evaluated;
  const double tol = 1e-12 * (1.0 + std::abs(scale));
  if (excess > tol || std::isnan(excess)) {
    ++check.violations;
    if (!(excess <= check.max_violation)) {
      check.max_violation = excess;
      check.witness = witness;
    }
  }
}

std::string point_text(std::span<const double> x, std::span<const double> z) {
  return fmt::format("x=[{}], z=[{}]", fmt::join(x, ","), fmt::join(z, ","));
}

AssumptionCheck make_check(std::string name, std::string description) {
  AssumptionCheck c;
  c.name = std::move(name);
  c.description = std::move(description);
  return c;
}

}  // namespace

ValidationReport validate_assumptions(const ModelPreset& preset, std::size_t sample_count,
                                      RngStream& stream) {
  const auto& s = preset.slow_fast;
  const auto& o = preset.observation;
  ValidationReport report;

  std::vector<double> x1(s.n), x2(s.n), z1(s.m), z2(s.m);
  std::vector<double> a(std::max({s.n * s.l, s.m * s.m, s.n, s.m, o.d}));
  std::vector<double> b(a.size());

  auto h1_slow = make_check("H1_b1_sigma1_f1",
                          "Lipschitz bound of b1, sigma1 and f1 with constant L1");
  auto h2_slow = make_check("H2_b1_sigma1_f1", "|b1|^2 + |sigma1|^2 + int |f1|^2 dnu1 <= L2");
  auto h1_fast = make_check("H1_b2_sigma2_f2",
                          "Lipschitz bound of b2, sigma2 and f2 with constant L3");
  if (!s.bounds) {
    for (auto* c : {&h1_slow, &h2_slow, &h1_fast}) c->skipped = true;
    report.warnings.push_back("bound constants missing; Lipschitz and growth checks skipped");
  } else {
    const auto& L = *s.bounds;
    for (std::size_t k = 0; k < sample_count; ++k) {
      fill_gauss(stream, x1);
      fill_gauss(stream, x2);
      fill_gauss(stream, z1);
      fill_gauss(stream, z2);
      const EvalPoint p1{x1, z1, {}, 0.0};
      const EvalPoint p2{x2, z2, {}, 0.0};
      const double dx2 = diff_norm2(x1, x2);
      const double dz2 = diff_norm2(z1, z2);
      const double dist = std::sqrt(dx2) + std::sqrt(dz2);
      const auto witness = point_text(x1, z1) + "; " + point_text(x2, z2);

      std::span<double> sa(a.data(), s.n), sb(b.data(), s.n);
      s.b1(p1, sa);
      s.b1(p2, sb);
      const double db1 = std::sqrt(diff_norm2(sa, sb));
      const double b1_sq = norm2(sa);
      record(h1_slow, db1 - L.L1 * dist, L.L1 * dist, witness);

      std::span<double> ma(a.data(), s.n * s.l), mb(b.data(), s.n * s.l);
      s.sigma1(p1, ma);
      const double sig1_sq = norm2(ma);
      s.sigma1(p2, mb);
      record(h1_slow, diff_norm2(ma, mb) - L.L1 * (dx2 + dz2), L.L1 * (dx2 + dz2), witness);

      std::vector<double> fa(s.n), fb(s.n);
      const double df1 = s.nu1.integrate([&](std::span<const double> u) {
        s.f1({x1, {}, u, 0.0}, fa);
        s.f1({x2, {}, u, 0.0}, fb);
        return diff_norm2(fa, fb);
      });
      record(h1_slow, df1 - L.L1 * dx2, L.L1 * dx2, witness);

      const double f1_sq = s.nu1.integrate([&](std::span<const double> u) {
        s.f1({x1, {}, u, 0.0}, fa);
        return norm2(fa);
      });
      record(h2_slow, b1_sq + sig1_sq + f1_sq - L.L2, L.L2, point_text(x1, z1));

      std::span<double> ca(a.data(), s.m), cb(b.data(), s.m);
      s.b2(p1, ca);
      s.b2(p2, cb);
      record(h1_fast, std::sqrt(diff_norm2(ca, cb)) - L.L3 * dist, L.L3 * dist, witness);
      std::span<double> qa(a.data(), s.m * s.m), qb(b.data(), s.m * s.m);
      s.sigma2(p1, qa);
      s.sigma2(p2, qb);
      record(h1_fast, diff_norm2(qa, qb) - L.L3 * (dx2 + dz2), L.L3 * (dx2 + dz2), witness);
      std::vector<double> ga(s.m), gb(s.m);
      const double df2 = s.nu2.integrate([&](std::span<const double> u) {
        s.f2({x1, z1, u, 0.0}, ga);
        s.f2({x2, z2, u, 0.0}, gb);
        return diff_norm2(ga, gb);
      });
      record(h1_fast, df2 - L.L3 * (dx2 + dz2), L.L3 * (dx2 + dz2), witness);
    }
  }
  report.checks.push_back(std::move(h1_slow));
  report.checks.push_back(std::move(h2_slow));
  report.checks.push_back(std::move(h1_fast));

  auto h_bounded = make_check("A4_h_bounded", "|h(x,z)| <= declared h_bound");
  std::vector<double> hv(o.d);
  for (std::size_t k = 0; k < sample_count; ++k) {
    fill_gauss(stream, x1);
    fill_gauss(stream, z1);
    o.h({x1, z1, {}, 0.0}, hv);
    record(h_bounded, std::sqrt(norm2(hv)) - o.h_bound, o.h_bound, point_text(x1, z1));
  }
  report.checks.push_back(std::move(h_bounded));

  auto f3_l2 = make_check("A4_f3_square_integrable",
                        "int_0^1 int_U3 |f3(s,u)|^2 nu3(du) ds is finite");
  {
    double acc = 0.0;
    std::vector<double> fv(o.d);
    for (std::size_t k = 0; k < sample_count; ++k) {
      const double t = stream.uniform();
      acc += o.nu3_small.integrate([&](std::span<const double> u) {
        o.f3({{}, {}, u, t}, fv);
        return norm2(fv);
      });
    }
    const double value = sample_count > 0 ? acc / static_cast<double>(sample_count) : 0.0;
    ++f3_l2.evaluated;
    if (!std::isfinite(value)) {
      ++f3_l2.violations;
      f3_l2.max_violation = std::numeric_limits<double>::infinity();
      f3_l2.witness = "non-finite quadrature value";
    }
  }
  report.checks.push_back(std::move(f3_l2));

  auto lambda_range = make_check("A5_lambda_range", "lambda_lower <= lambda(t,x,u) < 1 on U3");
  if (o.nu3_small.is_null()) {
    lambda_range.skipped = true;
    report.warnings.push_back("nu3 is null on U3; intensity range check is vacuous");
  } else {
    std::vector<double> u(o.nu3_small.marks().dim());
    for (std::size_t k = 0; k < sample_count; ++k) {
      fill_gauss(stream, x1);
      o.nu3_small.marks().draw(stream, u);
      const double t = stream.uniform();
      const double value = o.lambda(t, x1, u);
      ++lambda_range.evaluated;
      if (!(value >= o.lambda_lower && value < 1.0)) {
        ++lambda_range.violations;
        const double excess = std::max(o.lambda_lower - value, value - 1.0);
        if (lambda_range.violations == 1 || excess > lambda_range.max_violation) {
          lambda_range.max_violation = std::max(excess, 0.0);
          lambda_range.witness =
              fmt::format("t={}, x=[{}], u=[{}], lambda={}", t, fmt::join(x1, ","),
                          fmt::join(u, ","), value);
        }
      }
    }
  }
  report.checks.push_back(std::move(lambda_range));
  return report;
}

}  // namespace levyfilter
