#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "levyfilter/expression.hpp"
#include "levyfilter/noise.hpp"

namespace levyfilter {

/// Lipschitz / growth constants used by the sampled assumption checks.
struct BoundConstants {
  double L1 = 0.0;
  double L2 = 0.0;
  double L3 = 0.0;
};

/// Slow-fast system
///   dX = b1 dt + sigma1 dV + int f1 dÑ_1
///   dZ = b2/eps dt + sigma2/sqrt(eps) dW + int f2 dÑ_2^eps
/// with X in R^n, Z in R^m and V an l-dimensional Brownian motion.
struct SlowFastModel {
  std::size_t n = 1;
  std::size_t m = 1;
  std::size_t l = 1;
  double epsilon = 1.0;
  std::vector<double> x0;
  std::vector<double> z0;

  Field b1;      // (x,z) -> n
  Field sigma1;  // (x,z) -> n x l
  Field f1;      // (x,u) -> n
  Field b2;      // (x,z) -> m
  Field sigma2;  // (x,z) -> m x m
  Field f2;      // (x,z,u) -> m
  LevyMeasureSpec nu1 = LevyMeasureSpec::none(Region::U1);
  LevyMeasureSpec nu2 = LevyMeasureSpec::none(Region::U2);

  // Set when the frozen fast dynamics is dZ = -Z dt + s dW coordinate-wise
  // (b2 = -z, sigma2 = s I, f2 = 0); enables exact transition sampling.
  std::optional<double> ou_sigma2;
  std::optional<BoundConstants> bounds;

  /// Throws InvalidArgument on inconsistent shapes or a non-positive epsilon.
  void check() const;
};

/// Jump intensity lambda(t, x, u) of the observation jumps.
class Intensity {
 public:
  enum class Kind { constant, logistic, callback };

  static Intensity constant(double c);
  /// c0 + (c1 - c0) / (1 + exp(-a x[0]))
  static Intensity logistic(double c0, double c1, double a);
  static Intensity callback(IntensityFn fn, bool depends_on_mark = true);

  double operator()(double t, std::span<const double> x, std::span<const double> u) const;

  /// Integral of 1 - lambda(t, x, .) against nu.
  double complement_integral(double t, std::span<const double> x,
                             const LevyMeasureSpec& nu) const;

  Kind kind() const noexcept { return kind_; }
  bool depends_on_mark() const noexcept { return depends_on_mark_; }
  double c0() const noexcept { return c0_; }
  double c1() const noexcept { return c1_; }
  double a() const noexcept { return a_; }

 private:
  Kind kind_ = Kind::constant;
  double c0_ = 1.0;
  double c1_ = 1.0;
  double a_ = 0.0;
  bool depends_on_mark_ = false;
  IntensityFn fn_;
};

/// Observation
///   dY = h(X,Z) dt + dB + int_{U3} f3 dÑ_lambda + int_{U \ U3} g3 dN_lambda
/// where N_lambda has compensator lambda(t, X_t, u) nu3(du) dt.
struct ObservationModel {
  std::size_t d = 1;
  Field h;  // (x,z) -> d
  double h_bound = 0.0;
  Field f3;  // (t,u) -> d
  Field g3;  // (t,u) -> d
  Intensity lambda = Intensity::constant(1.0);
  double lambda_lower = 0.0;
  LevyMeasureSpec nu3_small = LevyMeasureSpec::none(Region::U3);
  LevyMeasureSpec nu3_large = LevyMeasureSpec::none(Region::U3_complement);

  void check(const SlowFastModel& model) const;
};

/// Known analytic facts about a preset.
struct ClosedForm {
  std::vector<double> invariant_mean;
  std::vector<double> invariant_variance;  // per fast coordinate
  // mean and variance of the frozen fast transition from z0 over time t
  std::function<std::pair<double, double>(double z0, double t)> transition;
  std::vector<double> bbar1;  // constant averaged drift
  std::vector<double> abar;   // constant averaged diffusion, n x n
  Field hbar;                 // x -> d
};

struct ModelPreset {
  std::string name;
  SlowFastModel slow_fast;
  ObservationModel observation;
  std::optional<ClosedForm> closed_form;
};

/// Scalar system with b1 = sin z, b2 = -z, constant sigma1/sigma2, no signal
/// jumps, sensor arctan x and observation jumps f3 = g3 = u on |u| < 1 and
/// |u| >= 1 accepted with constant probability lambda_const.
ModelPreset build_example6(double sigma1, double sigma2, double x0, double z0,
                           double lambda_const, double epsilon = 0.1);

/// Scalar linear-Gaussian system without jumps: b1 = -a x + c, sigma1 = sigma,
/// sensor h(x) = x; the fast variable is a decoupled, noise-free OU.
ModelPreset build_linear_gaussian(double a, double c, double sigma, double x0);

ModelPreset build_preset(const std::string& name);

// ---------------------------------------------------------------------------

struct AssumptionCheck {
  std::string name;
  std::string description;
  bool skipped = false;
  std::size_t evaluated = 0;
  std::size_t violations = 0;
  double max_violation = 0.0;
  std::string witness;  // point of the largest violation
};

struct ValidationReport {
  std::vector<AssumptionCheck> checks;
  std::vector<std::string> warnings;

  bool ok() const;
  const AssumptionCheck* find(const std::string& name) const;
};

/// Samples the standing assumptions (Lipschitz and growth bounds of the
/// coefficients, boundedness of h, square integrability of f3, and
/// lambda_lower <= lambda < 1) on `sample_count` random points.
ValidationReport validate_assumptions(const ModelPreset& preset, std::size_t sample_count,
                                      RngStream& stream);

}  // namespace levyfilter
