#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "levyfilter/models.hpp"
#include "levyfilter/sde.hpp"

namespace levyfilter {

/// Post-burn-in, stride-thinned states of the frozen fast process Z^x.
struct EmpiricalMeasure {
  std::vector<std::vector<double>> samples;
  double burn_in_used = 0.0;
  std::size_t thinning_stride = 1;
  std::vector<double> frozen_x;
  std::optional<std::string> warning;  // set when the stationarity diagnostic fails
};

struct AveragingParams {
  double burn_in = 10.0;
  std::size_t n_samples = 10000;
  std::size_t stride = 100;
  double dt = 0.01;
  std::uint64_t root_seed = 1;
};

EmpiricalMeasure estimate_invariant_measure(const SlowFastModel& model,
                                            std::span<const double> x, double burn_in,
                                            std::size_t n_samples, std::size_t stride, double dt,
                                            std::uint64_t root_seed, std::uint32_t stream_index);

/// Sample averages of b1(x,.), sigma1 sigma1^T(x,.) and h(x,.) under a measure.
struct AveragedCoefficients {
  std::vector<double> bbar1;
  std::vector<double> bbar1_se;  // batch-means standard error
  std::vector<double> abar;      // n x n, row-major, symmetrized
  std::vector<double> hbar;
};

AveragedCoefficients average_coefficients(const SlowFastModel& model,
                                          const ObservationModel& obs,
                                          std::span<const double> x,
                                          const EmpiricalMeasure& measure);

/// Lower-triangular F with F F^T = abar after clipping negative eigenvalues.
Eigen::MatrixXd factor_diffusion(const Eigen::MatrixXd& abar);

enum class Provenance { closed_form, monte_carlo };

namespace detail {
struct CoefficientSource;
}

/// Coefficients of the averaged slow equation
///   dX = bbar1(X) dt + sigmabar1(X) dVbar + int f1 dÑ_1
/// together with the averaged sensor hbar.
class HomogenizedModel {
 public:
  struct Coefficients {
    std::vector<double> bbar1;      // n
    std::vector<double> abar;       // n x n
    std::vector<double> sigmabar1;  // n x n lower triangular
    std::vector<double> hbar;       // d
  };

  HomogenizedModel(std::size_t n, std::size_t d, std::vector<double> x0, Field f1,
                   LevyMeasureSpec nu1, std::shared_ptr<const detail::CoefficientSource> source,
                   Provenance provenance, std::string description);

  void evaluate(std::span<const double> x, Coefficients& out) const;
  Coefficients at(std::span<const double> x) const;
  Coefficients make_buffers() const;

  std::size_t n() const noexcept { return n_; }
  std::size_t d() const noexcept { return d_; }
  const std::vector<double>& x0() const noexcept { return x0_; }
  const Field& f1() const noexcept { return f1_; }
  const LevyMeasureSpec& nu1() const noexcept { return nu1_; }
  Provenance provenance() const noexcept { return provenance_; }
  const std::string& description() const noexcept { return description_; }

 private:
  std::size_t n_;
  std::size_t d_;
  std::vector<double> x0_;
  Field f1_;
  LevyMeasureSpec nu1_;
  std::shared_ptr<const detail::CoefficientSource> source_;
  Provenance provenance_;
  std::string description_;
};

struct ClosedFormMode {};
/// Tensor-product lattice, one axis per slow coordinate; multilinear
/// interpolation, queries outside the lattice raise ExtrapolationError.
struct LatticeMode {
  std::vector<std::vector<double>> axes;
};
/// Lazily averaged at x rounded to 1e-6, cached.
struct OnDemandMode {};

using HomogenizationMode = std::variant<ClosedFormMode, LatticeMode, OnDemandMode>;

/// `count` points on [lo, hi] widened by a guard band of 10% of the span per side.
std::vector<double> lattice_axis(double lo, double hi, std::size_t count);

HomogenizedModel build_homogenized(const ModelPreset& preset, const HomogenizationMode& mode,
                                   const AveragingParams& params = {});

/// One row per lattice node (used by the `average` subcommand).
struct LatticeTable {
  std::vector<std::vector<double>> x;
  std::vector<AveragedCoefficients> values;
  std::vector<std::optional<std::string>> warnings;
};

LatticeTable average_on_lattice(const ModelPreset& preset, const LatticeMode& lattice,
                                const AveragingParams& params);

}  // namespace levyfilter
