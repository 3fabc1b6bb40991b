#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "levyfilter/averaging.hpp"
#include "levyfilter/models.hpp"
#include "levyfilter/sde.hpp"

namespace levyfilter {

/// Bounded test function of the first slow coordinate. `lo`/`hi` are its
/// declared range; estimates are checked against them.
struct TestFunction {
  std::string name;
  std::function<double(double)> fn;
  double lo = -1.0;
  double hi = 1.0;

  double operator()(std::span<const double> x) const { return fn(x[0]); }

  /// tanh, arctan, one, indicator(a,b) (mollified over 1e-2), poly(c0,c1,c2)
  /// or poly(c0,c1,c2,lo,hi) (clipped to [lo,hi]).
  static TestFunction parse(std::string_view text);
  static std::vector<TestFunction> parse_list(std::string_view comma_separated);
};

struct Particle {
  std::vector<double> x;
  std::optional<std::vector<double>> z;  // full model only
  double log_weight = 0.0;
  SignalStreams streams;
};

struct ParticleEnsemble {
  std::vector<Particle> particles;
  double time = 0.0;
  std::size_t resample_count = 0;
  std::vector<double> ess_history;

  std::size_t size() const noexcept { return particles.size(); }
  /// log of rho(1) = (1/N) sum exp(log_weight)
  double log_mass() const;
  /// (sum w)^2 / sum w^2
  double ess() const;
};

/// Deterministic pairwise summation (fixed fan-in, independent of threading).
double pairwise_sum(std::span<const double> values);

/// h.dY - |h|^2 dt / 2 + sum log lambda(t_j, x, u_j) + dt int_U3 (1 - lambda(t, x, u)) nu3(du)
double log_weight_increment(std::span<const double> h_val, std::span<const double> dy_cont,
                            double dt, std::span<const JumpEvent> jumps, const Intensity& lambda,
                            std::span<const double> x, double t, const LevyMeasureSpec& nu3);

struct FullDynamics {
  const SlowFastModel* model;
  StepScheme scheme;
  const Field* h;  // may be null when no sensor average is needed
};
struct HomogenizedDynamics {
  const HomogenizedModel* model;
};
using FilterDynamics = std::variant<FullDynamics, HomogenizedDynamics>;

ParticleEnsemble make_ensemble(const FilterDynamics& dynamics, std::size_t count,
                               std::uint64_t root_seed);

/// Advances every particle by dt under the signal dynamics; weights unchanged.
void propagate(ParticleEnsemble& ensemble, const FilterDynamics& dynamics, double dt);

struct Estimate {
  double rho_psi = 0.0;
  double rho_1 = 0.0;
  double pi = 0.0;
};

Estimate estimate(const ParticleEnsemble& ensemble, const TestFunction& psi);

/// Offspring counts of systematic resampling with offset in [0, 1/n_out).
std::vector<std::size_t> systematic_counts(std::span<const double> weights, std::size_t n_out,
                                           double offset);

/// Systematic resampling on the normalized weights. All log-weights become
/// log rho(1) and particle streams are re-derived from (root_seed,
/// resample_count, index). Returns the relative change of rho(1).
double resample(ParticleEnsemble& ensemble, std::uint64_t root_seed);

struct FilterParams {
  std::size_t particles = 1000;
  double ess_fraction = 0.5;
  bool resampling = true;
  std::uint64_t root_seed = 1;
};

/// Invariant bookkeeping gathered at every step of a filter run.
struct FilterDiagnostics {
  bool estimates_in_range = true;  // pi(psi) within [psi.lo, psi.hi]
  bool mass_positive = true;       // rho(1) finite and > 0
  double min_log_rho1 = std::numeric_limits<double>::infinity();
  double max_resample_mass_error = 0.0;
  double max_normalization_error = 0.0;  // |pi(1) - 1|
  std::size_t steps = 0;
  std::size_t resamples = 0;

  void merge(const FilterDiagnostics& other);
  bool ok(double mass_tolerance = 1e-12) const;
};

struct FilterOutput {
  std::vector<double> times;
  std::vector<std::string> psi_names;
  std::vector<std::vector<double>> pi;  // [psi][time]
  std::vector<double> rho1;
  std::vector<double> log_rho1;
  std::vector<double> ess;
  std::vector<double> resample_times;
  FilterDiagnostics diagnostics;
};

/// Particle filter over the observation grid of `observations`:
/// propagate, reweight with the stored reference increments and jump log,
/// resample when ESS < ess_fraction * N.
FilterOutput run_filter(const FilterDynamics& dynamics, const ObservationModel& obs,
                        const JointPath& observations, std::span<const TestFunction> psi,
                        const FilterParams& params);

/// CSV `t,pi_<psi>...,rho1,ess` with 17 significant digits.
void write_filter_csv(const FilterOutput& out, std::ostream& os);

}  // namespace levyfilter
