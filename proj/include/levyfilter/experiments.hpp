#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "levyfilter/averaging.hpp"
#include "levyfilter/filter.hpp"
#include "levyfilter/serialization.hpp"

namespace levyfilter {

/// Two-sample Kolmogorov-Smirnov statistic sup |F_a - F_b|.
double ks_statistic(std::span<const double> a, std::span<const double> b);

/// c(alpha) sqrt((na + nb) / (na nb)); c = 1.63 at the 1% level.
double ks_critical(std::size_t na, std::size_t nb, double c_alpha = 1.63);

/// Resolution policy for studies over several epsilons.
struct DtRule {
  double dt_slow = 0.01;
  FastMode fast_mode = FastMode::exact_ou;

  StepScheme scheme_for(const SlowFastModel& model) const;
};

/// Copy of `preset` with the scale parameter replaced.
ModelPreset with_epsilon(const ModelPreset& preset, double epsilon);

/// Slow endpoints X_T of n_paths signal paths (path indices 0..n_paths-1).
std::vector<double> slow_endpoints(const SlowFastModel& model, double T, const StepScheme& scheme,
                                   std::uint64_t root_seed, std::size_t n_paths,
                                   std::size_t coordinate = 0);
std::vector<double> homogenized_endpoints(const HomogenizedModel& model, double T, double dt,
                                          std::uint64_t root_seed, std::size_t n_paths,
                                          std::size_t coordinate = 0);

struct SignalConvergence {
  std::vector<double> epsilons;
  std::vector<double> ks;  // max over slow coordinates
  std::size_t n_paths = 0;
  double critical_1pct = 0.0;
};

/// Per epsilon: KS distance between n_paths draws of X^eps_T and of X^0_T.
/// The X^0 sample uses a seed independent of the X^eps samples; the X^eps
/// samples share their streams across epsilons.
SignalConvergence signal_convergence_study(const ModelPreset& preset,
                                           const HomogenizedModel& homogenized,
                                           std::span<const double> epsilons,
                                           std::size_t n_paths, double T, const DtRule& rule,
                                           std::uint64_t seed);

struct MartingaleReport {
  std::size_t runs = 0;
  double mean_lambda = 0.0;  // E[Lambda_T] under the reference measure
  double se_lambda = 0.0;
  double mean_inverse = 0.0;  // E[1/Lambda_T] under the physical measure
  double se_inverse = 0.0;
  double max_inverse_rho0 = 0.0;  // max over runs of 1/rho^0_T(1)
};

struct MartingaleOptions {
  std::size_t runs = 10000;
  double T = 1.0;
  DtRule dt_rule;
  std::uint64_t seed = 1;
  std::size_t rho0_runs = 20;
  std::size_t rho0_particles = 200;
};

/// Monte Carlo mean of Lambda_T along independent signal paths and reference
/// observations (signal-free Brownian part, unthinned rate-nu3 jumps), of
/// 1/Lambda_T along physical paths, and the largest 1/rho^0_T(1) seen.
MartingaleReport martingale_check(const ModelPreset& preset, const HomogenizedModel* homogenized,
                                  const MartingaleOptions& options);

/// E[Lambda_T] for h = 0 and constant lambda: sum_k P(J = k) lambda^k e^{(1-lambda) m T}
/// with J ~ Poisson(m T), summed to `terms`.
double poisson_martingale_mean(double lambda, double mass, double T, std::size_t terms = 200);

// ---------------------------------------------------------------------------

struct LinearSpec {
  double a = 1.0;
  double c = 0.0;
  double sigma = 1.0;
  double x0 = 0.0;
  double p0 = 0.0;
};

/// Reads (a, c, sigma, x0) off a scalar jump-free preset with h(x) = x;
/// throws InvalidArgument when the coefficients are not of that form.
LinearSpec linear_spec_from_preset(const ModelPreset& preset);

struct OracleResult {
  std::vector<double> times;
  std::vector<double> oracle_mean;
  std::vector<double> oracle_variance;
  std::vector<double> filter_mean;
  double rmse = 0.0;
};

/// Euler integration of the Kalman-Bucy equations on the grid of `dy`.
OracleResult kalman_oracle(const LinearSpec& spec, double dt, std::span<const double> dy);

/// Riccati variance P(T) from P(0) = p0.
std::vector<double> riccati_path(const LinearSpec& spec, double T, double dt);

/// Particle filter mean on one simulated path vs the Kalman-Bucy mean.
OracleResult kalman_comparison(const ModelPreset& preset, std::size_t particles, double T,
                               double dt, std::uint64_t seed);

// ---------------------------------------------------------------------------

struct ConvergenceOptions {
  std::vector<double> epsilons{0.5, 0.1, 0.02};
  std::size_t replications = 200;
  std::size_t particles = 2000;
  std::vector<std::string> psi{"tanh"};
  double T = 1.0;
  DtRule dt_rule;
  double ess_fraction = 0.5;
  std::uint64_t seed = 1;
  std::size_t signal_paths = 0;     // 0 skips the signal KS column
  std::size_t martingale_runs = 0;  // 0 skips the martingale columns
};

struct EpsilonStats {
  double epsilon = 0.0;
  std::vector<double> mean_gap;  // per psi
  std::vector<double> gap_se;
  std::vector<double> ks_pi;  // KS of pi^eps_T(psi) vs pi^0_T(psi) samples
  double ks_signal = 0.0;
  double martingale_mean = 0.0;
  double martingale_se = 0.0;
  std::vector<std::vector<double>> pi_full;   // [psi][replication]
  std::vector<std::vector<double>> pi_homog;  // [psi][replication]
};

struct ConvergenceReport {
  ConvergenceOptions options;
  std::vector<std::string> psi_names;
  std::vector<EpsilonStats> per_eps;
  bool insufficient_replications = false;
  FilterDiagnostics diagnostics;  // merged over every filter run
  bool has_signal = false;
  bool has_martingale = false;
};

/// Per replication and epsilon: one (X, Z, Y) path, then both filters on the
/// same observations with shared particle streams; |pi^eps_T - pi^0_T| is
/// averaged over replications.
ConvergenceReport filter_convergence_study(const ModelPreset& preset,
                                           const HomogenizedModel& homogenized,
                                           const ConvergenceOptions& options);

struct TrendAssessment {
  bool gap_decreasing = false;           // strictly, each step beyond the combined SE
  bool ks_decreasing = false;            // strictly
  std::vector<double> gap_decrements;    // gap[i] - gap[i+1]
  std::vector<double> combined_se;       // sqrt(se[i]^2 + se[i+1]^2)
};

TrendAssessment assess_trend(const ConvergenceReport& report, std::size_t psi_index = 0);

/// One row per (epsilon, psi).
void write_convergence_csv(const ConvergenceReport& report, std::ostream& os);
/// Per replication values of both filters.
void write_replications_csv(const ConvergenceReport& report, std::ostream& os);
Json convergence_summary(const ConvergenceReport& report);

}  // namespace levyfilter
