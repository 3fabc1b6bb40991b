#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "levyfilter/models.hpp"
#include "levyfilter/noise.hpp"

namespace levyfilter {

class HomogenizedModel;

enum class FastMode { euler, exact_ou };

const char* to_string(FastMode mode) noexcept;
FastMode parse_fast_mode(std::string_view text);

/// Multirate step sizes: the fast variable takes dt_slow / dt_fast substeps
/// per slow step with the slow state frozen at its left value.
struct StepScheme {
  double dt_slow = 0.01;
  double dt_fast = 0.01;
  FastMode fast_mode = FastMode::euler;
};

/// Largest dt_fast <= min(dt_slow, eps/10) dividing dt_slow (euler), or
/// dt_fast = dt_slow (exact_ou).
StepScheme make_scheme(const SlowFastModel& model, double dt_slow, FastMode mode);

/// Throws StiffnessRejected when euler mode violates dt_fast <= eps/10 and
/// InvalidArgument for inconsistent step sizes or an unusable exact_ou mode.
void check_scheme(const SlowFastModel& model, const StepScheme& scheme);

/// Independent streams driving one signal path (V, W and the two jump measures).
struct SignalStreams {
  RngStream slow;
  RngStream fast;
  RngStream slow_jumps;
  RngStream fast_jumps;

  static SignalStreams for_path(std::uint64_t root_seed, std::uint32_t path_index);
};

struct JumpLog {
  std::vector<JumpEvent> slow;
  std::vector<JumpEvent> fast;
  std::vector<JumpEvent> observation_small;  // base N_lambda atoms on U3, with acceptance flag
  std::vector<JumpEvent> observation_large;  // base atoms on U \ U3
};

/// One Euler-Maruyama slow step of the full system; the fast variable is
/// substepped inside. After `advance`, `x_left()` holds the state the step
/// started from and `h_average()` the mean of h over the fast substeps.
class SignalStepper {
 public:
  SignalStepper(const SlowFastModel& model, const StepScheme& scheme, const Field* h = nullptr);

  void advance(double t, std::span<double> x, std::span<double> z, SignalStreams& streams,
               JumpLog* log = nullptr);

  std::span<const double> x_left() const noexcept { return x_left_; }
  std::span<const double> h_average() const noexcept { return h_avg_; }
  std::size_t substeps() const noexcept { return substeps_; }

 private:
  const SlowFastModel* model_;
  StepScheme scheme_;
  const Field* h_;
  std::size_t substeps_;
  double ou_decay_ = 0.0;
  double ou_scale_ = 0.0;

  std::vector<double> x_left_, inc_, h_avg_, h_tmp_;
  std::vector<double> tmp_n_, mat_nl_, dv_;
  std::vector<double> tmp_m_, tmp_m2_, mat_mm_, dw_;
};

/// Euler step of the homogenized slow equation; same accessors as SignalStepper.
class HomogenizedStepper {
 public:
  explicit HomogenizedStepper(const HomogenizedModel& model);

  void advance(double t, double dt, std::span<double> x, SignalStreams& streams,
               JumpLog* log = nullptr);

  std::span<const double> x_left() const noexcept { return x_left_; }
  std::span<const double> h_average() const noexcept { return h_; }

 private:
  const HomogenizedModel* model_;
  std::vector<double> x_left_, h_, bbar_, abar_, sigma_, dv_, tmp_;
};

/// Path of (X, Z, Y) on the slow grid plus everything the filter needs.
struct JointPath {
  double dt = 0.0;
  std::vector<double> times;
  std::vector<std::vector<double>> X;
  std::vector<std::vector<double>> Z;
  std::vector<std::vector<double>> Y;
  JumpLog jump_log;
  // per step: increment of the reference Brownian motion B + int h ds
  std::vector<std::vector<double>> bbar_increments;
  // per step: int h ds
  std::vector<std::vector<double>> drift_increments;
  // per step: dt * int_U3 f3 lambda nu3(du), subtracted from Y
  std::vector<std::vector<double>> compensator_increments;

  std::size_t steps() const noexcept { return times.empty() ? 0 : times.size() - 1; }
};

JointPath simulate_full(const SlowFastModel& model, const ObservationModel& obs, double T,
                        const StepScheme& scheme, std::uint64_t root_seed,
                        std::uint32_t path_index);

struct FastPath {
  std::vector<double> times;
  std::vector<std::vector<double>> Z;
};

/// Frozen fast process dZ = b2(x,Z) dt + sigma2(x,Z) dW + int f2 dÑ_2 (no eps).
class FrozenFastStepper {
 public:
  FrozenFastStepper(const SlowFastModel& model, std::span<const double> x, double dt,
                    FastMode mode = FastMode::euler);

  void step(double t, std::span<double> z, SignalStreams& streams);

 private:
  const SlowFastModel* model_;
  std::vector<double> x_;
  double dt_;
  FastMode mode_;
  double ou_decay_ = 0.0;
  double ou_scale_ = 0.0;
  std::vector<double> tmp_, comp_, mat_, dw_;
};

FastPath simulate_frozen_fast(const SlowFastModel& model, std::span<const double> x,
                              std::span<const double> z_init, double T, double dt,
                              std::uint64_t root_seed, std::uint32_t path_index,
                              FastMode mode = FastMode::euler);

struct SlowPath {
  std::vector<double> times;
  std::vector<std::vector<double>> X;
};

SlowPath simulate_homogenized(const HomogenizedModel& model, double T, double dt,
                              std::uint64_t root_seed, std::uint32_t path_index);

/// Exact draw of the unit-rate OU transition dZ = -Z dt + sigma2 dW over dt.
double exact_ou_step(double z, double dt, double sigma2, RngStream& stream);

/// Number of slow steps K with K * dt == T (up to rounding); throws otherwise.
std::size_t grid_steps(double T, double dt);

/// CSV `t,x_0..,z_0..,y_0..` with 17 significant digits.
void write_path_csv(const JointPath& path, std::ostream& out);

}  // namespace levyfilter
