#include "levyfilter/sde.hpp"

#include <cmath>
#include <ostream>

#include <fmt/format.h>

#include "levyfilter/averaging.hpp"
#include "levyfilter/errors.hpp"

namespace levyfilter {

namespace {

bool all_finite(std::span<const double> v) {
  for (double a : v)
    if (!std::isfinite(a)) return false;
  return true;
}

void fill_normals(RngStream& stream, double scale, std::span<double> out) {
  for (auto& v : out) v = scale * stream.normal();
}

// out += A (rows x cols, row-major) * v
void add_matvec(std::span<const double> a, std::span<const double> v, std::size_t rows,
                std::span<double> out) {
  const std::size_t cols = v.size();
  for (std::size_t i = 0; i < rows; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < cols; ++j) acc += a[i * cols + j] * v[j];
    out[i] += acc;
  }
}

// Compensated slow jumps over (t, t+dt] with f1 evaluated at the left state.
void slow_jumps(const Field& f1, const LevyMeasureSpec& nu1, double t, double dt,
                std::span<const double> x_left, std::span<double> inc, std::vector<double>& tmp,
                RngStream& stream, JumpLog* log) {
  if (nu1.is_null() || f1.is_zero()) return;
  const auto events = sample_poisson_jumps(stream, nu1, dt, 1.0);
  tmp.resize(inc.size());
  for (const auto& e : events) {
    f1({x_left, {}, e.mark, t + e.time}, tmp);
    for (std::size_t i = 0; i < inc.size(); ++i) inc[i] += tmp[i];
    if (log) log->slow.push_back({t + e.time, e.mark, true});
  }
  for (std::size_t i = 0; i < inc.size(); ++i) {
    inc[i] -= dt * nu1.integrate([&](std::span<const double> u) {
      f1({x_left, {}, u, t}, tmp);
      return tmp[i];
    });
  }
}

}  // namespace

const char* to_string(FastMode mode) noexcept {
  return mode == FastMode::euler ? "euler" : "exact_ou";
}

FastMode parse_fast_mode(std::string_view text) {
  if (text == "euler") return FastMode::euler;
  if (text == "exact_ou") return FastMode::exact_ou;
  throw ConfigError(fmt::format("unknown fast mode '{}' (expected euler or exact_ou)", text));
}

StepScheme make_scheme(const SlowFastModel& model, double dt_slow, FastMode mode) {
  if (!(dt_slow > 0.0) || !std::isfinite(dt_slow))
    throw InvalidArgument("dt must be positive and finite");
  StepScheme s{dt_slow, dt_slow, mode};
  if (mode == FastMode::euler) {
    const double k = std::ceil(dt_slow / (model.epsilon / 10.0) - 1e-9);
    s.dt_fast = dt_slow / std::max(1.0, k);
  }
  return s;
}

void check_scheme(const SlowFastModel& model, const StepScheme& scheme) {
  if (!(scheme.dt_slow > 0.0) || !(scheme.dt_fast > 0.0))
    throw InvalidArgument("step sizes must be positive");
  if (scheme.dt_fast > scheme.dt_slow * (1.0 + 1e-12))
    throw InvalidArgument("dt_fast must not exceed dt_slow");
  const double ratio = scheme.dt_slow / scheme.dt_fast;
  if (std::abs(ratio - std::round(ratio)) > 1e-8 * ratio)
    throw InvalidArgument("dt_fast must divide dt_slow");
  if (scheme.fast_mode == FastMode::euler) {
    if (scheme.dt_fast > model.epsilon / 10.0 * (1.0 + 1e-9)) {
      throw StiffnessRejected(fmt::format(
          "euler fast mode needs dt_fast <= eps/10 (dt_fast={}, eps={})", scheme.dt_fast,
          model.epsilon));
    }
  } else if (!model.ou_sigma2) {
    throw InvalidArgument("exact_ou fast mode requires an Ornstein-Uhlenbeck fast process");
  }
}

SignalStreams SignalStreams::for_path(std::uint64_t root_seed, std::uint32_t path_index) {
  return {RngStream(root_seed, stream_id(NoiseSource::slow_brownian, path_index)),
          RngStream(root_seed, stream_id(NoiseSource::fast_brownian, path_index)),
          RngStream(root_seed, stream_id(NoiseSource::slow_jumps, path_index)),
          RngStream(root_seed, stream_id(NoiseSource::fast_jumps, path_index))};
}

// ---------------------------------------------------------------------------

SignalStepper::SignalStepper(const SlowFastModel& model, const StepScheme& scheme,
                             const Field* h)
    : model_(&model), scheme_(scheme), h_(h) {
  check_scheme(model, scheme);
  substeps_ = static_cast<std::size_t>(std::llround(scheme.dt_slow / scheme.dt_fast));
  scheme_.dt_fast = scheme.dt_slow / static_cast<double>(substeps_);
  if (scheme.fast_mode == FastMode::exact_ou) {
    const double r = scheme_.dt_fast / model.epsilon;
    ou_decay_ = std::exp(-r);
    ou_scale_ = *model.ou_sigma2 * std::sqrt(-std::expm1(-2.0 * r) / 2.0);
  }
  const auto n = model.n, m = model.m, l = model.l;
  x_left_.resize(n);
  inc_.resize(n);
  tmp_n_.resize(n);
  mat_nl_.resize(n * l);
  dv_.resize(l);
  tmp_m_.resize(m);
  tmp_m2_.resize(m);
  mat_mm_.resize(m * m);
  dw_.resize(m);
  if (h_) {
    h_avg_.resize(h_->size());
    h_tmp_.resize(h_->size());
  }
}

void SignalStepper::advance(double t, std::span<double> x, std::span<double> z,
                            SignalStreams& streams, JumpLog* log) {
  const auto& md = *model_;
  const double hs = scheme_.dt_fast;
  const double eps = md.epsilon;
  const double sq_hs = std::sqrt(hs);
  std::copy(x.begin(), x.end(), x_left_.begin());
  std::fill(inc_.begin(), inc_.end(), 0.0);
  std::fill(h_avg_.begin(), h_avg_.end(), 0.0);
  const double inv_sub = 1.0 / static_cast<double>(substeps_);

  for (std::size_t j = 0; j < substeps_; ++j) {
    const double tj = t + static_cast<double>(j) * hs;
    const EvalPoint p{x_left_, z, {}, tj};

    md.b1(p, tmp_n_);
    for (std::size_t i = 0; i < md.n; ++i) inc_[i] += tmp_n_[i] * hs;
    if (!md.sigma1.is_zero()) {
      md.sigma1(p, mat_nl_);
      fill_normals(streams.slow, sq_hs, dv_);
      add_matvec(mat_nl_, dv_, md.n, inc_);
    }
    if (h_) {
      (*h_)(p, h_tmp_);
      for (std::size_t i = 0; i < h_avg_.size(); ++i) h_avg_[i] += h_tmp_[i] * inv_sub;
    }

    if (scheme_.fast_mode == FastMode::exact_ou) {
      for (auto& zi : z) zi = zi * ou_decay_ + ou_scale_ * streams.fast.normal();
    } else {
      md.b2(p, tmp_m_);
      for (std::size_t i = 0; i < md.m; ++i) dw_[i] = tmp_m_[i] * hs / eps;
      if (!md.sigma2.is_zero()) {
        md.sigma2(p, mat_mm_);
        fill_normals(streams.fast, std::sqrt(hs / eps), tmp_m2_);
        add_matvec(mat_mm_, tmp_m2_, md.m, dw_);
      }
      if (!md.nu2.is_null() && !md.f2.is_zero()) {
        const auto events = sample_poisson_jumps(streams.fast_jumps, md.nu2, hs, 1.0 / eps);
        for (std::size_t i = 0; i < md.m; ++i) {
          dw_[i] -= hs / eps * md.nu2.integrate([&](std::span<const double> u) {
            md.f2({x_left_, z, u, tj}, tmp_m_);
            return tmp_m_[i];
          });
        }
        for (const auto& e : events) {
          md.f2({x_left_, z, e.mark, tj + e.time}, tmp_m_);
          for (std::size_t i = 0; i < md.m; ++i) dw_[i] += tmp_m_[i];
          if (log) log->fast.push_back({tj + e.time, e.mark, true});
        }
      }
      for (std::size_t i = 0; i < md.m; ++i) z[i] += dw_[i];
    }
    if (!all_finite(z)) {
      throw IntegrationFailure(fmt::format("non-finite fast state at t={}", tj + hs), tj + hs);
    }
  }

  slow_jumps(md.f1, md.nu1, t, scheme_.dt_slow, x_left_, inc_, tmp_n_, streams.slow_jumps, log);
  for (std::size_t i = 0; i < md.n; ++i) x[i] = x_left_[i] + inc_[i];
  if (!all_finite(x)) {
    const double tb = t + scheme_.dt_slow;
    throw IntegrationFailure(fmt::format("non-finite slow state at t={}", tb), tb);
  }
}

// ---------------------------------------------------------------------------

HomogenizedStepper::HomogenizedStepper(const HomogenizedModel& model) : model_(&model) {
  const auto n = model.n();
  x_left_.resize(n);
  dv_.resize(n);
  tmp_.resize(n);
}

void HomogenizedStepper::advance(double t, double dt, std::span<double> x,
                                 SignalStreams& streams, JumpLog* log) {
  const auto& hm = *model_;
  const auto n = hm.n();
  std::copy(x.begin(), x.end(), x_left_.begin());
  thread_local HomogenizedModel::Coefficients c;
  hm.evaluate(x_left_, c);
  std::fill(tmp_.begin(), tmp_.end(), 0.0);
  for (std::size_t i = 0; i < n; ++i) tmp_[i] = c.bbar1[i] * dt;
  fill_normals(streams.slow, std::sqrt(dt), dv_);
  add_matvec(c.sigmabar1, dv_, n, tmp_);
  slow_jumps(hm.f1(), hm.nu1(), t, dt, x_left_, tmp_, bbar_, streams.slow_jumps, log);
  h_ = c.hbar;
  for (std::size_t i = 0; i < n; ++i) x[i] = x_left_[i] + tmp_[i];
  if (!all_finite(x)) {
    throw IntegrationFailure(fmt::format("non-finite homogenized state at t={}", t + dt), t + dt);
  }
}

// ---------------------------------------------------------------------------

std::size_t grid_steps(double T, double dt) {
  if (!(T > 0.0) || !std::isfinite(T)) throw InvalidArgument("T must be positive and finite");
  if (!(dt > 0.0) || !std::isfinite(dt)) throw InvalidArgument("dt must be positive and finite");
  const double k = std::round(T / dt);
  if (k < 1.0 || std::abs(k * dt - T) > 1e-9 * std::max(1.0, T)) {
    throw InvalidArgument(fmt::format("T={} is not an integer multiple of dt={}", T, dt));
  }
  return static_cast<std::size_t>(k);
}

JointPath simulate_full(const SlowFastModel& model, const ObservationModel& obs, double T,
                        const StepScheme& scheme, std::uint64_t root_seed,
                        std::uint32_t path_index) {
  model.check();
  obs.check(model);
  const std::size_t steps = grid_steps(T, scheme.dt_slow);
  const double dt = scheme.dt_slow;
  const std::size_t d = obs.d;

  SignalStepper stepper(model, scheme, &obs.h);
  auto streams = SignalStreams::for_path(root_seed, path_index);
  RngStream obs_b(root_seed, stream_id(NoiseSource::observation_brownian, path_index));
  RngStream obs_j(root_seed, stream_id(NoiseSource::observation_jumps, path_index));
  RngStream thin(root_seed, stream_id(NoiseSource::thinning, path_index));

  JointPath path;
  path.dt = dt;
  path.times.reserve(steps + 1);
  path.X.reserve(steps + 1);
  path.Z.reserve(steps + 1);
  path.Y.reserve(steps + 1);
  path.times.push_back(0.0);
  path.X.push_back(model.x0);
  path.Z.push_back(model.z0);
  path.Y.emplace_back(d, 0.0);

  std::vector<double> x = model.x0, z = model.z0, y(d, 0.0), db(d), tmp(d), comp(d);
  for (std::size_t k = 0; k < steps; ++k) {
    const double t = static_cast<double>(k) * dt;
    stepper.advance(t, x, z, streams, &path.jump_log);
    const auto x_left = stepper.x_left();
    const auto h_avg = stepper.h_average();

    fill_normals(obs_b, std::sqrt(dt), db);
    std::vector<double> bbar(d), drift(d);
    for (std::size_t i = 0; i < d; ++i) {
      drift[i] = h_avg[i] * dt;
      bbar[i] = drift[i] + db[i];
    }
    std::fill(comp.begin(), comp.end(), 0.0);
    if (!obs.nu3_small.is_null()) {
      for (std::size_t i = 0; i < d; ++i) {
        comp[i] = dt * obs.nu3_small.integrate([&](std::span<const double> u) {
          obs.f3({{}, {}, u, t}, tmp);
          return tmp[i] * obs.lambda(t, x_left, u);
        });
      }
    }
    for (std::size_t i = 0; i < d; ++i) y[i] += bbar[i] - comp[i];

    auto thin_and_apply = [&](const LevyMeasureSpec& nu, const Field& kernel,
                              std::vector<JumpEvent>& sink) {
      if (nu.is_null()) return;
      for (auto& e : sample_poisson_jumps(obs_j, nu, dt, 1.0)) {
        const double te = t + e.time;
        const double lam = obs.lambda(te, x_left, e.mark);
        check_intensity(lam, te, x_left, e.mark);
        e.time = te;
        e.accepted = thin.uniform() < lam;
        if (e.accepted) {
          kernel({{}, {}, e.mark, te}, tmp);
          for (std::size_t i = 0; i < d; ++i) y[i] += tmp[i];
        }
        sink.push_back(std::move(e));
      }
    };
    thin_and_apply(obs.nu3_small, obs.f3, path.jump_log.observation_small);
    thin_and_apply(obs.nu3_large, obs.g3, path.jump_log.observation_large);
    if (!all_finite(y)) {
      throw IntegrationFailure(fmt::format("non-finite observation at t={}", t + dt), t + dt);
    }

    path.times.push_back(static_cast<double>(k + 1) * dt);
    path.X.push_back(x);
    path.Z.push_back(z);
    path.Y.push_back(y);
    path.bbar_increments.push_back(std::move(bbar));
    path.drift_increments.push_back(std::move(drift));
    path.compensator_increments.push_back(comp);
  }
  return path;
}

// ---------------------------------------------------------------------------

FrozenFastStepper::FrozenFastStepper(const SlowFastModel& model, std::span<const double> x,
                                     double dt, FastMode mode)
    : model_(&model), x_(x.begin(), x.end()), dt_(dt), mode_(mode) {
  if (!(dt > 0.0) || !std::isfinite(dt)) throw InvalidArgument("dt must be positive and finite");
  if (x.size() != model.n) throw InvalidArgument("frozen state has the wrong dimension");
  if (mode == FastMode::exact_ou) {
    if (!model.ou_sigma2)
      throw InvalidArgument("exact_ou fast mode requires an Ornstein-Uhlenbeck fast process");
    ou_decay_ = std::exp(-dt);
    ou_scale_ = *model.ou_sigma2 * std::sqrt(-std::expm1(-2.0 * dt) / 2.0);
  }
  tmp_.resize(model.m);
  comp_.resize(model.m);
  mat_.resize(model.m * model.m);
  dw_.resize(model.m);
}

void FrozenFastStepper::step(double t, std::span<double> z, SignalStreams& streams) {
  const auto& md = *model_;
  if (mode_ == FastMode::exact_ou) {
    for (auto& zi : z) zi = zi * ou_decay_ + ou_scale_ * streams.fast.normal();
  } else {
    const EvalPoint p{x_, z, {}, t};
    md.b2(p, tmp_);
    for (std::size_t i = 0; i < md.m; ++i) comp_[i] = tmp_[i] * dt_;
    if (!md.sigma2.is_zero()) {
      md.sigma2(p, mat_);
      fill_normals(streams.fast, std::sqrt(dt_), dw_);
      add_matvec(mat_, dw_, md.m, comp_);
    }
    if (!md.nu2.is_null() && !md.f2.is_zero()) {
      const auto events = sample_poisson_jumps(streams.fast_jumps, md.nu2, dt_, 1.0);
      for (std::size_t i = 0; i < md.m; ++i) {
        comp_[i] -= dt_ * md.nu2.integrate([&](std::span<const double> u) {
          md.f2({x_, z, u, t}, tmp_);
          return tmp_[i];
        });
      }
      for (const auto& e : events) {
        md.f2({x_, z, e.mark, t + e.time}, tmp_);
        for (std::size_t i = 0; i < md.m; ++i) comp_[i] += tmp_[i];
      }
    }
    for (std::size_t i = 0; i < md.m; ++i) z[i] += comp_[i];
  }
  if (!all_finite(z)) {
    throw IntegrationFailure(fmt::format("non-finite fast state at t={}", t + dt_), t + dt_);
  }
}

FastPath simulate_frozen_fast(const SlowFastModel& model, std::span<const double> x,
                              std::span<const double> z_init, double T, double dt,
                              std::uint64_t root_seed, std::uint32_t path_index, FastMode mode) {
  if (z_init.size() != model.m) throw InvalidArgument("initial fast state has the wrong dimension");
  const std::size_t steps = grid_steps(T, dt);
  FrozenFastStepper stepper(model, x, dt, mode);
  auto streams = SignalStreams::for_path(root_seed, path_index);
  FastPath path;
  path.times.reserve(steps + 1);
  path.Z.reserve(steps + 1);
  std::vector<double> z(z_init.begin(), z_init.end());
  path.times.push_back(0.0);
  path.Z.push_back(z);
  for (std::size_t k = 0; k < steps; ++k) {
    stepper.step(static_cast<double>(k) * dt, z, streams);
    path.times.push_back(static_cast<double>(k + 1) * dt);
    path.Z.push_back(z);
  }
  return path;
}

SlowPath simulate_homogenized(const HomogenizedModel& model, double T, double dt,
                              std::uint64_t root_seed, std::uint32_t path_index) {
  const std::size_t steps = grid_steps(T, dt);
  HomogenizedStepper stepper(model);
  auto streams = SignalStreams::for_path(root_seed, path_index);
  SlowPath path;
  path.times.reserve(steps + 1);
  path.X.reserve(steps + 1);
  std::vector<double> x = model.x0();
  path.times.push_back(0.0);
  path.X.push_back(x);
  for (std::size_t k = 0; k < steps; ++k) {
    stepper.advance(static_cast<double>(k) * dt, dt, x, streams);
    path.times.push_back(static_cast<double>(k + 1) * dt);
    path.X.push_back(x);
  }
  return path;
}

double exact_ou_step(double z, double dt, double sigma2, RngStream& stream) {
  if (!(dt > 0.0)) throw InvalidArgument("exact_ou_step: dt must be positive");
  const double sd = std::abs(sigma2) * std::sqrt(-std::expm1(-2.0 * dt) / 2.0);
  return z * std::exp(-dt) + sd * stream.normal();
}

void write_path_csv(const JointPath& path, std::ostream& out) {
  const std::size_t n = path.X.empty() ? 0 : path.X[0].size();
  const std::size_t m = path.Z.empty() ? 0 : path.Z[0].size();
  const std::size_t d = path.Y.empty() ? 0 : path.Y[0].size();
  out << 't';
  for (std::size_t i = 0; i < n; ++i) out << ",x_" << i;
  for (std::size_t i = 0; i < m; ++i) out << ",z_" << i;
  for (std::size_t i = 0; i < d; ++i) out << ",y_" << i;
  out << '\n';
  for (std::size_t k = 0; k < path.times.size(); ++k) {
    out << fmt::format("{:.17g}", path.times[k]);
    for (double v : path.X[k]) out << fmt::format(",{:.17g}", v);
    for (double v : path.Z[k]) out << fmt::format(",{:.17g}", v);
    for (double v : path.Y[k]) out << fmt::format(",{:.17g}", v);
    out << '\n';
  }
}

}  // namespace levyfilter
