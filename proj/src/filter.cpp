#include "levyfilter/filter.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <limits>
#include <numbers>
#include <ostream>

#include <fmt/format.h>
#include <tbb/blocked_range.h>
#include <tbb/parallel_for.h>

#include "levyfilter/errors.hpp"

namespace levyfilter {

namespace {

constexpr std::uint64_t kResampleTag = 0x7265'7361'6d70'6c65ULL;
constexpr double kMollifier = 1e-2;
constexpr std::size_t kGrain = 64;

double normal_cdf(double v) { return 0.5 * std::erfc(-v / std::numbers::sqrt2); }

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::vector<double> parse_args(std::string_view text, std::string_view args) {
  std::vector<double> out;
  while (true) {
    const auto comma = args.find(',');
    const auto tok = trim(args.substr(0, comma));
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (tok.empty() || ec != std::errc() || ptr != tok.data() + tok.size())
      throw ConfigError(fmt::format("bad number '{}' in test function '{}'", tok, text));
    out.push_back(v);
    if (comma == std::string_view::npos) break;
    args.remove_prefix(comma + 1);
  }
  return out;
}

}  // namespace

TestFunction TestFunction::parse(std::string_view text) {
  text = trim(text);
  if (text == "tanh") return {"tanh", [](double x) { return std::tanh(x); }, -1.0, 1.0};
  if (text == "arctan") {
    const double b = std::numbers::pi / 2.0;
    return {"arctan", [](double x) { return std::atan(x); }, -b, b};
  }
  if (text == "one") return {"one", [](double) { return 1.0; }, 1.0, 1.0};
  const auto open = text.find('(');
  if (open == std::string_view::npos || text.back() != ')')
    throw ConfigError(fmt::format("unknown test function '{}'", text));
  const auto head = trim(text.substr(0, open));
  const auto args = parse_args(text, text.substr(open + 1, text.size() - open - 2));
  const std::string name(text);
  if (head == "indicator") {
    if (args.size() != 2 || !(args[0] < args[1]))
      throw ConfigError(fmt::format("indicator needs a < b: '{}'", text));
    const double a = args[0], b = args[1];
    return {name,
            [a, b](double x) {
              return normal_cdf((x - a) / kMollifier) - normal_cdf((x - b) / kMollifier);
            },
            0.0, 1.0};
  }
  if (head == "poly") {
    if (args.size() != 3 && args.size() != 5)
      throw ConfigError(fmt::format("poly takes 3 coefficients and optional lo,hi: '{}'", text));
    const double c0 = args[0], c1 = args[1], c2 = args[2];
    const double lo = args.size() == 5 ? args[3] : -std::numeric_limits<double>::infinity();
    const double hi = args.size() == 5 ? args[4] : std::numeric_limits<double>::infinity();
    if (!(lo <= hi)) throw ConfigError(fmt::format("poly clip range is empty: '{}'", text));
    return {name,
            [=](double x) { return std::clamp(c0 + x * (c1 + x * c2), lo, hi); },
            lo, hi};
  }
  throw ConfigError(fmt::format("unknown test function '{}'", text));
}

std::vector<TestFunction> TestFunction::parse_list(std::string_view text) {
  std::vector<TestFunction> out;
  int depth = 0;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= text.size(); ++i) {
    if (i == text.size() || (text[i] == ',' && depth == 0)) {
      out.push_back(parse(text.substr(start, i - start)));
      start = i + 1;
    } else if (text[i] == '(') {
      ++depth;
    } else if (text[i] == ')') {
      --depth;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

double pairwise_sum(std::span<const double> v) {
  if (v.size() <= 8) {
    double s = 0.0;
    for (double a : v) s += a;
    return s;
  }
  const auto half = v.size() / 2;
  return pairwise_sum(v.first(half)) + pairwise_sum(v.subspan(half));
}

namespace {

double max_log_weight(const std::vector<Particle>& ps) {
  double m = -std::numeric_limits<double>::infinity();
  for (const auto& p : ps) m = std::max(m, p.log_weight);
  return m;
}

std::vector<double> shifted_weights(const std::vector<Particle>& ps, double shift) {
  std::vector<double> w(ps.size());
  for (std::size_t i = 0; i < ps.size(); ++i) w[i] = std::exp(ps[i].log_weight - shift);
  return w;
}

}  // namespace

double ParticleEnsemble::log_mass() const {
  if (particles.empty()) throw InvalidArgument("empty particle ensemble");
  const double m = max_log_weight(particles);
  const auto w = shifted_weights(particles, m);
  return m + std::log(pairwise_sum(w)) - std::log(static_cast<double>(particles.size()));
}

double ParticleEnsemble::ess() const {
  if (particles.empty()) return 0.0;
  const auto w = shifted_weights(particles, max_log_weight(particles));
  std::vector<double> w2(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) w2[i] = w[i] * w[i];
  const double s = pairwise_sum(w);
  return std::clamp(s * s / pairwise_sum(w2), 1.0, static_cast<double>(w.size()));
}

double log_weight_increment(std::span<const double> h_val, std::span<const double> dy_cont,
                            double dt, std::span<const JumpEvent> jumps, const Intensity& lambda,
                            std::span<const double> x, double t, const LevyMeasureSpec& nu3) {
  if (h_val.size() != dy_cont.size())
    throw InvalidArgument("log_weight_increment: h and dY dimensions differ");
  double inc = 0.0;
  for (std::size_t i = 0; i < h_val.size(); ++i)
    inc += h_val[i] * dy_cont[i] - 0.5 * h_val[i] * h_val[i] * dt;
  for (const auto& e : jumps) {
    const double lam = lambda(e.time, x, e.mark);
    check_intensity(lam, e.time, x, e.mark);
    inc += std::log(lam);
  }
  inc += dt * lambda.complement_integral(t, x, nu3);
  return inc;
}

// ---------------------------------------------------------------------------

ParticleEnsemble make_ensemble(const FilterDynamics& dynamics, std::size_t count,
                               std::uint64_t root_seed) {
  if (count == 0) throw InvalidArgument("particle count must be positive");
  ParticleEnsemble ens;
  ens.particles.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Particle p;
    p.streams = SignalStreams::for_path(root_seed, static_cast<std::uint32_t>(i));
    if (const auto* full = std::get_if<FullDynamics>(&dynamics)) {
      p.x = full->model->x0;
      p.z = full->model->z0;
    } else {
      p.x = std::get<HomogenizedDynamics>(dynamics).model->x0();
    }
    ens.particles.push_back(std::move(p));
  }
  return ens;
}

namespace {

// Per-step observation data handed to the particle loop.
struct StepData {
  std::span<const double> dy;
  std::span<const JumpEvent> jumps;
  const ObservationModel* obs;
};

// Advances particles in [begin, end) and optionally reweights them.
template <class Stepper, class Advance>
void step_range(ParticleEnsemble& ens, std::size_t begin, std::size_t end, Stepper& stepper,
                Advance&& advance, double t, double dt, const StepData* data) {
  for (std::size_t i = begin; i < end; ++i) {
    auto& p = ens.particles[i];
    advance(stepper, p);
    if (!data) continue;
    p.log_weight += log_weight_increment(stepper.h_average(), data->dy, dt, data->jumps,
                                         data->obs->lambda, stepper.x_left(), t,
                                         data->obs->nu3_small);
    if (!std::isfinite(p.log_weight)) {
      throw ModelViolation(fmt::format("non-finite log-weight for particle {} at t={}", i, t + dt));
    }
  }
}

void step_ensemble(ParticleEnsemble& ens, const FilterDynamics& dynamics, const Field* h,
                   double dt, const StepData* data) {
  const double t = ens.time;
  const std::size_t count = ens.size();
  tbb::parallel_for(tbb::blocked_range<std::size_t>(0, count, kGrain),
                    [&](const tbb::blocked_range<std::size_t>& r) {
                      if (const auto* full = std::get_if<FullDynamics>(&dynamics)) {
                        SignalStepper stepper(*full->model, full->scheme, h);
                        step_range(
                            ens, r.begin(), r.end(), stepper,
                            [t](SignalStepper& s, Particle& p) {
                              s.advance(t, p.x, *p.z, p.streams);
                            },
                            t, dt, data);
                      } else {
                        HomogenizedStepper stepper(*std::get<HomogenizedDynamics>(dynamics).model);
                        step_range(
                            ens, r.begin(), r.end(), stepper,
                            [t, dt](HomogenizedStepper& s, Particle& p) {
                              s.advance(t, dt, p.x, p.streams);
                            },
                            t, dt, data);
                      }
                    });
  ens.time = t + dt;
}

}  // namespace

void propagate(ParticleEnsemble& ensemble, const FilterDynamics& dynamics, double dt) {
  if (const auto* full = std::get_if<FullDynamics>(&dynamics)) {
    if (std::abs(full->scheme.dt_slow - dt) > 1e-12 * dt)
      throw InvalidArgument("propagate: dt differs from the scheme's slow step");
    step_ensemble(ensemble, dynamics, full->h, dt, nullptr);
  } else {
    step_ensemble(ensemble, dynamics, nullptr, dt, nullptr);
  }
}

Estimate estimate(const ParticleEnsemble& ensemble, const TestFunction& psi) {
  const auto& ps = ensemble.particles;
  if (ps.empty()) throw InvalidArgument("estimate: empty ensemble");
  const double m = max_log_weight(ps);
  const auto w = shifted_weights(ps, m);
  std::vector<double> wpsi(w.size());
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double v = psi(ps[i].x);
    lo = std::min(lo, v);
    hi = std::max(hi, v);
    wpsi[i] = w[i] * v;
  }
  const double sw = pairwise_sum(w);
  const double swpsi = pairwise_sum(wpsi);
  if (!(sw > 0.0)) throw ModelViolation("estimate: particle mass vanished");
  const double scale = std::exp(m) / static_cast<double>(w.size());
  Estimate e;
  e.rho_1 = sw * scale;
  e.rho_psi = swpsi * scale;
  // a weighted mean lies in the hull of its values; clamp away rounding
  e.pi = std::clamp(swpsi / sw, lo, hi);
  return e;
}

std::vector<std::size_t> systematic_counts(std::span<const double> weights, std::size_t n_out,
                                           double offset) {
  if (weights.empty() || n_out == 0) throw InvalidArgument("systematic_counts: empty input");
  const double total = pairwise_sum(weights);
  if (!(total > 0.0)) throw InvalidArgument("systematic_counts: weights sum to zero");
  std::vector<std::size_t> counts(weights.size(), 0);
  const double step = 1.0 / static_cast<double>(n_out);
  double cum = 0.0;
  std::size_t i = 0;
  for (std::size_t j = 0; j < n_out; ++j) {
    const double u = offset + static_cast<double>(j) * step;
    while (i + 1 < weights.size() && cum + weights[i] / total <= u) {
      cum += weights[i] / total;
      ++i;
    }
    ++counts[i];
  }
  return counts;
}

double resample(ParticleEnsemble& ensemble, std::uint64_t root_seed) {
  auto& ps = ensemble.particles;
  const std::size_t n = ps.size();
  const double before = ensemble.log_mass();
  const auto w = shifted_weights(ps, max_log_weight(ps));
  RngStream u(root_seed, stream_id(NoiseSource::resampling,
                                   static_cast<std::uint32_t>(ensemble.resample_count)));
  const auto counts = systematic_counts(w, n, u.uniform() / static_cast<double>(n));
  ++ensemble.resample_count;
  const auto seed = derive_seed(root_seed, kResampleTag, ensemble.resample_count);
  std::vector<Particle> next;
  next.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < counts[i]; ++c) {
      Particle p;
      p.x = ps[i].x;
      p.z = ps[i].z;
      p.log_weight = before;
      p.streams = SignalStreams::for_path(seed, static_cast<std::uint32_t>(next.size()));
      next.push_back(std::move(p));
    }
  }
  ps = std::move(next);
  return std::abs(std::expm1(ensemble.log_mass() - before));
}

// ---------------------------------------------------------------------------

void FilterDiagnostics::merge(const FilterDiagnostics& o) {
  estimates_in_range = estimates_in_range && o.estimates_in_range;
  mass_positive = mass_positive && o.mass_positive;
  min_log_rho1 = std::min(min_log_rho1, o.min_log_rho1);
  max_resample_mass_error = std::max(max_resample_mass_error, o.max_resample_mass_error);
  max_normalization_error = std::max(max_normalization_error, o.max_normalization_error);
  steps += o.steps;
  resamples += o.resamples;
}

bool FilterDiagnostics::ok(double mass_tolerance) const {
  return estimates_in_range && mass_positive && max_resample_mass_error <= mass_tolerance &&
         max_normalization_error == 0.0;
}

FilterOutput run_filter(const FilterDynamics& dynamics, const ObservationModel& obs,
                        const JointPath& observations, std::span<const TestFunction> psi,
                        const FilterParams& params) {
  const double dt = observations.dt;
  const std::size_t steps = observations.steps();
  if (steps == 0) throw InvalidArgument("run_filter: empty observation path");
  if (observations.bbar_increments.size() != steps)
    throw InvalidArgument("run_filter: observation path lacks reference increments");
  if (!(params.ess_fraction > 0.0 && params.ess_fraction <= 1.0))
    throw InvalidArgument("ess fraction must lie in (0,1]");
  const Field* h = nullptr;
  if (const auto* full = std::get_if<FullDynamics>(&dynamics)) {
    if (std::abs(full->scheme.dt_slow - dt) > 1e-12 * dt) {
      throw InvalidArgument(fmt::format("filter step {} does not match the observation grid {}",
                                        full->scheme.dt_slow, dt));
    }
    h = &obs.h;
  } else {
    const auto& hm = *std::get<HomogenizedDynamics>(dynamics).model;
    if (hm.d() != obs.d) throw InvalidArgument("homogenized sensor dimension mismatch");
  }

  // accepted small observation jumps, bucketed by step
  std::vector<std::vector<JumpEvent>> buckets(steps);
  for (const auto& e : observations.jump_log.observation_small) {
    if (!e.accepted) continue;
    auto it = std::lower_bound(observations.times.begin(), observations.times.end(), e.time);
    auto k = static_cast<std::size_t>(std::max<std::ptrdiff_t>(
        1, std::distance(observations.times.begin(), it)));
    buckets[std::min(k, steps) - 1].push_back(e);
  }

  auto ens = make_ensemble(dynamics, params.particles, params.root_seed);
  const double n = static_cast<double>(params.particles);

  FilterOutput out;
  for (const auto& f : psi) out.psi_names.push_back(f.name);
  out.pi.resize(psi.size());
  auto& diag = out.diagnostics;
  const auto one = TestFunction::parse("one");
  auto record = [&](double t) {
    out.times.push_back(t);
    for (std::size_t j = 0; j < psi.size(); ++j) {
      const double pi = estimate(ens, psi[j]).pi;
      if (!(pi >= psi[j].lo && pi <= psi[j].hi)) diag.estimates_in_range = false;
      out.pi[j].push_back(pi);
    }
    diag.max_normalization_error =
        std::max(diag.max_normalization_error, std::abs(estimate(ens, one).pi - 1.0));
    const double lm = ens.log_mass();
    diag.min_log_rho1 = std::min(diag.min_log_rho1, lm);
    if (!std::isfinite(lm) || !(std::exp(lm) > 0.0)) diag.mass_positive = false;
    if (!std::isfinite(lm)) throw ModelViolation(fmt::format("rho(1) not positive at t={}", t));
    out.log_rho1.push_back(lm);
    out.rho1.push_back(std::exp(lm));
    const double ess = ens.ess();
    out.ess.push_back(ess);
    ens.ess_history.push_back(ess);
  };
  record(0.0);
  for (std::size_t k = 0; k < steps; ++k) {
    StepData data{observations.bbar_increments[k], buckets[k], &obs};
    ens.time = observations.times[k];
    step_ensemble(ens, dynamics, h, dt, &data);
    record(observations.times[k + 1]);
    ++diag.steps;
    if (params.resampling && out.ess.back() < params.ess_fraction * n) {
      const double err = resample(ens, params.root_seed);
      diag.max_resample_mass_error = std::max(diag.max_resample_mass_error, err);
      ++diag.resamples;
      out.resample_times.push_back(observations.times[k + 1]);
    }
  }
  return out;
}

void write_filter_csv(const FilterOutput& out, std::ostream& os) {
  os << 't';
  for (auto name : out.psi_names) {
    for (auto& c : name)
      if (!std::isalnum(static_cast<unsigned char>(c)) && c != '.' && c != '-') c = '_';
    os << ",pi_" << name;
  }
  os << ",rho1,ess\n";
  for (std::size_t k = 0; k < out.times.size(); ++k) {
    os << fmt::format("{:.17g}", out.times[k]);
    for (const auto& series : out.pi) os << fmt::format(",{:.17g}", series[k]);
    os << fmt::format(",{:.17g},{:.17g}\n", out.rho1[k], out.ess[k]);
  }
}

}  // namespace levyfilter
