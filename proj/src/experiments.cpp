#include "levyfilter/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include <fmt/format.h>
#include <tbb/parallel_for.h>

#include "levyfilter/errors.hpp"

namespace levyfilter {

namespace {

// seed tags separating the independent populations of a study
constexpr std::uint64_t kTagSignal = 0x5349'474eULL;
constexpr std::uint64_t kTagHomog = 0x484f'4d47ULL;
constexpr std::uint64_t kTagObs = 0x4f42'5356ULL;
constexpr std::uint64_t kTagFilter = 0x4649'4c54ULL;
constexpr std::uint64_t kTagMart = 0x4d41'5254ULL;

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
};

MeanSe mean_se(std::span<const double> v) {
  MeanSe r;
  if (v.empty()) return r;
  r.mean = pairwise_sum(v) / static_cast<double>(v.size());
  if (v.size() < 2) return r;
  std::vector<double> sq(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) sq[i] = (v[i] - r.mean) * (v[i] - r.mean);
  const double var = pairwise_sum(sq) / static_cast<double>(v.size() - 1);
  r.se = std::sqrt(var / static_cast<double>(v.size()));
  return r;
}

void check_epsilons(std::span<const double> eps) {
  if (eps.empty()) throw InvalidArgument("epsilon list is empty");
  for (std::size_t i = 0; i < eps.size(); ++i) {
    if (!(eps[i] > 0.0) || !std::isfinite(eps[i]))
      throw InvalidArgument(fmt::format("epsilon {} is not positive", eps[i]));
    if (i > 0 && !(eps[i] < eps[i - 1]))
      throw InvalidArgument("epsilons must be strictly decreasing");
  }
}

}  // namespace

double ks_statistic(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw InvalidArgument("ks_statistic: empty sample");
  std::vector<double> sa(a.begin(), a.end()), sb(b.begin(), b.end());
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  const double na = static_cast<double>(sa.size()), nb = static_cast<double>(sb.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < sa.size() && j < sb.size()) {
    const double v = std::min(sa[i], sb[j]);
    while (i < sa.size() && sa[i] == v) ++i;
    while (j < sb.size() && sb[j] == v) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  return d;
}

double ks_critical(std::size_t na, std::size_t nb, double c_alpha) {
  const double a = static_cast<double>(na), b = static_cast<double>(nb);
  return c_alpha * std::sqrt((a + b) / (a * b));
}

StepScheme DtRule::scheme_for(const SlowFastModel& model) const {
  return make_scheme(model, dt_slow, fast_mode);
}

ModelPreset with_epsilon(const ModelPreset& preset, double epsilon) {
  if (!(epsilon > 0.0) || !std::isfinite(epsilon))
    throw InvalidArgument(fmt::format("epsilon {} is not positive", epsilon));
  ModelPreset p = preset;
  p.slow_fast.epsilon = epsilon;
  return p;
}

std::vector<double> slow_endpoints(const SlowFastModel& model, double T, const StepScheme& scheme,
                                   std::uint64_t root_seed, std::size_t n_paths,
                                   std::size_t coordinate) {
  model.check();
  if (coordinate >= model.n) throw InvalidArgument("slow coordinate out of range");
  const std::size_t steps = grid_steps(T, scheme.dt_slow);
  std::vector<double> out(n_paths);
  tbb::parallel_for(std::size_t{0}, n_paths, [&](std::size_t i) {
    SignalStepper stepper(model, scheme);
    auto streams = SignalStreams::for_path(root_seed, static_cast<std::uint32_t>(i));
    std::vector<double> x = model.x0, z = model.z0;
    for (std::size_t k = 0; k < steps; ++k)
      stepper.advance(static_cast<double>(k) * scheme.dt_slow, x, z, streams);
    out[i] = x[coordinate];
  });
  return out;
}

std::vector<double> homogenized_endpoints(const HomogenizedModel& model, double T, double dt,
                                          std::uint64_t root_seed, std::size_t n_paths,
                                          std::size_t coordinate) {
  if (coordinate >= model.n()) throw InvalidArgument("slow coordinate out of range");
  const std::size_t steps = grid_steps(T, dt);
  std::vector<double> out(n_paths);
  tbb::parallel_for(std::size_t{0}, n_paths, [&](std::size_t i) {
    HomogenizedStepper stepper(model);
    auto streams = SignalStreams::for_path(root_seed, static_cast<std::uint32_t>(i));
    std::vector<double> x = model.x0();
    for (std::size_t k = 0; k < steps; ++k)
      stepper.advance(static_cast<double>(k) * dt, dt, x, streams);
    out[i] = x[coordinate];
  });
  return out;
}

SignalConvergence signal_convergence_study(const ModelPreset& preset,
                                           const HomogenizedModel& homogenized,
                                           std::span<const double> epsilons,
                                           std::size_t n_paths, double T, const DtRule& rule,
                                           std::uint64_t seed) {
  check_epsilons(epsilons);
  if (n_paths == 0) throw InvalidArgument("n_paths must be positive");
  const auto n = preset.slow_fast.n;
  std::vector<std::vector<double>> x0(n);
  for (std::size_t c = 0; c < n; ++c)
    x0[c] = homogenized_endpoints(homogenized, T, rule.dt_slow, derive_seed(seed, kTagHomog),
                                  n_paths, c);
  SignalConvergence out;
  out.n_paths = n_paths;
  out.critical_1pct = ks_critical(n_paths, n_paths);
  for (double eps : epsilons) {
    const auto p = with_epsilon(preset, eps);
    const auto scheme = rule.scheme_for(p.slow_fast);
    double ks = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      const auto xe = slow_endpoints(p.slow_fast, T, scheme, derive_seed(seed, kTagSignal),
                                     n_paths, c);
      ks = std::max(ks, ks_statistic(xe, x0[c]));
    }
    out.epsilons.push_back(eps);
    out.ks.push_back(ks);
  }
  return out;
}

// ---------------------------------------------------------------------------

MartingaleReport martingale_check(const ModelPreset& preset, const HomogenizedModel* homogenized,
                                  const MartingaleOptions& opt) {
  const auto& s = preset.slow_fast;
  const auto& o = preset.observation;
  s.check();
  o.check(s);
  if (opt.runs == 0) throw InvalidArgument("martingale_check: runs must be positive");
  const auto scheme = opt.dt_rule.scheme_for(s);
  const std::size_t steps = grid_steps(opt.T, scheme.dt_slow);
  const double dt = scheme.dt_slow;
  const auto ref_seed = derive_seed(opt.seed, kTagMart, 1);
  const auto phys_seed = derive_seed(opt.seed, kTagMart, 2);

  // reference measure: signal independent of a signal-free observation
  std::vector<double> lambda_t(opt.runs);
  tbb::parallel_for(std::size_t{0}, opt.runs, [&](std::size_t r) {
    const auto idx = static_cast<std::uint32_t>(r);
    SignalStepper stepper(s, scheme, &o.h);
    auto streams = SignalStreams::for_path(ref_seed, idx);
    RngStream obs_b(ref_seed, stream_id(NoiseSource::observation_brownian, idx));
    RngStream obs_j(ref_seed, stream_id(NoiseSource::observation_jumps, idx));
    std::vector<double> x = s.x0, z = s.z0, db(o.d);
    double log_l = 0.0;
    for (std::size_t k = 0; k < steps; ++k) {
      const double t = static_cast<double>(k) * dt;
      stepper.advance(t, x, z, streams);
      for (auto& v : db) v = std::sqrt(dt) * obs_b.normal();
      std::vector<JumpEvent> jumps;
      if (!o.nu3_small.is_null()) {
        jumps = sample_poisson_jumps(obs_j, o.nu3_small, dt, 1.0);
        for (auto& e : jumps) e.time += t;
      }
      log_l += log_weight_increment(stepper.h_average(), db, dt, jumps, o.lambda,
                                    stepper.x_left(), t, o.nu3_small);
    }
    lambda_t[r] = std::exp(log_l);
  });

  // physical measure: 1/Lambda along simulated paths
  std::vector<double> inverse(opt.runs);
  tbb::parallel_for(std::size_t{0}, opt.runs, [&](std::size_t r) {
    const auto path =
        simulate_full(s, o, opt.T, scheme, phys_seed, static_cast<std::uint32_t>(r));
    SignalStepper stepper(s, scheme, &o.h);
    // replay the signal to recover the per-step sensor averages
    auto streams = SignalStreams::for_path(phys_seed, static_cast<std::uint32_t>(r));
    std::vector<double> x = s.x0, z = s.z0;
    std::size_t next = 0;
    const auto& small = path.jump_log.observation_small;
    double log_l = 0.0;
    for (std::size_t k = 0; k < steps; ++k) {
      const double t = path.times[k];
      stepper.advance(t, x, z, streams);
      std::vector<JumpEvent> jumps;
      while (next < small.size() && (k + 1 == steps || small[next].time <= path.times[k + 1])) {
        if (small[next].accepted) jumps.push_back(small[next]);
        ++next;
      }
      log_l += log_weight_increment(stepper.h_average(), path.bbar_increments[k], dt, jumps,
                                    o.lambda, stepper.x_left(), t, o.nu3_small);
    }
    inverse[r] = std::exp(-log_l);
  });

  MartingaleReport rep;
  rep.runs = opt.runs;
  const auto a = mean_se(lambda_t);
  const auto b = mean_se(inverse);
  rep.mean_lambda = a.mean;
  rep.se_lambda = a.se;
  rep.mean_inverse = b.mean;
  rep.se_inverse = b.se;

  if (homogenized && opt.rho0_runs > 0) {
    const auto psi = std::vector<TestFunction>{TestFunction::parse("one")};
    for (std::size_t r = 0; r < std::min(opt.rho0_runs, opt.runs); ++r) {
      const auto path =
          simulate_full(s, o, opt.T, scheme, phys_seed, static_cast<std::uint32_t>(r));
      FilterParams fp;
      fp.particles = opt.rho0_particles;
      fp.root_seed = derive_seed(opt.seed, kTagFilter, r);
      const auto out = run_filter(HomogenizedDynamics{homogenized}, o, path, psi, fp);
      rep.max_inverse_rho0 = std::max(rep.max_inverse_rho0, std::exp(-out.log_rho1.back()));
    }
  }
  return rep;
}

double poisson_martingale_mean(double lambda, double mass, double T, std::size_t terms) {
  const double mu = mass * T;
  double p = std::exp(-mu);  // P(J = 0)
  double lk = 1.0;
  double acc = 0.0;
  for (std::size_t k = 0; k < terms; ++k) {
    acc += p * lk;
    p *= mu / static_cast<double>(k + 1);
    lk *= lambda;
  }
  return acc * std::exp((1.0 - lambda) * mu);
}

// ---------------------------------------------------------------------------

LinearSpec linear_spec_from_preset(const ModelPreset& preset) {
  const auto& s = preset.slow_fast;
  const auto& o = preset.observation;
  auto reject = [&](const std::string& why) {
    throw InvalidArgument(fmt::format("preset '{}' is not linear-Gaussian: {}", preset.name, why));
  };
  if (s.n != 1 || s.l != 1 || o.d != 1) reject("signal and observation must be scalar");
  if (!s.nu1.is_null() && !s.f1.is_zero()) reject("slow jumps present");
  if (!s.nu2.is_null() && !s.f2.is_zero()) reject("fast jumps present");
  if (!o.nu3_small.is_null() || !o.nu3_large.is_null()) reject("observation jumps present");
  if (o.lambda.kind() != Intensity::Kind::constant || o.lambda.c0() != 1.0)
    reject("jump intensity must be 1");

  const std::vector<double> zs = {0.0, 1.3, -0.7};
  auto eval = [&](const Field& f, double x, double z) {
    const double xv[1] = {x};
    std::vector<double> zv(s.m, z);
    double out[1];
    f({xv, zv, {}, 0.0}, out);
    return out[0];
  };
  LinearSpec spec;
  spec.c = eval(s.b1, 0.0, 0.0);
  spec.a = spec.c - eval(s.b1, 1.0, 0.0);
  spec.sigma = eval(s.sigma1, 0.0, 0.0);
  spec.x0 = s.x0[0];
  for (double x : {-2.0, 0.5, 3.0}) {
    for (double z : zs) {
      const double tol = 1e-12 * (1.0 + std::abs(x));
      if (std::abs(eval(s.b1, x, z) - (spec.c - spec.a * x)) > tol * (1.0 + std::abs(spec.a)))
        reject("drift is not affine in x or depends on z");
      if (std::abs(eval(s.sigma1, x, z) - spec.sigma) > tol) reject("diffusion is not constant");
      if (std::abs(eval(o.h, x, z) - x) > tol) reject("sensor is not h(x) = x");
    }
  }
  return spec;
}

OracleResult kalman_oracle(const LinearSpec& spec, double dt, std::span<const double> dy) {
  if (!(dt > 0.0)) throw InvalidArgument("kalman_oracle: dt must be positive");
  OracleResult r;
  double m = spec.x0, p = spec.p0;
  r.times.push_back(0.0);
  r.oracle_mean.push_back(m);
  r.oracle_variance.push_back(p);
  for (std::size_t k = 0; k < dy.size(); ++k) {
    const double m_next = m + (-spec.a * m + spec.c) * dt + p * (dy[k] - m * dt);
    const double p_next = p + (-2.0 * spec.a * p + spec.sigma * spec.sigma - p * p) * dt;
    m = m_next;
    p = p_next;
    r.times.push_back(static_cast<double>(k + 1) * dt);
    r.oracle_mean.push_back(m);
    r.oracle_variance.push_back(p);
  }
  return r;
}

std::vector<double> riccati_path(const LinearSpec& spec, double T, double dt) {
  const std::size_t steps = grid_steps(T, dt);
  const std::vector<double> dy(steps, 0.0);
  return kalman_oracle(spec, dt, dy).oracle_variance;
}

OracleResult kalman_comparison(const ModelPreset& preset, std::size_t particles, double T,
                               double dt, std::uint64_t seed) {
  const auto spec = linear_spec_from_preset(preset);
  const auto& s = preset.slow_fast;
  const auto scheme = make_scheme(s, dt, s.ou_sigma2 ? FastMode::exact_ou : FastMode::euler);
  const auto path = simulate_full(s, preset.observation, T, scheme, derive_seed(seed, kTagObs), 0);
  std::vector<double> dy(path.steps());
  for (std::size_t k = 0; k < dy.size(); ++k) dy[k] = path.Y[k + 1][0] - path.Y[k][0];
  auto r = kalman_oracle(spec, dt, dy);

  const auto psi = std::vector<TestFunction>{TestFunction::parse("poly(0,1,0)")};
  FilterParams fp;
  fp.particles = particles;
  fp.root_seed = derive_seed(seed, kTagFilter);
  const auto out = run_filter(FullDynamics{&s, scheme, &preset.observation.h},
                              preset.observation, path, psi, fp);
  r.filter_mean = out.pi[0];
  double acc = 0.0;
  for (std::size_t k = 0; k < r.times.size(); ++k) {
    const double e = r.filter_mean[k] - r.oracle_mean[k];
    acc += e * e;
  }
  r.rmse = std::sqrt(acc / static_cast<double>(r.times.size()));
  return r;
}

// ---------------------------------------------------------------------------

ConvergenceReport filter_convergence_study(const ModelPreset& preset,
                                           const HomogenizedModel& homogenized,
                                           const ConvergenceOptions& opt) {
  check_epsilons(opt.epsilons);
  if (opt.replications == 0) throw InvalidArgument("replications must be positive");
  if (opt.particles == 0) throw InvalidArgument("particles must be positive");
  std::vector<TestFunction> psi;
  for (const auto& text : opt.psi) psi.push_back(TestFunction::parse(text));
  if (psi.empty()) throw InvalidArgument("no test functions given");

  ConvergenceReport rep;
  rep.options = opt;
  for (const auto& f : psi) rep.psi_names.push_back(f.name);
  rep.insufficient_replications = opt.replications < 2;
  rep.has_signal = opt.signal_paths > 0;
  rep.has_martingale = opt.martingale_runs > 0;

  const auto obs_seed = derive_seed(opt.seed, kTagObs);
  for (double eps : opt.epsilons) {
    const auto p = with_epsilon(preset, eps);
    const auto scheme = opt.dt_rule.scheme_for(p.slow_fast);
    EpsilonStats st;
    st.epsilon = eps;
    st.pi_full.assign(psi.size(), std::vector<double>(opt.replications));
    st.pi_homog.assign(psi.size(), std::vector<double>(opt.replications));
    std::vector<FilterDiagnostics> diag(opt.replications);
    tbb::parallel_for(std::size_t{0}, opt.replications, [&](std::size_t r) {
      const auto path = simulate_full(p.slow_fast, p.observation, opt.T, scheme, obs_seed,
                                      static_cast<std::uint32_t>(r));
      FilterParams fp;
      fp.particles = opt.particles;
      fp.ess_fraction = opt.ess_fraction;
      fp.root_seed = derive_seed(opt.seed, kTagFilter, r);
      const auto full = run_filter(FullDynamics{&p.slow_fast, scheme, &p.observation.h},
                                   p.observation, path, psi, fp);
      const auto homog =
          run_filter(HomogenizedDynamics{&homogenized}, p.observation, path, psi, fp);
      for (std::size_t j = 0; j < psi.size(); ++j) {
        st.pi_full[j][r] = full.pi[j].back();
        st.pi_homog[j][r] = homog.pi[j].back();
      }
      diag[r] = full.diagnostics;
      diag[r].merge(homog.diagnostics);
    });
    for (const auto& d : diag) rep.diagnostics.merge(d);
    for (std::size_t j = 0; j < psi.size(); ++j) {
      std::vector<double> gaps(opt.replications);
      for (std::size_t r = 0; r < opt.replications; ++r)
        gaps[r] = std::abs(st.pi_full[j][r] - st.pi_homog[j][r]);
      const auto g = mean_se(gaps);
      st.mean_gap.push_back(g.mean);
      st.gap_se.push_back(rep.insufficient_replications
                              ? std::numeric_limits<double>::quiet_NaN()
                              : g.se);
      st.ks_pi.push_back(ks_statistic(st.pi_full[j], st.pi_homog[j]));
    }
    if (rep.has_martingale) {
      MartingaleOptions mo;
      mo.runs = opt.martingale_runs;
      mo.T = opt.T;
      mo.dt_rule = opt.dt_rule;
      mo.seed = derive_seed(opt.seed, kTagMart);
      mo.rho0_runs = 0;
      const auto m = martingale_check(p, nullptr, mo);
      st.martingale_mean = m.mean_lambda;
      st.martingale_se = m.se_lambda;
    }
    rep.per_eps.push_back(std::move(st));
  }
  if (rep.has_signal) {
    const auto sig = signal_convergence_study(preset, homogenized, opt.epsilons,
                                              opt.signal_paths, opt.T, opt.dt_rule, opt.seed);
    for (std::size_t i = 0; i < sig.ks.size(); ++i) rep.per_eps[i].ks_signal = sig.ks[i];
  }
  return rep;
}

TrendAssessment assess_trend(const ConvergenceReport& report, std::size_t j) {
  TrendAssessment a;
  const auto& pe = report.per_eps;
  if (pe.size() < 2 || j >= report.psi_names.size()) return a;
  a.gap_decreasing = !report.insufficient_replications;
  a.ks_decreasing = true;
  for (std::size_t i = 0; i + 1 < pe.size(); ++i) {
    const double dec = pe[i].mean_gap[j] - pe[i + 1].mean_gap[j];
    const double se = std::hypot(pe[i].gap_se[j], pe[i + 1].gap_se[j]);
    a.gap_decrements.push_back(dec);
    a.combined_se.push_back(se);
    if (!(dec > se)) a.gap_decreasing = false;
    if (!(pe[i + 1].ks_pi[j] < pe[i].ks_pi[j])) a.ks_decreasing = false;
  }
  return a;
}

void write_convergence_csv(const ConvergenceReport& report, std::ostream& os) {
  os << "epsilon,psi,mean_gap,gap_se,ks_pi";
  if (report.has_signal) os << ",ks_signal";
  if (report.has_martingale) os << ",martingale_mean,martingale_se";
  os << '\n';
  for (const auto& st : report.per_eps) {
    for (std::size_t j = 0; j < report.psi_names.size(); ++j) {
      os << fmt::format("{:.17g},\"{}\",{:.17g},{:.17g},{:.17g}", st.epsilon,
                        report.psi_names[j], st.mean_gap[j], st.gap_se[j], st.ks_pi[j]);
      if (report.has_signal) os << fmt::format(",{:.17g}", st.ks_signal);
      if (report.has_martingale)
        os << fmt::format(",{:.17g},{:.17g}", st.martingale_mean, st.martingale_se);
      os << '\n';
    }
  }
}

void write_replications_csv(const ConvergenceReport& report, std::ostream& os) {
  os << "epsilon,psi,replication,pi_full,pi_homogenized\n";
  for (const auto& st : report.per_eps) {
    for (std::size_t j = 0; j < report.psi_names.size(); ++j) {
      for (std::size_t r = 0; r < st.pi_full[j].size(); ++r) {
        os << fmt::format("{:.17g},\"{}\",{},{:.17g},{:.17g}\n", st.epsilon, report.psi_names[j],
                          r, st.pi_full[j][r], st.pi_homog[j][r]);
      }
    }
  }
}

Json convergence_summary(const ConvergenceReport& report) {
  const auto& o = report.options;
  Json j;
  j["epsilons"] = o.epsilons;
  j["psi"] = report.psi_names;
  j["particles"] = o.particles;
  j["replications"] = o.replications;
  j["T"] = o.T;
  j["dt_rule"] = {{"dt_slow", o.dt_rule.dt_slow}, {"fast_mode", to_string(o.dt_rule.fast_mode)}};
  j["ess_fraction"] = o.ess_fraction;
  j["seed"] = o.seed;
  j["insufficient_replications"] = report.insufficient_replications;
  const auto& d = report.diagnostics;
  j["filter_invariants"] = {{"estimates_in_range", d.estimates_in_range},
                            {"mass_positive", d.mass_positive},
                            {"min_log_rho1", d.min_log_rho1},
                            {"max_resample_mass_error", d.max_resample_mass_error},
                            {"max_normalization_error", d.max_normalization_error},
                            {"steps", d.steps},
                            {"resamples", d.resamples}};
  Json rows = Json::array();
  for (const auto& st : report.per_eps) {
    Json row;
    row["epsilon"] = st.epsilon;
    row["mean_gap"] = st.mean_gap;
    row["gap_se"] = report.insufficient_replications ? Json(nullptr) : Json(st.gap_se);
    row["ks_pi"] = st.ks_pi;
    if (report.has_signal) row["ks_signal"] = st.ks_signal;
    if (report.has_martingale) {
      row["martingale_mean"] = st.martingale_mean;
      row["martingale_se"] = st.martingale_se;
    }
    rows.push_back(std::move(row));
  }
  j["per_epsilon"] = std::move(rows);
  Json trends = Json::array();
  for (std::size_t k = 0; k < report.psi_names.size(); ++k) {
    const auto t = assess_trend(report, k);
    trends.push_back({{"psi", report.psi_names[k]},
                      {"gap_strictly_decreasing_beyond_se", t.gap_decreasing},
                      {"ks_pi_strictly_decreasing", t.ks_decreasing}});
  }
  j["trend"] = std::move(trends);
  return j;
}

}  // namespace levyfilter
