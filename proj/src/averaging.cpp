#include "levyfilter/averaging.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>

#include <fmt/format.h>
#include <fmt/ranges.h>
#include <tbb/parallel_for.h>

#include "levyfilter/errors.hpp"

namespace levyfilter {

namespace {

constexpr std::size_t kBatches = 50;

// Neumaier-compensated running sum; exact for repeated constants.
struct Sum {
  double s = 0.0, c = 0.0;
  void add(double v) {
    const double t = s + v;
    c += std::abs(s) >= std::abs(v) ? (s - t) + v : (v - t) + s;
    s = t;
  }
  double value() const { return s + c; }
};

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
};

// Batch-means estimate over values[begin, end).
MeanSe batch_means(const std::vector<double>& values, std::size_t begin, std::size_t end,
                   std::size_t batches) {
  const std::size_t count = end - begin;
  batches = std::max<std::size_t>(2, std::min(batches, count));
  const std::size_t per = count / batches;
  std::vector<double> means(batches);
  Sum total;
  for (std::size_t b = 0; b < batches; ++b) {
    Sum s;
    for (std::size_t i = begin + b * per; i < begin + (b + 1) * per; ++i) s.add(values[i]);
    means[b] = s.value() / static_cast<double>(per);
    total.add(means[b]);
  }
  MeanSe r;
  r.mean = total.value() / static_cast<double>(batches);
  double var = 0.0;
  for (double m : means) var += (m - r.mean) * (m - r.mean);
  var /= static_cast<double>(batches - 1);
  r.se = std::sqrt(var / static_cast<double>(batches));
  return r;
}

}  // namespace

EmpiricalMeasure estimate_invariant_measure(const SlowFastModel& model,
                                            std::span<const double> x, double burn_in,
                                            std::size_t n_samples, std::size_t stride, double dt,
                                            std::uint64_t root_seed, std::uint32_t stream_index) {
  if (x.size() != model.n) throw InvalidArgument("frozen state has the wrong dimension");
  if (!(burn_in >= 0.0) || !std::isfinite(burn_in))
    throw InvalidArgument("burn_in must be non-negative");
  if (n_samples < 1000) throw InvalidArgument("n_samples must be at least 1000");
  if (stride == 0) throw InvalidArgument("stride must be positive");

  FrozenFastStepper stepper(model, x, dt, FastMode::euler);
  auto streams = SignalStreams::for_path(
      derive_seed(root_seed, static_cast<std::uint64_t>(NoiseSource::invariant_measure)),
      stream_index);
  std::vector<double> z = model.z0;
  const auto burn_steps = static_cast<std::size_t>(std::ceil(burn_in / dt - 1e-9));
  double t = 0.0;
  for (std::size_t k = 0; k < burn_steps; ++k, t += dt) stepper.step(t, z, streams);

  EmpiricalMeasure em;
  em.burn_in_used = static_cast<double>(burn_steps) * dt;
  em.thinning_stride = stride;
  em.frozen_x.assign(x.begin(), x.end());
  em.samples.reserve(n_samples);
  for (std::size_t s = 0; s < n_samples; ++s) {
    for (std::size_t k = 0; k < stride; ++k, t += dt) stepper.step(t, z, streams);
    em.samples.push_back(z);
  }

  // stationarity: first and second half means agree within 4 combined SEs
  const std::size_t half = n_samples / 2;
  std::vector<double> coord(n_samples);
  for (std::size_t j = 0; j < model.m; ++j) {
    for (std::size_t s = 0; s < n_samples; ++s) coord[s] = em.samples[s][j];
    const auto a = batch_means(coord, 0, half, kBatches / 2);
    const auto b = batch_means(coord, half, 2 * half, kBatches / 2);
    const double se = std::hypot(a.se, b.se);
    const double gap = std::abs(a.mean - b.mean);
    if (gap > 4.0 * se && gap > 1e-12 * (1.0 + std::abs(a.mean))) {
      em.warning = fmt::format(
          "stationarity diagnostic failed for z_{} at x=[{}]: half means {} and {} differ by "
          "more than 4 SE ({})",
          j, fmt::join(x, ","), a.mean, b.mean, se);
      break;
    }
  }
  return em;
}

AveragedCoefficients average_coefficients(const SlowFastModel& model,
                                          const ObservationModel& obs,
                                          std::span<const double> x,
                                          const EmpiricalMeasure& measure) {
  const auto n = model.n, m = model.m, l = model.l, d = obs.d;
  if (x.size() != n) throw InvalidArgument("average_coefficients: x has the wrong dimension");
  if (measure.frozen_x.size() != n || !std::equal(x.begin(), x.end(), measure.frozen_x.begin()))
    throw InvalidArgument("average_coefficients: measure was estimated at a different x");
  if (measure.samples.empty()) throw InvalidArgument("average_coefficients: empty measure");

  const std::size_t count = measure.samples.size();
  std::vector<Sum> sb(n), sa(n * n), sh(d);
  std::vector<std::vector<double>> b_values(n, std::vector<double>(count));
  std::vector<double> b(n), sig(n * l), h(d);
  for (std::size_t s = 0; s < count; ++s) {
    const auto& z = measure.samples[s];
    if (z.size() != m) throw InvalidArgument("average_coefficients: sample has the wrong dimension");
    const EvalPoint p{x, z, {}, 0.0};
    model.b1(p, b);
    model.sigma1(p, sig);
    obs.h(p, h);
    for (std::size_t i = 0; i < n; ++i) {
      sb[i].add(b[i]);
      b_values[i][s] = b[i];
      for (std::size_t j = 0; j < n; ++j) {
        double acc = 0.0;
        for (std::size_t k = 0; k < l; ++k) acc += sig[i * l + k] * sig[j * l + k];
        sa[i * n + j].add(acc);
      }
    }
    for (std::size_t i = 0; i < d; ++i) sh[i].add(h[i]);
  }

  const double c = static_cast<double>(count);
  AveragedCoefficients out;
  out.bbar1.resize(n);
  out.bbar1_se.resize(n);
  out.abar.resize(n * n);
  out.hbar.resize(d);
  for (std::size_t i = 0; i < n; ++i) {
    out.bbar1[i] = sb[i].value() / c;
    out.bbar1_se[i] = count >= 4 ? batch_means(b_values[i], 0, count, kBatches).se : 0.0;
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      out.abar[i * n + j] = 0.5 * (sa[i * n + j].value() + sa[j * n + i].value()) / c;
  for (std::size_t i = 0; i < d; ++i) out.hbar[i] = sh[i].value() / c;
  return out;
}

Eigen::MatrixXd factor_diffusion(const Eigen::MatrixXd& abar) {
  const auto n = abar.rows();
  if (abar.cols() != n || n == 0) throw InvalidArgument("factor_diffusion: matrix must be square");
  if (!abar.allFinite()) throw InvalidArgument("factor_diffusion: non-finite entries");
  const double asym = (abar - abar.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-8) {
    throw InvalidArgument(fmt::format("factor_diffusion: asymmetry {} exceeds 1e-8", asym));
  }
  const Eigen::MatrixXd sym = 0.5 * (abar + abar.transpose());
  if (n == 1) {
    Eigen::MatrixXd f(1, 1);
    f(0, 0) = std::sqrt(std::max(0.0, sym(0, 0)));
    return f;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym);
  Eigen::VectorXd ev = eig.eigenvalues();
  const double floor = -1e-10 * std::max(1.0, ev.cwiseAbs().maxCoeff());
  if (ev.minCoeff() < floor) {
    throw InvalidArgument(
        fmt::format("factor_diffusion: eigenvalue {} below the PSD floor", ev.minCoeff()));
  }
  ev = ev.cwiseMax(0.0);
  // B B^T = A with B = Q sqrt(D); B^T = Q' R gives the lower-triangular factor R^T.
  const Eigen::MatrixXd bt = (eig.eigenvectors() * ev.cwiseSqrt().asDiagonal()).transpose();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(bt);
  Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Eigen::Index i = 0; i < n; ++i)
    if (r(i, i) < 0.0) r.row(i) *= -1.0;
  return r.transpose();
}

// ---------------------------------------------------------------------------

namespace detail {

struct CoefficientSource {
  virtual ~CoefficientSource() = default;
  virtual void evaluate(std::span<const double> x, HomogenizedModel::Coefficients& out) const = 0;
};

}  // namespace detail

namespace {

using Coefficients = HomogenizedModel::Coefficients;

void fill_factor(std::size_t n, Coefficients& c) {
  c.sigmabar1.resize(n * n);
  if (n == 1) {
    c.sigmabar1[0] = std::sqrt(std::max(0.0, c.abar[0]));
    return;
  }
  const Eigen::MatrixXd f =
      factor_diffusion(Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                                       Eigen::RowMajor>>(c.abar.data(), n, n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) c.sigmabar1[i * n + j] = f(i, j);
}

struct ClosedFormSource final : detail::CoefficientSource {
  Coefficients constant;
  Field hbar;

  void evaluate(std::span<const double> x, Coefficients& out) const override {
    out.bbar1 = constant.bbar1;
    out.abar = constant.abar;
    out.sigmabar1 = constant.sigmabar1;
    out.hbar.resize(hbar.size());
    hbar({x, {}, {}, 0.0}, out.hbar);
  }
};

struct LatticeSource final : detail::CoefficientSource {
  std::size_t n = 0;
  std::vector<std::vector<double>> axes;
  std::vector<AveragedCoefficients> nodes;  // row-major over axes, last axis fastest

  void evaluate(std::span<const double> x, Coefficients& out) const override {
    if (x.size() != n) throw InvalidArgument("lattice query has the wrong dimension");
    std::vector<std::size_t> lower(n);
    std::vector<double> frac(n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& ax = axes[i];
      if (!(x[i] >= ax.front() && x[i] <= ax.back())) {
        throw ExtrapolationError(fmt::format("x_{}={} outside the averaging lattice [{}, {}]", i,
                                             x[i], ax.front(), ax.back()));
      }
      auto it = std::upper_bound(ax.begin(), ax.end(), x[i]);
      std::size_t k = static_cast<std::size_t>(it - ax.begin());
      k = std::clamp<std::size_t>(k, 1, ax.size() - 1) - 1;
      lower[i] = k;
      frac[i] = (x[i] - ax[k]) / (ax[k + 1] - ax[k]);
    }
    const auto& first = nodes.front();
    out.bbar1.assign(first.bbar1.size(), 0.0);
    out.abar.assign(first.abar.size(), 0.0);
    out.hbar.assign(first.hbar.size(), 0.0);
    for (std::size_t corner = 0; corner < (std::size_t{1} << n); ++corner) {
      double w = 1.0;
      std::size_t flat = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const bool up = (corner >> i) & 1u;
        w *= up ? frac[i] : 1.0 - frac[i];
        flat = flat * axes[i].size() + lower[i] + (up ? 1 : 0);
      }
      if (w == 0.0) continue;
      const auto& node = nodes[flat];
      for (std::size_t j = 0; j < out.bbar1.size(); ++j) out.bbar1[j] += w * node.bbar1[j];
      for (std::size_t j = 0; j < out.abar.size(); ++j) out.abar[j] += w * node.abar[j];
      for (std::size_t j = 0; j < out.hbar.size(); ++j) out.hbar[j] += w * node.hbar[j];
    }
    fill_factor(n, out);
  }
};

struct OnDemandSource final : detail::CoefficientSource {
  ModelPreset preset;
  AveragingParams params;
  mutable std::mutex mutex;
  mutable std::map<std::vector<long long>, Coefficients> cache;

  void evaluate(std::span<const double> x, Coefficients& out) const override {
    std::vector<long long> key(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) key[i] = std::llround(x[i] * 1e6);
    {
      std::lock_guard lock(mutex);
      if (auto it = cache.find(key); it != cache.end()) {
        out = it->second;
        return;
      }
    }
    std::vector<double> xr(x.size());
    std::uint64_t h = params.root_seed;
    for (std::size_t i = 0; i < x.size(); ++i) {
      xr[i] = static_cast<double>(key[i]) * 1e-6;
      h = derive_seed(h, static_cast<std::uint64_t>(key[i]), i);
    }
    const auto em = estimate_invariant_measure(preset.slow_fast, xr, params.burn_in,
                                               params.n_samples, params.stride, params.dt, h, 0);
    const auto avg = average_coefficients(preset.slow_fast, preset.observation, xr, em);
    Coefficients c{avg.bbar1, avg.abar, {}, avg.hbar};
    fill_factor(x.size(), c);
    std::lock_guard lock(mutex);
    out = cache.try_emplace(std::move(key), std::move(c)).first->second;
  }
};

}  // namespace

HomogenizedModel::HomogenizedModel(std::size_t n, std::size_t d, std::vector<double> x0,
                                   Field f1, LevyMeasureSpec nu1,
                                   std::shared_ptr<const detail::CoefficientSource> source,
                                   Provenance provenance, std::string description)
    : n_(n),
      d_(d),
      x0_(std::move(x0)),
      f1_(std::move(f1)),
      nu1_(std::move(nu1)),
      source_(std::move(source)),
      provenance_(provenance),
      description_(std::move(description)) {}

void HomogenizedModel::evaluate(std::span<const double> x, Coefficients& out) const {
  source_->evaluate(x, out);
}

HomogenizedModel::Coefficients HomogenizedModel::at(std::span<const double> x) const {
  Coefficients c;
  evaluate(x, c);
  return c;
}

HomogenizedModel::Coefficients HomogenizedModel::make_buffers() const {
  return {std::vector<double>(n_), std::vector<double>(n_ * n_), std::vector<double>(n_ * n_),
          std::vector<double>(d_)};
}

std::vector<double> lattice_axis(double lo, double hi, std::size_t count) {
  if (!(hi > lo) || !std::isfinite(lo) || !std::isfinite(hi))
    throw InvalidArgument("lattice axis needs finite lo < hi");
  if (count < 2) throw InvalidArgument("lattice axis needs at least two points");
  const double guard = 0.1 * (hi - lo);
  const double a = lo - guard, b = hi + guard;
  std::vector<double> axis(count);
  for (std::size_t i = 0; i < count; ++i)
    axis[i] = a + (b - a) * static_cast<double>(i) / static_cast<double>(count - 1);
  axis.back() = b;
  return axis;
}

LatticeTable average_on_lattice(const ModelPreset& preset, const LatticeMode& lattice,
                                const AveragingParams& params) {
  const auto n = preset.slow_fast.n;
  if (lattice.axes.size() != n) throw InvalidArgument("lattice needs one axis per slow coordinate");
  std::size_t total = 1;
  for (const auto& ax : lattice.axes) {
    if (ax.size() < 2 || !std::is_sorted(ax.begin(), ax.end()) ||
        std::adjacent_find(ax.begin(), ax.end()) != ax.end())
      throw InvalidArgument("lattice axes must be strictly increasing with at least two points");
    total *= ax.size();
  }
  LatticeTable table;
  table.x.resize(total);
  table.values.resize(total);
  table.warnings.resize(total);
  for (std::size_t flat = 0; flat < total; ++flat) {
    std::vector<double> x(n);
    std::size_t rest = flat;
    for (std::size_t i = n; i-- > 0;) {
      x[i] = lattice.axes[i][rest % lattice.axes[i].size()];
      rest /= lattice.axes[i].size();
    }
    table.x[flat] = std::move(x);
  }
  tbb::parallel_for(std::size_t{0}, total, [&](std::size_t flat) {
    const auto em = estimate_invariant_measure(preset.slow_fast, table.x[flat], params.burn_in,
                                               params.n_samples, params.stride, params.dt,
                                               params.root_seed,
                                               static_cast<std::uint32_t>(flat));
    table.values[flat] =
        average_coefficients(preset.slow_fast, preset.observation, table.x[flat], em);
    table.warnings[flat] = em.warning;
  });
  return table;
}

HomogenizedModel build_homogenized(const ModelPreset& preset, const HomogenizationMode& mode,
                                   const AveragingParams& params) {
  const auto& s = preset.slow_fast;
  const auto& o = preset.observation;
  const std::string mc = fmt::format("monte_carlo(burn_in={}, n_samples={}, stride={}, dt={}, seed={})",
                                     params.burn_in, params.n_samples, params.stride, params.dt,
                                     params.root_seed);
  if (std::holds_alternative<ClosedFormMode>(mode)) {
    if (!preset.closed_form)
      throw InvalidArgument(fmt::format("preset '{}' has no closed-form averages", preset.name));
    const auto& cf = *preset.closed_form;
    auto src = std::make_shared<ClosedFormSource>();
    src->constant.bbar1 = cf.bbar1;
    src->constant.abar = cf.abar;
    fill_factor(s.n, src->constant);
    src->hbar = cf.hbar;
    return HomogenizedModel(s.n, o.d, s.x0, s.f1, s.nu1, std::move(src), Provenance::closed_form,
                            "closed_form");
  }
  if (const auto* lat = std::get_if<LatticeMode>(&mode)) {
    auto table = average_on_lattice(preset, *lat, params);
    auto src = std::make_shared<LatticeSource>();
    src->n = s.n;
    src->axes = lat->axes;
    src->nodes = std::move(table.values);
    return HomogenizedModel(s.n, o.d, s.x0, s.f1, s.nu1, std::move(src), Provenance::monte_carlo,
                            "lattice " + mc);
  }
  auto src = std::make_shared<OnDemandSource>();
  src->preset = preset;
  src->params = params;
  return HomogenizedModel(s.n, o.d, s.x0, s.f1, s.nu1, std::move(src), Provenance::monte_carlo,
                          "on_demand " + mc);
}

}  // namespace levyfilter
