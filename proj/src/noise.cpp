#include "levyfilter/noise.hpp"

#include <gsl/gsl_integration.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <memory>
#include <sstream>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "levyfilter/errors.hpp"

namespace levyfilter {

std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9E3779B97F4A7C15ULL;
  auto z = state;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag, std::uint64_t index) {
  std::uint64_t s = seed;
  std::uint64_t h = splitmix64(s);
  s = h ^ (tag * 0xD1B54A32D192ED03ULL);
  h = splitmix64(s);
  s = h ^ (index * 0xABC98388FB8FAC03ULL);
  return splitmix64(s);
}

RngStream::RngStream(std::uint64_t root_seed, std::uint64_t stream_id)
    : root_seed_(root_seed), stream_id_(stream_id) {
  std::uint64_t s = root_seed;
  std::uint64_t mixed = splitmix64(s);
  s = mixed ^ stream_id;
  mixed = splitmix64(s);
  s = mixed ^ (stream_id * 0x9E3779B97F4A7C15ULL);
  for (auto& word : state_) word = splitmix64(s);
  if (state_[0] == 0 && state_[1] == 0 && state_[2] == 0 && state_[3] == 0) state_[0] = 1;
}

std::uint64_t RngStream::poisson(double mean) {
  if (!(mean > 0.0)) return 0;
  std::poisson_distribution<std::uint64_t> dist(mean);
  return dist(*this);
}

// ---------------------------------------------------------------------------

namespace {

constexpr std::size_t kQuadraturePoints = 128;

struct GlTable {
  gsl_integration_glfixed_table* table;
  GlTable() : table(gsl_integration_glfixed_table_alloc(kQuadraturePoints)) {}
  ~GlTable() { gsl_integration_glfixed_table_free(table); }
};

// Gauss-Legendre nodes/weights on [lo, hi] with density weights applied.
template <class Density>
void fill_legendre(double lo, double hi, Density density, std::vector<double>& nodes,
                   std::vector<double>& weights) {
  static const GlTable gl;
  nodes.resize(kQuadraturePoints);
  weights.resize(kQuadraturePoints);
  double total = 0.0;
  for (std::size_t i = 0; i < kQuadraturePoints; ++i) {
    double xi = 0.0;
    double wi = 0.0;
    gsl_integration_glfixed_point(lo, hi, i, &xi, &wi, gl.table);
    nodes[i] = xi;
    weights[i] = wi * density(xi);
    total += weights[i];
  }
  for (auto& w : weights) w /= total;
}

std::vector<double> parse_numbers(std::string_view args, std::string_view whole) {
  std::vector<double> values;
  std::size_t pos = 0;
  while (pos <= args.size()) {
    auto comma = args.find(',', pos);
    if (comma == std::string_view::npos) comma = args.size();
    auto token = args.substr(pos, comma - pos);
    while (!token.empty() && token.front() == ' ') token.remove_prefix(1);
    while (!token.empty() && token.back() == ' ') token.remove_suffix(1);
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
    if (token.empty() || ec != std::errc() || ptr != token.data() + token.size()) {
      throw ConfigError(fmt::format("mark sampler '{}': bad number '{}'", whole, token));
    }
    values.push_back(v);
    pos = comma + 1;
  }
  return values;
}

}  // namespace

MarkSampler::MarkSampler(Law law) : law_(std::move(law)) {
  std::visit(
      [this](const auto& l) {
        using L = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<L, UniformMarks>) {
          if (!(l.b > l.a)) throw InvalidArgument("uniform marks need a < b");
          const double density = 1.0 / (l.b - l.a);
          fill_legendre(l.a, l.b, [density](double) { return density; }, nodes_, weights_);
        } else if constexpr (std::is_same_v<L, GaussMarks>) {
          if (!(l.sigma > 0.0)) throw InvalidArgument("gauss marks need sigma > 0");
          const double mu = l.mu;
          const double s = l.sigma;
          fill_legendre(mu - 10.0 * s, mu + 10.0 * s,
                        [mu, s](double u) { return std::exp(-0.5 * (u - mu) * (u - mu) / (s * s)); },
                        nodes_, weights_);
        } else if constexpr (std::is_same_v<L, PointMarks>) {
          if (l.value.empty()) throw InvalidArgument("point marks need a value");
          dim_ = l.value.size();
          nodes_ = l.value;
          weights_ = {1.0};
        } else {
          if (!(l.rate > 0.0)) throw InvalidArgument("exp marks need rate > 0");
          const double r = l.rate;
          fill_legendre(0.0, 50.0 / r, [r](double u) { return std::exp(-r * u); }, nodes_,
                        weights_);
        }
      },
      law_);
}

MarkSampler MarkSampler::parse(std::string_view text) {
  const auto open = text.find('(');
  const auto close = text.rfind(')');
  if (open == std::string_view::npos || close == std::string_view::npos || close < open ||
      close + 1 != text.size()) {
    throw ConfigError(fmt::format("mark sampler '{}': expected name(args)", text));
  }
  const auto name = text.substr(0, open);
  const auto args = parse_numbers(text.substr(open + 1, close - open - 1), text);
  auto expect_args = [&](std::size_t n) {
    if (args.size() != n) {
      throw ConfigError(fmt::format("mark sampler '{}': expected {} arguments", text, n));
    }
  };
  try {
    if (name == "uniform") {
      expect_args(2);
      return MarkSampler(UniformMarks{args[0], args[1]});
    }
    if (name == "gauss") {
      expect_args(2);
      return MarkSampler(GaussMarks{args[0], args[1]});
    }
    if (name == "point") return MarkSampler(PointMarks{args});
    if (name == "exp") {
      expect_args(1);
      return MarkSampler(ExpMarks{args[0]});
    }
  } catch (const InvalidArgument& e) {
    throw ConfigError(fmt::format("mark sampler '{}': {}", text, e.what()));
  }
  throw ConfigError(fmt::format("mark sampler '{}': unknown law '{}'", text, name));
}

std::string MarkSampler::to_string() const {
  return std::visit(
      [](const auto& l) -> std::string {
        using L = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<L, UniformMarks>) {
          return fmt::format("uniform({:.17g},{:.17g})", l.a, l.b);
        } else if constexpr (std::is_same_v<L, GaussMarks>) {
          return fmt::format("gauss({:.17g},{:.17g})", l.mu, l.sigma);
        } else if constexpr (std::is_same_v<L, PointMarks>) {
          return fmt::format("point({:.17g})", fmt::join(l.value, ","));
        } else {
          return fmt::format("exp({:.17g})", l.rate);
        }
      },
      law_);
}

void MarkSampler::draw(RngStream& stream, std::span<double> out) const {
  std::visit(
      [&](const auto& l) {
        using L = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<L, UniformMarks>) {
          out[0] = l.a + (l.b - l.a) * stream.uniform();
        } else if constexpr (std::is_same_v<L, GaussMarks>) {
          out[0] = l.mu + l.sigma * stream.normal();
        } else if constexpr (std::is_same_v<L, PointMarks>) {
          std::copy(l.value.begin(), l.value.end(), out.begin());
        } else {
          // 1 - U lies in (0,1]
          out[0] = -std::log(1.0 - stream.uniform()) / l.rate;
        }
      },
      law_);
}

const char* to_string(Region region) noexcept {
  switch (region) {
    case Region::U1: return "U1";
    case Region::U2: return "U2";
    case Region::U3: return "U3";
    case Region::U3_complement: return "U3_complement";
  }
  return "?";
}

Region parse_region(std::string_view text) {
  if (text == "U1") return Region::U1;
  if (text == "U2") return Region::U2;
  if (text == "U3") return Region::U3;
  if (text == "U3_complement") return Region::U3_complement;
  throw ConfigError(fmt::format("unknown region '{}'", text));
}

LevyMeasureSpec::LevyMeasureSpec(double total_intensity, MarkSampler marks, Region region)
    : intensity_(total_intensity), marks_(std::move(marks)), region_(region) {
  if (std::isnan(total_intensity) || total_intensity < 0.0) {
    throw InvalidArgument(fmt::format("jump intensity must be >= 0, got {}", total_intensity));
  }
  if (!std::isfinite(total_intensity)) {
    throw UnsupportedMeasure("infinite-activity jump measures are not supported");
  }
}

LevyMeasureSpec LevyMeasureSpec::none(Region region) {
  return LevyMeasureSpec(0.0, MarkSampler(PointMarks{{0.0}}), region);
}

// ---------------------------------------------------------------------------

std::vector<std::vector<double>> brownian_increments(RngStream& stream, std::size_t dim,
                                                     double dt, std::size_t count) {
  if (dim == 0) throw InvalidArgument("brownian_increments: dim must be positive");
  if (!(dt > 0.0)) throw InvalidArgument("brownian_increments: dt must be positive");
  const double scale = std::sqrt(dt);
  std::vector<std::vector<double>> out(count, std::vector<double>(dim));
  for (auto& v : out) {
    for (auto& c : v) c = scale * stream.normal();
  }
  return out;
}

std::vector<JumpEvent> sample_poisson_jumps(RngStream& stream, const LevyMeasureSpec& spec,
                                            double horizon, double rate_scale) {
  if (!(horizon > 0.0)) throw InvalidArgument("sample_poisson_jumps: horizon must be positive");
  if (!(rate_scale > 0.0) || !std::isfinite(rate_scale)) {
    throw InvalidArgument("sample_poisson_jumps: rate_scale must be positive and finite");
  }
  if (!std::isfinite(spec.total_intensity())) {
    throw UnsupportedMeasure("sample_poisson_jumps: infinite total intensity");
  }
  std::vector<JumpEvent> events;
  if (spec.is_null()) return events;
  const auto count = stream.poisson(spec.total_intensity() * rate_scale * horizon);
  events.resize(count);
  for (auto& e : events) {
    e.time = horizon * (1.0 - stream.uniform());
    e.mark.resize(spec.marks().dim());
    spec.marks().draw(stream, e.mark);
  }
  std::sort(events.begin(), events.end(),
            [](const JumpEvent& a, const JumpEvent& b) { return a.time < b.time; });
  return events;
}

void check_intensity(double value, double t, std::span<const double> x,
                     std::span<const double> mark) {
  if (!(value > 0.0 && value <= 1.0)) {
    throw ModelViolation(fmt::format("jump intensity {} outside (0,1] at t={}, x=[{}], u=[{}]",
                                     value, t, fmt::join(x, ","), fmt::join(mark, ",")));
  }
}

std::vector<JumpEvent> thin_jumps(std::span<const JumpEvent> events, const IntensityFn& lambda,
                                  const StateLookup& state_lookup, RngStream& stream) {
  std::vector<JumpEvent> accepted;
  for (const auto& e : events) {
    const auto state = state_lookup(e.time);
    const double p = lambda(e.time, state, e.mark);
    check_intensity(p, e.time, state, e.mark);
    if (stream.uniform() < p) {
      accepted.push_back(e);
      accepted.back().accepted = true;
    }
  }
  return accepted;
}

}  // namespace levyfilter
