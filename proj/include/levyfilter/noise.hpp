#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace levyfilter {

// ---------------------------------------------------------------------------
// Random streams
// ---------------------------------------------------------------------------

/// Noise sources; each one gets its own block of stream ids so that the
/// driving noises of a path are independent by construction.
enum class NoiseSource : std::uint32_t {
  slow_brownian = 1,
  fast_brownian = 2,
  observation_brownian = 3,
  slow_jumps = 4,
  fast_jumps = 5,
  observation_jumps = 6,
  thinning = 7,
  resampling = 8,
  invariant_measure = 9,
  validation = 10,
};

/// stream_id = source_code * 2^32 + path_index
constexpr std::uint64_t stream_id(NoiseSource source, std::uint32_t path_index) {
  return (static_cast<std::uint64_t>(source) << 32) | path_index;
}

std::uint64_t splitmix64(std::uint64_t& state);

/// Mixes a root seed with a tag and an index into a fresh root seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag, std::uint64_t index = 0);

/// xoshiro256++ stream keyed by (root_seed, stream_id). The emitted sequence
/// depends only on that pair; `counter` is the number of 64-bit words drawn.
class RngStream {
 public:
  using result_type = std::uint64_t;

  RngStream() : RngStream(0, 0) {}
  RngStream(std::uint64_t root_seed, std::uint64_t stream_id);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    ++counter_;
    const auto result = rotl(state_[0] + state_[3], 23) + state_[0];
    const auto t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // [0,1) with 53 random bits
  double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }
  double normal() { return normal_(*this); }
  std::uint64_t poisson(double mean);

  std::uint64_t root_seed() const noexcept { return root_seed_; }
  std::uint64_t id() const noexcept { return stream_id_; }
  std::uint64_t counter() const noexcept { return counter_; }

 private:
  static constexpr std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }

  std::array<std::uint64_t, 4> state_{};
  std::uint64_t root_seed_ = 0;
  std::uint64_t stream_id_ = 0;
  std::uint64_t counter_ = 0;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

// ---------------------------------------------------------------------------
// Finite-activity jump measures
// ---------------------------------------------------------------------------

struct UniformMarks {
  double a, b;
};
struct GaussMarks {
  double mu, sigma;
};
struct PointMarks {
  std::vector<double> value;
};
struct ExpMarks {
  double rate;
};

/// Probability law of the jump marks. Named in configs as "uniform(a,b)",
/// "gauss(mu,sigma)", "point(v...)" or "exp(rate)".
class MarkSampler {
 public:
  using Law = std::variant<UniformMarks, GaussMarks, PointMarks, ExpMarks>;

  explicit MarkSampler(Law law);
  static MarkSampler parse(std::string_view text);

  std::string to_string() const;
  std::size_t dim() const noexcept { return dim_; }
  const Law& law() const noexcept { return law_; }

  void draw(RngStream& stream, std::span<double> out) const;

  /// Quadrature rule for E[g(mark)]: exact for point masses, 128-point
  /// Gauss-Legendre (on a truncated support for unbounded laws) otherwise.
  std::size_t node_count() const noexcept { return weights_.size(); }
  std::span<const double> node(std::size_t i) const {
    return {nodes_.data() + i * dim_, dim_};
  }
  double weight(std::size_t i) const { return weights_[i]; }

  template <class F>
  double expect(F&& g) const {
    double acc = 0.0;
    for (std::size_t i = 0; i < weights_.size(); ++i) acc += weights_[i] * g(node(i));
    return acc;
  }

 private:
  Law law_;
  std::size_t dim_ = 1;
  std::vector<double> nodes_;
  std::vector<double> weights_;
};

enum class Region { U1, U2, U3, U3_complement };

const char* to_string(Region region) noexcept;
Region parse_region(std::string_view text);

/// A finite measure nu restricted to one region of the mark space:
/// nu = total_intensity * law(marks).
class LevyMeasureSpec {
 public:
  LevyMeasureSpec(double total_intensity, MarkSampler marks, Region region);

  /// The null measure on `region`.
  static LevyMeasureSpec none(Region region);

  double total_intensity() const noexcept { return intensity_; }
  const MarkSampler& marks() const noexcept { return marks_; }
  Region region() const noexcept { return region_; }
  bool is_null() const noexcept { return intensity_ == 0.0; }

  /// Integral of g against the measure (not normalized).
  template <class F>
  double integrate(F&& g) const {
    if (is_null()) return 0.0;
    return intensity_ * marks_.expect(std::forward<F>(g));
  }

 private:
  double intensity_;
  MarkSampler marks_;
  Region region_;
};

struct JumpEvent {
  double time = 0.0;
  std::vector<double> mark;
  bool accepted = true;
};

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

/// `count` independent N(0, dt I_dim) vectors.
std::vector<std::vector<double>> brownian_increments(RngStream& stream, std::size_t dim,
                                                     double dt, std::size_t count);

/// Atoms of a Poisson random measure with intensity rate_scale * nu on
/// (0, horizon], sorted by time.
std::vector<JumpEvent> sample_poisson_jumps(RngStream& stream, const LevyMeasureSpec& spec,
                                            double horizon, double rate_scale);

using IntensityFn =
    std::function<double(double t, std::span<const double> x, std::span<const double> mark)>;
using StateLookup = std::function<std::vector<double>(double t)>;

/// Throws ModelViolation unless value lies in (0,1].
void check_intensity(double value, double t, std::span<const double> x,
                     std::span<const double> mark);

/// Keeps each event independently with probability lambda(t, state(t), mark).
/// Returns the accepted events only; the base sequence is left untouched.
std::vector<JumpEvent> thin_jumps(std::span<const JumpEvent> events, const IntensityFn& lambda,
                                  const StateLookup& state_lookup, RngStream& stream);

}  // namespace levyfilter
