// Deterministic random streams and the small amount of statistics needed by
// the adaptive learning-rate scheduler.
#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string_view>
#include <vector>

namespace clib {

/// xoshiro256** seeded through splitmix64. Only integer arithmetic is used to
/// produce raw draws, so sequences are identical on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed) {
    std::uint64_t sm = seed;
    for (auto& word : state_) word = splitmix64(sm);
  }

  /// Independent sub-stream keyed by a label, e.g. Rng::derive(seed, "init").
  static Rng derive(std::uint64_t seed, std::string_view label) {
    std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
    for (unsigned char c : label) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    std::uint64_t mixed = seed ^ (h + 0x9e3779b97f4a7c15ULL + (seed << 6) + (seed >> 2));
    return Rng(splitmix64(mixed));
  }

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  std::vector<double> uniform(std::size_t n) {
    std::vector<double> out(n);
    for (auto& v : out) v = uniform();
    return out;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Unbiased integer in [0, n). n must be positive.
  std::uint64_t uniform_index(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("uniform_index: n must be positive");
    const std::uint64_t threshold = (0 - n) % n;
    for (;;) {
      const std::uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  /// Standard normal via the Box-Muller transform (second value is cached).
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

  /// Fisher-Yates; std::shuffle is implementation-defined so it is not used.
  template <typename T>
  void shuffle(std::vector<T>& values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(uniform_index(i));
      std::swap(values[i - 1], values[j]);
    }
  }

  friend bool operator==(const Rng&, const Rng&) = default;

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  static std::uint64_t splitmix64(std::uint64_t& x) {
    std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t seed_;
  std::uint64_t state_[4]{};
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Bounded FIFO of loss decreases; appending at capacity evicts the oldest.
class LossHistory {
 public:
  explicit LossHistory(std::size_t max_len) : max_len_(max_len) {
    if (max_len == 0) throw std::invalid_argument("LossHistory: max_len must be positive");
  }

  void push(double value) {
    values_.push_back(value);
    if (values_.size() > max_len_) values_.pop_front();
  }
  void clear() { values_.clear(); }

  std::size_t size() const { return values_.size(); }
  std::size_t max_len() const { return max_len_; }
  bool full() const { return values_.size() == max_len_; }
  bool empty() const { return values_.empty(); }
  std::vector<double> values() const { return {values_.begin(), values_.end()}; }

 private:
  std::size_t max_len_;
  std::deque<double> values_;
};

namespace detail {

// Continued fraction for the regularized incomplete beta (modified Lentz).
inline double beta_continued_fraction(double a, double b, double x) {
  constexpr int kMaxIter = 500;
  constexpr double kEps = 1e-16;
  constexpr double kTiny = 1e-300;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) break;
  }
  return h;
}

}  // namespace detail

/// Regularized incomplete beta I_x(a, b).
inline double incomplete_beta(double a, double b, double x) {
  if (a <= 0.0 || b <= 0.0) throw std::invalid_argument("incomplete_beta: a and b must be positive");
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double log_front =
      std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * detail::beta_continued_fraction(a, b, x) / a;
  return 1.0 - front * detail::beta_continued_fraction(b, a, 1.0 - x) / b;
}

/// P(T >= t) for Student's t with `df` degrees of freedom.
inline double student_t_sf(double t, std::size_t df) {
  if (df == 0) throw std::invalid_argument("student_t_sf: df must be >= 1");
  if (std::isnan(t)) throw std::invalid_argument("student_t_sf: t is NaN");
  if (t == 0.0) return 0.5;
  const double nu = static_cast<double>(df);
  if (std::isinf(t)) return t > 0 ? 0.0 : 1.0;
  // Two-sided tail mass is I_{nu/(nu+t^2)}(nu/2, 1/2).
  const double x = nu / (nu + t * t);
  const double tail = 0.5 * incomplete_beta(0.5 * nu, 0.5, x);
  return t > 0 ? tail : 1.0 - tail;
}

inline constexpr double kPooledVarianceFloor = 1e-12;

/// One-sided pooled-variance two-sample t-test with alternative mean(low) > mean(high).
/// Returns the p-value; small values mean the low-LR history decreased the loss more.
inline double t_test_one_sided(std::span<const double> low, std::span<const double> high) {
  if (low.size() < 2 || high.size() < 2)
    throw std::invalid_argument("t_test_one_sided: each history needs at least 2 values");
  auto mean_of = [](std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  auto sq_dev = [](std::span<const double> v, double mean) {
    double s = 0.0;
    for (double x : v) s += (x - mean) * (x - mean);
    return s;
  };
  const double n_low = static_cast<double>(low.size());
  const double n_high = static_cast<double>(high.size());
  const double mean_low = mean_of(low);
  const double mean_high = mean_of(high);
  const std::size_t df = low.size() + high.size() - 2;
  double pooled = (sq_dev(low, mean_low) + sq_dev(high, mean_high)) / static_cast<double>(df);
  if (pooled < kPooledVarianceFloor) pooled = kPooledVarianceFloor;
  const double t = (mean_low - mean_high) / std::sqrt(pooled * (1.0 / n_low + 1.0 / n_high));
  return student_t_sf(t, df);
}

inline double t_test_one_sided(const LossHistory& low, const LossHistory& high) {
  const auto l = low.values();
  const auto h = high.values();
  return t_test_one_sided(std::span<const double>(l), std::span<const double>(h));
}

}  // namespace clib
