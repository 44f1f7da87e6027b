#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>

namespace polylab {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Lattice site in Z^d, d <= 3. Unused trailing coordinates stay 0.
using Site = std::array<int, 3>;

inline int l1_norm(const Site& x) { return std::abs(x[0]) + std::abs(x[1]) + std::abs(x[2]); }

/// Simple-walk reachability of (j, x) from (0, 0).
inline bool reachable(int j, const Site& x) {
  const int n1 = l1_norm(x);
  return n1 <= j && ((j - n1) % 2 == 0);
}

// Errors. Config and budget errors map to exit code 2 in the CLI.
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct BudgetError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Counter-based randomness. Every random value in the library is a pure
// function of a tuple of 64-bit keys.

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t mix_key(std::uint64_t h, std::uint64_t v) {
  return splitmix64(h ^ splitmix64(v + 0x632be59bd9b4e019ULL));
}

/// Map 64 random bits to the open interval (0, 1).
constexpr double to_unit_open(std::uint64_t h) {
  return (static_cast<double>(h >> 11) + 0.5) * 0x1.0p-53;
}

/// Packs a site into 63 bits; coordinates must satisfy |x_i| < 2^20.
constexpr std::uint64_t pack_site(const Site& x) {
  constexpr std::int64_t off = 1 << 20;
  return static_cast<std::uint64_t>(x[0] + off) | (static_cast<std::uint64_t>(x[1] + off) << 21) |
         (static_cast<std::uint64_t>(x[2] + off) << 42);
}

inline constexpr int kMaxCoordinate = (1 << 20) - 1;

// Stream tags keep independent uses of one master seed apart.
namespace stream {
inline constexpr std::uint64_t kEnvironment = 0x454e5649524f4e31ULL;
inline constexpr std::uint64_t kLayerResample = 0x4c41594552525331ULL;
inline constexpr std::uint64_t kSampleBank = 0x53414d504c453131ULL;
inline constexpr std::uint64_t kSimplexStart = 0x53494d504c585331ULL;
inline constexpr std::uint64_t kPercolation = 0x5045524330303031ULL;
inline constexpr std::uint64_t kInstances = 0x494e5354414e4331ULL;
}  // namespace stream

/// Welford accumulator. Identical inputs give a bit-exact mean and zero variance.
class RunningStats {
 public:
  void add(double v) {
    ++count_;
    const double delta = v - mean_;
    mean_ += delta / static_cast<double>(count_);
    m2_ += delta * (v - mean_);
  }

  /// Chan et al. pairwise merge; merging in a fixed order keeps results schedule-independent.
  void merge(const RunningStats& o) {
    if (o.count_ == 0) return;
    if (count_ == 0) {
      *this = o;
      return;
    }
    const double na = static_cast<double>(count_), nb = static_cast<double>(o.count_);
    const double delta = o.mean_ - mean_;
    const double n = na + nb;
    mean_ += delta * nb / n;
    m2_ += o.m2_ + delta * delta * na * nb / n;
    count_ += o.count_;
  }

  std::int64_t count() const { return count_; }
  double mean() const { return mean_; }
  double variance() const { return count_ > 1 ? m2_ / static_cast<double>(count_ - 1) : 0.0; }
  double stddev() const { return std::sqrt(variance()); }
  double std_error() const {
    return count_ > 1 ? std::sqrt(variance() / static_cast<double>(count_)) : 0.0;
  }

 private:
  std::int64_t count_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
};

/// Streaming log-sum-exp.
class LogSumExp {
 public:
  void add(double v) {
    if (v == -kInf) return;
    if (v > max_) {
      sum_ = sum_ * std::exp(max_ - v) + 1.0;
      max_ = v;
    } else {
      sum_ += std::exp(v - max_);
    }
  }
  double value() const { return max_ == -kInf ? -kInf : max_ + std::log(sum_); }

 private:
  double max_ = -kInf;
  double sum_ = 0.0;
};

}  // namespace polylab
