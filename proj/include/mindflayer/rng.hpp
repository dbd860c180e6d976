#pragma once

#include <cmath>
#include <cstdint>

namespace mindflayer {

// SplitMix64 finalizer (Vigna). Full-avalanche 64-bit mix.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Counter-based splittable random stream.
///
/// Output i of a stream with key k is mix64(k + GOLDEN*(i+1)) — i.e. a
/// SplitMix64 sequence — so a draw depends only on (key, position), never on
/// scheduling order. Child streams derive fresh keys through a second mixing
/// round, which keeps the streams for (run, worker, round, trial) independent
/// no matter how the simulation is refactored or parallelized.
class RngStream {
 public:
  RngStream() = default;
  explicit RngStream(std::uint64_t seed)
      : key_(mix64(seed ^ 0x5851f42d4c957f2dULL)) {}

  /// Independent stream for sub-entity `id` (worker index, round, trial, ...).
  [[nodiscard]] RngStream child(std::uint64_t id) const {
    RngStream s;
    s.key_ = mix64(key_ ^ mix64(0x94d049bb133111ebULL + id));
    return s;
  }

  std::uint64_t next_u64() {
    counter_ += 0x9e3779b97f4a7c15ULL;
    return mix64(key_ + counter_);
  }

  /// Uniform draw in [0, 1).
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Uniform draw in (0, 1) — safe as an inverse-CDF argument.
  double next_open01() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  /// Standard normal via Box–Muller; the spare value is cached so consecutive
  /// calls cost one transform per pair.
  double next_gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u1 = next_open01();
    const double u2 = next_double();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

 private:
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace mindflayer
