#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <queue>
#include <stdexcept>
#include <vector>

#include "mindflayer/timemodel.hpp"

namespace mindflayer {

/// Binned distribution of a nonnegative time, with an explicit probability
/// mass at +inf (or beyond the binned range). sum(mass) + overflow_mass = 1.
struct Histogram {
  double bin_width = 1.0;
  double origin = 0.0;
  std::vector<double> mass;
  double overflow_mass = 0.0;

  double total_mass() const {
    double s = 0.0, c = 0.0;
    for (double v : mass) {  // Kahan: bin counts can be ~1e6
      const double y = v - c;
      const double t = s + y;
      c = (t - s) - y;
      s = t;
    }
    return s + overflow_mass;
  }

  double center(std::size_t i) const {
    return origin + (static_cast<double>(i) + 0.5) * bin_width;
  }

  /// E over the full law: +inf as soon as any overflow mass exists.
  ExtendedTime mean() const {
    if (overflow_mass > 0.0) return kInfiniteTime;
    return finite_mean();
  }

  /// Mean of the finite part, normalized by the finite mass.
  double finite_mean() const {
    double s = 0.0, m = 0.0;
    for (std::size_t i = 0; i < mass.size(); ++i) {
      s += mass[i] * center(i);
      m += mass[i];
    }
    return m > 0.0 ? s / m : 0.0;
  }

  /// Generalized quantile with linear interpolation inside bins; +inf when p
  /// exceeds the finite mass.
  ExtendedTime quantile(double p) const {
    if (!(p > 0.0 && p < 1.0)) {
      throw std::invalid_argument("Histogram::quantile: p must lie in (0,1)");
    }
    double cum = 0.0;
    for (std::size_t i = 0; i < mass.size(); ++i) {
      if (cum + mass[i] >= p) {
        const double frac = mass[i] > 0.0 ? (p - cum) / mass[i] : 0.0;
        return origin + (static_cast<double>(i) + frac) * bin_width;
      }
      cum += mass[i];
    }
    return kInfiniteTime;
  }

  /// Running finite mass: out[i] = P(T < origin + i*bin_width), i in
  /// [0, size]. Precompute once for repeated CDF queries.
  std::vector<double> cumulative() const {
    std::vector<double> cum(mass.size() + 1, 0.0);
    for (std::size_t i = 0; i < mass.size(); ++i) cum[i + 1] = cum[i] + mass[i];
    return cum;
  }

  /// P(T <= x), linear inside bins.
  double cdf(double x) const {
    if (x < origin) return 0.0;
    const double pos = (x - origin) / bin_width;
    if (pos >= static_cast<double>(mass.size())) return 1.0 - overflow_mass;
    const std::size_t idx = static_cast<std::size_t>(pos);
    double cum = 0.0;
    for (std::size_t i = 0; i < idx; ++i) cum += mass[i];
    cum += mass[idx] * (pos - static_cast<double>(idx));
    return std::min(cum, 1.0 - overflow_mass);
  }
};

namespace detail {

inline constexpr std::size_t kRebinThresholdBins = 2'000'000;
inline constexpr std::size_t kMaxBins = 100'000'000;

/// Merge groups of `factor` adjacent bins. Conserves mass exactly (plain
/// sums of the grouped bins); bin centers move by at most half the new width.
inline Histogram rebin(const Histogram& h, std::size_t factor) {
  if (factor <= 1) return h;
  Histogram out;
  out.bin_width = h.bin_width * static_cast<double>(factor);
  out.origin = h.origin;
  out.overflow_mass = h.overflow_mass;
  out.mass.assign((h.mass.size() + factor - 1) / factor, 0.0);
  for (std::size_t i = 0; i < h.mass.size(); ++i) {
    out.mass[i / factor] += h.mass[i];
  }
  return out;
}

/// Rescale the finite masses so they sum to `target` exactly, absorbing the
/// accumulation error of long convolution sums.
inline void normalize_finite_mass(Histogram& h, double target) {
  double s = 0.0, c = 0.0;
  for (double v : h.mass) {
    const double y = v - c;
    const double t = s + y;
    c = (t - s) - y;
    s = t;
  }
  if (s > 0.0 && target > 0.0) {
    const double scale = target / s;
    for (double& v : h.mass) v *= scale;
  }
}

inline Histogram convolve_pair(const Histogram& a, const Histogram& b,
                               std::size_t bin_cap) {
  Histogram x = a, y = b;
  // Harmonize widths: widths only ever differ by powers of two here.
  while (x.bin_width < y.bin_width * 0.999) x = rebin(x, 2);
  while (y.bin_width < x.bin_width * 0.999) y = rebin(y, 2);
  // Keep the output under the working cap; coarsening by two preserves the
  // power-of-two width family.
  while (x.mass.size() + y.mass.size() > bin_cap + 1 &&
         (x.mass.size() > 1 || y.mass.size() > 1)) {
    x = rebin(x, 2);
    y = rebin(y, 2);
  }
  Histogram out;
  out.bin_width = x.bin_width;
  out.origin = x.origin + y.origin;
  const double fx = 1.0 - x.overflow_mass;
  const double fy = 1.0 - y.overflow_mass;
  out.overflow_mass = 1.0 - fx * fy;
  if (x.mass.empty() || y.mass.empty()) {
    out.overflow_mass = 1.0;  // a sum with an a.s.-infinite term is infinite
    return out;
  }
  out.mass.assign(x.mass.size() + y.mass.size() - 1, 0.0);
  for (std::size_t i = 0; i < x.mass.size(); ++i) {
    const double mi = x.mass[i];
    if (mi == 0.0) continue;
    for (std::size_t j = 0; j < y.mass.size(); ++j) {
      out.mass[i + j] += mi * y.mass[j];
    }
  }
  normalize_finite_mass(out, fx * fy);
  return out;
}

}  // namespace detail

/// Distribution of the sum of K i.i.d. copies of h, by binary exponentiation
/// of the discrete convolution (ceil(log2 K) squarings). The overflow mass
/// composes as 1 - (1 - overflow)^K; output bins may be coarsened (mass-
/// conserving re-binning) to stay under `bin_cap` working bins.
inline Histogram self_convolve(const Histogram& h, std::int64_t k,
                               std::size_t bin_cap = 1u << 14) {
  if (k < 1) throw std::invalid_argument("self_convolve requires K >= 1");
  Histogram result;
  Histogram base = h;
  bool have_result = false;
  std::int64_t rem = k;
  while (rem > 0) {
    if (rem & 1) {
      result = have_result ? detail::convolve_pair(result, base, bin_cap) : base;
      have_result = true;
    }
    rem >>= 1;
    if (rem > 0) base = detail::convolve_pair(base, base, bin_cap);
  }
  return result;
}

/// Samples one method round and returns its duration (may be +inf).
using OneRoundSampler = std::function<ExtendedTime(RngStream&)>;

/// Empirical one-round time distribution from `draws` independent rounds.
/// bin_width = 0 picks (95th percentile of finite samples)/2000, coarsened if
/// the range would need more than the re-bin threshold of bins; explicit
/// widths needing more than 1e8 bins are rejected.
inline Histogram round_time_histogram(const ClusterModel&,
                                      const OneRoundSampler& sampler,
                                      std::int64_t draws,
                                      double bin_width = 0.0,
                                      std::uint64_t seed = 0) {
  if (draws < 1000) {
    throw std::invalid_argument("round_time_histogram needs draws >= 1000");
  }
  RngStream root(seed);
  std::vector<double> finite;
  finite.reserve(static_cast<std::size_t>(draws));
  std::int64_t infinite = 0;
  for (std::int64_t i = 0; i < draws; ++i) {
    RngStream s = root.child(static_cast<std::uint64_t>(i));
    const ExtendedTime t = sampler(s);
    if (is_finite_time(t)) {
      finite.push_back(t);
    } else {
      ++infinite;
    }
  }
  Histogram h;
  h.overflow_mass = static_cast<double>(infinite) / static_cast<double>(draws);
  if (finite.empty()) {
    h.bin_width = bin_width > 0.0 ? bin_width : 1.0;
    return h;
  }
  const double max_v = *std::max_element(finite.begin(), finite.end());
  if (bin_width <= 0.0) {
    std::vector<double> tmp = finite;
    const std::size_t idx = static_cast<std::size_t>(0.95 * (tmp.size() - 1));
    std::nth_element(tmp.begin(), tmp.begin() + static_cast<std::ptrdiff_t>(idx),
                     tmp.end());
    const double p95 = tmp[idx];
    bin_width = p95 > 0.0 ? p95 / 2000.0 : (max_v > 0.0 ? max_v / 2000.0 : 1.0);
    const double need = max_v / bin_width;
    if (need > static_cast<double>(detail::kRebinThresholdBins)) {
      bin_width = max_v / static_cast<double>(detail::kRebinThresholdBins);
    }
  }
  const double need = max_v / bin_width + 2.0;
  if (need > static_cast<double>(detail::kMaxBins)) {
    throw std::invalid_argument(
        "round_time_histogram: requested bin width implies more than 1e8 bins");
  }
  h.bin_width = bin_width;
  h.mass.assign(static_cast<std::size_t>(max_v / bin_width) + 1, 0.0);
  const double w = 1.0 / static_cast<double>(draws);
  for (double v : finite) {
    std::size_t idx = static_cast<std::size_t>(v / bin_width);
    idx = std::min(idx, h.mass.size() - 1);
    h.mass[idx] += w;
  }
  return h;
}

// ---------------------------------------------------------------------------
// One-round samplers per method.
// ---------------------------------------------------------------------------

/// Realized event-driven Rennala round from a cold start: every worker begins
/// a fresh computation at time 0 and restarts greedily on completion; the
/// round ends at the S-th finite arrival (+inf if the cluster freezes first).
inline OneRoundSampler rennala_round_sampler(const ClusterModel& cluster,
                                             std::int64_t s_batch) {
  if (s_batch < 1) throw std::invalid_argument("S must be >= 1");
  return [&cluster, s_batch](RngStream& rng) -> ExtendedTime {
    using Entry = std::pair<double, int>;
    std::priority_queue<Entry, std::vector<Entry>, std::greater<Entry>> q;
    std::vector<RngStream> streams;
    streams.reserve(cluster.workers.size());
    for (std::size_t i = 0; i < cluster.workers.size(); ++i) {
      streams.push_back(rng.child(i + 1));
      const auto& w = cluster.workers[i];
      const ExtendedTime eta = w.delay.sample(streams.back());
      q.emplace(w.tau + eta, static_cast<int>(i));
    }
    std::int64_t collected = 0;
    while (!q.empty() && is_finite_time(q.top().first)) {
      const auto [t, i] = q.top();
      q.pop();
      if (++collected == s_batch) return t;
      const auto& w = cluster.workers[static_cast<std::size_t>(i)];
      const ExtendedTime eta = w.delay.sample(streams[static_cast<std::size_t>(i)]);
      q.emplace(t + w.tau + eta, i);
    }
    return kInfiniteTime;
  };
}

/// MindFlayer round: max over workers (with B_i > 0) of their summed clipped
/// trial durations; always finite for finite clip times.
inline OneRoundSampler mindflayer_round_sampler(const ClusterModel& cluster,
                                                std::vector<double> t,
                                                std::vector<std::int64_t> b) {
  if (t.size() != cluster.workers.size() || b.size() != cluster.workers.size()) {
    throw std::invalid_argument("clip/trial vectors must match the cluster");
  }
  return [&cluster, t = std::move(t), b = std::move(b)](RngStream& rng)
             -> ExtendedTime {
    ExtendedTime round = 0.0;
    for (std::size_t i = 0; i < cluster.workers.size(); ++i) {
      if (b[i] == 0) continue;
      const auto& w = cluster.workers[i];
      RngStream ws = rng.child(i + 1);
      double elapsed = 0.0;
      for (std::int64_t j = 0; j < b[i]; ++j) {
        const ExtendedTime eta = w.delay.sample(ws);
        elapsed += trial_duration(w.tau, t[i], eta).duration;
      }
      round = std::max(round, elapsed);
    }
    return round;
  };
}

/// Minibatch round: max_i (tau_i + eta_i).
inline OneRoundSampler minibatch_round_sampler(const ClusterModel& cluster) {
  return [&cluster](RngStream& rng) -> ExtendedTime {
    ExtendedTime round = 0.0;
    for (std::size_t i = 0; i < cluster.workers.size(); ++i) {
      const auto& w = cluster.workers[i];
      RngStream ws = rng.child(i + 1);
      round = std::max(round, w.tau + w.delay.sample(ws));
    }
    return round;
  };
}

}  // namespace mindflayer
