#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

#include "mindflayer/histogram.hpp"
#include "mindflayer/planner.hpp"
#include "mindflayer/timemodel.hpp"

namespace mindflayer {

/// Problem-side constants every time-complexity formula consumes.
struct TheoryConstants {
  double sigma_sq = 0.0;
  double eps = 0.0;
  double delta = 0.0;  // f(x0) - f_inf
  double l_smooth = 0.0;
};

// ---------------------------------------------------------------------------
// Rennala's distributional time complexity: tuned S, K-fold self-convolution.
// ---------------------------------------------------------------------------

struct RennalaTimeLaw {
  std::int64_t s_batch = 1;
  std::int64_t iters = 0;
  Histogram total_time;        // K-fold self-convolution of the round law
  double round_lb_mean = 0.0;  // MC estimate of tau_min + E[min_i eta_i]
};

/// Tunes S over a power-of-two grid by minimizing the median of the convolved
/// total-time law, then returns the law for the winning S. The reference
/// lower-bound column evaluates E[T_B] >= tau_min + E[min_i eta_i] by direct
/// Monte Carlo over the same number of draws.
inline RennalaTimeLaw rennala_time_law(const ClusterModel& cluster,
                                       const TheoryConstants& c,
                                       std::int64_t draws,
                                       const std::vector<std::int64_t>& s_grid,
                                       std::uint64_t seed = 0) {
  if (s_grid.empty()) throw std::invalid_argument("S grid must be nonempty");
  RennalaTimeLaw best;
  ExtendedTime best_median = kInfiniteTime;
  bool have = false;
  for (std::int64_t s : s_grid) {
    const std::int64_t k = rennala_iters(c.delta, c.l_smooth, c.sigma_sq, c.eps, s);
    const auto sampler = rennala_round_sampler(cluster, s);
    Histogram round = round_time_histogram(cluster, sampler, draws, 0.0, seed);
    Histogram total = self_convolve(round, k);
    const ExtendedTime med = total.overflow_mass >= 0.5
                                 ? kInfiniteTime
                                 : total.quantile(0.5);
    if (!have || med < best_median) {
      have = true;
      best_median = med;
      best.s_batch = s;
      best.iters = k;
      best.total_time = std::move(total);
    }
  }
  // tau_min + E[min_i eta_i], +inf-aware (an infinite draw keeps the mean
  // infinite only if the minimum itself is infinite).
  double tau_min = kInfiniteTime;
  for (const auto& w : cluster.workers) tau_min = std::min(tau_min, w.tau);
  RngStream root(seed ^ 0x9e3779b97f4a7c15ULL);
  double acc = 0.0;
  for (std::int64_t i = 0; i < draws; ++i) {
    RngStream s = root.child(static_cast<std::uint64_t>(i));
    ExtendedTime m = kInfiniteTime;
    for (const auto& w : cluster.workers) m = std::min(m, w.delay.sample(s));
    acc += m;
  }
  best.round_lb_mean = tau_min + acc / static_cast<double>(draws);
  return best;
}

// ---------------------------------------------------------------------------
// Fig. 3-style comparison table over a distribution-parameter grid.
// ---------------------------------------------------------------------------

struct MethodComparisonRow {
  double param = 0.0;
  double mf_bound_median = kInfiniteTime;   // planner bound, median clips
  double mf_bound_optimized = kInfiniteTime;
  std::int64_t rennala_s = 0;
  std::int64_t rennala_k = 0;
  double rennala_q05 = kInfiniteTime;
  double rennala_q50 = kInfiniteTime;
  double rennala_q95 = kInfiniteTime;
  double rennala_round_lb_mean = kInfiniteTime;
  double ratio_median_clip = kInfiniteTime;     // q50 / mf_bound_median
  double ratio_optimized_clip = kInfiniteTime;  // q50 / mf_bound_optimized
};

inline std::vector<std::int64_t> default_s_grid() {
  return {1, 2, 4, 8, 16, 32, 64};
}

inline std::vector<double> default_quantile_grid() {
  std::vector<double> g;
  for (int i = 1; i <= 19; ++i) g.push_back(0.05 * i);
  return g;
}

/// For each grid value: MindFlayer's theoretical budget under both clip-time
/// strategies, Rennala's convolved time quantiles with tuned S, and their
/// ratios. A median-clip entry is +inf when the median rule is inapplicable
/// (some worker has an infinite median delay).
inline std::vector<MethodComparisonRow> compare_methods(
    const std::function<ClusterModel(double)>& cluster_at,
    const std::vector<double>& param_grid, const TheoryConstants& c,
    std::int64_t draws, std::uint64_t seed = 0,
    const std::vector<std::int64_t>& s_grid = default_s_grid(),
    const std::vector<double>& quantile_grid = default_quantile_grid()) {
  if (param_grid.empty()) {
    throw std::invalid_argument("parameter grid must be nonempty");
  }
  std::vector<MethodComparisonRow> rows;
  rows.reserve(param_grid.size());
  for (double param : param_grid) {
    const ClusterModel cluster = cluster_at(param);
    MethodComparisonRow row;
    row.param = param;
    try {
      const auto t_med = choose_clip_times_median(cluster);
      row.mf_bound_median =
          mindflayer_plan(cluster, t_med, c.sigma_sq, c.eps, c.delta, c.l_smooth)
              .time_bound;
    } catch (const std::invalid_argument&) {
      // infinite median delay: median rule inapplicable, leave +inf
    }
    const auto opt =
        choose_clip_times_optimize(cluster, c.sigma_sq, c.eps, quantile_grid);
    row.mf_bound_optimized =
        mindflayer_plan(cluster, opt.t, c.sigma_sq, c.eps, c.delta, c.l_smooth)
            .time_bound;
    const RennalaTimeLaw law = rennala_time_law(cluster, c, draws, s_grid, seed);
    row.rennala_s = law.s_batch;
    row.rennala_k = law.iters;
    const auto q = [&](double p) -> double {
      return law.total_time.overflow_mass >= 1.0 - p
                 ? kInfiniteTime
                 : law.total_time.quantile(p);
    };
    row.rennala_q05 = q(0.05);
    row.rennala_q50 = q(0.50);
    row.rennala_q95 = q(0.95);
    row.rennala_round_lb_mean = law.round_lb_mean;
    row.ratio_median_clip = row.rennala_q50 / row.mf_bound_median;
    row.ratio_optimized_clip = row.rennala_q50 / row.mf_bound_optimized;
    rows.push_back(row);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Fig. 2-right: single-device time-complexity ratio curves.
// ---------------------------------------------------------------------------

struct SingleDeviceRatioRow {
  double param = 0.0;
  double prop2_bound = 0.0;     // guaranteed ratio at t = median
  double ratio_median = 0.0;    // T_Rennala / bound(median)
  double ratio_optimized = 0.0; // T_Rennala / bound(t*)
  double t_median = 0.0;
  double t_optimized = 0.0;
};

namespace detail {

/// argmin over t >= 0 of (tau + t)/F(t): quantile-grid scan plus golden-
/// section refinement between the bracketing grid points; step-CDF laws use
/// their jump points directly.
inline double optimize_single_clip(double tau, const DelayDistribution& dist) {
  if (!dist.has_smooth_cdf()) {
    double best_t = dist.cdf_jump_points().front();
    double best_v = kInfiniteTime;
    for (double t : dist.cdf_jump_points()) {
      const double p = dist.cdf(t);
      const double v = p > 0.0 ? (tau + t) / p : kInfiniteTime;
      if (v < best_v) {
        best_v = v;
        best_t = t;
      }
    }
    return best_t;
  }
  auto value = [&](double t) {
    const double p = dist.cdf(t);
    return p > 0.0 ? (tau + t) / p : kInfiniteTime;
  };
  double best_t = dist.median(), best_v = value(best_t);
  double lo = best_t, hi = best_t;
  for (int i = 1; i <= 99; ++i) {
    const double t = dist.quantile(0.01 * i);
    const double v = value(t);
    if (v < best_v) {
      best_v = v;
      best_t = t;
      lo = dist.quantile(std::max(0.005, 0.01 * (i - 1)));
      hi = dist.quantile(std::min(0.995, 0.01 * (i + 1)));
    }
  }
  constexpr double kInvPhi = 0.6180339887498949;
  double a = lo, b = hi;
  double c1 = b - kInvPhi * (b - a), c2 = a + kInvPhi * (b - a);
  double f1 = value(c1), f2 = value(c2);
  for (int it = 0; it < 120 && (b - a) > 1e-12 * (1.0 + b); ++it) {
    if (f1 < f2) {
      b = c2; c2 = c1; f2 = f1;
      c1 = b - kInvPhi * (b - a);
      f1 = value(c1);
    } else {
      a = c1; c1 = c2; f1 = f2;
      c2 = a + kInvPhi * (b - a);
      f2 = value(c2);
    }
  }
  const double t_gs = 0.5 * (a + b);
  return value(t_gs) < best_v ? t_gs : best_t;
}

}  // namespace detail

/// Evaluates the Rennala/MindFlayer single-device ratio over a family of
/// delay laws, at the median clip time and at the optimized clip time.
inline std::vector<SingleDeviceRatioRow> ratio_curve_single_device(
    double tau, const std::function<DelayDistribution(double)>& dist_at,
    const std::vector<double>& param_grid, const TheoryConstants& c,
    std::int64_t b = 1) {
  std::vector<SingleDeviceRatioRow> rows;
  rows.reserve(param_grid.size());
  for (double param : param_grid) {
    const DelayDistribution dist = dist_at(param);
    SingleDeviceRatioRow row;
    row.param = param;
    row.prop2_bound = prop2_ratio(tau, dist);
    row.t_median = dist.median();
    const auto med = single_device_times(tau, dist, row.t_median, c.sigma_sq,
                                         c.eps, c.delta, c.l_smooth, b);
    row.ratio_median = med.t_rennala / med.t_mindflayer_bound;
    row.t_optimized = detail::optimize_single_clip(tau, dist);
    const auto opt = single_device_times(tau, dist, row.t_optimized, c.sigma_sq,
                                         c.eps, c.delta, c.l_smooth, b);
    row.ratio_optimized = opt.t_rennala / opt.t_mindflayer_bound;
    rows.push_back(row);
  }
  return rows;
}

}  // namespace mindflayer
