#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "mindflayer/timemodel.hpp"

namespace mindflayer {

// ---------------------------------------------------------------------------
// Shared scalar formulas.
// ---------------------------------------------------------------------------

namespace detail {

inline void require_positive(double v, const char* name) {
  if (!(v > 0.0) || !std::isfinite(v)) {
    throw std::invalid_argument(std::string(name) + " must be positive");
  }
}

inline std::int64_t ceil_to_count(double v, const char* what) {
  if (!(v >= 0.0)) throw std::invalid_argument(std::string(what) + " negative");
  const double c = std::ceil(v);
  if (!(c < 9.0e18)) {
    throw std::overflow_error(std::string(what) +
                              " exceeds representable iteration counts");
  }
  return static_cast<std::int64_t>(c);
}

}  // namespace detail

/// K = ceil( max{1, sigma^2/(eps B)} * 8 L Delta / eps ).
inline std::int64_t mindflayer_iters(double delta, double l_smooth,
                                     double sigma_sq, double eps,
                                     double b_expected) {
  detail::require_positive(delta, "delta");
  detail::require_positive(l_smooth, "L");
  detail::require_positive(eps, "eps");
  detail::require_positive(b_expected, "B_expected");
  if (!(sigma_sq >= 0.0)) throw std::invalid_argument("sigma_sq must be >= 0");
  const double noise_factor = std::max(1.0, sigma_sq / (eps * b_expected));
  return detail::ceil_to_count(noise_factor * 8.0 * l_smooth * delta / eps,
                               "iteration count");
}

/// gamma = (1/2L) * min{1, eps B / sigma^2}; sigma^2 = 0 selects the 1 branch.
inline double mindflayer_gamma(double l_smooth, double eps, double sigma_sq,
                               double b_expected) {
  detail::require_positive(l_smooth, "L");
  detail::require_positive(eps, "eps");
  detail::require_positive(b_expected, "B_expected");
  if (!(sigma_sq >= 0.0)) throw std::invalid_argument("sigma_sq must be >= 0");
  const double branch =
      sigma_sq == 0.0 ? 1.0 : std::min(1.0, eps * b_expected / sigma_sq);
  return branch / (2.0 * l_smooth);
}

/// Identical formula with a deterministic batch size S.
inline std::int64_t rennala_iters(double delta, double l_smooth, double sigma_sq,
                                  double eps, std::int64_t s_batch) {
  if (s_batch < 1) throw std::invalid_argument("S must be >= 1");
  return mindflayer_iters(delta, l_smooth, sigma_sq, eps,
                          static_cast<double>(s_batch));
}

inline double rennala_gamma(double l_smooth, double eps, double sigma_sq,
                            std::int64_t s_batch) {
  if (s_batch < 1) throw std::invalid_argument("S must be >= 1");
  return mindflayer_gamma(l_smooth, eps, sigma_sq,
                          static_cast<double>(s_batch));
}

/// Classical SGD under the (alpha, beta, zeta) second-moment model:
/// K = ceil( (12 Delta L / eps) * max{beta, 12 Delta alpha / eps, 2 zeta / eps} ).
inline std::int64_t classical_sgd_iters(double delta, double l_smooth,
                                        double eps, double alpha, double beta,
                                        double zeta) {
  detail::require_positive(delta, "delta");
  detail::require_positive(l_smooth, "L");
  detail::require_positive(eps, "eps");
  const double m =
      std::max({beta, 12.0 * delta * alpha / eps, 2.0 * zeta / eps});
  return detail::ceil_to_count(12.0 * delta * l_smooth / eps * m,
                               "iteration count");
}

/// gamma = min{ 1/sqrt(L alpha K), 1/(L beta), eps/(2 L zeta) }; zero alpha or
/// zeta sends the corresponding branch to +inf.
inline double classical_sgd_gamma(double l_smooth, double eps, double alpha,
                                  double beta, double zeta, std::int64_t iters) {
  detail::require_positive(l_smooth, "L");
  detail::require_positive(eps, "eps");
  const double g1 = alpha > 0.0
                        ? 1.0 / std::sqrt(l_smooth * alpha *
                                          static_cast<double>(iters))
                        : kInfiniteTime;
  const double g2 = 1.0 / (l_smooth * beta);
  const double g3 = zeta > 0.0 ? eps / (2.0 * l_smooth * zeta) : kInfiniteTime;
  return std::min({g1, g2, g3});
}

// ---------------------------------------------------------------------------
// MindFlayer plan: clip times -> trial counts, stepsize, iterations, budget.
// ---------------------------------------------------------------------------

struct MindFlayerPlan {
  std::vector<double> t;       // clip times, original worker order
  std::vector<std::int64_t> B; // trial counts, original worker order
  std::vector<double> p;       // p_i = F_i(t_i)
  double B_expected = 0.0;     // sum p_i B_i
  double gamma = 0.0;
  std::int64_t K = 0;
  int m_star = 0;              // number of active workers after sorting
  double time_bound = 0.0;     // t(m*) * 8 Delta L / eps
};

namespace detail {

struct SortedWorker {
  int index;       // original position
  double cost;     // tau_i + t_i
  double p;        // F_i(t_i)
};

inline std::vector<SortedWorker> sort_by_cost(const ClusterModel& cluster,
                                              const std::vector<double>& t) {
  const int n = cluster.size();
  if (static_cast<int>(t.size()) != n) {
    throw std::invalid_argument("clip-time vector length differs from n");
  }
  std::vector<SortedWorker> sw(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const auto& w = cluster.workers[static_cast<std::size_t>(i)];
    const double ti = t[static_cast<std::size_t>(i)];
    if (!(ti >= 0.0)) throw std::invalid_argument("clip times must be >= 0");
    sw[static_cast<std::size_t>(i)] =
        SortedWorker{i, w.tau + ti, w.delay.cdf(ti)};
  }
  std::stable_sort(sw.begin(), sw.end(),
                   [](const SortedWorker& a, const SortedWorker& b) {
                     if (a.cost != b.cost) return a.cost < b.cost;
                     return a.index < b.index;
                   });
  return sw;
}

/// t(m) over m = 1..n for workers already sorted by tau_i + t_i.
inline std::vector<double> collection_time_curve(
    const std::vector<SortedWorker>& sw, double s_target) {
  std::vector<double> tm(sw.size());
  double rate = 0.0, psum = 0.0;
  for (std::size_t m = 0; m < sw.size(); ++m) {
    rate += sw[m].p / sw[m].cost;
    psum += sw[m].p;
    tm[m] = rate > 0.0 ? (s_target + psum) / rate : kInfiniteTime;
  }
  return tm;
}

}  // namespace detail

/// S = max{1, sigma^2 / eps}, the expected-batch target of Theorem 3.
inline double batch_target(double sigma_sq, double eps) {
  return std::max(1.0, sigma_sq / eps);
}

/// Builds the full Theorem-3 plan for the given clip times: sorts workers by
/// tau_i + t_i (stable, ties by index), minimizes the collection-time curve
/// t(m), takes the smallest minimizer m*, and sets B_i = ceil(t(m*)/(tau_i+t_i) - 1)
/// for the m* cheapest workers. Throws when every success probability is zero.
inline MindFlayerPlan mindflayer_plan(const ClusterModel& cluster,
                                      const std::vector<double>& t,
                                      double sigma_sq, double eps, double delta,
                                      double l_smooth) {
  const int n = cluster.size();
  auto sw = detail::sort_by_cost(cluster, t);
  bool any_success = false;
  for (const auto& w : sw) any_success |= w.p > 0.0;
  if (!any_success) {
    throw std::invalid_argument(
        "mindflayer_plan: every worker has success probability 0; no worker "
        "can ever succeed and the iteration count would be infinite");
  }
  const double s_target = batch_target(sigma_sq, eps);
  const auto tm = detail::collection_time_curve(sw, s_target);
  int m_star = 0;
  for (int m = 1; m < n; ++m) {
    if (tm[static_cast<std::size_t>(m)] < tm[static_cast<std::size_t>(m_star)]) {
      m_star = m;
    }
  }
  const double t_opt = tm[static_cast<std::size_t>(m_star)];

  MindFlayerPlan plan;
  plan.t = t;
  plan.m_star = m_star + 1;
  plan.B.assign(static_cast<std::size_t>(n), 0);
  plan.p.assign(static_cast<std::size_t>(n), 0.0);
  double b_expected = 0.0;
  for (int r = 0; r < n; ++r) {
    const auto& w = sw[static_cast<std::size_t>(r)];
    plan.p[static_cast<std::size_t>(w.index)] = w.p;
    if (r < plan.m_star) {
      const double b = t_opt / w.cost - 1.0;
      const std::int64_t trials = detail::ceil_to_count(std::max(b, 0.0),
                                                        "trial count");
      plan.B[static_cast<std::size_t>(w.index)] = trials;
      b_expected += w.p * static_cast<double>(trials);
    }
  }
  plan.B_expected = b_expected;
  plan.gamma = mindflayer_gamma(l_smooth, eps, sigma_sq, b_expected);
  plan.K = mindflayer_iters(delta, l_smooth, sigma_sq, eps, b_expected);
  plan.time_bound = t_opt * 8.0 * delta * l_smooth / eps;
  return plan;
}

// ---------------------------------------------------------------------------
// Clip-time selection.
// ---------------------------------------------------------------------------

/// t_i = Med[eta_i]. Throws if any median is infinite (InfBernoulli with
/// q >= 1/2), directing the caller to the optimizer or an explicit quantile.
inline std::vector<double> choose_clip_times_median(const ClusterModel& cluster) {
  std::vector<double> t;
  t.reserve(cluster.workers.size());
  for (std::size_t i = 0; i < cluster.workers.size(); ++i) {
    const ExtendedTime med = cluster.workers[i].delay.median();
    if (!is_finite_time(med)) {
      throw std::invalid_argument(
          "worker " + std::to_string(i) +
          " has an infinite median delay; use choose_clip_times_optimize or an "
          "explicit quantile level");
    }
    t.push_back(med);
  }
  return t;
}

struct ClipTimesResult {
  std::vector<double> t;
  int m = 0;       // minimizing prefix size
  double value = 0.0;  // minimized t(m)
};

namespace detail {

/// t(m) for arbitrary clip times (workers re-sorted per evaluation).
inline double clip_objective(const ClusterModel& cluster,
                             const std::vector<double>& t, int m,
                             double s_target) {
  auto sw = sort_by_cost(cluster, t);
  double rate = 0.0, psum = 0.0;
  for (int r = 0; r < m; ++r) {
    rate += sw[static_cast<std::size_t>(r)].p / sw[static_cast<std::size_t>(r)].cost;
    psum += sw[static_cast<std::size_t>(r)].p;
  }
  return rate > 0.0 ? (s_target + psum) / rate : kInfiniteTime;
}

/// Nelder–Mead over the free (smooth-CDF) coordinates, others pinned.
/// Negative coordinates are clamped to 0 inside the objective, so the best
/// vertex never beats its own clamped evaluation.
inline double nelder_mead(const std::function<double(const std::vector<double>&)>& f,
                          std::vector<double>& x, int max_evals = 400) {
  const std::size_t n = x.size();
  if (n == 0) return f(x);
  std::vector<std::vector<double>> simplex(n + 1, x);
  std::vector<double> fv(n + 1);
  for (std::size_t i = 0; i < n; ++i) {
    simplex[i + 1][i] += std::max(0.25 * std::abs(x[i]), 0.1);
  }
  for (std::size_t i = 0; i <= n; ++i) fv[i] = f(simplex[i]);
  int evals = static_cast<int>(n) + 1;
  std::vector<std::size_t> order(n + 1);
  while (evals < max_evals) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return fv[a] < fv[b]; });
    const std::size_t best = order[0], worst = order[n];
    const std::size_t second_worst = order[n - 1];
    if (std::abs(fv[worst] - fv[best]) <=
        1e-12 * (std::abs(fv[best]) + 1e-12)) {
      break;
    }
    std::vector<double> centroid(n, 0.0);
    for (std::size_t i = 0; i <= n; ++i) {
      if (i == worst) continue;
      for (std::size_t j = 0; j < n; ++j) centroid[j] += simplex[i][j] / n;
    }
    auto blend = [&](double coef) {
      std::vector<double> p(n);
      for (std::size_t j = 0; j < n; ++j) {
        p[j] = centroid[j] + coef * (centroid[j] - simplex[worst][j]);
      }
      return p;
    };
    auto reflected = blend(1.0);
    const double fr = f(reflected);
    ++evals;
    if (fr < fv[order[0]]) {
      auto expanded = blend(2.0);
      const double fe = f(expanded);
      ++evals;
      simplex[worst] = fe < fr ? expanded : reflected;
      fv[worst] = std::min(fe, fr);
    } else if (fr < fv[second_worst]) {
      simplex[worst] = reflected;
      fv[worst] = fr;
    } else {
      auto contracted = blend(-0.5);
      const double fc = f(contracted);
      ++evals;
      if (fc < fv[worst]) {
        simplex[worst] = contracted;
        fv[worst] = fc;
      } else {
        for (std::size_t i = 0; i <= n; ++i) {
          if (i == best) continue;
          for (std::size_t j = 0; j < n; ++j) {
            simplex[i][j] = 0.5 * (simplex[i][j] + simplex[best][j]);
          }
          fv[i] = f(simplex[i]);
          ++evals;
        }
      }
    }
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i <= n; ++i) {
    if (fv[i] < fv[best]) best = i;
  }
  x = simplex[best];
  return fv[best];
}

}  // namespace detail

/// Minimizes t(m) jointly over the prefix size m and the clip-time vector.
/// Smooth-CDF coordinates are optimized by a clamped Nelder–Mead multi-started
/// from the workers' quantile grid points; step-CDF coordinates (InfBernoulli,
/// Constant) are pinned to their CDF jump points. The result never exceeds the
/// best evaluated grid candidate.
inline ClipTimesResult choose_clip_times_optimize(
    const ClusterModel& cluster, double sigma_sq, double eps,
    const std::vector<double>& grid_quantiles) {
  if (grid_quantiles.empty()) {
    throw std::invalid_argument("grid_quantiles must be nonempty");
  }
  for (double g : grid_quantiles) {
    if (!(g > 0.0 && g < 1.0)) {
      throw std::invalid_argument("grid quantiles must lie in (0,1)");
    }
  }
  const int n = cluster.size();
  const double s_target = batch_target(sigma_sq, eps);

  std::vector<int> free_coords;
  std::vector<double> pinned(static_cast<std::size_t>(n), 0.0);
  for (int i = 0; i < n; ++i) {
    const auto& w = cluster.workers[static_cast<std::size_t>(i)];
    if (w.delay.has_smooth_cdf()) {
      free_coords.push_back(i);
    } else {
      pinned[static_cast<std::size_t>(i)] = w.delay.cdf_jump_points().front();
    }
  }

  ClipTimesResult best;
  best.value = kInfiniteTime;
  for (int m = 1; m <= n; ++m) {
    auto objective = [&](const std::vector<double>& free_t) {
      std::vector<double> t = pinned;
      for (std::size_t j = 0; j < free_coords.size(); ++j) {
        t[static_cast<std::size_t>(free_coords[j])] = std::max(free_t[j], 0.0);
      }
      return detail::clip_objective(cluster, t, m, s_target);
    };
    for (double g : grid_quantiles) {
      std::vector<double> start(free_coords.size());
      for (std::size_t j = 0; j < free_coords.size(); ++j) {
        const auto& w =
            cluster.workers[static_cast<std::size_t>(free_coords[j])];
        start[j] = w.delay.quantile(g);
      }
      std::vector<double> x = start;
      double v = detail::nelder_mead(objective, x);
      v = std::min(v, objective(start));  // descent never loses to its start
      if (v < best.value) {
        best.value = v;
        best.m = m;
        best.t = pinned;
        for (std::size_t j = 0; j < free_coords.size(); ++j) {
          best.t[static_cast<std::size_t>(free_coords[j])] =
              std::max(x[j], 0.0);
        }
      }
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Single-device comparison (Strategies 1-2).
// ---------------------------------------------------------------------------

struct SingleDeviceTimes {
  ExtendedTime t_rennala;        // K * B * (tau + E[eta]); +inf if mean diverges
  double t_mindflayer_bound;     // (K/p) * B * (tau + t_clip); +inf when p = 0
};

inline SingleDeviceTimes single_device_times(double tau,
                                             const DelayDistribution& dist,
                                             double t_clip, double sigma_sq,
                                             double eps, double delta,
                                             double l_smooth, std::int64_t b) {
  if (b < 1) throw std::invalid_argument("B must be >= 1");
  detail::require_positive(tau, "tau");
  const auto k = static_cast<double>(
      rennala_iters(delta, l_smooth, sigma_sq, eps, b));
  SingleDeviceTimes out;
  out.t_rennala = k * static_cast<double>(b) * (tau + dist.mean());
  const double p = dist.cdf(t_clip);
  out.t_mindflayer_bound =
      p > 0.0 ? k / p * static_cast<double>(b) * (tau + t_clip) : kInfiniteTime;
  return out;
}

/// The guaranteed ratio T_Rennala / T_MindFlayer(Med[eta]) >= alpha:
/// (tau + Med + skewness_gap) / (2 (tau + Med)). +inf propagates from
/// infinite-mean delays.
inline ExtendedTime prop2_ratio(double tau, const DelayDistribution& dist) {
  detail::require_positive(tau, "tau");
  const ExtendedTime med = dist.median();
  if (!is_finite_time(med)) {
    throw std::invalid_argument("prop2_ratio requires a finite median");
  }
  const ExtendedTime gap = dist.skewness_gap();
  return (tau + med + gap) / (2.0 * (tau + med));
}

// ---------------------------------------------------------------------------
// Vecna plan (heterogeneous regime).
// ---------------------------------------------------------------------------

struct VecnaPlan {
  std::vector<double> t;
  std::vector<std::int64_t> B;  // >= 1 for every worker
  std::vector<double> p;
  double alpha = 0.0;
  double zeta = 0.0;
  double beta = 1.0;
  double gamma = 0.0;
  std::int64_t K = 0;
  double T = 0.0;           // per-round time target
  double time_bound = 0.0;  // 2 T K
};

inline VecnaPlan vecna_plan(const ClusterModel& cluster,
                            const std::vector<double>& t, double sigma_sq,
                            double eps, double delta, double l_smooth) {
  const int n = cluster.size();
  auto sw = detail::sort_by_cost(cluster, t);
  for (const auto& w : sw) {
    if (!(w.p > 0.0)) {
      throw std::invalid_argument(
          "vecna_plan: worker " + std::to_string(w.index) +
          " has success probability 0 at its clip time; every worker's data "
          "distribution is required");
    }
  }
  const double nd = static_cast<double>(n);
  const double max_cost = sw.back().cost;
  double mean_cost_over_p = 0.0, mean_fail_cost = 0.0;
  for (const auto& w : sw) {
    mean_cost_over_p += w.cost / w.p / nd;
    mean_fail_cost += (1.0 - w.p) / w.p * w.cost / nd;
  }
  const double round_target = max_cost +
                              mean_cost_over_p * sigma_sq / (nd * eps) +
                              mean_fail_cost * delta * l_smooth / (nd * eps);

  VecnaPlan plan;
  plan.t = t;
  plan.T = round_target;
  plan.B.assign(static_cast<std::size_t>(n), 0);
  plan.p.assign(static_cast<std::size_t>(n), 0.0);
  double alpha_sum = 0.0, zeta_sum = 0.0;
  for (const auto& w : sw) {
    const double b = round_target / w.cost;
    const std::int64_t trials = detail::ceil_to_count(b, "trial count");
    plan.B[static_cast<std::size_t>(w.index)] = trials;
    plan.p[static_cast<std::size_t>(w.index)] = w.p;
    alpha_sum += (1.0 - w.p) / (w.p * static_cast<double>(trials));
    zeta_sum += 1.0 / (w.p * static_cast<double>(trials));
  }
  plan.alpha = l_smooth / (nd * nd) * alpha_sum;
  plan.zeta = sigma_sq / (nd * nd) * zeta_sum;
  plan.beta = 1.0;
  plan.K = classical_sgd_iters(delta, l_smooth, eps, plan.alpha, plan.beta,
                               plan.zeta);
  plan.gamma = classical_sgd_gamma(l_smooth, eps, plan.alpha, plan.beta,
                                   plan.zeta, plan.K);
  plan.time_bound = 2.0 * round_target * static_cast<double>(plan.K);
  return plan;
}

// ---------------------------------------------------------------------------
// Synchronous-round baseline.
// ---------------------------------------------------------------------------

/// One Minibatch SGD round time: max_i (tau_i + eta_i); +inf propagates.
inline ExtendedTime minibatch_round_time(const ClusterModel& cluster,
                                         RngStream& rng) {
  ExtendedTime worst = 0.0;
  for (const auto& w : cluster.workers) {
    worst = std::max(worst, w.tau + w.delay.sample(rng));
  }
  return worst;
}

}  // namespace mindflayer
