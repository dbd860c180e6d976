#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <boost/math/distributions/cauchy.hpp>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

#include "mindflayer/rng.hpp"

namespace mindflayer {

/// Nonnegative seconds, with +inf as a first-class value. IEEE semantics give
/// exactly the arithmetic the time model needs: finite + inf = inf,
/// min(inf, t) = t, comparisons total.
using ExtendedTime = double;

inline constexpr ExtendedTime kInfiniteTime =
    std::numeric_limits<double>::infinity();

inline bool is_finite_time(ExtendedTime t) { return std::isfinite(t); }

// ---------------------------------------------------------------------------
// Delay distributions: the law of the extra per-gradient compute time eta.
// ---------------------------------------------------------------------------

struct Lognormal {
  double mu;  // location of log(eta)
  double s;   // scale of log(eta), > 0
};

struct LogCauchy {
  double scale;            // > 0
  double location = 0.0;   // of log(eta)
};

struct LogT {
  int df;        // degrees of freedom, >= 1
  double scale;  // > 0; eta = exp(scale * T_df)
};

/// eta = 0 with probability 1-q, +inf with probability q.
struct InfBernoulli {
  double q;  // in (0,1)
};

struct ConstantDelay {
  double c;  // >= 0
};

class DelayDistribution {
 public:
  using Variant =
      std::variant<Lognormal, LogCauchy, LogT, InfBernoulli, ConstantDelay>;

  explicit DelayDistribution(Variant v) : v_(std::move(v)) { validate(); }

  static DelayDistribution lognormal(double mu, double s) {
    return DelayDistribution(Lognormal{mu, s});
  }
  static DelayDistribution log_cauchy(double scale, double location = 0.0) {
    return DelayDistribution(LogCauchy{scale, location});
  }
  static DelayDistribution log_t(int df, double scale) {
    return DelayDistribution(LogT{df, scale});
  }
  static DelayDistribution inf_bernoulli(double q) {
    return DelayDistribution(InfBernoulli{q});
  }
  static DelayDistribution constant(double c) {
    return DelayDistribution(ConstantDelay{c});
  }

  const Variant& raw() const { return v_; }

  /// One i.i.d. draw of eta, by inverse-CDF transform of a uniform from `rng`.
  ExtendedTime sample(RngStream& rng) const {
    return std::visit(
        [&](const auto& d) -> ExtendedTime { return sample_impl(d, rng); },
        v_);
  }

  /// P(eta <= t) for t >= 0 (t = +inf returns the total finite mass, which is
  /// 1 - q for InfBernoulli and 1 otherwise).
  double cdf(ExtendedTime t) const {
    if (std::isnan(t) || t < 0.0) {
      throw std::invalid_argument("DelayDistribution::cdf: t must be >= 0");
    }
    return std::visit([&](const auto& d) { return cdf_impl(d, t); }, v_);
  }

  /// Generalized inverse CDF: the smallest t with cdf(t) >= p; +inf when p
  /// exceeds the total finite mass.
  ExtendedTime quantile(double p) const {
    if (!(p > 0.0 && p < 1.0)) {
      throw std::invalid_argument(
          "DelayDistribution::quantile: p must lie in (0,1)");
    }
    return std::visit(
        [&](const auto& d) -> ExtendedTime { return quantile_impl(d, p); },
        v_);
  }

  /// E[eta]; +inf when the mean diverges (LogCauchy, LogT, InfBernoulli).
  ExtendedTime mean() const {
    return std::visit([](const auto& d) -> ExtendedTime { return mean_impl(d); },
                      v_);
  }

  ExtendedTime median() const { return quantile(0.5); }

  /// E[eta] - Med[eta]; +inf whenever the mean diverges.
  ExtendedTime skewness_gap() const {
    const ExtendedTime m = mean();
    if (!is_finite_time(m)) return kInfiniteTime;
    return m - median();
  }

  /// True when the CDF is continuous and strictly increasing on its support
  /// (a box-constrained smooth minimizer is applicable to clip times).
  bool has_smooth_cdf() const {
    return !std::holds_alternative<InfBernoulli>(v_) &&
           !std::holds_alternative<ConstantDelay>(v_);
  }

  /// CDF jump points (the only useful clip-time candidates when the CDF is a
  /// step function).
  std::vector<double> cdf_jump_points() const {
    if (std::holds_alternative<InfBernoulli>(v_)) return {0.0};
    if (const auto* c = std::get_if<ConstantDelay>(&v_)) return {c->c};
    return {};
  }

  std::string kind() const {
    struct V {
      std::string operator()(const Lognormal&) const { return "lognormal"; }
      std::string operator()(const LogCauchy&) const { return "logcauchy"; }
      std::string operator()(const LogT&) const { return "logt"; }
      std::string operator()(const InfBernoulli&) const { return "infbernoulli"; }
      std::string operator()(const ConstantDelay&) const { return "constant"; }
    };
    return std::visit(V{}, v_);
  }

 private:
  void validate() const {
    struct V {
      void operator()(const Lognormal& d) const {
        if (!(d.s > 0.0) || !std::isfinite(d.mu) || !std::isfinite(d.s))
          throw std::invalid_argument("Lognormal requires finite mu and s > 0");
      }
      void operator()(const LogCauchy& d) const {
        if (!(d.scale > 0.0) || !std::isfinite(d.scale) ||
            !std::isfinite(d.location))
          throw std::invalid_argument("LogCauchy requires scale > 0");
      }
      void operator()(const LogT& d) const {
        if (d.df < 1 || !(d.scale > 0.0) || !std::isfinite(d.scale))
          throw std::invalid_argument("LogT requires df >= 1 and scale > 0");
      }
      void operator()(const InfBernoulli& d) const {
        if (!(d.q > 0.0 && d.q < 1.0))
          throw std::invalid_argument("InfBernoulli requires q in (0,1)");
      }
      void operator()(const ConstantDelay& d) const {
        if (!(d.c >= 0.0) || !std::isfinite(d.c))
          throw std::invalid_argument("Constant requires c >= 0");
      }
    };
    std::visit(V{}, v_);
  }

  // --- sampling -----------------------------------------------------------

  static ExtendedTime sample_impl(const Lognormal& d, RngStream& rng) {
    return quantile_impl(d, rng.next_open01());
  }
  static ExtendedTime sample_impl(const LogCauchy& d, RngStream& rng) {
    return quantile_impl(d, rng.next_open01());
  }
  static ExtendedTime sample_impl(const LogT& d, RngStream& rng) {
    return quantile_impl(d, rng.next_open01());
  }
  static ExtendedTime sample_impl(const InfBernoulli& d, RngStream& rng) {
    return rng.next_double() < 1.0 - d.q ? 0.0 : kInfiniteTime;
  }
  static ExtendedTime sample_impl(const ConstantDelay& d, RngStream&) {
    return d.c;
  }

  // --- cdf ------------------------------------------------------------------

  static double cdf_impl(const Lognormal& d, ExtendedTime t) {
    if (t == 0.0) return 0.0;
    if (!is_finite_time(t)) return 1.0;
    const boost::math::normal_distribution<double> n(d.mu, d.s);
    return boost::math::cdf(n, std::log(t));
  }
  static double cdf_impl(const LogCauchy& d, ExtendedTime t) {
    if (t == 0.0) return 0.0;
    if (!is_finite_time(t)) return 1.0;
    const boost::math::cauchy_distribution<double> c(d.location, d.scale);
    return boost::math::cdf(c, std::log(t));
  }
  static double cdf_impl(const LogT& d, ExtendedTime t) {
    if (t == 0.0) return 0.0;
    if (!is_finite_time(t)) return 1.0;
    const boost::math::students_t_distribution<double> st(d.df);
    return boost::math::cdf(st, std::log(t) / d.scale);
  }
  static double cdf_impl(const InfBernoulli& d, ExtendedTime) {
    return 1.0 - d.q;  // same value at every finite t, and in the t->inf limit
  }
  static double cdf_impl(const ConstantDelay& d, ExtendedTime t) {
    return t >= d.c ? 1.0 : 0.0;
  }

  // --- quantile -------------------------------------------------------------

  static ExtendedTime quantile_impl(const Lognormal& d, double p) {
    const boost::math::normal_distribution<double> n(0.0, 1.0);
    return std::exp(d.mu + d.s * boost::math::quantile(n, p));
  }
  static ExtendedTime quantile_impl(const LogCauchy& d, double p) {
    const boost::math::cauchy_distribution<double> c(d.location, d.scale);
    return std::exp(boost::math::quantile(c, p));
  }
  static ExtendedTime quantile_impl(const LogT& d, double p) {
    const boost::math::students_t_distribution<double> st(d.df);
    return std::exp(d.scale * boost::math::quantile(st, p));
  }
  static ExtendedTime quantile_impl(const InfBernoulli& d, double p) {
    return p <= 1.0 - d.q ? 0.0 : kInfiniteTime;
  }
  static ExtendedTime quantile_impl(const ConstantDelay& d, double) {
    return d.c;
  }

  // --- mean -------------------------------------------------------------

  static ExtendedTime mean_impl(const Lognormal& d) {
    return std::exp(d.mu + 0.5 * d.s * d.s);  // overflows to +inf for huge s
  }
  static ExtendedTime mean_impl(const LogCauchy&) { return kInfiniteTime; }
  static ExtendedTime mean_impl(const LogT&) { return kInfiniteTime; }
  static ExtendedTime mean_impl(const InfBernoulli&) { return kInfiniteTime; }
  static ExtendedTime mean_impl(const ConstantDelay& d) { return d.c; }

  Variant v_;
};

// ---------------------------------------------------------------------------
// Workers and clusters.
// ---------------------------------------------------------------------------

struct WorkerProfile {
  double tau;  // minimum compute time, > 0
  DelayDistribution delay;

  WorkerProfile(double tau_, DelayDistribution delay_)
      : tau(tau_), delay(std::move(delay_)) {
    if (!(tau > 0.0) || !std::isfinite(tau)) {
      throw std::invalid_argument("WorkerProfile requires tau > 0");
    }
  }
};

struct ClusterModel {
  std::vector<WorkerProfile> workers;

  explicit ClusterModel(std::vector<WorkerProfile> w) : workers(std::move(w)) {
    if (workers.empty()) {
      throw std::invalid_argument("ClusterModel requires at least one worker");
    }
  }

  int size() const { return static_cast<int>(workers.size()); }
};

/// The paper's canonical cluster rule tau_i = sqrt(i+1) for i = 1..n.
inline std::vector<double> tau_rule_sqrt(int n) {
  std::vector<double> tau(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) tau[static_cast<std::size_t>(i)] = std::sqrt(i + 2.0);
  return tau;
}

// ---------------------------------------------------------------------------
// Clipped-trial timing.
// ---------------------------------------------------------------------------

struct TrialOutcome {
  double duration;  // finite whenever t_clip is finite
  bool success;     // eta <= t_clip, ties succeed
};

/// Duration and outcome of one clipped gradient attempt: the trial runs for
/// tau + min(eta, t_clip) and yields a gradient iff eta <= t_clip.
inline TrialOutcome trial_duration(double tau, ExtendedTime t_clip,
                                   ExtendedTime eta) {
  if (!(tau > 0.0)) {
    throw std::invalid_argument("trial_duration requires tau > 0");
  }
  return TrialOutcome{tau + std::min(eta, t_clip), eta <= t_clip};
}

}  // namespace mindflayer
