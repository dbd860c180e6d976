#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <queue>
#include <span>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "mindflayer/planner.hpp"
#include "mindflayer/problems.hpp"
#include "mindflayer/timemodel.hpp"

namespace mindflayer {

class EngineError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TraceRow {
  std::int64_t k = 0;
  double time = 0.0;          // virtual seconds at the end of iteration k
  double grad_sq_norm = 0.0;  // ||grad f||^2 at the iterate reached
  double f_value = 0.0;
  std::int64_t gradients_used = 0;
  std::int64_t trials_attempted = 0;
  std::int64_t discarded_stale = 0;
};

enum class RunStatus { Converged, Stalled, BudgetExhausted };

inline const char* to_string(RunStatus s) {
  switch (s) {
    case RunStatus::Converged: return "converged";
    case RunStatus::Stalled: return "stalled";
    case RunStatus::BudgetExhausted: return "budget_exhausted";
  }
  return "unknown";
}

/// Which epsilon criterion ends a run. MeanTarget is the theorem criterion
/// (running mean of ||grad||^2 over visited iterates); FirstHit stops at the
/// first iterate below target (what time-to-eps plots use); BudgetOnly runs
/// until a budget.
enum class StopRule { MeanTarget, FirstHit, BudgetOnly };

struct RunControls {
  double eps_target = 0.0;  // 0 disables epsilon stopping
  double time_budget = kInfiniteTime;
  std::int64_t iter_budget = 100000;
  StopRule stop = StopRule::MeanTarget;
  bool record_trace = true;
};

struct RunRecord {
  std::vector<TraceRow> rows;
  RunStatus status = RunStatus::BudgetExhausted;
  std::int64_t iterations = 0;  // completed iterations
  double final_time = 0.0;
  double final_grad_sq = 0.0;
  double final_f = 0.0;
  double initial_grad_sq = 0.0;  // metrics at x^0
  double initial_f = 0.0;

  // First iterate x^j with ||grad f(x^j)||^2 <= eps.
  std::int64_t first_hit_iter = -1;
  double first_hit_time = kInfiniteTime;
  // Smallest K with (1/K) sum_{k<K} ||grad f(x^k)||^2 <= eps.
  std::int64_t avg_hit_iters = -1;
  double avg_hit_time = kInfiniteTime;

  std::int64_t total_gradients = 0;
  std::int64_t total_trials = 0;
  std::int64_t total_stale = 0;

  // ASGD only: staleness of applied gradients.
  double mean_delay = 0.0;
  std::int64_t max_delay = 0;

  bool converged() const { return status == RunStatus::Converged; }
};

namespace detail {

struct Metrics {
  double grad_sq = 0.0;
  double f = 0.0;
};

/// Shared per-run bookkeeping: metric evaluation, trace rows, epsilon
/// criteria, budgets. Engines drive it; it owns the RunRecord.
class RunTracker {
 public:
  RunTracker(const ProblemOracle& metric_oracle, const RunControls& ctl)
      : oracle_(metric_oracle), ctl_(ctl),
        scratch_(static_cast<std::size_t>(metric_oracle.dim)) {
    if (!(ctl.time_budget > 0.0) || ctl.iter_budget <= 0) {
      throw std::invalid_argument("budgets must be positive");
    }
  }

  Metrics evaluate(std::span<const double> x, std::int64_t k) {
    Metrics m;
    oracle_.grad(x, scratch_);
    m.grad_sq = squared_norm(scratch_);
    m.f = oracle_.value(x);
    if (!std::isfinite(m.grad_sq) || !std::isfinite(m.f)) {
      throw EngineError("non-finite iterate encountered at iteration " +
                        std::to_string(k));
    }
    return m;
  }

  /// Evaluate the starting point; returns true if it already meets the
  /// epsilon criterion (run converges with zero iterations).
  bool init(std::span<const double> x0) {
    if (static_cast<int>(x0.size()) != oracle_.dim) {
      throw EngineError("x0 dimension does not match the problem");
    }
    const Metrics m = evaluate(x0, -1);
    last_ = m;
    rec_.initial_grad_sq = m.grad_sq;
    rec_.initial_f = m.f;
    mean_sum_ = m.grad_sq;
    visited_ = 1;
    check_hits(0, 0.0, m.grad_sq);
    return stop_now();
  }

  /// Record a completed iteration k that reached `m` at virtual time `time`.
  /// Returns true when the run should stop as Converged.
  bool on_iteration(std::int64_t k, double time, const Metrics& m,
                    std::int64_t used, std::int64_t trials,
                    std::int64_t stale) {
    last_ = m;
    rec_.total_gradients += used;
    rec_.total_trials += trials;
    rec_.total_stale += stale;
    if (ctl_.record_trace) {
      rec_.rows.push_back(TraceRow{k, time, m.grad_sq, m.f, used, trials, stale});
    }
    completed_ = k + 1;
    last_time_ = time;
    // Mean criterion over starts x^0..x^k happens before x^{k+1} joins.
    mean_sum_ += m.grad_sq;
    visited_ += 1;
    check_hits(visited_ - 1, time, m.grad_sq);
    return stop_now();
  }

  bool over_time_budget(double t) const { return t > ctl_.time_budget; }
  bool over_iter_budget(std::int64_t k) const { return k >= ctl_.iter_budget; }

  RunRecord take(RunStatus status) {
    rec_.status = status;
    rec_.iterations = completed_;
    rec_.final_time = last_time_;
    rec_.final_grad_sq = last_.grad_sq;
    rec_.final_f = last_.f;
    return std::move(rec_);
  }

  /// As take(), but the run ended at a virtual time past the last completed
  /// iteration (stall or budget detected mid-collection).
  RunRecord take_at(RunStatus status, double current_time) {
    last_time_ = std::max(last_time_, current_time);
    return take(status);
  }

  RunRecord take_converged() { return take(RunStatus::Converged); }

 private:
  void check_hits(std::int64_t iterate, double time, double grad_sq) {
    if (ctl_.eps_target <= 0.0) return;
    if (rec_.first_hit_iter < 0 && grad_sq <= ctl_.eps_target) {
      rec_.first_hit_iter = iterate;
      rec_.first_hit_time = time;
    }
    if (rec_.avg_hit_iters < 0 &&
        mean_sum_ / static_cast<double>(visited_) <= ctl_.eps_target) {
      rec_.avg_hit_iters = visited_;
      rec_.avg_hit_time = time;
    }
  }

  bool stop_now() const {
    switch (ctl_.stop) {
      case StopRule::MeanTarget: return rec_.avg_hit_iters >= 0;
      case StopRule::FirstHit: return rec_.first_hit_iter >= 0;
      case StopRule::BudgetOnly: return false;
    }
    return false;
  }

  const ProblemOracle& oracle_;
  const RunControls& ctl_;
  std::vector<double> scratch_;
  RunRecord rec_;
  Metrics last_;
  double mean_sum_ = 0.0;
  std::int64_t visited_ = 0;
  std::int64_t completed_ = 0;
  double last_time_ = 0.0;
};

inline std::vector<double> make_x0(std::span<const double> x0, int dim) {
  if (x0.empty()) return std::vector<double>(static_cast<std::size_t>(dim), 0.0);
  return std::vector<double>(x0.begin(), x0.end());
}

}  // namespace detail

// ---------------------------------------------------------------------------
// MindFlayer SGD: round-synchronous clipped trials.
// ---------------------------------------------------------------------------

/// Runs Alg. MindFlayer. Each round, worker i performs its B_i clipped trials
/// sequentially; the round's virtual time is the maximum per-worker elapsed
/// time over workers with B_i > 0; the update normalizes the collected
/// gradients by the expected batch B = sum p_i B_i. Rounds with zero successes
/// apply a zero step but still consume time.
inline RunRecord run_mindflayer(const ProblemOracle& problem,
                                const ClusterModel& cluster,
                                const MindFlayerPlan& plan, double gamma,
                                const RunControls& ctl,
                                std::span<const double> x0,
                                std::uint64_t seed) {
  const int n = cluster.size();
  if (static_cast<int>(plan.B.size()) != n ||
      static_cast<int>(plan.t.size()) != n) {
    throw EngineError("plan size does not match the cluster");
  }
  if (!(plan.B_expected > 0.0)) {
    throw EngineError("plan has zero expected batch");
  }
  detail::RunTracker tracker(problem, ctl);
  std::vector<double> x = detail::make_x0(x0, problem.dim);
  if (tracker.init(x)) return tracker.take_converged();

  const std::size_t d = static_cast<std::size_t>(problem.dim);
  std::vector<double> gsum(d), gbuf(d);
  RngStream root(seed);
  double time = 0.0;
  const double step_scale = gamma / plan.B_expected;
  for (std::int64_t k = 0;; ++k) {
    if (tracker.over_iter_budget(k)) {
      return tracker.take(RunStatus::BudgetExhausted);
    }
    std::fill(gsum.begin(), gsum.end(), 0.0);
    double round_time = 0.0;
    std::int64_t used = 0, trials = 0;
    for (int i = 0; i < n; ++i) {
      const std::int64_t bi = plan.B[static_cast<std::size_t>(i)];
      if (bi == 0) continue;
      const auto& w = cluster.workers[static_cast<std::size_t>(i)];
      const double ti = plan.t[static_cast<std::size_t>(i)];
      RngStream round_stream =
          root.child(static_cast<std::uint64_t>(i) + 1)
              .child(static_cast<std::uint64_t>(k));
      double elapsed = 0.0;
      for (std::int64_t j = 0; j < bi; ++j) {
        RngStream ts = round_stream.child(static_cast<std::uint64_t>(j));
        const ExtendedTime eta = w.delay.sample(ts);
        const TrialOutcome outcome = trial_duration(w.tau, ti, eta);
        elapsed += outcome.duration;
        ++trials;
        if (outcome.success) {
          problem.stochastic_grad(x, gbuf, ts);
          for (std::size_t c = 0; c < d; ++c) gsum[c] += gbuf[c];
          ++used;
        }
      }
      round_time = std::max(round_time, elapsed);
    }
    if (!is_finite_time(round_time)) {
      return tracker.take(RunStatus::Stalled);
    }
    const double new_time = time + round_time;
    if (tracker.over_time_budget(new_time)) {
      return tracker.take(RunStatus::BudgetExhausted);
    }
    time = new_time;
    for (std::size_t c = 0; c < d; ++c) x[c] -= step_scale * gsum[c];
    const auto m = tracker.evaluate(x, k);
    if (tracker.on_iteration(k, time, m, used, trials, 0)) {
      return tracker.take_converged();
    }
  }
}

// ---------------------------------------------------------------------------
// Vecna SGD: clipped trials with per-worker objectives and normalization.
// ---------------------------------------------------------------------------

inline RunRecord run_vecna(const HeterogeneousProblem& problem,
                           const ClusterModel& cluster, const VecnaPlan& plan,
                           double gamma, const RunControls& ctl,
                           std::span<const double> x0, std::uint64_t seed) {
  const int n = cluster.size();
  if (static_cast<int>(problem.components.size()) != n) {
    throw EngineError("component count does not match the cluster");
  }
  if (static_cast<int>(plan.B.size()) != n ||
      static_cast<int>(plan.t.size()) != n) {
    throw EngineError("plan size does not match the cluster");
  }
  detail::RunTracker tracker(problem.aggregate, ctl);
  std::vector<double> x = detail::make_x0(x0, problem.aggregate.dim);
  if (tracker.init(x)) return tracker.take_converged();

  const std::size_t d = static_cast<std::size_t>(problem.aggregate.dim);
  std::vector<double> gtotal(d), gworker(d), gbuf(d);
  RngStream root(seed);
  double time = 0.0;
  for (std::int64_t k = 0;; ++k) {
    if (tracker.over_iter_budget(k)) {
      return tracker.take(RunStatus::BudgetExhausted);
    }
    std::fill(gtotal.begin(), gtotal.end(), 0.0);
    double round_time = 0.0;
    std::int64_t used = 0, trials = 0;
    for (int i = 0; i < n; ++i) {
      const std::int64_t bi = plan.B[static_cast<std::size_t>(i)];
      if (bi == 0) continue;
      const auto& w = cluster.workers[static_cast<std::size_t>(i)];
      const auto& fi = problem.components[static_cast<std::size_t>(i)];
      const double ti = plan.t[static_cast<std::size_t>(i)];
      RngStream round_stream =
          root.child(static_cast<std::uint64_t>(i) + 1)
              .child(static_cast<std::uint64_t>(k));
      std::fill(gworker.begin(), gworker.end(), 0.0);
      double elapsed = 0.0;
      for (std::int64_t j = 0; j < bi; ++j) {
        RngStream ts = round_stream.child(static_cast<std::uint64_t>(j));
        const ExtendedTime eta = w.delay.sample(ts);
        const TrialOutcome outcome = trial_duration(w.tau, ti, eta);
        elapsed += outcome.duration;
        ++trials;
        if (outcome.success) {
          fi.stochastic_grad(x, gbuf, ts);
          for (std::size_t c = 0; c < d; ++c) gworker[c] += gbuf[c];
          ++used;
        }
      }
      round_time = std::max(round_time, elapsed);
      const double scale =
          1.0 / (static_cast<double>(n) *
                 plan.p[static_cast<std::size_t>(i)] *
                 static_cast<double>(bi));
      for (std::size_t c = 0; c < d; ++c) gtotal[c] += scale * gworker[c];
    }
    if (!is_finite_time(round_time)) {
      return tracker.take(RunStatus::Stalled);
    }
    const double new_time = time + round_time;
    if (tracker.over_time_budget(new_time)) {
      return tracker.take(RunStatus::BudgetExhausted);
    }
    time = new_time;
    for (std::size_t c = 0; c < d; ++c) x[c] -= gamma * gtotal[c];
    const auto m = tracker.evaluate(x, k);
    if (tracker.on_iteration(k, time, m, used, trials, 0)) {
      return tracker.take_converged();
    }
  }
}

// ---------------------------------------------------------------------------
// Event-driven methods: Rennala SGD and ASGD.
// ---------------------------------------------------------------------------

namespace detail {

/// Completion events ordered by (time, worker index, insertion sequence);
/// +inf events are queued but never dispatched.
struct Event {
  double time;
  int worker;
  std::int64_t seq;
  bool operator>(const Event& o) const {
    return std::tie(time, worker, seq) > std::tie(o.time, o.worker, o.seq);
  }
};

using EventQueue =
    std::priority_queue<Event, std::vector<Event>, std::greater<Event>>;

/// Per-worker state for one in-flight gradient computation.
struct Assignment {
  std::vector<double> x;     // iterate the gradient is being computed at
  std::int64_t iteration;    // server iteration at assignment
  RngStream stream;          // eta drawn at assignment; noise at completion
  std::int64_t count = 0;    // completed computations so far
};

}  // namespace detail

/// Runs Rennala SGD: every worker always computes one (unclipped) gradient;
/// completions matching the current iteration join the batch, others are
/// discarded as stale; the worker is immediately reassigned at the current
/// point. The server steps when S gradients accumulate. Declares Stalled when
/// the batch is incomplete and no finite completion remains.
inline RunRecord run_rennala(const ProblemOracle& problem,
                             const ClusterModel& cluster, std::int64_t s_batch,
                             double gamma, const RunControls& ctl,
                             std::span<const double> x0, std::uint64_t seed) {
  if (s_batch < 1) throw EngineError("Rennala requires S >= 1");
  const int n = cluster.size();
  detail::RunTracker tracker(problem, ctl);
  std::vector<double> x = detail::make_x0(x0, problem.dim);
  if (tracker.init(x)) return tracker.take_converged();

  const std::size_t d = static_cast<std::size_t>(problem.dim);
  RngStream root(seed);
  detail::EventQueue queue;
  std::vector<detail::Assignment> workers(static_cast<std::size_t>(n));
  std::int64_t seq = 0;
  for (int i = 0; i < n; ++i) {
    auto& a = workers[static_cast<std::size_t>(i)];
    a.x = x;
    a.iteration = 0;
    a.stream = root.child(static_cast<std::uint64_t>(i) + 1).child(0);
    const auto& w = cluster.workers[static_cast<std::size_t>(i)];
    const ExtendedTime eta = w.delay.sample(a.stream);
    queue.push(detail::Event{w.tau + eta, i, seq++});
  }

  std::vector<double> batch(d, 0.0), gbuf(d);
  std::int64_t k = 0, collected = 0, used = 0, trials = 0, stale = 0;
  double time = 0.0;
  while (true) {
    if (queue.empty() || !is_finite_time(queue.top().time)) {
      return tracker.take_at(RunStatus::Stalled, time);
    }
    const detail::Event evt = queue.top();
    if (tracker.over_time_budget(evt.time)) {
      return tracker.take_at(RunStatus::BudgetExhausted, time);
    }
    queue.pop();
    time = evt.time;
    auto& a = workers[static_cast<std::size_t>(evt.worker)];
    ++trials;
    if (a.iteration == k) {
      problem.stochastic_grad(a.x, gbuf, a.stream);
      for (std::size_t c = 0; c < d; ++c) batch[c] += gbuf[c];
      ++collected;
      ++used;
    } else {
      ++stale;
    }
    if (collected == s_batch) {
      const double scale = gamma / static_cast<double>(s_batch);
      for (std::size_t c = 0; c < d; ++c) x[c] -= scale * batch[c];
      const auto m = tracker.evaluate(x, k);
      if (tracker.on_iteration(k, time, m, used, trials, stale)) {
        return tracker.take_converged();
      }
      ++k;
      if (tracker.over_iter_budget(k)) {
        return tracker.take(RunStatus::BudgetExhausted);
      }
      collected = 0;
      used = trials = stale = 0;
      std::fill(batch.begin(), batch.end(), 0.0);
    }
    // Reassign at the point that is current *after* any step, so the worker
    // that completed a batch starts on the fresh iterate; everything still
    // in flight is stale for the new iteration.
    a.x = x;
    a.iteration = k;
    a.count += 1;
    a.stream = root.child(static_cast<std::uint64_t>(evt.worker) + 1)
                   .child(static_cast<std::uint64_t>(a.count));
    const auto& w = cluster.workers[static_cast<std::size_t>(evt.worker)];
    const ExtendedTime eta = w.delay.sample(a.stream);
    queue.push(detail::Event{time + (w.tau + eta), evt.worker, seq++});
  }
}

/// Runs ASGD: every completion applies its (possibly stale) gradient to the
/// current iterate immediately; the worker restarts at the newest point.
inline RunRecord run_asgd(const ProblemOracle& problem,
                          const ClusterModel& cluster, double gamma,
                          const RunControls& ctl, std::span<const double> x0,
                          std::uint64_t seed) {
  const int n = cluster.size();
  detail::RunTracker tracker(problem, ctl);
  std::vector<double> x = detail::make_x0(x0, problem.dim);
  if (tracker.init(x)) return tracker.take_converged();

  const std::size_t d = static_cast<std::size_t>(problem.dim);
  RngStream root(seed);
  detail::EventQueue queue;
  std::vector<detail::Assignment> workers(static_cast<std::size_t>(n));
  std::int64_t seq = 0;
  for (int i = 0; i < n; ++i) {
    auto& a = workers[static_cast<std::size_t>(i)];
    a.x = x;
    a.iteration = 0;
    a.stream = root.child(static_cast<std::uint64_t>(i) + 1).child(0);
    const auto& w = cluster.workers[static_cast<std::size_t>(i)];
    const ExtendedTime eta = w.delay.sample(a.stream);
    queue.push(detail::Event{w.tau + eta, i, seq++});
  }

  std::vector<double> gbuf(d);
  std::int64_t k = 0;
  std::int64_t delay_sum = 0, delay_max = 0;
  double time = 0.0;
  auto finish = [&](RunRecord rec) {
    if (k > 0) rec.mean_delay = static_cast<double>(delay_sum) / k;
    rec.max_delay = delay_max;
    return rec;
  };
  while (true) {
    if (queue.empty() || !is_finite_time(queue.top().time)) {
      return finish(tracker.take_at(RunStatus::Stalled, time));
    }
    const detail::Event evt = queue.top();
    if (tracker.over_time_budget(evt.time)) {
      return finish(tracker.take_at(RunStatus::BudgetExhausted, time));
    }
    queue.pop();
    time = evt.time;
    auto& a = workers[static_cast<std::size_t>(evt.worker)];
    problem.stochastic_grad(a.x, gbuf, a.stream);
    const std::int64_t delay = k - a.iteration;
    delay_sum += delay;
    delay_max = std::max(delay_max, delay);
    for (std::size_t c = 0; c < d; ++c) x[c] -= gamma * gbuf[c];
    const auto m = tracker.evaluate(x, k);
    const bool done = tracker.on_iteration(k, time, m, 1, 1, 0);
    ++k;

    a.x = x;
    a.iteration = k;
    a.count += 1;
    a.stream = root.child(static_cast<std::uint64_t>(evt.worker) + 1)
                   .child(static_cast<std::uint64_t>(a.count));
    const auto& w = cluster.workers[static_cast<std::size_t>(evt.worker)];
    const ExtendedTime eta = w.delay.sample(a.stream);
    queue.push(detail::Event{time + (w.tau + eta), evt.worker, seq++});

    if (done || tracker.over_iter_budget(k)) {
      return finish(done ? tracker.take_converged()
                         : tracker.take(RunStatus::BudgetExhausted));
    }
  }
}

// ---------------------------------------------------------------------------
// Minibatch SGD: one gradient per worker per round, round = slowest worker.
// ---------------------------------------------------------------------------

inline RunRecord run_minibatch(const ProblemOracle& problem,
                               const ClusterModel& cluster, double gamma,
                               const RunControls& ctl,
                               std::span<const double> x0,
                               std::uint64_t seed) {
  const int n = cluster.size();
  detail::RunTracker tracker(problem, ctl);
  std::vector<double> x = detail::make_x0(x0, problem.dim);
  if (tracker.init(x)) return tracker.take_converged();

  const std::size_t d = static_cast<std::size_t>(problem.dim);
  std::vector<double> gsum(d), gbuf(d);
  RngStream root(seed);
  double time = 0.0;
  for (std::int64_t k = 0;; ++k) {
    if (tracker.over_iter_budget(k)) {
      return tracker.take(RunStatus::BudgetExhausted);
    }
    std::fill(gsum.begin(), gsum.end(), 0.0);
    double round_time = 0.0;
    for (int i = 0; i < n; ++i) {
      const auto& w = cluster.workers[static_cast<std::size_t>(i)];
      RngStream ws = root.child(static_cast<std::uint64_t>(i) + 1)
                         .child(static_cast<std::uint64_t>(k));
      const ExtendedTime eta = w.delay.sample(ws);
      round_time = std::max(round_time, w.tau + eta);
      if (!is_finite_time(round_time)) break;
      problem.stochastic_grad(x, gbuf, ws);
      for (std::size_t c = 0; c < d; ++c) gsum[c] += gbuf[c];
    }
    if (!is_finite_time(round_time)) {
      return tracker.take(RunStatus::Stalled);
    }
    const double new_time = time + round_time;
    if (tracker.over_time_budget(new_time)) {
      return tracker.take(RunStatus::BudgetExhausted);
    }
    time = new_time;
    const double scale = gamma / static_cast<double>(n);
    for (std::size_t c = 0; c < d; ++c) x[c] -= scale * gsum[c];
    const auto m = tracker.evaluate(x, k);
    if (tracker.on_iteration(k, time, m, n, n, 0)) {
      return tracker.take_converged();
    }
  }
}

// ---------------------------------------------------------------------------
// Stepsize tuning.
// ---------------------------------------------------------------------------

/// Powers of two around 1/(2L): 2^{-6} .. 2^{4} times 1/(2L).
inline std::vector<double> default_gamma_grid(double l_smooth) {
  std::vector<double> grid;
  grid.reserve(11);
  for (int e = -6; e <= 4; ++e) grid.push_back(std::ldexp(0.5 / l_smooth, e));
  return grid;
}

struct TuneRow {
  double gamma = 0.0;
  double median_time = kInfiniteTime;  // median time to first-hit epsilon
  int converged_seeds = 0;
};

struct TuneOutcome {
  bool found = false;  // false: no grid point converged on any seed majority
  double gamma_best = 0.0;
  std::vector<TuneRow> table;
};

/// Scores each stepsize by the median (over seeds) virtual time to first-hit
/// epsilon; runs that never hit, stall, or diverge score +inf. Ties break
/// toward the smaller stepsize.
inline TuneOutcome tune_gamma(
    const std::function<RunRecord(double, std::uint64_t)>& run_at,
    std::vector<double> grid, const std::vector<std::uint64_t>& seeds) {
  if (grid.empty()) throw std::invalid_argument("gamma grid must be nonempty");
  if (seeds.empty()) throw std::invalid_argument("seed list must be nonempty");
  std::sort(grid.begin(), grid.end());
  TuneOutcome out;
  for (double gamma : grid) {
    TuneRow row;
    row.gamma = gamma;
    std::vector<double> times;
    times.reserve(seeds.size());
    for (std::uint64_t seed : seeds) {
      double t = kInfiniteTime;
      try {
        const RunRecord rec = run_at(gamma, seed);
        t = rec.first_hit_time;
      } catch (const EngineError&) {
        // divergence scores +inf
      }
      if (is_finite_time(t)) ++row.converged_seeds;
      times.push_back(t);
    }
    std::sort(times.begin(), times.end());
    const std::size_t m = times.size();
    row.median_time = m % 2 == 1
                          ? times[m / 2]
                          : 0.5 * (times[m / 2 - 1] + times[m / 2]);
    out.table.push_back(row);
  }
  double best = kInfiniteTime;
  for (const TuneRow& row : out.table) {
    if (row.median_time < best) {
      best = row.median_time;
      out.gamma_best = row.gamma;
      out.found = true;
    }
  }
  return out;
}

}  // namespace mindflayer
