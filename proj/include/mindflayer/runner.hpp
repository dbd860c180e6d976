#pragma once

#include <atomic>
#include <cinttypes>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "mindflayer/analysis.hpp"
#include "mindflayer/config.hpp"
#include "mindflayer/engine.hpp"
#include "mindflayer/histogram.hpp"
#include "mindflayer/planner.hpp"
#include "mindflayer/problems.hpp"
#include "mindflayer/version.hpp"

namespace mindflayer {

// ---------------------------------------------------------------------------
// Formatting helpers: shortest-exact doubles, explicit inf tokens.
// ---------------------------------------------------------------------------

inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

/// JSON value for a possibly-infinite time (nlohmann would emit null).
inline Json json_time(double v) {
  if (std::isinf(v) || std::isnan(v)) return format_double(v);
  return v;
}

inline std::string hash_string(std::uint64_t h) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "0x%016" PRIx64, h);
  return buf;
}

inline void write_file_atomic(const std::filesystem::path& path,
                              const std::string& content) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp.string());
    out << content;
  }
  std::filesystem::rename(tmp, path);
}

// ---------------------------------------------------------------------------
// Materialized experiment: problem, cluster, resolved method parameters.
// ---------------------------------------------------------------------------

struct ResolvedMethod {
  MethodSpec spec;
  std::string label;
  std::optional<MindFlayerPlan> mf_plan;
  std::optional<VecnaPlan> vec_plan;
  std::int64_t s_batch = 0;  // rennala
  double gamma = 0.0;
  Json plan_json;            // cmd_plan payload
  Json tune_json;            // tuning tables when tuning ran
};

struct Experiment {
  ExperimentConfig cfg;
  std::uint64_t cfg_hash = 0;
  ProblemOracle problem;  // the metric/aggregate objective
  std::optional<HeterogeneousProblem> hetero;
  ClusterModel cluster{std::vector<WorkerProfile>{
      WorkerProfile(1.0, DelayDistribution::constant(0.0))}};
  TheoryConstants constants;
  std::vector<ResolvedMethod> methods;
};

inline StopRule stop_rule_of(const std::string& s) {
  if (s == "mean") return StopRule::MeanTarget;
  if (s == "budget") return StopRule::BudgetOnly;
  return StopRule::FirstHit;
}

inline RunControls run_controls(const ExperimentConfig& cfg) {
  RunControls ctl;
  ctl.eps_target = cfg.eps;
  ctl.time_budget = cfg.time_budget;
  ctl.iter_budget = cfg.iter_budget;
  ctl.stop = stop_rule_of(cfg.stop);
  ctl.record_trace = true;
  return ctl;
}

inline RunRecord run_resolved(const Experiment& e, const ResolvedMethod& m,
                              const RunControls& ctl, std::uint64_t seed) {
  if (m.spec.name == "mindflayer") {
    return run_mindflayer(e.problem, e.cluster, *m.mf_plan, m.gamma, ctl, {},
                          seed);
  }
  if (m.spec.name == "vecna") {
    return run_vecna(*e.hetero, e.cluster, *m.vec_plan, m.gamma, ctl, {}, seed);
  }
  if (m.spec.name == "rennala") {
    return run_rennala(e.problem, e.cluster, m.s_batch, m.gamma, ctl, {}, seed);
  }
  if (m.spec.name == "asgd") {
    return run_asgd(e.problem, e.cluster, m.gamma, ctl, {}, seed);
  }
  if (m.spec.name == "minibatch") {
    return run_minibatch(e.problem, e.cluster, m.gamma, ctl, {}, seed);
  }
  throw std::logic_error("unresolved method " + m.spec.name);
}

namespace detail {

inline std::vector<double> resolve_clip_times(
    const Experiment& e, const std::variant<std::string, std::vector<double>>& clip) {
  if (const auto* list = std::get_if<std::vector<double>>(&clip)) return *list;
  const std::string& strategy = std::get<std::string>(clip);
  if (strategy == "median") return choose_clip_times_median(e.cluster);
  return choose_clip_times_optimize(e.cluster, e.constants.sigma_sq,
                                    e.constants.eps, default_quantile_grid())
      .t;
}

inline RunControls tuning_controls(const Experiment& e) {
  RunControls ctl = run_controls(e.cfg);
  ctl.stop = StopRule::FirstHit;
  ctl.record_trace = false;
  if (e.cfg.tune.iter_budget > 0) ctl.iter_budget = e.cfg.tune.iter_budget;
  return ctl;
}

inline std::vector<std::uint64_t> tuning_seeds(const ExperimentConfig& cfg) {
  if (!cfg.tune.seeds.empty()) return cfg.tune.seeds;
  std::vector<std::uint64_t> s(cfg.seeds.begin(),
                               cfg.seeds.begin() +
                                   std::min<std::size_t>(3, cfg.seeds.size()));
  return s;
}

inline Json tune_table_json(const TuneOutcome& outcome) {
  Json rows = Json::array();
  for (const auto& row : outcome.table) {
    Json r;
    r["gamma"] = row.gamma;
    r["median_time_to_eps"] = json_time(row.median_time);
    r["converged_seeds"] = row.converged_seeds;
    rows.push_back(r);
  }
  Json j;
  j["found"] = outcome.found;
  if (outcome.found) j["gamma_best"] = outcome.gamma_best;
  j["table"] = rows;
  return j;
}

}  // namespace detail

/// Builds the oracles and resolves every method's parameters (plans, clip
/// times, batch sizes, stepsizes — running the tuner where requested).
inline Experiment materialize(const ExperimentConfig& cfg) {
  Experiment e;
  e.cfg = cfg;
  e.cfg_hash = config_hash(cfg);
  if (cfg.problem.kind == "hetero_quadratic") {
    RngStream family_rng(cfg.problem.family_seed ^ 0x86f7a4e1d3b2c905ULL);
    e.hetero = hetero_quad_family(cfg.problem.d, cfg.problem.n,
                                  cfg.problem.shift_scale,
                                  cfg.problem.noise_std, family_rng);
    e.problem = e.hetero->aggregate;
  } else {
    e.problem = quad_problem(cfg.problem.d, cfg.problem.noise_std);
  }
  e.cluster = cfg.cluster.build();

  const std::vector<double> x0(static_cast<std::size_t>(e.problem.dim), 0.0);
  e.constants.sigma_sq = e.problem.sigma_sq;
  e.constants.eps = cfg.eps;
  e.constants.delta = e.problem.value(x0) - e.problem.f_inf;
  e.constants.l_smooth = e.problem.smoothness;

  const auto tune_seeds = detail::tuning_seeds(cfg);
  const auto gamma_grid = cfg.tune.gamma_grid.empty()
                              ? default_gamma_grid(e.constants.l_smooth)
                              : cfg.tune.gamma_grid;
  const auto s_grid =
      cfg.tune.s_grid.empty() ? default_s_grid() : cfg.tune.s_grid;

  std::vector<int> name_uses;
  for (std::size_t mi = 0; mi < cfg.methods.size(); ++mi) {
    const MethodSpec& spec = cfg.methods[mi];
    ResolvedMethod rm;
    rm.spec = spec;
    rm.label = spec.name;
    int dup = 0;
    for (std::size_t mj = 0; mj < mi; ++mj) {
      if (cfg.methods[mj].name == spec.name) ++dup;
    }
    if (dup > 0) rm.label += "_" + std::to_string(dup + 1);

    const auto& c = e.constants;
    if (spec.name == "mindflayer") {
      const auto t = detail::resolve_clip_times(e, spec.clip);
      rm.mf_plan = mindflayer_plan(e.cluster, t, c.sigma_sq, c.eps, c.delta,
                                   c.l_smooth);
      rm.gamma = rm.mf_plan->gamma;
    } else if (spec.name == "vecna") {
      if (!e.hetero) {
        throw ConfigError("vecna requires the hetero_quadratic problem");
      }
      const auto t = detail::resolve_clip_times(e, spec.clip);
      // Component oracles share one variance bound.
      rm.vec_plan = vecna_plan(e.cluster, t,
                               e.hetero->components.front().sigma_sq, c.eps,
                               c.delta, c.l_smooth);
      rm.gamma = rm.vec_plan->gamma;
    } else if (spec.name == "rennala") {
      if (const auto* s = std::get_if<std::int64_t>(&spec.s_batch)) {
        rm.s_batch = *s;
      }
    }

    // Stepsize resolution. Baselines' "theory" value is the classical rate
    // with their effective batch (1 for asgd, n for minibatch).
    const auto theory_gamma = [&]() -> double {
      if (spec.name == "mindflayer") return rm.mf_plan->gamma;
      if (spec.name == "vecna") return rm.vec_plan->gamma;
      if (spec.name == "rennala") {
        return rennala_gamma(c.l_smooth, c.eps, c.sigma_sq,
                             rm.s_batch > 0 ? rm.s_batch : 1);
      }
      if (spec.name == "minibatch") {
        return rennala_gamma(c.l_smooth, c.eps, c.sigma_sq, e.cluster.size());
      }
      return rennala_gamma(c.l_smooth, c.eps, c.sigma_sq, 1);  // asgd
    };

    const bool tune_s = spec.name == "rennala" &&
                        std::holds_alternative<std::string>(spec.s_batch);
    const bool tune_g = std::holds_alternative<std::string>(spec.gamma) &&
                        std::get<std::string>(spec.gamma) == "tune";
    if (tune_s || tune_g) {
      const RunControls tctl = detail::tuning_controls(e);
      Json s_rows = Json::array();
      if (spec.name == "rennala") {
        // Joint (S, gamma) search when either is tunable.
        std::vector<std::int64_t> candidates =
            tune_s ? s_grid : std::vector<std::int64_t>{rm.s_batch};
        double best_score = kInfiniteTime;
        std::int64_t best_s = candidates.front();
        double best_gamma = 0.0;
        Json best_table;
        bool found_any = false;
        for (std::int64_t s : candidates) {
          TuneOutcome outcome;
          if (tune_g) {
            outcome = tune_gamma(
                [&](double g, std::uint64_t seed) {
                  return run_rennala(e.problem, e.cluster, s, g, tctl, {},
                                     seed);
                },
                gamma_grid, tune_seeds);
          } else {
            const double g = std::holds_alternative<double>(spec.gamma)
                                 ? std::get<double>(spec.gamma)
                                 : rennala_gamma(c.l_smooth, c.eps, c.sigma_sq,
                                                 s);
            outcome = tune_gamma(
                [&](double gg, std::uint64_t seed) {
                  return run_rennala(e.problem, e.cluster, s, gg, tctl, {},
                                     seed);
                },
                {g}, tune_seeds);
          }
          double score = kInfiniteTime;
          for (const auto& row : outcome.table) {
            score = std::min(score, row.median_time);
          }
          Json srow;
          srow["S"] = s;
          srow["median_time_to_eps"] = json_time(score);
          s_rows.push_back(srow);
          if (outcome.found && score < best_score) {
            best_score = score;
            best_s = s;
            best_gamma = outcome.gamma_best;
            best_table = detail::tune_table_json(outcome);
            found_any = true;
          }
        }
        if (found_any) {
          rm.s_batch = best_s;
          rm.gamma = best_gamma;
        } else {
          // Nothing converged within the tuning budget; fall back to the
          // smallest S and its theory stepsize so the run is still defined.
          rm.s_batch = candidates.front();
          rm.gamma = std::holds_alternative<double>(spec.gamma)
                         ? std::get<double>(spec.gamma)
                         : rennala_gamma(c.l_smooth, c.eps, c.sigma_sq,
                                         rm.s_batch);
        }
        rm.tune_json["no_convergent_stepsize"] = !found_any;
        rm.tune_json["s_table"] = s_rows;
        if (found_any) rm.tune_json["gamma"] = best_table;
      } else {
        const TuneOutcome outcome = tune_gamma(
            [&](double g, std::uint64_t seed) {
              ResolvedMethod probe = rm;
              probe.gamma = g;
              return run_resolved(e, probe, tctl, seed);
            },
            gamma_grid, tune_seeds);
        rm.tune_json = detail::tune_table_json(outcome);
        rm.tune_json["no_convergent_stepsize"] = !outcome.found;
        rm.gamma = outcome.found ? outcome.gamma_best : theory_gamma();
      }
    } else if (const auto* g = std::get_if<double>(&spec.gamma)) {
      rm.gamma = *g;
      if (spec.name == "rennala" && rm.s_batch == 0) rm.s_batch = 1;
    } else {
      if (spec.name == "rennala" && rm.s_batch == 0) rm.s_batch = 1;
      rm.gamma = theory_gamma();
    }

    // Plan payload for cmd_plan.
    Json pj;
    pj["method"] = rm.label;
    pj["gamma"] = rm.gamma;
    if (rm.mf_plan) {
      const auto& p = *rm.mf_plan;
      pj["t"] = p.t;
      pj["B"] = p.B;
      pj["p"] = p.p;
      pj["B_expected"] = p.B_expected;
      pj["K"] = p.K;
      pj["m_star"] = p.m_star;
      pj["time_bound"] = json_time(p.time_bound);
      pj["gamma_theory"] = p.gamma;
    }
    if (rm.vec_plan) {
      const auto& p = *rm.vec_plan;
      pj["t"] = p.t;
      pj["B"] = p.B;
      pj["p"] = p.p;
      pj["alpha"] = p.alpha;
      pj["zeta"] = p.zeta;
      pj["beta"] = p.beta;
      pj["K"] = p.K;
      pj["T"] = p.T;
      pj["time_bound"] = json_time(p.time_bound);
      pj["gamma_theory"] = p.gamma;
    }
    if (spec.name == "rennala") {
      pj["S"] = rm.s_batch;
      pj["K"] = rennala_iters(c.delta, c.l_smooth, c.sigma_sq, c.eps,
                              rm.s_batch);
    }
    rm.plan_json = std::move(pj);
    e.methods.push_back(std::move(rm));
  }
  return e;
}

// ---------------------------------------------------------------------------
// Per-run trace and sidecar files.
// ---------------------------------------------------------------------------

inline std::string provenance_header(const Experiment& e, std::uint64_t seed) {
  std::ostringstream os;
  os << "# config_hash=" << hash_string(e.cfg_hash) << "\n";
  os << "# root_seed=" << seed << "\n";
  os << "# artifact_version=" << kArtifactVersion << "\n";
  return os.str();
}

inline std::string trace_csv(const Experiment& e, const RunRecord& rec,
                             std::uint64_t seed) {
  std::ostringstream os;
  os << provenance_header(e, seed);
  os << "k,time,grad_sq_norm,f_value,gradients_used,trials_attempted,"
        "discarded_stale\n";
  for (const auto& row : rec.rows) {
    os << row.k << ',' << format_double(row.time) << ','
       << format_double(row.grad_sq_norm) << ',' << format_double(row.f_value)
       << ',' << row.gradients_used << ',' << row.trials_attempted << ','
       << row.discarded_stale << '\n';
  }
  return os.str();
}

inline Json run_summary_json(const Experiment& e, const RunRecord& rec,
                             std::uint64_t seed) {
  Json j;
  j["status"] = to_string(rec.status);
  j["iterations"] = rec.iterations;
  j["final_time"] = json_time(rec.final_time);
  j["final_grad_sq_norm"] = rec.final_grad_sq;
  j["final_f_value"] = rec.final_f;
  j["first_hit_iter"] = rec.first_hit_iter;
  j["first_hit_time"] = json_time(rec.first_hit_time);
  j["avg_hit_iters"] = rec.avg_hit_iters;
  j["avg_hit_time"] = json_time(rec.avg_hit_time);
  j["total_gradients"] = rec.total_gradients;
  j["total_trials"] = rec.total_trials;
  j["total_stale"] = rec.total_stale;
  j["mean_delay"] = rec.mean_delay;
  j["max_delay"] = rec.max_delay;
  j["config_hash"] = hash_string(e.cfg_hash);
  j["root_seed"] = seed;
  j["artifact_version"] = kArtifactVersion;
  return j;
}

// ---------------------------------------------------------------------------
// Simulate: methods x seeds, worker pool, Fig.1-style summary aggregation.
// ---------------------------------------------------------------------------

struct SimulateOutcome {
  bool any_error = false;
  std::vector<std::string> errors;
  Json summary;
};

namespace detail {

struct RunTask {
  std::size_t method_index;
  std::uint64_t seed;
};

/// Step function value of a trace at time t: the metric of the last iterate
/// reached by then (the start metric before the first row).
inline double step_value_at(const std::vector<TraceRow>& rows, double initial,
                            double t, double TraceRow::*field) {
  double v = initial;
  for (const auto& row : rows) {
    if (row.time > t) break;
    v = row.*field;
  }
  return v;
}

}  // namespace detail

inline SimulateOutcome cmd_simulate(const Experiment& e,
                                    const std::filesystem::path& out_dir,
                                    int jobs, const std::string& format) {
  std::filesystem::create_directories(out_dir);
  std::vector<detail::RunTask> tasks;
  for (std::size_t mi = 0; mi < e.methods.size(); ++mi) {
    for (std::uint64_t seed : e.cfg.seeds) tasks.push_back({mi, seed});
  }
  std::vector<RunRecord> records(tasks.size());
  std::vector<std::string> task_errors(tasks.size());
  const RunControls ctl = run_controls(e.cfg);

  const int pool = jobs > 0
                       ? jobs
                       : std::max(1u, std::thread::hardware_concurrency());
  std::atomic<std::size_t> next{0};
  auto work = [&]() {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= tasks.size()) return;
      const auto& task = tasks[i];
      const auto& m = e.methods[task.method_index];
      try {
        records[i] = run_resolved(e, m, ctl, task.seed);
        write_file_atomic(
            out_dir / (m.label + "_seed" + std::to_string(task.seed) + ".csv"),
            trace_csv(e, records[i], task.seed));
        write_file_atomic(
            out_dir / (m.label + "_seed" + std::to_string(task.seed) + ".json"),
            run_summary_json(e, records[i], task.seed).dump(2) + "\n");
      } catch (const std::exception& ex) {
        task_errors[i] = m.label + " seed " + std::to_string(task.seed) + ": " +
                         ex.what();
      }
    }
  };
  std::vector<std::thread> threads;
  for (int t = 1; t < pool; ++t) threads.emplace_back(work);
  work();
  for (auto& t : threads) t.join();

  SimulateOutcome outcome;
  Json methods_summary = Json::array();
  for (std::size_t mi = 0; mi < e.methods.size(); ++mi) {
    const auto& m = e.methods[mi];
    Json mj;
    mj["method"] = m.label;
    mj["gamma"] = m.gamma;
    if (m.spec.name == "rennala") mj["S"] = m.s_batch;
    Json per_seed = Json::array();
    std::vector<double> hit_times;
    std::vector<const RunRecord*> recs;
    for (std::size_t i = 0; i < tasks.size(); ++i) {
      if (tasks[i].method_index != mi) continue;
      if (!task_errors[i].empty()) {
        outcome.any_error = true;
        outcome.errors.push_back(task_errors[i]);
        Json r;
        r["seed"] = tasks[i].seed;
        r["error"] = task_errors[i];
        per_seed.push_back(r);
        continue;
      }
      const RunRecord& rec = records[i];
      recs.push_back(&rec);
      hit_times.push_back(rec.first_hit_time);
      Json r;
      r["seed"] = tasks[i].seed;
      r["status"] = to_string(rec.status);
      r["time_to_eps"] = json_time(rec.first_hit_time);
      r["iterations"] = rec.iterations;
      per_seed.push_back(r);
    }
    mj["runs"] = per_seed;
    if (!hit_times.empty()) {
      std::vector<double> sorted = hit_times;
      std::sort(sorted.begin(), sorted.end());
      const std::size_t mid = sorted.size() / 2;
      const double median =
          sorted.size() % 2 == 1 ? sorted[mid]
                                 : 0.5 * (sorted[mid - 1] + sorted[mid]);
      mj["median_time_to_eps"] = json_time(median);
    }
    // Fig. 1 aggregation: mean/min/max of the convergence metric across seeds
    // on a shared geometric time grid.
    if (!recs.empty()) {
      double t_max = 0.0, t_min = kInfiniteTime;
      for (const auto* r : recs) {
        t_max = std::max(t_max, r->final_time);
        for (const auto& row : r->rows) {
          if (row.time > 0.0) {
            t_min = std::min(t_min, row.time);
            break;
          }
        }
      }
      if (is_finite_time(t_min) && t_max > t_min) {
        constexpr int kGrid = 200;
        Json grid = Json::array(), mean_a = Json::array(),
             min_a = Json::array(), max_a = Json::array();
        for (int gi = 0; gi < kGrid; ++gi) {
          const double t =
              t_min * std::pow(t_max / t_min,
                               static_cast<double>(gi) / (kGrid - 1));
          double sum = 0.0, mn = kInfiniteTime, mx = -kInfiniteTime;
          for (const auto* r : recs) {
            const double v = detail::step_value_at(
                r->rows, r->initial_grad_sq, t, &TraceRow::grad_sq_norm);
            sum += v;
            mn = std::min(mn, v);
            mx = std::max(mx, v);
          }
          grid.push_back(t);
          mean_a.push_back(sum / static_cast<double>(recs.size()));
          min_a.push_back(mn);
          max_a.push_back(mx);
        }
        Json agg;
        agg["time"] = grid;
        agg["grad_sq_mean"] = mean_a;
        agg["grad_sq_min"] = min_a;
        agg["grad_sq_max"] = max_a;
        mj["time_grid"] = agg;
      }
    }
    methods_summary.push_back(mj);
  }
  Json summary;
  summary["config_hash"] = hash_string(e.cfg_hash);
  summary["artifact_version"] = kArtifactVersion;
  summary["seeds"] = e.cfg.seeds;
  summary["eps"] = e.cfg.eps;
  summary["methods"] = methods_summary;
  outcome.summary = summary;
  write_file_atomic(out_dir / "summary.json", summary.dump(2) + "\n");
  if (format == "csv") {
    std::ostringstream os;
    os << "# config_hash=" << hash_string(e.cfg_hash) << "\n";
    os << "# artifact_version=" << kArtifactVersion << "\n";
    os << "method,seed,status,time_to_eps,iterations\n";
    for (std::size_t i = 0; i < tasks.size(); ++i) {
      if (!task_errors[i].empty()) continue;
      const auto& m = e.methods[tasks[i].method_index];
      os << m.label << ',' << tasks[i].seed << ','
         << to_string(records[i].status) << ','
         << format_double(records[i].first_hit_time) << ','
         << records[i].iterations << '\n';
    }
    write_file_atomic(out_dir / "summary.csv", os.str());
  }
  return outcome;
}

// ---------------------------------------------------------------------------
// Sweep: repeat simulate along one config axis, merge a comparison table.
// ---------------------------------------------------------------------------

namespace detail {

inline void set_json_path(Json& root, const std::string& path, double value) {
  Json* node = &root;
  std::size_t pos = 0;
  std::vector<std::string> tokens;
  while (pos != std::string::npos) {
    const std::size_t dot = path.find('.', pos);
    tokens.push_back(path.substr(pos, dot == std::string::npos ? dot : dot - pos));
    pos = dot == std::string::npos ? dot : dot + 1;
  }
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const std::string& tok = tokens[i];
    const bool last = i + 1 == tokens.size();
    if (node->is_array()) {
      const std::size_t idx = std::stoul(tok);
      if (idx >= node->size()) throw ConfigError("sweep axis index out of range");
      if (last) {
        (*node)[idx] = value;
      } else {
        node = &(*node)[idx];
      }
    } else if (node->is_object()) {
      if (!node->contains(tok)) {
        throw ConfigError("sweep axis \"" + path + "\" not found in config");
      }
      if (last) {
        (*node)[tok] = value;
      } else {
        node = &(*node)[tok];
      }
    } else {
      throw ConfigError("sweep axis \"" + path + "\" traverses a scalar");
    }
  }
}

}  // namespace detail

struct SweepOutcome {
  bool any_error = false;
  std::vector<std::string> errors;
};

inline SweepOutcome cmd_sweep(const ExperimentConfig& base,
                              const std::string& axis,
                              const std::vector<double>& values,
                              const std::filesystem::path& out_dir, int jobs,
                              const std::string& format) {
  if (values.empty()) throw ConfigError("sweep requires a nonempty value list");
  std::filesystem::create_directories(out_dir);
  SweepOutcome outcome;
  std::ostringstream table;
  table << "axis,value,method,converged_seeds,stalled_seeds,budget_seeds,"
           "error_seeds,median_time_to_eps\n";
  for (double v : values) {
    Json j = config_to_json(base);
    detail::set_json_path(j, axis, v);
    const ExperimentConfig cfg = config_from_json(j);
    const Experiment e = materialize(cfg);
    std::ostringstream dir_name;
    dir_name << "value_" << format_double(v);
    const auto sub = out_dir / dir_name.str();
    const SimulateOutcome sim = cmd_simulate(e, sub, jobs, format);
    outcome.any_error |= sim.any_error;
    for (const auto& err : sim.errors) outcome.errors.push_back(err);
    for (const auto& mj : sim.summary["methods"]) {
      int converged = 0, stalled = 0, budget = 0, errored = 0;
      for (const auto& r : mj["runs"]) {
        if (r.contains("error")) {
          ++errored;
        } else if (r["status"] == "converged") {
          ++converged;
        } else if (r["status"] == "stalled") {
          ++stalled;
        } else {
          ++budget;
        }
      }
      std::string median = "inf";
      if (mj.contains("median_time_to_eps")) {
        const auto& mt = mj["median_time_to_eps"];
        median = mt.is_string() ? mt.get<std::string>()
                                : format_double(mt.get<double>());
      }
      table << axis << ',' << format_double(v) << ','
            << mj["method"].get<std::string>() << ',' << converged << ','
            << stalled << ',' << budget << ',' << errored << ',' << median
            << '\n';
    }
  }
  write_file_atomic(out_dir / "sweep.csv", table.str());
  return outcome;
}

// ---------------------------------------------------------------------------
// Histogram command: one-round law, optional K-fold convolution, quantiles.
// ---------------------------------------------------------------------------

inline Json histogram_to_dump(const Histogram& h) {
  Json j;
  j["bin_width"] = h.bin_width;
  j["origin"] = h.origin;
  j["mass"] = h.mass;
  j["overflow_mass"] = h.overflow_mass;
  return j;
}

inline bool cmd_histogram(const Experiment& e,
                          const std::filesystem::path& out_dir) {
  if (!e.cfg.histogram) {
    throw ConfigError("config lacks a \"histogram\" block");
  }
  const HistogramSpec& spec = *e.cfg.histogram;
  std::filesystem::create_directories(out_dir);
  const auto& c = e.constants;

  OneRoundSampler sampler;
  std::int64_t theory_iters = 0;
  if (spec.sampler == "rennala") {
    sampler = rennala_round_sampler(e.cluster, spec.s_batch);
    theory_iters =
        rennala_iters(c.delta, c.l_smooth, c.sigma_sq, c.eps, spec.s_batch);
  } else if (spec.sampler == "minibatch") {
    sampler = minibatch_round_sampler(e.cluster);
    theory_iters = rennala_iters(c.delta, c.l_smooth, c.sigma_sq, c.eps,
                                 e.cluster.size());
  } else {
    const MindFlayerPlan* plan = nullptr;
    for (const auto& m : e.methods) {
      if (m.mf_plan) {
        plan = &*m.mf_plan;
        break;
      }
    }
    MindFlayerPlan local;
    if (plan == nullptr) {
      local = mindflayer_plan(e.cluster, choose_clip_times_median(e.cluster),
                              c.sigma_sq, c.eps, c.delta, c.l_smooth);
      plan = &local;
    }
    sampler = mindflayer_round_sampler(e.cluster, plan->t, plan->B);
    theory_iters = plan->K;
  }

  const std::uint64_t seed = e.cfg.seeds.front();
  const Histogram round = round_time_histogram(e.cluster, sampler, spec.draws,
                                               spec.bin_width, seed);
  Json out;
  out["config_hash"] = hash_string(e.cfg_hash);
  out["root_seed"] = seed;
  out["artifact_version"] = kArtifactVersion;
  out["round"] = histogram_to_dump(round);

  std::ostringstream qcsv;
  qcsv << provenance_header(e, seed);
  qcsv << "p,round_time,total_time\n";
  const std::int64_t k_folds =
      spec.convolve == -1 ? theory_iters : spec.convolve;
  std::optional<Histogram> total;
  if (k_folds >= 1) {
    total = self_convolve(round, k_folds);
    out["convolve_k"] = k_folds;
    out["total"] = histogram_to_dump(*total);
  }
  for (double p : spec.quantiles) {
    qcsv << format_double(p) << ',' << format_double(round.quantile(p)) << ',';
    qcsv << (total ? format_double(total->quantile(p)) : std::string(""));
    qcsv << '\n';
  }
  write_file_atomic(out_dir / "histogram.json", out.dump(2) + "\n");
  write_file_atomic(out_dir / "quantiles.csv", qcsv.str());
  return true;
}

}  // namespace mindflayer
