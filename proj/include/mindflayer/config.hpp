#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "mindflayer/timemodel.hpp"

namespace mindflayer {

using Json = nlohmann::json;

class ConfigError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void reject_unknown_keys(const Json& obj,
                                std::initializer_list<const char*> allowed,
                                const std::string& where) {
  for (const auto& [key, value] : obj.items()) {
    bool ok = false;
    for (const char* a : allowed) ok |= key == a;
    if (!ok) {
      throw ConfigError("unknown key \"" + key + "\" in " + where);
    }
  }
}

inline double get_number(const Json& obj, const char* key,
                         const std::string& where) {
  if (!obj.contains(key) || !obj[key].is_number()) {
    throw ConfigError(where + " requires numeric \"" + std::string(key) + "\"");
  }
  return obj[key].get<double>();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Distribution literals: {"kind":"lognormal","mu":0.0,"s":10.0}, etc.
// ---------------------------------------------------------------------------

inline DelayDistribution delay_from_json(const Json& j) {
  if (!j.is_object() || !j.contains("kind") || !j["kind"].is_string()) {
    throw ConfigError("delay spec must be an object with a \"kind\" string");
  }
  const std::string kind = j["kind"].get<std::string>();
  try {
    if (kind == "lognormal") {
      detail::reject_unknown_keys(j, {"kind", "mu", "s"}, "lognormal spec");
      return DelayDistribution::lognormal(
          detail::get_number(j, "mu", "lognormal"),
          detail::get_number(j, "s", "lognormal"));
    }
    if (kind == "logcauchy") {
      detail::reject_unknown_keys(j, {"kind", "scale", "location"},
                                  "logcauchy spec");
      const double location =
          j.contains("location") ? detail::get_number(j, "location", "logcauchy")
                                 : 0.0;
      return DelayDistribution::log_cauchy(
          detail::get_number(j, "scale", "logcauchy"), location);
    }
    if (kind == "logt") {
      detail::reject_unknown_keys(j, {"kind", "df", "scale"}, "logt spec");
      if (!j.contains("df") || !j["df"].is_number_integer()) {
        throw ConfigError("logt requires integer \"df\"");
      }
      return DelayDistribution::log_t(j["df"].get<int>(),
                                      detail::get_number(j, "scale", "logt"));
    }
    if (kind == "infbernoulli") {
      detail::reject_unknown_keys(j, {"kind", "q"}, "infbernoulli spec");
      return DelayDistribution::inf_bernoulli(
          detail::get_number(j, "q", "infbernoulli"));
    }
    if (kind == "constant") {
      detail::reject_unknown_keys(j, {"kind", "c"}, "constant spec");
      return DelayDistribution::constant(detail::get_number(j, "c", "constant"));
    }
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("invalid delay parameters: ") + e.what());
  }
  throw ConfigError("unknown delay kind \"" + kind + "\"");
}

inline Json delay_to_json(const DelayDistribution& d) {
  Json j;
  j["kind"] = d.kind();
  struct V {
    Json& j;
    void operator()(const Lognormal& x) const {
      j["mu"] = x.mu;
      j["s"] = x.s;
    }
    void operator()(const LogCauchy& x) const {
      j["scale"] = x.scale;
      j["location"] = x.location;
    }
    void operator()(const LogT& x) const {
      j["df"] = x.df;
      j["scale"] = x.scale;
    }
    void operator()(const InfBernoulli& x) const { j["q"] = x.q; }
    void operator()(const ConstantDelay& x) const { j["c"] = x.c; }
  };
  std::visit(V{j}, d.raw());
  return j;
}

// ---------------------------------------------------------------------------
// Cluster spec: worker count, tau rule, per-worker or shared delay.
// ---------------------------------------------------------------------------

struct ClusterSpec {
  int n = 1;
  std::variant<std::string, std::vector<double>> tau;  // named rule or list
  std::vector<Json> delays;  // canonical delay literals, one per worker
  bool shared_delay = true;  // emitted as one literal when true

  std::vector<double> tau_values() const {
    if (const auto* rule = std::get_if<std::string>(&tau)) {
      if (*rule == "sqrt(i+1)") return tau_rule_sqrt(n);
      throw ConfigError("unknown tau rule \"" + *rule + "\"");
    }
    return std::get<std::vector<double>>(tau);
  }

  ClusterModel build() const {
    const auto taus = tau_values();
    std::vector<WorkerProfile> workers;
    workers.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      workers.emplace_back(taus[static_cast<std::size_t>(i)],
                           delay_from_json(delays[static_cast<std::size_t>(i)]));
    }
    return ClusterModel(std::move(workers));
  }
};

inline ClusterSpec cluster_from_json(const Json& j) {
  detail::reject_unknown_keys(j, {"n", "tau", "delay"}, "cluster");
  ClusterSpec spec;
  if (!j.contains("n") || !j["n"].is_number_integer()) {
    throw ConfigError("cluster requires integer \"n\"");
  }
  spec.n = j["n"].get<int>();
  if (spec.n < 1) throw ConfigError("cluster requires n >= 1");
  if (!j.contains("tau")) throw ConfigError("cluster requires \"tau\"");
  if (j["tau"].is_string()) {
    spec.tau = j["tau"].get<std::string>();
  } else if (j["tau"].is_array()) {
    auto taus = j["tau"].get<std::vector<double>>();
    if (static_cast<int>(taus.size()) != spec.n) {
      throw ConfigError("tau list length must equal n");
    }
    spec.tau = std::move(taus);
  } else {
    throw ConfigError("tau must be a rule name or a list of seconds");
  }
  if (!j.contains("delay")) throw ConfigError("cluster requires \"delay\"");
  if (j["delay"].is_array()) {
    spec.shared_delay = false;
    if (static_cast<int>(j["delay"].size()) != spec.n) {
      throw ConfigError("per-worker delay list length must equal n");
    }
    for (const auto& d : j["delay"]) {
      spec.delays.push_back(delay_to_json(delay_from_json(d)));
    }
  } else {
    spec.shared_delay = true;
    const Json canon = delay_to_json(delay_from_json(j["delay"]));
    spec.delays.assign(static_cast<std::size_t>(spec.n), canon);
  }
  // Validate tau values now so errors surface at parse time.
  for (double t : spec.tau_values()) {
    if (!(t > 0.0)) throw ConfigError("tau values must be positive");
  }
  return spec;
}

inline Json cluster_to_json(const ClusterSpec& spec) {
  Json j;
  j["n"] = spec.n;
  if (const auto* rule = std::get_if<std::string>(&spec.tau)) {
    j["tau"] = *rule;
  } else {
    j["tau"] = std::get<std::vector<double>>(spec.tau);
  }
  if (spec.shared_delay) {
    j["delay"] = spec.delays.front();
  } else {
    j["delay"] = spec.delays;
  }
  return j;
}

// ---------------------------------------------------------------------------
// Problem spec.
// ---------------------------------------------------------------------------

struct ProblemSpec {
  std::string kind = "quadratic";  // or "hetero_quadratic"
  int d = 1000;
  double noise_std = 0.0003;
  // hetero only:
  int n = 1;
  double shift_scale = 0.0;
  std::uint64_t family_seed = 0;
};

inline ProblemSpec problem_from_json(const Json& j) {
  if (!j.contains("problem") || !j["problem"].is_string()) {
    throw ConfigError("problem requires a \"problem\" kind string");
  }
  ProblemSpec spec;
  spec.kind = j["problem"].get<std::string>();
  if (spec.kind == "quadratic") {
    detail::reject_unknown_keys(j, {"problem", "d", "noise_std"}, "problem");
  } else if (spec.kind == "hetero_quadratic") {
    detail::reject_unknown_keys(
        j, {"problem", "d", "noise_std", "n", "shift_scale", "family_seed"},
        "problem");
    if (!j.contains("n")) throw ConfigError("hetero_quadratic requires n");
    spec.n = j["n"].get<int>();
    spec.shift_scale = j.value("shift_scale", 0.0);
    spec.family_seed = j.value("family_seed", std::uint64_t{0});
  } else {
    throw ConfigError("unknown problem kind \"" + spec.kind + "\"");
  }
  spec.d = j.value("d", 1000);
  if (spec.d < 2) throw ConfigError("problem requires d >= 2");
  spec.noise_std = j.value("noise_std", 0.0003);
  if (!(spec.noise_std >= 0.0)) throw ConfigError("noise_std must be >= 0");
  return spec;
}

inline Json problem_to_json(const ProblemSpec& spec) {
  Json j;
  j["problem"] = spec.kind;
  j["d"] = spec.d;
  j["noise_std"] = spec.noise_std;
  if (spec.kind == "hetero_quadratic") {
    j["n"] = spec.n;
    j["shift_scale"] = spec.shift_scale;
    j["family_seed"] = spec.family_seed;
  }
  return j;
}

// ---------------------------------------------------------------------------
// Method specs.
// ---------------------------------------------------------------------------

/// "theory" takes the planner value, "tune" runs the stepsize tuner, a number
/// fixes gamma directly.
using GammaSpec = std::variant<std::string, double>;

struct MethodSpec {
  std::string name;  // mindflayer | vecna | rennala | asgd | minibatch
  // mindflayer / vecna: clip-time strategy ("median" | "optimize" | list).
  std::variant<std::string, std::vector<double>> clip = std::string("median");
  // rennala: batch size ("tune" or a fixed count).
  std::variant<std::string, std::int64_t> s_batch = std::string("tune");
  GammaSpec gamma = std::string("theory");

  std::string label() const { return name; }
};

inline GammaSpec gamma_from_json(const Json& j, const std::string& where) {
  if (j.is_number()) {
    const double g = j.get<double>();
    if (!(g > 0.0)) throw ConfigError(where + ": gamma must be positive");
    return g;
  }
  if (j.is_string()) {
    const std::string s = j.get<std::string>();
    if (s == "theory" || s == "tune") return s;
  }
  throw ConfigError(where + ": gamma must be \"theory\", \"tune\" or a number");
}

inline MethodSpec method_from_json(const Json& j) {
  if (!j.contains("method") || !j["method"].is_string()) {
    throw ConfigError("method entries require a \"method\" name");
  }
  MethodSpec spec;
  spec.name = j["method"].get<std::string>();
  const std::string where = "method \"" + spec.name + "\"";
  if (spec.name == "mindflayer" || spec.name == "vecna") {
    detail::reject_unknown_keys(j, {"method", "clip", "gamma"}, where);
    if (j.contains("clip")) {
      if (j["clip"].is_string()) {
        const std::string c = j["clip"].get<std::string>();
        if (c != "median" && c != "optimize") {
          throw ConfigError(where + ": clip must be \"median\", \"optimize\" "
                                    "or a list of seconds");
        }
        spec.clip = c;
      } else if (j["clip"].is_array()) {
        auto t = j["clip"].get<std::vector<double>>();
        for (double v : t) {
          if (!(v >= 0.0) || !std::isfinite(v)) {
            throw ConfigError(where + ": clip times must be finite and >= 0");
          }
        }
        spec.clip = std::move(t);
      } else {
        throw ConfigError(where + ": bad clip entry");
      }
    }
  } else if (spec.name == "rennala") {
    detail::reject_unknown_keys(j, {"method", "S", "gamma"}, where);
    if (j.contains("S")) {
      if (j["S"].is_number_integer()) {
        const std::int64_t s = j["S"].get<std::int64_t>();
        if (s < 1) throw ConfigError(where + ": S must be >= 1");
        spec.s_batch = s;
      } else if (j["S"].is_string() && j["S"].get<std::string>() == "tune") {
        spec.s_batch = std::string("tune");
      } else {
        throw ConfigError(where + ": S must be an integer or \"tune\"");
      }
    }
  } else if (spec.name == "asgd" || spec.name == "minibatch") {
    detail::reject_unknown_keys(j, {"method", "gamma"}, where);
  } else {
    throw ConfigError("unknown method \"" + spec.name + "\"");
  }
  if (j.contains("gamma")) spec.gamma = gamma_from_json(j["gamma"], where);
  return spec;
}

inline Json method_to_json(const MethodSpec& spec) {
  Json j;
  j["method"] = spec.name;
  if (spec.name == "mindflayer" || spec.name == "vecna") {
    if (const auto* s = std::get_if<std::string>(&spec.clip)) {
      j["clip"] = *s;
    } else {
      j["clip"] = std::get<std::vector<double>>(spec.clip);
    }
  }
  if (spec.name == "rennala") {
    if (const auto* s = std::get_if<std::string>(&spec.s_batch)) {
      j["S"] = *s;
    } else {
      j["S"] = std::get<std::int64_t>(spec.s_batch);
    }
  }
  if (const auto* s = std::get_if<std::string>(&spec.gamma)) {
    j["gamma"] = *s;
  } else {
    j["gamma"] = std::get<double>(spec.gamma);
  }
  return j;
}

// ---------------------------------------------------------------------------
// Histogram and tuning blocks.
// ---------------------------------------------------------------------------

struct HistogramSpec {
  std::string sampler = "rennala";  // rennala | mindflayer | minibatch
  std::int64_t s_batch = 1;
  std::int64_t draws = 100000;
  double bin_width = 0.0;  // 0 = automatic
  std::int64_t convolve = 0;  // 0 = no convolution; -1 = theory iterations
  std::vector<double> quantiles = {0.05, 0.25, 0.5, 0.75, 0.95};
};

inline HistogramSpec histogram_from_json(const Json& j) {
  detail::reject_unknown_keys(
      j, {"sampler", "S", "draws", "bin_width", "convolve", "quantiles"},
      "histogram");
  HistogramSpec spec;
  spec.sampler = j.value("sampler", std::string("rennala"));
  if (spec.sampler != "rennala" && spec.sampler != "mindflayer" &&
      spec.sampler != "minibatch") {
    throw ConfigError("histogram sampler must be rennala|mindflayer|minibatch");
  }
  spec.s_batch = j.value("S", std::int64_t{1});
  spec.draws = j.value("draws", std::int64_t{100000});
  spec.bin_width = j.value("bin_width", 0.0);
  if (j.contains("convolve")) {
    if (j["convolve"].is_string()) {
      if (j["convolve"].get<std::string>() != "theory") {
        throw ConfigError("histogram convolve must be a count or \"theory\"");
      }
      spec.convolve = -1;
    } else {
      spec.convolve = j["convolve"].get<std::int64_t>();
    }
  }
  if (j.contains("quantiles")) {
    spec.quantiles = j["quantiles"].get<std::vector<double>>();
  }
  return spec;
}

inline Json histogram_to_json(const HistogramSpec& spec) {
  Json j;
  j["sampler"] = spec.sampler;
  j["S"] = spec.s_batch;
  j["draws"] = spec.draws;
  j["bin_width"] = spec.bin_width;
  if (spec.convolve == -1) {
    j["convolve"] = "theory";
  } else {
    j["convolve"] = spec.convolve;
  }
  j["quantiles"] = spec.quantiles;
  return j;
}

struct TuneSpec {
  std::vector<double> gamma_grid;       // empty = default powers of two
  std::vector<std::uint64_t> seeds;     // empty = first 3 run seeds
  std::vector<std::int64_t> s_grid;     // empty = default power-of-two grid
  std::int64_t iter_budget = 0;         // 0 = the run iter budget
};

inline TuneSpec tune_from_json(const Json& j) {
  detail::reject_unknown_keys(j, {"gamma_grid", "seeds", "s_grid", "iter_budget"},
                              "tune");
  TuneSpec spec;
  if (j.contains("gamma_grid")) {
    spec.gamma_grid = j["gamma_grid"].get<std::vector<double>>();
  }
  if (j.contains("seeds")) {
    spec.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
  }
  if (j.contains("s_grid")) {
    spec.s_grid = j["s_grid"].get<std::vector<std::int64_t>>();
  }
  spec.iter_budget = j.value("iter_budget", std::int64_t{0});
  return spec;
}

inline Json tune_to_json(const TuneSpec& spec) {
  Json j;
  if (!spec.gamma_grid.empty()) j["gamma_grid"] = spec.gamma_grid;
  if (!spec.seeds.empty()) j["seeds"] = spec.seeds;
  if (!spec.s_grid.empty()) j["s_grid"] = spec.s_grid;
  if (spec.iter_budget > 0) j["iter_budget"] = spec.iter_budget;
  return j;
}

// ---------------------------------------------------------------------------
// Top-level experiment config.
// ---------------------------------------------------------------------------

struct ExperimentConfig {
  ProblemSpec problem;
  ClusterSpec cluster;
  std::vector<MethodSpec> methods;
  double eps = 1e-4;
  double time_budget = kInfiniteTime;  // serialized as 0 = unlimited
  std::int64_t iter_budget = 100000;
  std::string stop = "first_hit";  // first_hit | mean | budget
  std::vector<std::uint64_t> seeds = {1};
  std::string out_dir;  // optional; CLI/env may override
  std::optional<HistogramSpec> histogram;
  TuneSpec tune;
};

inline ExperimentConfig config_from_json(const Json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  detail::reject_unknown_keys(
      j,
      {"problem", "cluster", "methods", "eps", "time_budget", "iter_budget",
       "stop", "seeds", "out_dir", "histogram", "tune"},
      "config");
  ExperimentConfig cfg;
  if (!j.contains("problem")) throw ConfigError("config requires \"problem\"");
  cfg.problem = problem_from_json(j["problem"]);
  if (!j.contains("cluster")) throw ConfigError("config requires \"cluster\"");
  cfg.cluster = cluster_from_json(j["cluster"]);
  if (j.contains("methods")) {
    if (!j["methods"].is_array()) throw ConfigError("methods must be a list");
    for (const auto& m : j["methods"]) {
      cfg.methods.push_back(method_from_json(m));
    }
  }
  cfg.eps = j.value("eps", 1e-4);
  if (!(cfg.eps > 0.0)) throw ConfigError("eps must be positive");
  const double tb = j.value("time_budget", 0.0);
  if (tb < 0.0) throw ConfigError("time_budget must be >= 0");
  cfg.time_budget = tb == 0.0 ? kInfiniteTime : tb;
  cfg.iter_budget = j.value("iter_budget", std::int64_t{100000});
  if (cfg.iter_budget < 1) throw ConfigError("iter_budget must be positive");
  cfg.stop = j.value("stop", std::string("first_hit"));
  if (cfg.stop != "first_hit" && cfg.stop != "mean" && cfg.stop != "budget") {
    throw ConfigError("stop must be first_hit|mean|budget");
  }
  if (j.contains("seeds")) {
    cfg.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
    if (cfg.seeds.empty()) throw ConfigError("seeds must be nonempty");
  }
  cfg.out_dir = j.value("out_dir", std::string());
  if (j.contains("histogram")) {
    cfg.histogram = histogram_from_json(j["histogram"]);
  }
  if (j.contains("tune")) cfg.tune = tune_from_json(j["tune"]);
  // Cross-field checks.
  if (cfg.problem.kind == "hetero_quadratic" &&
      cfg.problem.n != cfg.cluster.n) {
    throw ConfigError("hetero_quadratic n must match cluster n");
  }
  for (const auto& m : cfg.methods) {
    if (const auto* t = std::get_if<std::vector<double>>(&m.clip)) {
      if (static_cast<int>(t->size()) != cfg.cluster.n) {
        throw ConfigError("explicit clip list must have one entry per worker");
      }
    }
  }
  return cfg;
}

/// Canonical form: object keys are emitted sorted, defaults materialized.
/// parse(emit(parse(x))) == parse(x) for every valid config.
inline Json config_to_json(const ExperimentConfig& cfg) {
  Json j;
  j["problem"] = problem_to_json(cfg.problem);
  j["cluster"] = cluster_to_json(cfg.cluster);
  j["methods"] = Json::array();
  for (const auto& m : cfg.methods) j["methods"].push_back(method_to_json(m));
  j["eps"] = cfg.eps;
  j["time_budget"] = is_finite_time(cfg.time_budget) ? cfg.time_budget : 0.0;
  j["iter_budget"] = cfg.iter_budget;
  j["stop"] = cfg.stop;
  j["seeds"] = cfg.seeds;
  if (!cfg.out_dir.empty()) j["out_dir"] = cfg.out_dir;
  if (cfg.histogram) j["histogram"] = histogram_to_json(*cfg.histogram);
  const Json tune = tune_to_json(cfg.tune);
  if (!tune.empty()) j["tune"] = tune;
  return j;
}

/// FNV-1a over the canonical dump: stable across platforms and runs.
inline std::uint64_t config_hash(const ExperimentConfig& cfg) {
  const std::string s = config_to_json(cfg).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace mindflayer
