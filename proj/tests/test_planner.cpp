#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include "mindflayer/planner.hpp"

using namespace mindflayer;
using Catch::Approx;

namespace {

ClusterModel constant_cluster(std::vector<double> taus, double c = 0.0) {
  std::vector<WorkerProfile> w;
  for (double tau : taus) {
    w.emplace_back(tau, DelayDistribution::constant(c));
  }
  return ClusterModel(std::move(w));
}

/// Independent transcription of the collection-time curve used as the test
/// oracle: sorts by tau_i + t_i and evaluates t(m) directly.
double oracle_tm(const ClusterModel& cluster, const std::vector<double>& t,
                 double s_target, int m) {
  struct W {
    double cost, p;
  };
  std::vector<W> ws;
  for (std::size_t i = 0; i < cluster.workers.size(); ++i) {
    ws.push_back({cluster.workers[i].tau + t[i],
                  cluster.workers[i].delay.cdf(t[i])});
  }
  std::stable_sort(ws.begin(), ws.end(),
                   [](const W& a, const W& b) { return a.cost < b.cost; });
  double rate = 0.0, psum = 0.0;
  for (int j = 0; j < m; ++j) {
    rate += ws[static_cast<std::size_t>(j)].p / ws[static_cast<std::size_t>(j)].cost;
    psum += ws[static_cast<std::size_t>(j)].p;
  }
  return (s_target + psum) / rate;
}

}  // namespace

TEST_CASE("iteration count formula") {
  CHECK(mindflayer_iters(1.0, 1.0, 0.0, 0.1, 1.0) == 80);
  CHECK(mindflayer_iters(1.0, 1.0, 1.0, 0.1, 1.0) == 800);
  CHECK_THROWS_AS(mindflayer_iters(0.0, 1.0, 0.0, 0.1, 1.0),
                  std::invalid_argument);
  CHECK_THROWS_AS(mindflayer_iters(1.0, 1.0, 0.0, 0.0, 1.0),
                  std::invalid_argument);
  // Re-evaluate the formula independently on the paper-style constants.
  const double delta = 0.1249, l = 0.9999975, sig = 9e-5, eps = 1e-4, b = 2.5;
  const double expected =
      std::ceil(std::max(1.0, sig / (eps * b)) * 8.0 * l * delta / eps);
  CHECK(double(mindflayer_iters(delta, l, sig, eps, b)) == Approx(expected));
}

TEST_CASE("stepsize formula") {
  CHECK(mindflayer_gamma(1.0, 0.1, 0.0, 1.0) == Approx(0.5));
  CHECK(mindflayer_gamma(2.0, 0.1, 1.0, 1.0) == Approx(0.025));
  // Nondecreasing in eps.
  double prev = 0.0;
  for (double eps : {1e-6, 1e-5, 1e-4, 1e-3, 1e-2}) {
    const double g = mindflayer_gamma(1.0, eps, 1e-3, 2.0);
    CHECK(g >= prev);
    prev = g;
  }
}

TEST_CASE("iteration count is nonincreasing in the expected batch") {
  double prev = 1e18;
  for (double b : {0.25, 0.5, 1.0, 2.0, 4.0, 16.0}) {
    const double k = double(mindflayer_iters(1.0, 1.0, 1.0, 1e-3, b));
    CHECK(k <= prev);
    prev = k;
  }
}

TEST_CASE("plan on the single deterministic worker") {
  const auto cluster = constant_cluster({1.0});
  // sigma_sq = eps makes S = 1.
  const auto plan = mindflayer_plan(cluster, {0.0}, 0.1, 0.1, 1.0, 1.0);
  CHECK(plan.m_star == 1);
  CHECK(plan.p[0] == 1.0);
  CHECK(plan.B[0] == 1);  // t(1) = 2, b_1 = 1
  CHECK(plan.B_expected == Approx(1.0));
  CHECK(plan.time_bound == Approx(2.0 * 8.0 * 1.0 * 1.0 / 0.1));
}

TEST_CASE("plan enumerates the two-worker example") {
  const auto cluster = constant_cluster({1.0, 1.0});
  const auto plan = mindflayer_plan(cluster, {0.0, 0.0}, 0.1, 0.1, 1.0, 1.0);
  // Hand-enumerated: t(1) = 2, t(2) = (1+2)/2 = 1.5, so m* = 2 and
  // b = (0.5, 0.5) -> B = (1, 1).
  CHECK(oracle_tm(cluster, {0.0, 0.0}, 1.0, 1) == Approx(2.0));
  CHECK(oracle_tm(cluster, {0.0, 0.0}, 1.0, 2) == Approx(1.5));
  CHECK(plan.m_star == 2);
  CHECK(plan.B[0] == 1);
  CHECK(plan.B[1] == 1);
  CHECK(plan.B_expected == Approx(2.0));
  CHECK(plan.time_bound == Approx(1.5 * 8.0 / 0.1));
}

TEST_CASE("plan rejects clusters where no worker can succeed") {
  std::vector<WorkerProfile> w;
  w.emplace_back(1.0, DelayDistribution::lognormal(0.0, 1.0));
  const ClusterModel cluster(std::move(w));
  // t = 0 gives p = 0 for a continuous law.
  CHECK_THROWS_AS(mindflayer_plan(cluster, {0.0}, 1e-4, 1e-4, 1.0, 1.0),
                  std::invalid_argument);
}

TEST_CASE("theorem-3 structure holds on 1000 random instances") {
  RngStream rng(404);
  for (int inst = 0; inst < 1000; ++inst) {
    const int n = 1 + int(rng.next_double() * 15.99);
    std::vector<WorkerProfile> ws;
    for (int i = 0; i < n; ++i) {
      const double tau = 0.1 + 4.9 * rng.next_double();
      const double pick = rng.next_double();
      if (pick < 0.4) {
        ws.emplace_back(tau, DelayDistribution::lognormal(
                                 -1.0 + 2.0 * rng.next_double(),
                                 0.2 + 2.8 * rng.next_double()));
      } else if (pick < 0.6) {
        ws.emplace_back(tau,
                        DelayDistribution::constant(2.0 * rng.next_double()));
      } else if (pick < 0.8) {
        ws.emplace_back(tau, DelayDistribution::inf_bernoulli(
                                 0.05 + 0.4 * rng.next_double()));
      } else {
        ws.emplace_back(tau, DelayDistribution::log_t(
                                 5, 0.2 + 1.5 * rng.next_double()));
      }
    }
    const ClusterModel cluster(std::move(ws));
    const auto t = choose_clip_times_median(cluster);
    const double sigma_sq = rng.next_double() * 1e-3;
    const double eps = 1e-4;
    const auto plan = mindflayer_plan(cluster, t, sigma_sq, eps, 1.0, 1.0);

    // Sort (cost, index) the same way the planner does.
    std::vector<std::pair<double, int>> order;
    for (int i = 0; i < n; ++i) {
      order.emplace_back(cluster.workers[static_cast<std::size_t>(i)].tau +
                             t[static_cast<std::size_t>(i)],
                         i);
    }
    std::stable_sort(order.begin(), order.end());
    const double s_target = std::max(1.0, sigma_sq / eps);
    const double tm_star = oracle_tm(cluster, t, s_target, plan.m_star);

    // tau_{m*} + t_{m*} < t(m*), so every active b_i is strictly positive.
    REQUIRE(order[static_cast<std::size_t>(plan.m_star - 1)].first < tm_star);
    double b_expected = 0.0;
    for (int r = 0; r < n; ++r) {
      const int idx = order[static_cast<std::size_t>(r)].second;
      if (r < plan.m_star) {
        const double b = tm_star / order[static_cast<std::size_t>(r)].first - 1.0;
        REQUIRE(b > 0.0);
        REQUIRE(plan.B[static_cast<std::size_t>(idx)] >= 1);
      } else {
        REQUIRE(plan.B[static_cast<std::size_t>(idx)] == 0);
      }
      b_expected += plan.p[static_cast<std::size_t>(idx)] *
                    double(plan.B[static_cast<std::size_t>(idx)]);
    }
    REQUIRE(b_expected >= s_target - 1e-9);
    REQUIRE(plan.B_expected == Approx(b_expected));
  }
}

TEST_CASE("deterministic reduction equals the harmonic-mean formula") {
  RngStream rng(77);
  for (int inst = 0; inst < 100; ++inst) {
    const int n = 1 + int(rng.next_double() * 7.99);
    std::vector<double> taus;
    for (int i = 0; i < n; ++i) taus.push_back(0.2 + 5.0 * rng.next_double());
    const auto cluster = constant_cluster(taus);
    const double sigma_sq = rng.next_double() * 2e-3;
    const double eps = 1e-4, delta = 0.5, l = 1.3;
    const auto plan = mindflayer_plan(cluster, std::vector<double>(n, 0.0),
                                      sigma_sq, eps, delta, l);
    // Independent transcription of the deterministic Rennala complexity:
    // min_m (1/m sum_{j<=m} 1/tau_j)^{-1} (S/m + 1) * 8 Delta L / eps.
    std::sort(taus.begin(), taus.end());
    const double s_target = std::max(1.0, sigma_sq / eps);
    double best = kInfiniteTime;
    double inv_sum = 0.0;
    for (int m = 1; m <= n; ++m) {
      inv_sum += 1.0 / taus[static_cast<std::size_t>(m - 1)];
      const double hm = double(m) / inv_sum;
      best = std::min(best, hm * (s_target / m + 1.0));
    }
    const double reference = best * 8.0 * delta * l / eps;
    REQUIRE(plan.time_bound == Approx(reference).epsilon(1e-12));
  }
}

TEST_CASE("median clip-time rule") {
  {
    std::vector<WorkerProfile> ws;
    for (double s : {0.5, 1.0, 7.0}) {
      ws.emplace_back(1.0, DelayDistribution::lognormal(0.0, s));
    }
    const auto t = choose_clip_times_median(ClusterModel(std::move(ws)));
    for (double ti : t) CHECK(ti == Approx(1.0));
  }
  {
    std::vector<WorkerProfile> ws;
    ws.emplace_back(1.0, DelayDistribution::constant(2.5));
    ws.emplace_back(1.0, DelayDistribution::inf_bernoulli(0.4));
    const auto t = choose_clip_times_median(ClusterModel(std::move(ws)));
    CHECK(t[0] == 2.5);
    CHECK(t[1] == 0.0);
  }
  {
    std::vector<WorkerProfile> ws;
    ws.emplace_back(1.0, DelayDistribution::inf_bernoulli(0.6));
    CHECK_THROWS_AS(choose_clip_times_median(ClusterModel(std::move(ws))),
                    std::invalid_argument);
  }
}

TEST_CASE("clip-time optimizer handles step CDFs via jump points") {
  SECTION("deterministic worker pins t = 0") {
    const auto cluster = constant_cluster({2.0});
    const auto res = choose_clip_times_optimize(cluster, 0.1, 0.1, {0.5});
    CHECK(res.t[0] == 0.0);
    CHECK(res.m == 1);
    CHECK(res.value == Approx(2.0 * (1.0 + 1.0)));  // tau (S + p) / p, S=p=1
  }
  SECTION("InfBernoulli candidate is its only jump point") {
    std::vector<WorkerProfile> ws;
    ws.emplace_back(1.0, DelayDistribution::inf_bernoulli(0.3));
    const ClusterModel cluster(std::move(ws));
    const auto res = choose_clip_times_optimize(cluster, 0.1, 0.1, {0.5});
    CHECK(res.t[0] == 0.0);
    // t(1) = (tau + 0)/p * (S + p) with p = 0.7, S = 1.
    CHECK(res.value == Approx(1.0 / 0.7 * 1.7));
  }
}

TEST_CASE("clip-time optimizer beats the median choice and the grid oracle") {
  std::vector<WorkerProfile> ws;
  ws.emplace_back(1.0, DelayDistribution::lognormal(0.0, 2.0));
  ws.emplace_back(2.0, DelayDistribution::lognormal(0.3, 1.0));
  const ClusterModel cluster(std::move(ws));
  const double sigma_sq = 5e-4, eps = 1e-4;
  const double s_target = std::max(1.0, sigma_sq / eps);
  const auto res =
      choose_clip_times_optimize(cluster, sigma_sq, eps, {0.25, 0.5, 0.75});

  const auto t_med = choose_clip_times_median(cluster);
  double med_best = kInfiniteTime;
  for (int m = 1; m <= 2; ++m) {
    med_best = std::min(med_best, oracle_tm(cluster, t_med, s_target, m));
  }
  CHECK(res.value <= med_best + 1e-9);

  // 50x50 quantile-lattice oracle.
  double lattice_best = kInfiniteTime;
  for (int a = 1; a <= 50; ++a) {
    for (int b = 1; b <= 50; ++b) {
      const std::vector<double> t = {
          cluster.workers[0].delay.quantile(a / 51.0),
          cluster.workers[1].delay.quantile(b / 51.0)};
      for (int m = 1; m <= 2; ++m) {
        lattice_best = std::min(lattice_best, oracle_tm(cluster, t, s_target, m));
      }
    }
  }
  CHECK(res.value <= lattice_best + 1e-9);
}

TEST_CASE("rennala iteration formula matches the shared expression") {
  CHECK(rennala_iters(1.0, 1.0, 0.0, 0.1, 1) == 80);
  CHECK(rennala_iters(1.0, 1.0, 1.0, 0.1, 1) == 800);
  // With sigma^2/eps <= S the count collapses to ceil(8 Delta L / eps).
  CHECK(rennala_iters(1.0, 1.0, 5e-5, 1e-4, 4) ==
        std::int64_t(std::ceil(8.0 / 1e-4)));
}

TEST_CASE("single-device time formulas") {
  SECTION("deterministic worker, t = 0") {
    const auto d = DelayDistribution::constant(0.0);
    const auto out = single_device_times(1.0, d, 0.0, 0.1, 0.1, 1.0, 1.0, 2);
    const double k = double(rennala_iters(1.0, 1.0, 0.1, 0.1, 2));
    CHECK(out.t_rennala == Approx(k * 2.0 * 1.0));
    CHECK(out.t_mindflayer_bound == Approx(k * 2.0 * 1.0));
  }
  SECTION("InfBernoulli: Rennala diverges, the clipped bound stays finite") {
    const auto d = DelayDistribution::inf_bernoulli(0.25);
    const auto out = single_device_times(1.0, d, 2.0, 0.0, 0.1, 1.0, 1.0, 3);
    CHECK(out.t_rennala == kInfiniteTime);
    const double k = double(rennala_iters(1.0, 1.0, 0.0, 0.1, 3));
    CHECK(out.t_mindflayer_bound == Approx(k / 0.75 * 3.0 * (1.0 + 2.0)));
  }
  SECTION("lognormal ratio at the median matches the closed form") {
    const auto d = DelayDistribution::lognormal(0.0, 2.0);
    const auto out = single_device_times(1.0, d, 1.0, 0.0, 0.1, 1.0, 1.0, 1);
    const double ratio = out.t_rennala / out.t_mindflayer_bound;
    CHECK(ratio == Approx((1.0 + std::exp(2.0)) / (2.0 * (1.0 + 1.0))));
  }
  SECTION("p = 0 clip time sends the bound to +inf") {
    const auto d = DelayDistribution::lognormal(0.0, 1.0);
    const auto out = single_device_times(1.0, d, 0.0, 0.0, 0.1, 1.0, 1.0, 1);
    CHECK(out.t_mindflayer_bound == kInfiniteTime);
  }
}

TEST_CASE("proposition-2 ratio") {
  CHECK(prop2_ratio(1.0, DelayDistribution::constant(2.0)) == Approx(0.5));
  // gap = e^{4.5} - 1, med = 1: ratio = (1 + e^{4.5}) / 4.
  CHECK(prop2_ratio(1.0, DelayDistribution::lognormal(0.0, 3.0)) ==
        Approx((1.0 + std::exp(4.5)) / 4.0).epsilon(1e-12));
  CHECK(prop2_ratio(1.0, DelayDistribution::log_cauchy(1.0)) == kInfiniteTime);
  // Identity: gap = (tau + med)(2 alpha - 1) makes the ratio exactly alpha.
  const double tau = 1.0;
  for (double alpha : {1.0, 2.0, 5.0, 10.0}) {
    const double gap = (tau + 1.0) * (2.0 * alpha - 1.0);
    const double s = std::sqrt(2.0 * std::log1p(gap));  // lognormal(0,s) gap
    const double r = prop2_ratio(tau, DelayDistribution::lognormal(0.0, s));
    CHECK(r == Approx(alpha).epsilon(1e-9));
  }
}

TEST_CASE("vecna plan") {
  SECTION("single deterministic worker") {
    const auto cluster = constant_cluster({2.0});
    const double sigma_sq = 3e-4, eps = 1e-4;
    const auto plan = vecna_plan(cluster, {0.0}, sigma_sq, eps, 1.0, 1.0);
    // p = 1 kills the failure term: T = tau + tau sigma^2 / eps.
    const double t_ref = 2.0 + 2.0 * sigma_sq / eps;
    CHECK(plan.T == Approx(t_ref).epsilon(1e-12));
    CHECK(plan.B[0] == std::int64_t(std::ceil(t_ref / 2.0)));
    CHECK(plan.alpha == 0.0);
    CHECK(plan.p[0] == 1.0);
  }

  SECTION("five-worker lognormal instance against an independent transcription") {
    std::vector<WorkerProfile> ws;
    for (int i = 0; i < 5; ++i) {
      ws.emplace_back(std::sqrt(i + 2.0), DelayDistribution::lognormal(0.0, 1.5));
    }
    const ClusterModel cluster(std::move(ws));
    const auto t = choose_clip_times_median(cluster);
    const double sigma_sq = 9e-5, eps = 1e-4, delta = 0.12, l = 1.0;
    const auto plan = vecna_plan(cluster, t, sigma_sq, eps, delta, l);

    // Transcribe Theorem 7 / Theorem 5 from scratch.
    std::vector<double> cost(5), p(5);
    for (int i = 0; i < 5; ++i) {
      cost[static_cast<std::size_t>(i)] =
          cluster.workers[static_cast<std::size_t>(i)].tau +
          t[static_cast<std::size_t>(i)];
      p[static_cast<std::size_t>(i)] =
          cluster.workers[static_cast<std::size_t>(i)].delay.cdf(
              t[static_cast<std::size_t>(i)]);
    }
    const double max_cost = *std::max_element(cost.begin(), cost.end());
    double term_sigma = 0.0, term_fail = 0.0;
    for (int i = 0; i < 5; ++i) {
      term_sigma += cost[static_cast<std::size_t>(i)] /
                    p[static_cast<std::size_t>(i)] / 5.0;
      term_fail += (1.0 - p[static_cast<std::size_t>(i)]) /
                   p[static_cast<std::size_t>(i)] *
                   cost[static_cast<std::size_t>(i)] / 5.0;
    }
    const double t_ref = max_cost + term_sigma * sigma_sq / (5.0 * eps) +
                         term_fail * delta * l / (5.0 * eps);
    REQUIRE(plan.T == Approx(t_ref).epsilon(1e-12));
    double alpha_ref = 0.0, zeta_ref = 0.0;
    for (int i = 0; i < 5; ++i) {
      const double b = std::ceil(t_ref / cost[static_cast<std::size_t>(i)]);
      REQUIRE(double(plan.B[static_cast<std::size_t>(i)]) == Approx(b));
      REQUIRE(plan.B[static_cast<std::size_t>(i)] >= 1);
      alpha_ref += (1.0 - p[static_cast<std::size_t>(i)]) /
                   (p[static_cast<std::size_t>(i)] * b);
      zeta_ref += 1.0 / (p[static_cast<std::size_t>(i)] * b);
    }
    alpha_ref *= l / 25.0;
    zeta_ref *= sigma_sq / 25.0;
    REQUIRE(plan.alpha == Approx(alpha_ref).epsilon(1e-12));
    REQUIRE(plan.zeta == Approx(zeta_ref).epsilon(1e-12));
    const double k_ref = std::ceil(
        12.0 * delta * l / eps *
        std::max({1.0, 12.0 * delta * alpha_ref / eps, 2.0 * zeta_ref / eps}));
    REQUIRE(double(plan.K) == Approx(k_ref));
    const double g_ref =
        std::min({1.0 / std::sqrt(l * alpha_ref * k_ref), 1.0 / l,
                  eps / (2.0 * l * zeta_ref)});
    REQUIRE(plan.gamma == Approx(g_ref).epsilon(1e-12));
    REQUIRE(plan.time_bound == Approx(2.0 * t_ref * k_ref).epsilon(1e-12));
  }

  SECTION("doubling every B never increases alpha or zeta") {
    std::vector<WorkerProfile> ws;
    for (int i = 0; i < 4; ++i) {
      ws.emplace_back(1.0 + i, DelayDistribution::lognormal(0.0, 1.0));
    }
    const ClusterModel cluster(std::move(ws));
    const auto t = choose_clip_times_median(cluster);
    const auto plan = vecna_plan(cluster, t, 1e-4, 1e-4, 1.0, 1.0);
    double alpha2 = 0.0, zeta2 = 0.0;
    for (int i = 0; i < 4; ++i) {
      alpha2 += (1.0 - plan.p[static_cast<std::size_t>(i)]) /
                (plan.p[static_cast<std::size_t>(i)] *
                 double(2 * plan.B[static_cast<std::size_t>(i)]));
      zeta2 += 1.0 / (plan.p[static_cast<std::size_t>(i)] *
                      double(2 * plan.B[static_cast<std::size_t>(i)]));
    }
    alpha2 *= 1.0 / 16.0;
    zeta2 *= 1e-4 / 16.0;
    CHECK(alpha2 <= plan.alpha);
    CHECK(zeta2 <= plan.zeta);
  }

  SECTION("zero success probability names the offending worker") {
    std::vector<WorkerProfile> ws;
    ws.emplace_back(1.0, DelayDistribution::constant(0.0));
    ws.emplace_back(1.0, DelayDistribution::lognormal(0.0, 1.0));
    const ClusterModel cluster(std::move(ws));
    CHECK_THROWS_WITH(vecna_plan(cluster, {0.0, 0.0}, 1e-4, 1e-4, 1.0, 1.0),
                      Catch::Matchers::ContainsSubstring("worker 1"));
  }
}

TEST_CASE("classical SGD formulas cover the degenerate branches") {
  CHECK(classical_sgd_gamma(2.0, 1e-3, 0.0, 1.0, 0.0, 100) == Approx(0.5));
  const double g = classical_sgd_gamma(1.0, 1e-3, 4.0, 1.0, 0.0, 100);
  CHECK(g == Approx(1.0 / std::sqrt(400.0)));
  CHECK(classical_sgd_iters(1.0, 1.0, 0.5, 0.0, 1.0, 0.0) == 24);
}

TEST_CASE("minibatch round time") {
  SECTION("deterministic cluster gives max tau") {
    const auto cluster = constant_cluster({1.0, 3.0, 2.0});
    RngStream rng(1);
    CHECK(minibatch_round_time(cluster, rng) == Approx(3.0));
  }
  SECTION("an infinite draw propagates") {
    std::vector<WorkerProfile> ws;
    ws.emplace_back(1.0, DelayDistribution::inf_bernoulli(0.95));
    const ClusterModel cluster(std::move(ws));
    RngStream rng(3);
    bool saw_inf = false;
    for (int i = 0; i < 64 && !saw_inf; ++i) {
      saw_inf = !is_finite_time(minibatch_round_time(cluster, rng));
    }
    CHECK(saw_inf);
  }
  SECTION("lognormal cluster mean matches a direct Monte Carlo oracle") {
    std::vector<WorkerProfile> ws;
    for (int i = 0; i < 4; ++i) {
      ws.emplace_back(1.0 + 0.5 * i, DelayDistribution::lognormal(0.0, 0.5));
    }
    const ClusterModel cluster(std::move(ws));
    RngStream a(10);
    double mean = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) mean += minibatch_round_time(cluster, a);
    mean /= n;
    // Oracle: independent implementation of max_i(tau_i + eta_i).
    RngStream b(11);
    double oracle = 0.0;
    for (int i = 0; i < n; ++i) {
      double worst = 0.0;
      for (const auto& w : cluster.workers) {
        worst = std::max(worst, w.tau + w.delay.sample(b));
      }
      oracle += worst;
    }
    oracle /= n;
    CHECK(mean == Approx(oracle).epsilon(0.02));
  }
}
