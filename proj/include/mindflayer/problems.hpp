#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mindflayer/rng.hpp"

namespace mindflayer {

/// First-order oracle for one objective: exact value/gradient, an unbiased
/// stochastic gradient with variance bounded by sigma_sq, and the constants
/// every planner formula needs.
struct ProblemOracle {
  int dim = 0;
  double smoothness = 0.0;  // L
  double f_inf = 0.0;       // lower bound on f
  double sigma_sq = 0.0;    // E||sg - grad||^2 <= sigma_sq

  std::function<double(std::span<const double>)> value;
  std::function<void(std::span<const double>, std::span<double>)> grad;
  std::function<void(std::span<const double>, std::span<double>, RngStream&)>
      stochastic_grad;
};

struct HeterogeneousProblem {
  std::vector<ProblemOracle> components;  // f_i
  ProblemOracle aggregate;                // f = (1/n) sum f_i
};

// ---------------------------------------------------------------------------
// The benchmark quadratic: f(x) = 1/2 x^T A x - b^T x with
// A = 1/4 tridiag(-1, 2, -1). Matrix-free throughout.
// ---------------------------------------------------------------------------

class TridiagQuadratic {
 public:
  TridiagQuadratic(int d, std::vector<double> b) : d_(d), b_(std::move(b)) {
    if (d < 2) throw std::invalid_argument("TridiagQuadratic requires d >= 2");
    if (static_cast<int>(b_.size()) != d) {
      throw std::invalid_argument("TridiagQuadratic: b has wrong dimension");
    }
  }

  /// The default linear term b = -1/4 e_1.
  static TridiagQuadratic paper_instance(int d) {
    std::vector<double> b(static_cast<std::size_t>(d), 0.0);
    b[0] = -0.25;
    return TridiagQuadratic(d, std::move(b));
  }

  int dim() const { return d_; }
  const std::vector<double>& linear_term() const { return b_; }

  void apply_matrix(std::span<const double> x, std::span<double> out) const {
    const int d = d_;
    for (int i = 0; i < d; ++i) {
      double v = 0.5 * x[static_cast<std::size_t>(i)];
      if (i > 0) v -= 0.25 * x[static_cast<std::size_t>(i - 1)];
      if (i + 1 < d) v -= 0.25 * x[static_cast<std::size_t>(i + 1)];
      out[static_cast<std::size_t>(i)] = v;
    }
  }

  double value(std::span<const double> x) const {
    const int d = d_;
    double quad = 0.0, lin = 0.0;
    for (int i = 0; i < d; ++i) {
      double ax = 0.5 * x[static_cast<std::size_t>(i)];
      if (i > 0) ax -= 0.25 * x[static_cast<std::size_t>(i - 1)];
      if (i + 1 < d) ax -= 0.25 * x[static_cast<std::size_t>(i + 1)];
      quad += x[static_cast<std::size_t>(i)] * ax;
      lin += b_[static_cast<std::size_t>(i)] * x[static_cast<std::size_t>(i)];
    }
    return 0.5 * quad - lin;
  }

  void grad(std::span<const double> x, std::span<double> out) const {
    apply_matrix(x, out);
    for (int i = 0; i < d_; ++i) {
      out[static_cast<std::size_t>(i)] -= b_[static_cast<std::size_t>(i)];
    }
  }

  /// Largest eigenvalue of A in closed form: (1 + cos(pi/(d+1))) / 2.
  double smoothness() const {
    return 0.5 * (1.0 + std::cos(std::numbers::pi / (d_ + 1)));
  }

  struct CgResult {
    std::vector<double> x;
    double f_min = 0.0;
    int iterations = 0;
    double residual = 0.0;
  };

  /// Minimizes f by conjugate gradients on A x = b. Throws if the residual
  /// does not reach `tol` within 10*d iterations.
  CgResult minimize(double tol = 1e-10, std::span<const double> x0 = {}) const {
    const std::size_t d = static_cast<std::size_t>(d_);
    CgResult res;
    res.x.assign(d, 0.0);
    if (!x0.empty()) {
      if (x0.size() != d) throw std::invalid_argument("minimize: bad x0 size");
      std::copy(x0.begin(), x0.end(), res.x.begin());
    }
    std::vector<double> r(d), p(d), ap(d);
    apply_matrix(res.x, ap);
    for (std::size_t i = 0; i < d; ++i) r[i] = b_[i] - ap[i];
    p = r;
    double rr = 0.0;
    for (double v : r) rr += v * v;
    const int max_iters = 10 * d_;
    int it = 0;
    while (std::sqrt(rr) > tol) {
      if (it >= max_iters) {
        throw std::runtime_error(
            "conjugate gradients did not reach residual " + std::to_string(tol) +
            " within " + std::to_string(max_iters) + " iterations");
      }
      apply_matrix(p, ap);
      double pap = 0.0;
      for (std::size_t i = 0; i < d; ++i) pap += p[i] * ap[i];
      const double alpha = rr / pap;
      for (std::size_t i = 0; i < d; ++i) {
        res.x[i] += alpha * p[i];
        r[i] -= alpha * ap[i];
      }
      double rr_new = 0.0;
      for (double v : r) rr_new += v * v;
      const double beta = rr_new / rr;
      for (std::size_t i = 0; i < d; ++i) p[i] = r[i] + beta * p[i];
      rr = rr_new;
      ++it;
    }
    res.iterations = it;
    res.residual = std::sqrt(rr);
    // f(x*) = -1/2 b^T x* at the solution of A x* = b.
    double bx = 0.0;
    for (std::size_t i = 0; i < d; ++i) bx += b_[i] * res.x[i];
    res.f_min = -0.5 * bx;
    return res;
  }

 private:
  int d_;
  std::vector<double> b_;
};

/// f(x*) for the quadratic, solved by CG to residual <= 1e-10.
inline double solve_f_inf(const TridiagQuadratic& q) {
  return q.minimize().f_min;
}

namespace detail {

inline ProblemOracle make_quadratic_oracle(TridiagQuadratic q,
                                           double noise_std) {
  if (!(noise_std >= 0.0)) {
    throw std::invalid_argument("noise_std must be >= 0");
  }
  ProblemOracle oracle;
  oracle.dim = q.dim();
  oracle.smoothness = q.smoothness();
  oracle.f_inf = solve_f_inf(q);
  oracle.sigma_sq = noise_std * noise_std * q.dim();
  auto shared = std::make_shared<TridiagQuadratic>(std::move(q));
  oracle.value = [shared](std::span<const double> x) {
    return shared->value(x);
  };
  oracle.grad = [shared](std::span<const double> x, std::span<double> out) {
    shared->grad(x, out);
  };
  oracle.stochastic_grad = [shared, noise_std](std::span<const double> x,
                                               std::span<double> out,
                                               RngStream& rng) {
    shared->grad(x, out);
    if (noise_std > 0.0) {
      for (double& v : out) v += noise_std * rng.next_gaussian();
    }
  };
  return oracle;
}

}  // namespace detail

/// The benchmark quadratic with i.i.d. N(0, noise_std^2) noise added to every
/// gradient coordinate, so sigma_sq = noise_std^2 * d.
inline ProblemOracle quad_problem(int d, double noise_std) {
  return detail::make_quadratic_oracle(TridiagQuadratic::paper_instance(d),
                                       noise_std);
}

/// n shifted quadratics sharing A: f_i(x) = 1/2 x^T A x - b_i^T x with
/// b_i = -1/4 e_1 + shift_scale * u_i, where u_i are fixed seeded unit
/// vectors drawn from `rng`. shift_scale = 0 reduces to the homogeneous case.
inline HeterogeneousProblem hetero_quad_family(int d, int n, double shift_scale,
                                               double noise_std,
                                               RngStream& rng) {
  if (d < 2) throw std::invalid_argument("hetero_quad_family requires d >= 2");
  if (n < 1) throw std::invalid_argument("hetero_quad_family requires n >= 1");
  HeterogeneousProblem hp;
  std::vector<double> b_mean(static_cast<std::size_t>(d), 0.0);
  for (int i = 0; i < n; ++i) {
    std::vector<double> u(static_cast<std::size_t>(d));
    double norm_sq = 0.0;
    for (double& v : u) {
      v = rng.next_gaussian();
      norm_sq += v * v;
    }
    const double inv_norm = 1.0 / std::sqrt(norm_sq);
    std::vector<double> b(static_cast<std::size_t>(d), 0.0);
    b[0] = -0.25;
    if (shift_scale != 0.0) {
      for (int j = 0; j < d; ++j) {
        b[static_cast<std::size_t>(j)] +=
            shift_scale * u[static_cast<std::size_t>(j)] * inv_norm;
      }
    }
    for (int j = 0; j < d; ++j) {
      b_mean[static_cast<std::size_t>(j)] += b[static_cast<std::size_t>(j)] / n;
    }
    hp.components.push_back(detail::make_quadratic_oracle(
        TridiagQuadratic(d, std::move(b)), noise_std));
  }
  hp.aggregate = detail::make_quadratic_oracle(
      TridiagQuadratic(d, std::move(b_mean)), noise_std);
  return hp;
}

/// Independent numerical estimate of the quadratic's smoothness constant:
/// power iteration on the resolvent (I - A)^{-1} (CG inner solves), whose
/// dominant eigenvalue 1/(1 - L) converges orders of magnitude faster than
/// plain power iteration on A for this nearly-flat top spectrum.
inline double estimate_smoothness(const TridiagQuadratic& q, double tol = 1e-13,
                                  int max_outer = 200) {
  const int d = q.dim();
  const std::size_t n = static_cast<std::size_t>(d);
  // (I - A) is SPD here because all eigenvalues of A lie in (0, 1).
  auto apply_shifted = [&](std::span<const double> x, std::span<double> out) {
    q.apply_matrix(x, out);
    for (std::size_t i = 0; i < n; ++i) out[i] = x[i] - out[i];
  };
  auto cg_solve = [&](const std::vector<double>& rhs, std::vector<double>& x) {
    x.assign(n, 0.0);
    std::vector<double> r = rhs, p = rhs, ap(n);
    double rr = 0.0;
    for (double v : r) rr += v * v;
    const double target = 1e-26 * rr;
    for (int it = 0; it < 40 * d && rr > target; ++it) {
      apply_shifted(p, ap);
      double pap = 0.0;
      for (std::size_t i = 0; i < n; ++i) pap += p[i] * ap[i];
      const double alpha = rr / pap;
      for (std::size_t i = 0; i < n; ++i) {
        x[i] += alpha * p[i];
        r[i] -= alpha * ap[i];
      }
      double rr_new = 0.0;
      for (double v : r) rr_new += v * v;
      const double beta = rr_new / rr;
      for (std::size_t i = 0; i < n; ++i) p[i] = r[i] + beta * p[i];
      rr = rr_new;
    }
  };
  RngStream rng(0xeafULL);
  std::vector<double> v(n), w(n);
  for (double& x : v) x = rng.next_gaussian();
  double nu = 0.0, nu_prev = 0.0;
  for (int it = 0; it < max_outer; ++it) {
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    for (double& x : v) x /= norm;
    cg_solve(v, w);
    nu = 0.0;  // Rayleigh quotient of (I - A)^{-1}
    for (std::size_t i = 0; i < n; ++i) nu += v[i] * w[i];
    std::swap(v, w);
    if (it > 2 && std::abs(nu - nu_prev) <= tol * std::abs(nu)) break;
    nu_prev = nu;
  }
  return 1.0 - 1.0 / nu;
}

// Small vector helpers shared by the engine and tests.

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double squared_norm(std::span<const double> a) { return dot(a, a); }

}  // namespace mindflayer
