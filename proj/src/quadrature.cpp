#include "scslit/quadrature.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <mutex>
#include <numbers>
#include <tuple>

#include <fmt/format.h>

#include "scslit/errors.hpp"

namespace scslit {

double jacobi_moment(double a_exp, double b_exp) {
  const double log_beta = std::lgamma(a_exp + 1.0) + std::lgamma(b_exp + 1.0) -
                          std::lgamma(a_exp + b_exp + 2.0);
  return std::exp((a_exp + b_exp + 1.0) * std::numbers::ln2 + log_beta);
}

QuadratureRule gauss_jacobi(int n, double a_exp, double b_exp) {
  if (n < 1) throw DomainError(fmt::format("gauss_jacobi: order {} < 1", n));
  if (!(a_exp > -1.0) || !(b_exp > -1.0)) {
    throw DomainError(fmt::format(
        "gauss_jacobi: exponents ({}, {}) must exceed -1", a_exp, b_exp));
  }

  const double a = a_exp;
  const double b = b_exp;
  const double ab = a + b;

  // Three-term recurrence of the monic Jacobi polynomials.
  Eigen::VectorXd diag(n);
  Eigen::VectorXd sub(std::max(n - 1, 1));
  for (int k = 0; k < n; ++k) {
    const double s = 2.0 * k + ab;
    if (k == 0) {
      diag[k] = (b - a) / (ab + 2.0);
    } else {
      diag[k] = (b * b - a * a) / (s * (s + 2.0));
    }
  }
  for (int k = 1; k < n; ++k) {
    const double s = 2.0 * k + ab;
    double beta;
    if (k == 1) {
      // (k+a+b)/(2k+a+b-1) cancels to 1 here; keeps a+b = -1 finite.
      beta = 4.0 * (1.0 + a) * (1.0 + b) / ((2.0 + ab) * (2.0 + ab) * (3.0 + ab));
    } else {
      beta = 4.0 * k * (k + a) * (k + b) * (k + ab) /
             (s * s * (s + 1.0) * (s - 1.0));
    }
    sub[k - 1] = std::sqrt(beta);
  }

  QuadratureRule rule;
  rule.a_exp = a;
  rule.b_exp = b;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  const double mu0 = jacobi_moment(a, b);

  if (n == 1) {
    rule.nodes[0] = diag[0];
    rule.weights[0] = mu0;
    return rule;
  }

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver;
  solver.computeFromTridiagonal(diag, sub.head(n - 1), Eigen::ComputeEigenvectors);
  if (solver.info() != Eigen::Success) {
    throw DomainError("gauss_jacobi: tridiagonal eigensolver failed");
  }
  // Eigen returns eigenvalues in increasing order.
  for (int j = 0; j < n; ++j) {
    rule.nodes[j] = solver.eigenvalues()[j];
    const double v0 = solver.eigenvectors()(0, j);
    rule.weights[j] = mu0 * v0 * v0;
  }
  return rule;
}

std::shared_ptr<const QuadratureRule> cached_gauss_jacobi(int n, double a_exp,
                                                          double b_exp) {
  using Key = std::tuple<int, double, double>;
  static std::mutex mutex;
  static std::map<Key, std::shared_ptr<const QuadratureRule>> cache;

  const Key key{n, a_exp, b_exp};
  {
    std::lock_guard lock(mutex);
    if (auto it = cache.find(key); it != cache.end()) return it->second;
  }
  auto rule = std::make_shared<const QuadratureRule>(gauss_jacobi(n, a_exp, b_exp));
  std::lock_guard lock(mutex);
  return cache.emplace(key, std::move(rule)).first->second;
}

namespace {

double distance_to_segment(cplx s, cplx u, cplx v) {
  const cplx d = v - u;
  const double len2 = std::norm(d);
  if (len2 == 0.0) return std::abs(s - u);
  double tau = std::real((s - u) * std::conj(d)) / len2;
  tau = std::clamp(tau, 0.0, 1.0);
  return std::abs(s - (u + tau * d));
}

struct CompoundIntegrator {
  const AnchoredFactor& f;
  cplx p;
  cplx q;
  double left_exp;
  double right_exp;
  std::vector<cplx> singular;
  const SingularIntegralOptions& opts;
  std::shared_ptr<const QuadratureRule> fine_plain;
  std::shared_ptr<const QuadratureRule> coarse_plain;

  IntegrationResult total;

  // Panel [u, v]; le applies iff u == p, re applies iff v == q.
  double clearance(cplx u, cplx v, double le, double re) const {
    double best = std::numeric_limits<double>::infinity();
    for (const cplx& s : singular) {
      if (le != 0.0 && s == u) continue;
      if (re != 0.0 && s == v) continue;
      best = std::min(best, distance_to_segment(s, u, v));
    }
    return best;
  }

  // Endpoint weights not absorbed by the panel rule are applied pointwise.
  // `magnitude` receives the sum of |terms|, the scale of rounding noise.
  cplx apply(const QuadratureRule& rule, cplx u, cplx v, double le, double re,
             double* magnitude = nullptr) const {
    const cplx half = 0.5 * (v - u);
    const bool explicit_left = left_exp != 0.0 && le == 0.0;
    const bool explicit_right = right_exp != 0.0 && re == 0.0;
    cplx acc{0.0, 0.0};
    double mag = 0.0;
    for (int j = 0; j < rule.order(); ++j) {
      const double x = rule.nodes[j];
      const cplx anchor = x < 0.0 ? u : v;
      const cplx offset = x < 0.0 ? half * (1.0 + x) : -half * (1.0 - x);
      double w = rule.weights[j];
      if (explicit_left) w *= std::pow(std::abs((anchor - p) + offset), left_exp);
      if (explicit_right) w *= std::pow(std::abs((q - anchor) - offset), right_exp);
      const cplx term = w * f(anchor, offset);
      acc += term;
      mag += std::abs(term);
    }
    const double scale = std::pow(std::abs(half), rule.a_exp + rule.b_exp);
    if (magnitude != nullptr) *magnitude = std::abs(half) * scale * mag;
    return half * scale * acc;
  }

  void panel(cplx u, cplx v, double le, double re, int depth) {
    const double length = std::abs(v - u);
    const double clear = clearance(u, v, le, re);
    // Slack absorbs the rounding of midpoints next to a weighted endpoint.
    const double ulp = 16.0 * std::numeric_limits<double>::epsilon() *
                       std::max(std::abs(u), std::abs(v));
    // Clearance splits end after about log2(length / clear) levels, so only
    // accuracy-driven splits count against max_depth.
    const bool geometric = length > clear * (1.0 + 1e-9) + ulp;
    if (geometric && length <= ulp) {
      throw IntegrationError(
          fmt::format("integrate_singular: singularity on panel [({}, {}), ({}, {})]",
                      u.real(), u.imag(), v.real(), v.imag()),
          std::numeric_limits<double>::infinity());
    }
    bool split = geometric;
    cplx fine{};
    double err = 0.0;
    if (!split) {
      // Weight (1-x)^re (1+x)^le in the panel coordinate.
      std::shared_ptr<const QuadratureRule> fine_rule = fine_plain;
      std::shared_ptr<const QuadratureRule> coarse_rule = coarse_plain;
      if (le != 0.0 || re != 0.0) {
        fine_rule = cached_gauss_jacobi(opts.nodes, re, le);
        coarse_rule = cached_gauss_jacobi(std::max(opts.nodes / 2, 1), re, le);
      }
      double magnitude = 0.0;
      fine = apply(*fine_rule, u, v, le, re, &magnitude);
      const cplx coarse = apply(*coarse_rule, u, v, le, re);
      err = std::abs(fine - coarse);
      // Below the rounding noise of the sum further halving cannot help.
      const double noise = 64.0 * std::numeric_limits<double>::epsilon() * magnitude;
      split = err > std::max({opts.abs_tol, opts.rel_tol * std::abs(fine), noise});
    }
    if (split) {
      if (!geometric && depth >= opts.max_depth) {
        throw IntegrationError(
            fmt::format("integrate_singular: depth limit {} reached on panel "
                        "[({}, {}), ({}, {})], estimate {:.3e}",
                        opts.max_depth, u.real(), u.imag(), v.real(), v.imag(),
                        err),
            err);
      }
      const cplx mid = 0.5 * (u + v);
      const int next = geometric ? depth : depth + 1;
      panel(u, mid, le, 0.0, next);
      panel(mid, v, 0.0, re, next);
      return;
    }
    total.value += fine;
    total.error += err;
    if (opts.panel_log != nullptr) {
      opts.panel_log->push_back(Panel{u, v, le, re, depth, clear});
    }
  }
};

}  // namespace

IntegrationResult integrate_singular(const AnalyticFactor& f, cplx p, cplx q,
                                     double left_exp, double right_exp,
                                     std::span<const cplx> singularities,
                                     const SingularIntegralOptions& opts) {
  const AnchoredFactor g = [&f](cplx anchor, cplx offset) { return f(anchor + offset); };
  return integrate_singular(g, p, q, left_exp, right_exp, singularities, opts);
}

IntegrationResult integrate_singular(const AnchoredFactor& f, cplx p, cplx q,
                                     double left_exp, double right_exp,
                                     std::span<const cplx> singularities,
                                     const SingularIntegralOptions& opts) {
  if (!(left_exp > -1.0) || !(right_exp > -1.0)) {
    throw DomainError(fmt::format(
        "integrate_singular: endpoint exponents ({}, {}) must exceed -1",
        left_exp, right_exp));
  }
  if (opts.nodes < 2) throw DomainError("integrate_singular: need >= 2 nodes");
  if (p == q) return {};

  CompoundIntegrator ci{f, p, q, left_exp, right_exp,
                        std::vector<cplx>(singularities.begin(), singularities.end()),
                        opts,
                        cached_gauss_jacobi(opts.nodes, 0.0, 0.0),
                        cached_gauss_jacobi(std::max(opts.nodes / 2, 1), 0.0, 0.0),
                        {}};
  if (left_exp != 0.0) ci.singular.push_back(p);
  if (right_exp != 0.0) ci.singular.push_back(q);

  if (left_exp != 0.0 && right_exp != 0.0) {
    const cplx mid = 0.5 * (p + q);
    ci.panel(p, mid, left_exp, 0.0, 1);
    ci.panel(mid, q, 0.0, right_exp, 1);
  } else {
    ci.panel(p, q, left_exp, right_exp, 0);
  }
  return ci.total;
}

double elliptic_K(double k) {
  if (!(k >= 0.0) || !(k < 1.0)) {
    throw DomainError(fmt::format("elliptic_K: modulus {} outside [0, 1)", k));
  }
  double a = 1.0;
  double b = std::sqrt((1.0 - k) * (1.0 + k));
  for (int i = 0; i < 64 && std::abs(a - b) > 4.0 * std::numeric_limits<double>::epsilon() * a; ++i) {
    const double next_a = 0.5 * (a + b);
    b = std::sqrt(a * b);
    a = next_a;
  }
  return std::numbers::pi / (a + b);
}

}  // namespace scslit
