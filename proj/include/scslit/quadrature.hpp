#pragma once

#include <complex>
#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace scslit {

using cplx = std::complex<double>;

/// Gauss-Jacobi rule for the weight (1-x)^a_exp (1+x)^b_exp on [-1, 1].
struct QuadratureRule {
  std::vector<double> nodes;    // strictly increasing, inside (-1, 1)
  std::vector<double> weights;  // positive
  double a_exp = 0.0;
  double b_exp = 0.0;
  int order() const { return static_cast<int>(nodes.size()); }
};

/// Builds an n-point rule with the Golub-Welsch eigenvalue construction.
/// Exact for polynomials of degree <= 2n-1 against the Jacobi weight.
QuadratureRule gauss_jacobi(int n, double a_exp, double b_exp);

/// Shared, lazily built copy of gauss_jacobi(n, a_exp, b_exp). Thread safe.
std::shared_ptr<const QuadratureRule> cached_gauss_jacobi(int n, double a_exp,
                                                          double b_exp);

/// Integral of the Jacobi weight over [-1, 1]: 2^{a+b+1} B(a+1, b+1).
double jacobi_moment(double a_exp, double b_exp);

/// One accepted panel of a compound integration, for inspection.
struct Panel {
  cplx from;
  cplx to;
  double left_exp = 0.0;
  double right_exp = 0.0;
  int depth = 0;
  /// Distance from the panel to the nearest singularity that is not one of
  /// its own weighted endpoints (infinity when there is none).
  double clearance = 0.0;
};

struct SingularIntegralOptions {
  int nodes = 24;
  int max_depth = 40;
  double abs_tol = 1e-14;
  double rel_tol = 1e-13;
  /// When set, every accepted panel is appended here.
  std::vector<Panel>* panel_log = nullptr;
};

struct IntegrationResult {
  cplx value{0.0, 0.0};
  double error = 0.0;
};

using AnalyticFactor = std::function<cplx(cplx)>;

/// Factor evaluated at z = anchor + offset, where anchor is the nearer panel
/// end. Forming z - s as (anchor - s) + offset keeps full relative accuracy
/// when s sits within a few ulps of |z| of the panel.
using AnchoredFactor = std::function<cplx(cplx anchor, cplx offset)>;

/// Computes the integral over the straight segment p -> q of
///
///     |z - p|^left_exp * |q - z|^right_exp * f(z) dz
///
/// where f is analytic on the segment and `singularities` lists the points
/// (off the segment) where f is singular. The segment is split at its
/// midpoint when both endpoint exponents are nonzero, then panels are halved
/// until each is no longer than its distance to the nearest singularity and
/// the n-point and n/2-point rules agree to tolerance.
///
/// Throws DomainError for exponents <= -1 and IntegrationError when the
/// depth limit is hit.
IntegrationResult integrate_singular(const AnalyticFactor& f, cplx p, cplx q,
                                     double left_exp, double right_exp,
                                     std::span<const cplx> singularities,
                                     const SingularIntegralOptions& opts = {});

IntegrationResult integrate_singular(const AnchoredFactor& f, cplx p, cplx q,
                                     double left_exp, double right_exp,
                                     std::span<const cplx> singularities,
                                     const SingularIntegralOptions& opts = {});

/// Complete elliptic integral of the first kind, modulus convention
/// K(k) = int_0^{pi/2} (1 - k^2 sin^2 t)^{-1/2} dt, via the AGM.
double elliptic_K(double k);

}  // namespace scslit
