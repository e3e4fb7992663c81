#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "scslit/loewner.hpp"
#include "scslit/sc_core.hpp"

namespace scslit {

/// Lengths of the sides between consecutive finite prevertices (including 0
/// and 1) of f = d e^{i beta} int prod (zeta - p)^sigma, in boundary order.
/// When the vertex at infinity is finite (alpha_infinity > 0) the two sides
/// through it follow: last prevertex to infinity, then infinity to the first.
struct SideLengthReport {
  std::vector<double> lengths;
  std::vector<std::string> sides;  // "a11-lambda1", ...
  std::vector<double> residuals;   // lengths - targets, when targets are given
  double jacobian_condition = 0.0; // 2-norm estimate, 0 when not computed
  double d = 0.0;
  double beta = 0.0;
};

SideLengthReport side_lengths(const AccessoryState& state, const MapOptions& opts = {});

/// Residuals against targets; throws DomainError on a size mismatch.
SideLengthReport side_lengths(const AccessoryState& state, std::span<const double> targets,
                              const MapOptions& opts = {});

struct NewtonOptions {
  double tol = 1e-10;         // on the max-norm residual
  int max_iterations = 50;
  int max_halvings = 30;
  double fd_step = 1e-6;      // relative: h = fd_step * (1 + |x|)
  double max_condition = 1e14;
  /// Indices into the side_lengths list matched against the targets; empty
  /// selects the first sides in boundary order.
  std::vector<std::size_t> sides;
  MapOptions map{};
};

struct NewtonReport {
  AccessoryState state;
  int iterations = 0;                    // residual evaluations; 1 if the guess converged
  std::vector<double> residual_history;  // max-norm, one entry per iteration
  double jacobian_condition = 0.0;       // at the last Newton step taken
};

/// Unknowns are d = |c| and every moving prevertex; arg c stays fixed. One
/// target per unknown, matched against the sides picked by opts.sides.
NewtonReport solve_prevertices(const AccessoryState& guess, std::span<const double> targets,
                               const NewtonOptions& opts = {});

/// Side-length map on the packed unknowns of `like` (see pack_state).
std::vector<double> side_length_map(const AccessoryState& like, std::span<const double> x,
                                    const MapOptions& opts = {});

/// Central-difference Jacobian of side_length_map.
std::vector<std::vector<double>> side_length_jacobian(const AccessoryState& like,
                                                      std::span<const double> x,
                                                      double fd_step = 1e-6,
                                                      const MapOptions& opts = {});

struct VerifyThresholds {
  double straightness = 1e-5;
  double ratio = 1e-4;
  double fixed_vertex = 1e-6;
  double length_param = 1e-6;
  double residue = 1e-8;
  double control_sum = 1e-14;
  double arg_c = 1e-9;
  double exponent_sum = 1e-12;
  /// Ratios are checked from this fraction of the target length on.
  double ratio_start = 0.01;
  /// Residue identity is sampled at every this-many steps.
  std::size_t residue_stride = 50;
  int residue_points = 5;
  /// Steps where one ulp of state already moves a geometric deviation past
  /// its threshold are held to this many ulps instead.
  double floor_factor = 4.0;
};

/// Checks beyond double resolution, typically next to a collapse.
struct UnresolvedSteps {
  std::size_t steps = 0;
  double deviation = 0.0;    // largest geometric deviation among them
  double floor_ratio = 0.0;  // largest deviation / one-ulp floor
  bool ok = true;
};

/// Geometric maxima cover the resolved checks only; see `unresolved`.
struct VerifyReport {
  double straightness = 0.0;   // max distance of a tip from its ray
  double ratio = 0.0;          // max |L_i / L_p - ratio_i / ratio_p|
  double fixed_vertex = 0.0;   // max |f(a_k) - A_k| over vertices, f(1) and bases
  double length_param = 0.0;   // max |L_p - t|
  double residue = 0.0;        // max residue-identity mismatch
  double control_sum = 0.0;    // max |sum C_i - 1|
  double arg_c = 0.0;          // max |arg c - arg c(0)|
  double exponent_sum = 0.0;
  std::size_t ordering_violations = 0;
  std::size_t steps = 0;
  UnresolvedSteps unresolved;

  bool straightness_ok = true;
  bool ratio_ok = true;
  bool fixed_vertex_ok = true;
  bool length_param_ok = true;
  bool residue_ok = true;
  bool control_sum_ok = true;
  bool arg_c_ok = true;
  bool exponent_sum_ok = true;
  bool ordering_ok = true;

  bool all_ok() const;
};

VerifyReport verify_trace(const Trace& trace, const SlitPlan& plan,
                          const VerifyThresholds& thresholds = {},
                          const MapOptions& opts = {});

/// Closed polygon test with a boundary tolerance.
bool polygon_covers(std::span<const cplx> ring, cplx point, double tol = 1e-9);

/// Polyline points outside `region` (empty region: upper half-plane) plus
/// polyline segments that cross one of `cuts`.
struct ContainmentReport {
  std::size_t points = 0;
  std::size_t outside = 0;
  std::size_t crossings = 0;
};

struct Segment {
  cplx from;
  cplx to;
};

ContainmentReport check_grid_containment(const GridImage& grid, std::span<const cplx> region,
                                         std::span<const Segment> cuts, double tol = 1e-9);

}  // namespace scslit
