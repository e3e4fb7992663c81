#include "scslit/oracle.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include <Eigen/Dense>
#include <boost/geometry.hpp>
#include <boost/geometry/geometries/linestring.hpp>
#include <boost/geometry/geometries/point_xy.hpp>
#include <boost/geometry/geometries/polygon.hpp>
#include <fmt/format.h>

#include "scslit/errors.hpp"

namespace scslit {

namespace bg = boost::geometry;

namespace {

double max_abs(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

// Length of the side from prevertex q to infinity in direction s = +-1. With
// x = q + s u / (1 - u) the integrand becomes
//   u^sigma_q (1 - u)^(alpha_inf - 1) prod_{p != q} |(q - p)(1 - u) + s u|^sigma_p,
// whose remaining factor has no zeros on [0, 1].
double infinite_side_length(const AccessoryState& state, const BoundaryPoint& q, double s,
                            const MapOptions& opts) {
  std::vector<std::pair<double, double>> others;  // (q - p, sigma_p)
  std::vector<cplx> zeros;
  for (const BoundaryPoint& p : state.boundary_points()) {
    if (p.x == q.x || p.sigma == 0.0) continue;
    const double dq = q.x - p.x;
    others.emplace_back(dq, p.sigma);
    zeros.emplace_back(dq / (dq - s), 0.0);
  }
  const AnalyticFactor f = [&](cplx z) {
    const double u = z.real();
    double log_mod = 0.0;
    for (const auto& [dq, sigma] : others) log_mod += sigma * std::log(std::abs(dq * (1.0 - u) + s * u));
    return cplx{std::exp(log_mod), 0.0};
  };
  double sigma_q = 0.0;
  for (const BoundaryPoint& p : state.boundary_points()) {
    if (p.x == q.x) sigma_q += p.sigma;
  }
  const auto r = integrate_singular(f, 0.0, 1.0, sigma_q, state.alpha_infinity - 1.0, zeros,
                                    opts.quadrature);
  return std::abs(state.c) * r.value.real();
}

}  // namespace

// ---------------------------------------------------------------------------
// Side lengths

SideLengthReport side_lengths(const AccessoryState& state, const MapOptions& opts) {
  SideLengthReport out;
  out.d = std::abs(state.c);
  out.beta = std::arg(state.c);
  const ScIntegrand integrand(state);
  const auto pts = state.boundary_points();
  for (std::size_t k = 0; k + 1 < pts.size(); ++k) {
    const std::string name = label(pts[k]) + "-" + label(pts[k + 1]);
    try {
      const auto r = integrand.integrate(cplx{pts[k].x, 0.0}, cplx{pts[k + 1].x, 0.0}, opts);
      out.lengths.push_back(std::abs(r.value));
    } catch (const IntegrationError& e) {
      throw IntegrationError(fmt::format("side {}: {}", name, e.what()), e.estimate());
    }
    out.sides.push_back(name);
  }
  if (state.alpha_infinity > 0.0 && !pts.empty()) {
    out.lengths.push_back(infinite_side_length(state, pts.back(), +1.0, opts));
    out.sides.push_back(label(pts.back()) + "-infinity");
    out.lengths.push_back(infinite_side_length(state, pts.front(), -1.0, opts));
    out.sides.push_back("infinity-" + label(pts.front()));
  }
  return out;
}

SideLengthReport side_lengths(const AccessoryState& state, std::span<const double> targets,
                              const MapOptions& opts) {
  SideLengthReport out = side_lengths(state, opts);
  if (targets.size() != out.lengths.size()) {
    throw DomainError(fmt::format("side_lengths: {} targets for {} sides", targets.size(),
                                  out.lengths.size()));
  }
  for (std::size_t k = 0; k < targets.size(); ++k) {
    out.residuals.push_back(out.lengths[k] - targets[k]);
  }
  return out;
}

std::vector<double> side_length_map(const AccessoryState& like, std::span<const double> x,
                                    const MapOptions& opts) {
  return side_lengths(unpack_state(like, like.t, x), opts).lengths;
}

std::vector<std::vector<double>> side_length_jacobian(const AccessoryState& like,
                                                      std::span<const double> x,
                                                      double fd_step, const MapOptions& opts) {
  std::vector<double> xp(x.begin(), x.end());
  std::vector<std::vector<double>> columns;
  for (std::size_t j = 0; j < x.size(); ++j) {
    const double h = fd_step * (1.0 + std::abs(x[j]));
    xp[j] = x[j] + h;
    const auto plus = side_length_map(like, xp, opts);
    xp[j] = x[j] - h;
    const auto minus = side_length_map(like, xp, opts);
    xp[j] = x[j];
    std::vector<double> col(plus.size());
    for (std::size_t i = 0; i < plus.size(); ++i) col[i] = (plus[i] - minus[i]) / (2.0 * h);
    columns.push_back(std::move(col));
  }
  return columns;
}

// ---------------------------------------------------------------------------
// Newton

NewtonReport solve_prevertices(const AccessoryState& guess, std::span<const double> targets,
                               const NewtonOptions& opts) {
  guess.check_ordering();
  std::vector<double> x = pack_state(guess);
  const std::size_t n = x.size();
  if (targets.size() != n) {
    throw DomainError(fmt::format("solve_prevertices: {} targets for {} unknowns", targets.size(), n));
  }
  std::vector<std::size_t> sides = opts.sides;
  if (sides.empty()) {
    sides.resize(n);
    std::iota(sides.begin(), sides.end(), std::size_t{0});
  }
  if (sides.size() != n) {
    throw DomainError(fmt::format("solve_prevertices: {} sides selected for {} unknowns",
                                  sides.size(), n));
  }
  const auto select = [&](const std::vector<double>& all) {
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
      if (sides[i] >= all.size()) {
        throw DomainError(fmt::format("solve_prevertices: side {} of {}", sides[i], all.size()));
      }
      out[i] = all[sides[i]];
    }
    return out;
  };

  auto admissible = [&](std::span<const double> y) {
    if (!(y[0] > 0.0)) return false;
    try {
      unpack_state(guess, guess.t, y).check_ordering();
    } catch (const InvariantError&) {
      return false;
    }
    return true;
  };
  auto residual = [&](std::span<const double> y) {
    auto r = select(side_length_map(guess, y, opts.map));
    for (std::size_t i = 0; i < n; ++i) r[i] -= targets[i];
    return r;
  };

  NewtonReport report;
  std::vector<double> r = residual(x);
  for (int it = 1;; ++it) {
    const double norm = max_abs(r);
    report.iterations = it;
    report.residual_history.push_back(norm);
    if (norm <= opts.tol) break;
    if (it >= opts.max_iterations) {
      throw DampingError(fmt::format("solve_prevertices: no convergence in {} iterations, "
                                     "residual {:.3e}", it, norm));
    }

    const auto cols = side_length_jacobian(guess, x, opts.fd_step, opts.map);
    Eigen::MatrixXd J(n, n);
    Eigen::VectorXd rhs(n);
    for (std::size_t j = 0; j < n; ++j) {
      const auto col = select(cols[j]);
      for (std::size_t i = 0; i < n; ++i) J(i, j) = col[i];
      rhs(j) = -r[j];
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(J, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const auto& sv = svd.singularValues();
    const double cond = sv(0) / sv(n - 1);
    report.jacobian_condition = cond;
    if (!(cond <= opts.max_condition)) {
      throw ConditioningError(fmt::format("solve_prevertices: Jacobian condition {:.3e}", cond));
    }
    const Eigen::VectorXd step = svd.solve(rhs);

    double damping = 1.0;
    bool accepted = false;
    std::vector<double> trial(n);
    for (int halving = 0; halving <= opts.max_halvings; ++halving, damping *= 0.5) {
      for (std::size_t i = 0; i < n; ++i) trial[i] = x[i] + damping * step(i);
      if (!admissible(trial)) continue;
      std::vector<double> r_trial;
      try {
        r_trial = residual(trial);
      } catch (const Error&) {
        continue;
      }
      if (max_abs(r_trial) < norm) {
        x = trial;
        r = std::move(r_trial);
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      throw DampingError(fmt::format(
          "solve_prevertices: no admissible decrease after {} halvings at residual {:.3e}",
          opts.max_halvings, norm));
    }
  }
  report.state = unpack_state(guess, guess.t, x);
  return report;
}

// ---------------------------------------------------------------------------
// Trace verification

bool VerifyReport::all_ok() const {
  return straightness_ok && ratio_ok && fixed_vertex_ok && length_param_ok && residue_ok &&
         control_sum_ok && arg_c_ok && exponent_sum_ok && ordering_ok && unresolved.ok;
}

namespace {

// Geometric deviations of one state: straightness, ratio, fixed vertex, length.
using Geometry = std::array<double, 4>;

Geometry geometry(const AccessoryState& s, const SlitPlan& plan, const VerifyThresholds& th,
                  const MapOptions& opts) {
  Geometry out{};
  const ScIntegrand integrand(s);
  std::vector<double> lengths;
  for (std::size_t i = 0; i < s.slits.size(); ++i) {
    const SlitGroup& g = s.slits[i];
    const cplx tip = integrand.map(cplx{g.lambda, 0.0}, opts);
    const cplx rel = (tip - g.base_point) * std::conj(g.direction) / std::abs(g.direction);
    out[0] = std::max(out[0], rel.real() >= 0.0 ? std::abs(rel.imag()) : std::abs(rel));
    lengths.push_back(std::abs(tip - g.base_point));
    for (double a : {g.a1, g.a2}) {
      out[2] = std::max(out[2], std::abs(integrand.map(cplx{a, 0.0}, opts) - g.base_point));
    }
  }
  if (s.polygon) {
    const PolygonSpec& poly = *s.polygon;
    for (const Prevertex& p : s.fixed_prevertices) {
      if (!p.vertex || !poly.vertices[*p.vertex]) continue;
      out[2] = std::max(out[2],
                        std::abs(integrand.map(cplx{p.x, 0.0}, opts) - *poly.vertices[*p.vertex]));
    }
    if (const auto& one = poly.vertices[poly.index_of_one()]) {
      out[2] = std::max(out[2], std::abs(integrand.map(1.0, opts) - *one));
    }
  }
  if (!lengths.empty()) {
    const double lp = lengths[plan.primary];
    const double ratio_ref = plan.slits.at(plan.primary).ratio;
    out[3] = std::abs(lp - s.t);
    if (s.t >= th.ratio_start * plan.target_length && lp > 0.0) {
      for (std::size_t i = 0; i < lengths.size(); ++i) {
        out[1] = std::max(out[1], std::abs(lengths[i] / lp - plan.slits[i].ratio / ratio_ref));
      }
    }
  }
  return out;
}

// Change of each deviation when the state moves by one ulp, summed over the
// unknowns. A deviation below this is not resolvable in double precision.
Geometry resolution_floor(const AccessoryState& s, const Geometry& at, const SlitPlan& plan,
                          const VerifyThresholds& th, const MapOptions& opts) {
  Geometry floor{};
  const std::vector<double> y = pack_state(s);
  for (std::size_t j = 0; j < y.size(); ++j) {
    std::vector<double> z = y;
    z[j] = std::nextafter(z[j], 0.0);
    try {
      const Geometry g = geometry(unpack_state(s, s.t, z), plan, th, opts);
      for (std::size_t q = 0; q < floor.size(); ++q) floor[q] += std::abs(g[q] - at[q]);
    } catch (const Error&) {
      // Ordering broken by one ulp: nothing left to resolve here.
      floor.fill(std::numeric_limits<double>::infinity());
    }
  }
  return floor;
}

}  // namespace

VerifyReport verify_trace(const Trace& trace, const SlitPlan& plan,
                          const VerifyThresholds& th, const MapOptions& opts) {
  VerifyReport rep;
  rep.steps = trace.steps.size();
  if (trace.steps.empty()) return rep;

  const double beta0 = std::arg(trace.steps.front().state.c);
  std::mt19937_64 rng(20240611);
  std::uniform_real_distribution<double> re(-10.0, 2.0);
  std::uniform_real_distribution<double> im(0.05, 5.0);

  const Geometry limits{th.straightness, th.ratio, th.fixed_vertex, th.length_param};
  Geometry resolved{};
  bool unresolved_ok = true;

  for (std::size_t k = 0; k < trace.steps.size(); ++k) {
    const TraceStep& step = trace.steps[k];
    const AccessoryState& s = step.state;
    try {
      s.check_ordering();
    } catch (const InvariantError&) {
      ++rep.ordering_violations;
      continue;
    }
    rep.exponent_sum = std::max(rep.exponent_sum, std::abs(s.exponent_sum_residual()));
    rep.arg_c = std::max(rep.arg_c, std::abs(std::arg(s.c) - beta0));

    const Geometry g = geometry(s, plan, th, opts);
    bool over = false;
    for (std::size_t q = 0; q < g.size(); ++q) over = over || g[q] > limits[q];
    const Geometry floor = over ? resolution_floor(s, g, plan, th, opts) : Geometry{};
    bool counted = false;
    for (std::size_t q = 0; q < g.size(); ++q) {
      if (over && floor[q] > limits[q]) {
        const double r = g[q] / floor[q];
        rep.unresolved.floor_ratio = std::max(rep.unresolved.floor_ratio, r);
        rep.unresolved.deviation = std::max(rep.unresolved.deviation, g[q]);
        unresolved_ok = unresolved_ok && r <= th.floor_factor;
        if (!counted) ++rep.unresolved.steps;
        counted = true;
      } else {
        resolved[q] = std::max(resolved[q], g[q]);
      }
    }

    try {
      const ControlVector ctrl = control_coefficients(s, plan);
      double sum = 0.0;
      for (double w : ctrl.weights) sum += w;
      rep.control_sum = std::max(rep.control_sum, std::abs(sum - 1.0));
      if (k % th.residue_stride == 0 || k + 1 == trace.steps.size()) {
        const ControlVector scaled = rescale_for_length_param(ctrl, s, plan.primary);
        const StateDerivative d = ode_rhs(s, scaled);
        for (int j = 0; j < th.residue_points; ++j) {
          const cplx z{re(rng), im(rng)};
          rep.residue = std::max(rep.residue, residue_identity_mismatch(s, scaled, d, z));
        }
      }
    } catch (const DegeneracyError&) {
      // A collapsed final state has no usable control; nothing to compare.
    }
  }

  rep.straightness = resolved[0];
  rep.ratio = resolved[1];
  rep.fixed_vertex = resolved[2];
  rep.length_param = resolved[3];
  rep.unresolved.ok = unresolved_ok;
  rep.straightness_ok = rep.straightness <= th.straightness;
  rep.ratio_ok = rep.ratio <= th.ratio;
  rep.fixed_vertex_ok = rep.fixed_vertex <= th.fixed_vertex;
  rep.length_param_ok = rep.length_param <= th.length_param;
  rep.residue_ok = rep.residue <= th.residue;
  rep.control_sum_ok = rep.control_sum <= th.control_sum;
  rep.arg_c_ok = rep.arg_c <= th.arg_c;
  rep.exponent_sum_ok = rep.exponent_sum <= th.exponent_sum;
  rep.ordering_ok = rep.ordering_violations == 0;
  return rep;
}

// ---------------------------------------------------------------------------
// Geometry

namespace {

using BgPoint = bg::model::d2::point_xy<double>;
using BgPolygon = bg::model::polygon<BgPoint, false, true>;  // counterclockwise, closed
using BgSegment = bg::model::segment<BgPoint>;

BgPoint to_bg(cplx z) { return {z.real(), z.imag()}; }

BgPolygon make_polygon(std::span<const cplx> ring) {
  BgPolygon poly;
  for (const cplx& z : ring) poly.outer().push_back(to_bg(z));
  poly.outer().push_back(to_bg(ring.front()));
  bg::correct(poly);
  return poly;
}

bool covers(const BgPolygon& poly, cplx point, double tol) {
  const BgPoint p = to_bg(point);
  if (bg::covered_by(p, poly)) return true;
  return bg::distance(p, poly) <= tol;
}

}  // namespace

bool polygon_covers(std::span<const cplx> ring, cplx point, double tol) {
  if (ring.size() < 3) throw DomainError("polygon_covers: ring needs at least 3 vertices");
  return covers(make_polygon(ring), point, tol);
}

ContainmentReport check_grid_containment(const GridImage& grid, std::span<const cplx> region,
                                         std::span<const Segment> cuts, double tol) {
  ContainmentReport rep;
  std::optional<BgPolygon> poly;
  if (!region.empty()) poly = make_polygon(region);
  std::vector<BgSegment> cut_segments;
  for (const Segment& s : cuts) cut_segments.emplace_back(to_bg(s.from), to_bg(s.to));

  for (const GridLine& line : grid.polylines) {
    for (std::size_t k = 0; k < line.points.size(); ++k) {
      const cplx z = line.points[k];
      ++rep.points;
      const bool inside = poly ? covers(*poly, z, tol) : z.imag() >= -tol;
      if (!inside) ++rep.outside;
      if (k == 0) continue;
      const BgSegment chord(to_bg(line.points[k - 1]), to_bg(z));
      for (const BgSegment& cut : cut_segments) {
        if (bg::intersects(chord, cut) && bg::distance(to_bg(z), cut) > tol &&
            bg::distance(to_bg(line.points[k - 1]), cut) > tol) {
          ++rep.crossings;
        }
      }
    }
  }
  return rep;
}

}  // namespace scslit
