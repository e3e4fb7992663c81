#include "scslit/sc_core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include <boost/math/tools/toms748_solve.hpp>
#include <fmt/format.h>

#include "scslit/errors.hpp"

namespace scslit {

namespace {

constexpr double kPi = std::numbers::pi;

double distance_to_segment(cplx s, cplx u, cplx v) {
  const cplx d = v - u;
  const double len2 = std::norm(d);
  if (len2 == 0.0) return std::abs(s - u);
  const double tau = std::clamp(std::real((s - u) * std::conj(d)) / len2, 0.0, 1.0);
  return std::abs(s - (u + tau * d));
}

bool is_integer(double s) { return s == std::round(s) && std::abs(s) < 64.0; }

}  // namespace

// ---------------------------------------------------------------------------
// PolygonSpec / AccessoryState

void PolygonSpec::validate() const {
  const std::size_t n = vertices.size();
  if (n < 3) throw ConfigError(fmt::format("polygon: {} vertices, need >= 3", n));
  if (alphas.size() != n) {
    throw ConfigError(fmt::format("polygon: {} vertices but {} angles", n, alphas.size()));
  }
  if (base_vertex_index >= n) throw ConfigError("polygon: base_vertex_index out of range");
  double sum = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double a = alphas[k];
    if (!std::isfinite(a) || std::abs(a) > 2.0) {
      throw ConfigError(fmt::format("polygon: alpha[{}] = {} outside [-2, 2]", k, a));
    }
    if (!vertices[k].has_value() && a > 0.0) {
      throw ConfigError(fmt::format("polygon: vertex {} at infinity needs alpha <= 0", k));
    }
    if (vertices[k].has_value() && a <= 0.0) {
      throw ConfigError(fmt::format("polygon: finite vertex {} needs alpha > 0", k));
    }
    sum += a - 1.0;
  }
  if (std::abs(sum + 2.0) > 1e-12) {
    throw ConfigError(fmt::format("polygon: sum of (alpha - 1) is {}, expected -2", sum));
  }
  if (!vertices[base_vertex_index] || !vertices[index_of_one()]) {
    throw ConfigError("polygon: images of prevertices 0 and 1 must be finite");
  }
}

std::vector<BoundaryPoint> AccessoryState::boundary_points() const {
  std::vector<BoundaryPoint> out;
  out.reserve(fixed_prevertices.size() + 3 * slits.size() + 2);
  for (std::size_t k = 0; k < fixed_prevertices.size(); ++k) {
    out.push_back({fixed_prevertices[k].x, fixed_prevertices[k].sigma, PrevertexRole::Fixed, k});
  }
  for (std::size_t i = 0; i < slits.size(); ++i) {
    const SlitGroup& s = slits[i];
    out.push_back({s.a1, s.sigma1, PrevertexRole::SlitLeft, i});
    out.push_back({s.lambda, 1.0, PrevertexRole::SlitTip, i});
    out.push_back({s.a2, s.sigma2, PrevertexRole::SlitRight, i});
  }
  out.push_back({0.0, sigma_zero, PrevertexRole::Zero, 0});
  out.push_back({1.0, sigma_one, PrevertexRole::One, 0});
  std::stable_sort(out.begin(), out.end(),
                   [](const BoundaryPoint& a, const BoundaryPoint& b) { return a.x < b.x; });
  return out;
}

double AccessoryState::exponent_sum_residual() const {
  double sum = sigma_zero + sigma_one;
  for (const auto& p : fixed_prevertices) sum += p.sigma;
  for (const auto& s : slits) sum += s.sigma1 + s.sigma2 + 1.0;
  return sum - (-1.0 - alpha_infinity);
}

double AccessoryState::min_gap() const {
  const auto pts = boundary_points();
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t k = 1; k < pts.size(); ++k) best = std::min(best, pts[k].x - pts[k - 1].x);
  return best;
}

void AccessoryState::check_ordering() const {
  auto fail = [](const std::string& what) {
    throw InvariantError("prevertex ordering violated: " + what);
  };
  for (std::size_t k = 0; k < fixed_prevertices.size(); ++k) {
    const double x = fixed_prevertices[k].x;
    if (!(x < 0.0)) fail(fmt::format("a{} = {} is not negative", k + 1, x));
    if (k > 0 && !(fixed_prevertices[k - 1].x < x)) {
      fail(fmt::format("a{} = {} !< a{} = {}", k, fixed_prevertices[k - 1].x, k + 1, x));
    }
  }
  for (std::size_t i = 0; i < slits.size(); ++i) {
    const SlitGroup& s = slits[i];
    if (!(s.a1 < s.lambda && s.lambda < s.a2 && s.a2 < 0.0)) {
      fail(fmt::format("slit {}: a1 = {}, lambda = {}, a2 = {}", i + 1, s.a1, s.lambda, s.a2));
    }
    if (i + 1 < slits.size() && !(s.a2 < slits[i + 1].a1)) {
      fail(fmt::format("slits {} and {} overlap", i + 1, i + 2));
    }
    for (std::size_t k = 0; k < fixed_prevertices.size(); ++k) {
      const double x = fixed_prevertices[k].x;
      if (x >= s.a1 && x <= s.a2) fail(fmt::format("a{} = {} inside slit {}", k + 1, x, i + 1));
    }
  }
}

std::string label(const BoundaryPoint& p) {
  switch (p.role) {
    case PrevertexRole::Fixed: return fmt::format("a{}", p.index + 1);
    case PrevertexRole::SlitLeft: return fmt::format("a{}1", p.index + 1);
    case PrevertexRole::SlitTip: return fmt::format("lambda{}", p.index + 1);
    case PrevertexRole::SlitRight: return fmt::format("a{}2", p.index + 1);
    case PrevertexRole::Zero: return "zero";
    case PrevertexRole::One: return "one";
  }
  return "?";
}

AccessoryState half_plane_state(cplx c) {
  auto poly = std::make_shared<PolygonSpec>();
  poly->vertices = {cplx{0.0, 0.0}, cplx{1.0, 0.0}, std::nullopt};
  poly->alphas = {1.0, 1.0, -1.0};
  poly->base_vertex_index = 0;
  AccessoryState s;
  s.c = c;
  s.base_value = 0.0;
  s.sigma_zero = 0.0;
  s.sigma_one = 0.0;
  s.alpha_infinity = -1.0;
  s.polygon = std::move(poly);
  return s;
}

double branch_arg(cplx w) {
  double a = std::atan2(w.imag(), w.real());
  if (a < -0.5 * kPi) a += 2.0 * kPi;
  return a;
}

// ---------------------------------------------------------------------------
// ScIntegrand

ScIntegrand::ScIntegrand(const AccessoryState& state)
    : c_(state.c), base_value_(state.base_value) {
  for (const BoundaryPoint& p : state.boundary_points()) {
    if (!points_.empty() && points_.back() == p.x) {
      sigmas_.back() += p.sigma;
    } else {
      points_.push_back(p.x);
      sigmas_.push_back(p.sigma);
    }
  }
  // Drop points whose exponents cancel (e.g. an unsplit perpendicular slit).
  std::size_t w = 0;
  for (std::size_t k = 0; k < points_.size(); ++k) {
    if (sigmas_[k] != 0.0) {
      points_[w] = points_[k];
      sigmas_[w] = sigmas_[k];
      ++w;
    }
  }
  points_.resize(w);
  sigmas_.resize(w);
  singular_.reserve(w);
  for (double x : points_) singular_.emplace_back(x, 0.0);
}

std::optional<std::size_t> ScIntegrand::singular_at(cplx z) const {
  if (z.imag() != 0.0) return std::nullopt;
  auto it = std::lower_bound(points_.begin(), points_.end(), z.real());
  if (it != points_.end() && *it == z.real()) {
    return static_cast<std::size_t>(it - points_.begin());
  }
  return std::nullopt;
}

cplx ScIntegrand::product(cplx z, std::optional<std::size_t> skip_a,
                          std::optional<std::size_t> skip_b) const {
  return product(z, 0.0, skip_a, skip_b);
}

cplx ScIntegrand::product(cplx anchor, cplx offset, std::optional<std::size_t> skip_a,
                          std::optional<std::size_t> skip_b) const {
  cplx poly{1.0, 0.0};
  double log_mod = 0.0;
  double phase = 0.0;
  for (std::size_t k = 0; k < points_.size(); ++k) {
    if (skip_a == k || skip_b == k) continue;
    const cplx w = (anchor - points_[k]) + offset;
    const double s = sigmas_[k];
    if (is_integer(s) && s > 0.0) {
      for (int j = 0; j < static_cast<int>(s); ++j) poly *= w;
    } else {
      log_mod += s * std::log(std::abs(w));
      phase += s * branch_arg(w);
    }
  }
  return poly * std::polar(std::exp(log_mod), phase);
}

cplx ScIntegrand::derivative(cplx z) const {
  if (auto k = singular_at(z); k && sigmas_[*k] < 0.0) {
    throw DomainError(fmt::format("sc_derivative: z = {} is a singular prevertex", z.real()));
  }
  return c_ * product(z, std::nullopt, std::nullopt);
}

IntegrationResult ScIntegrand::integrate(cplx from, cplx to, const MapOptions& opts) const {
  if (from == to) return {};
  const auto ia = singular_at(from);
  const auto ib = singular_at(to);
  const cplx u = (to - from) / std::abs(to - from);

  double phase = 0.0;
  double le = 0.0;
  double re = 0.0;
  if (ia) {
    le = sigmas_[*ia];
    phase += le * branch_arg(u);
  }
  if (ib) {
    re = sigmas_[*ib];
    phase += re * branch_arg(-u);
  }

  std::vector<cplx> others;
  others.reserve(singular_.size());
  for (std::size_t k = 0; k < singular_.size(); ++k) {
    if (ia == k || ib == k) continue;
    others.push_back(singular_[k]);
  }
  const cplx factor = c_ * std::polar(1.0, phase);
  const AnchoredFactor f = [&](cplx anchor, cplx offset) {
    return product(anchor, offset, ia, ib);
  };
  IntegrationResult r = integrate_singular(f, from, to, le, re, others, opts.quadrature);
  r.value *= factor;
  r.error *= std::abs(factor);
  return r;
}

cplx ScIntegrand::map(cplx z, const MapOptions& opts) const {
  if (z == cplx{0.0, 0.0}) return base_value_;
  if (z.imag() < 0.0) {
    throw DomainError(fmt::format("sc_map: z = ({}, {}) below the real axis", z.real(), z.imag()));
  }
  cplx acc = base_value_;

  if (z.imag() == 0.0) {
    const double x = z.real();
    std::vector<double> stops;
    for (double p : points_) {
      if ((x < 0.0 && p < 0.0 && p > x) || (x > 0.0 && p > 0.0 && p < x)) stops.push_back(p);
    }
    if (x < 0.0) std::reverse(stops.begin(), stops.end());
    stops.push_back(x);
    double prev = 0.0;
    for (double s : stops) {
      acc += integrate(cplx{prev, 0.0}, cplx{s, 0.0}, opts).value;
      prev = s;
    }
    return acc;
  }

  double nearest = std::abs(z);
  for (const cplx& s : singular_) nearest = std::min(nearest, std::abs(z - s));
  const double delta = 0.5 * nearest;
  bool straight = true;
  for (const cplx& s : singular_) {
    if (s == cplx{0.0, 0.0}) continue;
    if (distance_to_segment(s, 0.0, z) < delta) {
      straight = false;
      break;
    }
  }
  if (straight) return acc + integrate(0.0, z, opts).value;

  const cplx corner{0.0, std::max(z.imag(), delta)};
  acc += integrate(0.0, corner, opts).value;
  acc += integrate(corner, z, opts).value;
  return acc;
}

// ---------------------------------------------------------------------------
// Free functions

cplx sc_derivative(const AccessoryState& state, cplx z) {
  return ScIntegrand(state).derivative(z);
}

cplx sc_map(const AccessoryState& state, cplx z, const MapOptions& opts) {
  return ScIntegrand(state).map(z, opts);
}

cplx boundary_tangent(const AccessoryState& state, double x) {
  const ScIntegrand integrand(state);
  double phase = std::arg(state.c);
  const auto pts = integrand.points();
  const auto sig = integrand.sigmas();
  for (std::size_t k = 0; k < pts.size(); ++k) {
    if (pts[k] > x) phase += sig[k] * kPi;
  }
  return std::polar(1.0, phase);
}

double locate_prevertex(const AccessoryState& state, cplx boundary_point, double lo,
                        double hi, const MapOptions& opts) {
  if (!(lo < hi)) throw RootNotFoundError("locate_prevertex: empty bracket");
  const ScIntegrand integrand(state);
  for (double p : integrand.points()) {
    if (p > lo && p < hi) {
      throw RootNotFoundError(fmt::format(
          "locate_prevertex: bracket [{}, {}] spans prevertex {}", lo, hi, p));
    }
  }
  const cplx origin = integrand.map(cplx{lo, 0.0}, opts);
  const cplx dir = boundary_tangent(state, 0.5 * (lo + hi));
  auto along = [&](double x) {
    const cplx fx = origin + integrand.integrate(cplx{lo, 0.0}, cplx{x, 0.0}, opts).value;
    return std::real((fx - boundary_point) * std::conj(dir));
  };
  const double g_lo = along(lo);
  const double g_hi = along(hi);
  if (g_lo > 0.0 || g_hi < 0.0) {
    throw RootNotFoundError(fmt::format(
        "locate_prevertex: point ({}, {}) not in the image of [{}, {}]",
        boundary_point.real(), boundary_point.imag(), lo, hi));
  }
  double x = g_lo == 0.0 ? lo : hi;
  if (g_lo != 0.0 && g_hi != 0.0) {
    std::uintmax_t max_iter = 200;
    auto tol = [](double a, double b) {
      return std::abs(b - a) <= 4.0 * std::numeric_limits<double>::epsilon() *
                                    std::max({std::abs(a), std::abs(b), 1.0});
    };
    const auto [a, b] =
        boost::math::tools::toms748_solve(along, lo, hi, g_lo, g_hi, tol, max_iter);
    x = 0.5 * (a + b);
  }
  const double miss = std::abs(integrand.map(cplx{x, 0.0}, opts) - boundary_point);
  if (miss > opts.tol_map) {
    throw RootNotFoundError(fmt::format(
        "locate_prevertex: best x = {} misses the target by {:.3e}", x, miss));
  }
  return x;
}

cplx slit_endpoint(const AccessoryState& state, std::size_t i, const MapOptions& opts) {
  if (i >= state.slits.size()) {
    throw DomainError(fmt::format("slit index {} out of range", i));
  }
  return sc_map(state, cplx{state.slits[i].lambda, 0.0}, opts);
}

double slit_length(const AccessoryState& state, std::size_t i, const MapOptions& opts) {
  return std::abs(slit_endpoint(state, i, opts) - state.slits.at(i).base_point);
}

GridImage grid_image(const AccessoryState& state, const GridSpec& grid, const MapOptions& opts) {
  if (!(grid.y_min > 0.0) || !(grid.y_max > grid.y_min) || !(grid.x_max > grid.x_min)) {
    throw DomainError("grid_image: grid must lie in the open upper half-plane");
  }
  if (!(grid.spacing > 0.0) || grid.samples_per_line < 2) {
    throw DomainError("grid_image: need positive spacing and >= 2 samples per line");
  }
  const ScIntegrand integrand(state);
  const auto pts = integrand.points();
  double exclusion = grid.exclusion_radius;
  if (exclusion < 0.0) {
    const double spread = pts.size() >= 2 ? pts.back() - pts.front() : 1.0;
    exclusion = 1e-6 * spread;
  }
  auto excluded = [&](cplx z) {
    for (double p : pts) {
      if (std::abs(z - p) < exclusion) return true;
    }
    return false;
  };

  GridImage image;
  auto trace_line = [&](GridOrientation o, double coord, cplx start, cplx end) {
    GridLine line{o, coord, {}};
    line.points.reserve(static_cast<std::size_t>(grid.samples_per_line));
    std::optional<std::pair<cplx, cplx>> last;  // (preimage, image)
    for (int j = 0; j < grid.samples_per_line; ++j) {
      const double s = static_cast<double>(j) / (grid.samples_per_line - 1);
      const cplx z = start + s * (end - start);
      if (excluded(z)) {
        image.skipped.push_back(z);
        continue;
      }
      cplx w = last ? last->second + integrand.integrate(last->first, z, opts).value
                    : integrand.map(z, opts);
      line.points.push_back(w);
      last = {z, w};
    }
    image.polylines.push_back(std::move(line));
  };

  const auto count = [&](double lo, double hi) {
    return static_cast<int>(std::floor((hi - lo) / grid.spacing + 1e-9)) + 1;
  };
  for (int k = 0, n = count(grid.x_min, grid.x_max); k < n; ++k) {
    const double x = grid.x_min + k * grid.spacing;
    trace_line(GridOrientation::Vertical, x, cplx{x, grid.y_min}, cplx{x, grid.y_max});
  }
  for (int k = 0, n = count(grid.y_min, grid.y_max); k < n; ++k) {
    const double y = grid.y_min + k * grid.spacing;
    trace_line(GridOrientation::Horizontal, y, cplx{grid.x_min, y}, cplx{grid.x_max, y});
  }
  return image;
}

}  // namespace scslit
