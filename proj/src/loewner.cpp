#include "scslit/loewner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <fmt/format.h>

#include "scslit/errors.hpp"
#include "scslit/integrator.hpp"

namespace scslit {

// ---------------------------------------------------------------------------
// Plan

void SlitPlan::validate() const {
  if (slits.empty()) throw ConfigError("slit plan: no slits");
  if (primary >= slits.size()) throw ConfigError("slit plan: primary slit index out of range");
  if (!(target_length >= 0.0)) throw ConfigError("slit plan: target length must be >= 0");
  if (!(epsilon > 0.0)) throw ConfigError("slit plan: epsilon must be positive");
  if (!(merge_tol > 0.0) || !(cluster_tol > 0.0) || !(ode_tol > 0.0)) {
    throw ConfigError("slit plan: tolerances must be positive");
  }
  for (std::size_t i = 0; i < slits.size(); ++i) {
    const SlitPlanEntry& s = slits[i];
    if (!(s.ratio > 0.0)) throw ConfigError(fmt::format("slit {}: ratio must be positive", i + 1));
    if (!(s.base_prevertex < 0.0)) {
      throw ConfigError(fmt::format(
          "slit {}: base prevertex {} must be negative (bases on the sides through the "
          "images of 0, 1 and infinity are not supported)",
          i + 1, s.base_prevertex));
    }
    if (!(s.sigma1 > -1.0) || !(s.sigma2 > -1.0)) {
      throw ConfigError(fmt::format("slit {}: base exponents must exceed -1", i + 1));
    }
    for (std::size_t j = 0; j < i; ++j) {
      if (slits[j].base_prevertex == s.base_prevertex) {
        throw ConfigError(fmt::format("slits {} and {} share a base prevertex", j + 1, i + 1));
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Control

double speed_factor(const AccessoryState& state, std::size_t r) {
  if (r >= state.slits.size()) throw DomainError(fmt::format("slit index {} out of range", r));
  const double lam = state.slits[r].lambda;
  double log_a = 0.0;
  auto add = [&](double x, double power, const char* what, std::size_t idx) {
    const double d = std::abs(lam - x);
    if (d == 0.0) {
      throw DegeneracyError(fmt::format("speed factor: lambda{} coincides with {}{}", r + 1,
                                        what, idx + 1));
    }
    log_a += power * std::log(d);
  };
  for (std::size_t i = 0; i < state.slits.size(); ++i) {
    add(state.slits[i].a1, state.slits[i].sigma1, "a_1 of slit ", i);
    add(state.slits[i].a2, state.slits[i].sigma2, "a_2 of slit ", i);
    if (i != r) add(state.slits[i].lambda, 1.0, "lambda", i);
  }
  for (std::size_t k = 0; k < state.fixed_prevertices.size(); ++k) {
    add(state.fixed_prevertices[k].x, state.fixed_prevertices[k].sigma, "a", k);
  }
  add(0.0, state.sigma_zero + 1.0, "prevertex 0 #", 0);
  add(1.0, state.sigma_one + 2.0, "prevertex 1 #", 0);
  return std::exp(log_a);
}

ControlVector control_from_speed_factors(std::span<const double> speed_factors,
                                         std::span<const double> ratios) {
  if (speed_factors.size() != ratios.size() || speed_factors.empty()) {
    throw DomainError("control: need one ratio per speed factor");
  }
  ControlVector out;
  out.weights.resize(speed_factors.size());
  double total = 0.0;
  for (std::size_t k = 0; k < speed_factors.size(); ++k) {
    if (!(speed_factors[k] > 0.0) || !std::isfinite(speed_factors[k])) {
      throw DegeneracyError(fmt::format("control: speed factor {} is {}", k + 1, speed_factors[k]));
    }
    out.weights[k] = ratios[k] / speed_factors[k];
    total += out.weights[k];
  }
  for (double& w : out.weights) w /= total;
  return out;
}

std::array<double, 2> two_slit_control(double A1, double A2, double ratio) {
  const double den = A1 + ratio * A2;
  return {ratio * A2 / den, A1 / den};
}

ControlVector control_coefficients(const AccessoryState& state, const SlitPlan& plan) {
  const std::size_t m = state.slits.size();
  if (plan.slits.size() != m) {
    throw DomainError(fmt::format("control: plan has {} slits, state has {}", plan.slits.size(), m));
  }
  std::vector<double> speeds(m);
  std::vector<double> ratios(m);
  for (std::size_t r = 0; r < m; ++r) {
    speeds[r] = speed_factor(state, r);
    ratios[r] = plan.slits[r].ratio;
  }
  return control_from_speed_factors(speeds, ratios);
}

ControlVector rescale_for_length_param(const ControlVector& control,
                                       const AccessoryState& state, std::size_t primary) {
  const double rate = std::abs(state.c) * speed_factor(state, primary) * control.weights.at(primary);
  if (!(rate > 0.0) || !std::isfinite(rate)) {
    throw DegeneracyError(fmt::format("rescale: primary slit speed is {}", rate));
  }
  ControlVector out = control;
  out.scale = 1.0 / rate;
  return out;
}

// ---------------------------------------------------------------------------
// Right-hand side

namespace {

struct WeightedPoint {
  double x;
  double sigma;
};

// Every finite prevertex except the slit tips, with its exponent.
std::vector<WeightedPoint> base_points(const AccessoryState& s) {
  std::vector<WeightedPoint> pts;
  for (const auto& slit : s.slits) {
    pts.push_back({slit.a1, slit.sigma1});
    pts.push_back({slit.a2, slit.sigma2});
  }
  for (const auto& p : s.fixed_prevertices) pts.push_back({p.x, p.sigma});
  if (s.sigma_zero != 0.0) pts.push_back({0.0, s.sigma_zero});
  if (s.sigma_one != 0.0) pts.push_back({1.0, s.sigma_one});
  return pts;
}

}  // namespace

StateDerivative ode_rhs(const AccessoryState& state, const ControlVector& control) {
  const std::size_t m = state.slits.size();
  if (control.size() != m) throw DomainError("ode_rhs: control size does not match slit count");
  std::vector<double> C(m);
  std::vector<double> lam(m);
  for (std::size_t i = 0; i < m; ++i) {
    C[i] = control.scaled(i);
    lam[i] = state.slits[i].lambda;
  }
  const auto pts = base_points(state);

  // Transport velocity of a boundary point a that is not a slit tip.
  auto drift = [&](double a, const char* name) {
    double sum = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      const double d = a - lam[i];
      if (d == 0.0) {
        throw DegeneracyError(fmt::format("ode_rhs: {} coincides with lambda{}", name, i + 1));
      }
      sum += C[i] * (lam[i] - 1.0) / d;
    }
    return -a * (a - 1.0) * sum;
  };

  StateDerivative out;
  out.dslits.resize(m);
  out.dfixed.resize(state.fixed_prevertices.size());
  for (std::size_t k = 0; k < state.fixed_prevertices.size(); ++k) {
    out.dfixed[k] = drift(state.fixed_prevertices[k].x, "fixed prevertex");
  }
  for (std::size_t p = 0; p < m; ++p) {
    const double lp = lam[p];
    double cross = 0.0;   // sum_{l != p} C_l (lambda_l - 1) / (lambda_p - lambda_l)
    double inv = 0.0;     // sum_{l != p} 1 / (lambda_p - lambda_l)
    for (std::size_t l = 0; l < m; ++l) {
      if (l == p) continue;
      const double d = lp - lam[l];
      if (d == 0.0) {
        throw DegeneracyError(fmt::format("ode_rhs: lambda{} coincides with lambda{}", p + 1, l + 1));
      }
      cross += C[l] * (lam[l] - 1.0) / d;
      inv += 1.0 / d;
    }
    double pull = 0.0;  // sum sigma / (lambda_p - a)
    for (const auto& w : pts) {
      const double d = lp - w.x;
      if (d == 0.0) {
        throw DegeneracyError(fmt::format("ode_rhs: lambda{} coincides with a prevertex at {}",
                                          p + 1, w.x));
      }
      pull += w.sigma / d;
    }
    const double lm1 = lp - 1.0;
    const double minus_dlam = lp * lm1 * (cross + C[p] * lm1 * inv) +
                              C[p] * (2.0 * lp - 1.0) * lm1 + C[p] * lp * lm1 * lm1 * pull;
    out.dslits[p][1] = -minus_dlam;
    out.dslits[p][0] = drift(state.slits[p].a1, "slit base a_1");
    out.dslits[p][2] = drift(state.slits[p].a2, "slit base a_2");
  }
  double rate = 0.0;
  for (std::size_t i = 0; i < m; ++i) rate += C[i] * (lam[i] - 1.0);
  out.log_rate = -state.alpha_infinity * rate;
  out.dc = state.c * out.log_rate;
  return out;
}

double residue_identity_mismatch(const AccessoryState& state, const ControlVector& control,
                                 const StateDerivative& deriv, cplx z) {
  const std::size_t m = state.slits.size();
  const auto pts = base_points(state);

  // Left side: -d/dt log f'(z, t).
  cplx lhs = -deriv.log_rate;
  double lhs_size = std::abs(deriv.log_rate);
  auto lhs_term = [&](cplx v) {
    lhs += v;
    lhs_size += std::abs(v);
  };
  for (std::size_t i = 0; i < m; ++i) {
    const SlitGroup& s = state.slits[i];
    lhs_term(deriv.dslits[i][1] / (z - s.lambda));
    lhs_term(s.sigma1 * deriv.dslits[i][0] / (z - s.a1));
    lhs_term(s.sigma2 * deriv.dslits[i][2] / (z - s.a2));
  }
  for (std::size_t k = 0; k < state.fixed_prevertices.size(); ++k) {
    const Prevertex& p = state.fixed_prevertices[k];
    lhs_term(p.sigma * deriv.dfixed[k] / (z - p.x));
  }

  // Right side: transport of log f' by the Loewner vector field plus the
  // derivative of that field.
  cplx dlog{0.0, 0.0};
  double dlog_size = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const cplx v = 1.0 / (z - state.slits[i].lambda);
    dlog += v;
    dlog_size += std::abs(v);
  }
  for (const auto& w : pts) {
    const cplx v = w.sigma / (z - w.x);
    dlog += v;
    dlog_size += std::abs(v);
  }
  cplx field{0.0, 0.0};
  double field_size = 0.0;
  cplx rest{0.0, 0.0};
  double rest_size = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double C = control.scaled(i);
    const double lam = state.slits[i].lambda;
    const cplx v = z * (z - 1.0) * C * (lam - 1.0) / (lam - z);
    field += v;
    field_size += std::abs(v);
    const cplx w = C * lam * (lam - 1.0) * (lam - 1.0) / ((lam - z) * (lam - z));
    const double u = C * (lam - 1.0);
    rest += w - u;
    rest_size += std::abs(w) + std::abs(u);
  }
  const cplx rhs = dlog * field + rest;
  const double size = lhs_size + dlog_size * field_size + rest_size;
  return std::abs(lhs - rhs) / std::max(size, std::numeric_limits<double>::min());
}

// ---------------------------------------------------------------------------
// Degenerate start

AccessoryState regularize_initial(const AccessoryState& state0, const SlitPlan& plan) {
  const double eps = plan.epsilon;
  if (!(eps > 0.0)) throw ConfigError("regularize: epsilon must be positive");
  AccessoryState out = state0;
  for (std::size_t i = 0; i < out.slits.size(); ++i) {
    SlitGroup& s = out.slits[i];
    if (!(s.a1 == s.lambda && s.lambda == s.a2)) {
      throw ConfigError(fmt::format("regularize: slit {} is not at its birth configuration", i + 1));
    }
    double gap = std::abs(s.lambda);
    for (std::size_t j = 0; j < state0.slits.size(); ++j) {
      if (j != i) gap = std::min(gap, std::abs(state0.slits[j].lambda - s.lambda));
    }
    for (const auto& p : state0.fixed_prevertices) gap = std::min(gap, std::abs(p.x - s.lambda));
    if (eps > 0.5 * gap) {
      throw ConfigError(fmt::format(
          "regularize: epsilon {} exceeds half the gap {} next to slit {}", eps, gap, i + 1));
    }
    s.a1 = s.lambda - eps;
    s.a2 = s.lambda + eps;
  }
  return out;
}

SeriesStart series_first_order(const AccessoryState& state0, const ControlVector& control) {
  SeriesStart out;
  out.fixed.assign(state0.fixed_prevertices.size(), 0.0);
  for (std::size_t i = 0; i < state0.slits.size(); ++i) {
    const SlitGroup& s = state0.slits[i];
    const double lam0 = s.lambda;
    const double al1 = 1.0 + s.sigma1;
    const double al2 = 1.0 + s.sigma2;
    if (!(al1 > 0.0) || !(al2 > 0.0)) {
      throw DomainError(fmt::format("series: slit {} base angles must be positive", i + 1));
    }
    const double q = -2.0 * control.scaled(i) * lam0 * (lam0 - 1.0) * (lam0 - 1.0);
    if (!(q > 0.0)) {
      throw DomainError(fmt::format("series: q = {} for slit {} is not positive", q, i + 1));
    }
    SeriesCoefficients c;
    c.q = q;
    c.lambda1 = (al1 - al2) * std::sqrt(q / (al1 * al2));
    c.a1_1 = -std::sqrt(q * al2 / al1);
    c.a2_1 = std::sqrt(q * al1 / al2);
    out.slits.push_back(c);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Evolution

std::vector<double> pack_state(const AccessoryState& state) {
  std::vector<double> y;
  y.reserve(1 + state.fixed_prevertices.size() + 3 * state.slits.size());
  y.push_back(std::abs(state.c));
  for (const auto& p : state.fixed_prevertices) y.push_back(p.x);
  for (const auto& s : state.slits) {
    y.push_back(s.a1);
    y.push_back(s.lambda);
    y.push_back(s.a2);
  }
  return y;
}

AccessoryState unpack_state(const AccessoryState& like, double t, std::span<const double> y) {
  AccessoryState s = like;
  s.t = t;
  s.c = std::polar(y[0], std::arg(like.c));
  std::size_t k = 1;
  for (auto& p : s.fixed_prevertices) p.x = y[k++];
  for (auto& slit : s.slits) {
    slit.a1 = y[k++];
    slit.lambda = y[k++];
    slit.a2 = y[k++];
  }
  return s;
}

namespace {

std::vector<double> pack_derivative(const StateDerivative& d, const AccessoryState& s) {
  std::vector<double> out;
  out.reserve(1 + d.dfixed.size() + 3 * d.dslits.size());
  out.push_back(std::abs(s.c) * d.log_rate);
  for (double v : d.dfixed) out.push_back(v);
  for (const auto& t : d.dslits) {
    out.push_back(t[0]);
    out.push_back(t[1]);
    out.push_back(t[2]);
  }
  return out;
}

// Distance from each packed prevertex to its nearest neighbor on the axis.
std::vector<double> neighbor_gaps(std::span<const double> y) {
  const std::size_t n = y.size() - 1;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{1});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return y[a] < y[b]; });
  std::vector<double> gap(y.size(), std::numeric_limits<double>::infinity());
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t i = order[k];
    double g = std::abs(y[i]);  // prevertex 0 is always a neighbor candidate
    if (k > 0) g = std::min(g, y[i] - y[order[k - 1]]);
    if (k + 1 < n) g = std::min(g, y[order[k + 1]] - y[i]);
    gap[i] = g;
  }
  return gap;
}

}  // namespace

EvolveError::EvolveError(const std::string& what, Trace partial)
    : StiffnessError(what), partial_(std::move(partial)) {}

Trace evolve(const AccessoryState& state0, const SlitPlan& plan, const EvolveOptions& opts) {
  plan.validate();
  if (plan.slits.size() != state0.slits.size()) {
    throw ConfigError(fmt::format("evolve: plan has {} slits, state has {}", plan.slits.size(),
                                  state0.slits.size()));
  }
  state0.check_ordering();

  Trace trace;
  auto record = [&](const AccessoryState& s, double h, double err) {
    TraceStep step;
    step.state = s;
    step.step = h;
    step.error = err;
    const ControlVector ctrl =
        rescale_for_length_param(control_coefficients(s, plan), s, plan.primary);
    step.control.resize(ctrl.size());
    for (std::size_t i = 0; i < ctrl.size(); ++i) step.control[i] = ctrl.scaled(i);
    if (opts.record_lengths) {
      const ScIntegrand integrand(s);
      for (std::size_t i = 0; i < s.slits.size(); ++i) {
        const cplx tip = integrand.map(cplx{s.slits[i].lambda, 0.0}, opts.map);
        step.slit_lengths.push_back(std::abs(tip - s.slits[i].base_point));
      }
    }
    trace.steps.push_back(std::move(step));
  };
  record(state0, 0.0, 0.0);
  if (!(plan.target_length > state0.t)) return trace;

  const double rtol = plan.ode_tol;
  constexpr double kUlpScale = 8.0 * std::numeric_limits<double>::epsilon();

  OdeRhs rhs = [&](double t, std::span<const double> y, std::span<double> dy) {
    const AccessoryState s = unpack_state(state0, t, y);
    try {
      s.check_ordering();
    } catch (const InvariantError& e) {
      throw DegeneracyError(e.what());
    }
    const ControlVector ctrl =
        rescale_for_length_param(control_coefficients(s, plan), s, plan.primary);
    const auto d = pack_derivative(ode_rhs(s, ctrl), s);
    std::copy(d.begin(), d.end(), dy.begin());
  };

  ErrorScale scale = [&](std::span<const double> y, std::span<double> sc) {
    const auto gaps = neighbor_gaps(y);
    sc[0] = rtol * std::abs(y[0]) + std::numeric_limits<double>::min();
    for (std::size_t i = 1; i < y.size(); ++i) {
      const double mag = std::abs(y[i]);
      sc[i] = rtol * std::min(mag, gaps[i]) + kUlpScale * mag + std::numeric_limits<double>::min();
    }
  };

  std::vector<double> prev_gaps;
  {
    const auto pts = state0.boundary_points();
    for (std::size_t k = 1; k < pts.size(); ++k) prev_gaps.push_back(pts[k].x - pts[k - 1].x);
  }

  StepObserver observer = [&](const StepInfo& info) {
    const AccessoryState s = unpack_state(state0, info.t, info.y);
    s.check_ordering();
    record(s, info.h, info.error);
    const auto pts = s.boundary_points();
    for (std::size_t k = 1; k < pts.size(); ++k) {
      const double g = pts[k].x - pts[k - 1].x;
      if (g < plan.merge_tol && g < prev_gaps[k - 1]) {
        trace.termination = Termination::Degenerate;
        trace.degeneracy_report = fmt::format(
            "gap {:.3e} between {} and {} fell below merge_tol {:.1e} at t = {:.17g}", g,
            label(pts[k - 1]), label(pts[k]), plan.merge_tol, info.t);
        return false;
      }
      prev_gaps[k - 1] = g;
    }
    return true;
  };

  AdaptiveOptions ao;
  ao.rtol = rtol;
  ao.initial_step = opts.initial_step > 0.0 ? opts.initial_step : 10.0 * plan.epsilon;
  ao.min_step = 0.0;
  ao.start_cap_fraction = 0.5;

  std::vector<double> y = pack_state(state0);
  try {
    integrate_dopri5(rhs, state0.t, plan.target_length, y, ao, observer, scale);
  } catch (const StiffnessError& e) {
    throw EvolveError(e.what(), std::move(trace));
  }
  return trace;
}

// ---------------------------------------------------------------------------
// Merging

namespace {

std::vector<MergedPrevertex> cluster(const std::vector<BoundaryPoint>& pts,
                                     const std::vector<bool>& cut,
                                     const AccessoryState& state) {
  std::vector<MergedPrevertex> out;
  std::size_t start = 0;
  for (std::size_t k = 0; k <= pts.size(); ++k) {
    if (k < pts.size() && (k == 0 || !cut[k - 1])) continue;
    if (k == start) continue;
    MergedPrevertex mp;
    double sig = 0.0;
    double moment = 0.0;
    double mean = 0.0;
    std::optional<double> anchor;
    for (std::size_t j = start; j < k; ++j) {
      sig += pts[j].sigma;
      moment += pts[j].sigma * pts[j].x;
      mean += pts[j].x;
      mp.members.push_back(label(pts[j]));
      if (pts[j].role == PrevertexRole::Zero) anchor = 0.0;
      if (pts[j].role == PrevertexRole::One) anchor = 1.0;
    }
    mean /= static_cast<double>(k - start);
    mp.sigma = sig;
    if (anchor) {
      mp.x = *anchor;
    } else if (std::abs(sig) > 1e-12) {
      mp.x = moment / sig;
    } else {
      mp.x = mean;
    }
    if (k - start == 1 && pts[start].role == PrevertexRole::Fixed) {
      mp.vertex = state.fixed_prevertices[pts[start].index].vertex;
    }
    out.push_back(std::move(mp));
    start = k;
  }
  return out;
}

}  // namespace

MergedParameters merge_degenerate(const AccessoryState& final_state, double cluster_tol) {
  if (!(cluster_tol > 0.0)) throw ConfigError("merge: cluster_tol must be positive");
  const auto pts = final_state.boundary_points();
  std::vector<bool> cut(pts.size() > 0 ? pts.size() - 1 : 0);
  std::vector<bool> alt_cut(cut.size());
  bool ambiguous = false;
  MergedParameters out;
  out.c = final_state.c;
  for (std::size_t k = 0; k + 1 < pts.size(); ++k) {
    const double g = pts[k + 1].x - pts[k].x;
    cut[k] = g >= cluster_tol;
    alt_cut[k] = cut[k];
    if (g >= 0.5 * cluster_tol && g <= 2.0 * cluster_tol) {
      ambiguous = true;
      alt_cut[k] = !cut[k];
      out.warnings.push_back(fmt::format("gap {:.3e} between {} and {} is within a factor 2 of "
                                         "cluster_tol {:.1e}",
                                         g, label(pts[k]), label(pts[k + 1]), cluster_tol));
    }
  }
  out.prevertices = cluster(pts, cut, final_state);
  if (ambiguous) out.alternative = cluster(pts, alt_cut, final_state);
  return out;
}

AccessoryState merged_state(const MergedParameters& merged, const AccessoryState& like,
                            const MapOptions& opts) {
  AccessoryState s;
  s.t = like.t;
  s.c = merged.c;
  s.base_value = like.base_value;
  s.alpha_infinity = like.alpha_infinity;
  s.sigma_zero = 0.0;
  s.sigma_one = 0.0;
  for (const auto& p : merged.prevertices) {
    if (p.x == 0.0) {
      s.sigma_zero += p.sigma;
    } else if (p.x == 1.0) {
      s.sigma_one += p.sigma;
    } else if (p.x < 0.0) {
      s.fixed_prevertices.push_back({p.x, p.sigma, std::nullopt});
    } else {
      throw InvariantError(fmt::format("merge: prevertex {} lies right of 0", p.x));
    }
  }

  auto poly = std::make_shared<PolygonSpec>();
  const ScIntegrand integrand(s);
  for (std::size_t k = 0; k < s.fixed_prevertices.size(); ++k) {
    poly->vertices.emplace_back(integrand.map(cplx{s.fixed_prevertices[k].x, 0.0}, opts));
    poly->alphas.push_back(1.0 + s.fixed_prevertices[k].sigma);
    s.fixed_prevertices[k].vertex = k;
  }
  poly->base_vertex_index = poly->vertices.size();
  poly->vertices.emplace_back(s.base_value);
  poly->alphas.push_back(1.0 + s.sigma_zero);
  poly->vertices.emplace_back(integrand.map(cplx{1.0, 0.0}, opts));
  poly->alphas.push_back(1.0 + s.sigma_one);
  std::optional<cplx> at_infinity;
  if (like.polygon) at_infinity = like.polygon->vertices[like.polygon->index_of_infinity()];
  poly->vertices.push_back(at_infinity);
  poly->alphas.push_back(s.alpha_infinity);
  s.polygon = std::move(poly);
  return s;
}

}  // namespace scslit
