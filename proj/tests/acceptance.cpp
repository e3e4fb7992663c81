// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits nonzero when any of them fails.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

#include "scslit/integrator.hpp"
#include "scslit/loewner.hpp"
#include "scslit/oracle.hpp"
#include "scslit/quadrature.hpp"
#include "scslit/scenario.hpp"
#include "scslit/sc_core.hpp"

using namespace scslit;

namespace {

struct Outcome {
  bool ok = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// a11, lambda1, a12, a21, lambda2, a22, |c|
std::vector<double> seven(const AccessoryState& s) {
  return {s.slits[0].a1, s.slits[0].lambda, s.slits[0].a2, s.slits[1].a1,
          s.slits[1].lambda, s.slits[1].a2, std::abs(s.c)};
}

const std::vector<double> kTable1{-9.8974995, -8.5126732, -7.3979258, -6.8108252,
                                  -3.7393888, -0.3978735, 0.5867804};

double max_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) m = std::max(m, std::abs(a[k] - b[k]));
  return m;
}

RunResult run(const std::string& preset, double epsilon = 0.0) {
  ScenarioConfig cfg = preset_scenario(preset);
  if (epsilon > 0.0) cfg.tolerances.epsilon = epsilon;
  cfg.outputs.verify = true;
  cfg.outputs.grid = true;
  return run_scenario(cfg);
}

const AccessoryState& last_state(const RunResult& r) {
  return r.stages.back().trace.steps.back().state;
}

Outcome a1(const RunResult& r) {
  const double d = max_diff(seven(last_state(r)), kTable1);
  return {d <= 1e-5, "max |diff| " + fmt("%.2e", d)};
}

Outcome a2(const RunResult& r) {
  const auto& pts = r.stages.back().merged.prevertices;
  auto find = [&](const std::string& member) -> const MergedPrevertex* {
    for (const auto& p : pts) {
      if (std::find(p.members.begin(), p.members.end(), member) != p.members.end()) return &p;
    }
    return nullptr;
  };
  const MergedPrevertex* b1 = find("a11");
  const MergedPrevertex* lam = find("lambda1");
  const MergedPrevertex* b2 = find("a22");
  const MergedPrevertex* a = find("a2");
  if (!b1 || !lam || !b2 || !a) return {false, "merged prevertices missing"};
  if (lam != find("lambda2")) return {false, "tips did not merge"};
  const double db = std::max({std::abs(b1->x + 8.6039921), std::abs(b2->x + 4.0805629),
                              std::abs(a->x + 4.0225626)});
  const double dl = std::abs(lam->x + 4.6992541);
  return {db <= 1e-4 && dl <= 5e-4,
          "b1/b2/a " + fmt("%.2e", db) + ", lambda " + fmt("%.2e", dl)};
}

Outcome a3() {
  const AccessoryState r = rectangle_state(2.0, 1.0);
  const double a1 = r.fixed_prevertices[0].x, a2 = r.fixed_prevertices[1].x;
  const double l1 = locate_prevertex(r, cplx{-0.5, 1.0}, -1e3, a1);
  const double l2 = locate_prevertex(r, cplx{-1.0, 0.5}, a1, a2);
  const double d = std::max({std::abs(std::abs(r.c) - 1.84146496), std::abs(a1 + 5.82842712),
                             std::abs(a2 + 4.82842712), std::abs(l1 + 6.87509856),
                             std::abs(l2 + 5.28521351)});
  return {d <= 1e-7, "max |diff| " + fmt("%.2e", d)};
}

Outcome a4(const RunResult& r) {
  const std::vector<double> answer = seven(last_state(r));
  AccessoryState g = last_state(r);
  g.c += 1e-3;
  double sign = 1.0;
  for (SlitGroup& s : g.slits) {
    s.a1 += sign * 1e-3;
    s.lambda -= sign * 1e-3;
    s.a2 += sign * 1e-3;
    sign = -sign;
  }
  const std::vector<double> targets{1, 1, 2, 2, 2, 1, 1};
  const double d = max_diff(seven(solve_prevertices(g, targets).state), answer);

  NewtonOptions opts;
  opts.sides = {1, 2, 3};
  const std::vector<double> rect_targets{2, 1, 1};
  const AccessoryState exact = rectangle_state(2.0, 1.0);
  bool rect_ok = true;
  double worst_tail = 0.0;
  for (double f : {0.9, 1.1}) {
    AccessoryState rg = exact;
    rg.fixed_prevertices[0].x *= f;
    rg.fixed_prevertices[1].x *= 1.0 + (f - 1.0) / 2.0;
    rg.c *= f;
    const NewtonReport rep = solve_prevertices(rg, rect_targets, opts);
    const auto& h = rep.residual_history;
    rect_ok = rect_ok && h.size() >= 3 && h.back() <= 1e-10 &&
              std::abs(rep.state.fixed_prevertices[0].x - exact.fixed_prevertices[0].x) < 1e-8 &&
              std::abs(rep.state.fixed_prevertices[1].x - exact.fixed_prevertices[1].x) < 1e-8;
    for (std::size_t k = h.size() >= 3 ? h.size() - 3 : 0; k + 1 < h.size(); ++k) {
      if (h[k + 1] < 1e-14) continue;
      worst_tail = std::max(worst_tail, h[k + 1] / (h[k] * h[k]));
    }
  }
  rect_ok = rect_ok && worst_tail < 10.0;
  return {d <= 1e-6 && rect_ok, "re-converged " + fmt("%.2e", d) + ", rectangle e_k+1/e_k^2 " +
                                    fmt("%.2g", worst_tail)};
}

Outcome a5(const RunResult& base) {
  const std::vector<double> ref = seven(last_state(base));
  double d = 0.0;
  for (double eps : {1e-10, 1e-14}) d = std::max(d, max_diff(seven(last_state(run("example1", eps))), ref));
  return {d <= 1e-6, "max change " + fmt("%.2e", d)};
}

// Moments of (1-x)^a (1+x)^b from integrating ((1-x)^(a+1) (1+x)^(b+1) x^k)' by parts.
std::vector<double> jacobi_power_moments(double a, double b, int kmax) {
  std::vector<double> m(kmax + 1);
  m[0] = jacobi_moment(a, b);
  if (kmax >= 1) m[1] = (b - a) / (a + b + 2.0) * m[0];
  for (int k = 1; k < kmax; ++k) m[k + 1] = ((b - a) * m[k] + k * m[k - 1]) / (a + b + 2.0 + k);
  return m;
}

bool gauss_jacobi_ok(double& worst) {
  worst = 0.0;
  const double beta_half = jacobi_moment(-0.5, -0.5) - std::numbers::pi;
  worst = std::max(worst, std::abs(beta_half));
  for (double a : {-0.5, -0.25, 0.0, 0.5, 1.5}) {
    for (double b : {-0.75, -0.5, 0.0, 0.3}) {
      const double closed = std::pow(2.0, a + b + 1.0) * std::beta(a + 1.0, b + 1.0);
      worst = std::max(worst, std::abs(jacobi_moment(a, b) - closed) / closed);
      const int n = 12;
      const QuadratureRule q = gauss_jacobi(n, a, b);
      const std::vector<double> m = jacobi_power_moments(a, b, 2 * n - 1);
      for (int k = 0; k <= 2 * n - 1; ++k) {
        double s = 0.0;
        for (int j = 0; j < n; ++j) s += q.weights[j] * std::pow(q.nodes[j], k);
        worst = std::max(worst, std::abs(s - m[k]) / m[0]);
      }
    }
  }
  return worst <= 1e-13;
}

// Slopes of the regularized flow in sqrt(t) against the first-order series.
double series_slope_mismatch(const RunResult& r) {
  const PreparedStage& p = r.stages.front().prepared;
  ControlVector c;
  c.weights = r.stages.front().trace.steps.front().control;
  const SeriesStart st = series_first_order(p.state, c);
  const AccessoryState s0 = regularize_initial(p.state, p.plan);
  auto flow = [&](double t1) {
    std::vector<double> y = pack_state(s0);
    const OdeRhs rhs = [&](double t, std::span<const double> yy, std::span<double> dy) {
      const StateDerivative d = ode_rhs(unpack_state(s0, t, yy), c);
      std::size_t k = 0;
      dy[k++] = yy[0] * d.log_rate;
      for (double v : d.dfixed) dy[k++] = v;
      for (const auto& tr : d.dslits) {
        for (double v : tr) dy[k++] = v;
      }
    };
    AdaptiveOptions opts;
    opts.rtol = 1e-12;
    opts.atol = 1e-22;
    opts.initial_step = 1e-3 * t1;
    integrate_dopri5(rhs, 0.0, t1, y, opts);
    return unpack_state(s0, t1, y);
  };
  const double t1 = 1e-10, t2 = 1e-8;
  const AccessoryState y1 = flow(t1), y2 = flow(t2);
  const double ds = std::sqrt(t2) - std::sqrt(t1);
  double worst = 0.0;
  for (std::size_t i = 0; i < st.slits.size(); ++i) {
    worst = std::max(worst, std::abs((y2.slits[i].a1 - y1.slits[i].a1) / ds / st.slits[i].a1_1 - 1.0));
    worst = std::max(worst, std::abs((y2.slits[i].a2 - y1.slits[i].a2) / ds / st.slits[i].a2_1 - 1.0));
  }
  return worst;
}

Outcome a6(const RunResult& e1, const RunResult& e2) {
  std::string detail;
  bool ok = true;
  double residue = 0.0, csum = 0.0, length = 0.0, ratio = 0.0;
  std::size_t ordering = 0, outside = 0, unresolved = 0;
  for (const RunResult* r : {&e1, &e2}) {
    const VerifyReport& v = *r->stages.front().verify;
    ok = ok && v.all_ok();
    residue = std::max(residue, v.residue);
    csum = std::max(csum, v.control_sum);
    length = std::max(length, v.length_param);
    ratio = std::max(ratio, v.ratio);
    ordering += v.ordering_violations;
    unresolved += v.unresolved.steps;
    if (!r->containment) {
      ok = false;
    } else {
      outside += r->containment->outside + r->containment->crossings;
    }
  }
  ok = ok && residue <= 1e-8 && csum <= 1e-14 && length <= 1e-6 && ratio <= 1e-4 &&
       ordering == 0 && outside == 0;

  const double slope = series_slope_mismatch(e1);
  double gj = 0.0;
  const bool gj_ok = gauss_jacobi_ok(gj);
  ok = ok && slope <= 0.02 && gj_ok;

  detail = "residue " + fmt("%.1e", residue) + ", sum C " + fmt("%.1e", csum) + ", |L-t| " +
           fmt("%.1e", length) + ", ratio " + fmt("%.1e", ratio) + ", ordering " +
           std::to_string(ordering) + ", series " + fmt("%.1e", slope) + ", GJ " +
           fmt("%.1e", gj) + ", grid violations " + std::to_string(outside) +
           ", unresolved steps " + std::to_string(unresolved);
  return {ok, detail};
}

bool report(const char* id, const char* what, const std::function<Outcome()>& check) {
  Outcome o;
  try {
    o = check();
  } catch (const std::exception& e) {
    o = {false, std::string("threw: ") + e.what()};
  }
  std::printf("%s %s: %s (%s)\n", o.ok ? "PASS" : "FAIL", id, what, o.detail.c_str());
  std::fflush(stdout);
  return o.ok;
}

}  // namespace

int main() {
  RunResult e1, e2;
  try {
    e1 = run("example1");
    e2 = run("example2");
  } catch (const std::exception& e) {
    std::printf("FAIL setup: %s\n", e.what());
    return 1;
  }
  bool ok = true;
  ok &= report("A1", "two-slit half-plane parameters", [&] { return a1(e1); });
  ok &= report("A2", "merged rectangle parameters", [&] { return a2(e2); });
  ok &= report("A3", "rectangle closed forms", [] { return a3(); });
  ok &= report("A4", "Newton cross-check", [&] { return a4(e1); });
  ok &= report("A5", "epsilon robustness", [&] { return a5(e1); });
  ok &= report("A6", "property suites", [&] { return a6(e1, e2); });
  return ok ? 0 : 1;
}
