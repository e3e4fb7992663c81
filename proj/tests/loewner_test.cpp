#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "scslit/errors.hpp"
#include "scslit/integrator.hpp"
#include "scslit/loewner.hpp"

using namespace scslit;

namespace {

// Two perpendicular slits from -3 and -1 on the half-plane, speed ratio 1:2.
SlitPlan two_slit_plan(double eps = 1e-12) {
  SlitPlan plan;
  plan.slits = {SlitPlanEntry{{-3, 0}, -3, -0.5, -0.5, 0.5, {0, 1}},
                SlitPlanEntry{{-1, 0}, -1, -0.5, -0.5, 1.0, {0, 1}}};
  plan.epsilon = eps;
  return plan;
}

AccessoryState two_slit_birth() {
  AccessoryState s = half_plane_state();
  s.slits = {SlitGroup{-3, -3, -3, -0.5, -0.5, {-3, 0}, {0, 1}},
             SlitGroup{-1, -1, -1, -0.5, -0.5, {-1, 0}, {0, 1}}};
  return s;
}

// Single slit whose base factors are switched off, so A = |l| |l - 1|^2.
AccessoryState formal_slit(double lambda, double c = 1.0) {
  AccessoryState s = half_plane_state(c);
  s.slits = {SlitGroup{lambda - 0.5, lambda, lambda + 0.5, 0.0, 0.0, {lambda, 0}, {0, 1}}};
  return s;
}

ControlVector constant_control(std::vector<double> w) {
  ControlVector c;
  c.weights = std::move(w);
  return c;
}

// Integrates the flow under a fixed control with the library stepper.
AccessoryState flow(const AccessoryState& s0, const ControlVector& control, double t1) {
  std::vector<double> y = pack_state(s0);
  const OdeRhs rhs = [&](double t, std::span<const double> yy, std::span<double> dy) {
    const AccessoryState s = unpack_state(s0, t, yy);
    const StateDerivative d = ode_rhs(s, control);
    std::size_t k = 0;
    dy[k++] = std::abs(s.c) * d.log_rate;
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
}

}  // namespace

TEST_CASE("plan validation") {
  SlitPlan plan = two_slit_plan();
  CHECK_NOTHROW(plan.validate());
  plan.slits[0].ratio = 0.0;
  CHECK_THROWS_AS(plan.validate(), ConfigError);
  plan = two_slit_plan();
  plan.slits[1].base_prevertex = -3;
  CHECK_THROWS_AS(plan.validate(), ConfigError);
  plan = two_slit_plan();
  plan.slits[1].base_prevertex = 0.5;
  CHECK_THROWS_AS(plan.validate(), ConfigError);
}

TEST_CASE("speed factor of a formal slit") {
  CHECK(std::abs(speed_factor(formal_slit(-1.0), 0) - 4.0) < 1e-14);
  AccessoryState s = formal_slit(-1.0);
  s.slits[0].a1 = s.slits[0].lambda;
  s.slits[0].sigma1 = -0.5;
  CHECK_THROWS_AS(speed_factor(s, 0), DegeneracyError);
}

TEST_CASE("control coefficients") {
  const std::vector<double> one_a{3.7}, one_r{1.0};
  CHECK(control_from_speed_factors(one_a, one_r).weights[0] == doctest::Approx(1.0));

  const std::vector<double> eq_a{1.3, 1.3}, eq_r{1.0, 1.0};
  const ControlVector half = control_from_speed_factors(eq_a, eq_r);
  CHECK(std::abs(half.weights[0] - 0.5) < 1e-15);
  CHECK(std::abs(half.weights[1] - 0.5) < 1e-15);

  const auto c12 = two_slit_control(2.0, 1.0, 0.5);
  CHECK(std::abs(c12[0] - 0.2) < 1e-15);
  CHECK(std::abs(c12[1] - 0.8) < 1e-15);
  const std::vector<double> a{2.0, 1.0}, r{0.5, 1.0};
  const ControlVector gen = control_from_speed_factors(a, r);
  CHECK(std::abs(gen.weights[0] - 0.2) < 1e-15);
  CHECK(std::abs(gen.weights[1] - 0.8) < 1e-15);
}

TEST_CASE("general and two-slit control formulas agree") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.01, 100.0);
  for (int i = 0; i < 200; ++i) {
    const double A1 = u(rng), A2 = u(rng), ratio = u(rng) / 10.0;
    const auto c12 = two_slit_control(A1, A2, ratio);
    const std::vector<double> a{A1, A2}, r{ratio, 1.0};
    const ControlVector gen = control_from_speed_factors(a, r);
    CHECK(std::abs(gen.weights[0] - c12[0]) < 1e-14);
    CHECK(std::abs(gen.weights[1] - c12[1]) < 1e-14);
    CHECK(std::abs(gen.weights[0] + gen.weights[1] - 1.0) < 1e-14);
  }
}

TEST_CASE("length rescale") {
  // |c| = 2, A = 4: C~ = 1/8
  const AccessoryState s = formal_slit(-1.0, 2.0);
  const ControlVector c = rescale_for_length_param(constant_control({1.0}), s);
  CHECK(std::abs(c.scaled(0) - 0.125) < 1e-15);

  // |c| A C = 1 leaves the control alone
  const AccessoryState u = formal_slit(-1.0, 0.25);
  CHECK(std::abs(rescale_for_length_param(constant_control({1.0}), u).scale - 1.0) < 1e-15);
}

TEST_CASE("right-hand side") {
  AccessoryState s = half_plane_state();
  s.fixed_prevertices = {Prevertex{-3.0, 0.0, std::nullopt}};
  s.slits = {SlitGroup{-1.5, -1.0, -0.5, -0.5, -0.5, {-1, 0}, {0, 1}}};

  const StateDerivative zero = ode_rhs(s, constant_control({0.0}));
  CHECK(zero.dfixed[0] == 0.0);
  for (double v : zero.dslits[0]) CHECK(v == 0.0);
  CHECK(zero.log_rate == 0.0);

  const StateDerivative d = ode_rhs(s, constant_control({1.0}));
  CHECK(std::abs(d.dfixed[0] - (-12.0)) < 1e-13);
  // (1/c) dc/dt = -alpha_inf C (lambda - 1) = -(-1)(1)(-2)
  CHECK(std::abs(d.log_rate - (-2.0)) < 1e-14);
}

TEST_CASE("residue identity balances") {
  const SlitPlan plan = two_slit_plan();
  const AccessoryState s0 = regularize_initial(two_slit_birth(), plan);
  EvolveOptions eo;
  eo.record_lengths = false;
  SlitPlan short_plan = plan;
  short_plan.target_length = 0.4;
  const Trace tr = evolve(s0, short_plan, eo);
  const AccessoryState& s = tr.steps.back().state;
  const ControlVector c =
      rescale_for_length_param(control_coefficients(s, short_plan), s, short_plan.primary);
  const StateDerivative d = ode_rhs(s, c);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> re(-10, 2), im(0.05, 5);
  for (int i = 0; i < 20; ++i) {
    CHECK(residue_identity_mismatch(s, c, d, cplx{re(rng), im(rng)}) < 1e-9);
  }
  // a wrong derivative does not balance
  StateDerivative bad = d;
  bad.dslits[0][1] += 1e-3;
  CHECK(residue_identity_mismatch(s, c, bad, cplx{-2, 1}) > 1e-8);
}

TEST_CASE("regularization") {
  SlitPlan one;
  one.slits = {SlitPlanEntry{{-2, 0}, -2, -0.5, -0.5, 1.0, {0, 1}}};
  AccessoryState s = half_plane_state();
  s.slits = {SlitGroup{-2, -2, -2, -0.5, -0.5, {-2, 0}, {0, 1}}};
  const AccessoryState r = regularize_initial(s, one);
  CHECK(r.slits[0].a1 == -2.0 - 1e-12);
  CHECK(r.slits[0].lambda == -2.0);
  CHECK(r.slits[0].a2 == -2.0 + 1e-12);

  const AccessoryState two = regularize_initial(two_slit_birth(), two_slit_plan());
  CHECK_NOTHROW(two.check_ordering());
  CHECK(std::abs(two.exponent_sum_residual()) < 1e-12);

  SlitPlan wide;
  wide.slits = {SlitPlanEntry{{-1, 0}, -1, -0.5, -0.5, 1.0, {0, 1}}};
  wide.epsilon = 1.0;
  AccessoryState w = half_plane_state();
  w.slits = {SlitGroup{-1, -1, -1, -0.5, -0.5, {-1, 0}, {0, 1}}};
  CHECK_THROWS_AS(regularize_initial(w, wide), ConfigError);
}

TEST_CASE("first-order series coefficients") {
  AccessoryState s = half_plane_state();
  s.slits = {SlitGroup{-1, -1, -1, -0.5, -0.5, {-1, 0}, {0, 1}}};
  const SeriesStart st = series_first_order(s, constant_control({0.5}));
  REQUIRE(st.slits.size() == 1);
  CHECK(std::abs(st.slits[0].q - 4.0) < 1e-15);
  CHECK(std::abs(st.slits[0].lambda1) < 1e-15);
  CHECK(std::abs(st.slits[0].a1_1 + 2.0) < 1e-15);
  CHECK(std::abs(st.slits[0].a2_1 - 2.0) < 1e-15);

  // oblique slit
  s.slits[0].sigma1 = -0.7;
  s.slits[0].sigma2 = -0.3;
  const SeriesStart ob = series_first_order(s, constant_control({0.5}));
  const double a1 = 0.3, a2 = 0.7;  // alpha = sigma + 1
  CHECK(std::abs(ob.slits[0].lambda1 - (a1 - a2) * std::sqrt(4.0 / (a1 * a2))) < 1e-14);

  AccessoryState pos = s;
  pos.slits = {SlitGroup{2, 2, 2, -0.5, -0.5, {2, 0}, {0, 1}}};
  CHECK_THROWS_AS(series_first_order(pos, constant_control({0.5})), DomainError);
}

TEST_CASE("series start matches the regularized flow") {
  const AccessoryState birth = two_slit_birth();
  const ControlVector c = constant_control({0.4, 0.6});
  const SeriesStart st = series_first_order(birth, c);
  const AccessoryState s0 = regularize_initial(birth, two_slit_plan());
  const double t1 = 1e-10, t2 = 1e-8;
  const AccessoryState y1 = flow(s0, c, t1);
  const AccessoryState y2 = flow(s0, c, t2);
  for (std::size_t i = 0; i < 2; ++i) {
    const double ds = std::sqrt(t2) - std::sqrt(t1);
    const double slope2 = (y2.slits[i].a2 - y1.slits[i].a2) / ds;
    const double slope1 = (y2.slits[i].a1 - y1.slits[i].a1) / ds;
    CHECK(std::abs(slope2 / st.slits[i].a2_1 - 1.0) < 0.02);
    CHECK(std::abs(slope1 / st.slits[i].a1_1 - 1.0) < 0.02);
  }
}

TEST_CASE("evolve with zero target returns the start") {
  SlitPlan plan = two_slit_plan();
  plan.target_length = 0.0;
  const AccessoryState s0 = regularize_initial(two_slit_birth(), plan);
  const Trace tr = evolve(s0, plan);
  REQUIRE(tr.steps.size() == 1);
  CHECK(tr.termination == Termination::ReachedTarget);
  CHECK(tr.steps[0].state.slits[0].lambda == s0.slits[0].lambda);
}

TEST_CASE("two-slit evolution") {
  SlitPlan plan = two_slit_plan();
  const AccessoryState s0 = regularize_initial(two_slit_birth(), plan);
  const Trace tr = evolve(s0, plan);
  REQUIRE(tr.termination == Termination::ReachedTarget);
  const AccessoryState& f = tr.steps.back().state;
  CHECK(f.t == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(std::abs(f.slits[0].a1 - (-9.8974995)) < 1e-6);
  CHECK(std::abs(f.slits[0].lambda - (-8.5126732)) < 1e-6);
  CHECK(std::abs(f.slits[0].a2 - (-7.3979258)) < 1e-6);
  CHECK(std::abs(f.slits[1].a1 - (-6.8108252)) < 1e-6);
  CHECK(std::abs(f.slits[1].lambda - (-3.7393888)) < 1e-6);
  CHECK(std::abs(f.slits[1].a2 - (-0.3978735)) < 1e-6);
  CHECK(std::abs(std::abs(f.c) - 0.5867804) < 1e-6);

  // tip speeds: |dLambda_r/dt| = |c| A_r C~_r, compared with finite differences
  const std::size_t k = tr.steps.size() / 2;
  const TraceStep& a = tr.steps[k - 1];
  const TraceStep& b = tr.steps[k + 1];
  const TraceStep& m = tr.steps[k];
  const double dt = b.state.t - a.state.t;
  for (std::size_t r = 0; r < 2; ++r) {
    const double fd = std::abs(slit_endpoint(b.state, r) - slit_endpoint(a.state, r)) / dt;
    const double model = std::abs(m.state.c) * speed_factor(m.state, r) * m.control[r];
    CHECK(std::abs(fd / model - 1.0) < 1e-5);
  }
  // ratio 1:2 holds at every recorded step past the start
  for (const TraceStep& st : tr.steps) {
    if (st.state.t < 0.01) continue;
    CHECK(std::abs(st.slit_lengths[1] / st.slit_lengths[0] - 2.0) < 1e-4);
    CHECK(std::abs(st.slit_lengths[0] - st.state.t) < 1e-6);
  }
}

TEST_CASE("merging clustered prevertices") {
  AccessoryState s = half_plane_state();
  s.slits = {SlitGroup{-3.5, -3.0, -2.5, -0.5, -0.5, {-3, 0}, {0, 1}}};
  const MergedParameters none = merge_degenerate(s, 1e-4);
  CHECK(none.prevertices.size() == s.boundary_points().size());
  CHECK(none.warnings.empty());
  CHECK(!none.alternative);

  // lambda1, a12, a1, a21, lambda2 within 1e-6 of each other
  AccessoryState r = half_plane_state();
  r.sigma_zero = r.sigma_one = -0.5;
  r.alpha_infinity = 1.0;
  const double x = -4.7;
  r.fixed_prevertices = {Prevertex{x, -0.5, 0}, Prevertex{-4.02, -0.5, 1}};
  r.slits = {SlitGroup{-8.6, x - 2e-6, x - 1e-6, -0.5, -0.5, {-0.5, 1}, {0, -1}},
             SlitGroup{x + 1e-6, x + 2e-6, -4.08, -0.5, -0.5, {-1, 0.5}, {1, 0}}};
  const MergedParameters m = merge_degenerate(r, 1e-4);
  std::size_t found = 0;
  for (const MergedPrevertex& p : m.prevertices) {
    if (p.members.size() == 5) {
      ++found;
      CHECK(std::abs(p.sigma - 0.5) < 1e-15);
      CHECK(std::abs(p.x - x) < 1e-5);
    }
  }
  CHECK(found == 1);
  CHECK(m.prevertices.front().x == -8.6);
  CHECK(m.warnings.empty());

  // a gap within a factor 2 of the tolerance is ambiguous
  AccessoryState amb = s;
  amb.slits[0].a2 = -3.0 + 1.5e-4;
  const MergedParameters w = merge_degenerate(amb, 1e-4);
  CHECK(!w.warnings.empty());
  CHECK(w.alternative.has_value());
}
