#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "scslit/errors.hpp"
#include "scslit/oracle.hpp"
#include "scslit/scenario.hpp"

using namespace scslit;

namespace {

AccessoryState table1_state() {
  AccessoryState s = half_plane_state(0.5867804);
  s.slits = {SlitGroup{-9.8974995, -8.5126732, -7.3979258, -0.5, -0.5, {-3, 0}, {0, 1}},
             SlitGroup{-6.8108252, -3.7393888, -0.3978735, -0.5, -0.5, {-1, 0}, {0, 1}}};
  s.t = 1.0;
  return s;
}

const double kA1 = -2.0 * (std::sqrt(2.0) + 1.0) - 1.0;
const double kA2 = -2.0 * (std::sqrt(2.0) + 1.0);

Trace two_slit_trace() {
  const ScenarioConfig cfg = preset_scenario("example1");
  const PreparedStage p = prepare_stage(cfg.initial, cfg.stages[0], cfg.tolerances);
  return evolve(regularize_initial(p.state, p.plan), p.plan);
}

SlitPlan two_slit_plan() {
  const ScenarioConfig cfg = preset_scenario("example1");
  return prepare_stage(cfg.initial, cfg.stages[0], cfg.tolerances).plan;
}

}  // namespace

TEST_CASE("rectangle side lengths") {
  const SideLengthReport r = side_lengths(rectangle_state(2.0, 1.0));
  const std::vector<double> expected{1, 2, 1, 1, 1};
  REQUIRE(r.lengths.size() == expected.size());
  for (std::size_t k = 0; k < expected.size(); ++k) {
    CHECK(std::abs(r.lengths[k] - expected[k]) < 1e-8);
  }
  CHECK(r.sides[1] == "a2-zero");
  CHECK(r.sides[3] == "one-infinity");
  CHECK(std::abs(r.d - 1.84146496) < 1e-8);

  const std::vector<double> targets{1, 2, 1, 1, 1};
  const SideLengthReport res = side_lengths(rectangle_state(2.0, 1.0), targets);
  for (double v : res.residuals) CHECK(std::abs(v) < 1e-8);
  const std::vector<double> short_targets{1, 2};
  CHECK_THROWS_AS(side_lengths(rectangle_state(2.0, 1.0), short_targets), DomainError);
}

TEST_CASE("side lengths are homogeneous in d") {
  const AccessoryState s = table1_state();
  AccessoryState t = s;
  t.c *= 2.5;
  const auto a = side_lengths(s).lengths;
  const auto b = side_lengths(t).lengths;
  for (std::size_t k = 0; k < a.size(); ++k) CHECK(std::abs(b[k] - 2.5 * a[k]) < 1e-13 * b[k]);

  const std::vector<double> x = pack_state(s);
  const auto jac = side_length_jacobian(s, x);
  // jac[j] is the column for unknown j; unknown 0 is d
  for (std::size_t k = 0; k < a.size(); ++k) {
    CHECK(std::abs(jac[0][k] - a[k] / x[0]) < 1e-7 * std::abs(jac[0][k]) + 1e-9);
  }
}

TEST_CASE("slit banks add up to twice the slit lengths") {
  const AccessoryState s = table1_state();
  const SideLengthReport r = side_lengths(s);
  double banks = 0.0;
  for (std::size_t k = 0; k < r.sides.size(); ++k) {
    if (r.sides[k].find("lambda") != std::string::npos) banks += r.lengths[k];
  }
  CHECK(std::abs(banks - 2.0 * (slit_length(s, 0) + slit_length(s, 1))) < 1e-6);
  CHECK(std::abs(banks - 6.0) < 1e-5);
}

TEST_CASE("rectangle Newton solve from 10 percent off") {
  NewtonOptions opts;
  opts.sides = {1, 2, 3};
  const std::vector<double> targets{2, 1, 1};
  for (double f : {0.9, 1.1}) {
    AccessoryState g = rectangle_state(2.0, 1.0);
    g.fixed_prevertices[0].x *= f;
    g.fixed_prevertices[1].x *= 1.0 + (f - 1.0) / 2.0;
    g.c *= f;
    const NewtonReport rep = solve_prevertices(g, targets, opts);
    CHECK(std::abs(rep.state.fixed_prevertices[0].x - kA1) < 1e-8);
    CHECK(std::abs(rep.state.fixed_prevertices[1].x - kA2) < 1e-8);
    CHECK(std::abs(std::abs(rep.state.c) - 1.84146496) < 1e-8);
    CHECK(rep.residual_history.back() <= 1e-10);

    // quadratic tail: e_{k+1} / e_k^2 stays bounded
    const auto& h = rep.residual_history;
    REQUIRE(h.size() >= 4);
    for (std::size_t k = h.size() - 3; k + 1 < h.size(); ++k) {
      if (h[k + 1] < 1e-14) continue;  // at the rounding floor
      CHECK(h[k + 1] / (h[k] * h[k]) < 10.0);
    }
  }
}

TEST_CASE("converged input takes one evaluation") {
  NewtonOptions opts;
  opts.sides = {1, 2, 3};
  const std::vector<double> targets{2, 1, 1};
  const NewtonReport rep = solve_prevertices(rectangle_state(2.0, 1.0), targets, opts);
  CHECK(rep.iterations == 1);
  CHECK(rep.state.fixed_prevertices[0].x == rectangle_state(2.0, 1.0).fixed_prevertices[0].x);
}

TEST_CASE("two-slit polygon Newton refinement") {
  AccessoryState g = table1_state();
  g.c += 1e-3;
  double sign = 1.0;
  for (SlitGroup& s : g.slits) {
    s.a1 += sign * 1e-3;
    s.lambda -= sign * 1e-3;
    s.a2 += sign * 1e-3;
    sign = -sign;
  }
  const std::vector<double> targets{1, 1, 2, 2, 2, 1, 1};
  const NewtonReport rep = solve_prevertices(g, targets);
  const AccessoryState& s = rep.state;
  CHECK(std::abs(s.slits[0].a1 - (-9.8974995)) < 1e-6);
  CHECK(std::abs(s.slits[0].lambda - (-8.5126732)) < 1e-6);
  CHECK(std::abs(s.slits[0].a2 - (-7.3979258)) < 1e-6);
  CHECK(std::abs(s.slits[1].a1 - (-6.8108252)) < 1e-6);
  CHECK(std::abs(s.slits[1].lambda - (-3.7393888)) < 1e-6);
  CHECK(std::abs(s.slits[1].a2 - (-0.3978735)) < 1e-6);
  CHECK(std::abs(std::abs(s.c) - 0.5867804) < 1e-6);
}

TEST_CASE("Newton failures") {
  NewtonOptions opts;
  opts.sides = {1, 2, 3};
  const std::vector<double> targets{2, 1, 1};
  AccessoryState g = rectangle_state(2.0, 1.0);
  g.fixed_prevertices[0].x *= 1.1;

  NewtonOptions strict = opts;
  strict.max_condition = 1.0;
  CHECK_THROWS_AS(solve_prevertices(g, targets, strict), ConditioningError);

  NewtonOptions short_run = opts;
  short_run.max_iterations = 1;
  CHECK_THROWS_AS(solve_prevertices(g, targets, short_run), DampingError);

  const std::vector<double> two{2, 1};
  CHECK_THROWS_AS(solve_prevertices(g, two, opts), DomainError);
}

TEST_CASE("trace verification") {
  const Trace tr = two_slit_trace();
  const VerifyReport rep = verify_trace(tr, two_slit_plan());
  CHECK(rep.straightness <= 1e-5);
  CHECK(rep.ratio <= 1e-4);
  CHECK(rep.fixed_vertex <= 1e-6);
  CHECK(rep.length_param <= 1e-6);
  CHECK(rep.residue <= 1e-8);
  CHECK(rep.control_sum <= 1e-14);
  CHECK(rep.ordering_violations == 0);
  CHECK(rep.unresolved.steps == 0);
  CHECK(rep.all_ok());

  Trace first;
  first.steps = {tr.steps.front()};
  const VerifyReport zero = verify_trace(first, two_slit_plan());
  CHECK(zero.straightness < 1e-12);
  CHECK(zero.fixed_vertex < 1e-12);
  CHECK(zero.ratio == 0.0);

  Trace bad = tr;
  TraceStep& mid = bad.steps[bad.steps.size() / 2];
  mid.state.slits[0].lambda += 1e-3;
  const VerifyReport flagged = verify_trace(bad, two_slit_plan());
  CHECK(!flagged.straightness_ok);
  CHECK(!flagged.all_ok());
}

TEST_CASE("point in polygon and grid containment") {
  const std::vector<cplx> square{{0, 0}, {1, 0}, {1, 1}, {0, 1}};
  CHECK(polygon_covers(square, {0.5, 0.5}));
  CHECK(polygon_covers(square, {1.0, 0.5}));
  CHECK(!polygon_covers(square, {1.5, 0.5}));

  GridImage g;
  g.polylines.push_back(GridLine{GridOrientation::Horizontal, 0.5, {{0.1, 0.5}, {0.9, 0.5}}});
  const ContainmentReport inside = check_grid_containment(g, square, {});
  CHECK(inside.points == 2);
  CHECK(inside.outside == 0);

  g.polylines.push_back(GridLine{GridOrientation::Horizontal, 0.7, {{0.1, 0.7}, {1.5, 0.7}}});
  const std::vector<Segment> cut{Segment{{0.5, 0.0}, {0.5, 0.8}}};
  const ContainmentReport r = check_grid_containment(g, square, cut);
  CHECK(r.outside == 1);
  CHECK(r.crossings == 2);

  // empty region: upper half-plane
  GridImage low;
  low.polylines.push_back(GridLine{GridOrientation::Horizontal, -1, {{0, -1}, {1, -1}}});
  CHECK(check_grid_containment(low, {}, {}).outside == 2);
}
