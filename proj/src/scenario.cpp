#include "scslit/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <fmt/ostream.h>

#include "scslit/errors.hpp"
#include "scslit/quadrature.hpp"

namespace scslit {

using nlohmann::json;

namespace {

constexpr double kPi = std::numbers::pi;

// ---------------------------------------------------------------------------
// JSON helpers

void check_keys(const json& j, std::string_view where, std::initializer_list<std::string_view> allowed) {
  if (!j.is_object()) throw ConfigError(fmt::format("{}: expected an object", where));
  for (const auto& [key, _] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ConfigError(fmt::format("{}: unknown key \"{}\"", where, key));
    }
  }
}

double get_number(const json& j, std::string_view where) {
  if (!j.is_number()) throw ConfigError(fmt::format("{}: expected a number", where));
  return j.get<double>();
}

double number_or(const json& j, const char* key, double fallback, std::string_view where) {
  if (!j.contains(key)) return fallback;
  return get_number(j.at(key), fmt::format("{}.{}", where, key));
}

cplx get_complex(const json& j, std::string_view where) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number()) {
    throw ConfigError(fmt::format("{}: expected [re, im]", where));
  }
  return {j[0].get<double>(), j[1].get<double>()};
}

json complex_json(cplx z) { return json::array({z.real(), z.imag()}); }

std::string num(double x) { return fmt::format("{:.17g}", x); }

// ---------------------------------------------------------------------------
// Scenario parsing

SlitConfig parse_slit(const json& j, std::string_view where) {
  check_keys(j, where, {"base", "ratio", "sigma", "angle", "from_vertex", "base_prevertex"});
  SlitConfig s;
  if (j.contains("base")) s.base = get_complex(j.at("base"), fmt::format("{}.base", where));
  s.ratio = number_or(j, "ratio", 1.0, where);
  if (!(s.ratio > 0.0)) throw ConfigError(fmt::format("{}.ratio must be positive", where));
  if (j.contains("sigma")) {
    const cplx sg = get_complex(j.at("sigma"), fmt::format("{}.sigma", where));
    s.sigma = std::array<double, 2>{sg.real(), sg.imag()};
  }
  if (j.contains("angle")) s.angle = get_number(j.at("angle"), fmt::format("{}.angle", where));
  if (s.sigma && s.angle) throw ConfigError(fmt::format("{}: give sigma or angle, not both", where));
  if (j.contains("from_vertex")) {
    if (!j.at("from_vertex").is_number_unsigned()) {
      throw ConfigError(fmt::format("{}.from_vertex: expected a vertex index", where));
    }
    s.from_vertex = j.at("from_vertex").get<std::size_t>();
  }
  if (j.contains("base_prevertex")) {
    s.base_prevertex = get_number(j.at("base_prevertex"), fmt::format("{}.base_prevertex", where));
  }
  if (!j.contains("base") && !s.from_vertex) {
    throw ConfigError(fmt::format("{}: need base or from_vertex", where));
  }
  return s;
}

StageConfig parse_stage(const json& j, std::string_view where) {
  check_keys(j, where, {"slits", "target_length", "primary", "velocity_relation"});
  if (j.contains("velocity_relation")) {
    const auto& v = j.at("velocity_relation");
    if (!v.is_string() || v.get<std::string>() != "constant_ratio") {
      throw ConfigError(fmt::format(
          "{}.velocity_relation: only \"constant_ratio\" is implemented", where));
    }
  }
  StageConfig st;
  st.target_length = number_or(j, "target_length", 1.0, where);
  if (!(st.target_length > 0.0)) {
    throw ConfigError(fmt::format("{}.target_length must be positive", where));
  }
  if (!j.contains("slits") || !j.at("slits").is_array() || j.at("slits").empty()) {
    throw ConfigError(fmt::format("{}.slits: expected a non-empty array", where));
  }
  for (std::size_t i = 0; i < j.at("slits").size(); ++i) {
    st.slits.push_back(parse_slit(j.at("slits")[i], fmt::format("{}.slits[{}]", where, i)));
  }
  if (j.contains("primary")) {
    if (!j.at("primary").is_number_unsigned()) {
      throw ConfigError(fmt::format("{}.primary: expected a slit index", where));
    }
    st.primary = j.at("primary").get<std::size_t>();
  }
  if (st.primary >= st.slits.size()) throw ConfigError(fmt::format("{}.primary out of range", where));
  return st;
}

AccessoryState parse_initial(const json& j) {
  check_keys(j, "initial", {"type", "width", "height", "polygon", "state"});
  if (!j.contains("type") || !j.at("type").is_string()) {
    throw ConfigError("initial.type: expected \"half_plane\", \"rectangle\" or \"explicit\"");
  }
  const std::string type = j.at("type").get<std::string>();
  if (type == "half_plane") return identity_state();
  if (type == "rectangle") {
    const double w = number_or(j, "width", 2.0, "initial");
    const double h = number_or(j, "height", 1.0, "initial");
    if (!(w > 0.0) || !(h > 0.0)) throw ConfigError("initial: rectangle sides must be positive");
    return rectangle_state(w, h);
  }
  if (type == "explicit") {
    if (!j.contains("polygon") || !j.contains("state")) {
      throw ConfigError("initial: explicit type needs polygon and state");
    }
    AccessoryState s = state_from_json(j.at("state"));
    auto poly = std::make_shared<PolygonSpec>(polygon_from_json(j.at("polygon")));
    if (std::abs(poly->alpha_infinity() - s.alpha_infinity) > 1e-12) {
      throw ConfigError("initial: state alpha_infinity disagrees with the polygon");
    }
    s.polygon = std::move(poly);
    try {
      s.check_ordering();
    } catch (const InvariantError& e) {
      throw ConfigError(fmt::format("initial.state: {}", e.what()));
    }
    if (std::abs(s.exponent_sum_residual()) > 1e-12) {
      throw ConfigError(fmt::format("initial.state: exponent sum off by {:.3e}",
                                    s.exponent_sum_residual()));
    }
    return s;
  }
  throw ConfigError(fmt::format("initial.type: unknown type \"{}\"", type));
}

void apply_common(const json& doc, ScenarioConfig& cfg) {
  if (doc.contains("name")) {
    if (!doc.at("name").is_string()) throw ConfigError("name: expected a string");
    cfg.name = doc.at("name").get<std::string>();
  }
  if (doc.contains("tolerances")) {
    const json& t = doc.at("tolerances");
    check_keys(t, "tolerances", {"ode_tol", "tol_map", "epsilon", "merge_tol", "cluster_tol"});
    Tolerances& tol = cfg.tolerances;
    tol.ode_tol = number_or(t, "ode_tol", tol.ode_tol, "tolerances");
    tol.tol_map = number_or(t, "tol_map", tol.tol_map, "tolerances");
    tol.epsilon = number_or(t, "epsilon", tol.epsilon, "tolerances");
    tol.merge_tol = number_or(t, "merge_tol", tol.merge_tol, "tolerances");
    tol.cluster_tol = number_or(t, "cluster_tol", tol.cluster_tol, "tolerances");
    for (double v : {tol.ode_tol, tol.tol_map, tol.epsilon, tol.merge_tol, tol.cluster_tol}) {
      if (!(v > 0.0)) throw ConfigError("tolerances: all values must be positive");
    }
  }
  if (doc.contains("outputs")) {
    const json& o = doc.at("outputs");
    check_keys(o, "outputs", {"table", "trace", "grid", "verify"});
    auto flag = [&](const char* key, bool& dst) {
      if (!o.contains(key)) return;
      if (!o.at(key).is_boolean()) throw ConfigError(fmt::format("outputs.{}: expected a boolean", key));
      dst = o.at(key).get<bool>();
    };
    flag("table", cfg.outputs.table);
    flag("trace", cfg.outputs.trace);
    flag("grid", cfg.outputs.grid);
    flag("verify", cfg.outputs.verify);
  }
  if (doc.contains("grid")) {
    const json& g = doc.at("grid");
    check_keys(g, "grid", {"x_min", "x_max", "y_min", "y_max", "spacing", "samples_per_line",
                           "exclusion_radius"});
    GridSpec& gs = cfg.grid;
    gs.x_min = number_or(g, "x_min", gs.x_min, "grid");
    gs.x_max = number_or(g, "x_max", gs.x_max, "grid");
    gs.y_min = number_or(g, "y_min", gs.y_min, "grid");
    gs.y_max = number_or(g, "y_max", gs.y_max, "grid");
    gs.spacing = number_or(g, "spacing", gs.spacing, "grid");
    gs.samples_per_line = static_cast<int>(number_or(g, "samples_per_line", gs.samples_per_line, "grid"));
    gs.exclusion_radius = number_or(g, "exclusion_radius", gs.exclusion_radius, "grid");
    if (!(gs.y_min > 0.0) || !(gs.y_max > gs.y_min) || !(gs.x_max > gs.x_min) ||
        !(gs.spacing > 0.0) || gs.samples_per_line < 2) {
      throw ConfigError("grid: need 0 < y_min < y_max, x_min < x_max, spacing > 0, >= 2 samples");
    }
  }
}

// ---------------------------------------------------------------------------
// Base prevertex search

struct LocatedBase {
  double x = 0.0;
  cplx base{0.0, 0.0};
  double alpha = 1.0;  // interior angle multiple at the base (1 on a side)
  std::optional<std::size_t> removed_fixed;  // for slits from a vertex
};

double distance_to_segment(cplx p, cplx a, cplx b) {
  const cplx ab = b - a;
  const double len2 = std::norm(ab);
  if (len2 == 0.0) return std::abs(p - a);
  const double s = std::clamp(std::real((p - a) * std::conj(ab)) / len2, 0.0, 1.0);
  return std::abs(p - (a + s * ab));
}

LocatedBase locate_base(const AccessoryState& state, const SlitConfig& sc, std::size_t idx,
                        const MapOptions& mo) {
  LocatedBase out;
  if (sc.from_vertex) {
    const std::size_t v = *sc.from_vertex;
    const PolygonSpec* poly = state.polygon.get();
    if (poly == nullptr || v >= poly->size()) {
      throw ConfigError(fmt::format("slit {}: from_vertex {} is not a polygon vertex", idx + 1, v));
    }
    for (std::size_t k = 0; k < state.fixed_prevertices.size(); ++k) {
      if (state.fixed_prevertices[k].vertex == v) {
        out.x = state.fixed_prevertices[k].x;
        out.alpha = 1.0 + state.fixed_prevertices[k].sigma;
        out.removed_fixed = k;
        out.base = poly->vertices[v].value_or(sc_map(state, out.x, mo));
        return out;
      }
    }
    throw ConfigError(fmt::format(
        "slit {}: vertex {} is the image of 0, 1 or infinity; slits there are not supported",
        idx + 1, v));
  }

  out.base = sc.base;
  const ScIntegrand integrand(state);
  const auto pts = state.boundary_points();
  const double scale = 1.0 + std::abs(sc.base);
  const double on_tol = std::max(1e-9, 10.0 * mo.tol_map) * scale;

  if (sc.base_prevertex) {
    out.x = *sc.base_prevertex;
    const double miss = std::abs(integrand.map(cplx{out.x, 0.0}, mo) - sc.base);
    if (miss > on_tol) {
      throw ConfigError(fmt::format("slit {}: base_prevertex {} maps {:.3e} away from the base",
                                    idx + 1, out.x, miss));
    }
    return out;
  }

  std::vector<cplx> images;
  for (const auto& p : pts) images.push_back(integrand.map(cplx{p.x, 0.0}, mo));
  for (std::size_t k = 0; k < pts.size(); ++k) {
    if (std::abs(images[k] - sc.base) <= on_tol) {
      throw ConfigError(fmt::format(
          "slit {}: base coincides with the image of prevertex {}; use from_vertex", idx + 1,
          label(pts[k])));
    }
  }

  // Finite sides left of 0.
  for (std::size_t k = 0; k + 1 < pts.size(); ++k) {
    if (distance_to_segment(sc.base, images[k], images[k + 1]) > on_tol) continue;
    if (pts[k].x >= 0.0) {
      throw ConfigError(fmt::format(
          "slit {}: base lies on the side through the images of 0 and 1, which is not supported",
          idx + 1));
    }
    out.x = locate_prevertex(state, sc.base, pts[k].x, pts[k + 1].x, mo);
    return out;
  }

  // Sides through infinity.
  const cplx left_dir = -boundary_tangent(state, pts.front().x - 1.0);
  const cplx right_dir = boundary_tangent(state, pts.back().x + 1.0);
  auto on_ray = [&](cplx origin, cplx dir) {
    const cplx rel = (sc.base - origin) * std::conj(dir);
    return rel.real() > 0.0 && std::abs(rel.imag()) <= on_tol;
  };
  std::optional<cplx> at_inf;
  if (state.polygon && state.alpha_infinity > 0.0) {
    at_inf = state.polygon->vertices[state.polygon->index_of_infinity()];
  }
  const bool right_side = at_inf ? distance_to_segment(sc.base, images.back(), *at_inf) <= on_tol
                                 : on_ray(images.back(), right_dir);
  const bool left_side = at_inf ? distance_to_segment(sc.base, *at_inf, images.front()) <= on_tol
                                : on_ray(images.front(), left_dir);
  if (left_side) {
    // Expand the bracket leftward until its image passes the base.
    const double hi = pts.front().x;
    double width = 1.0;
    double lo = hi - width;
    const cplx dir = boundary_tangent(state, hi - 0.5);
    for (int it = 0;; ++it) {
      const cplx f_lo = integrand.map(cplx{lo, 0.0}, mo);
      if (std::real((f_lo - sc.base) * std::conj(dir)) <= 0.0) break;
      if (it > 80) throw RootNotFoundError(fmt::format("slit {}: no bracket for the base", idx + 1));
      width *= 2.0;
      lo = hi - width;
    }
    out.x = locate_prevertex(state, sc.base, lo, hi, mo);
    return out;
  }
  if (right_side) {
    throw ConfigError(fmt::format(
        "slit {}: base lies on the side through the images of 1 and infinity, which is not "
        "supported",
        idx + 1));
  }
  throw ConfigError(fmt::format("slit {}: base ({}, {}) is not on the boundary", idx + 1,
                                sc.base.real(), sc.base.imag()));
}

std::vector<std::vector<std::string>> trace_columns(const Trace& trace) {
  std::vector<std::vector<std::string>> rows;
  if (trace.steps.empty()) return rows;
  const auto pts0 = trace.steps.front().state.boundary_points();
  const std::size_t m = trace.steps.front().state.slits.size();
  std::vector<std::string> header{"t"};
  for (const auto& p : pts0) {
    if (p.role == PrevertexRole::Zero || p.role == PrevertexRole::One) continue;
    header.push_back(label(p));
  }
  header.push_back("abs_c");
  header.push_back("arg_c");
  for (std::size_t i = 0; i < m; ++i) header.push_back(fmt::format("L{}", i + 1));
  for (std::size_t i = 0; i < m; ++i) header.push_back(fmt::format("C{}", i + 1));
  header.push_back("step");
  header.push_back("error");
  rows.push_back(header);
  for (const TraceStep& st : trace.steps) {
    std::vector<std::string> row{num(st.state.t)};
    for (const auto& p : st.state.boundary_points()) {
      if (p.role == PrevertexRole::Zero || p.role == PrevertexRole::One) continue;
      row.push_back(num(p.x));
    }
    row.push_back(num(std::abs(st.state.c)));
    row.push_back(num(std::arg(st.state.c)));
    for (std::size_t i = 0; i < m; ++i) {
      row.push_back(i < st.slit_lengths.size() ? num(st.slit_lengths[i]) : "");
    }
    for (std::size_t i = 0; i < m; ++i) {
      row.push_back(i < st.control.size() ? num(st.control[i]) : "");
    }
    row.push_back(num(st.step));
    row.push_back(num(st.error));
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_csv(const std::filesystem::path& path, const std::vector<std::vector<std::string>>& rows) {
  std::ofstream os(path);
  if (!os) throw ConfigError(fmt::format("cannot write {}", path.string()));
  for (const auto& row : rows) {
    for (std::size_t k = 0; k < row.size(); ++k) os << (k ? "," : "") << row[k];
    os << '\n';
  }
}

void write_json(const std::filesystem::path& path, const json& j) {
  std::ofstream os(path);
  if (!os) throw ConfigError(fmt::format("cannot write {}", path.string()));
  os << j.dump(2) << '\n';
}

json merged_json(const std::vector<MergedPrevertex>& pts) {
  json arr = json::array();
  for (const auto& p : pts) {
    json e{{"x", p.x}, {"sigma", p.sigma}, {"members", p.members}};
    e["vertex"] = p.vertex ? json(*p.vertex) : json(nullptr);
    arr.push_back(std::move(e));
  }
  return arr;
}

json verify_json(const VerifyReport& r) {
  return json{{"steps", r.steps},
              {"straightness", {{"max", r.straightness}, {"ok", r.straightness_ok}}},
              {"ratio", {{"max", r.ratio}, {"ok", r.ratio_ok}}},
              {"fixed_vertex", {{"max", r.fixed_vertex}, {"ok", r.fixed_vertex_ok}}},
              {"length_param", {{"max", r.length_param}, {"ok", r.length_param_ok}}},
              {"residue_identity", {{"max", r.residue}, {"ok", r.residue_ok}}},
              {"control_sum", {{"max", r.control_sum}, {"ok", r.control_sum_ok}}},
              {"arg_c", {{"max", r.arg_c}, {"ok", r.arg_c_ok}}},
              {"exponent_sum", {{"max", r.exponent_sum}, {"ok", r.exponent_sum_ok}}},
              {"ordering_violations", {{"count", r.ordering_violations}, {"ok", r.ordering_ok}}},
              {"unresolved",
               {{"steps", r.unresolved.steps},
                {"max_deviation", r.unresolved.deviation},
                {"max_floor_ratio", r.unresolved.floor_ratio},
                {"ok", r.unresolved.ok}}},
              {"all_ok", r.all_ok()}};
}

std::string svg_document(const GridImage& grid, const AccessoryState& state, const MapOptions& mo) {
  double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
  auto grow = [&](cplx z) {
    x0 = std::min(x0, z.real());
    x1 = std::max(x1, z.real());
    y0 = std::min(y0, z.imag());
    y1 = std::max(y1, z.imag());
  };
  for (const auto& line : grid.polylines) {
    for (const cplx& z : line.points) grow(z);
  }
  if (x0 > x1) x0 = y0 = 0.0, x1 = y1 = 1.0;
  const double pad = 0.02 * std::max(x1 - x0, y1 - y0);
  x0 -= pad, x1 += pad, y0 -= pad, y1 += pad;
  std::ostringstream os;
  fmt::print(os,
             "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"{:.6f} {:.6f} {:.6f} {:.6f}\" "
             "width=\"800\" height=\"{:.0f}\">\n",
             x0, -y1, x1 - x0, y1 - y0, 800.0 * (y1 - y0) / (x1 - x0));
  const double stroke = 0.0015 * (x1 - x0);
  for (const auto& line : grid.polylines) {
    if (line.points.size() < 2) continue;
    os << "<polyline fill=\"none\" stroke=\""
       << (line.orientation == GridOrientation::Horizontal ? "#1f5fa8" : "#a8321f")
       << "\" stroke-width=\"" << fmt::format("{:.6f}", stroke) << "\" points=\"";
    for (std::size_t k = 0; k < line.points.size(); ++k) {
      fmt::print(os, "{}{:.6f},{:.6f}", k ? " " : "", line.points[k].real(), -line.points[k].imag());
    }
    os << "\"/>\n";
  }
  for (std::size_t i = 0; i < state.slits.size(); ++i) {
    const cplx b = state.slits[i].base_point;
    const cplx tip = slit_endpoint(state, i, mo);
    fmt::print(os,
               "<line x1=\"{:.6f}\" y1=\"{:.6f}\" x2=\"{:.6f}\" y2=\"{:.6f}\" stroke=\"black\" "
               "stroke-width=\"{:.6f}\"/>\n",
               b.real(), -b.imag(), tip.real(), -tip.imag(), 3.0 * stroke);
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace

// ---------------------------------------------------------------------------
// Initial states

double rectangle_modulus(double width, double height) {
  if (!(width > 0.0) || !(height > 0.0)) throw DomainError("rectangle_modulus: sides must be positive");
  // K'/K = 2h/w fixes the nome q = exp(-pi K'/K); then k = (theta2 / theta3)^2.
  const double q = std::exp(-2.0 * kPi * height / width);
  if (!(q > 0.0) || !(q < 1.0)) throw DomainError("rectangle_modulus: aspect ratio out of range");
  double theta2 = 0.0;
  double theta3 = 1.0;
  for (int n = 0; n < 100000; ++n) {
    const double t2 = std::pow(q, static_cast<double>(n) * (n + 1));
    const double t3 = n > 0 ? 2.0 * std::pow(q, static_cast<double>(n) * n) : 0.0;
    theta2 += t2;
    theta3 += t3;
    if (t2 < 1e-18 * theta2 && n > 0) break;
  }
  theta2 *= 2.0 * std::pow(q, 0.25);
  const double r = theta2 / theta3;
  return r * r;
}

AccessoryState rectangle_state(double width, double height) {
  const double k = rectangle_modulus(width, height);
  auto poly = std::make_shared<PolygonSpec>();
  poly->vertices = {cplx{-0.5 * width, height}, cplx{-0.5 * width, 0.0}, cplx{0.5 * width, 0.0},
                    cplx{0.5 * width, height}, cplx{0.0, height}};
  poly->alphas = {0.5, 0.5, 0.5, 0.5, 1.0};
  poly->base_vertex_index = 2;

  AccessoryState s;
  s.c = -(width / (2.0 * elliptic_K(k))) / (1.0 - k);
  s.base_value = 0.5 * width;
  s.sigma_zero = -0.5;
  s.sigma_one = -0.5;
  s.alpha_infinity = 1.0;
  s.fixed_prevertices = {{-(1.0 + k) / (1.0 - k), -0.5, 0}, {-2.0 * k / (1.0 - k), -0.5, 1}};
  s.polygon = std::move(poly);
  return s;
}

AccessoryState identity_state() { return half_plane_state(cplx{1.0, 0.0}); }

// ---------------------------------------------------------------------------
// Scenario documents

ScenarioConfig parse_scenario(const json& doc) {
  check_keys(doc, "scenario",
             {"name", "preset", "initial", "stages", "tolerances", "outputs", "grid"});
  ScenarioConfig cfg;
  if (doc.contains("preset")) {
    if (!doc.at("preset").is_string()) throw ConfigError("preset: expected a string");
    if (doc.contains("initial") || doc.contains("stages")) {
      throw ConfigError("preset: cannot be combined with initial or stages");
    }
    cfg = preset_scenario(doc.at("preset").get<std::string>());
  } else {
    if (!doc.contains("initial")) throw ConfigError("scenario: missing initial");
    cfg.initial = parse_initial(doc.at("initial"));
    if (doc.contains("stages")) {
      const json& st = doc.at("stages");
      if (!st.is_array()) throw ConfigError("stages: expected an array");
      for (std::size_t k = 0; k < st.size(); ++k) {
        cfg.stages.push_back(parse_stage(st[k], fmt::format("stages[{}]", k)));
      }
    }
  }
  apply_common(doc, cfg);
  return cfg;
}

ScenarioConfig load_scenario(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError(fmt::format("cannot open {}", path.string()));
  json doc;
  try {
    doc = json::parse(is);
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
  }
  return parse_scenario(doc);
}

ScenarioConfig preset_scenario(std::string_view name) {
  ScenarioConfig cfg;
  cfg.name = std::string(name);
  if (name == "example1") {
    cfg.initial = identity_state();
    StageConfig st;
    st.target_length = 1.0;
    SlitConfig s1;
    s1.base = {-3.0, 0.0};
    s1.ratio = 0.5;
    SlitConfig s2;
    s2.base = {-1.0, 0.0};
    s2.ratio = 1.0;
    st.slits = {s1, s2};
    cfg.stages = {st};
    cfg.grid = GridSpec{-6.0, 3.0, 0.02, 4.0, 0.25, 240, -1.0};
    return cfg;
  }
  if (name == "example2") {
    cfg.initial = rectangle_state(2.0, 1.0);
    StageConfig st;
    st.target_length = 0.5;
    SlitConfig s1;
    s1.base = {-0.5, 1.0};
    SlitConfig s2;
    s2.base = {-1.0, 0.5};
    st.slits = {s1, s2};
    cfg.stages = {st};
    cfg.tolerances.merge_tol = 1e-13;
    cfg.tolerances.cluster_tol = 1e-2;
    cfg.grid = GridSpec{-12.0, 4.0, 0.02, 6.0, 0.25, 240, -1.0};
    return cfg;
  }
  throw ConfigError(fmt::format("unknown preset \"{}\" (expected example1 or example2)", name));
}

// ---------------------------------------------------------------------------
// Stages

PreparedStage prepare_stage(const AccessoryState& state, const StageConfig& stage,
                            const Tolerances& tol) {
  if (!state.slits.empty()) throw ConfigError("stage: the starting state still carries slits");
  MapOptions mo;
  mo.tol_map = tol.tol_map;

  struct Entry {
    LocatedBase loc;
    SlitPlanEntry plan;
    std::size_t config_index;
  };
  std::vector<Entry> entries;
  std::set<std::size_t> removed;
  for (std::size_t i = 0; i < stage.slits.size(); ++i) {
    const SlitConfig& sc = stage.slits[i];
    Entry e;
    e.config_index = i;
    e.loc = locate_base(state, sc, i, mo);
    if (!(e.loc.x < 0.0)) {
      throw ConfigError(fmt::format("slit {}: base prevertex {} is not negative", i + 1, e.loc.x));
    }
    if (e.loc.removed_fixed) removed.insert(*e.loc.removed_fixed);

    const double alpha = e.loc.alpha;
    double s1 = 0.5 * alpha - 1.0;
    double s2 = 0.5 * alpha - 1.0;
    if (sc.angle) {
      const double th = *sc.angle;
      if (!(th > 0.0) || !(th < alpha)) {
        throw ConfigError(fmt::format("slit {}: angle {} must lie in (0, {})", i + 1, th, alpha));
      }
      s2 = th - 1.0;
      s1 = alpha - 1.0 - th;
    } else if (sc.sigma) {
      s1 = (*sc.sigma)[0];
      s2 = (*sc.sigma)[1];
      if (std::abs(s1 + s2 - (alpha - 2.0)) > 1e-12) {
        throw ConfigError(fmt::format("slit {}: sigma1 + sigma2 must equal {}", i + 1, alpha - 2.0));
      }
    }
    // Tangent of the boundary just right of the base, rotated into the domain.
    const cplx t_out = boundary_tangent(state, e.loc.x);
    e.plan.base_point = e.loc.base;
    e.plan.base_prevertex = e.loc.x;
    e.plan.sigma1 = s1;
    e.plan.sigma2 = s2;
    e.plan.ratio = sc.ratio;
    e.plan.direction = t_out * std::polar(1.0, kPi * (1.0 + s2));
    entries.push_back(e);
  }
  std::sort(entries.begin(), entries.end(),
            [](const Entry& a, const Entry& b) { return a.loc.x < b.loc.x; });

  PreparedStage out;
  out.state = state;
  out.state.fixed_prevertices.clear();
  for (std::size_t k = 0; k < state.fixed_prevertices.size(); ++k) {
    if (!removed.contains(k)) out.state.fixed_prevertices.push_back(state.fixed_prevertices[k]);
  }
  for (const Entry& e : entries) {
    for (const auto& p : out.state.fixed_prevertices) {
      if (p.x == e.loc.x) {
        throw ConfigError(fmt::format("slit {}: base coincides with prevertex {}", e.config_index + 1, p.x));
      }
    }
    SlitGroup g;
    g.a1 = g.lambda = g.a2 = e.loc.x;
    g.sigma1 = e.plan.sigma1;
    g.sigma2 = e.plan.sigma2;
    g.base_point = e.plan.base_point;
    g.direction = e.plan.direction;
    out.state.slits.push_back(g);
    out.plan.slits.push_back(e.plan);
    out.config_index.push_back(e.config_index);
    if (e.config_index == stage.primary) out.plan.primary = out.plan.slits.size() - 1;
  }
  out.plan.target_length = stage.target_length;
  out.plan.epsilon = tol.epsilon;
  out.plan.merge_tol = tol.merge_tol;
  out.plan.cluster_tol = tol.cluster_tol;
  out.plan.ode_tol = tol.ode_tol;
  out.plan.validate();
  return out;
}

const AccessoryState& RunResult::final_state() const {
  if (stages.empty()) return initial;
  const StageResult& last = stages.back();
  if (last.trace.termination == Termination::Degenerate) return last.limit;
  return last.trace.steps.back().state;
}

RunResult run_scenario(const ScenarioConfig& config, AccessoryState* last_good) {
  MapOptions mo;
  mo.tol_map = config.tolerances.tol_map;
  RunResult result;
  result.initial = config.initial;
  AccessoryState state = config.initial;
  if (last_good) *last_good = state;

  for (const StageConfig& stage : config.stages) {
    StageResult sr;
    sr.prepared = prepare_stage(state, stage, config.tolerances);
    const AccessoryState start = regularize_initial(sr.prepared.state, sr.prepared.plan);
    EvolveOptions eo;
    eo.map = mo;
    try {
      sr.trace = evolve(start, sr.prepared.plan, eo);
    } catch (const EvolveError& e) {
      if (last_good && !e.partial().steps.empty()) *last_good = e.partial().steps.back().state;
      throw;
    }
    const AccessoryState& final = sr.trace.steps.back().state;
    if (last_good) *last_good = final;
    sr.merged = merge_degenerate(final, config.tolerances.cluster_tol);
    sr.limit = merged_state(sr.merged, final, mo);
    if (config.outputs.verify) sr.verify = verify_trace(sr.trace, sr.prepared.plan, {}, mo);
    state = sr.limit;
    result.stages.push_back(std::move(sr));
  }

  if (config.outputs.grid) {
    const AccessoryState& g = result.final_state();
    result.grid = grid_image(g, config.grid, mo);
    std::vector<cplx> region;
    bool known_region = false;
    if (g.polygon) {
      const auto& verts = g.polygon->vertices;
      if (std::all_of(verts.begin(), verts.end(), [](const auto& v) { return v.has_value(); })) {
        for (const auto& v : verts) region.push_back(*v);
        known_region = true;
      } else if (g.fixed_prevertices.empty() && g.alpha_infinity == -1.0 &&
                 g.sigma_zero == 0.0 && g.sigma_one == 0.0) {
        known_region = true;  // upper half-plane, cut by the slits
      }
    }
    if (known_region) {
      std::vector<Segment> cuts;
      for (std::size_t i = 0; i < g.slits.size(); ++i) {
        cuts.push_back({g.slits[i].base_point, slit_endpoint(g, i, mo)});
      }
      result.containment = check_grid_containment(*result.grid, region, cuts);
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Serialization

json state_to_json(const AccessoryState& s) {
  json fixed = json::array();
  for (const auto& p : s.fixed_prevertices) {
    json e{{"x", p.x}, {"sigma", p.sigma}};
    e["vertex"] = p.vertex ? json(*p.vertex) : json(nullptr);
    fixed.push_back(std::move(e));
  }
  json slits = json::array();
  for (const auto& g : s.slits) {
    slits.push_back(json{{"a1", g.a1},
                         {"lambda", g.lambda},
                         {"a2", g.a2},
                         {"sigma1", g.sigma1},
                         {"sigma2", g.sigma2},
                         {"base_point", complex_json(g.base_point)},
                         {"direction", complex_json(g.direction)}});
  }
  json j{{"t", s.t},
         {"c", complex_json(s.c)},
         {"base_value", complex_json(s.base_value)},
         {"sigma_zero", s.sigma_zero},
         {"sigma_one", s.sigma_one},
         {"alpha_infinity", s.alpha_infinity},
         {"fixed", fixed},
         {"slits", slits}};
  if (s.polygon) j["polygon"] = polygon_to_json(*s.polygon);
  return j;
}

AccessoryState state_from_json(const json& j) {
  check_keys(j, "state", {"t", "c", "base_value", "sigma_zero", "sigma_one", "alpha_infinity",
                          "fixed", "slits", "polygon"});
  AccessoryState s;
  s.t = number_or(j, "t", 0.0, "state");
  if (j.contains("c")) s.c = get_complex(j.at("c"), "state.c");
  if (j.contains("base_value")) s.base_value = get_complex(j.at("base_value"), "state.base_value");
  s.sigma_zero = number_or(j, "sigma_zero", 0.0, "state");
  s.sigma_one = number_or(j, "sigma_one", 0.0, "state");
  s.alpha_infinity = number_or(j, "alpha_infinity", -1.0, "state");
  if (j.contains("fixed")) {
    for (const auto& e : j.at("fixed")) {
      check_keys(e, "state.fixed[]", {"x", "sigma", "vertex"});
      Prevertex p;
      p.x = get_number(e.at("x"), "state.fixed[].x");
      p.sigma = number_or(e, "sigma", 0.0, "state.fixed[]");
      if (e.contains("vertex") && !e.at("vertex").is_null()) p.vertex = e.at("vertex").get<std::size_t>();
      s.fixed_prevertices.push_back(p);
    }
  }
  if (j.contains("slits")) {
    for (const auto& e : j.at("slits")) {
      check_keys(e, "state.slits[]", {"a1", "lambda", "a2", "sigma1", "sigma2", "base_point", "direction"});
      SlitGroup g;
      g.a1 = get_number(e.at("a1"), "state.slits[].a1");
      g.lambda = get_number(e.at("lambda"), "state.slits[].lambda");
      g.a2 = get_number(e.at("a2"), "state.slits[].a2");
      g.sigma1 = number_or(e, "sigma1", -0.5, "state.slits[]");
      g.sigma2 = number_or(e, "sigma2", -0.5, "state.slits[]");
      if (e.contains("base_point")) g.base_point = get_complex(e.at("base_point"), "state.slits[].base_point");
      if (e.contains("direction")) g.direction = get_complex(e.at("direction"), "state.slits[].direction");
      s.slits.push_back(g);
    }
  }
  if (j.contains("polygon")) s.polygon = std::make_shared<PolygonSpec>(polygon_from_json(j.at("polygon")));
  return s;
}

json polygon_to_json(const PolygonSpec& poly) {
  json verts = json::array();
  for (const auto& v : poly.vertices) verts.push_back(v ? complex_json(*v) : json(nullptr));
  return json{{"vertices", verts}, {"alphas", poly.alphas}, {"base_vertex_index", poly.base_vertex_index}};
}

PolygonSpec polygon_from_json(const json& j) {
  check_keys(j, "polygon", {"vertices", "alphas", "base_vertex_index"});
  PolygonSpec poly;
  if (!j.contains("vertices") || !j.contains("alphas")) {
    throw ConfigError("polygon: needs vertices and alphas");
  }
  for (const auto& v : j.at("vertices")) {
    if (v.is_null()) {
      poly.vertices.emplace_back(std::nullopt);
    } else {
      poly.vertices.emplace_back(get_complex(v, "polygon.vertices[]"));
    }
  }
  for (const auto& a : j.at("alphas")) poly.alphas.push_back(get_number(a, "polygon.alphas[]"));
  if (j.contains("base_vertex_index")) {
    if (!j.at("base_vertex_index").is_number_unsigned()) {
      throw ConfigError("polygon.base_vertex_index: expected an index");
    }
    poly.base_vertex_index = j.at("base_vertex_index").get<std::size_t>();
  }
  poly.validate();
  return poly;
}

// ---------------------------------------------------------------------------
// Output

void write_outputs(const ScenarioConfig& config, const RunResult& result,
                   const std::filesystem::path& out) {
  std::filesystem::create_directories(out);
  MapOptions mo;
  mo.tol_map = config.tolerances.tol_map;

  json stages = json::array();
  for (std::size_t k = 0; k < result.stages.size(); ++k) {
    const StageResult& sr = result.stages[k];
    json st{{"termination", sr.trace.termination == Termination::Degenerate ? "degenerate"
                                                                            : "reached_target"},
            {"degeneracy_report", sr.trace.degeneracy_report},
            {"steps", sr.trace.steps.size()},
            {"final_state", state_to_json(sr.trace.steps.back().state)},
            {"merged",
             {{"c", complex_json(sr.merged.c)},
              {"abs_c", std::abs(sr.merged.c)},
              {"prevertices", merged_json(sr.merged.prevertices)},
              {"warnings", sr.merged.warnings}}}};
    if (sr.merged.alternative) st["merged"]["alternative"] = merged_json(*sr.merged.alternative);
    stages.push_back(std::move(st));
  }
  write_json(out / "params.json", json{{"name", config.name},
                                       {"initial", state_to_json(result.initial)},
                                       {"stages", stages},
                                       {"final", state_to_json(result.final_state())}});

  if (config.outputs.trace) {
    for (std::size_t k = 0; k < result.stages.size(); ++k) {
      const auto name = k == 0 ? std::string("trace.csv") : fmt::format("trace_stage{}.csv", k + 1);
      write_csv(out / name, trace_columns(result.stages[k].trace));
    }
  }
  if (config.outputs.grid && result.grid) {
    std::vector<std::vector<std::string>> rows{{"line", "orientation", "coordinate", "re", "im"}};
    for (std::size_t l = 0; l < result.grid->polylines.size(); ++l) {
      const GridLine& line = result.grid->polylines[l];
      const char* o = line.orientation == GridOrientation::Horizontal ? "horizontal" : "vertical";
      for (const cplx& z : line.points) {
        rows.push_back({std::to_string(l), o, num(line.coordinate), num(z.real()), num(z.imag())});
      }
    }
    write_csv(out / "grid.csv", rows);
    std::ofstream svg(out / "grid.svg");
    svg << svg_document(*result.grid, result.final_state(), mo);
  }
  if (config.outputs.verify) {
    json v{{"stages", json::array()}};
    for (const StageResult& sr : result.stages) {
      v["stages"].push_back(sr.verify ? verify_json(*sr.verify) : json(nullptr));
    }
    if (result.containment) {
      v["grid"] = json{{"points", result.containment->points},
                       {"outside", result.containment->outside},
                       {"crossings", result.containment->crossings},
                       {"ok", result.containment->outside == 0 && result.containment->crossings == 0}};
    }
    write_json(out / "verify.json", v);
  }
}

std::string format_table(const RunResult& result) {
  std::ostringstream os;
  auto state_rows = [&](const AccessoryState& s) {
    for (const auto& p : s.boundary_points()) {
      if (p.role == PrevertexRole::Zero || p.role == PrevertexRole::One) continue;
      fmt::print(os, "  {:<10} {:>14.7f}\n", label(p), p.x);
    }
    fmt::print(os, "  {:<10} {:>14.7f}\n", "|c|", std::abs(s.c));
    fmt::print(os, "  {:<10} {:>14.7f}\n", "arg c", std::arg(s.c));
  };
  if (result.stages.empty()) {
    fmt::print(os, "initial state\n");
    state_rows(result.initial);
    return os.str();
  }
  for (std::size_t k = 0; k < result.stages.size(); ++k) {
    const StageResult& sr = result.stages[k];
    const AccessoryState& fin = sr.trace.steps.back().state;
    fmt::print(os, "stage {}: t = {:.10f}, {} steps, {}\n", k + 1, fin.t, sr.trace.steps.size(),
               sr.trace.termination == Termination::Degenerate ? "degenerate" : "reached target");
    if (!sr.trace.degeneracy_report.empty()) fmt::print(os, "  {}\n", sr.trace.degeneracy_report);
    state_rows(fin);
    bool merged_any = false;
    for (const auto& p : sr.merged.prevertices) merged_any = merged_any || p.members.size() > 1;
    if (merged_any) {
      fmt::print(os, "merged prevertices\n");
      for (const auto& p : sr.merged.prevertices) {
        std::string members;
        for (const auto& m : p.members) members += (members.empty() ? "" : " ") + m;
        fmt::print(os, "  {:>14.7f}  sigma {:>5.2f}  {{{}}}\n", p.x, p.sigma, members);
      }
      fmt::print(os, "  |c| {:.7f}\n", std::abs(sr.merged.c));
      for (const auto& w : sr.merged.warnings) fmt::print(os, "  warning: {}\n", w);
    }
  }
  return os.str();
}

json error_report(const std::string& kind, const std::string& message,
                  const std::optional<AccessoryState>& last_good) {
  return json{{"error", kind},
              {"message", message},
              {"last_good_state", last_good ? state_to_json(*last_good) : json(nullptr)}};
}

}  // namespace scslit
