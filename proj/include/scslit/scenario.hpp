#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "scslit/loewner.hpp"
#include "scslit/oracle.hpp"
#include "scslit/sc_core.hpp"

namespace scslit {

/// One slit as written in a scenario file.
struct SlitConfig {
  cplx base{0.0, 0.0};
  double ratio = 1.0;
  /// Explicit base exponents (sigma1, sigma2).
  std::optional<std::array<double, 2>> sigma;
  /// Angle between the boundary tangent and the slit, as a fraction of pi.
  std::optional<double> angle;
  /// Grow from this polygon vertex instead of a side interior.
  std::optional<std::size_t> from_vertex;
  /// Skip the prevertex search and use this value.
  std::optional<double> base_prevertex;
};

struct StageConfig {
  std::vector<SlitConfig> slits;
  double target_length = 1.0;
  std::size_t primary = 0;  // index into `slits`
};

struct Tolerances {
  double ode_tol = 1e-10;
  double tol_map = 1e-9;
  double epsilon = 1e-12;
  double merge_tol = 1e-9;
  double cluster_tol = 1e-4;
};

struct OutputFlags {
  bool table = false;
  bool trace = false;
  bool grid = false;
  bool verify = false;
};

struct ScenarioConfig {
  std::string name = "scenario";
  AccessoryState initial;
  std::vector<StageConfig> stages;
  Tolerances tolerances;
  OutputFlags outputs;
  GridSpec grid;
};

/// Parses and validates a scenario document. Throws ConfigError.
ScenarioConfig parse_scenario(const nlohmann::json& doc);
ScenarioConfig load_scenario(const std::filesystem::path& path);

/// Built-in scenarios "example1" and "example2".
ScenarioConfig preset_scenario(std::string_view name);

/// Modulus k with K(sqrt(1 - k^2)) / K(k) = 2 height / width.
double rectangle_modulus(double width, double height);

/// Rectangle of the given size with corners a1 -> -w/2 + ih, a2 -> -w/2,
/// 0 -> w/2, 1 -> w/2 + ih and infinity -> ih (not a corner).
AccessoryState rectangle_state(double width, double height);

/// Slit-free state for the upper half-plane with f(z) = z.
AccessoryState identity_state();

/// Locates the base prevertices of a stage, inserts coincident slit triples
/// into `state` and returns the matching plan (slits sorted along the axis).
struct PreparedStage {
  AccessoryState state;  // slits at their birth configuration
  SlitPlan plan;
  std::vector<std::size_t> config_index;  // plan slit -> config slit
};
PreparedStage prepare_stage(const AccessoryState& state, const StageConfig& stage,
                            const Tolerances& tol);

struct StageResult {
  PreparedStage prepared;
  Trace trace;
  MergedParameters merged;
  AccessoryState limit;  // slit-free state of the merged map
  std::optional<VerifyReport> verify;
};

struct RunResult {
  AccessoryState initial;
  std::vector<StageResult> stages;
  std::optional<GridImage> grid;
  std::optional<ContainmentReport> containment;

  /// State the grid is drawn from: the last stage's final state, or the merged
  /// limit when the stage ended in a collapse.
  const AccessoryState& final_state() const;
};

/// Runs all stages; `verify` also checks every trace. Numerical failures
/// propagate as scslit::Error subclasses, with `last_good` (when given) set
/// to the latest state that was reached.
RunResult run_scenario(const ScenarioConfig& config, AccessoryState* last_good = nullptr);

nlohmann::json state_to_json(const AccessoryState& state);
AccessoryState state_from_json(const nlohmann::json& j);
nlohmann::json polygon_to_json(const PolygonSpec& poly);
PolygonSpec polygon_from_json(const nlohmann::json& j);

/// Writes params.json and the requested trace/grid/verify files into `out`.
void write_outputs(const ScenarioConfig& config, const RunResult& result,
                   const std::filesystem::path& out);

/// Plain-text parameter table of the final stage.
std::string format_table(const RunResult& result);

/// Machine-readable failure report with the last good state.
nlohmann::json error_report(const std::string& kind, const std::string& message,
                            const std::optional<AccessoryState>& last_good);

}  // namespace scslit
