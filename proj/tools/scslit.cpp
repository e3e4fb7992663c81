// Command-line front end: runs a scenario file or a built-in preset.
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "scslit/errors.hpp"
#include "scslit/scenario.hpp"

namespace {

constexpr int kConfigError = 2;
constexpr int kNumericalError = 3;

void dump_error(const std::filesystem::path& out, const nlohmann::json& report) {
  std::error_code ec;
  std::filesystem::create_directories(out, ec);
  std::ofstream os(out / "error.json");
  if (os) os << report.dump(2) << '\n';
  std::cerr << "error: " << report.at("message").get<std::string>() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Schwarz-Christoffel accessory parameters for polygons with growing slits"};
  app.require_subcommand(1);

  auto* solve = app.add_subcommand("solve", "run a scenario and write its results");
  std::string config_path;
  std::string preset;
  std::string out_dir = ".";
  bool table = false, trace = false, grid = false, verify = false;
  solve->add_option("config", config_path, "scenario JSON file");
  solve->add_option("--preset", preset, "built-in scenario")
      ->check(CLI::IsMember({"example1", "example2"}));
  solve->add_option("--out", out_dir, "output directory");
  solve->add_flag("--table", table, "print the parameter table");
  solve->add_flag("--trace", trace, "write trace.csv");
  solve->add_flag("--grid", grid, "write grid.svg and grid.csv");
  solve->add_flag("--verify", verify, "write verify.json");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kConfigError;
  }

  const std::filesystem::path out(out_dir);
  std::optional<scslit::AccessoryState> last_good;
  scslit::ScenarioConfig cfg;
  try {
    if (config_path.empty() == preset.empty()) {
      throw scslit::ConfigError("give exactly one of a config file or --preset");
    }
    cfg = preset.empty() ? scslit::load_scenario(config_path) : scslit::preset_scenario(preset);
    cfg.outputs.table = cfg.outputs.table || table;
    cfg.outputs.trace = cfg.outputs.trace || trace;
    cfg.outputs.grid = cfg.outputs.grid || grid;
    cfg.outputs.verify = cfg.outputs.verify || verify;
  } catch (const scslit::Error& e) {
    dump_error(out, scslit::error_report("config", e.what(), std::nullopt));
    return kConfigError;
  }

  try {
    scslit::AccessoryState good;
    scslit::RunResult result;
    try {
      result = scslit::run_scenario(cfg, &good);
    } catch (...) {
      last_good = good;
      throw;
    }
    scslit::write_outputs(cfg, result, out);
    if (cfg.outputs.table) std::cout << scslit::format_table(result);
  } catch (const scslit::ConfigError& e) {
    dump_error(out, scslit::error_report("config", e.what(), last_good));
    return kConfigError;
  } catch (const scslit::Error& e) {
    dump_error(out, scslit::error_report("numerical", e.what(), last_good));
    return kNumericalError;
  }
  return 0;
}
