#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "retsim/sim.hpp"

namespace retsim {

// One JSON object per tick, preceded by a header line that echoes the config.
void write_run_log(std::ostream& out, const RunResult& result, const nlohmann::json& resolved);
nlohmann::json tick_to_json(const TickRecord& t);

nlohmann::json metrics_to_json(const RunMetrics& m);
// Single-run report: status, metrics and the config echo.
nlohmann::json run_report(const RunResult& result, const nlohmann::json& resolved);

// Serialized form used for report files. Keys are sorted, no wall-clock data.
std::string dump_report(const nlohmann::json& report);

const std::vector<std::string>& experiment_names();

// Scenario settings layered on the defaults before user overrides.
nlohmann::json experiment_preset(const std::string& name);

struct ExperimentOptions {
  nlohmann::json overrides = nlohmann::json::object();  // partial config document
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  // Called after each run, e.g. to write its log. Arguments: arm, seed, result, config.
  std::function<void(const std::string&, std::uint64_t, const RunResult&, const nlohmann::json&)>
      on_run;
};

// Runs a named suite (exp1, exp2, exp3, user_task). Throws Error for an
// unknown name and ConfigError for bad overrides.
nlohmann::json run_experiment(const std::string& name, const ExperimentOptions& opts = {});

}  // namespace retsim
