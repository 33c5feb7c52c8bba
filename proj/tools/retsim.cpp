#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "retsim/config.hpp"
#include "retsim/experiment.hpp"
#include "retsim/gateway.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace retsim;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("retsim");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%l] %v");
  spdlog::set_level(spdlog::level::info);
  if (const char* env = std::getenv("RETSIM_LOG_LEVEL")) {
    const std::string v = env;
    if (v == "error" || v == "warn" || v == "info" || v == "debug") {
      spdlog::set_level(spdlog::level::from_str(v));
    } else {
      spdlog::warn("ignoring RETSIM_LOG_LEVEL='{}' (expected error, warn, info or debug)", v);
    }
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

void write_log_file(const fs::path& path, const RunResult& r, const json& cfg) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  write_run_log(out, r, cfg);
}

bool failed(RunStatus s) {
  return s == RunStatus::contact || s == RunStatus::limit || s == RunStatus::registration_failed;
}

int cmd_run(const std::string& config_path, std::optional<std::uint64_t> seed,
            std::optional<std::string> mode, const fs::path& out) {
  json doc = load_config_file(config_path);
  if (seed) doc["sim"]["seed"] = *seed;
  if (mode) doc["sim"]["mode"] = *mode;
  doc = resolve_config(doc);
  const SimConfig cfg = to_sim_config(doc);
  spdlog::info("run: mode {} seed {}", to_string(cfg.mode), cfg.seed);
  const RunResult r = Simulation::run(cfg);
  write_log_file(out / "run.jsonl", r, doc);
  write_text(out / "report.json", dump_report(run_report(r, doc)));
  spdlog::info("run finished: {} ({}), mean CR {:.3f}, in focus {:.1f}%", to_string(r.status),
               r.message, r.metrics.mean_cr, 100.0 * r.metrics.in_focus_fraction);
  return failed(r.status) ? kExitFailure : kExitOk;
}

int cmd_experiment(const std::string& name, const fs::path& out,
                   const std::optional<std::string>& config_path,
                   const std::vector<std::uint64_t>& seeds, bool logs) {
  ExperimentOptions opts;
  if (config_path) {
    // Only the keys the user wrote override the preset.
    std::ifstream in(*config_path);
    if (!in) throw ConfigError("<file>", "cannot read " + *config_path);
    opts.overrides = json::parse(in, nullptr, false);
    if (opts.overrides.is_discarded()) throw ConfigError("<file>", "malformed JSON");
    resolve_config(opts.overrides);
  }
  if (!seeds.empty()) opts.seeds = seeds;
  bool any_failed = false;
  opts.on_run = [&](const std::string& arm, std::uint64_t seed, const RunResult& r, const json& cfg) {
    spdlog::info("{} {} seed {}: {}", name, arm, seed, to_string(r.status));
    any_failed = any_failed || failed(r.status);
    if (logs) {
      write_log_file(out / "logs" / (arm + "_seed" + std::to_string(seed) + ".jsonl"), r, cfg);
    }
  };
  const json report = run_experiment(name, opts);
  write_text(out / "report.json", dump_report(report));
  spdlog::info("report written to {}", (out / "report.json").string());
  return any_failed ? kExitFailure : kExitOk;
}

int cmd_focus_sweep(double min_um, double max_um, double step_um, const fs::path& out,
                    const std::optional<std::string>& config_path, double x_mm, double y_mm) {
  if (!(min_um < max_um) || !(step_um > 0.0) || !(min_um >= 0.0)) {
    throw ConfigError("focus-sweep", "need 0 <= min_um < max_um and step_um > 0");
  }
  const json doc = config_path ? load_config_file(*config_path) : default_config_json();
  const SimConfig cfg = to_sim_config(doc);
  const auto renderer = std::make_shared<FrameRenderer>(Texture::shared(cfg.texture), cfg.focus,
                                                        cfg.renderer);
  std::vector<double> distances;
  const long n = std::lround(std::floor((max_um - min_um) / step_um + 1e-9));
  for (long i = 0; i <= n; ++i) distances.push_back((min_um + i * step_um) * 1e-6);
  const auto samples = focus_sweep(*renderer, Vec2(x_mm, y_mm) * 1e-3, distances);
  std::ostringstream csv;
  csv.precision(17);
  csv << "distance_um,cr,intensity\n";
  for (const auto& s : samples) {
    csv << min_um + (&s - samples.data()) * step_um << ',' << s.cr << ',' << s.intensity << '\n';
  }
  write_text(out, csv.str());
  spdlog::info("focus sweep: {} rows written to {}", samples.size(), out.string());
  return kExitOk;
}

int cmd_serve(unsigned short port, const std::string& config_path) {
  const json doc = load_config_file(config_path);
  InteractiveEngine engine(doc);
  EngineLoop loop(engine);
  GatewayServer server(loop, doc, port);
  spdlog::info("serving on http://127.0.0.1:{} (WebSocket /session)", server.port());
  loop.start();
  server.run(/*handle_signals=*/true);
  loop.stop();
  spdlog::info("gateway stopped");
  spdlog::default_logger()->flush();
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"retsim: robot-assisted pCLE retinal scanning simulator"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "Run one simulation from a config file");
  std::string run_config;
  std::optional<std::uint64_t> run_seed;
  std::optional<std::string> run_mode;
  std::string run_out = "out";
  run->add_option("CONFIG", run_config, "Run-config JSON file")->required();
  run->add_option("--seed", run_seed, "Override sim.seed");
  run->add_option("--mode", run_mode, "Override sim.mode");
  run->add_option("--out", run_out, "Output directory (run.jsonl, report.json)");

  auto* exp = app.add_subcommand("experiment", "Run an experiment suite");
  std::string exp_name;
  std::string exp_out = "out";
  std::optional<std::string> exp_config;
  std::vector<std::uint64_t> exp_seeds;
  bool exp_no_logs = false;
  exp->add_option("NAME", exp_name, "exp1, exp2, exp3 or user_task")->required();
  exp->add_option("--out", exp_out, "Output directory (report.json, logs/)");
  exp->add_option("--config", exp_config, "Config overrides applied on top of the preset");
  exp->add_option("--seed", exp_seeds, "Seeds to run (repeatable; default 1..5)");
  exp->add_flag("--no-logs", exp_no_logs, "Skip the per-run tick logs");

  auto* sweep = app.add_subcommand("focus-sweep", "Tabulate CR and intensity against distance");
  double min_um = 200, max_um = 2400, step_um = 10, x_mm = 1.0, y_mm = 0.0;
  std::string sweep_out = "focus_sweep.csv";
  std::optional<std::string> sweep_config;
  sweep->add_option("--min_um", min_um, "Nearest distance");
  sweep->add_option("--max_um", max_um, "Farthest distance");
  sweep->add_option("--step_um", step_um, "Distance step");
  sweep->add_option("--out", sweep_out, "CSV output path");
  sweep->add_option("--config", sweep_config, "Config file for the imaging settings");
  sweep->add_option("--x_mm", x_mm, "Lateral x of the imaged spot");
  sweep->add_option("--y_mm", y_mm, "Lateral y of the imaged spot");

  auto* serve = app.add_subcommand("serve", "Run the interactive gateway");
  unsigned int port = 8080;
  std::string serve_config;
  serve->add_option("--port", port, "TCP port")->check(CLI::Range(0, 65535));
  serve->add_option("CONFIG", serve_config, "Run-config JSON file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*run) return cmd_run(run_config, run_seed, run_mode, run_out);
    if (*exp) return cmd_experiment(exp_name, exp_out, exp_config, exp_seeds, !exp_no_logs);
    if (*sweep) return cmd_focus_sweep(min_um, max_um, step_um, sweep_out, sweep_config, x_mm, y_mm);
    if (*serve) return cmd_serve(static_cast<unsigned short>(port), serve_config);
  } catch (const ConfigError& e) {
    spdlog::error("config error at {}", e.what());
    return kExitUsage;
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kExitFailure;
  }
  return kExitUsage;
}
