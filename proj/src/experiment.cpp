#include "retsim/experiment.hpp"

#include <cmath>

#include "retsim/config.hpp"

namespace retsim {

using nlohmann::json;

namespace {

json vec_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

// Defaults, then the preset, then the user's partial document.
json layered_config(const json& preset, const json& overrides) {
  json merged = preset;
  merged.merge_patch(overrides);
  if (!merged.contains("schema_version")) merged["schema_version"] = kConfigSchemaVersion;
  return resolve_config(merged);
}

json arm_config(json doc, const std::string& mode, std::uint64_t seed,
                const std::string& axial = "") {
  doc["sim"]["mode"] = mode;
  doc["sim"]["seed"] = seed;
  if (!axial.empty()) doc["control"]["axial_controller"] = axial;
  return resolve_config(doc);
}

json run_entry(std::uint64_t seed, const RunResult& r) {
  json e = metrics_to_json(r.metrics);
  e["seed"] = seed;
  e["status"] = to_string(r.status);
  return e;
}

// Task-phase probe path at about 10 Hz, in millimeters.
json subsampled_path(const RunLog& log, double control_rate) {
  const long stride = std::max(1L, std::lround(control_rate / 10.0));
  json path = json::array();
  long k = 0;
  for (const auto& t : log.ticks) {
    if (t.phase != Phase::task) continue;
    if (k++ % stride == 0) path.push_back(json::array({t.tip.x() * 1e3, t.tip.y() * 1e3, t.tip.z() * 1e3}));
  }
  return path;
}

json frame_trace(const RunLog& log) {
  json trace = json::array();
  for (const auto& f : log.frames) {
    if (f.phase == Phase::task) trace.push_back(json::array({f.t, f.cr}));
  }
  return trace;
}

double mean_of(const json& runs, const char* key) {
  double s = 0.0;
  int n = 0;
  for (const auto& r : runs) {
    if (r.at(key).is_number()) {
      s += r.at(key).get<double>();
      ++n;
    }
  }
  return n ? s / n : std::nan("");
}

json summarize(const json& runs) {
  json s;
  for (const char* key : {"mean_cr", "in_focus_fraction", "motion_smoothness", "completion_time_s",
                          "total_time_s", "min_distance_um"}) {
    const double v = mean_of(runs, key);
    s[key] = std::isnan(v) ? json(nullptr) : json(v);
  }
  int completed = 0;
  for (const auto& r : runs) completed += r.at("status") == "completed";
  s["completed_runs"] = completed;
  return s;
}

struct Harness {
  std::string name;
  const ExperimentOptions& opts;
  json base;
  json report;

  RunResult run(const std::string& arm, const json& doc, std::optional<PriorModel> prior = {}) {
    const std::uint64_t seed = doc.at("sim").at("seed").get<std::uint64_t>();
    RunResult r = Simulation::run(to_sim_config(doc), std::move(prior));
    if (opts.on_run) opts.on_run(arm, seed, r, doc);
    return r;
  }
};

json exp1(Harness& h) {
  json arms;
  for (const std::string mode : {"manual", "hybrid_teleoperated"}) {
    json runs = json::array();
    for (auto seed : h.opts.seeds) {
      const RunResult r = h.run(mode, arm_config(h.base, mode, seed));
      json e = run_entry(seed, r);
      e["cr_trace"] = frame_trace(r.log);
      runs.push_back(std::move(e));
    }
    arms[mode] = {{"runs", runs}, {"summary", summarize(runs)}};
  }
  return arms;
}

json exp2(Harness& h) {
  const std::string mode = h.base.at("sim").at("mode").get<std::string>();
  json arms = {{"optimizer", {{"runs", json::array()}}},
               {"model", {{"runs", json::array()}}},
               {"combined", {{"runs", json::array()}}}};
  for (auto seed : h.opts.seeds) {
    // One perimeter registration per seed, shared by the two arms that use it.
    const RunResult combined = h.run("combined", arm_config(h.base, mode, seed, "combined"));
    arms["combined"]["runs"].push_back(run_entry(seed, combined));
    if (!combined.prior) throw Error("exp2: registration failed for seed " + std::to_string(seed));
    json model = run_entry(seed, h.run("model", arm_config(h.base, mode, seed, "model"), combined.prior));
    model["registration_time_s"] = combined.metrics.registration_time.value_or(0.0);
    arms["model"]["runs"].push_back(std::move(model));
    arms["optimizer"]["runs"].push_back(
        run_entry(seed, h.run("optimizer", arm_config(h.base, mode, seed, "optimizer"))));
  }
  for (auto& [name, arm] : arms.items()) arm["summary"] = summarize(arm["runs"]);
  const auto& c = arms["combined"]["summary"];
  json cmp;
  for (const char* other : {"model", "optimizer"}) {
    const auto& o = arms[other]["summary"];
    cmp[std::string("combined_beats_") + other] =
        c["mean_cr"].get<double>() > o["mean_cr"].get<double>() &&
        c["in_focus_fraction"].get<double>() > o["in_focus_fraction"].get<double>();
  }
  h.report["comparison"] = cmp;
  return arms;
}

json exp3(Harness& h) {
  json arms;
  const double rate = h.base.at("sim").at("control_rate_hz").get<double>();
  for (const std::string mode :
       {"cooperative", "hybrid_cooperative", "teleoperated", "hybrid_teleoperated"}) {
    json runs = json::array();
    for (auto seed : h.opts.seeds) {
      const RunResult r = h.run(mode, arm_config(h.base, mode, seed));
      json e = run_entry(seed, r);
      e["path_mm"] = subsampled_path(r.log, rate);
      runs.push_back(std::move(e));
    }
    arms[mode] = {{"runs", runs}, {"summary", summarize(runs)}};
  }
  const double coop = arms["cooperative"]["summary"]["motion_smoothness"].get<double>();
  const double hcoop = arms["hybrid_cooperative"]["summary"]["motion_smoothness"].get<double>();
  const double tele = arms["teleoperated"]["summary"]["motion_smoothness"].get<double>();
  const double htele = arms["hybrid_teleoperated"]["summary"]["motion_smoothness"].get<double>();
  h.report["comparison"] = {
      {"ms_reduction_hybrid_cooperative", 1.0 - hcoop / coop},
      {"ms_relative_difference_teleoperated", std::abs(htele - tele) / tele},
  };
  return arms;
}

json user_task(Harness& h) {
  const std::string mode = h.base.at("sim").at("mode").get<std::string>();
  const double rate = h.base.at("sim").at("control_rate_hz").get<double>();
  json runs = json::array();
  for (auto seed : h.opts.seeds) {
    const RunResult r = h.run(mode, arm_config(h.base, mode, seed));
    json e = run_entry(seed, r);
    e["path_mm"] = subsampled_path(r.log, rate);
    runs.push_back(std::move(e));
  }
  return {{mode, {{"runs", runs}, {"summary", summarize(runs)}}}};
}

}  // namespace

json tick_to_json(const TickRecord& t) {
  json j;
  j["t"] = t.t;
  j["phase"] = to_string(t.phase);
  j["tip_m"] = vec_json(t.tip);
  j["q"] = json::array();
  for (int i = 0; i < kJointCount; ++i) j["q"].push_back(t.q[i]);
  j["command"] = {{"linear_m_s", vec_json(t.command.linear)},
                  {"angular_rad_s", vec_json(t.command.angular)}};
  j["axial_command_m_s"] = t.axial_command;
  j["cr"] = optional_json(t.cr);
  j["distance_m"] = t.distance;
  j["events"] = event_names(t.events);
  return j;
}

void write_run_log(std::ostream& out, const RunResult& result, const json& resolved) {
  json header = {{"type", "header"},
                 {"schema_version", kConfigSchemaVersion},
                 {"seed", resolved.at("sim").at("seed")},
                 {"mode", resolved.at("sim").at("mode")},
                 {"status", to_string(result.status)},
                 {"tick_count", result.log.ticks.size()},
                 {"config", resolved}};
  out << header.dump() << '\n';
  for (const auto& t : result.log.ticks) out << tick_to_json(t).dump() << '\n';
}

json metrics_to_json(const RunMetrics& m) {
  json j;
  j["mean_cr"] = m.mean_cr;
  j["in_focus_fraction"] = m.in_focus_fraction;
  j["completion_time_s"] = optional_json(m.completion_time);
  j["registration_time_s"] = optional_json(m.registration_time);
  j["total_time_s"] = m.completion_time
                          ? json(*m.completion_time + m.registration_time.value_or(0.0))
                          : json(nullptr);
  j["motion_smoothness"] = m.motion_smoothness;
  j["min_distance_um"] = m.min_distance * 1e6;
  j["contact_ticks"] = m.contact_ticks;
  j["frame_count"] = m.frame_count;
  return j;
}

json run_report(const RunResult& result, const json& resolved) {
  json j;
  j["status"] = to_string(result.status);
  j["message"] = result.message;
  j["seed"] = resolved.at("sim").at("seed");
  j["mode"] = resolved.at("sim").at("mode");
  j["metrics"] = metrics_to_json(result.metrics);
  j["task_start_s"] = result.task_start;
  if (result.prior) {
    const auto& c = result.prior->coefficients();
    j["prior"] = {{"coefficients", std::vector<double>(c.data(), c.data() + c.size())},
                  {"sample_count", result.prior->sample_count()}};
  }
  j["config"] = resolved;
  return j;
}

std::string dump_report(const json& report) { return report.dump(2) + "\n"; }

const std::vector<std::string>& experiment_names() {
  static const std::vector<std::string> names = {"exp1", "exp2", "exp3", "user_task"};
  return names;
}

json experiment_preset(const std::string& name) {
  if (name == "exp1") return json::object();
  if (name == "exp2") {
    // Teleoperated setup. The operator scans in short strokes and pauses on
    // each one; the combined controller only fine-tunes while the hand is still.
    return {{"sim", {{"mode", "hybrid_teleoperated"}}},
            {"operator", {{"stroke_mm", 0.5}, {"dwell_s", 1.0}}}};
  }
  if (name == "exp3") return json::object();
  if (name == "user_task") return json::object();
  throw Error("unknown experiment '" + name + "' (expected exp1, exp2, exp3 or user_task)");
}

json run_experiment(const std::string& name, const ExperimentOptions& opts) {
  const json preset = experiment_preset(name);
  if (opts.seeds.empty()) throw Error("experiment needs at least one seed");
  Harness h{name, opts, layered_config(preset, opts.overrides), json::object()};
  h.report["experiment"] = name;
  h.report["seeds"] = opts.seeds;
  h.report["preset"] = preset;
  h.report["config"] = h.base;
  if (name == "exp1") {
    h.report["arms"] = exp1(h);
  } else if (name == "exp2") {
    h.report["arms"] = exp2(h);
  } else if (name == "exp3") {
    h.report["arms"] = exp3(h);
  } else {
    h.report["arms"] = user_task(h);
  }
  return h.report;
}

}  // namespace retsim
