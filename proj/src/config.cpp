#include "retsim/config.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace retsim {

using nlohmann::json;

namespace {

constexpr double um = 1e-6;
constexpr double mm = 1e-3;
constexpr double ms = 1e-3;

// SI value in file units, trimmed of conversion noise (1e-5 / 1e-6 would
// otherwise print as 10.000000000000002).
double in_units(double si, double unit) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.12g", si / unit);
  return std::strtod(buf, nullptr);
}

json vec(const Vec2& v, double unit) { return json::array({in_units(v.x(), unit), in_units(v.y(), unit)}); }
json vec(const Vec3& v, double unit) {
  return json::array({in_units(v.x(), unit), in_units(v.y(), unit), in_units(v.z(), unit)});
}

const char* type_name(const json& j) {
  if (j.is_boolean()) return "boolean";
  if (j.is_number()) return "number";
  if (j.is_string()) return "string";
  if (j.is_array()) return "array";
  if (j.is_object()) return "object";
  return "null";
}

// Checks `user` against the shape of `defaults` and writes accepted values
// into `out`.
void overlay(const json& defaults, const json& user, json& out, const std::string& path) {
  if (!user.is_object()) throw ConfigError(path.empty() ? "<root>" : path, "expected an object");
  for (const auto& [key, value] : user.items()) {
    const std::string where = path.empty() ? key : path + "." + key;
    if (!defaults.contains(key)) throw ConfigError(where, "unknown key");
    const json& d = defaults.at(key);
    if (d.is_object()) {
      overlay(d, value, out[key], where);
      continue;
    }
    if (d.is_number_integer()) {
      if (!value.is_number_integer()) throw ConfigError(where, "expected an integer");
    } else if (d.is_number()) {
      if (!value.is_number()) throw ConfigError(where, std::string("expected a number, got ") + type_name(value));
      if (!std::isfinite(value.get<double>())) throw ConfigError(where, "must be finite");
    } else if (d.is_boolean()) {
      if (!value.is_boolean()) throw ConfigError(where, "expected true or false");
    } else if (d.is_string()) {
      if (!value.is_string()) throw ConfigError(where, "expected a string");
    } else if (d.is_array()) {
      if (!value.is_array() || value.size() != d.size()) {
        throw ConfigError(where, "expected an array of " + std::to_string(d.size()) + " numbers");
      }
      for (const auto& e : value) {
        if (!e.is_number() || !std::isfinite(e.get<double>())) {
          throw ConfigError(where, "array entries must be finite numbers");
        }
      }
    }
    out[key] = value;
  }
}

template <typename T>
T get(const json& doc, const std::string& section, const std::string& key) {
  try {
    return doc.at(section).at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(section + "." + key, "missing or mistyped");
  }
}

double num(const json& doc, const std::string& section, const std::string& key) {
  return get<double>(doc, section, key);
}

Vec2 vec2(const json& doc, const std::string& section, const std::string& key, double unit) {
  const auto& a = doc.at(section).at(key);
  return Vec2(a.at(0).get<double>(), a.at(1).get<double>()) * unit;
}

Vec3 vec3(const json& doc, const std::string& section, const std::string& key, double unit) {
  const auto& a = doc.at(section).at(key);
  return Vec3(a.at(0).get<double>(), a.at(1).get<double>(), a.at(2).get<double>()) * unit;
}

}  // namespace

json default_config_json() {
  const SimConfig c;
  const RobotModel& r = c.robot;
  json doc;
  doc["schema_version"] = kConfigSchemaVersion;
  doc["sim"] = {
      {"control_rate_hz", c.control_rate},
      {"pcle_rate_hz", c.pcle_rate},
      {"duration_s", c.duration},
      {"mode", to_string(c.mode)},
      {"seed", c.seed},
      {"safety_strict", c.safety_strict},
      {"stop_on_completion", c.stop_on_completion},
      {"start_distance_um", in_units(c.task.start_distance, um)},
  };
  doc["imaging"] = {
      {"optimal_distance_um", in_units(c.focus.optimal_distance, um)},
      {"focus_band_um", in_units(c.focus.focus_band, um)},
      {"out_of_range_distance_um", in_units(c.focus.out_of_range_distance, um)},
      {"peak_cr", c.focus.peak_cr},
      {"floor_cr", c.focus.floor_cr},
      {"frame_size_px", c.renderer.frame_size},
      {"cr_filter_length_px", c.renderer.cr_filter_length},
      {"band_edge_cr", c.renderer.band_edge_score},
      {"noise_std", c.renderer.noise_std},
      {"noise_spacing_px", c.renderer.noise_spacing},
      {"gain_span", c.renderer.gain_span},
      {"texture_pitch_um", in_units(c.texture.pixel_pitch, um)},
      {"texture_extent_mm", in_units(c.texture.extent, mm)},
      {"texture_seed", c.texture.seed},
  };
  doc["phantom"] = {
      {"surface", c.phantom.surface == SurfaceKind::sphere ? "sphere" : "plane"},
      {"apex_mm", vec(c.phantom.apex, mm)},
      {"outer_diameter_mm", in_units(c.phantom.outer_diameter, mm)},
      {"wall_thickness_mm", in_units(c.phantom.wall_thickness, mm)},
      {"opening_diameter_mm", in_units(c.phantom.opening_diameter, mm)},
      {"bump_count", c.phantom.bump_count},
      {"bump_amplitude_um", in_units(c.phantom.bump_amplitude, um)},
      {"bump_width_min_mm", in_units(c.phantom.bump_width_min, mm)},
      {"bump_width_max_mm", in_units(c.phantom.bump_width_max, mm)},
      {"seed", c.phantom.seed},
      {"patient_motion",
       {
           {"enabled", c.phantom.patient_motion.enabled},
           {"amplitude_um", in_units(c.phantom.patient_motion.amplitude, um)},
           {"frequency_hz", c.phantom.patient_motion.frequency_hz},
           {"walk_fraction", c.phantom.patient_motion.walk_fraction},
           {"seed", c.phantom.patient_motion.seed},
       }},
  };
  doc["robot"] = {
      {"tool_offset_mm", vec(r.tool_offset.translation, mm)},
      {"prismatic_limit_mm", in_units(r.q_upper[0], mm)},
      {"revolute_limit_deg", in_units(r.q_upper[3] * 180.0 / M_PI, 1.0)},
      {"prismatic_speed_mm_s", in_units(r.qd_upper[0], mm)},
      {"revolute_speed_rad_s", r.qd_upper[3]},
      {"resolution_um", in_units(r.resolution, um)},
      {"tracking_time_constant_ms", in_units(r.tracking_time_constant, ms)},
      {"orientation_locked", r.orientation_locked},
  };
  doc["control"] = {
      {"t1", c.autofocus.T1},
      {"t2", c.autofocus.T2},
      {"gain_um", in_units(c.autofocus.gain_g, um)},
      {"sign_law", c.autofocus.sign_law == SignLaw::text_gradient ? "text_gradient" : "paper_listing"},
      {"axial_controller", to_string(c.axial_controller)},
      {"normal_source", to_string(c.normal_source)},
      {"max_axial_step_um", in_units(c.max_axial_step, um)},
      {"alpha_um_s_per_n", in_units(c.alpha, um)},
      {"beta", c.teleop.beta},
      {"k_p_n_per_m", c.teleop.haptic.k_p},
      {"k_r_nm_per_rad", c.teleop.haptic.k_R},
      {"b_n_s_per_m", c.teleop.haptic.b},
  };
  const OperatorScript& o = c.operator_script;
  doc["operator"] = {
      {"path_side_mm", in_units(c.task.side, mm)},
      {"path_center_mm", vec(c.task.center, mm)},
      {"speed_um_s", in_units(o.speed, um)},
      {"dwell_s", o.dwell},
      {"stroke_mm", in_units(o.stroke, mm)},
      {"capture_radius_mm", in_units(o.capture_radius, mm)},
      {"force_cap_n", o.force_cap},
      {"nav_gain_n_per_mm", in_units(o.nav_gain, 1.0 / mm)},
      {"hand_stiffness_n_per_mm", in_units(o.hand_stiffness, 1.0 / mm)},
      {"lag_limit_mm", in_units(o.lag_limit, mm)},
      {"reaction_delay_ms", in_units(o.reaction_delay, ms)},
      {"axial_speed_um_s", in_units(o.axial_speed, um)},
      {"flip_margin", o.flip_margin},
      {"tremor_amplitude_um", in_units(c.tremor.amplitude, um)},
      {"tremor_band_hz", json::array({c.tremor.band_low_hz, c.tremor.band_high_hz})},
      {"tremor_seed", c.tremor.seed},
  };
  doc["registration"] = {
      {"enabled", c.registration.enabled},
      {"margin_mm", in_units(c.registration.margin, mm)},
      {"speed_um_s", in_units(c.registration.speed, um)},
      {"sample_count", c.registration.sample_target},
  };
  return doc;
}

json resolve_config(const json& user) {
  const json defaults = default_config_json();
  if (!user.is_object()) throw ConfigError("<root>", "expected a JSON object");
  if (!user.contains("schema_version")) throw ConfigError("schema_version", "missing");
  if (!user.at("schema_version").is_number_integer() ||
      user.at("schema_version").get<int>() != kConfigSchemaVersion) {
    throw ConfigError("schema_version", "unsupported (expected " +
                                            std::to_string(kConfigSchemaVersion) + ")");
  }
  json out = defaults;
  overlay(defaults, user, out, "");
  to_sim_config(out);  // value checks
  return out;
}

json load_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("<file>", "cannot read " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("<file>", std::string("malformed JSON: ") + e.what());
  }
  return resolve_config(doc);
}

std::string serialize_config(const json& resolved) { return resolved.dump(2) + "\n"; }

SimConfig to_sim_config(const json& d) {
  SimConfig c;
  auto enum_value = [&](const std::string& section, const std::string& key, auto parse) {
    try {
      return parse(get<std::string>(d, section, key));
    } catch (const ConfigError&) {
      throw;
    } catch (const Error& e) {
      throw ConfigError(section + "." + key, e.what());
    }
  };

  c.control_rate = num(d, "sim", "control_rate_hz");
  c.pcle_rate = num(d, "sim", "pcle_rate_hz");
  c.duration = num(d, "sim", "duration_s");
  c.mode = enum_value("sim", "mode", parse_mode);
  c.seed = get<std::uint64_t>(d, "sim", "seed");
  c.safety_strict = get<bool>(d, "sim", "safety_strict");
  c.stop_on_completion = get<bool>(d, "sim", "stop_on_completion");
  c.task.start_distance = num(d, "sim", "start_distance_um") * um;

  c.focus.optimal_distance = num(d, "imaging", "optimal_distance_um") * um;
  c.focus.focus_band = num(d, "imaging", "focus_band_um") * um;
  c.focus.out_of_range_distance = num(d, "imaging", "out_of_range_distance_um") * um;
  c.focus.peak_cr = num(d, "imaging", "peak_cr");
  c.focus.floor_cr = num(d, "imaging", "floor_cr");
  c.renderer.frame_size = get<int>(d, "imaging", "frame_size_px");
  c.renderer.cr_filter_length = get<int>(d, "imaging", "cr_filter_length_px");
  c.renderer.band_edge_score = num(d, "imaging", "band_edge_cr");
  c.renderer.noise_std = num(d, "imaging", "noise_std");
  c.renderer.noise_spacing = get<int>(d, "imaging", "noise_spacing_px");
  c.renderer.gain_span = num(d, "imaging", "gain_span");
  c.texture.pixel_pitch = num(d, "imaging", "texture_pitch_um") * um;
  c.texture.extent = num(d, "imaging", "texture_extent_mm") * mm;
  c.texture.seed = get<std::uint64_t>(d, "imaging", "texture_seed");

  const std::string surface = get<std::string>(d, "phantom", "surface");
  if (surface == "sphere") {
    c.phantom.surface = SurfaceKind::sphere;
  } else if (surface == "plane") {
    c.phantom.surface = SurfaceKind::plane;
  } else {
    throw ConfigError("phantom.surface", "expected 'sphere' or 'plane'");
  }
  c.phantom.apex = vec3(d, "phantom", "apex_mm", mm);
  c.phantom.outer_diameter = num(d, "phantom", "outer_diameter_mm") * mm;
  c.phantom.wall_thickness = num(d, "phantom", "wall_thickness_mm") * mm;
  c.phantom.opening_diameter = num(d, "phantom", "opening_diameter_mm") * mm;
  c.phantom.bump_count = get<int>(d, "phantom", "bump_count");
  c.phantom.bump_amplitude = num(d, "phantom", "bump_amplitude_um") * um;
  c.phantom.bump_width_min = num(d, "phantom", "bump_width_min_mm") * mm;
  c.phantom.bump_width_max = num(d, "phantom", "bump_width_max_mm") * mm;
  c.phantom.seed = get<std::uint64_t>(d, "phantom", "seed");
  const json& pm = d.at("phantom").at("patient_motion");
  c.phantom.patient_motion.enabled = pm.at("enabled").get<bool>();
  c.phantom.patient_motion.amplitude = pm.at("amplitude_um").get<double>() * um;
  c.phantom.patient_motion.frequency_hz = pm.at("frequency_hz").get<double>();
  c.phantom.patient_motion.walk_fraction = pm.at("walk_fraction").get<double>();
  c.phantom.patient_motion.seed = pm.at("seed").get<std::uint64_t>();
  c.phantom.focus_band = c.focus.focus_band;

  RobotModel& r = c.robot;
  r.tool_offset = RigidTransform::from_translation(vec3(d, "robot", "tool_offset_mm", mm));
  const double p = num(d, "robot", "prismatic_limit_mm") * mm;
  const double a = num(d, "robot", "revolute_limit_deg") * M_PI / 180.0;
  const double ps = num(d, "robot", "prismatic_speed_mm_s") * mm;
  const double rs = num(d, "robot", "revolute_speed_rad_s");
  r.q_lower << -p, -p, -p, -a, -a;
  r.q_upper << p, p, p, a, a;
  r.qd_lower << -ps, -ps, -ps, -rs, -rs;
  r.qd_upper << ps, ps, ps, rs, rs;
  r.resolution = num(d, "robot", "resolution_um") * um;
  r.tracking_time_constant = num(d, "robot", "tracking_time_constant_ms") * ms;
  r.orientation_locked = get<bool>(d, "robot", "orientation_locked");

  c.autofocus.T1 = num(d, "control", "t1");
  c.autofocus.T2 = num(d, "control", "t2");
  c.autofocus.gain_g = num(d, "control", "gain_um") * um;
  c.autofocus.robot_resolution = r.resolution;
  const std::string law = get<std::string>(d, "control", "sign_law");
  if (law == "text_gradient") {
    c.autofocus.sign_law = SignLaw::text_gradient;
  } else if (law == "paper_listing") {
    c.autofocus.sign_law = SignLaw::paper_listing;
  } else {
    throw ConfigError("control.sign_law", "expected 'text_gradient' or 'paper_listing'");
  }
  c.axial_controller = enum_value("control", "axial_controller", parse_axial_controller);
  c.normal_source = enum_value("control", "normal_source", parse_normal_source);
  c.max_axial_step = num(d, "control", "max_axial_step_um") * um;
  c.alpha = num(d, "control", "alpha_um_s_per_n") * um;
  c.teleop.beta = num(d, "control", "beta");
  c.teleop.haptic.k_p = num(d, "control", "k_p_n_per_m");
  c.teleop.haptic.k_R = num(d, "control", "k_r_nm_per_rad");
  c.teleop.haptic.b = num(d, "control", "b_n_s_per_m");

  OperatorScript& o = c.operator_script;
  c.task.side = num(d, "operator", "path_side_mm") * mm;
  c.task.center = vec2(d, "operator", "path_center_mm", mm);
  o.speed = num(d, "operator", "speed_um_s") * um;
  o.dwell = num(d, "operator", "dwell_s");
  o.stroke = num(d, "operator", "stroke_mm") * mm;
  o.capture_radius = num(d, "operator", "capture_radius_mm") * mm;
  o.force_cap = num(d, "operator", "force_cap_n");
  o.nav_gain = num(d, "operator", "nav_gain_n_per_mm") / mm;
  o.hand_stiffness = num(d, "operator", "hand_stiffness_n_per_mm") / mm;
  o.lag_limit = num(d, "operator", "lag_limit_mm") * mm;
  o.reaction_delay = num(d, "operator", "reaction_delay_ms") * ms;
  o.axial_speed = num(d, "operator", "axial_speed_um_s") * um;
  o.flip_margin = num(d, "operator", "flip_margin");
  c.tremor.amplitude = num(d, "operator", "tremor_amplitude_um") * um;
  const json& band = d.at("operator").at("tremor_band_hz");
  c.tremor.band_low_hz = band.at(0).get<double>();
  c.tremor.band_high_hz = band.at(1).get<double>();
  c.tremor.seed = get<std::uint64_t>(d, "operator", "tremor_seed");

  c.registration.enabled = get<bool>(d, "registration", "enabled");
  c.registration.margin = num(d, "registration", "margin_mm") * mm;
  c.registration.speed = num(d, "registration", "speed_um_s") * um;
  c.registration.sample_target = get<int>(d, "registration", "sample_count");

  try {
    c.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    // Validation messages name the key when they can; fall back to the section.
    const std::string msg = e.what();
    const auto colon = msg.find(':');
    if (colon != std::string::npos && msg.find('.') < colon) {
      throw ConfigError(msg.substr(0, colon), msg.substr(colon + 2));
    }
    throw ConfigError("<config>", msg);
  }
  return c;
}

}  // namespace retsim
