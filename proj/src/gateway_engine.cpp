#include <chrono>
#include <cmath>

#include <boost/beast/core/detail/base64.hpp>

#include "retsim/config.hpp"
#include "retsim/gateway.hpp"

namespace retsim {

using nlohmann::json;

namespace {

std::optional<Eigen::VectorXd> number_array(const json& payload, const char* key, int n) {
  if (!payload.is_object() || !payload.contains(key)) return std::nullopt;
  const json& a = payload.at(key);
  if (!a.is_array() || static_cast<int>(a.size()) != n) return std::nullopt;
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) {
    if (!a[i].is_number()) return std::nullopt;
    v[i] = a[i].get<double>();
    if (!std::isfinite(v[i])) return std::nullopt;
  }
  return v;
}

// Scales v down to the cap; returns true when it had to.
template <typename V>
bool clamp_norm(V& v, double cap) {
  const double n = v.norm();
  if (n <= cap) return false;
  v *= cap / n;
  return true;
}

}  // namespace

void GatewayConfig::validate(double control_rate) const {
  if (!(telemetry_rate > 0.0) || telemetry_rate > control_rate) {
    throw Error("gateway: telemetry rate must be in (0, control rate]");
  }
  if (!(force_cap > 0.0) || !(mtm_delta_cap > 0.0)) throw Error("gateway: caps must be positive");
  if (thumbnail_size <= 0) throw Error("gateway: thumbnail size must be positive");
}

std::vector<std::uint8_t> thumbnail_bytes(const Image& img, int size) {
  const Image small = downscale(img, size, size);
  std::vector<std::uint8_t> out(static_cast<std::size_t>(size) * size);
  for (int r = 0; r < size; ++r) {
    for (int c = 0; c < size; ++c) {
      out[static_cast<std::size_t>(r) * size + c] =
          static_cast<std::uint8_t>(std::lround(std::clamp(small(r, c), 0.0, 1.0) * 255.0));
    }
  }
  return out;
}

std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
  namespace b64 = boost::beast::detail::base64;
  std::string out(b64::encoded_size(bytes.size()), '\0');
  out.resize(b64::encode(out.data(), bytes.data(), bytes.size()));
  return out;
}

std::vector<std::uint8_t> base64_decode(const std::string& text) {
  namespace b64 = boost::beast::detail::base64;
  std::vector<std::uint8_t> out(b64::decoded_size(text.size()));
  const auto [written, read] = b64::decode(out.data(), text.data(), text.size());
  // The decoder stops at the first '='; only padding may follow.
  if (text.size() % 4 != 0 || text.size() - read > 2 ||
      text.find_first_not_of('=', read) != std::string::npos) {
    throw Error("base64: invalid input");
  }
  out.resize(written);
  return out;
}

// --- InteractiveEngine -------------------------------------------------------

InteractiveEngine::InteractiveEngine(const json& resolved_config, GatewayConfig gw)
    : resolved_(resolved_config), cfg_(to_sim_config(resolved_config)), gw_(gw) {
  gw_.validate(cfg_.control_rate);
  // A live session has no scripted end; registration starts on request.
  cfg_.duration = std::numeric_limits<double>::max();
  cfg_.stop_on_completion = false;
  cfg_.registration.enabled = false;
  ticks_per_telemetry_ = std::max(1L, std::lround(cfg_.control_rate / gw_.telemetry_rate));
  reset();
}

void InteractiveEngine::reset() {
  const Mode mode = sim_ ? sim_->mode() : cfg_.mode;
  SimConfig c = cfg_;
  c.mode = mode;
  sim_ = std::make_unique<Simulation>(c);
  pedal_ = false;
  clear_steering();
  mtm_position_.setZero();
  events_ = 0;
  tick_count_ = 0;
  telemetry_due_ = true;
}

void InteractiveEngine::clear_steering() {
  force_.setZero();
  pending_delta_.reset();
  hand_tip_.reset();
}

void InteractiveEngine::release() {
  pedal_ = false;
  clear_steering();
}

json InteractiveEngine::ack(const json& msg, bool accepted, const std::string& reason,
                            bool clamped) const {
  json a;
  a["command_seq"] = msg.is_object() && msg.contains("seq") ? msg.at("seq") : json(nullptr);
  a["kind"] = msg.is_object() && msg.contains("type") ? msg.at("type") : json(nullptr);
  a["accepted"] = accepted;
  a["rejected"] = !accepted;
  a["clamped"] = clamped;
  if (!reason.empty()) a["reason"] = reason;
  return a;
}

json InteractiveEngine::apply(const json& msg) {
  if (!msg.is_object() || !msg.contains("type") || !msg.at("type").is_string()) {
    return ack(msg, false, "message must be an object with a string 'type'");
  }
  if (!msg.contains("seq") || !msg.at("seq").is_number_integer()) {
    return ack(msg, false, "message needs an integer 'seq'");
  }
  const json payload = msg.value("payload", json::object());
  if (!payload.is_object()) return ack(msg, false, "payload must be an object");
  const std::string type = msg.at("type").get<std::string>();
  const Mode mode = sim_->mode();

  if (type == "hello") {
    if (!payload.contains("protocol_version") || payload.at("protocol_version") != kProtocolVersion) {
      return ack(msg, false, "protocol version mismatch (server speaks " +
                                 std::to_string(kProtocolVersion) + ")");
    }
    return ack(msg, true);
  }
  if (type == "pedal") {
    if (!payload.contains("pressed") || !payload.at("pressed").is_boolean()) {
      return ack(msg, false, "pedal needs boolean 'pressed'");
    }
    pedal_ = payload.at("pressed").get<bool>();
    if (!pedal_) clear_steering();
    return ack(msg, true);
  }
  if (type == "steer_force") {
    auto f = number_array(payload, "force_n", 2);
    if (!f) return ack(msg, false, "steer_force needs 'force_n': [fx, fy]");
    if (!pedal_) return ack(msg, false, "pedal released");
    if (!is_cooperative(mode)) return ack(msg, false, "steer_force needs a cooperative mode");
    Vec2 v = f->head<2>();
    const bool clamped = clamp_norm(v, gw_.force_cap);
    force_ = v;
    return ack(msg, true, clamped ? "force clamped to cap" : "", clamped);
  }
  if (type == "steer_mtm_delta") {
    auto d = number_array(payload, "delta_mm", 3);
    if (!d) return ack(msg, false, "steer_mtm_delta needs 'delta_mm': [dx, dy, dz]");
    if (!pedal_) return ack(msg, false, "pedal released");
    if (!is_teleoperated(mode) && mode != Mode::manual) {
      return ack(msg, false, "steer_mtm_delta needs a teleoperated or manual mode");
    }
    Vec3 v = d->head<3>() * 1e-3;
    const bool clamped = clamp_norm(v, gw_.mtm_delta_cap);
    pending_delta_ = v;  // latest wins within a tick
    return ack(msg, true, clamped ? "delta clamped to cap" : "", clamped);
  }
  if (type == "set_mode") {
    if (!payload.contains("mode") || !payload.at("mode").is_string()) {
      return ack(msg, false, "set_mode needs string 'mode'");
    }
    if (pedal_) return ack(msg, false, "release the pedal before changing mode");
    Mode m;
    try {
      m = parse_mode(payload.at("mode").get<std::string>());
    } catch (const Error& e) {
      return ack(msg, false, e.what());
    }
    sim_->set_mode(m);
    clear_steering();
    telemetry_due_ = true;
    return ack(msg, true);
  }
  if (type == "start_registration") {
    if (!is_hybrid(mode)) return ack(msg, false, "registration needs a hybrid mode");
    if (sim_->stopped()) return ack(msg, false, "simulation stopped; reset first");
    sim_->start_registration();
    return ack(msg, true);
  }
  if (type == "reset") {
    reset();
    return ack(msg, true);
  }
  return ack(msg, false, "unknown command '" + type + "'");
}

void InteractiveEngine::tick() {
  ++tick_count_;
  if (tick_count_ % ticks_per_telemetry_ == 0) telemetry_due_ = true;
  if (sim_->stopped()) return;

  HumanInput input;
  if (pedal_) {
    input.pedal = true;
    const Mode mode = sim_->mode();
    if (is_cooperative(mode)) {
      input.force.force << force_, 0.0;
    } else if (is_teleoperated(mode)) {
      if (pending_delta_) mtm_position_ += *pending_delta_;
      input.mtm = RigidTransform::from_translation(mtm_position_);
    } else if (mode == Mode::manual) {
      if (!hand_tip_) hand_tip_ = sim_->tip();
      if (pending_delta_) *hand_tip_ += *pending_delta_;
      input.hand_tip = hand_tip_;
    }
  }
  pending_delta_.reset();
  last_input_ = input;
  try {
    sim_->step(input);
    events_ |= sim_->last_record().events;
  } catch (const Error& e) {
    sim_->stop(RunStatus::limit, e.what());
  }
}

std::optional<json> InteractiveEngine::take_telemetry() {
  if (!telemetry_due_) return std::nullopt;
  telemetry_due_ = false;
  json p = telemetry_payload();
  events_ = 0;
  return p;
}

json InteractiveEngine::telemetry_payload() const {
  const Simulation& s = *sim_;
  json p;
  p["t"] = s.time();
  p["mode"] = to_string(s.mode());
  p["phase"] = to_string(s.phase());
  p["pedal"] = pedal_;
  p["status"] = s.status() ? to_string(*s.status()) : "running";
  const Vec3 tip = s.tip() * 1e3;
  p["probe_position_mm"] = {tip.x(), tip.y(), tip.z()};
  if (!s.log().ticks.empty() && s.log().ticks.back().cr) {
    const TickRecord& rec = s.log().ticks.back();
    p["cr"] = *rec.cr;
    p["in_focus"] = *rec.cr >= s.config().autofocus.T2;
    p["axial_command_um_s"] = rec.axial_command * 1e6;
    p["distance_um"] = rec.distance * 1e6;
  } else {
    p["cr"] = nullptr;
    p["in_focus"] = false;
    p["axial_command_um_s"] = 0.0;
    p["distance_um"] = s.tissue().probe_distance(s.tip(), s.time()) * 1e6;
  }
  const int n = gw_.thumbnail_size;
  std::vector<std::uint8_t> pixels(static_cast<std::size_t>(n) * n, 0);
  if (s.latest_frame()) pixels = thumbnail_bytes(s.latest_frame()->pixels, n);
  p["thumbnail"] = {{"width", n}, {"height", n}, {"encoding", "base64-gray8"},
                    {"data", base64_encode(pixels)}};
  p["events"] = event_names(events_);
  return p;
}

// --- EngineLoop --------------------------------------------------------------

EngineLoop::EngineLoop(InteractiveEngine& engine, double speed) : engine_(engine), speed_(speed) {
  if (!(speed > 0.0)) throw Error("engine loop: speed must be positive");
}

EngineLoop::~EngineLoop() { stop(); }

void EngineLoop::start() {
  if (running_.exchange(true)) return;
  thread_ = std::thread([this] { run(); });
}

void EngineLoop::stop() {
  running_ = false;
  if (thread_.joinable()) thread_.join();
}

void EngineLoop::submit(json msg, AckHandler on_ack) {
  std::lock_guard lock(mu_);
  inbox_.push_back(Pending{std::move(msg), std::move(on_ack)});
}

int EngineLoop::subscribe(TelemetrySink sink) {
  std::lock_guard lock(mu_);
  const int id = next_id_++;
  sinks_[id] = std::move(sink);
  return id;
}

void EngineLoop::unsubscribe(int id) {
  std::lock_guard lock(mu_);
  sinks_.erase(id);
  released_.push_back(id);
}

void EngineLoop::run() {
  using clock = std::chrono::steady_clock;
  const auto period = std::chrono::duration_cast<clock::duration>(
      std::chrono::duration<double>(engine_.dt() / speed_));
  auto next = clock::now();
  while (running_) {
    std::vector<Pending> inbox;
    std::vector<int> released;
    {
      std::lock_guard lock(mu_);
      inbox.swap(inbox_);
      released.swap(released_);
    }
    if (!released.empty()) engine_.release();
    for (auto& p : inbox) {
      json ack = {{"type", "ack"}, {"seq", ++seq_}, {"payload", engine_.apply(p.msg)}};
      if (p.on_ack) p.on_ack(std::move(ack));
    }
    engine_.tick();
    if (auto payload = engine_.take_telemetry()) {
      json msg = {{"type", "telemetry"}, {"seq", ++seq_}, {"payload", std::move(*payload)}};
      auto text = std::make_shared<const std::string>(msg.dump());
      std::vector<TelemetrySink> sinks;
      {
        std::lock_guard lock(mu_);
        for (const auto& [id, s] : sinks_) sinks.push_back(s);
      }
      for (const auto& s : sinks) s(text);
    }
    next += period;
    const auto now = clock::now();
    if (now - next > std::chrono::milliseconds(250)) next = now;  // fell behind; do not burst
    std::this_thread::sleep_until(next);
  }
}

}  // namespace retsim
