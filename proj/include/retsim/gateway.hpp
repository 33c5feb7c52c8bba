#pragma once

#include <atomic>
#include <condition_variable>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "retsim/sim.hpp"

namespace retsim {

inline constexpr int kProtocolVersion = 1;
inline constexpr const char* kVersion = "0.1.0";

struct GatewayConfig {
  double telemetry_rate = 30.0;    // Hz
  double force_cap = 5.0;          // N, per steer_force message
  double mtm_delta_cap = 10e-3;    // m, per steer_mtm_delta message
  int thumbnail_size = 64;

  void validate(double control_rate) const;
};

// Encodes a frame as 8-bit grayscale, downscaled to size x size.
std::vector<std::uint8_t> thumbnail_bytes(const Image& img, int size);
std::string base64_encode(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> base64_decode(const std::string& text);

// Owns one simulation for a live operator. Not thread-safe: apply() and
// tick() must be called from the same thread (see EngineLoop).
class InteractiveEngine {
 public:
  explicit InteractiveEngine(const nlohmann::json& resolved_config, GatewayConfig gw = {});

  // Validates a client message {type, seq, payload} and returns the ack payload.
  nlohmann::json apply(const nlohmann::json& msg);
  // One control tick with the held human input.
  void tick();
  // Telemetry payload when one came due at the last tick.
  std::optional<nlohmann::json> take_telemetry();
  nlohmann::json telemetry_payload() const;
  // Connection lost: pedal up, steering cleared.
  void release();

  const Simulation& sim() const { return *sim_; }
  const nlohmann::json& config() const { return resolved_; }
  const GatewayConfig& gateway_config() const { return gw_; }
  bool pedal() const { return pedal_; }
  double dt() const { return sim_->config().dt(); }
  long ticks_per_telemetry() const { return ticks_per_telemetry_; }
  // Human input handed to the simulation at the last tick; for interlock audits.
  const HumanInput& last_input() const { return last_input_; }

 private:
  void reset();
  void clear_steering();
  nlohmann::json ack(const nlohmann::json& msg, bool accepted, const std::string& reason = "",
                     bool clamped = false) const;

  nlohmann::json resolved_;
  SimConfig cfg_;
  GatewayConfig gw_;
  std::unique_ptr<Simulation> sim_;
  long ticks_per_telemetry_ = 8;
  long tick_count_ = 0;
  bool pedal_ = false;
  Vec2 force_ = Vec2::Zero();
  std::optional<Vec3> pending_delta_;
  Vec3 mtm_position_ = Vec3::Zero();
  std::optional<Vec3> hand_tip_;
  std::uint32_t events_ = 0;
  bool telemetry_due_ = false;
  HumanInput last_input_;
};

// Runs an engine on its own thread at wall-clock pace. Sessions talk to it
// only through submit() and telemetry subscriptions.
class EngineLoop {
 public:
  using AckHandler = std::function<void(nlohmann::json)>;
  using TelemetrySink = std::function<void(std::shared_ptr<const std::string>)>;

  explicit EngineLoop(InteractiveEngine& engine, double speed = 1.0);
  ~EngineLoop();

  void start();
  void stop();

  // The handler runs on the engine thread with the complete ack message.
  void submit(nlohmann::json msg, AckHandler on_ack);
  int subscribe(TelemetrySink sink);
  // Also releases the pedal, as a disconnect must.
  void unsubscribe(int id);

 private:
  void run();

  struct Pending {
    nlohmann::json msg;
    AckHandler on_ack;
  };

  InteractiveEngine& engine_;
  double speed_;
  std::mutex mu_;
  std::vector<Pending> inbox_;
  std::vector<int> released_;
  std::map<int, TelemetrySink> sinks_;
  int next_id_ = 1;
  std::uint64_t seq_ = 0;
  std::atomic<bool> running_{false};
  std::thread thread_;
};

// HTTP (GET /health, GET /config) and WebSocket (/session) front end.
class GatewayServer {
 public:
  // Binds immediately; throws Error when the address is unavailable.
  GatewayServer(EngineLoop& loop, nlohmann::json config_echo, unsigned short port,
                const std::string& address = "127.0.0.1");
  ~GatewayServer();

  unsigned short port() const;
  // Serves until stop() (or SIGINT/SIGTERM when handle_signals is set);
  // returns after all sessions are closed.
  void run(bool handle_signals = false);
  // Safe from any thread.
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace retsim
