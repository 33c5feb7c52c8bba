#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>
#include <random>
#include <thread>

#include <boost/asio/connect.hpp>
#include <boost/asio/ip/tcp.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include "retsim/config.hpp"
#include "retsim/gateway.hpp"

using namespace retsim;
using nlohmann::json;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;

namespace {

json resolved(const std::string& mode = "cooperative") {
  json doc = {{"schema_version", kConfigSchemaVersion}, {"sim", {{"mode", mode}}}};
  return resolve_config(doc);
}

json msg(const std::string& type, int seq, json payload = json::object()) {
  return {{"type", type}, {"seq", seq}, {"payload", std::move(payload)}};
}

json http_get(unsigned short port, const std::string& target, int& status) {
  net::io_context ioc;
  tcp::resolver resolver(ioc);
  beast::tcp_stream stream(ioc);
  stream.connect(resolver.resolve("127.0.0.1", std::to_string(port)));
  http::request<http::empty_body> req{http::verb::get, target, 11};
  req.set(http::field::host, "127.0.0.1");
  http::write(stream, req);
  beast::flat_buffer buf;
  http::response<http::string_body> res;
  http::read(stream, buf, res);
  status = static_cast<int>(res.result_int());
  beast::error_code ec;
  stream.socket().shutdown(tcp::socket::shutdown_both, ec);
  return json::parse(res.body());
}

}  // namespace

TEST_CASE("steering is refused while the pedal is up") {
  InteractiveEngine e(resolved());
  json a = e.apply(msg("steer_force", 1, {{"force_n", {1.0, 0.0}}}));
  CHECK(a["rejected"] == true);
  CHECK(a["command_seq"] == 1);
  e.tick();
  CHECK_FALSE(e.last_input().pedal);
  CHECK(e.last_input().force.force.norm() == 0.0);

  CHECK(e.apply(msg("pedal", 2, {{"pressed", true}}))["accepted"] == true);
  CHECK(e.apply(msg("steer_force", 3, {{"force_n", {1.0, 0.0}}}))["accepted"] == true);
  e.tick();
  CHECK(e.last_input().pedal);
  CHECK(e.last_input().force.force.x() == 1.0);

  // Releasing the pedal clears the held force.
  e.apply(msg("pedal", 4, {{"pressed", false}}));
  e.tick();
  CHECK(e.last_input().force.force.norm() == 0.0);
}

TEST_CASE("oversized steering is clamped and flagged") {
  InteractiveEngine e(resolved());
  e.apply(msg("pedal", 1, {{"pressed", true}}));
  const json a = e.apply(msg("steer_force", 2, {{"force_n", {30.0, 40.0}}}));
  CHECK(a["accepted"] == true);
  CHECK(a["clamped"] == true);
  e.tick();
  CHECK(e.last_input().force.force.head<2>().norm() == doctest::Approx(5.0));
  CHECK((e.last_input().force.force.head<2>().normalized() - Vec2(0.6, 0.8)).norm() < 1e-12);
}

TEST_CASE("malformed and mismatched commands are rejected") {
  InteractiveEngine e(resolved());
  CHECK(e.apply(json::array())["rejected"] == true);
  CHECK(e.apply(json{{"type", "pedal"}})["rejected"] == true);  // no seq
  CHECK(e.apply(msg("warp", 1))["rejected"] == true);
  CHECK(e.apply(msg("hello", 2, {{"protocol_version", 99}}))["rejected"] == true);
  CHECK(e.apply(msg("hello", 3, {{"protocol_version", kProtocolVersion}}))["accepted"] == true);
  e.apply(msg("pedal", 4, {{"pressed", true}}));
  CHECK(e.apply(msg("steer_force", 5, {{"force_n", {1.0}}}))["rejected"] == true);
  CHECK(e.apply(msg("steer_force", 6, {{"force_n", {1.0, NAN}}}))["rejected"] == true);
  // Wrong mode for the command.
  CHECK(e.apply(msg("steer_mtm_delta", 7, {{"delta_mm", {1, 0, 0}}}))["rejected"] == true);
  CHECK(e.apply(msg("start_registration", 8))["rejected"] == true);
}

TEST_CASE("mode changes need the pedal up") {
  InteractiveEngine e(resolved());
  e.apply(msg("pedal", 1, {{"pressed", true}}));
  CHECK(e.apply(msg("set_mode", 2, {{"mode", "teleoperated"}}))["rejected"] == true);
  CHECK(e.sim().mode() == Mode::cooperative);
  e.apply(msg("pedal", 3, {{"pressed", false}}));
  CHECK(e.apply(msg("set_mode", 4, {{"mode", "teleoperated"}}))["accepted"] == true);
  CHECK(e.sim().mode() == Mode::teleoperated);
  CHECK(e.apply(msg("set_mode", 5, {{"mode", "autopilot"}}))["rejected"] == true);
}

TEST_CASE("the latest master delta within a tick wins") {
  InteractiveEngine e(resolved("teleoperated"));
  e.apply(msg("pedal", 1, {{"pressed", true}}));
  e.apply(msg("steer_mtm_delta", 2, {{"delta_mm", {5.0, 0.0, 0.0}}}));
  e.apply(msg("steer_mtm_delta", 3, {{"delta_mm", {0.0, 2.0, 0.0}}}));
  e.tick();
  REQUIRE(e.last_input().mtm.has_value());
  CHECK((e.last_input().mtm->translation - Vec3(0, 2e-3, 0)).norm() < 1e-15);
  // Deltas are consumed: the next tick holds the pose.
  e.tick();
  CHECK((e.last_input().mtm->translation - Vec3(0, 2e-3, 0)).norm() < 1e-15);
  // Oversized deltas are capped at 10 mm.
  const json a = e.apply(msg("steer_mtm_delta", 4, {{"delta_mm", {0.0, 0.0, 50.0}}}));
  CHECK(a["clamped"] == true);
  e.tick();
  CHECK(e.last_input().mtm->translation.z() == doctest::Approx(10e-3));
}

TEST_CASE("telemetry comes at 30 Hz of simulated time") {
  InteractiveEngine e(resolved());
  CHECK(e.ticks_per_telemetry() == 8);
  CHECK(e.take_telemetry().has_value());  // initial snapshot
  int n = 0;
  for (int i = 0; i < 2400; ++i) {
    e.tick();
    if (e.take_telemetry()) ++n;
  }
  CHECK(n == 300);
  const json p = e.telemetry_payload();
  CHECK(p["mode"] == "cooperative");
  CHECK(p["status"] == "running");
  CHECK(p["probe_position_mm"].size() == 3);
  CHECK(p["thumbnail"]["width"] == 64);
  CHECK(base64_decode(p["thumbnail"]["data"]).size() == 64u * 64u);
  CHECK(p["cr"].is_number());
}

TEST_CASE("thumbnail is the block mean rounded to 8 bits") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Image img(128, 128);
  for (int r = 0; r < 128; ++r)
    for (int c = 0; c < 128; ++c) img(r, c) = u(rng);
  const auto bytes = thumbnail_bytes(img, 64);
  REQUIRE(bytes.size() == 64u * 64u);
  for (int r = 0; r < 64; ++r) {
    for (int c = 0; c < 64; ++c) {
      const double m = (img(2 * r, 2 * c) + img(2 * r + 1, 2 * c) + img(2 * r, 2 * c + 1) +
                        img(2 * r + 1, 2 * c + 1)) / 4.0;
      CHECK(std::abs(bytes[r * 64 + c] - m * 255.0) <= 0.5 + 1e-9);
    }
  }
}

TEST_CASE("base64 round trip") {
  CHECK(base64_encode({'M', 'a', 'n'}) == "TWFu");
  CHECK(base64_encode({'M', 'a'}) == "TWE=");
  std::mt19937_64 rng(5);
  for (int len = 0; len < 70; ++len) {
    std::vector<std::uint8_t> b(len);
    for (auto& x : b) x = static_cast<std::uint8_t>(rng());
    CHECK(base64_decode(base64_encode(b)) == b);
  }
  CHECK_THROWS_AS(base64_decode("@@@@"), Error);
}

TEST_CASE("release drops the pedal") {
  InteractiveEngine e(resolved());
  e.apply(msg("pedal", 1, {{"pressed", true}}));
  e.apply(msg("steer_force", 2, {{"force_n", {2.0, 0.0}}}));
  e.release();
  CHECK_FALSE(e.pedal());
  e.tick();
  CHECK(e.last_input().force.force.norm() == 0.0);
}

TEST_CASE("gateway config validation") {
  GatewayConfig g;
  g.telemetry_rate = 500.0;
  CHECK_THROWS_AS(g.validate(240.0), Error);
  g = GatewayConfig{};
  g.force_cap = 0.0;
  CHECK_THROWS_AS(g.validate(240.0), Error);
}

TEST_CASE("server: health, config and a websocket session") {
  InteractiveEngine engine(resolved());
  EngineLoop loop(engine, 4.0);
  loop.start();
  const json echo = engine.config();
  GatewayServer server(loop, echo, 0);
  const unsigned short port = server.port();
  REQUIRE(port != 0);
  std::thread th([&] { server.run(); });

  int status = 0;
  json h = http_get(port, "/health", status);
  CHECK(status == 200);
  CHECK(h["status"] == "ok");
  CHECK(h["protocol_version"] == kProtocolVersion);
  CHECK(http_get(port, "/config", status) == echo);
  http_get(port, "/nothing", status);
  CHECK(status == 404);

  {
    net::io_context ioc;
    tcp::resolver resolver(ioc);
    websocket::stream<tcp::socket> ws(ioc);
    net::connect(ws.next_layer(), resolver.resolve("127.0.0.1", std::to_string(port)));
    ws.handshake("127.0.0.1", "/session");
    auto read = [&] {
      beast::flat_buffer b;
      ws.read(b);
      return json::parse(beast::buffers_to_string(b.data()));
    };
    auto send = [&](const json& m) { ws.write(net::buffer(m.dump())); };
    // Reads until an ack for the given command arrives, skipping telemetry.
    auto ack_for = [&](int seq) {
      for (int i = 0; i < 500; ++i) {
        const json m = read();
        if (m["type"] == "ack" && m["payload"]["command_seq"] == seq) return m["payload"];
      }
      return json();
    };

    const json hello = read();
    CHECK(hello["type"] == "hello");
    CHECK(hello["payload"]["protocol_version"] == kProtocolVersion);
    send(msg("hello", 1, {{"protocol_version", kProtocolVersion}}));
    CHECK(ack_for(1)["accepted"] == true);
    send(msg("pedal", 2, {{"pressed", true}}));
    CHECK(ack_for(2)["accepted"] == true);
    send(msg("steer_force", 3, {{"force_n", {9.0, 0.0}}}));
    const json a = ack_for(3);
    CHECK(a["accepted"] == true);
    CHECK(a["clamped"] == true);
    ws.write(net::buffer(std::string("{oops")));
    bool saw_malformed = false, saw_telemetry = false;
    for (int i = 0; i < 200 && !(saw_malformed && saw_telemetry); ++i) {
      const json m = read();
      if (m["type"] == "telemetry") {
        saw_telemetry = true;
        CHECK(m["payload"].contains("thumbnail"));
      }
      if (m["type"] == "ack" && m["payload"].value("reason", "") == "malformed JSON") saw_malformed = true;
    }
    CHECK(saw_malformed);
    CHECK(saw_telemetry);
    // Dropping the socket without a close handshake must release the pedal.
    beast::error_code ec;
    ws.next_layer().shutdown(tcp::socket::shutdown_both, ec);
    ws.next_layer().close(ec);
  }
  bool released = false;
  for (int i = 0; i < 200 && !released; ++i) {
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
    released = true;
    // Poll the engine through telemetry: a fresh session sees pedal false.
    net::io_context ioc;
    tcp::resolver resolver(ioc);
    websocket::stream<tcp::socket> ws(ioc);
    net::connect(ws.next_layer(), resolver.resolve("127.0.0.1", std::to_string(port)));
    ws.handshake("127.0.0.1", "/session");
    for (int k = 0; k < 10; ++k) {
      beast::flat_buffer b;
      ws.read(b);
      const json m = json::parse(beast::buffers_to_string(b.data()));
      if (m["type"] == "telemetry") {
        released = m["payload"]["pedal"] == false;
        break;
      }
    }
    ws.close(websocket::close_code::normal);
  }
  CHECK(released);

  server.stop();
  th.join();
  loop.stop();
  CHECK_FALSE(engine.pedal());
}

TEST_CASE("server refuses a busy port") {
  InteractiveEngine engine(resolved());
  EngineLoop loop(engine);
  GatewayServer first(loop, engine.config(), 0);
  CHECK_THROWS_AS(GatewayServer(loop, engine.config(), first.port()), Error);
}
