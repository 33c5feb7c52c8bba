#include <chrono>
#include <csignal>
#include <deque>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include "retsim/error.hpp"
#include "retsim/gateway.hpp"

namespace retsim {

namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;
using nlohmann::json;

namespace {

class WsSession;

struct Shared {
  net::io_context ioc{1};
  tcp::acceptor acceptor{ioc};
  EngineLoop& loop;
  json config_echo;
  std::chrono::steady_clock::time_point started = std::chrono::steady_clock::now();
  std::vector<std::weak_ptr<WsSession>> sessions;  // io thread only
  bool stopping = false;

  Shared(EngineLoop& l, json echo) : loop(l), config_echo(std::move(echo)) {}
};

class WsSession : public std::enable_shared_from_this<WsSession> {
 public:
  WsSession(tcp::socket&& socket, Shared& shared) : ws_(std::move(socket)), shared_(shared) {}

  void run(http::request<http::string_body> req) {
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.async_accept(req, beast::bind_front_handler(&WsSession::on_accept, shared_from_this()));
  }

  void close() {
    if (closing_) return;
    closing_ = true;
    release();
    ws_.async_close(websocket::close_code::going_away,
                    [self = shared_from_this()](beast::error_code) {});
  }

 private:
  void on_accept(beast::error_code ec) {
    if (ec) return;
    json hello = {{"type", "hello"},
                  {"seq", 0},
                  {"payload",
                   {{"protocol_version", kProtocolVersion},
                    {"server", "retsim"},
                    {"version", kVersion},
                    {"mode", shared_.config_echo.at("sim").at("mode")}}}};
    enqueue(std::make_shared<const std::string>(hello.dump()));
    std::weak_ptr<WsSession> weak = shared_from_this();
    auto exec = ws_.get_executor();
    sink_id_ = shared_.loop.subscribe([weak, exec](std::shared_ptr<const std::string> text) {
      net::post(exec, [weak, text] {
        if (auto self = weak.lock()) {
          self->telemetry_ = text;  // latest wins
          self->pump();
        }
      });
    });
    do_read();
  }

  void do_read() {
    ws_.async_read(buffer_, beast::bind_front_handler(&WsSession::on_read, shared_from_this()));
  }

  void on_read(beast::error_code ec, std::size_t) {
    if (ec) {
      release();
      return;
    }
    const std::string text = beast::buffers_to_string(buffer_.data());
    buffer_.consume(buffer_.size());
    json msg = json::parse(text, nullptr, false);
    if (msg.is_discarded()) {
      send_ack({{"command_seq", nullptr}, {"kind", nullptr}, {"accepted", false},
                {"rejected", true}, {"clamped", false}, {"reason", "malformed JSON"}});
    } else if (msg.is_object() && msg.value("type", "") == "hello") {
      const json payload = msg.value("payload", json::object());
      const bool ok = payload.is_object() && payload.value("protocol_version", -1) == kProtocolVersion;
      json a = {{"command_seq", msg.value("seq", json(nullptr))}, {"kind", "hello"},
                {"accepted", ok}, {"rejected", !ok}, {"clamped", false}};
      if (!ok) {
        a["reason"] = "protocol version mismatch (server speaks " + std::to_string(kProtocolVersion) + ")";
        close_after_write_ = true;
      }
      send_ack(a);
    } else {
      std::weak_ptr<WsSession> weak = shared_from_this();
      auto exec = ws_.get_executor();
      shared_.loop.submit(std::move(msg), [weak, exec](json ack) {
        auto text = std::make_shared<const std::string>(ack.dump());
        net::post(exec, [weak, text] {
          if (auto self = weak.lock()) self->enqueue(text);
        });
      });
    }
    if (!closing_) do_read();
  }

  void send_ack(const json& payload) {
    json m = {{"type", "ack"}, {"seq", nullptr}, {"payload", payload}};
    enqueue(std::make_shared<const std::string>(m.dump()));
  }

  void enqueue(std::shared_ptr<const std::string> text) {
    queue_.push_back(std::move(text));
    pump();
  }

  void pump() {
    if (writing_ || closing_) return;
    std::shared_ptr<const std::string> next;
    if (!queue_.empty()) {
      next = queue_.front();
      queue_.pop_front();
    } else if (telemetry_) {
      next = std::move(telemetry_);
      telemetry_.reset();
    } else {
      if (close_after_write_) close();
      return;
    }
    writing_ = true;
    ws_.text(true);
    ws_.async_write(net::buffer(*next),
                    [self = shared_from_this(), next](beast::error_code ec, std::size_t) {
                      self->writing_ = false;
                      if (ec) {
                        self->release();
                        return;
                      }
                      self->pump();
                    });
  }

  void release() {
    if (sink_id_ != 0) {
      shared_.loop.unsubscribe(sink_id_);
      sink_id_ = 0;
    }
  }

  websocket::stream<beast::tcp_stream> ws_;
  Shared& shared_;
  beast::flat_buffer buffer_;
  std::deque<std::shared_ptr<const std::string>> queue_;
  std::shared_ptr<const std::string> telemetry_;
  bool writing_ = false;
  bool closing_ = false;
  bool close_after_write_ = false;
  int sink_id_ = 0;
};

class HttpSession : public std::enable_shared_from_this<HttpSession> {
 public:
  HttpSession(tcp::socket&& socket, Shared& shared) : stream_(std::move(socket)), shared_(shared) {}

  void run() { do_read(); }

 private:
  void do_read() {
    req_ = {};
    stream_.expires_after(std::chrono::seconds(30));
    http::async_read(stream_, buffer_, req_,
                     beast::bind_front_handler(&HttpSession::on_read, shared_from_this()));
  }

  void on_read(beast::error_code ec, std::size_t) {
    if (ec) return;
    if (websocket::is_upgrade(req_)) {
      if (req_.target() != "/session" || shared_.stopping) return;
      stream_.expires_never();
      auto ws = std::make_shared<WsSession>(stream_.release_socket(), shared_);
      shared_.sessions.push_back(ws);
      ws->run(std::move(req_));
      return;
    }
    auto res = std::make_shared<http::response<http::string_body>>(handle());
    http::async_write(stream_, *res,
                      [self = shared_from_this(), res](beast::error_code ec, std::size_t) {
                        if (ec) return;
                        if (res->need_eof()) {
                          beast::error_code ignored;
                          self->stream_.socket().shutdown(tcp::socket::shutdown_send, ignored);
                          return;
                        }
                        self->do_read();
                      });
  }

  http::response<http::string_body> handle() {
    auto reply = [this](http::status status, const json& body) {
      http::response<http::string_body> res{status, req_.version()};
      res.set(http::field::server, "retsim");
      res.set(http::field::content_type, "application/json; charset=utf-8");
      res.keep_alive(req_.keep_alive());
      res.body() = body.dump();
      res.prepare_payload();
      return res;
    };
    if (req_.method() != http::verb::get) {
      return reply(http::status::method_not_allowed, {{"error", "only GET is supported"}});
    }
    if (req_.target() == "/health") {
      const double uptime = std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                                          shared_.started).count();
      return reply(http::status::ok, {{"status", "ok"},
                                      {"version", kVersion},
                                      {"protocol_version", kProtocolVersion},
                                      {"uptime_s", uptime}});
    }
    if (req_.target() == "/config") return reply(http::status::ok, shared_.config_echo);
    return reply(http::status::not_found, {{"error", "not found"}});
  }

  beast::tcp_stream stream_;
  Shared& shared_;
  beast::flat_buffer buffer_;
  http::request<http::string_body> req_;
};

void do_accept(Shared& s) {
  s.acceptor.async_accept(net::make_strand(s.ioc), [&s](beast::error_code ec, tcp::socket socket) {
    if (ec) return;  // acceptor closed
    std::make_shared<HttpSession>(std::move(socket), s)->run();
    do_accept(s);
  });
}

}  // namespace

struct GatewayServer::Impl {
  Shared shared;
  std::optional<net::steady_timer> deadline;

  Impl(EngineLoop& loop, json echo) : shared(loop, std::move(echo)) {}

  void shutdown() {
    if (shared.stopping) return;
    shared.stopping = true;
    beast::error_code ignored;
    shared.acceptor.close(ignored);
    for (auto& w : shared.sessions) {
      if (auto s = w.lock()) s->close();
    }
    // Sessions that do not finish their close handshake are cut off.
    deadline.emplace(shared.ioc, std::chrono::seconds(2));
    deadline->async_wait([this](beast::error_code) { shared.ioc.stop(); });
  }
};

GatewayServer::GatewayServer(EngineLoop& loop, json config_echo, unsigned short port,
                             const std::string& address)
    : impl_(std::make_unique<Impl>(loop, std::move(config_echo))) {
  auto& acc = impl_->shared.acceptor;
  beast::error_code ec;
  const tcp::endpoint ep{net::ip::make_address(address, ec), port};
  if (ec) throw Error("gateway: bad address '" + address + "'");
  acc.open(ep.protocol(), ec);
  if (!ec) acc.set_option(net::socket_base::reuse_address(true), ec);
  if (!ec) acc.bind(ep, ec);
  if (!ec) acc.listen(net::socket_base::max_listen_connections, ec);
  if (ec) {
    throw Error("gateway: cannot listen on " + address + ":" + std::to_string(port) + ": " +
                ec.message());
  }
}

GatewayServer::~GatewayServer() = default;

unsigned short GatewayServer::port() const {
  beast::error_code ec;
  return impl_->shared.acceptor.local_endpoint(ec).port();
}

void GatewayServer::run(bool handle_signals) {
  std::optional<net::signal_set> signals;
  if (handle_signals) {
    signals.emplace(impl_->shared.ioc, SIGINT, SIGTERM);
    signals->async_wait([this](beast::error_code ec, int) {
      if (!ec) impl_->shutdown();
    });
  }
  do_accept(impl_->shared);
  impl_->shared.ioc.run();
}

void GatewayServer::stop() {
  net::post(impl_->shared.ioc, [this] { impl_->shutdown(); });
}

}  // namespace retsim
