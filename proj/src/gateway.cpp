#include "lmpvc/gateway.hpp"

#include <deque>
#include <filesystem>
#include <set>
#include <thread>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include "lmpvc/text.hpp"
#include "lmpvc/world_io.hpp"

namespace lmpvc {

using nlohmann::json;

HttpResponse HttpResponse::json(int status, const nlohmann::json& j) {
  return {status, "application/json", j.dump()};
}

HttpResponse HttpResponse::error(int status, const std::string& message) {
  return json(status, {{"error", message}});
}

namespace {

struct Target {
  std::vector<std::string> segments;
  std::map<std::string, std::string> query;
};

std::string percent_decode(std::string_view s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '%' && i + 2 < s.size() && std::isxdigit(static_cast<unsigned char>(s[i + 1])) &&
        std::isxdigit(static_cast<unsigned char>(s[i + 2]))) {
      out += static_cast<char>(std::stoi(std::string(s.substr(i + 1, 2)), nullptr, 16));
      i += 2;
    } else if (s[i] == '+') {
      out += ' ';
    } else {
      out += s[i];
    }
  }
  return out;
}

Target parse_target(const std::string& target) {
  Target t;
  const auto q = target.find('?');
  const std::string path = target.substr(0, q);
  std::size_t start = 0;
  while (start <= path.size()) {
    const auto slash = path.find('/', start);
    const std::string seg = path.substr(start, slash == std::string::npos ? std::string::npos : slash - start);
    if (!seg.empty()) t.segments.push_back(percent_decode(seg));
    if (slash == std::string::npos) break;
    start = slash + 1;
  }
  if (q != std::string::npos) {
    std::string_view rest(target);
    rest.remove_prefix(q + 1);
    while (!rest.empty()) {
      const auto amp = rest.find('&');
      const std::string_view kv = rest.substr(0, amp);
      const auto eq = kv.find('=');
      t.query[percent_decode(kv.substr(0, eq))] =
          eq == std::string_view::npos ? "" : percent_decode(kv.substr(eq + 1));
      if (amp == std::string_view::npos) break;
      rest.remove_prefix(amp + 1);
    }
  }
  return t;
}

std::optional<json> parse_body(const std::string& body) {
  if (trim(body).empty()) return json::object();
  try {
    json j = json::parse(body);
    if (!j.is_object()) return std::nullopt;
    return j;
  } catch (const json::exception&) {
    return std::nullopt;
  }
}

json policy_summary(const PolicyRegistry& reg, const RegistryEntry& e) {
  json j = {{"name", e.name}, {"file", e.file}, {"enabled", e.enabled}};
  auto it = reg.loaded.find(e.name);
  std::optional<Policy> p;
  if (it != reg.loaded.end()) {
    p = it->second;
  } else if (!reg.errors.count(e.name)) {
    try {
      p = parse_policy_file(read_text_file(reg.resolve(e)));
    } catch (const std::exception& ex) {
      j["error"] = ex.what();
    }
  }
  if (auto err = reg.errors.find(e.name); err != reg.errors.end()) j["error"] = err->second;
  if (p) {
    j["learned"] = p->learned;
    j["entry_function"] = p->entry_function;
    j["hint"] = p->hint_utterance;
    j["alias_function"] = p->alias_function;
  } else {
    j["learned"] = false;
  }
  return j;
}

HttpResponse command_response(int status, const CommandResult& r) { return HttpResponse::json(status, r.to_json()); }

HttpResponse route_policies(Session& s, const HttpRequest& req, const Target& t) {
  PolicyBank& bank = s.bank();
  if (t.segments.size() == 2) {
    if (req.method != "GET") return HttpResponse::error(405, "method not allowed");
    const PolicyRegistry reg = bank.snapshot();
    json list = json::array();
    for (const auto& e : reg.entries) list.push_back(policy_summary(reg, e));
    return HttpResponse::json(200, {{"policies", list}});
  }
  const std::string& name = t.segments[2];
  if (t.segments.size() == 4 && req.method == "POST" &&
      (t.segments[3] == "enable" || t.segments[3] == "disable")) {
    try {
      if (!bank.set_enabled(name, t.segments[3] == "enable")) {
        return HttpResponse::error(404, "unknown policy '" + name + "'");
      }
    } catch (const PolicyParseError& e) {
      return HttpResponse::json(422, {{"error", "invalid policy"},
                                      {"diagnostics", json::array({{{"line", e.line()}, {"message", e.what()}}})}});
    } catch (const std::exception& e) {
      return HttpResponse::error(409, e.what());
    }
    const PolicyRegistry reg = bank.snapshot();
    return HttpResponse::json(200, policy_summary(reg, *reg.entry(name)));
  }
  if (t.segments.size() != 3) return HttpResponse::error(404, "not found");

  if (req.method == "GET") {
    const PolicyRegistry reg = bank.snapshot();
    const RegistryEntry* e = reg.entry(name);
    if (e == nullptr) return HttpResponse::error(404, "unknown policy '" + name + "'");
    auto it = reg.loaded.find(name);
    try {
      const Policy p = it != reg.loaded.end() ? it->second : parse_policy_file(read_text_file(reg.resolve(*e)));
      return {200, "text/plain; charset=utf-8", serialize_policy(p)};
    } catch (const std::exception& ex) {
      return HttpResponse::error(500, ex.what());
    }
  }
  if (req.method == "PUT") {
    if (!is_identifier(name)) return HttpResponse::error(400, "policy name must be an identifier");
    try {
      const bool created = bank.put(name, req.body);
      const PolicyRegistry reg = bank.snapshot();
      json j = policy_summary(reg, *reg.entry(name));
      j["created"] = created;
      return HttpResponse::json(created ? 201 : 200, j);
    } catch (const PolicyParseError& e) {
      return HttpResponse::json(422, {{"error", "invalid policy"},
                                      {"diagnostics", json::array({{{"line", e.line()}, {"message", e.what()}}})}});
    } catch (const std::exception& e) {
      return HttpResponse::error(409, e.what());
    }
  }
  if (req.method == "DELETE") {
    if (!bank.remove(name)) return HttpResponse::error(404, "unknown policy '" + name + "'");
    return HttpResponse::json(200, {{"name", name}, {"removed", true}});
  }
  return HttpResponse::error(405, "method not allowed");
}

HttpResponse route_world(Session& s, const HttpRequest& req, const Target& t) {
  if (t.segments.size() == 2) {
    if (req.method != "GET") return HttpResponse::error(405, "method not allowed");
    return HttpResponse::json(200, world_to_json(s.world().snapshot()));
  }
  if (t.segments.size() != 4 || t.segments[2] != "objects") return HttpResponse::error(404, "not found");
  const std::string& name = t.segments[3];
  if (req.method == "DELETE") {
    if (!s.world().remove_object(name)) return HttpResponse::error(404, "unknown object '" + name + "'");
    return HttpResponse::json(200, {{"name", name}, {"removed", true}});
  }
  if (req.method != "PUT") return HttpResponse::error(405, "method not allowed");
  const auto body = parse_body(req.body);
  if (!body) return HttpResponse::error(400, "body must be a JSON object");
  try {
    Pose pose;
    if (body->contains("pose")) {
      pose = pose_from_json(body->at("pose"));
    } else {
      const auto pos = body->at("position").get<std::vector<double>>();
      if (pos.size() != 3) return HttpResponse::error(400, "position needs three numbers");
      pose.position = {pos[0], pos[1], pos[2]};
    }
    const std::string kind = body->value("kind", "object");
    if (kind != "object" && kind != "location") return HttpResponse::error(400, "kind must be object or location");
    s.world().place_object(name, pose, kind == "location" ? ObjectKind::location : ObjectKind::object);
  } catch (const json::exception& e) {
    return HttpResponse::error(400, e.what());
  } catch (const std::exception& e) {
    return HttpResponse::error(422, e.what());
  }
  return HttpResponse::json(200, world_to_json(s.world().snapshot()));
}

}  // namespace

bool authorized(const HttpRequest& request, const std::string& token) {
  if (token.empty()) return true;
  if (request.authorization == "Bearer " + token) return true;
  const Target t = parse_target(request.target);
  auto it = t.query.find("token");
  return it != t.query.end() && it->second == token;
}

HttpResponse route_request(Session& s, const HttpRequest& req, const std::string& token) {
  const Target t = parse_target(req.target);
  const auto& seg = t.segments;
  if (seg.empty() || seg[0] != "api") return HttpResponse::error(404, "not found");
  // CORS preflight carries no credentials.
  if (req.method == "OPTIONS") return {204, "text/plain", ""};
  if (seg.size() == 2 && seg[1] == "health") {
    return HttpResponse::json(200, {{"ok", true}, {"last_seq", s.events().last_seq()}});
  }
  if (!authorized(req, token)) return HttpResponse::error(401, "missing or wrong token");
  if (seg.size() < 2) return HttpResponse::error(404, "not found");
  const std::string& area = seg[1];

  if (area == "session") {
    if (seg.size() == 2 && req.method == "GET") return HttpResponse::json(200, s.state_json());
    if (seg.size() == 3 && seg[2] == "approval" && req.method == "POST") {
      const auto body = parse_body(req.body);
      if (!body || !body->contains("required") || !body->at("required").is_boolean()) {
        return HttpResponse::error(400, "body needs a boolean 'required'");
      }
      s.set_approval_required(body->at("required").get<bool>());
      return HttpResponse::json(200, s.state_json());
    }
    return HttpResponse::error(404, "not found");
  }
  if (area == "command" && seg.size() == 2) {
    if (req.method != "POST") return HttpResponse::error(405, "method not allowed");
    const auto body = parse_body(req.body);
    if (!body) return HttpResponse::error(400, "body must be a JSON object");
    const json text = body->value("text", json());
    if (!text.is_string() || trim(text.get<std::string>()).empty()) {
      return HttpResponse::error(400, "'text' must be a non-empty string");
    }
    auto r = s.submit(text.get<std::string>(), TranscriptSource::typed);
    if (auto* err = std::get_if<Session::SubmitError>(&r)) {
      if (*err == Session::SubmitError::busy) return HttpResponse::error(409, "session is busy");
      return HttpResponse::error(400, "'text' must be a non-empty string");
    }
    return HttpResponse::json(202, {{"id", std::get<std::string>(r)}});
  }
  if (area == "commands" && seg.size() >= 3) {
    const std::string& id = seg[2];
    if (seg.size() == 3 && req.method == "GET") {
      auto r = s.result(id);
      if (!r) return HttpResponse::error(404, "unknown command '" + id + "'");
      return command_response(200, *r);
    }
    if (seg.size() == 4 && req.method == "POST" && (seg[3] == "approve" || seg[3] == "reject")) {
      switch (s.decide_async(id, seg[3] == "approve")) {
        case Session::Decision::ok: return HttpResponse::json(202, {{"id", id}, {"decision", seg[3]}});
        case Session::Decision::unknown_id: return HttpResponse::error(404, "unknown command '" + id + "'");
        case Session::Decision::not_pending: return HttpResponse::error(409, "command is not awaiting approval");
      }
    }
    return HttpResponse::error(404, "not found");
  }
  if (area == "policies") return route_policies(s, req, t);
  if (area == "recording" && seg.size() == 3 && req.method == "POST") {
    if (seg[2] == "start") {
      s.start_recording();
      return HttpResponse::json(200, s.state_json());
    }
    if (seg[2] == "discard") {
      s.discard_recording();
      return HttpResponse::json(200, s.state_json());
    }
    if (seg[2] == "save") {
      const auto body = parse_body(req.body);
      if (!body) return HttpResponse::error(400, "body must be a JSON object");
      const json name = body->value("name", json());
      const json hint = body->value("hint", json());
      if (!name.is_string() || !hint.is_string() || trim(name.get<std::string>()).empty() ||
          trim(hint.get<std::string>()).empty()) {
        return HttpResponse::error(400, "body needs non-empty 'name' and 'hint'");
      }
      if (!s.recording()) return HttpResponse::error(409, "no recording in progress");
      try {
        const Policy p = s.save_recording(name.get<std::string>(), hint.get<std::string>());
        return HttpResponse::json(201, {{"name", p.name},
                                        {"file", p.source_path},
                                        {"learned", p.learned},
                                        {"text", serialize_policy(p)}});
      } catch (const std::exception& e) {
        return HttpResponse::error(409, e.what());
      }
    }
    return HttpResponse::error(404, "not found");
  }
  if (area == "world") return route_world(s, req, t);
  if (area == "stop" && seg.size() == 2) {
    if (req.method != "POST") return HttpResponse::error(405, "method not allowed");
    s.stop();
    return HttpResponse::json(200, s.state_json());
  }
  return HttpResponse::error(404, "not found");
}

// ---- transport ----

namespace net = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = net::ip::tcp;

struct Gateway::Impl {
  Session& session;
  GatewayOptions options;
  net::io_context ioc{1};
  tcp::acceptor acceptor{ioc};
  std::thread thread;
  int bound_port = 0;
  bool running = false;

  std::mutex subs_mutex;
  std::set<std::uint64_t> subscriptions;

  Impl(Session& s, GatewayOptions o) : session(s), options(std::move(o)) {}

  void accept();
  void forget(std::uint64_t id) {
    std::lock_guard lock(subs_mutex);
    if (subscriptions.erase(id) != 0) session.events().unsubscribe(id);
  }
};

namespace {

class WsConnection : public std::enable_shared_from_this<WsConnection> {
 public:
  WsConnection(Gateway::Impl& gw, tcp::socket socket) : gw_(gw), ws_(std::move(socket)) {}

  void start(http::request<http::string_body> req) {
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.async_accept(req, [self = shared_from_this()](beast::error_code ec) {
      if (!ec) self->on_accept();
    });
  }

 private:
  void on_accept() {
    std::weak_ptr<WsConnection> weak = shared_from_this();
    net::io_context& ioc = gw_.ioc;
    std::vector<Event> replay;
    {
      std::lock_guard lock(gw_.subs_mutex);
      auto [id, events] = gw_.session.events().subscribe([weak, &ioc](const Event& e) {
        net::post(ioc, [weak, text = e.to_json().dump()] {
          if (auto self = weak.lock()) self->send(text);
        });
      });
      sub_id_ = id;
      gw_.subscriptions.insert(id);
      replay = std::move(events);
    }
    for (const auto& e : replay) send(e.to_json().dump());
    read();
  }

  void read() {
    ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) {
        self->close();
        return;
      }
      self->buffer_.consume(self->buffer_.size());
      self->read();
    });
  }

  void send(std::string text) {
    if (closed_) return;
    queue_.push_back(std::move(text));
    if (queue_.size() == 1) write();
  }

  void write() {
    ws_.text(true);
    ws_.async_write(net::buffer(queue_.front()), [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) {
        self->close();
        return;
      }
      self->queue_.pop_front();
      if (!self->queue_.empty()) self->write();
    });
  }

  void close() {
    if (closed_) return;
    closed_ = true;
    gw_.forget(sub_id_);
  }

  Gateway::Impl& gw_;
  websocket::stream<beast::tcp_stream> ws_;
  beast::flat_buffer buffer_;
  std::deque<std::string> queue_;
  std::uint64_t sub_id_ = 0;
  bool closed_ = false;
};

class HttpConnection : public std::enable_shared_from_this<HttpConnection> {
 public:
  HttpConnection(Gateway::Impl& gw, tcp::socket socket) : gw_(gw), stream_(std::move(socket)) {}

  void start() { read(); }

 private:
  void read() {
    req_ = {};
    stream_.expires_after(std::chrono::seconds(60));
    http::async_read(stream_, buffer_, req_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (!ec) self->on_read();
    });
  }

  void on_read() {
    const std::string target(req_.target());
    if (websocket::is_upgrade(req_)) {
      HttpRequest probe{"GET", target, "", std::string(req_[http::field::authorization])};
      if (target.substr(0, target.find('?')) == "/ws" && authorized(probe, gw_.options.token)) {
        stream_.expires_never();
        std::make_shared<WsConnection>(gw_, stream_.release_socket())->start(std::move(req_));
        return;
      }
      respond(HttpResponse::error(target.rfind("/ws", 0) == 0 ? 401 : 404, "websocket refused"));
      return;
    }
    HttpRequest request{std::string(req_.method_string()), target, req_.body(),
                        std::string(req_[http::field::authorization])};
    HttpResponse r;
    try {
      r = route_request(gw_.session, request, gw_.options.token);
    } catch (const std::exception& e) {
      r = HttpResponse::error(500, e.what());
    }
    respond(r);
  }

  void respond(const HttpResponse& r) {
    auto res = std::make_shared<http::response<http::string_body>>(static_cast<http::status>(r.status),
                                                                   req_.version());
    res->set(http::field::server, "lmpvc");
    res->set(http::field::content_type, r.content_type);
    res->set(http::field::access_control_allow_origin, "*");
    res->set(http::field::access_control_allow_headers, "Authorization, Content-Type");
    res->set(http::field::access_control_allow_methods, "GET, POST, PUT, DELETE, OPTIONS");
    res->keep_alive(req_.keep_alive());
    res->body() = r.body;
    res->prepare_payload();
    http::async_write(stream_, *res, [self = shared_from_this(), res](beast::error_code ec, std::size_t) {
      if (ec) return;
      if (res->keep_alive()) {
        self->read();
      } else {
        beast::error_code ignored;
        self->stream_.socket().shutdown(tcp::socket::shutdown_send, ignored);
      }
    });
  }

  Gateway::Impl& gw_;
  beast::tcp_stream stream_;
  beast::flat_buffer buffer_;
  http::request<http::string_body> req_;
};

}  // namespace

void Gateway::Impl::accept() {
  acceptor.async_accept(net::make_strand(ioc), [this](beast::error_code ec, tcp::socket socket) {
    if (ec) return;
    std::make_shared<HttpConnection>(*this, std::move(socket))->start();
    accept();
  });
}

Gateway::Gateway(Session& session, GatewayOptions options)
    : impl_(std::make_unique<Impl>(session, std::move(options))) {}

Gateway::~Gateway() { stop(); }

void Gateway::start() {
  Impl& g = *impl_;
  if (g.running) return;
  try {
    const tcp::endpoint ep(net::ip::make_address(g.options.host), static_cast<unsigned short>(g.options.port));
    g.acceptor.open(ep.protocol());
    g.acceptor.set_option(net::socket_base::reuse_address(true));
    g.acceptor.bind(ep);
    g.acceptor.listen();
    g.bound_port = g.acceptor.local_endpoint().port();
  } catch (const boost::system::system_error& e) {
    throw std::runtime_error("gateway cannot listen on " + g.options.host + ":" +
                             std::to_string(g.options.port) + ": " + e.what());
  }
  g.accept();
  g.running = true;
  g.thread = std::thread([&g] { g.ioc.run(); });
}

void Gateway::stop() {
  Impl& g = *impl_;
  if (!g.running) return;
  {
    std::lock_guard lock(g.subs_mutex);
    for (auto id : g.subscriptions) g.session.events().unsubscribe(id);
    g.subscriptions.clear();
  }
  net::post(g.ioc, [&g] {
    beast::error_code ignored;
    g.acceptor.close(ignored);
  });
  g.ioc.stop();
  if (g.thread.joinable()) g.thread.join();
  g.running = false;
}

int Gateway::port() const { return impl_->bound_port; }

}  // namespace lmpvc
