#pragma once

#include <memory>
#include <string>

#include <json.hpp>

#include "lmpvc/core_loop.hpp"

namespace lmpvc {

struct HttpRequest {
  std::string method;  // upper case
  std::string target;  // path plus optional query
  std::string body;
  std::string authorization;  // raw Authorization header
};

struct HttpResponse {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;

  static HttpResponse json(int status, const nlohmann::json& j);
  static HttpResponse error(int status, const std::string& message);
};

/// REST routing, independent of the transport. Schemas are in docs/gateway.md.
/// `token` empty disables authentication.
HttpResponse route_request(Session& session, const HttpRequest& request, const std::string& token = "");

/// True when the request carries `token` as a bearer header or a token= query parameter.
bool authorized(const HttpRequest& request, const std::string& token);

struct GatewayOptions {
  std::string host = "127.0.0.1";
  int port = 8765;  // 0 picks an ephemeral port
  std::string token;
};

/// HTTP + WebSocket server on one port, running on its own thread.
class Gateway {
 public:
  Gateway(Session& session, GatewayOptions options);
  ~Gateway();
  Gateway(const Gateway&) = delete;
  Gateway& operator=(const Gateway&) = delete;

  /// Binds and starts serving. Throws std::runtime_error when the port is unavailable.
  void start();
  void stop();
  /// Bound port, valid after start().
  int port() const;

  struct Impl;

 private:
  std::unique_ptr<Impl> impl_;
};

}  // namespace lmpvc
