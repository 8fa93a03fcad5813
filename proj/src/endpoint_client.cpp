#include <httplib.h>

#include "lmpvc/codegen.hpp"

namespace lmpvc {

using nlohmann::json;

namespace {

// Splits "http://host:port/prefix" into the origin and the path prefix.
std::pair<std::string, std::string> split_url(const std::string& url) {
  const auto scheme = url.find("://");
  const auto path = url.find('/', scheme == std::string::npos ? 0 : scheme + 3);
  if (path == std::string::npos) return {url, ""};
  std::string prefix = url.substr(path);
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  return {url.substr(0, path), prefix};
}

}  // namespace

EndpointClient::EndpointClient(EndpointSettings settings) : settings_(std::move(settings)) {}

Completion EndpointClient::complete(const std::string& prompt, const std::vector<std::string>& stop) {
  const auto [origin, prefix] = split_url(settings_.base_url);
  const std::string path =
      prefix.size() >= 3 && prefix.compare(prefix.size() - 3, 3, "/v1") == 0
          ? prefix + "/completions"
          : prefix + "/v1/completions";

  httplib::Client client(origin);
  const auto timeout = std::chrono::duration<double>(settings_.timeout_s);
  client.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
  client.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
  client.set_write_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
  httplib::Headers headers;
  if (!settings_.api_key.empty()) headers.emplace("Authorization", "Bearer " + settings_.api_key);

  const json body{{"model", settings_.model},
                  {"prompt", prompt},
                  {"temperature", settings_.temperature},
                  {"max_tokens", settings_.max_tokens},
                  {"stop", stop}};

  const auto start = std::chrono::steady_clock::now();
  auto res = client.Post(path, headers, body.dump(), "application/json");
  const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (!res) {
    throw CompletionError(CompletionError::Kind::transport,
                          "cannot reach " + settings_.base_url + ": " + httplib::to_string(res.error()));
  }
  if (res->status != 200) {
    throw CompletionError(CompletionError::Kind::endpoint_status,
                          "endpoint answered HTTP " + std::to_string(res->status) + ": " +
                              res->body.substr(0, 200));
  }
  std::string text;
  try {
    const json j = json::parse(res->body);
    text = j.at("choices").at(0).at("text").get<std::string>();
  } catch (const json::exception& e) {
    throw CompletionError(CompletionError::Kind::endpoint_status,
                          std::string("malformed completion response: ") + e.what());
  }
  return Completion{std::move(text), elapsed};
}

}  // namespace lmpvc
