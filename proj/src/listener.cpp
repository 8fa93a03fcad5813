#include "lmpvc/listener.hpp"

#include <filesystem>

#include <httplib.h>
#include <json.hpp>

#include "lmpvc/text.hpp"

namespace lmpvc {

std::string_view to_string(TranscriptSource s) {
  switch (s) {
    case TranscriptSource::scripted: return "scripted";
    case TranscriptSource::typed: return "typed";
    case TranscriptSource::stt_adapter: return "stt_adapter";
  }
  return "unknown";
}

namespace {

Transcript make(std::string text, TranscriptSource source) {
  return Transcript{std::move(text), source, std::chrono::system_clock::now()};
}

}  // namespace

ScriptedListener::ScriptedListener(std::vector<std::string> utterances)
    : queue_(utterances.begin(), utterances.end()) {}

std::vector<std::string> ScriptedListener::parse_script(const std::string& text) {
  std::vector<std::string> out;
  for (const auto& line : split_lines(text)) {
    const std::string s = trim(line);
    if (s.empty() || s[0] == '#') continue;
    out.push_back(s);
  }
  return out;
}

ScriptedListener ScriptedListener::from_file(const std::string& path) {
  if (!std::filesystem::exists(path)) throw ListenerError("session script not found: " + path);
  return ScriptedListener(parse_script(read_text_file(path)));
}

ListenResult ScriptedListener::next_transcript(std::chrono::duration<double>) {
  std::lock_guard lock(mutex_);
  if (queue_.empty()) return NoSpeech{};
  std::string text = std::move(queue_.front());
  queue_.pop_front();
  return make(std::move(text), TranscriptSource::scripted);
}

std::size_t ScriptedListener::remaining() const {
  std::lock_guard lock(mutex_);
  return queue_.size();
}

void TypedListener::push(std::string text) {
  {
    std::lock_guard lock(mutex_);
    queue_.push_back(std::move(text));
  }
  cv_.notify_one();
}

void TypedListener::close() {
  {
    std::lock_guard lock(mutex_);
    closed_ = true;
  }
  cv_.notify_all();
}

ListenResult TypedListener::next_transcript(std::chrono::duration<double> timeout) {
  std::unique_lock lock(mutex_);
  const bool ready = cv_.wait_for(lock, timeout, [&] { return !queue_.empty() || closed_; });
  if (!queue_.empty()) {
    std::string text = std::move(queue_.front());
    queue_.pop_front();
    return make(std::move(text), TranscriptSource::typed);
  }
  if (ready && closed_) throw ListenerError("typed input closed");
  return NoSpeech{};
}

HttpSttListener::HttpSttListener(std::string base_url) : base_url_(std::move(base_url)) {
  while (!base_url_.empty() && base_url_.back() == '/') base_url_.pop_back();
}

ListenResult HttpSttListener::next_transcript(std::chrono::duration<double> timeout) {
  httplib::Client client(base_url_);
  const auto wait = std::chrono::duration_cast<std::chrono::microseconds>(timeout) +
                    std::chrono::seconds(5);
  client.set_read_timeout(wait);
  client.set_connection_timeout(std::chrono::seconds(5));
  auto res = client.Get("/transcript?timeout=" + std::to_string(timeout.count()));
  if (!res) {
    throw ListenerError("speech-to-text adapter unreachable: " + httplib::to_string(res.error()));
  }
  if (res->status == 204) return NoSpeech{};
  if (res->status != 200) {
    throw ListenerError("speech-to-text adapter answered HTTP " + std::to_string(res->status));
  }
  std::string text;
  try {
    text = trim(nlohmann::json::parse(res->body).at("text").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw ListenerError(std::string("malformed transcript: ") + e.what());
  }
  if (text.empty()) return NoSpeech{};
  return make(std::move(text), TranscriptSource::stt_adapter);
}

}  // namespace lmpvc
