#pragma once

#include <chrono>
#include <condition_variable>
#include <deque>
#include <mutex>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace lmpvc {

enum class TranscriptSource { scripted, typed, stt_adapter };
std::string_view to_string(TranscriptSource s);

struct Transcript {
  std::string text;
  TranscriptSource source = TranscriptSource::typed;
  std::chrono::system_clock::time_point captured_at{};
};

struct NoSpeech {};

using ListenResult = std::variant<Transcript, NoSpeech>;

/// The transcription engine failed; distinct from a quiet timeout.
class ListenerError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Listener {
 public:
  virtual ~Listener() = default;
  virtual ListenResult next_transcript(std::chrono::duration<double> timeout) = 0;
};

/// Replays a fixed list of utterances, then reports NoSpeech.
class ScriptedListener : public Listener {
 public:
  explicit ScriptedListener(std::vector<std::string> utterances);
  /// One utterance per line; blank lines and lines starting with '#' are skipped.
  static ScriptedListener from_file(const std::string& path);
  static std::vector<std::string> parse_script(const std::string& text);

  ListenResult next_transcript(std::chrono::duration<double> timeout) override;
  std::size_t remaining() const;

 private:
  std::deque<std::string> queue_;
  mutable std::mutex mutex_;
};

/// Utterances pushed from another thread (console, terminal).
class TypedListener : public Listener {
 public:
  void push(std::string text);
  /// Wakes a waiting consumer with ListenerError.
  void close();
  ListenResult next_transcript(std::chrono::duration<double> timeout) override;

 private:
  std::deque<std::string> queue_;
  bool closed_ = false;
  std::mutex mutex_;
  std::condition_variable cv_;
};

/// Adapter for an external speech-to-text service:
/// GET {base_url}/transcript?timeout=<s> -> 200 {"text": "..."} or 204 when nothing was heard.
class HttpSttListener : public Listener {
 public:
  explicit HttpSttListener(std::string base_url);
  ListenResult next_transcript(std::chrono::duration<double> timeout) override;

 private:
  std::string base_url_;
};

}  // namespace lmpvc
