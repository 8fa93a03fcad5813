#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <mutex>
#include <string>
#include <vector>

#include <json.hpp>

namespace lmpvc {

enum class EventType {
  transcript,
  keyword,
  codegen_started,
  codegen_result,
  awaiting_approval,
  execution_started,
  say,
  pose,
  execution_finished,
  recording_state,
  policy_saved,
  error,
};

std::string_view to_string(EventType t);

struct Event {
  std::uint64_t seq = 0;
  std::int64_t ts = 0;  // unix milliseconds
  EventType type = EventType::error;
  nlohmann::json payload;

  /// {"seq", "ts", "type", "payload"}
  nlohmann::json to_json() const;
};

/// Ordered fan-out of session events with a bounded replay buffer.
/// Subscribers run under the bus lock, in seq order, and must not block or
/// publish.
class EventBus {
 public:
  using Subscriber = std::function<void(const Event&)>;

  explicit EventBus(std::size_t replay_capacity = 100);

  Event publish(EventType type, nlohmann::json payload = nlohmann::json::object());
  /// Registers `fn` and returns the replay buffer atomically, so a subscriber
  /// sees every event exactly once across replay and live delivery.
  std::pair<std::uint64_t, std::vector<Event>> subscribe(Subscriber fn);
  void unsubscribe(std::uint64_t id);

  std::vector<Event> recent() const;
  std::uint64_t last_seq() const;

 private:
  mutable std::mutex mutex_;
  std::size_t capacity_;
  std::deque<Event> buffer_;
  std::uint64_t next_seq_ = 1;
  std::uint64_t next_subscriber_ = 1;
  std::map<std::uint64_t, Subscriber> subscribers_;
};

}  // namespace lmpvc
