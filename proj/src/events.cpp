#include "lmpvc/events.hpp"

#include <chrono>

namespace lmpvc {

std::string_view to_string(EventType t) {
  switch (t) {
    case EventType::transcript: return "transcript";
    case EventType::keyword: return "keyword";
    case EventType::codegen_started: return "codegen_started";
    case EventType::codegen_result: return "codegen_result";
    case EventType::awaiting_approval: return "awaiting_approval";
    case EventType::execution_started: return "execution_started";
    case EventType::say: return "say";
    case EventType::pose: return "pose";
    case EventType::execution_finished: return "execution_finished";
    case EventType::recording_state: return "recording_state";
    case EventType::policy_saved: return "policy_saved";
    case EventType::error: return "error";
  }
  return "unknown";
}

nlohmann::json Event::to_json() const {
  return {{"seq", seq}, {"ts", ts}, {"type", std::string(to_string(type))}, {"payload", payload}};
}

EventBus::EventBus(std::size_t replay_capacity) : capacity_(replay_capacity) {}

Event EventBus::publish(EventType type, nlohmann::json payload) {
  std::lock_guard lock(mutex_);
  Event e;
  e.seq = next_seq_++;
  e.ts = std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::system_clock::now().time_since_epoch())
             .count();
  e.type = type;
  e.payload = std::move(payload);
  if (capacity_ > 0) {
    buffer_.push_back(e);
    while (buffer_.size() > capacity_) buffer_.pop_front();
  }
  for (const auto& [id, fn] : subscribers_) fn(e);
  return e;
}

std::pair<std::uint64_t, std::vector<Event>> EventBus::subscribe(Subscriber fn) {
  std::lock_guard lock(mutex_);
  const std::uint64_t id = next_subscriber_++;
  subscribers_[id] = std::move(fn);
  return {id, std::vector<Event>(buffer_.begin(), buffer_.end())};
}

void EventBus::unsubscribe(std::uint64_t id) {
  std::lock_guard lock(mutex_);
  subscribers_.erase(id);
}

std::vector<Event> EventBus::recent() const {
  std::lock_guard lock(mutex_);
  return {buffer_.begin(), buffer_.end()};
}

std::uint64_t EventBus::last_seq() const {
  std::lock_guard lock(mutex_);
  return next_seq_ - 1;
}

}  // namespace lmpvc
