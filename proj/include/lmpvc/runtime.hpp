#pragma once

#include <memory>
#include <string>

#include "lmpvc/core_loop.hpp"

namespace lmpvc {

/// Everything a session needs, wired from one config.
struct Runtime {
  SessionConfig config;
  std::shared_ptr<World> world;
  std::shared_ptr<PolicyBank> bank;
  std::shared_ptr<CompletionClient> client;
  std::string preamble;
  std::shared_ptr<EventBus> events;
  std::unique_ptr<Session> session;
};

/// Loads world, registry and preamble. With `stage_dir` set the registry is
/// copied there first and learned policies are written there too.
Runtime open_runtime(SessionConfig config, const std::string& stage_dir = "");

}  // namespace lmpvc
