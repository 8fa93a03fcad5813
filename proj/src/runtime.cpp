#include "lmpvc/runtime.hpp"

#include <filesystem>

#include "lmpvc/text.hpp"
#include "lmpvc/world_io.hpp"

namespace lmpvc {

Runtime open_runtime(SessionConfig config, const std::string& stage_dir) {
  Runtime rt;
  if (config.world_path.empty()) throw std::invalid_argument("config has no world file");
  if (config.registry_path.empty()) throw std::invalid_argument("config has no policy registry");
  rt.world = std::make_shared<World>(load_world(config.world_path), config.motion);
  std::string registry = config.registry_path;
  std::string policies_dir = config.policies_dir;
  if (!stage_dir.empty()) {
    registry = stage_registry(registry, stage_dir);
    policies_dir = stage_dir;
  }
  rt.bank = std::make_shared<PolicyBank>(load_registry(registry), policies_dir);
  rt.preamble = config.preamble_path.empty() ? "" : read_text_file(config.preamble_path);
  rt.client = make_client(config);
  rt.events = std::make_shared<EventBus>(config.gateway.replay);
  rt.config = config;
  rt.session = std::make_unique<Session>(config, rt.world, rt.bank, rt.client, rt.preamble, rt.events);
  return rt;
}

}  // namespace lmpvc
