#pragma once

#include <string>

#include <json.hpp>

#include "lmpvc/robot_world.hpp"

namespace lmpvc {

// World file schema:
// {
//   "start_pose": {"position": [x, y, z], "orientation": [w, x, y, z]},
//   "workspace":  {"min": [x, y, z], "max": [x, y, z]},          (optional)
//   "grasp_radius": 0.05,                                         (optional)
//   "objects": [{"name": "...", "pose": {...}, "kind": "object" | "location"}]
// }
// Snapshots add "gripper", "held_object" and "held_offset"; "ee_pose" replaces
// "start_pose".

nlohmann::json pose_to_json(const Pose& p);
Pose pose_from_json(const nlohmann::json& j);

nlohmann::json world_to_json(const WorldModel& w);
WorldModel world_from_json(const nlohmann::json& j);

/// Reads and validates a world file. Throws WorldFileError.
WorldModel load_world(const std::string& path);

}  // namespace lmpvc
