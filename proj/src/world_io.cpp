#include "lmpvc/world_io.hpp"

#include <filesystem>

#include "lmpvc/text.hpp"

namespace lmpvc {

using nlohmann::json;

namespace {

Vec3 vec_from_json(const json& j, const char* what) {
  if (!j.is_array() || j.size() != 3) {
    throw WorldFileError(std::string(what) + " must be an array of 3 numbers");
  }
  return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()};
}

json vec_to_json(const Vec3& v) { return json::array({v.x, v.y, v.z}); }

}  // namespace

json pose_to_json(const Pose& p) {
  return json{{"position", vec_to_json(p.position)},
              {"orientation",
               json::array({p.orientation.w, p.orientation.x, p.orientation.y, p.orientation.z})}};
}

Pose pose_from_json(const json& j) {
  Pose p;
  p.position = vec_from_json(j.at("position"), "position");
  if (j.contains("orientation")) {
    const json& q = j.at("orientation");
    if (!q.is_array() || q.size() != 4) {
      throw WorldFileError("orientation must be an array [w, x, y, z]");
    }
    p.orientation = {q.at(0).get<double>(), q.at(1).get<double>(), q.at(2).get<double>(),
                     q.at(3).get<double>()};
  }
  if (!p.orientation.is_unit()) {
    throw WorldFileError("orientation is not a unit quaternion");
  }
  return p;
}

json world_to_json(const WorldModel& w) {
  json objects = json::array();
  for (const auto& [name, obj] : w.objects) {
    objects.push_back({{"name", name},
                       {"pose", pose_to_json(obj.pose)},
                       {"kind", obj.kind == ObjectKind::location ? "location" : "object"}});
  }
  json j{{"ee_pose", pose_to_json(w.ee_pose)},
         {"workspace", {{"min", vec_to_json(w.workspace.min)}, {"max", vec_to_json(w.workspace.max)}}},
         {"grasp_radius", w.grasp_radius},
         {"gripper", w.gripper == GripperState::closed ? "closed" : "open"},
         {"held_object", w.held_object ? json(*w.held_object) : json(nullptr)},
         {"held_offset", vec_to_json(w.held_offset)},
         {"objects", std::move(objects)}};
  return j;
}

WorldModel world_from_json(const json& j) {
  try {
    WorldModel w;
    if (j.contains("ee_pose")) {
      w.ee_pose = pose_from_json(j.at("ee_pose"));
    } else {
      w.ee_pose = pose_from_json(j.at("start_pose"));
    }
    if (j.contains("workspace")) {
      w.workspace.min = vec_from_json(j.at("workspace").at("min"), "workspace.min");
      w.workspace.max = vec_from_json(j.at("workspace").at("max"), "workspace.max");
    }
    w.grasp_radius = j.value("grasp_radius", 0.05);
    for (const auto& o : j.value("objects", json::array())) {
      const std::string name = o.at("name").get<std::string>();
      const std::string kind = o.value("kind", "object");
      if (kind != "object" && kind != "location") {
        throw WorldFileError("object '" + name + "' has unknown kind '" + kind + "'");
      }
      if (w.objects.count(name) != 0) {
        throw WorldFileError("duplicate object '" + name + "'");
      }
      w.objects[name] =
          WorldObject{pose_from_json(o.at("pose")),
                      kind == "location" ? ObjectKind::location : ObjectKind::object};
    }
    w.gripper = j.value("gripper", "open") == "closed" ? GripperState::closed : GripperState::open;
    if (j.contains("held_object") && !j.at("held_object").is_null()) {
      w.held_object = j.at("held_object").get<std::string>();
      if (w.gripper != GripperState::closed) {
        throw WorldFileError("held_object requires a closed gripper");
      }
    }
    if (j.contains("held_offset")) {
      w.held_offset = vec_from_json(j.at("held_offset"), "held_offset");
    }
    return w;
  } catch (const json::exception& e) {
    throw WorldFileError(std::string("malformed world: ") + e.what());
  }
}

WorldModel load_world(const std::string& path) {
  if (!std::filesystem::exists(path)) {
    throw WorldFileError("world file not found: " + path);
  }
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw WorldFileError("world file " + path + ": " + e.what());
  }
  return world_from_json(j);
}

}  // namespace lmpvc
