#include "lmpvc/robot_world.hpp"

#include <chrono>
#include <cmath>
#include <limits>

namespace lmpvc {

const std::vector<std::string>& controller_api_names() {
  static const std::vector<std::string> names{"get_pose", "add_waypoint", "go",        "stop",
                                              "find",     "say",          "open_hand", "close_hand"};
  return names;
}

World::World(WorldModel model, MotionSettings motion)
    : model_(std::move(model)), motion_(motion) {}

Pose World::get_pose() {
  std::lock_guard lock(mutex_);
  return model_.ee_pose;
}

void World::add_waypoint(const Pose& p) {
  if (!std::isfinite(p.position.x) || !std::isfinite(p.position.y) ||
      !std::isfinite(p.position.z)) {
    throw ControllerError("waypoint position is not finite");
  }
  if (!p.orientation.is_unit(1e-6)) {
    throw ControllerError("waypoint orientation is not a unit quaternion");
  }
  std::lock_guard lock(mutex_);
  if (!model_.workspace.contains(p.position)) {
    throw ControllerError("waypoint outside workspace");
  }
  Pose q = p;
  if (!q.orientation.is_unit(1e-12)) {
    q.orientation = q.orientation.normalized();
  }
  queue_.push_back(q);
}

void World::move_to_locked(const Pose& p) {
  model_.ee_pose = p;
  if (model_.held_object) {
    auto it = model_.objects.find(*model_.held_object);
    if (it != model_.objects.end()) {
      it->second.pose.position = p.position + model_.held_offset;
    }
  }
}

void World::notify_pose(const Pose& p) {
  PoseObserver obs;
  {
    std::lock_guard lock(mutex_);
    obs = pose_observer_;
  }
  if (obs) obs(p);
}

MotionOutcome World::go() {
  std::unique_lock lock(mutex_);
  if (queue_.empty()) {
    throw ControllerError("go() called with no queued waypoints");
  }
  std::vector<Pose> path;
  path.swap(queue_);
  const std::uint64_t epoch = stop_epoch_;
  const MotionSettings motion = motion_;

  if (motion.mode == MotionMode::instant) {
    std::vector<Pose> visited;
    for (const Pose& wp : path) {
      move_to_locked(wp);
      visited.push_back(wp);
    }
    lock.unlock();
    for (const Pose& p : visited) notify_pose(p);
    return MotionOutcome::completed;
  }

  const auto tick = std::chrono::duration<double>(1.0 / motion.tick_hz);
  for (const Pose& target : path) {
    const Pose from = model_.ee_pose;
    const double distance = (target.position - from.position).norm();
    const double duration = motion.speed > 0.0 ? distance / motion.speed : 0.0;
    const int steps = std::max(1, static_cast<int>(std::ceil(duration * motion.tick_hz)));
    for (int k = 1; k <= steps; ++k) {
      const auto wait = std::chrono::duration_cast<std::chrono::nanoseconds>(tick * motion.time_scale);
      if (wait.count() > 0) {
        stop_cv_.wait_for(lock, wait, [&] { return stop_epoch_ != epoch; });
      }
      if (stop_epoch_ != epoch) {
        return MotionOutcome::interrupted;
      }
      const Pose p = interpolate(from, target, static_cast<double>(k) / steps);
      move_to_locked(p);
      lock.unlock();
      notify_pose(p);
      lock.lock();
      if (stop_epoch_ != epoch) {
        return MotionOutcome::interrupted;
      }
    }
  }
  return MotionOutcome::completed;
}

void World::stop() {
  StopHook hook;
  {
    std::lock_guard lock(mutex_);
    queue_.clear();
    ++stop_epoch_;
    hook = stop_hook_;
  }
  stop_cv_.notify_all();
  if (hook) hook();
}

FindResult World::find(std::string_view name) {
  std::lock_guard lock(mutex_);
  auto it = model_.objects.find(std::string(name));
  if (it == model_.objects.end()) {
    return FindResult{Pose{}, false};
  }
  return FindResult{it->second.pose, true};
}

void World::say(std::string_view text) {
  SayObserver obs;
  {
    std::lock_guard lock(mutex_);
    obs = say_observer_;
  }
  if (obs) obs(std::string(text));
}

GripperEvent World::open_hand() {
  std::lock_guard lock(mutex_);
  GripperEvent ev{GripperEvent::Action::open, model_.held_object};
  model_.gripper = GripperState::open;
  model_.held_object.reset();
  model_.held_offset = {};
  return ev;
}

GripperEvent World::close_hand() {
  std::lock_guard lock(mutex_);
  GripperEvent ev{GripperEvent::Action::close, std::nullopt};
  if (model_.gripper == GripperState::closed) {
    ev.object = model_.held_object;
    return ev;
  }
  model_.gripper = GripperState::closed;
  const std::string* nearest = nullptr;
  double best = std::numeric_limits<double>::infinity();
  for (const auto& [name, obj] : model_.objects) {
    if (obj.kind != ObjectKind::object) continue;
    const double d = (obj.pose.position - model_.ee_pose.position).norm();
    if (d <= model_.grasp_radius && d < best) {
      best = d;
      nearest = &name;
    }
  }
  if (nearest != nullptr) {
    model_.held_object = *nearest;
    model_.held_offset = model_.objects.at(*nearest).pose.position - model_.ee_pose.position;
    ev.object = *nearest;
  }
  return ev;
}

WorldModel World::snapshot() const {
  std::lock_guard lock(mutex_);
  return model_;
}

void World::restore(const WorldModel& model) {
  std::lock_guard lock(mutex_);
  model_ = model;
  queue_.clear();
}

std::size_t World::queued_waypoints() const {
  std::lock_guard lock(mutex_);
  return queue_.size();
}

void World::clear_queue() {
  std::lock_guard lock(mutex_);
  queue_.clear();
}

MotionSettings World::motion() const {
  std::lock_guard lock(mutex_);
  return motion_;
}

void World::set_motion(const MotionSettings& motion) {
  std::lock_guard lock(mutex_);
  motion_ = motion;
}

void World::place_object(const std::string& name, const Pose& pose, ObjectKind kind) {
  if (!pose.orientation.is_unit()) {
    throw ControllerError("object orientation is not a unit quaternion");
  }
  std::lock_guard lock(mutex_);
  model_.objects[name] = WorldObject{pose, kind};
}

bool World::remove_object(const std::string& name) {
  std::lock_guard lock(mutex_);
  if (model_.held_object == name) {
    model_.held_object.reset();
    model_.held_offset = {};
  }
  return model_.objects.erase(name) > 0;
}

void World::set_pose_observer(PoseObserver obs) {
  std::lock_guard lock(mutex_);
  pose_observer_ = std::move(obs);
}

void World::set_say_observer(SayObserver obs) {
  std::lock_guard lock(mutex_);
  say_observer_ = std::move(obs);
}

void World::set_stop_hook(StopHook hook) {
  std::lock_guard lock(mutex_);
  stop_hook_ = std::move(hook);
}

}  // namespace lmpvc
