#pragma once

#include <condition_variable>
#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "lmpvc/pose.hpp"

namespace lmpvc {

class ControllerError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class WorldFileError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class GripperState { open, closed };
enum class ObjectKind { object, location };

struct WorldObject {
  Pose pose;
  ObjectKind kind = ObjectKind::object;

  friend bool operator==(const WorldObject&, const WorldObject&) = default;
};

/// Axis-aligned box the end effector may be commanded into.
struct Workspace {
  Vec3 min{-1.0, -1.0, -1.0};
  Vec3 max{1.0, 1.0, 1.0};

  bool contains(const Vec3& p) const {
    return p.x >= min.x && p.x <= max.x && p.y >= min.y && p.y <= max.y && p.z >= min.z &&
           p.z <= max.z;
  }
  friend bool operator==(const Workspace&, const Workspace&) = default;
};

/// Complete simulated world state. Value type; snapshots are plain copies.
struct WorldModel {
  std::map<std::string, WorldObject> objects;
  Pose ee_pose;
  GripperState gripper = GripperState::open;
  std::optional<std::string> held_object;  // set only while gripper is closed
  Vec3 held_offset;                        // object position minus ee position
  Workspace workspace;
  double grasp_radius = 0.05;

  friend bool operator==(const WorldModel&, const WorldModel&) = default;
};

enum class MotionMode { instant, timed };

struct MotionSettings {
  MotionMode mode = MotionMode::instant;
  double speed = 0.1;       // m/s, timed mode
  double tick_hz = 20.0;    // pose events per second, timed mode
  double time_scale = 1.0;  // multiplies real waiting in timed mode; 0 = no waiting
};

struct FindResult {
  Pose pose;
  bool found = false;
};

enum class MotionOutcome { completed, interrupted };

struct GripperEvent {
  enum class Action { open, close };
  Action action = Action::open;
  std::optional<std::string> object;  // grasped (close) or released (open)

  friend bool operator==(const GripperEvent&, const GripperEvent&) = default;
};

/// High-level controller surface available to command scripts.
class Controller {
 public:
  virtual ~Controller() = default;

  virtual Pose get_pose() = 0;
  virtual void add_waypoint(const Pose& p) = 0;
  virtual MotionOutcome go() = 0;
  virtual void stop() = 0;
  virtual FindResult find(std::string_view name) = 0;
  virtual void say(std::string_view text) = 0;
  virtual GripperEvent open_hand() = 0;
  virtual GripperEvent close_hand() = 0;
};

/// Method names of Controller as seen by scripts.
const std::vector<std::string>& controller_api_names();

/// Thread-safe simulated arm. Mutations normally come from the executor
/// thread; stop() and snapshot() may be called from any thread.
class World : public Controller {
 public:
  using PoseObserver = std::function<void(const Pose&)>;
  using SayObserver = std::function<void(const std::string&)>;
  using StopHook = std::function<void()>;

  explicit World(WorldModel model = {}, MotionSettings motion = {});

  Pose get_pose() override;
  void add_waypoint(const Pose& p) override;
  MotionOutcome go() override;
  void stop() override;
  FindResult find(std::string_view name) override;
  void say(std::string_view text) override;
  GripperEvent open_hand() override;
  GripperEvent close_hand() override;

  WorldModel snapshot() const;
  void restore(const WorldModel& model);
  std::size_t queued_waypoints() const;
  void clear_queue();

  MotionSettings motion() const;
  void set_motion(const MotionSettings& motion);

  // Operator-side edits (a human placing or removing parts).
  void place_object(const std::string& name, const Pose& pose, ObjectKind kind = ObjectKind::object);
  bool remove_object(const std::string& name);

  void set_pose_observer(PoseObserver obs);
  void set_say_observer(SayObserver obs);
  void set_stop_hook(StopHook hook);

 private:
  void move_to_locked(const Pose& p);
  void notify_pose(const Pose& p);

  mutable std::mutex mutex_;
  std::condition_variable stop_cv_;
  WorldModel model_;
  MotionSettings motion_;
  std::vector<Pose> queue_;
  std::uint64_t stop_epoch_ = 0;
  PoseObserver pose_observer_;
  SayObserver say_observer_;
  StopHook stop_hook_;
};

}  // namespace lmpvc
