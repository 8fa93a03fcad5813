#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "lmpvc/robot_world.hpp"
#include "lmpvc/script/ast.hpp"

namespace lmpvc {

struct ExecutionLimits {
  double wall_deadline_s = 10.0;
  std::uint64_t max_steps = 100000;
  std::uint64_t max_loop_iterations = 10000;
  int max_call_depth = 64;
};

enum class ExecutionStatus {
  ok,
  generation_failed,
  parse_error,
  static_check_failed,
  runtime_error,
  timeout,
  aborted,
};

std::string_view to_string(ExecutionStatus s);

struct ExecutionReport {
  ExecutionStatus status = ExecutionStatus::ok;
  std::vector<std::string> say_outputs;
  std::vector<Pose> motion_log;  // every waypoint sent through go(), in order
  std::vector<GripperEvent> gripper_events;
  std::string error_detail;  // empty iff status == ok
  std::vector<std::string> undefined_names;
  int error_line = 0;
  std::uint64_t steps = 0;
  double elapsed_s = 0.0;
};

/// Cross-thread abort flag with an interruptible wait.
class AbortSignal {
 public:
  void raise();
  void reset();
  bool raised() const { return flag_.load(std::memory_order_acquire); }
  /// Waits up to `d`; returns false if the signal was raised meanwhile.
  bool wait_for(std::chrono::nanoseconds d);

 private:
  std::atomic<bool> flag_{false};
  std::mutex mutex_;
  std::condition_variable cv_;
};

/// A function made callable from scripts without being part of the program
/// (policy bodies, policy aliases, functions from context programs).
struct BoundFunction {
  std::shared_ptr<const script::FunctionDef> def;
  std::string origin;
};
using FunctionBindings = std::map<std::string, BoundFunction>;

/// Pre-bound module members scripts may use.
const std::map<std::string, std::set<std::string>>& whitelisted_modules();
const std::set<std::string>& script_builtins();
/// Attributes readable on pose values.
const std::set<std::string>& pose_attributes();

struct StaticCheckResult {
  std::vector<std::string> undefined;  // first-occurrence order, unique
  std::vector<std::string> problems;   // human-readable, one per finding

  bool ok() const { return undefined.empty() && problems.empty(); }
};

/// Resolves every call target, robot method, module member and variable
/// read against the program, `bindings`, the controller API, the module
/// whitelist and builtins. Bound functions reachable from the program are
/// checked too.
StaticCheckResult static_check(const script::Program& program, const FunctionBindings& bindings);

/// Bare-name call targets that nothing defines: not in the program, not in
/// `known_names`, not a builtin, controller method or module member.
std::vector<std::string> detect_undefined_calls(const script::Program& program,
                                                const std::set<std::string>& known_names);

/// Bare-name call targets in `fn`, in source order, with repeats.
std::vector<std::string> called_functions(const script::FunctionDef& fn);

/// Functions reachable from `entry` through program-local and bound definitions.
std::set<std::string> reachable_functions(const script::Program& program,
                                          const FunctionBindings& bindings,
                                          const std::string& entry);

struct ExecutionOptions {
  double time_dilation = 1.0;  // multiplies real waiting of time.sleep
  AbortSignal* abort = nullptr;
};

/// Interprets `entry(robot)`. The caller is expected to have run
/// static_check; unresolved names still surface as runtime errors.
ExecutionReport execute(const script::Program& program, const std::string& entry,
                        const FunctionBindings& bindings, Controller& robot,
                        const ExecutionLimits& limits, const ExecutionOptions& options = {});

/// parse + static_check + execute, each failure mapped onto its status.
ExecutionReport run_source(std::string_view source, const std::string& entry,
                           const FunctionBindings& bindings, Controller& robot,
                           const ExecutionLimits& limits, const ExecutionOptions& options = {});

/// Python-style float text (repr): 0.05 -> "0.05", 2.0 -> "2.0", 1e-05.
std::string format_float(double v);

}  // namespace lmpvc
