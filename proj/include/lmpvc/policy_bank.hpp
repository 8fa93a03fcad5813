#pragma once

#include <chrono>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "lmpvc/executor.hpp"
#include "lmpvc/lmp.hpp"

namespace lmpvc {

class PolicyParseError : public std::runtime_error {
 public:
  PolicyParseError(int line, const std::string& message)
      : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + message : message),
        line_(line) {}
  int line() const noexcept { return line_; }

 private:
  int line_;
};

class PolicyConflictError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class PolicyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr const char* kLearnedMarker = "# Added by Policy Bank based on user input";

struct Policy {
  std::string name;
  std::vector<std::string> imports;  // module names
  std::string body_source;           // canonical: LF, right-trimmed lines, one trailing newline
  std::string entry_function;
  std::string hint_utterance;
  std::string alias_function;
  bool learned = false;
  std::string source_path;  // not part of the structure

  /// Names of every function defined in body_source, in order.
  std::vector<std::string> body_functions() const;
  /// The block appended to prompts: directive comment, alias definition, end marker.
  std::string hint_block() const;
};

/// Structural equality; source_path is ignored.
bool operator==(const Policy& a, const Policy& b);

/// Parses the policy text format. `name` defaults to the entry function.
Policy parse_policy_file(const std::string& text);
std::string serialize_policy(const Policy& policy);

struct RegistryEntry {
  std::string name;
  std::string file;  // as written in the registry
  bool enabled = true;
};

struct PolicyRegistry {
  std::string path;  // registry file; relative entry paths resolve against its directory
  std::vector<RegistryEntry> entries;
  std::map<std::string, Policy> loaded;
  std::map<std::string, std::string> errors;  // per-entry load failures

  std::string resolve(const RegistryEntry& e) const;
  const RegistryEntry* entry(const std::string& name) const;
};

/// Throws PolicyError if the registry file itself is missing or malformed.
/// Broken policy files are reported in `errors` and skipped.
PolicyRegistry load_registry(const std::string& path);
void save_registry(const PolicyRegistry& registry);

/// Deduplicated import lines, then each enabled policy's hint block.
std::string prompt_extension(const PolicyRegistry& registry);

/// Body and alias functions of every enabled policy. Throws PolicyConflictError.
FunctionBindings execution_bindings(const PolicyRegistry& registry);

struct RecordingSession {
  std::vector<LMP> steps;
  std::chrono::system_clock::time_point started_at{};
};

RecordingSession begin_recording();
void record_step(RecordingSession& session, const LMP& lmp);

/// Builds the learned policy: each step's code under a provenance comment,
/// then a wrapper named sanitize_name(name) calling the steps in order.
/// `taken` holds names already bound by other policies.
Policy finalize_recording(const RecordingSession& session, const std::string& name,
                          const std::string& hint, const std::set<std::string>& taken);

/// "1st", "2nd", "3rd", "4th", ..., "11th", "21st".
std::string ordinal(int n);

/// Thread-safe owner of a registry and the directory learned policies go to.
class PolicyBank {
 public:
  PolicyBank(PolicyRegistry registry, std::string policies_dir);
  static PolicyBank open(const std::string& registry_path, const std::string& policies_dir = "");

  PolicyRegistry snapshot() const;
  std::string prompt_extension() const;
  FunctionBindings bindings() const;
  std::set<std::string> bound_names() const;
  std::optional<Policy> get(const std::string& name) const;

  /// Persists `policy` as <policies_dir>/<name>.policy and registers it enabled.
  /// Throws PolicyError when the name or any of its functions is already bound.
  void add(const Policy& policy);
  /// Replaces or creates a policy from text; returns true when it was created.
  bool put(const std::string& name, const std::string& text);
  bool remove(const std::string& name);
  bool set_enabled(const std::string& name, bool enabled);

  const std::string& policies_dir() const { return policies_dir_; }

 private:
  void check_conflicts_locked(const Policy& p, const std::string& replacing) const;
  void write_policy_locked(const std::string& name, const Policy& p);

  mutable std::mutex mutex_;
  PolicyRegistry registry_;
  std::string policies_dir_;
};

/// Copies a registry and its policy files into `dir` so learned policies do
/// not touch the originals. Returns the new registry path.
std::string stage_registry(const std::string& registry_path, const std::string& dir);

}  // namespace lmpvc
