#pragma once

#include <condition_variable>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include <json.hpp>

#include "lmpvc/codegen.hpp"
#include "lmpvc/events.hpp"
#include "lmpvc/executor.hpp"
#include "lmpvc/listener.hpp"
#include "lmpvc/policy_bank.hpp"
#include "lmpvc/robot_world.hpp"

namespace lmpvc {

enum class KeywordAction { stop, record_policy, save_policy, discard_recording, clear_context };
std::string_view to_string(KeywordAction a);
std::optional<KeywordAction> keyword_action_from_string(std::string_view s);

struct KeywordBinding {
  std::string phrase;  // normalized
  KeywordAction action;
};

std::vector<KeywordBinding> default_keywords();
/// Normalizes phrases; throws std::invalid_argument on duplicates or empty phrases.
std::vector<KeywordBinding> make_keywords(const std::vector<KeywordBinding>& raw);

struct CodegenRequest {
  std::string utterance;
};
using DispatchResult = std::variant<KeywordAction, CodegenRequest>;

/// Keyword action iff the normalized transcript equals a binding phrase exactly.
DispatchResult dispatch(const std::string& transcript, const std::vector<KeywordBinding>& bindings);

enum class SessionStatus { idle, listening, generating, awaiting_approval, executing, recording_name };
std::string_view to_string(SessionStatus s);

struct LlmConfig {
  std::string mode = "mock";  // "mock" or "endpoint"
  std::string fixture;
  EndpointSettings endpoint;
  int max_rounds = 3;
};

struct ListenerConfig {
  std::string engine = "typed";  // "scripted", "typed" or "stt"
  std::string script;
  std::string stt_url;
  double timeout_s = 5.0;
};

struct GatewayConfig {
  std::string host = "127.0.0.1";
  int port = 8765;
  std::size_t replay = 100;
};

struct SessionConfig {
  std::vector<KeywordBinding> keywords = default_keywords();
  std::size_t context_capacity = 3;
  std::optional<bool> approval_required;  // unset: on for endpoints, off for the mock
  ListenerConfig listener;
  LlmConfig llm;
  std::string world_path;
  std::string registry_path;
  std::string policies_dir;
  std::string preamble_path;
  ExecutionLimits limits;
  double time_dilation = 1.0;
  MotionSettings motion;
  GatewayConfig gateway;

  bool effective_approval() const { return approval_required.value_or(llm.mode != "mock"); }

  /// Relative paths resolve against `base_dir`.
  static SessionConfig from_json(const nlohmann::json& j, const std::string& base_dir);
  /// Reads a config file, then applies LMPVC_LLM_URL and LMPVC_LLM_API_KEY.
  static SessionConfig load(const std::string& path);
};

std::shared_ptr<CompletionClient> make_client(const SessionConfig& config);

/// Policy bindings plus the functions of context programs (newer context wins).
FunctionBindings command_bindings(const FunctionBindings& policies, const std::vector<LMP>& context);

/// A generated program that passed parsing and the static check.
struct PreparedCommand {
  LMP lmp;
  script::Program program;
  FunctionBindings bindings;
};

struct CommandEnvironment {
  const std::string& preamble;
  PolicyBank& bank;
  CompletionClient& client;
  int max_rounds = 3;
};

/// Generation, parse and static check. On failure the report carries
/// generation_failed, parse_error or static_check_failed; the world is untouched.
std::variant<PreparedCommand, ExecutionReport> prepare_command(const std::string& utterance,
                                                               const std::vector<LMP>& context,
                                                               const CommandEnvironment& env,
                                                               GenerationStats& stats,
                                                               std::optional<LMP>& generated);

nlohmann::json report_to_json(const ExecutionReport& r);
nlohmann::json lmp_to_json(const LMP& lmp);

struct CommandResult {
  enum class Kind { keyword, executed, awaiting_approval, rejected, naming, busy, ignored };
  std::string id;
  std::string utterance;
  Kind kind = Kind::ignored;
  std::optional<KeywordAction> keyword;
  std::optional<LMP> lmp;
  ExecutionReport report;
  GenerationStats generation;
  std::string message;

  nlohmann::json to_json() const;
};
std::string_view to_string(CommandResult::Kind k);

/// One operator session: keyword dispatch or generation, optional approval,
/// execution, context and recording updates. One command at a time.
class Session {
 public:
  Session(SessionConfig config, std::shared_ptr<World> world, std::shared_ptr<PolicyBank> bank,
          std::shared_ptr<CompletionClient> client, std::string preamble,
          std::shared_ptr<EventBus> events = nullptr);
  ~Session();
  Session(const Session&) = delete;
  Session& operator=(const Session&) = delete;

  /// Runs a transcript to completion on the calling thread.
  CommandResult handle(const Transcript& transcript);
  CommandResult handle_text(const std::string& text, TranscriptSource source = TranscriptSource::typed);

  enum class SubmitError { empty, busy };
  /// Queues a transcript on the worker thread and returns its id. "stop" is
  /// honored at once even while busy.
  std::variant<std::string, SubmitError> submit(const std::string& text,
                                                TranscriptSource source = TranscriptSource::typed);

  enum class Decision { ok, unknown_id, not_pending };
  /// Approves or rejects the pending command synchronously.
  Decision decide(const std::string& id, bool approve, CommandResult* out = nullptr);
  /// Same, with the execution on the worker thread.
  Decision decide_async(const std::string& id, bool approve);

  bool wait_idle(std::chrono::duration<double> timeout);
  std::optional<CommandResult> result(const std::string& id) const;

  void stop();
  void start_recording();
  /// Finalizes, persists and registers the recording. Throws PolicyError.
  Policy save_recording(const std::string& name, const std::string& hint);
  void discard_recording();
  void clear_context();

  SessionStatus status() const;
  bool busy() const;
  std::vector<LMP> context() const;
  std::optional<RecordingSession> recording() const;
  bool approval_required() const;
  void set_approval_required(bool on);
  nlohmann::json state_json() const;

  World& world() { return *world_; }
  PolicyBank& bank() { return *bank_; }
  EventBus& events() { return *events_; }
  const SessionConfig& config() const { return config_; }

 private:
  struct Pending {
    std::string id;
    PreparedCommand command;
    GenerationStats stats;
  };
  enum class NamingStage { none, name, hint };

  std::string next_id();
  bool claim();
  void release();
  void set_status(SessionStatus s);
  void say(const std::string& text);
  CommandResult process(const std::string& id, const Transcript& t);
  CommandResult run_keyword(const std::string& id, const std::string& text, KeywordAction a);
  CommandResult run_naming(const std::string& id, const std::string& text);
  CommandResult execute_prepared(const std::string& id, PreparedCommand cmd, GenerationStats stats);
  void store(const CommandResult& r);
  void launch(std::function<void()> work);
  void emit_recording_state();

  SessionConfig config_;
  std::shared_ptr<World> world_;
  std::shared_ptr<PolicyBank> bank_;
  std::shared_ptr<CompletionClient> client_;
  std::string preamble_;
  std::shared_ptr<EventBus> events_;
  AbortSignal abort_;

  mutable std::mutex mutex_;
  std::condition_variable idle_cv_;
  bool busy_ = false;
  SessionStatus status_ = SessionStatus::idle;
  bool approval_required_ = false;
  std::vector<LMP> context_;
  std::optional<RecordingSession> recording_;
  NamingStage naming_ = NamingStage::none;
  std::string pending_name_;
  std::optional<Pending> pending_;
  std::map<std::string, CommandResult> results_;
  std::uint64_t counter_ = 0;

  std::mutex worker_mutex_;
  std::thread worker_;
};

/// Operator edits interleaved in session scripts:
///   @place <name> <x> <y> <z> [location]
///   @remove <name>
/// Returns false when `line` is not an operator action; throws std::invalid_argument
/// when it is one but malformed.
bool apply_operator_action(World& world, const std::string& line);

struct ListenOptions {
  double timeout_s = 5.0;
  bool auto_approve = false;
  std::function<void(const CommandResult&)> on_result;
};

/// Reads transcripts until the listener reports NoSpeech, feeding each to the
/// session; "@" lines are applied to the world instead.
std::vector<CommandResult> run_listener(Session& session, Listener& listener,
                                        const ListenOptions& options = {});

}  // namespace lmpvc
