#include "lmpvc/core_loop.hpp"

#include <cstdlib>
#include <filesystem>
#include <sstream>

#include "lmpvc/script/parser.hpp"
#include "lmpvc/text.hpp"
#include "lmpvc/world_io.hpp"

namespace lmpvc {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(KeywordAction a) {
  switch (a) {
    case KeywordAction::stop: return "stop";
    case KeywordAction::record_policy: return "record_policy";
    case KeywordAction::save_policy: return "save_policy";
    case KeywordAction::discard_recording: return "discard_recording";
    case KeywordAction::clear_context: return "clear_context";
  }
  return "unknown";
}

std::optional<KeywordAction> keyword_action_from_string(std::string_view s) {
  for (auto a : {KeywordAction::stop, KeywordAction::record_policy, KeywordAction::save_policy,
                 KeywordAction::discard_recording, KeywordAction::clear_context}) {
    if (to_string(a) == s) return a;
  }
  return std::nullopt;
}

std::vector<KeywordBinding> default_keywords() {
  return {{"stop", KeywordAction::stop},
          {"record policy", KeywordAction::record_policy},
          {"save policy", KeywordAction::save_policy},
          {"discard recording", KeywordAction::discard_recording},
          {"clear context", KeywordAction::clear_context}};
}

std::vector<KeywordBinding> make_keywords(const std::vector<KeywordBinding>& raw) {
  std::vector<KeywordBinding> out;
  for (const auto& b : raw) {
    const std::string phrase = normalize_phrase(b.phrase);
    if (phrase.empty()) throw std::invalid_argument("keyword phrase '" + b.phrase + "' is empty");
    for (const auto& existing : out) {
      if (existing.phrase == phrase) {
        throw std::invalid_argument("keyword phrase '" + phrase + "' is bound twice");
      }
    }
    out.push_back({phrase, b.action});
  }
  return out;
}

DispatchResult dispatch(const std::string& transcript, const std::vector<KeywordBinding>& bindings) {
  const std::string normalized = normalize_phrase(transcript);
  for (const auto& b : bindings) {
    if (b.phrase == normalized) return b.action;
  }
  return CodegenRequest{transcript};
}

std::string_view to_string(SessionStatus s) {
  switch (s) {
    case SessionStatus::idle: return "idle";
    case SessionStatus::listening: return "listening";
    case SessionStatus::generating: return "generating";
    case SessionStatus::awaiting_approval: return "awaiting_approval";
    case SessionStatus::executing: return "executing";
    case SessionStatus::recording_name: return "recording_name";
  }
  return "unknown";
}

std::string_view to_string(CommandResult::Kind k) {
  switch (k) {
    case CommandResult::Kind::keyword: return "keyword";
    case CommandResult::Kind::executed: return "executed";
    case CommandResult::Kind::awaiting_approval: return "awaiting_approval";
    case CommandResult::Kind::rejected: return "rejected";
    case CommandResult::Kind::naming: return "naming";
    case CommandResult::Kind::busy: return "busy";
    case CommandResult::Kind::ignored: return "ignored";
  }
  return "unknown";
}

namespace {

std::string resolve_path(const json& j, const char* key, const std::string& base) {
  if (!j.contains(key) || j.at(key).is_null()) return "";
  const fs::path p(j.at(key).get<std::string>());
  if (p.empty() || p.is_absolute()) return p.string();
  return (fs::path(base) / p).lexically_normal().string();
}

json gripper_event_json(const GripperEvent& e) {
  return {{"action", e.action == GripperEvent::Action::open ? "open" : "close"},
          {"object", e.object ? json(*e.object) : json(nullptr)}};
}

}  // namespace

SessionConfig SessionConfig::from_json(const json& j, const std::string& base) {
  SessionConfig c;
  try {
    if (j.contains("keywords")) {
      std::vector<KeywordBinding> raw;
      for (const auto& k : j.at("keywords")) {
        const std::string action = k.at("action").get<std::string>();
        auto a = keyword_action_from_string(action);
        if (!a) throw std::invalid_argument("unknown keyword action '" + action + "'");
        raw.push_back({k.at("phrase").get<std::string>(), *a});
      }
      c.keywords = raw;
    }
    c.keywords = make_keywords(c.keywords);
    c.context_capacity = j.value("context_capacity", c.context_capacity);
    if (j.contains("approval_required") && !j.at("approval_required").is_null()) {
      c.approval_required = j.at("approval_required").get<bool>();
    }
    if (j.contains("listener")) {
      const json& l = j.at("listener");
      c.listener.engine = l.value("engine", c.listener.engine);
      c.listener.script = resolve_path(l, "script", base);
      c.listener.stt_url = l.value("stt_url", "");
      c.listener.timeout_s = l.value("timeout_s", c.listener.timeout_s);
      if (c.listener.engine != "scripted" && c.listener.engine != "typed" &&
          c.listener.engine != "stt") {
        throw std::invalid_argument("unknown listener engine '" + c.listener.engine + "'");
      }
    }
    if (j.contains("llm")) {
      const json& l = j.at("llm");
      c.llm.mode = l.value("mode", c.llm.mode);
      if (c.llm.mode != "mock" && c.llm.mode != "endpoint") {
        throw std::invalid_argument("llm.mode must be \"mock\" or \"endpoint\"");
      }
      c.llm.fixture = resolve_path(l, "fixture", base);
      c.llm.endpoint.base_url = l.value("url", c.llm.endpoint.base_url);
      c.llm.endpoint.model = l.value("model", c.llm.endpoint.model);
      c.llm.endpoint.api_key = l.value("api_key", "");
      c.llm.endpoint.temperature = l.value("temperature", c.llm.endpoint.temperature);
      c.llm.endpoint.max_tokens = l.value("max_tokens", c.llm.endpoint.max_tokens);
      c.llm.endpoint.timeout_s = l.value("timeout_s", c.llm.endpoint.timeout_s);
      c.llm.max_rounds = l.value("max_rounds", c.llm.max_rounds);
      if (c.llm.max_rounds < 1) throw std::invalid_argument("llm.max_rounds must be at least 1");
    }
    c.world_path = resolve_path(j, "world", base);
    c.registry_path = resolve_path(j, "registry", base);
    c.policies_dir = resolve_path(j, "policies_dir", base);
    c.preamble_path = resolve_path(j, "preamble", base);
    if (j.contains("limits")) {
      const json& l = j.at("limits");
      c.limits.wall_deadline_s = l.value("wall_deadline_s", c.limits.wall_deadline_s);
      c.limits.max_steps = l.value("max_steps", c.limits.max_steps);
      c.limits.max_loop_iterations = l.value("max_loop_iterations", c.limits.max_loop_iterations);
      c.limits.max_call_depth = l.value("max_call_depth", c.limits.max_call_depth);
      if (c.limits.wall_deadline_s <= 0 || c.limits.max_steps == 0 ||
          c.limits.max_loop_iterations == 0 || c.limits.max_call_depth <= 0) {
        throw std::invalid_argument("execution limits must be positive");
      }
    }
    c.time_dilation = j.value("time_dilation", c.time_dilation);
    if (j.contains("motion")) {
      const json& m = j.at("motion");
      const std::string mode = m.value("mode", "instant");
      if (mode != "instant" && mode != "timed") {
        throw std::invalid_argument("motion.mode must be \"instant\" or \"timed\"");
      }
      c.motion.mode = mode == "timed" ? MotionMode::timed : MotionMode::instant;
      c.motion.speed = m.value("speed", c.motion.speed);
      c.motion.tick_hz = m.value("tick_hz", c.motion.tick_hz);
      c.motion.time_scale = m.value("time_scale", c.motion.time_scale);
    }
    if (j.contains("gateway")) {
      const json& g = j.at("gateway");
      c.gateway.host = g.value("host", c.gateway.host);
      c.gateway.port = g.value("port", c.gateway.port);
      c.gateway.replay = g.value("replay", c.gateway.replay);
    }
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("malformed config: ") + e.what());
  }
  return c;
}

SessionConfig SessionConfig::load(const std::string& path) {
  if (!fs::exists(path)) throw std::invalid_argument("config file not found: " + path);
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw std::invalid_argument("config " + path + ": " + e.what());
  }
  SessionConfig c = from_json(j, fs::path(path).parent_path().string());
  if (const char* url = std::getenv("LMPVC_LLM_URL"); url != nullptr && *url != '\0') {
    c.llm.endpoint.base_url = url;
  }
  if (const char* key = std::getenv("LMPVC_LLM_API_KEY"); key != nullptr && *key != '\0') {
    c.llm.endpoint.api_key = key;
  }
  return c;
}

std::shared_ptr<CompletionClient> make_client(const SessionConfig& config) {
  if (config.llm.mode == "mock") {
    if (config.llm.fixture.empty()) throw std::invalid_argument("llm.fixture is required for the mock");
    return MockClient::from_file(config.llm.fixture);
  }
  return std::make_shared<EndpointClient>(config.llm.endpoint);
}

FunctionBindings command_bindings(const FunctionBindings& policies, const std::vector<LMP>& context) {
  FunctionBindings out = policies;
  for (const auto& lmp : context) {
    const script::Program p = script::parse_program(lmp.code_text);
    for (const auto& [name, def] : p.functions) out[name] = BoundFunction{def, "context:" + lmp.utterance};
  }
  return out;
}

std::variant<PreparedCommand, ExecutionReport> prepare_command(const std::string& utterance,
                                                               const std::vector<LMP>& context,
                                                               const CommandEnvironment& env,
                                                               GenerationStats& stats,
                                                               std::optional<LMP>& generated) {
  ExecutionReport failure;
  generated.reset();
  stats = {};
  const PolicyRegistry registry = env.bank.snapshot();
  FunctionBindings bindings;
  try {
    bindings = command_bindings(execution_bindings(registry), context);
  } catch (const PolicyConflictError& e) {
    failure.status = ExecutionStatus::generation_failed;
    failure.error_detail = e.what();
    return failure;
  }
  std::set<std::string> known;
  for (const auto& [name, b] : bindings) known.insert(name);

  const PromptBundle prompt =
      build_prompt(env.preamble, prompt_extension(registry), context, utterance);
  LMP lmp;
  try {
    lmp = resolve_and_assemble(utterance, prompt, env.client, known, env.max_rounds, &stats);
  } catch (const CompletionError& e) {
    failure.status = ExecutionStatus::generation_failed;
    failure.error_detail = std::string(to_string(e.kind())) + ": " + e.what();
    return failure;
  } catch (const GenerationError& e) {
    failure.status = ExecutionStatus::generation_failed;
    failure.error_detail = e.what();
    failure.undefined_names = e.unresolved();
    return failure;
  } catch (const script::ParseError& e) {
    failure.status = ExecutionStatus::parse_error;
    failure.error_detail = e.what();
    failure.error_line = e.line();
    return failure;
  }
  generated = lmp;
  script::Program program = script::parse_program(lmp.code_text);
  const StaticCheckResult check = static_check(program, bindings);
  if (!check.ok()) {
    failure.status = ExecutionStatus::static_check_failed;
    failure.undefined_names = check.undefined;
    for (const auto& p : check.problems) {
      failure.error_detail += (failure.error_detail.empty() ? "" : "; ") + p;
    }
    return failure;
  }
  return PreparedCommand{std::move(lmp), std::move(program), std::move(bindings)};
}

json report_to_json(const ExecutionReport& r) {
  json motion = json::array();
  for (const auto& p : r.motion_log) motion.push_back(pose_to_json(p));
  json gripper = json::array();
  for (const auto& g : r.gripper_events) gripper.push_back(gripper_event_json(g));
  return {{"status", std::string(to_string(r.status))},
          {"say_outputs", r.say_outputs},
          {"motion_log", motion},
          {"gripper_events", gripper},
          {"error_detail", r.error_detail},
          {"error_line", r.error_line},
          {"undefined_names", r.undefined_names},
          {"steps", r.steps},
          {"elapsed_s", r.elapsed_s}};
}

json lmp_to_json(const LMP& lmp) {
  return {{"utterance", lmp.utterance},
          {"code", lmp.code_text},
          {"top_level_function", lmp.top_level_function},
          {"dependency_functions", lmp.dependency_functions}};
}

json CommandResult::to_json() const {
  json j{{"id", id},
         {"utterance", utterance},
         {"kind", std::string(lmpvc::to_string(kind))},
         {"keyword", keyword ? json(std::string(lmpvc::to_string(*keyword))) : json(nullptr)},
         {"message", message},
         {"lmp", lmp ? lmp_to_json(*lmp) : json(nullptr)},
         {"generation",
          {{"rounds", generation.rounds},
           {"calls", generation.calls},
           {"latency_s", generation.latency_s}}}};
  if (kind == Kind::executed) j["report"] = report_to_json(report);
  return j;
}

Session::Session(SessionConfig config, std::shared_ptr<World> world, std::shared_ptr<PolicyBank> bank,
                 std::shared_ptr<CompletionClient> client, std::string preamble,
                 std::shared_ptr<EventBus> events)
    : config_(std::move(config)),
      world_(std::move(world)),
      bank_(std::move(bank)),
      client_(std::move(client)),
      preamble_(std::move(preamble)),
      events_(events ? std::move(events) : std::make_shared<EventBus>(config_.gateway.replay)) {
  if (preamble_.empty()) throw std::invalid_argument("preamble must not be empty");
  approval_required_ = config_.effective_approval();
  auto bus = events_;
  world_->set_say_observer([bus](const std::string& text) {
    bus->publish(EventType::say, {{"text", text}, {"source", "robot"}});
  });
  world_->set_pose_observer(
      [bus](const Pose& p) { bus->publish(EventType::pose, pose_to_json(p)); });
  world_->set_stop_hook([this] { abort_.raise(); });
}

Session::~Session() {
  abort_.raise();
  {
    std::lock_guard lock(worker_mutex_);
    if (worker_.joinable()) worker_.join();
  }
  world_->set_say_observer(nullptr);
  world_->set_pose_observer(nullptr);
  world_->set_stop_hook(nullptr);
}

std::string Session::next_id() {
  std::lock_guard lock(mutex_);
  return "cmd-" + std::to_string(++counter_);
}

bool Session::claim() {
  std::lock_guard lock(mutex_);
  if (busy_) return false;
  busy_ = true;
  return true;
}

void Session::release() {
  {
    std::lock_guard lock(mutex_);
    busy_ = false;
  }
  idle_cv_.notify_all();
}

void Session::set_status(SessionStatus s) {
  {
    std::lock_guard lock(mutex_);
    status_ = s;
  }
  idle_cv_.notify_all();
}

void Session::say(const std::string& text) {
  events_->publish(EventType::say, {{"text", text}, {"source", "session"}});
}

void Session::store(const CommandResult& r) {
  std::lock_guard lock(mutex_);
  results_[r.id] = r;
}

void Session::launch(std::function<void()> work) {
  std::lock_guard lock(worker_mutex_);
  if (worker_.joinable()) worker_.join();
  worker_ = std::thread(std::move(work));
}

void Session::emit_recording_state() {
  json payload;
  {
    std::lock_guard lock(mutex_);
    json steps = json::array();
    if (recording_) {
      for (const auto& s : recording_->steps) steps.push_back(s.utterance);
    }
    payload = {{"active", recording_.has_value()},
               {"steps", steps},
               {"status", std::string(to_string(status_))}};
  }
  events_->publish(EventType::recording_state, payload);
}

CommandResult Session::handle_text(const std::string& text, TranscriptSource source) {
  return handle(Transcript{text, source, std::chrono::system_clock::now()});
}

CommandResult Session::handle(const Transcript& t) {
  const std::string text = trim(t.text);
  if (text.empty()) {
    CommandResult r;
    r.kind = CommandResult::Kind::ignored;
    r.message = "empty transcript";
    return r;
  }
  const auto d = dispatch(text, config_.keywords);
  if (auto* a = std::get_if<KeywordAction>(&d); a != nullptr && *a == KeywordAction::stop) {
    const std::string id = next_id();
    events_->publish(EventType::transcript,
                     {{"id", id}, {"text", text}, {"source", std::string(to_string(t.source))}});
    CommandResult r = run_keyword(id, text, *a);
    store(r);
    return r;
  }
  if (!claim()) {
    CommandResult r;
    r.utterance = text;
    r.kind = CommandResult::Kind::busy;
    r.message = "a command is already in progress";
    return r;
  }
  const std::string id = next_id();
  CommandResult r = process(id, Transcript{text, t.source, t.captured_at});
  store(r);
  if (r.kind != CommandResult::Kind::awaiting_approval) release();
  return r;
}

std::variant<std::string, Session::SubmitError> Session::submit(const std::string& raw,
                                                                TranscriptSource source) {
  const std::string text = trim(raw);
  if (text.empty()) return SubmitError::empty;
  const Transcript t{text, source, std::chrono::system_clock::now()};
  const auto d = dispatch(text, config_.keywords);
  if (auto* a = std::get_if<KeywordAction>(&d); a != nullptr && *a == KeywordAction::stop) {
    return handle(t).id;
  }
  if (!claim()) return SubmitError::busy;
  const std::string id = next_id();
  launch([this, id, t] {
    CommandResult r = process(id, t);
    store(r);
    if (r.kind != CommandResult::Kind::awaiting_approval) release();
  });
  return id;
}

CommandResult Session::process(const std::string& id, const Transcript& t) {
  events_->publish(EventType::transcript,
                   {{"id", id}, {"text", t.text}, {"source", std::string(to_string(t.source))}});
  abort_.reset();
  const auto d = dispatch(t.text, config_.keywords);
  if (auto* a = std::get_if<KeywordAction>(&d)) return run_keyword(id, t.text, *a);
  bool naming = false;
  {
    std::lock_guard lock(mutex_);
    naming = naming_ != NamingStage::none;
  }
  if (naming) return run_naming(id, t.text);

  CommandResult r;
  r.id = id;
  r.utterance = t.text;
  r.kind = CommandResult::Kind::executed;
  set_status(SessionStatus::generating);
  events_->publish(EventType::codegen_started, {{"id", id}, {"utterance", t.text}});

  const std::vector<LMP> ctx = context();
  std::optional<LMP> generated;
  auto prepared = prepare_command(t.text, ctx,
                                  CommandEnvironment{preamble_, *bank_, *client_, config_.llm.max_rounds},
                                  r.generation, generated);
  r.lmp = generated;
  if (generated) {
    json payload = lmp_to_json(*generated);
    payload["id"] = id;
    payload["latency_s"] = r.generation.latency_s;
    payload["rounds"] = r.generation.rounds;
    events_->publish(EventType::codegen_result, payload);
  }
  if (auto* failure = std::get_if<ExecutionReport>(&prepared)) {
    r.report = *failure;
    events_->publish(EventType::error, {{"id", id},
                                        {"stage", std::string(to_string(failure->status))},
                                        {"message", failure->error_detail},
                                        {"undefined_names", failure->undefined_names}});
    set_status(SessionStatus::idle);
    json payload = report_to_json(r.report);
    payload["id"] = id;
    payload["status_detail"] = "not executed";
    events_->publish(EventType::execution_finished, payload);
    return r;
  }
  PreparedCommand cmd = std::move(std::get<PreparedCommand>(prepared));
  if (approval_required()) {
    {
      std::lock_guard lock(mutex_);
      pending_ = Pending{id, cmd, r.generation};
      status_ = SessionStatus::awaiting_approval;
    }
    events_->publish(EventType::awaiting_approval,
                     {{"id", id}, {"utterance", t.text}, {"code", cmd.lmp.code_text}});
    r.kind = CommandResult::Kind::awaiting_approval;
    return r;
  }
  return execute_prepared(id, std::move(cmd), r.generation);
}

CommandResult Session::execute_prepared(const std::string& id, PreparedCommand cmd,
                                        GenerationStats stats) {
  CommandResult r;
  r.id = id;
  r.utterance = cmd.lmp.utterance;
  r.kind = CommandResult::Kind::executed;
  r.lmp = cmd.lmp;
  r.generation = stats;
  set_status(SessionStatus::executing);
  events_->publish(EventType::execution_started,
                   {{"id", id}, {"utterance", r.utterance}, {"entry", cmd.lmp.top_level_function}});
  world_->clear_queue();
  r.report = execute(cmd.program, cmd.lmp.top_level_function, cmd.bindings, *world_, config_.limits,
                     ExecutionOptions{config_.time_dilation, &abort_});
  json payload = report_to_json(r.report);
  payload["id"] = id;
  events_->publish(EventType::execution_finished, payload);
  bool recorded = false;
  if (r.report.status == ExecutionStatus::ok) {
    std::lock_guard lock(mutex_);
    context_.push_back(cmd.lmp);
    while (context_.size() > config_.context_capacity) context_.erase(context_.begin());
    if (recording_) {
      record_step(*recording_, cmd.lmp);
      recorded = true;
    }
  }
  set_status(SessionStatus::idle);
  if (recorded) emit_recording_state();
  return r;
}

CommandResult Session::run_keyword(const std::string& id, const std::string& text, KeywordAction a) {
  CommandResult r;
  r.id = id;
  r.utterance = text;
  r.kind = CommandResult::Kind::keyword;
  r.keyword = a;
  events_->publish(EventType::keyword,
                   {{"id", id}, {"phrase", normalize_phrase(text)}, {"action", std::string(to_string(a))}});
  switch (a) {
    case KeywordAction::stop:
      stop();
      r.message = "stopped";
      break;
    case KeywordAction::record_policy: {
      bool already = false;
      {
        std::lock_guard lock(mutex_);
        already = recording_.has_value();
      }
      if (already) {
        r.message = "already recording";
      } else {
        start_recording();
        r.message = "recording started";
      }
      break;
    }
    case KeywordAction::save_policy: {
      std::string problem;
      {
        std::lock_guard lock(mutex_);
        if (!recording_) {
          problem = "no recording in progress";
        } else if (recording_->steps.empty()) {
          problem = "nothing has been recorded";
        } else {
          naming_ = NamingStage::name;
          status_ = SessionStatus::recording_name;
        }
      }
      if (!problem.empty()) {
        events_->publish(EventType::error, {{"id", id}, {"stage", "recording"}, {"message", problem}});
        r.message = problem;
      } else {
        emit_recording_state();
        say("What should the new policy be called?");
        r.message = "awaiting policy name";
      }
      break;
    }
    case KeywordAction::discard_recording:
      discard_recording();
      r.message = "recording discarded";
      break;
    case KeywordAction::clear_context:
      clear_context();
      r.message = "context cleared";
      break;
  }
  return r;
}

CommandResult Session::run_naming(const std::string& id, const std::string& text) {
  CommandResult r;
  r.id = id;
  r.utterance = text;
  r.kind = CommandResult::Kind::naming;
  NamingStage stage;
  std::string name;
  {
    std::lock_guard lock(mutex_);
    stage = naming_;
    name = pending_name_;
  }
  if (stage == NamingStage::name) {
    try {
      sanitize_name(text);
    } catch (const NameError&) {
      r.message = "the name needs letters or digits";
      say("Please say a name with letters or digits.");
      return r;
    }
    {
      std::lock_guard lock(mutex_);
      pending_name_ = text;
      naming_ = NamingStage::hint;
    }
    say("Which command should trigger it?");
    r.message = "awaiting policy hint";
    return r;
  }
  try {
    const Policy p = save_recording(name, text);
    say("Saved policy " + p.name + ".");
    r.message = "saved policy " + p.name;
  } catch (const std::exception& e) {
    {
      std::lock_guard lock(mutex_);
      naming_ = NamingStage::none;
      status_ = SessionStatus::idle;
    }
    events_->publish(EventType::error, {{"id", id}, {"stage", "recording"}, {"message", e.what()}});
    say(std::string("Could not save the policy: ") + e.what());
    emit_recording_state();
    r.message = e.what();
  }
  return r;
}

namespace {

bool take_pending(std::mutex& m, std::optional<Session::Decision>& problem, auto& pending,
                  const auto& results, const std::string& id) {
  std::lock_guard lock(m);
  if (!pending || pending->id != id) {
    problem = results.count(id) != 0 ? Session::Decision::not_pending : Session::Decision::unknown_id;
    return false;
  }
  return true;
}

}  // namespace

Session::Decision Session::decide(const std::string& id, bool approve, CommandResult* out) {
  std::optional<Decision> problem;
  if (!take_pending(mutex_, problem, pending_, results_, id)) return *problem;
  Pending p;
  {
    std::lock_guard lock(mutex_);
    p = std::move(*pending_);
    pending_.reset();
  }
  CommandResult r;
  if (approve) {
    abort_.reset();
    r = execute_prepared(id, std::move(p.command), p.stats);
  } else {
    r.id = id;
    r.utterance = p.command.lmp.utterance;
    r.kind = CommandResult::Kind::rejected;
    r.lmp = p.command.lmp;
    r.generation = p.stats;
    r.message = "rejected by operator";
    set_status(SessionStatus::idle);
    events_->publish(EventType::execution_finished, {{"id", id}, {"status", "rejected"}});
  }
  store(r);
  release();
  if (out != nullptr) *out = r;
  return Decision::ok;
}

Session::Decision Session::decide_async(const std::string& id, bool approve) {
  std::optional<Decision> problem;
  if (!take_pending(mutex_, problem, pending_, results_, id)) return *problem;
  launch([this, id, approve] { decide(id, approve); });
  return Decision::ok;
}

bool Session::wait_idle(std::chrono::duration<double> timeout) {
  std::unique_lock lock(mutex_);
  return idle_cv_.wait_for(lock, timeout,
                           [&] { return !busy_ || status_ == SessionStatus::awaiting_approval; });
}

std::optional<CommandResult> Session::result(const std::string& id) const {
  std::lock_guard lock(mutex_);
  auto it = results_.find(id);
  if (it == results_.end()) return std::nullopt;
  return it->second;
}

void Session::stop() {
  abort_.raise();
  world_->stop();
}

void Session::start_recording() {
  {
    std::lock_guard lock(mutex_);
    recording_ = begin_recording();
    naming_ = NamingStage::none;
  }
  emit_recording_state();
}

Policy Session::save_recording(const std::string& name, const std::string& hint) {
  std::optional<RecordingSession> rec = recording();
  if (!rec) throw PolicyError("no recording in progress");
  std::set<std::string> taken = bank_->bound_names();
  for (const auto& e : bank_->snapshot().entries) taken.insert(e.name);
  const Policy p = finalize_recording(*rec, name, hint, taken);
  bank_->add(p);
  const Policy stored = bank_->get(p.name).value_or(p);
  {
    std::lock_guard lock(mutex_);
    recording_.reset();
    naming_ = NamingStage::none;
    if (status_ == SessionStatus::recording_name) status_ = SessionStatus::idle;
  }
  json steps = json::array();
  for (const auto& s : rec->steps) steps.push_back(s.utterance);
  events_->publish(EventType::policy_saved, {{"name", stored.name},
                                             {"file", stored.source_path},
                                             {"hint", stored.hint_utterance},
                                             {"alias", stored.alias_function},
                                             {"learned", stored.learned},
                                             {"steps", steps}});
  emit_recording_state();
  return stored;
}

void Session::discard_recording() {
  {
    std::lock_guard lock(mutex_);
    recording_.reset();
    naming_ = NamingStage::none;
    if (status_ == SessionStatus::recording_name) status_ = SessionStatus::idle;
  }
  emit_recording_state();
}

void Session::clear_context() {
  std::lock_guard lock(mutex_);
  context_.clear();
}

SessionStatus Session::status() const {
  std::lock_guard lock(mutex_);
  return status_;
}

bool Session::busy() const {
  std::lock_guard lock(mutex_);
  return busy_;
}

std::vector<LMP> Session::context() const {
  std::lock_guard lock(mutex_);
  return context_;
}

std::optional<RecordingSession> Session::recording() const {
  std::lock_guard lock(mutex_);
  return recording_;
}

bool Session::approval_required() const {
  std::lock_guard lock(mutex_);
  return approval_required_;
}

void Session::set_approval_required(bool on) {
  std::lock_guard lock(mutex_);
  approval_required_ = on;
}

json Session::state_json() const {
  std::lock_guard lock(mutex_);
  json ctx = json::array();
  for (const auto& l : context_) ctx.push_back(lmp_to_json(l));
  json rec = nullptr;
  if (recording_) {
    json steps = json::array();
    for (const auto& s : recording_->steps) steps.push_back(s.utterance);
    rec = {{"steps", steps}, {"naming", naming_ == NamingStage::name   ? "name"
                                        : naming_ == NamingStage::hint ? "hint"
                                                                       : "none"}};
  }
  json pending = nullptr;
  if (pending_) {
    pending = {{"id", pending_->id},
               {"utterance", pending_->command.lmp.utterance},
               {"code", pending_->command.lmp.code_text}};
  }
  return {{"status", std::string(to_string(status_))},
          {"busy", busy_},
          {"approval_required", approval_required_},
          {"context_capacity", config_.context_capacity},
          {"context", ctx},
          {"recording", rec},
          {"pending", pending}};
}

bool apply_operator_action(World& world, const std::string& line) {
  const std::string s = trim(line);
  if (s.empty() || s[0] != '@') return false;
  std::istringstream in(s.substr(1));
  std::string verb;
  std::string name;
  in >> verb >> name;
  if (verb == "place") {
    double x = 0;
    double y = 0;
    double z = 0;
    if (!(in >> x >> y >> z) || name.empty()) {
      throw std::invalid_argument("expected '@place <name> <x> <y> <z> [location]': " + s);
    }
    std::string kind;
    in >> kind;
    if (!kind.empty() && kind != "location" && kind != "object") {
      throw std::invalid_argument("unknown object kind '" + kind + "'");
    }
    world.place_object(name, Pose{{x, y, z}, {}},
                       kind == "location" ? ObjectKind::location : ObjectKind::object);
    return true;
  }
  if (verb == "remove" && !name.empty()) {
    world.remove_object(name);
    return true;
  }
  throw std::invalid_argument("unknown operator action: " + s);
}

std::vector<CommandResult> run_listener(Session& session, Listener& listener,
                                        const ListenOptions& options) {
  std::vector<CommandResult> results;
  while (true) {
    const ListenResult heard =
        listener.next_transcript(std::chrono::duration<double>(options.timeout_s));
    if (std::holds_alternative<NoSpeech>(heard)) break;
    const Transcript& t = std::get<Transcript>(heard);
    if (apply_operator_action(session.world(), t.text)) continue;
    CommandResult r = session.handle(t);
    if (r.kind == CommandResult::Kind::awaiting_approval && options.auto_approve) {
      session.decide(r.id, true, &r);
    }
    if (options.on_result) options.on_result(r);
    results.push_back(std::move(r));
  }
  return results;
}

}  // namespace lmpvc
