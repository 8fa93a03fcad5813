#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include <CLI11.hpp>

#include "lmpvc/bench.hpp"
#include "lmpvc/gateway.hpp"
#include "lmpvc/runtime.hpp"
#include "lmpvc/script/parser.hpp"
#include "lmpvc/text.hpp"
#include "lmpvc/world_io.hpp"

namespace fs = std::filesystem;
using namespace lmpvc;

namespace {

std::atomic<bool> g_interrupted{false};

std::string temp_stage_dir() {
  const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
  fs::path dir = fs::temp_directory_path() / ("lmpvc-policies-" + std::to_string(stamp));
  fs::create_directories(dir);
  return dir.string();
}

std::string default_config() {
  if (const char* env = std::getenv("LMPVC_CONFIG")) return env;
  return std::string(LMPVC_SOURCE_DIR) + "/config/default.json";
}

int cmd_run(const std::string& config_path, const std::string& script, bool approve, bool persist,
            const std::string& events_path, bool quiet) {
  SessionConfig config = SessionConfig::load(config_path);
  if (!script.empty()) config.listener.script = script;
  if (config.listener.script.empty()) throw std::invalid_argument("no session script given");
  const std::string stage = persist ? "" : temp_stage_dir();
  Runtime rt = open_runtime(config, stage);

  std::ofstream events_out;
  if (!events_path.empty()) events_out.open(events_path);
  rt.events->subscribe([&](const Event& e) {
    if (events_out) events_out << e.to_json().dump() << "\n";
    if (quiet) return;
    if (e.type == EventType::pose) return;
    std::cout << "[" << e.seq << "] " << to_string(e.type) << " " << e.payload.dump() << "\n";
  });

  ScriptedListener listener = ScriptedListener::from_file(config.listener.script);
  ListenOptions opts;
  opts.timeout_s = config.listener.timeout_s;
  opts.auto_approve = approve;
  int failures = 0;
  opts.on_result = [&](const CommandResult& r) {
    if (r.kind == CommandResult::Kind::executed && r.report.status != ExecutionStatus::ok) ++failures;
  };
  run_listener(*rt.session, listener, opts);
  if (!stage.empty()) std::cout << "learned policies staged in " << stage << "\n";
  std::cout << "world: " << world_to_json(rt.world->snapshot()).dump() << "\n";
  return failures == 0 ? 0 : 1;
}

int cmd_serve(const std::string& config_path, const std::string& host, int port, bool persist) {
  SessionConfig config = SessionConfig::load(config_path);
  if (!host.empty()) config.gateway.host = host;
  if (port >= 0) config.gateway.port = port;
  const std::string stage = persist ? "" : temp_stage_dir();
  Runtime rt = open_runtime(config, stage);
  GatewayOptions opts{config.gateway.host, config.gateway.port, ""};
  if (const char* tok = std::getenv("LMPVC_TOKEN")) opts.token = tok;
  Gateway gw(*rt.session, opts);
  gw.start();
  std::cout << "listening on http://" << opts.host << ":" << gw.port() << " (ws at /ws)" << std::endl;
  std::signal(SIGINT, [](int) { g_interrupted = true; });
  std::signal(SIGTERM, [](int) { g_interrupted = true; });

  std::unique_ptr<Listener> listener;
  if (config.listener.engine == "scripted" && !config.listener.script.empty()) {
    listener = std::make_unique<ScriptedListener>(
        ScriptedListener::parse_script(read_text_file(config.listener.script)));
  } else if (config.listener.engine == "stt") {
    listener = std::make_unique<HttpSttListener>(config.listener.stt_url);
  }
  std::thread listen_thread;
  if (listener) {
    listen_thread = std::thread([&] {
      ListenOptions lo;
      lo.timeout_s = config.listener.timeout_s;
      try {
        run_listener(*rt.session, *listener, lo);
      } catch (const std::exception& e) {
        std::cerr << "listener stopped: " << e.what() << "\n";
      }
    });
  }
  while (!g_interrupted) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  gw.stop();
  rt.session->stop();
  if (listen_thread.joinable()) listen_thread.join();
  return 0;
}

int cmd_bench(const std::string& config_path, const std::string& cases_path, const std::string& fixture,
              const std::string& registry, int reps, double delay, const std::string& out_dir) {
  SessionConfig config = SessionConfig::load(config_path);
  if (!fixture.empty()) {
    config.llm.mode = "mock";
    config.llm.fixture = fixture;
  }
  if (!registry.empty()) config.registry_path = registry;
  Runtime rt = open_runtime(config, temp_stage_dir());
  const auto cases = bench::load_cases(cases_path);
  bench::SuiteOptions opts;
  opts.repetitions = reps;
  opts.inter_run_delay_s = delay;
  opts.max_rounds = config.llm.max_rounds;
  opts.limits = config.limits;
  opts.time_dilation = 0.0;
  opts.on_record = [](const bench::RunRecord& r) {
    if (r.repetition == 1) {
      std::cout << r.case_id << " " << (r.pass ? "pass" : "FAIL") << "  " << r.utterance;
      if (!r.pass) std::cout << "  (" << r.reason << ")";
      std::cout << "\n";
    }
  };
  const auto records = bench::run_suite(cases, opts, *rt.client, *rt.world, *rt.bank, rt.preamble);
  const auto summary = bench::summarize(records);
  bench::write_reports(out_dir, records, summary);
  std::cout << summary.passes << "/" << summary.cases.size() << " commands completed ("
            << format_float(summary.success_rate) << "), " << summary.records << " runs; reports in "
            << out_dir << "\n";
  return 0;
}

int cmd_policy_check(const std::vector<std::string>& files, const std::string& registry) {
  FunctionBindings bindings;
  if (!registry.empty()) bindings = execution_bindings(load_registry(registry));
  int bad = 0;
  for (const auto& f : files) {
    try {
      const Policy p = parse_policy_file(read_text_file(f));
      FunctionBindings others = bindings;
      for (const auto& fn : p.body_functions()) others.erase(fn);
      others.erase(p.alias_function);
      const auto program = script::parse_program(p.body_source + p.hint_block());
      const auto check = static_check(program, others);
      if (!check.ok()) {
        ++bad;
        for (const auto& msg : check.problems) std::cout << f << ": " << msg << "\n";
        if (check.problems.empty()) {
          for (const auto& u : check.undefined) std::cout << f << ": undefined name '" << u << "'\n";
        }
        continue;
      }
      std::cout << f << ": ok (" << p.entry_function << ", hint \"" << p.hint_utterance << "\""
                << (p.learned ? ", learned" : "") << ")\n";
    } catch (const std::exception& e) {
      ++bad;
      std::cout << f << ": " << e.what() << "\n";
    }
  }
  return bad == 0 ? 0 : 1;
}

int cmd_policy_fmt(const std::string& file, bool in_place) {
  const std::string text = serialize_policy(parse_policy_file(read_text_file(file)));
  if (in_place) {
    write_text_file(file, text);
  } else {
    std::cout << text;
  }
  return 0;
}

int cmd_exec(const std::string& config_path, const std::string& file, const std::string& entry,
             bool with_policies) {
  SessionConfig config = SessionConfig::load(config_path);
  World world(load_world(config.world_path), config.motion);
  FunctionBindings bindings;
  if (with_policies) bindings = execution_bindings(load_registry(config.registry_path));
  const ExecutionReport r = run_source(read_text_file(file), entry, bindings, world, config.limits,
                                       ExecutionOptions{config.time_dilation, nullptr});
  std::cout << report_to_json(r).dump(2) << "\n";
  std::cout << world_to_json(world.snapshot()).dump() << "\n";
  return r.status == ExecutionStatus::ok ? 0 : 1;
}

int cmd_prompt(const std::string& config_path, const std::string& utterance) {
  SessionConfig config = SessionConfig::load(config_path);
  const PolicyRegistry reg = load_registry(config.registry_path);
  const std::string preamble = config.preamble_path.empty() ? "" : read_text_file(config.preamble_path);
  std::cout << build_prompt(preamble, prompt_extension(reg), {}, utterance).text();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Voice-commanded robot programming with language model programs"};
  app.require_subcommand(1);
  std::string config = default_config();
  app.add_option("-c,--config", config, "Session config file")->check(CLI::ExistingFile);

  auto* run = app.add_subcommand("run", "Play a session script against the simulated robot");
  std::string script;
  std::string events_path;
  bool approve = false;
  bool persist = false;
  bool quiet = false;
  run->add_option("script", script, "Session script (one utterance per line)");
  run->add_flag("--approve", approve, "Approve every generated program");
  run->add_flag("--persist", persist, "Write learned policies next to the configured registry");
  run->add_option("--events", events_path, "Also write every event as JSON lines");
  run->add_flag("-q,--quiet", quiet, "Do not print events");

  auto* serve = app.add_subcommand("serve", "Run the REST/WebSocket gateway");
  std::string host;
  int port = -1;
  serve->add_option("--host", host);
  serve->add_option("--port", port, "0 picks a free port");
  serve->add_flag("--persist", persist, "Write learned policies next to the configured registry");

  auto* bench_cmd = app.add_subcommand("bench", "Run the command benchmark");
  std::string cases_path = std::string(LMPVC_SOURCE_DIR) + "/data/bench/cases.jsonl";
  std::string fixture;
  std::string registry;
  int reps = 10;
  double delay = 0.0;
  std::string out_dir = "bench_out";
  bench_cmd->add_option("--cases", cases_path)->check(CLI::ExistingFile);
  bench_cmd->add_option("--fixture", fixture, "Mock completion fixture (forces mock mode)");
  bench_cmd->add_option("--registry", registry, "Policy registry");
  bench_cmd->add_option("-n,--repetitions", reps)->check(CLI::PositiveNumber);
  bench_cmd->add_option("--delay", delay, "Seconds between runs")->check(CLI::NonNegativeNumber);
  bench_cmd->add_option("-o,--out", out_dir);

  auto* policy = app.add_subcommand("policy", "Policy file tools");
  policy->require_subcommand(1);
  auto* check = policy->add_subcommand("check", "Parse and statically check policy files");
  std::vector<std::string> files;
  check->add_option("files", files)->required()->check(CLI::ExistingFile);
  check->add_option("--registry", registry, "Resolve calls into these policies");
  auto* fmt = policy->add_subcommand("fmt", "Print the canonical form of a policy file");
  std::string file;
  bool in_place = false;
  fmt->add_option("file", file)->required()->check(CLI::ExistingFile);
  fmt->add_flag("-i,--in-place", in_place);

  auto* exec = app.add_subcommand("exec", "Execute a script file against the configured world");
  std::string entry;
  bool with_policies = false;
  exec->add_option("file", file)->required()->check(CLI::ExistingFile);
  exec->add_option("-e,--entry", entry, "Function to call with the robot")->required();
  exec->add_flag("--policies", with_policies, "Bind the configured policies");

  auto* prompt = app.add_subcommand("prompt", "Print the prompt for an utterance");
  std::string utterance;
  prompt->add_option("utterance", utterance)->required();

  CLI11_PARSE(app, argc, argv);
  try {
    if (*run) return cmd_run(config, script, approve, persist, events_path, quiet);
    if (*serve) return cmd_serve(config, host, port, persist);
    if (*bench_cmd) return cmd_bench(config, cases_path, fixture, registry, reps, delay, out_dir);
    if (*check) return cmd_policy_check(files, registry);
    if (*fmt) return cmd_policy_fmt(file, in_place);
    if (*exec) return cmd_exec(config, file, entry, with_policies);
    if (*prompt) return cmd_prompt(config, utterance);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
