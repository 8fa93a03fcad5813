// Acceptance suite: one PASS/FAIL line per primary criterion, nonzero exit on any failure.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

#include "lmpvc/bench.hpp"
#include "lmpvc/runtime.hpp"
#include "lmpvc/script/parser.hpp"
#include "lmpvc/text.hpp"
#include "lmpvc/world_io.hpp"
#include "support.hpp"

using namespace lmpvc;
using nlohmann::json;
using testing::TempDir;

namespace {

constexpr double kPoseTol = 1e-6;
constexpr double kStatTol = 1e-12;

// Collects failed expectations for one criterion.
struct Check {
  std::vector<std::string> failures;
  void expect(bool cond, const std::string& what) {
    if (!cond) failures.push_back(what);
  }
  void near(double actual, double expected, double tol, const std::string& what) {
    if (!(std::abs(actual - expected) <= tol)) {
      std::ostringstream os;
      os.precision(17);
      os << what << ": got " << actual << ", expected " << expected;
      failures.push_back(os.str());
    }
  }
};

Runtime runtime_with(const TempDir& dir, const std::function<void(SessionConfig&)>& tweak = {}) {
  SessionConfig c = SessionConfig::load(testing::config("default.json"));
  c.time_dilation = 0.0;
  if (tweak) tweak(c);
  return open_runtime(c, dir.str());
}

CommandResult run(Runtime& rt, const std::string& utterance) { return rt.session->handle_text(utterance); }

// Delta of the end-effector position caused by one command.
Vec3 delta(Runtime& rt, const std::string& utterance, CommandResult* out = nullptr) {
  const Vec3 before = rt.world->get_pose().position;
  CommandResult r = run(rt, utterance);
  if (out != nullptr) *out = r;
  return rt.world->get_pose().position - before;
}

// Expected circle waypoints: 26 points at angle 2*pi*i/25 around the start.
void check_circle(Check& c, const std::string& label, const ExecutionReport& r, const Vec3& start, double radius) {
  c.expect(r.status == ExecutionStatus::ok, label + ": status " + std::string(to_string(r.status)));
  c.expect(r.motion_log.size() == 26, label + ": " + std::to_string(r.motion_log.size()) + " waypoints");
  for (std::size_t i = 0; i < r.motion_log.size() && i < 26; ++i) {
    const double angle = 2.0 * 3.14159265358979323846 * static_cast<double>(i) / 25.0;
    const Vec3& p = r.motion_log[i].position;
    const std::string at = label + " waypoint " + std::to_string(i);
    c.near(p.x, start.x + radius * std::cos(angle), kPoseTol, at + " x");
    c.near(p.y, start.y + radius * std::sin(angle), kPoseTol, at + " y");
    c.near(p.z, start.z, kPoseTol, at + " z");
  }
}

bool passes_static_check(Runtime& rt, const LMP& lmp) {
  const script::Program p = script::parse_program(lmp.code_text);
  return static_check(p, command_bindings(rt.bank->bindings(), {})).ok();
}

// ---- criteria ----

Check golden_listings() {
  Check c;
  const auto t0 = std::chrono::steady_clock::now();
  TempDir dir;
  Runtime rt = runtime_with(dir);

  CommandResult r;
  Vec3 d = delta(rt, "Twotwenty centimeters to the left.", &r);
  c.expect(r.report.status == ExecutionStatus::ok, "left: status");
  c.expect(r.lmp && passes_static_check(rt, *r.lmp), "left: static check");
  c.near(d.x, 0.0, kPoseTol, "left dx");
  c.near(d.y, -0.2, kPoseTol, "left dy");
  c.near(d.z, 0.0, kPoseTol, "left dz");

  d = delta(rt, "Move a little down.", &r);
  c.expect(r.report.status == ExecutionStatus::ok, "down: status");
  c.near(d.x, 0.0, kPoseTol, "down dx");
  c.near(d.y, 0.0, kPoseTol, "down dy");
  c.near(d.z, -0.05, kPoseTol, "down dz");

  r = run(rt, "Can you see the big bolt?");
  c.expect(r.report.say_outputs == std::vector<std::string>{"Found the big bolt!"}, "bolt visible branch");
  rt.world->remove_object("big_bolt");
  rt.session->clear_context();
  r = run(rt, "Can you see the big bolt?");
  c.expect(r.report.say_outputs == std::vector<std::string>{"Can't find the big bolt!"}, "bolt missing branch");

  rt.session->clear_context();
  Vec3 start = rt.world->get_pose().position;
  r = run(rt, "Draw a circle of radius 35 millimeters.");
  c.expect(r.lmp && passes_static_check(rt, *r.lmp), "circle: static check");
  check_circle(c, "circle r=0.035", r.report, start, 0.035);

  rt.session->clear_context();
  start = rt.world->get_pose().position;
  r = run(rt, "Draw a small circle.");
  check_circle(c, "small circle", r.report, start, 0.05);
  start = rt.world->get_pose().position;
  r = run(rt, "Double the radius.");
  c.expect(rt.session->context().size() == 2, "double: prior circle in context");
  check_circle(c, "doubled circle", r.report, start, 0.1);

  const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  c.expect(elapsed < 5.0, "runtime " + std::to_string(elapsed) + " s >= 5 s");
  return c;
}

Check hierarchical_generation() {
  Check c;
  // Scripted two rounds: the top level calls a helper nothing defines yet.
  MockClient client(json{{"completions",
                          {{"tidy up", "def tidy_up(robot):\n    park_the_arm(robot)\n    robot.say(\"tidy\")\n"},
                           {"park the arm",
                            "def park_the_arm(robot):\n    waypoint = robot.get_pose()\n"
                            "    waypoint.position.z += 0.1\n    robot.add_waypoint(waypoint)\n    robot.go()\n"}}}});
  GenerationStats st;
  const LMP lmp = resolve_and_assemble("Tidy up.", build_prompt("", "", {}, "Tidy up."), client, {}, 3, &st);
  const script::Program p = script::parse_program(lmp.code_text);
  c.expect(st.rounds == 2, "rounds " + std::to_string(st.rounds));
  c.expect(p.definitions.size() == 2, "two definitions");
  if (p.definitions.size() == 2) {
    c.expect(p.definitions[0]->name == "park_the_arm", "helper first");
    c.expect(p.definitions[1]->name == "tidy_up", "top-level last");
  }
  c.expect(detect_undefined_calls(p, {}).empty(), "no undefined calls remain");
  c.expect(client.requested() == std::vector<std::string>{"tidy up", "park the arm"}, "re-prompt directive");

  // The golden multi-step listing goes through the same path.
  auto fixture = MockClient::from_file(testing::data("fixtures/mock_completions.json"));
  const std::string u = "Move a little down, and then draw a circle with radius 35 millimeters.";
  GenerationStats st2;
  const LMP multi = resolve_and_assemble(u, build_prompt("", "", {}, u), *fixture, {}, 3, &st2);
  const script::Program mp = script::parse_program(multi.code_text);
  c.expect(st2.rounds == 2, "golden: two rounds");
  c.expect(!mp.definitions.empty() && mp.definitions.back()->name == multi.top_level_function,
           "golden: top-level last");
  c.expect(detect_undefined_calls(mp, {}).empty(), "golden: no undefined calls");
  return c;
}

Check policy_round_trip() {
  Check c;
  PolicyRegistry reg;
  reg.path = testing::fixture("policies/registry.json");
  for (const char* name : {"handover", "parts_check", "full_check"}) {
    const std::string text = read_text_file(testing::fixture(std::string("policies/") + name + ".policy"));
    Policy p = parse_policy_file(text);
    const std::string canonical = serialize_policy(p);
    const Policy again = parse_policy_file(canonical);
    c.expect(again == p, std::string(name) + ": re-parse equal");
    c.expect(serialize_policy(again) == canonical, std::string(name) + ": canonical text stable");
    p.name = name;
    reg.entries.push_back({name, std::string(name) + ".policy", true});
    reg.loaded[name] = p;
  }
  const std::string ext = prompt_extension(reg);
  std::size_t imports = 0;
  for (const auto& line : split_lines(ext)) imports += line == "import time" ? 1 : 0;
  c.expect(imports == 1, "\"import time\" appears " + std::to_string(imports) + " times");
  // Strip every hint block; only the import line may remain.
  std::string rest = ext;
  for (const auto& e : reg.entries) {
    const std::string block = reg.loaded.at(e.name).hint_block();
    const auto at = rest.find(block);
    c.expect(at != std::string::npos, e.name + ": hint block present");
    if (at != std::string::npos) rest.erase(at, block.size());
  }
  c.expect(rest == "import time\n", "text outside hint blocks: " + rest);
  for (const auto& [name, p] : reg.loaded) {
    for (const auto& line : split_lines(p.body_source)) {
      if (trim(line).empty()) continue;
      c.expect(rest.find(line) == std::string::npos, name + ": body line leaked: " + line);
    }
  }
  return c;
}

Check teaching_equivalence() {
  Check c;
  TempDir dir;
  Runtime rt = runtime_with(dir);
  const std::vector<std::string> steps{"Find the assembly and move thirty centimeters above it.", "Check parts.",
                                       "Check bolts."};
  run(rt, "Record policy.");
  std::vector<std::string> tops;
  for (const auto& s : steps) {
    const CommandResult r = run(rt, s);
    c.expect(r.report.status == ExecutionStatus::ok, s + " executed");
    if (r.lmp) tops.push_back(r.lmp->top_level_function);
  }
  run(rt, "Save policy.");
  run(rt, "full check");
  run(rt, "do a full inspection");
  const auto learned = rt.bank->get("full_check");
  c.expect(learned.has_value(), "policy saved");
  if (!learned) return c;
  c.expect(learned->learned, "learned marker");
  c.expect(learned->hint_utterance == "do a full inspection", "hint");
  c.expect(learned->alias_function == "do_a_full_inspection", "alias");
  const script::Program body = script::parse_program(learned->body_source);
  const script::FunctionDef* wrapper = body.find("full_check");
  c.expect(wrapper != nullptr && body.definitions.back().get() == wrapper, "wrapper defined last");
  if (wrapper != nullptr) c.expect(called_functions(*wrapper) == tops, "wrapper calls the steps in order");
  const Policy reference = parse_policy_file(read_text_file(testing::fixture("policies/full_check.policy")));
  c.expect(learned->body_functions() == reference.body_functions(), "same functions as the reference listing");
  c.expect(*learned == reference, "structurally equal to the reference listing");
  return c;
}

Check pump_demo() {
  Check c;
  TempDir dir;
  Runtime rt = runtime_with(dir);
  std::vector<std::string> robot_says;
  bool taught = false;
  rt.events->subscribe([&](const Event& e) {
    if (e.type == EventType::policy_saved) taught = true;
    if (taught && e.type == EventType::say && e.payload["source"] == "robot") {
      robot_says.push_back(e.payload["text"]);
    }
  });
  ScriptedListener listener = ScriptedListener::from_file(testing::data("sessions/pump_demo.txt"));
  int failures = 0;
  ListenOptions opts;
  opts.on_result = [&](const CommandResult& r) {
    if (r.kind == CommandResult::Kind::executed && r.report.status != ExecutionStatus::ok) ++failures;
  };
  run_listener(*rt.session, listener, opts);
  c.expect(failures == 0, std::to_string(failures) + " commands failed");
  const std::vector<std::string> narrative{
      "Can't find the cover!", "Everything secured.",                               // full inspection
      "All parts found!",      "Missing bolts.",                                    // check again
      "In handover position, releasing in two seconds!",                            // give it to me
      "All parts found!",      "Everything secured.", "All parts found!", "Everything secured."};
  c.expect(robot_says == narrative, "say outputs out of narrative order");
  const WorldModel w = rt.world->snapshot();
  c.expect(!w.held_object.has_value(), "bolt still held");
  c.expect(w.gripper == GripperState::open, "gripper open");
  const Vec3 bolt = w.objects.at("big_bolt").pose.position;
  const Vec3 handover = w.objects.at("handover").pose.position;
  c.near(bolt.x, handover.x, kPoseTol, "bolt x");
  c.near(bolt.y, handover.y, kPoseTol, "bolt y");
  c.near(bolt.z, handover.z, kPoseTol, "bolt z");
  return c;
}

Check sandbox_safety() {
  Check c;
  TempDir dir;
  const std::string fixture = dir.file("adversarial.json");
  write_text_file(fixture, json{{"completions",
                                 {{"spin", "def spin(robot):\n    x = 0\n    while x < 1:\n        x = x * 1\n"},
                                  {"wait forever",
                                   "def wait_forever(robot):\n    while 1 < 2:\n        time.sleep(0.01)\n"},
                                  {"press the red button",
                                   "def press_the_red_button(robot):\n    robot.set_digital_output(1, True)\n"},
                                  {"use a list", "def use_a_list(robot):\n    xs = [1, 2]\n    robot.go()\n"},
                                  {"import os", "import os\ndef import_os(robot):\n    robot.go()\n"},
                                  {"use lambda", "def use_lambda(robot):\n    f = lambda: 1\n"},
                                  {"subscript",
                                   "def subscript(robot):\n    p = robot.get_pose()\n    x = p[0]\n"}}}}
                                   .dump());
  const double deadline = 1.0;
  TempDir stage;
  Runtime rt = runtime_with(stage, [&](SessionConfig& cfg) {
    cfg.llm.fixture = fixture;
    cfg.time_dilation = 1.0;
    cfg.limits.wall_deadline_s = deadline;
    cfg.limits.max_loop_iterations = 1000000000;
    cfg.limits.max_steps = 1000000000000ULL;
  });

  auto t0 = std::chrono::steady_clock::now();
  CommandResult r = run(rt, "Spin.");
  double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  c.expect(r.report.status == ExecutionStatus::timeout, "busy loop: " + std::string(to_string(r.report.status)));
  c.expect(elapsed <= deadline + 0.5, "busy loop halted after " + std::to_string(elapsed) + " s");

  t0 = std::chrono::steady_clock::now();
  r = run(rt, "Wait forever.");
  elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  c.expect(r.report.status == ExecutionStatus::timeout, "sleep loop: " + std::string(to_string(r.report.status)));
  c.expect(elapsed <= deadline + 0.5, "sleep loop halted after " + std::to_string(elapsed) + " s");

  const WorldModel before = rt.world->snapshot();
  r = run(rt, "Press the red button.");
  c.expect(r.report.status == ExecutionStatus::static_check_failed,
           "set_digital_output: " + std::string(to_string(r.report.status)));
  c.expect(r.report.undefined_names == std::vector<std::string>{"set_digital_output"}, "undefined name reported");
  c.expect(rt.world->snapshot() == before, "static check failure mutated the world");
  for (const char* u : {"Use a list.", "Import os.", "Use lambda.", "Subscript."}) {
    r = run(rt, u);
    c.expect(r.report.status == ExecutionStatus::parse_error,
             std::string(u) + ": " + std::string(to_string(r.report.status)));
    c.expect(rt.world->snapshot() == before, std::string(u) + " mutated the world");
  }
  return c;
}

struct SuiteRun {
  std::vector<bench::RunRecord> records;
  bench::Summary summary;
};

SuiteRun run_bench(const std::string& fixture, int reps) {
  TempDir dir;
  SessionConfig cfg = SessionConfig::load(testing::config("bench.json"));
  if (!fixture.empty()) cfg.llm.fixture = fixture;
  Runtime rt = open_runtime(cfg, dir.str());
  bench::SuiteOptions opts;
  opts.repetitions = reps;
  opts.limits = cfg.limits;
  opts.max_rounds = cfg.llm.max_rounds;
  SuiteRun out;
  out.records =
      bench::run_suite(bench::load_cases(testing::data("bench/cases.jsonl")), opts, *rt.client, *rt.world,
                       *rt.bank, rt.preamble);
  out.summary = bench::summarize(out.records);
  return out;
}

Check bench_harness(SuiteRun& first) {
  Check c;
  first = run_bench("", 10);
  c.expect(first.records.size() == 500, std::to_string(first.records.size()) + " records");
  c.expect(first.summary.cases.size() == 50, "50 commands");
  c.expect(first.summary.success_rate == 1.0, "success rate " + format_float(first.summary.success_rate));
  std::map<int, std::vector<double>> lat;
  for (const auto& r : first.records) lat[r.case_id].push_back(r.generation_latency_s);
  for (const auto& cs : first.summary.cases) {
    const auto& xs = lat[cs.case_id];
    long double sum = 0;
    for (double x : xs) sum += x;
    const long double m = sum / xs.size();
    long double ss = 0;
    for (double x : xs) ss += (x - m) * (x - m);
    const long double sd = xs.size() > 1 ? std::sqrt(ss / (xs.size() - 1)) : 0;
    c.near(cs.mean_latency_s, static_cast<double>(m), kStatTol, "case " + std::to_string(cs.case_id) + " mean");
    c.near(cs.stddev_latency_s, static_cast<double>(sd), kStatTol, "case " + std::to_string(cs.case_id) + " sigma");
  }
  const SuiteRun broken = run_bench(testing::data("bench/mock_completions_broken.json"), 10);
  c.expect(broken.summary.passes == 39, std::to_string(broken.summary.passes) + " of 50 pass on the broken fixture");
  c.expect(broken.summary.success_rate == 0.78, "broken rate " + format_float(broken.summary.success_rate));
  return c;
}

// CSV without the timestamp and latency columns.
std::string stable_csv(std::vector<bench::RunRecord> records) {
  for (auto& r : records) {
    r.timestamp.clear();
    r.generation_latency_s = 0.0;
  }
  return bench::records_csv(records);
}

Check determinism(const SuiteRun& first) {
  Check c;
  const SuiteRun second = run_bench("", 10);
  c.expect(!first.records.empty(), "first run missing");
  c.expect(stable_csv(first.records) == stable_csv(second.records), "CSV differs between runs");
  return c;
}

}  // namespace

int main() {
  int failed = 0;
  auto report = [&](const std::string& name, const std::function<Check()>& fn) {
    Check c;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      c = fn();
    } catch (const std::exception& e) {
      c.failures.push_back(std::string("exception: ") + e.what());
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << (c.failures.empty() ? "PASS " : "FAIL ") << name << " (" << format_float(std::round(s * 100) / 100)
              << " s)\n";
    for (std::size_t i = 0; i < c.failures.size() && i < 10; ++i) std::cout << "    " << c.failures[i] << "\n";
    if (!c.failures.empty()) ++failed;
    std::cout.flush();
  };
  SuiteRun first;
  report("golden listings end to end", golden_listings);
  report("hierarchical generation", hierarchical_generation);
  report("policy round trip", policy_round_trip);
  report("teaching equivalence", teaching_equivalence);
  report("pump assembly demo", pump_demo);
  report("sandbox safety", sandbox_safety);
  report("bench harness", [&] { return bench_harness(first); });
  report("determinism", [&] { return determinism(first); });
  std::cout << (failed == 0 ? "all criteria passed" : std::to_string(failed) + " criteria failed") << "\n";
  return failed == 0 ? 0 : 1;
}
