#include <doctest.h>

#include <cmath>
#include <random>
#include <thread>

#include "lmpvc/executor.hpp"
#include "lmpvc/script/parser.hpp"
#include "lmpvc/world_io.hpp"
#include "support.hpp"

using namespace lmpvc;
using script::ParseError;
using script::parse_program;

namespace {

WorldModel pump() { return load_world(testing::data("worlds/pump_assembly.json")); }

ExecutionReport run(World& world, const std::string& src, const std::string& entry,
                    ExecutionLimits limits = {}, const FunctionBindings& bindings = {}) {
  return run_source(src, entry, bindings, world, limits, ExecutionOptions{0.0, nullptr});
}

int parse_error_line(const std::string& src) {
  try {
    parse_program(src);
  } catch (const ParseError& e) {
    return e.line();
  }
  return 0;
}

}  // namespace

TEST_CASE("parser accepts the supported subset") {
  const auto p = parse_program(
      "def a(robot):\n"
      "    x = 1\n"
      "    x += 2.5\n"
      "    (pose, found) = robot.find('pipe')\n"
      "    if (not found) and x > 1 or x == 2:\n"
      "        robot.say(\"no\")\n"
      "    elif x <= 0:\n"
      "        pass_it(robot)\n"
      "    else:\n"
      "        robot.say('yes')\n"
      "    for i in range(3):\n"
      "        x -= i * 2 / 4\n"
      "    while x < 10:\n"
      "        x += 1\n"
      "\n"
      "def pass_it(robot):\n"
      "    robot.say(-1)\n");
  CHECK(p.definitions.size() == 2);
  CHECK(p.find("a") != nullptr);
  CHECK(p.find("pass_it") != nullptr);
  CHECK(p.find("b") == nullptr);
}

TEST_CASE("parser rejects constructs outside the subset with the offending line") {
  CHECK(parse_error_line("import os\n") == 1);
  CHECK(parse_error_line("def f(robot):\n    import os\n") == 2);
  CHECK(parse_error_line("def f(robot):\n    x = [1, 2]\n") == 2);
  CHECK(parse_error_line("def f(robot):\n    x = {}\n") == 2);
  CHECK(parse_error_line("def f(robot):\n    x = lambda: 1\n") == 2);
  CHECK(parse_error_line("def f(robot):\n    x = 1\n    exec('x')\n    y = x[0]\n") == 4);
  CHECK(parse_error_line("def f(robot):\n    class A:\n        pass\n") == 2);
  CHECK(parse_error_line("def f(robot, other):\n    robot.go()\n") == 1);
  CHECK(parse_error_line("def f(robot):\n    def g(robot):\n        robot.go()\n") == 2);
  CHECK(parse_error_line("def f(robot):\n    robot.go(speed=1)\n") == 2);
  CHECK(parse_error_line("def f(robot):\n    for x in [1]:\n        robot.go()\n") == 2);
  CHECK(parse_error_line("x = 1\n") == 1);
  CHECK(parse_error_line("def f(robot):\n    x = 2 ** 3\n") == 2);
  CHECK(parse_error_line("def f(robot):\n    robot.say(\"unterminated)\n") == 2);
  CHECK(parse_error_line("def f(robot):\n    while True:\n        break\n") == 3);
}

TEST_CASE("static check resolves names against every source") {
  FunctionBindings bindings;
  const auto policy = parse_program("def handover(robot):\n    robot.open_hand()\n");
  bindings["handover"] = BoundFunction{policy.functions.at("handover"), "handover"};

  const auto ok = parse_program(
      "def f(robot):\n"
      "    handover(robot)\n"
      "    g(robot)\n"
      "    x = math.cos(math.pi) + abs(-1) + min(1, 2)\n"
      "    t = time.time()\n"
      "def g(robot):\n"
      "    robot.say('g')\n");
  CHECK(static_check(ok, bindings).ok());

  const auto bad = parse_program(
      "def f(robot):\n"
      "    robot.set_digital_output(0, True)\n"
      "    undefined_helper(robot)\n"
      "    x = os.path\n"
      "    y = math.tan(1)\n"
      "    robot.say(z)\n");
  const auto r = static_check(bad, bindings);
  CHECK_FALSE(r.ok());
  for (const char* name : {"set_digital_output", "undefined_helper", "os", "tan", "z"}) {
    CHECK(std::find(r.undefined.begin(), r.undefined.end(), name) != r.undefined.end());
  }
  CHECK(r.problems.size() >= 5);
}

TEST_CASE("detect_undefined_calls lists only unresolved call targets") {
  const auto p = parse_program(
      "def top(robot):\n"
      "    helper_a(robot)\n"
      "    helper_b(robot)\n"
      "    helper_a(robot)\n"
      "    robot.go()\n"
      "def helper_b(robot):\n"
      "    robot.go()\n");
  CHECK(detect_undefined_calls(p, {}) == std::vector<std::string>{"helper_a"});
}

TEST_CASE("reachable functions follow program and bound definitions") {
  FunctionBindings bindings;
  const auto lib = parse_program(
      "def full_check(robot):\n    check_parts(robot)\n"
      "def check_parts(robot):\n    parts_check(robot)\n"
      "def parts_check(robot):\n    robot.say('x')\n"
      "def unused(robot):\n    robot.say('y')\n");
  for (const auto& [name, def] : lib.functions) bindings[name] = BoundFunction{def, "lib"};
  const auto p = parse_program("def go_now(robot):\n    full_check(robot)\n");
  const auto r = reachable_functions(p, bindings, "go_now");
  CHECK(r == std::set<std::string>{"go_now", "full_check", "check_parts", "parts_check"});
}

TEST_CASE("interpreter moves the world and records motion and speech") {
  World world(pump());
  const auto r = run(world,
                     "def f(robot):\n"
                     "    waypoint = robot.get_pose()\n"
                     "    waypoint.position.z -= 0.05\n"
                     "    robot.add_waypoint(waypoint)\n"
                     "    robot.go()\n"
                     "    robot.say('done')\n"
                     "    robot.say(1.5)\n"
                     "    robot.say(2)\n",
                     "f");
  REQUIRE(r.status == ExecutionStatus::ok);
  CHECK(world.get_pose().position.z == doctest::Approx(0.45).epsilon(1e-12));
  CHECK(r.motion_log.size() == 1);
  CHECK(r.say_outputs == std::vector<std::string>{"done", "1.5", "2"});
  CHECK(r.error_detail.empty());
}

TEST_CASE("pose values alias like the host language") {
  World world(pump());
  const auto r = run(world,
                     "def f(robot):\n"
                     "    a = robot.get_pose()\n"
                     "    b = a\n"
                     "    p = a.position\n"
                     "    p.x = 0.1\n"
                     "    robot.say(b.position.x)\n"
                     "    c = robot.get_pose()\n"
                     "    robot.say(c.position.x)\n",
                     "f");
  REQUIRE(r.status == ExecutionStatus::ok);
  CHECK(r.say_outputs == std::vector<std::string>{"0.1", "0.4"});
}

TEST_CASE("arithmetic follows Python semantics") {
  World world(pump());
  const auto r = run(world,
                     "def f(robot):\n"
                     "    robot.say(7 / 2)\n"
                     "    robot.say(6 / 3)\n"
                     "    robot.say(2 * 3 + 1)\n"
                     "    robot.say(round(2.675, 2))\n"
                     "    robot.say(round(2.5))\n"
                     "    robot.say(0.1 + 0.2)\n"
                     "    robot.say(max(1, 2.5))\n"
                     "    robot.say(1 < 2)\n"
                     "    robot.say('a' + 'b')\n"
                     "    robot.say(len('abc'))\n"
                     "    robot.say(round(0.125, 2))\n"
                     "    robot.say(round(1234.5, -1))\n",
                     "f");
  REQUIRE(r.status == ExecutionStatus::ok);
  CHECK(r.say_outputs ==
        std::vector<std::string>{"3.5", "2.0", "7", "2.67", "2", "0.30000000000000004", "2.5", "True", "ab", "3", "0.12", "1230.0"});
}

TEST_CASE("format_float matches Python repr") {
  CHECK(format_float(0.05) == "0.05");
  CHECK(format_float(2.0) == "2.0");
  CHECK(format_float(1e-05) == "1e-05");
  CHECK(format_float(-0.2) == "-0.2");
  CHECK(format_float(1e16) == "1e+16");
  CHECK(format_float(123456789.0) == "123456789.0");
  CHECK(format_float(0.1 + 0.2) == "0.30000000000000004");
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> d(-1e6, 1e6);
  for (int i = 0; i < 500; ++i) {
    const double v = d(rng);
    CHECK(std::stod(format_float(v)) == v);
  }
}

TEST_CASE("runtime errors carry the line") {
  World world(pump());
  auto r = run(world, "def f(robot):\n    x = 1\n    y = x / 0\n", "f");
  CHECK(r.status == ExecutionStatus::runtime_error);
  CHECK(r.error_line == 3);
  r = run(world, "def f(robot):\n    robot.go()\n", "f");
  CHECK(r.status == ExecutionStatus::runtime_error);
  r = run(world, "def f(robot):\n    robot.say(robot.get_pose())\n", "f");
  CHECK(r.status == ExecutionStatus::runtime_error);
  r = run(world, "def f(robot):\n    f(robot)\n", "f");
  CHECK(r.status == ExecutionStatus::runtime_error);
}

TEST_CASE("unbounded loops time out") {
  World world(pump());
  ExecutionLimits limits;
  limits.max_loop_iterations = 1000;
  auto r = run(world, "def f(robot):\n    x = 0\n    while True:\n        x += 1\n", "f", limits);
  CHECK(r.status == ExecutionStatus::timeout);

  limits.max_loop_iterations = 1000000000;
  limits.max_steps = 1000000000;
  limits.wall_deadline_s = 0.3;
  const auto t0 = std::chrono::steady_clock::now();
  r = run(world, "def f(robot):\n    x = 0\n    while True:\n        x += 1\n", "f", limits);
  const double took = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  CHECK(r.status == ExecutionStatus::timeout);
  CHECK(took < 0.3 + 0.5);
}

TEST_CASE("virtual clock: time.time advances by the full sleep") {
  World world(pump());
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = run_source(
      "def f(robot):\n"
      "    start = time.time()\n"
      "    time.sleep(5.0)\n"
      "    robot.say((time.time() - start) >= 5.0)\n",
      "f", {}, world, {}, ExecutionOptions{0.01, nullptr});
  REQUIRE(r.status == ExecutionStatus::ok);
  CHECK(r.say_outputs == std::vector<std::string>{"True"});
  CHECK(std::chrono::steady_clock::now() - t0 < std::chrono::seconds(2));
}

TEST_CASE("abort interrupts sleeps and loops") {
  World world(pump());
  AbortSignal abort;
  std::thread t([&] {
    std::this_thread::sleep_for(std::chrono::milliseconds(100));
    abort.raise();
  });
  const auto r = run_source("def f(robot):\n    time.sleep(30)\n", "f", {}, world, {},
                            ExecutionOptions{1.0, &abort});
  t.join();
  CHECK(r.status == ExecutionStatus::aborted);
}

TEST_CASE("failed static check leaves the world untouched") {
  World world(pump());
  const WorldModel before = world.snapshot();
  auto r = run(world,
               "def f(robot):\n"
               "    waypoint = robot.get_pose()\n"
               "    waypoint.position.z -= 0.05\n"
               "    robot.add_waypoint(waypoint)\n"
               "    robot.go()\n"
               "    robot.set_digital_output(0, True)\n",
               "f");
  CHECK(r.status == ExecutionStatus::static_check_failed);
  CHECK(world.snapshot() == before);
  r = run(world, "def f(robot):\n    robot.go()\n    import os\n", "f");
  CHECK(r.status == ExecutionStatus::parse_error);
  CHECK(world.snapshot() == before);
}

TEST_CASE("parsing never crashes on mutated programs (property)") {
  const std::string base =
      "def f(robot):\n"
      "    (p, found) = robot.find('pipe')\n"
      "    if (not found):\n"
      "        robot.say(\"none\")\n"
      "    for i in range(3):\n"
      "        p.position.x += 0.1 * i\n";
  const std::string junk = "()[]{}:=+-*/.,'\"\n #\\abc123";
  std::mt19937 rng(99);
  World world(pump());
  for (int i = 0; i < 1000; ++i) {
    std::string s = base;
    const int edits = 1 + static_cast<int>(rng() % 4);
    for (int k = 0; k < edits; ++k) {
      const std::size_t pos = rng() % s.size();
      switch (rng() % 3) {
        case 0: s.erase(pos, 1); break;
        case 1: s.insert(pos, 1, junk[rng() % junk.size()]); break;
        default: s[pos] = junk[rng() % junk.size()]; break;
      }
    }
    ExecutionLimits limits;
    limits.wall_deadline_s = 1.0;
    const auto r = run(world, s, "f", limits);
    CHECK(static_cast<int>(r.status) >= 0);
  }
}
