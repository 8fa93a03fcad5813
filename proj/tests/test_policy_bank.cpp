#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "lmpvc/policy_bank.hpp"
#include "lmpvc/text.hpp"
#include "support.hpp"

using namespace lmpvc;
namespace fs = std::filesystem;
using testing::TempDir;

namespace {

std::string fixture_text(const std::string& name) { return read_text_file(testing::fixture("policies/" + name)); }

int parse_error_line(const std::string& text) {
  try {
    parse_policy_file(text);
  } catch (const PolicyParseError& e) {
    return e.line();
  }
  return -1;
}

int count(const std::string& hay, const std::string& needle) {
  int n = 0;
  for (std::size_t pos = hay.find(needle); pos != std::string::npos; pos = hay.find(needle, pos + 1)) ++n;
  return n;
}

LMP step(const std::string& utterance, const std::string& code, const std::string& top) {
  LMP l;
  l.utterance = utterance;
  l.code_text = code;
  l.top_level_function = top;
  return l;
}

const char* kMinimal =
    "#BODY\n"
    "def wiggle(robot):\n"
    "    robot.say(\"wiggle\")\n"
    "# HINT\n"
    "# define function: wiggle a bit\n"
    "def wiggle_a_bit(robot):\n"
    "    wiggle(robot)\n"
    "# end of function\n";

}  // namespace

TEST_CASE("handover policy fields") {
  const Policy p = parse_policy_file(fixture_text("handover.policy"));
  CHECK(p.name == "handover");
  CHECK(p.imports == std::vector<std::string>{"time"});
  CHECK(p.entry_function == "handover");
  CHECK(p.hint_utterance == "give me the held item");
  CHECK(p.alias_function == "give_me_the_held_item");
  CHECK_FALSE(p.learned);
  CHECK(p.body_functions() == std::vector<std::string>{"handover"});
}

TEST_CASE("fixture policies survive a round trip") {
  for (const char* f : {"handover.policy", "parts_check.policy", "full_check.policy"}) {
    CAPTURE(f);
    const Policy p = parse_policy_file(fixture_text(f));
    const std::string text = serialize_policy(p);
    const Policy again = parse_policy_file(text);
    CHECK(again == p);
    CHECK(serialize_policy(again) == text);
  }
  const Policy learned = parse_policy_file(fixture_text("full_check.policy"));
  CHECK(learned.learned);
}

TEST_CASE("serialization is canonical under whitespace noise (property)") {
  std::mt19937 rng(5);
  const Policy base = parse_policy_file(fixture_text("handover.policy"));
  const std::string canonical = serialize_policy(base);
  for (int i = 0; i < 100; ++i) {
    std::string noisy;
    for (const auto& line : split_lines(canonical)) {
      noisy += line;
      for (unsigned k = rng() % 3; k > 0; --k) noisy += ' ';
      noisy += (rng() % 2) ? "\r\n" : "\n";
      // blank lines outside the body are not content
      if (rng() % 2 == 0 && (line == "import time" || line == "# end of function")) noisy += "\n";
    }
    const Policy p = parse_policy_file(noisy);
    CHECK(p == base);
    CHECK(serialize_policy(p) == canonical);
  }
}

TEST_CASE("tag errors carry line numbers") {
  const std::string ok = kMinimal;
  CHECK_NOTHROW(parse_policy_file(ok));
  CHECK_THROWS_AS(parse_policy_file("def f(robot):\n    pass\n"), PolicyParseError);
  CHECK(parse_error_line("#BODY\ndef f(robot):\n    robot.go()\n") == 0);
  CHECK(parse_error_line(ok + "#BODY\n") == 9);
  CHECK(parse_error_line("# HINT\n" + ok) == 5);  // the second # HINT
  CHECK(parse_error_line("import os\n" + ok) == 1);
  CHECK(parse_error_line("print(1)\n" + ok) == 1);
  // alias not named after the hint
  std::string misnamed = ok;
  misnamed.replace(misnamed.find("def wiggle_a_bit"), 16, "def wiggle_a_lot");
  CHECK(parse_error_line(misnamed) == 6);
  // entry not in body
  std::string dangling = ok;
  dangling.replace(dangling.find("    wiggle(robot)"), 17, "    jiggle(robot)");
  CHECK(parse_error_line(dangling) == 6);
  CHECK(parse_error_line(ok + "extra\n") == 9);
  std::string unterminated = ok;
  unterminated.erase(unterminated.find("# end of function"));
  CHECK(parse_error_line(unterminated) > 0);
}

TEST_CASE("body syntax errors are reported at file lines") {
  const std::string text =
      "import math\n"
      "#BODY\n"
      "def f(robot):\n"
      "    x = [1, 2]\n"
      "# HINT\n"
      "# define function: f\n"
      "def f(robot):\n"
      "    f(robot)\n"
      "# end of function\n";
  CHECK(parse_error_line(text) == 4);
}

TEST_CASE("prompt extension deduplicates imports and omits bodies") {
  TempDir dir;
  const PolicyRegistry reg = load_registry(stage_registry(testing::data("policies/registry.json"), dir.str()));
  REQUIRE(reg.errors.empty());
  const std::string ext = prompt_extension(reg);
  CHECK(count(ext, "import time\n") == 1);
  CHECK(ext.rfind("import time\n", 0) == 0);
  CHECK(count(ext, "# define function: ") == static_cast<int>(reg.entries.size()));
  CHECK(ext.find("robot.open_hand") == std::string::npos);
  CHECK(ext.find("def handover(") == std::string::npos);
  CHECK(ext.find("def give_me_the_held_item(robot):\n    handover(robot)\n# end of function\n") !=
        std::string::npos);
}

TEST_CASE("execution bindings cover body and alias functions") {
  TempDir dir;
  PolicyRegistry reg = load_registry(stage_registry(testing::data("policies/registry.json"), dir.str()));
  const FunctionBindings b = execution_bindings(reg);
  CHECK(b.count("handover") == 1);
  CHECK(b.count("give_me_the_held_item") == 1);
  CHECK(b.at("handover").origin == "handover");

  Policy dup = parse_policy_file(kMinimal);
  dup.name = "other";
  dup.body_source = "def handover(robot):\n    robot.go()\n";
  dup.entry_function = "handover";
  reg.entries.push_back({"other", "", true});
  reg.loaded["other"] = dup;
  CHECK_THROWS_AS(execution_bindings(reg), PolicyConflictError);
  reg.entries.back().enabled = false;
  CHECK_NOTHROW(execution_bindings(reg));
}

TEST_CASE("registry loading reports broken entries") {
  TempDir dir;
  write_text_file(dir.file("good.policy"), kMinimal);
  write_text_file(dir.file("bad.policy"), "#BODY\n");
  write_text_file(dir.file("registry.json"),
                  R"({"policies":[{"name":"good","file":"good.policy"},)"
                  R"({"name":"bad","file":"bad.policy"},{"name":"gone","file":"gone.policy"},)"
                  R"({"name":"off","file":"bad.policy","enabled":false}]})");
  const PolicyRegistry reg = load_registry(dir.file("registry.json"));
  CHECK(reg.loaded.count("good") == 1);
  CHECK(reg.errors.count("bad") == 1);
  CHECK(reg.errors.count("gone") == 1);
  CHECK(reg.errors.count("off") == 0);
  CHECK(reg.loaded.count("off") == 0);

  write_text_file(dir.file("dup.json"),
                  R"({"policies":[{"name":"a","file":"x"},{"name":"a","file":"y"}]})");
  CHECK_THROWS_AS(load_registry(dir.file("dup.json")), PolicyError);
  CHECK_THROWS_AS(load_registry(dir.file("missing.json")), PolicyError);
  write_text_file(dir.file("junk.json"), "{");
  CHECK_THROWS_AS(load_registry(dir.file("junk.json")), PolicyError);
}

TEST_CASE("finalize_recording builds the wrapper") {
  RecordingSession rec = begin_recording();
  record_step(rec, step("check parts", "def check_parts(robot):\n    robot.say(\"a\")\n", "check_parts"));
  record_step(rec, step("check bolts",
                        "def helper(robot):\n    robot.go()\n"
                        "def check_bolts(robot):\n    helper(robot)\n",
                        "check_bolts"));
  record_step(rec, step("check parts again", "def check_parts(robot):\n    robot.say(\"a\")\n", "check_parts"));
  const Policy p = finalize_recording(rec, "Full check", "Do a full inspection.", {});
  CHECK(p.name == "full_check");
  CHECK(p.entry_function == "full_check");
  CHECK(p.hint_utterance == "do a full inspection");
  CHECK(p.alias_function == "do_a_full_inspection");
  CHECK(p.learned);
  CHECK(p.body_functions() == std::vector<std::string>{"check_parts", "helper", "check_bolts", "full_check"});
  CHECK(p.body_source.find("# Generated code based on 1st command\n") != std::string::npos);
  CHECK(p.body_source.find("# Generated code based on 3rd command\n") != std::string::npos);
  CHECK(p.body_source.find(std::string(kLearnedMarker) +
                           "\ndef full_check(robot):\n    check_parts(robot)\n    check_bolts(robot)\n"
                           "    check_parts(robot)\n") != std::string::npos);
  CHECK(parse_policy_file(serialize_policy(p)) == p);
}

TEST_CASE("finalize_recording rejects bad input") {
  RecordingSession empty = begin_recording();
  CHECK_THROWS_AS(finalize_recording(empty, "x", "y", {}), PolicyError);
  RecordingSession rec = begin_recording();
  record_step(rec, step("a", "def a(robot):\n    robot.go()\n", "a"));
  CHECK_THROWS_AS(finalize_recording(rec, "?!", "y", {}), PolicyError);
  CHECK_THROWS_AS(finalize_recording(rec, "x", "...", {}), PolicyError);
  CHECK_THROWS_AS(finalize_recording(rec, "x", "x", {}), PolicyError);
  CHECK_THROWS_AS(finalize_recording(rec, "x", "y", {"x"}), PolicyError);
  CHECK_THROWS_AS(finalize_recording(rec, "x", "y", {"y"}), PolicyError);
  CHECK_THROWS_AS(finalize_recording(rec, "a", "y", {}), PolicyError);
  record_step(rec, step("a2", "def a(robot):\n    robot.stop()\n", "a"));
  CHECK_THROWS_AS(finalize_recording(rec, "x", "y", {}), PolicyError);
}

TEST_CASE("policy bank add, put, enable and remove") {
  TempDir dir;
  PolicyBank bank(load_registry(stage_registry(testing::data("policies/registry.json"), dir.str())), dir.str());
  const std::size_t before = bank.snapshot().entries.size();

  const Policy w = parse_policy_file(kMinimal);
  bank.add(w);
  CHECK(fs::exists(dir.file("wiggle.policy")));
  CHECK(bank.get("wiggle").has_value());
  CHECK(bank.prompt_extension().find("# define function: wiggle a bit") != std::string::npos);
  CHECK_THROWS_AS(bank.add(w), PolicyError);

  // the saved registry reloads with the new entry
  const PolicyRegistry reloaded = load_registry(dir.file("registry.json"));
  CHECK(reloaded.entries.size() == before + 1);
  CHECK(reloaded.loaded.at("wiggle") == *bank.get("wiggle"));

  // a different policy reusing a bound function name is refused
  Policy clash = w;
  clash.name = "clash";
  CHECK_THROWS_AS(bank.add(clash), PolicyError);

  std::string changed = kMinimal;
  changed.replace(changed.find("\"wiggle\""), 8, "\"wobble\"");
  CHECK_FALSE(bank.put("wiggle", changed));
  CHECK(read_text_file(dir.file("wiggle.policy")).find("wobble") != std::string::npos);
  CHECK_THROWS_AS(bank.put("wiggle", "#BODY\n"), PolicyParseError);

  CHECK(bank.set_enabled("wiggle", false));
  CHECK_FALSE(bank.get("wiggle").has_value());
  CHECK(bank.bound_names().count("wiggle_a_bit") == 0);
  CHECK(bank.set_enabled("wiggle", true));
  CHECK(bank.bound_names().count("wiggle_a_bit") == 1);
  CHECK_FALSE(bank.set_enabled("nope", true));

  CHECK(bank.remove("wiggle"));
  CHECK_FALSE(bank.remove("wiggle"));
  CHECK(fs::exists(dir.file("wiggle.policy")));
  CHECK(load_registry(dir.file("registry.json")).entries.size() == before);

  std::string fresh = kMinimal;
  for (std::size_t pos; (pos = fresh.find("wiggle")) != std::string::npos;) fresh.replace(pos, 6, "jiggle");
  CHECK(bank.put("jiggle", fresh));
  CHECK(bank.get("jiggle").has_value());
}

TEST_CASE("staging copies policies without touching originals") {
  TempDir dir;
  const std::string original = read_text_file(testing::data("policies/registry.json"));
  const std::string staged = stage_registry(testing::data("policies/registry.json"), dir.str());
  CHECK(fs::path(staged).parent_path() == fs::path(dir.str()));
  const PolicyRegistry src = load_registry(testing::data("policies/registry.json"));
  const PolicyRegistry reg = load_registry(staged);
  REQUIRE(reg.entries.size() == src.entries.size());
  for (const auto& [name, p] : src.loaded) CHECK(reg.loaded.at(name) == p);
  CHECK(read_text_file(testing::data("policies/registry.json")) == original);
}
