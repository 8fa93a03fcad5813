#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "lmpvc/bench.hpp"
#include "lmpvc/script/parser.hpp"
#include "lmpvc/text.hpp"
#include "lmpvc/world_io.hpp"
#include "support.hpp"

using namespace lmpvc;
using namespace lmpvc::bench;
using nlohmann::json;
using testing::TempDir;

namespace {

CommandCase make_case(const std::string& oracle_json) {
  return parse_case(json{{"id", 1}, {"utterance", "u"}, {"oracle", json::parse(oracle_json)}});
}

WorldModel pump() { return load_world(testing::data("worlds/pump_assembly.json")); }

LMP program(const std::string& code, const std::string& top) {
  LMP l;
  l.code_text = code;
  l.top_level_function = top;
  return l;
}

// Two-pass mean and Bessel-corrected deviation in long double.
std::pair<long double, long double> reference_stats(const std::vector<double>& xs) {
  long double sum = 0;
  for (double x : xs) sum += x;
  const long double m = sum / xs.size();
  if (xs.size() < 2) return {m, 0};
  long double ss = 0;
  for (double x : xs) ss += (x - m) * (x - m);
  return {m, std::sqrt(ss / (xs.size() - 1))};
}

}  // namespace

TEST_CASE("case parsing validates oracle parameters") {
  const CommandCase c = make_case(R"({"kind":"pose_delta","dz":-0.05})");
  CHECK(c.oracle.kind == OracleKind::pose_delta);
  CHECK(c.oracle.params.contains("kind") == false);
  CHECK(c.oracle.params["dz"] == -0.05);
  CHECK_THROWS(make_case(R"({"kind":"say_matches"})"));
  CHECK_THROWS(make_case(R"({"kind":"calls_policy"})"));
  CHECK_THROWS(make_case(R"({"kind":"world_predicate"})"));
  CHECK_THROWS(make_case(R"({"kind":"code_contains"})"));
  CHECK_THROWS(make_case(R"({"kind":"vibes"})"));
  CHECK_THROWS(parse_case(json{{"id", 1}, {"utterance", "  "}, {"oracle", {{"kind", "pose_delta"}}}}));
}

TEST_CASE("case files report the failing line") {
  TempDir dir;
  write_text_file(dir.file("ok.jsonl"),
                  "{\"id\":1,\"utterance\":\"a\",\"oracle\":{\"kind\":\"pose_delta\"}}\n\n"
                  "{\"id\":2,\"utterance\":\"b\",\"oracle\":{\"kind\":\"code_contains\",\"text\":\"x\"},"
                  "\"tags\":[\"t\"]}\n");
  const auto cases = load_cases(dir.file("ok.jsonl"));
  REQUIRE(cases.size() == 2);
  CHECK(cases[1].tags == std::vector<std::string>{"t"});

  write_text_file(dir.file("dup.jsonl"),
                  "{\"id\":1,\"utterance\":\"a\",\"oracle\":{\"kind\":\"pose_delta\"}}\n"
                  "{\"id\":1,\"utterance\":\"b\",\"oracle\":{\"kind\":\"pose_delta\"}}\n");
  CHECK_THROWS_WITH_AS(load_cases(dir.file("dup.jsonl")), doctest::Contains("dup.jsonl:2: duplicate id 1"),
                       std::invalid_argument);
  write_text_file(dir.file("junk.jsonl"), "\n\n{oops\n");
  CHECK_THROWS_WITH_AS(load_cases(dir.file("junk.jsonl")), doctest::Contains("junk.jsonl:3:"),
                       std::invalid_argument);
  CHECK_THROWS_AS(load_cases(dir.file("missing.jsonl")), std::invalid_argument);
}

TEST_CASE("shipped corpus") {
  const auto cases = load_cases(testing::data("bench/cases.jsonl"));
  CHECK(cases.size() == 50);
  for (std::size_t i = 0; i < cases.size(); ++i) CHECK(cases[i].id == static_cast<int>(i) + 1);
}

TEST_CASE("pose_delta oracle") {
  const WorldModel before = pump();
  WorldModel after = before;
  after.ee_pose.position.z -= 0.05;
  const ExecutionReport ok;
  const CommandCase c = make_case(R"({"kind":"pose_delta","dz":-0.05})");
  CHECK(judge(c, ok, {}, {}, {}, before, after).pass);
  after.ee_pose.position.x += 2e-6;
  CHECK_FALSE(judge(c, ok, {}, {}, {}, before, after).pass);
  CHECK(judge(make_case(R"({"kind":"pose_delta","dz":-0.05,"tolerance":1e-5})"), ok, {}, {}, {}, before, after)
            .pass);

  WorldModel turned = before;
  turned.ee_pose.orientation = Quaternion::from_yaw(-33.0 * M_PI / 180.0) * before.ee_pose.orientation;
  CHECK(judge(make_case(R"({"kind":"pose_delta","dyaw_deg":-33})"), ok, {}, {}, {}, before, turned).pass);
  CHECK_FALSE(judge(make_case(R"({"kind":"pose_delta","dyaw_deg":33})"), ok, {}, {}, {}, before, turned).pass);
  // wraps across +-180
  WorldModel half = before;
  half.ee_pose.orientation = Quaternion::from_yaw(M_PI) * before.ee_pose.orientation;
  CHECK(judge(make_case(R"({"kind":"pose_delta","dyaw_deg":-180})"), ok, {}, {}, {}, before, half).pass);

  ExecutionReport failed;
  failed.status = ExecutionStatus::timeout;
  failed.error_detail = "too slow";
  const Verdict v = judge(c, failed, {}, {}, {}, before, after);
  CHECK_FALSE(v.pass);
  CHECK(v.reason == "status timeout: too slow");
}

TEST_CASE("say_matches oracle") {
  ExecutionReport r;
  r.say_outputs = {"Hello", "I found the BIG bolt."};
  const WorldModel w = pump();
  CHECK(judge(make_case(R"({"kind":"say_matches","pattern":"found the big bolt"})"), r, {}, {}, {}, w, w).pass);
  CHECK(judge(make_case(R"({"kind":"say_matches","pattern":"^hello$"})"), r, {}, {}, {}, w, w).pass);
  CHECK_FALSE(judge(make_case(R"({"kind":"say_matches","pattern":"cover"})"), r, {}, {}, {}, w, w).pass);
}

TEST_CASE("calls_policy oracle needs a reachable call into the policy") {
  TempDir dir;
  const PolicyRegistry reg = load_registry(stage_registry(testing::data("policies/registry.json"), dir.str()));
  const FunctionBindings b = execution_bindings(reg);
  const WorldModel w = pump();
  const ExecutionReport ok;
  const CommandCase c = make_case(R"({"kind":"calls_policy","policy":"handover"})");
  CHECK(judge(c, ok, program("def go(robot):\n    handover(robot)\n", "go"), b, reg, w, w).pass);
  CHECK(judge(c, ok, program("def go(robot):\n    give_me_the_held_item(robot)\n", "go"), b, reg, w, w).pass);
  CHECK_FALSE(
      judge(c, ok, program("def unused(robot):\n    handover(robot)\ndef go(robot):\n    robot.go()\n", "go"), b,
            reg, w, w)
          .pass);
  // a local redefinition does not count
  CHECK_FALSE(judge(c, ok,
                    program("def handover(robot):\n    robot.go()\ndef go(robot):\n    handover(robot)\n", "go"),
                    b, reg, w, w)
                  .pass);
  CHECK_FALSE(judge(c, ok, std::nullopt, b, reg, w, w).pass);
}

TEST_CASE("world_predicate oracle") {
  WorldModel w = pump();
  const ExecutionReport ok;
  CHECK(judge(make_case(R"({"kind":"world_predicate","predicate":"gripper_open"})"), ok, {}, {}, {}, w, w).pass);
  CHECK_FALSE(
      judge(make_case(R"({"kind":"world_predicate","predicate":"gripper_closed"})"), ok, {}, {}, {}, w, w).pass);
  const CommandCase holding = make_case(R"({"kind":"world_predicate","predicate":"holding","object":"big_bolt"})");
  CHECK_FALSE(judge(holding, ok, {}, {}, {}, w, w).pass);
  WorldModel held = w;
  held.gripper = GripperState::closed;
  held.held_object = "big_bolt";
  CHECK(judge(holding, ok, {}, {}, {}, w, held).pass);

  const CommandCase at = make_case(
      R"({"kind":"world_predicate","predicate":"object_at","object":"big_bolt","location":"handover"})");
  WorldModel moved = w;
  moved.objects.at("big_bolt").pose.position = w.objects.at("handover").pose.position;
  CHECK(judge(at, ok, {}, {}, {}, w, moved).pass);
  moved.held_object = "big_bolt";
  CHECK_FALSE(judge(at, ok, {}, {}, {}, w, moved).pass);
  CHECK_FALSE(judge(at, ok, {}, {}, {}, w, w).pass);
  CHECK_FALSE(judge(make_case(R"({"kind":"world_predicate","predicate":"levitating"})"), ok, {}, {}, {}, w, w).pass);
}

TEST_CASE("code_contains oracle") {
  const WorldModel w = pump();
  const CommandCase c = make_case(R"({"kind":"code_contains","text":"robot.say"})");
  CHECK(judge(c, {}, program("def f(robot):\n    robot.say('x')\n", "f"), {}, {}, w, w).pass);
  CHECK_FALSE(judge(c, {}, program("def f(robot):\n    robot.go()\n", "f"), {}, {}, w, w).pass);
}

TEST_CASE("summary statistics match an independent computation (property)") {
  std::mt19937 rng(17);
  std::uniform_real_distribution<double> latency(0.001, 4.0);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<RunRecord> records;
    std::map<int, std::vector<double>> by_case;
    std::map<int, bool> first_pass;
    const int n_cases = 1 + static_cast<int>(rng() % 8);
    const int reps = 1 + static_cast<int>(rng() % 12);
    for (int c = n_cases; c >= 1; --c) {  // descending ids: order must follow appearance
      for (int rep = 1; rep <= reps; ++rep) {
        RunRecord r;
        r.case_id = c;
        r.repetition = rep;
        r.utterance = "case " + std::to_string(c);
        r.pass = rng() % 2 == 0;
        r.generation_latency_s = latency(rng);
        by_case[c].push_back(r.generation_latency_s);
        if (rep == 1) first_pass[c] = r.pass;
        records.push_back(r);
      }
    }
    const Summary s = summarize(records);
    CHECK(s.records == records.size());
    REQUIRE(s.cases.size() == static_cast<std::size_t>(n_cases));
    int passes = 0;
    for (std::size_t i = 0; i < s.cases.size(); ++i) {
      const CaseStats& cs = s.cases[i];
      CHECK(cs.case_id == n_cases - static_cast<int>(i));
      const auto [m, sd] = reference_stats(by_case[cs.case_id]);
      CHECK(std::abs(cs.mean_latency_s - static_cast<double>(m)) <= 1e-12);
      CHECK(std::abs(cs.stddev_latency_s - static_cast<double>(sd)) <= 1e-12);
      CHECK(cs.runs == static_cast<std::size_t>(reps));
      CHECK(cs.min_latency_s == *std::min_element(by_case[cs.case_id].begin(), by_case[cs.case_id].end()));
      CHECK(cs.passed == first_pass[cs.case_id]);
      passes += first_pass[cs.case_id] ? 1 : 0;
    }
    CHECK(s.passes == static_cast<std::size_t>(passes));
    CHECK(s.success_rate == doctest::Approx(static_cast<double>(passes) / n_cases));
  }
  CHECK(mean({}) == 0.0);
  CHECK(sample_stddev({3.0}) == 0.0);
  CHECK(sample_stddev({1.0, 2.0, 3.0, 4.0}) == doctest::Approx(std::sqrt(5.0 / 3.0)));
}

TEST_CASE("records csv round trip with quoting") {
  std::vector<RunRecord> records;
  RunRecord a;
  a.case_id = 3;
  a.repetition = 2;
  a.utterance = "Move, then \"say\" hi";
  a.status = ExecutionStatus::static_check_failed;
  a.reason = "line 1: call to undefined function 'x'\nsecond line";
  a.generation_latency_s = 0.1 + 0.2;
  a.timestamp = "2024-01-02T03:04:05.678Z";
  records.push_back(a);
  RunRecord b;
  b.case_id = 4;
  b.repetition = 1;
  b.utterance = "plain";
  b.pass = true;
  b.generation_latency_s = 1e-7;
  records.push_back(b);

  const std::string csv = records_csv(records);
  CHECK(csv.rfind(std::string(kCsvHeader) + "\n", 0) == 0);
  CHECK(csv.find("\"Move, then \"\"say\"\" hi\"") != std::string::npos);
  const auto back = parse_records_csv(csv);
  REQUIRE(back.size() == 2);
  CHECK(back[0].utterance == a.utterance);
  CHECK(back[0].reason == a.reason);
  CHECK(back[0].status == a.status);
  CHECK_FALSE(back[0].pass);
  CHECK(back[0].generation_latency_s == a.generation_latency_s);
  CHECK(back[0].timestamp == a.timestamp);
  CHECK(back[1].pass);
  CHECK(back[1].generation_latency_s == 1e-7);
  CHECK(records_csv(back) == csv);
  CHECK_THROWS(parse_records_csv(std::string(kCsvHeader) + "\n1,2,3\n"));
  CHECK_THROWS(parse_records_csv(""));
}

TEST_CASE("suite runs every case from the same start and writes reports") {
  TempDir dir;
  SessionConfig cfg = SessionConfig::load(testing::config("bench.json"));
  Runtime rt = open_runtime(cfg, dir.str());
  auto cases = load_cases(testing::data("bench/cases.jsonl"));
  cases.resize(4);
  SuiteOptions opts;
  opts.repetitions = 3;
  int callbacks = 0;
  opts.on_record = [&](const RunRecord&) { ++callbacks; };
  const WorldModel start = rt.world->snapshot();
  const auto records = run_suite(cases, opts, *rt.client, *rt.world, *rt.bank, rt.preamble);
  CHECK(records.size() == 12);
  CHECK(callbacks == 12);
  CHECK(rt.world->snapshot() == start);
  for (std::size_t i = 0; i < records.size(); ++i) {
    CHECK(records[i].case_id == cases[i / 3].id);
    CHECK(records[i].repetition == static_cast<int>(i % 3) + 1);
    CHECK(records[i].pass);
    CHECK(records[i].timestamp.size() == 24);
    CHECK(records[i].timestamp.back() == 'Z');
  }
  const Summary s = summarize(records);
  CHECK(s.success_rate == 1.0);

  const std::string out = dir.file("reports");
  write_reports(out, records, s);
  const json sj = json::parse(read_text_file(out + "/summary.json"));
  CHECK(sj["records"] == 12);
  CHECK(sj["cases"] == 4);
  CHECK(sj["success_rate"] == 1.0);
  CHECK(parse_records_csv(read_text_file(out + "/runs.csv")).size() == 12);
  const auto chart = split_lines(read_text_file(out + "/latency_chart.csv"));
  CHECK(chart.front() == "case_id,utterance,mean_latency_s,stddev_latency_s");
  CHECK(chart.size() >= 5);
}
