#include "lmpvc/bench.hpp"

#include <cmath>
#include <ctime>
#include <filesystem>
#include <regex>
#include <set>
#include <thread>

#include "lmpvc/core_loop.hpp"
#include "lmpvc/script/parser.hpp"
#include "lmpvc/text.hpp"

namespace lmpvc::bench {

using nlohmann::json;

std::string_view to_string(OracleKind k) {
  switch (k) {
    case OracleKind::pose_delta: return "pose_delta";
    case OracleKind::say_matches: return "say_matches";
    case OracleKind::calls_policy: return "calls_policy";
    case OracleKind::world_predicate: return "world_predicate";
    case OracleKind::code_contains: return "code_contains";
  }
  return "unknown";
}

namespace {

OracleKind oracle_kind(const std::string& s) {
  for (auto k : {OracleKind::pose_delta, OracleKind::say_matches, OracleKind::calls_policy,
                 OracleKind::world_predicate, OracleKind::code_contains}) {
    if (to_string(k) == s) return k;
  }
  throw std::invalid_argument("unknown oracle kind '" + s + "'");
}

void require(const json& params, const char* key) {
  if (!params.contains(key)) throw std::invalid_argument(std::string("oracle needs '") + key + "'");
}

std::string iso_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  const auto ms =
      std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%S", &tm);
  char out[40];
  std::snprintf(out, sizeof(out), "%s.%03dZ", buf, static_cast<int>(ms));
  return out;
}

double wrap_degrees(double d) {
  while (d > 180.0) d -= 360.0;
  while (d <= -180.0) d += 360.0;
  return d;
}

std::string fmt(double v) { return format_float(v); }

}  // namespace

CommandCase parse_case(const json& j) {
  CommandCase c;
  c.id = j.at("id").get<int>();
  c.utterance = j.at("utterance").get<std::string>();
  if (trim(c.utterance).empty()) throw std::invalid_argument("utterance is empty");
  const json& o = j.at("oracle");
  c.oracle.kind = oracle_kind(o.at("kind").get<std::string>());
  c.oracle.params = o;
  c.oracle.params.erase("kind");
  switch (c.oracle.kind) {
    case OracleKind::pose_delta: break;
    case OracleKind::say_matches: require(c.oracle.params, "pattern"); break;
    case OracleKind::calls_policy: require(c.oracle.params, "policy"); break;
    case OracleKind::world_predicate: require(c.oracle.params, "predicate"); break;
    case OracleKind::code_contains: require(c.oracle.params, "text"); break;
  }
  c.tags = j.value("tags", std::vector<std::string>{});
  return c;
}

std::vector<CommandCase> load_cases(const std::string& path) {
  if (!std::filesystem::exists(path)) throw std::invalid_argument("case file not found: " + path);
  std::vector<CommandCase> cases;
  std::set<int> ids;
  int line_no = 0;
  for (const auto& line : split_lines(read_text_file(path))) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      CommandCase c = parse_case(json::parse(line));
      if (!ids.insert(c.id).second) throw std::invalid_argument("duplicate id " + std::to_string(c.id));
      cases.push_back(std::move(c));
    } catch (const std::exception& e) {
      throw std::invalid_argument(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return cases;
}

Verdict judge(const CommandCase& c, const ExecutionReport& report, const std::optional<LMP>& lmp,
              const FunctionBindings& bindings, const PolicyRegistry& registry,
              const WorldModel& before, const WorldModel& after) {
  if (report.status != ExecutionStatus::ok) {
    std::string reason = "status " + std::string(to_string(report.status));
    if (!report.error_detail.empty()) reason += ": " + report.error_detail;
    return {false, reason};
  }
  const json& p = c.oracle.params;
  switch (c.oracle.kind) {
    case OracleKind::pose_delta: {
      const double tol = p.value("tolerance", 1e-6);
      const Vec3 expected{p.value("dx", 0.0), p.value("dy", 0.0), p.value("dz", 0.0)};
      const Vec3 actual = after.ee_pose.position - before.ee_pose.position;
      const Vec3 err = actual - expected;
      if (std::abs(err.x) > tol || std::abs(err.y) > tol || std::abs(err.z) > tol) {
        return {false, "pose delta (" + fmt(actual.x) + ", " + fmt(actual.y) + ", " + fmt(actual.z) +
                           ") differs from expected (" + fmt(expected.x) + ", " + fmt(expected.y) +
                           ", " + fmt(expected.z) + ")"};
      }
      if (p.contains("dyaw_deg")) {
        const double expected_yaw = p.at("dyaw_deg").get<double>();
        const double actual_yaw = wrap_degrees(
            (yaw_of(after.ee_pose.orientation) - yaw_of(before.ee_pose.orientation)) * 180.0 / M_PI);
        if (std::abs(wrap_degrees(actual_yaw - expected_yaw)) > p.value("yaw_tolerance_deg", 1e-6)) {
          return {false, "yaw delta " + fmt(actual_yaw) + " deg, expected " + fmt(expected_yaw)};
        }
      }
      return {true, ""};
    }
    case OracleKind::say_matches: {
      const std::regex re(p.at("pattern").get<std::string>(),
                          std::regex::ECMAScript | std::regex::icase);
      for (const auto& s : report.say_outputs) {
        if (std::regex_search(s, re)) return {true, ""};
      }
      return {false, "no say output matches /" + p.at("pattern").get<std::string>() + "/"};
    }
    case OracleKind::calls_policy: {
      if (!lmp) return {false, "no generated program"};
      const std::string name = p.at("policy").get<std::string>();
      std::set<std::string> targets{name};
      if (auto it = registry.loaded.find(name); it != registry.loaded.end()) {
        targets.insert(it->second.entry_function);
        targets.insert(it->second.alias_function);
      }
      const script::Program program = script::parse_program(lmp->code_text);
      const auto reached = reachable_functions(program, bindings, lmp->top_level_function);
      for (const auto& t : targets) {
        if (reached.count(t) != 0 && program.find(t) == nullptr) return {true, ""};
      }
      return {false, "policy '" + name + "' is not called"};
    }
    case OracleKind::world_predicate: {
      const std::string pred = p.at("predicate").get<std::string>();
      const double tol = p.value("tolerance", 1e-6);
      if (pred == "gripper_open") {
        return after.gripper == GripperState::open ? Verdict{true, ""} : Verdict{false, "gripper closed"};
      }
      if (pred == "gripper_closed") {
        return after.gripper == GripperState::closed ? Verdict{true, ""} : Verdict{false, "gripper open"};
      }
      const std::string object = p.value("object", "");
      if (pred == "holding") {
        if (after.held_object == object) return {true, ""};
        return {false, "not holding '" + object + "'"};
      }
      if (pred == "object_at") {
        const std::string location = p.value("location", "");
        auto o = after.objects.find(object);
        auto l = after.objects.find(location);
        if (o == after.objects.end() || l == after.objects.end()) {
          return {false, "'" + object + "' or '" + location + "' missing"};
        }
        const Vec3 d = o->second.pose.position - l->second.pose.position;
        if (std::abs(d.x) <= tol && std::abs(d.y) <= tol && std::abs(d.z) <= tol &&
            after.held_object != object) {
          return {true, ""};
        }
        return {false, "'" + object + "' is not resting at '" + location + "'"};
      }
      return {false, "unknown predicate '" + pred + "'"};
    }
    case OracleKind::code_contains: {
      const std::string text = p.at("text").get<std::string>();
      if (lmp && lmp->code_text.find(text) != std::string::npos) return {true, ""};
      return {false, "code does not contain '" + text + "'"};
    }
  }
  return {false, "unknown oracle"};
}

std::vector<RunRecord> run_suite(const std::vector<CommandCase>& cases, const SuiteOptions& options,
                                 CompletionClient& client, World& world, PolicyBank& bank,
                                 const std::string& preamble) {
  const WorldModel snapshot = world.snapshot();
  const PolicyRegistry registry = bank.snapshot();
  const FunctionBindings policy_bindings = execution_bindings(registry);
  AbortSignal abort;
  world.set_stop_hook([&abort] { abort.raise(); });
  auto* mock = dynamic_cast<MockClient*>(&client);

  std::vector<RunRecord> records;
  bool first = true;
  for (const auto& c : cases) {
    for (int rep = 1; rep <= options.repetitions; ++rep) {
      if (!first && options.inter_run_delay_s > 0) {
        std::this_thread::sleep_for(std::chrono::duration<double>(options.inter_run_delay_s));
      }
      first = false;
      world.restore(snapshot);
      abort.reset();
      if (mock != nullptr) mock->reset_rounds();

      RunRecord rec;
      rec.case_id = c.id;
      rec.repetition = rep;
      rec.utterance = c.utterance;
      rec.timestamp = iso_timestamp();

      GenerationStats stats;
      std::optional<LMP> lmp;
      ExecutionReport report;
      FunctionBindings bindings = policy_bindings;
      try {
        auto prepared = prepare_command(c.utterance, {},
                                        CommandEnvironment{preamble, bank, client, options.max_rounds},
                                        stats, lmp);
        if (auto* failure = std::get_if<ExecutionReport>(&prepared)) {
          report = *failure;
        } else {
          auto& cmd = std::get<PreparedCommand>(prepared);
          bindings = cmd.bindings;
          report = execute(cmd.program, cmd.lmp.top_level_function, cmd.bindings, world,
                           options.limits, ExecutionOptions{options.time_dilation, &abort});
        }
      } catch (const std::exception& e) {
        report.status = ExecutionStatus::generation_failed;
        report.error_detail = e.what();
      }
      rec.generation_latency_s = stats.latency_s;
      rec.status = report.status;
      const Verdict v = judge(c, report, lmp, bindings, registry, snapshot, world.snapshot());
      rec.pass = v.pass;
      rec.reason = v.reason;
      if (options.on_record) options.on_record(rec);
      records.push_back(std::move(rec));
    }
  }
  world.restore(snapshot);
  world.set_stop_hook(nullptr);
  return records;
}

double mean(const std::vector<double>& xs) {
  if (xs.empty()) return 0.0;
  double sum = 0.0;
  for (double x : xs) sum += x;
  return sum / static_cast<double>(xs.size());
}

double sample_stddev(const std::vector<double>& xs) {
  if (xs.size() < 2) return 0.0;
  const double m = mean(xs);
  double ss = 0.0;
  for (double x : xs) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

Summary summarize(const std::vector<RunRecord>& records) {
  Summary s;
  s.records = records.size();
  std::vector<int> order;
  std::map<int, std::vector<double>> latencies;
  std::map<int, CaseStats> stats;
  for (const auto& r : records) {
    if (stats.count(r.case_id) == 0) {
      order.push_back(r.case_id);
      stats[r.case_id].case_id = r.case_id;
      stats[r.case_id].utterance = r.utterance;
    }
    latencies[r.case_id].push_back(r.generation_latency_s);
    if (r.repetition == 1) stats[r.case_id].passed = r.pass;
  }
  for (int id : order) {
    CaseStats cs = stats[id];
    const auto& xs = latencies[id];
    cs.runs = xs.size();
    cs.mean_latency_s = mean(xs);
    cs.stddev_latency_s = sample_stddev(xs);
    cs.min_latency_s = *std::min_element(xs.begin(), xs.end());
    cs.max_latency_s = *std::max_element(xs.begin(), xs.end());
    if (cs.passed) ++s.passes;
    s.cases.push_back(cs);
  }
  s.success_rate = s.cases.empty() ? 0.0
                                   : static_cast<double>(s.passes) / static_cast<double>(s.cases.size());
  return s;
}

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  bool any = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"' && i + 1 < text.size() && text[i + 1] == '"') {
        field += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        field += c;
      }
      continue;
    }
    if (c == '"') {
      quoted = true;
      any = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
      any = true;
    } else if (c == '\n') {
      row.push_back(std::move(field));
      field.clear();
      rows.push_back(std::move(row));
      row.clear();
      any = false;
    } else if (c != '\r') {
      field += c;
      any = true;
    }
  }
  if (any) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

ExecutionStatus status_from_string(const std::string& s) {
  for (auto st : {ExecutionStatus::ok, ExecutionStatus::generation_failed, ExecutionStatus::parse_error,
                  ExecutionStatus::static_check_failed, ExecutionStatus::runtime_error,
                  ExecutionStatus::timeout, ExecutionStatus::aborted}) {
    if (to_string(st) == s) return st;
  }
  throw std::invalid_argument("unknown status '" + s + "'");
}

}  // namespace

std::string records_csv(const std::vector<RunRecord>& records) {
  std::string out = std::string(kCsvHeader) + "\n";
  for (const auto& r : records) {
    out += std::to_string(r.case_id) + "," + std::to_string(r.repetition) + "," +
           csv_field(r.utterance) + "," + std::string(to_string(r.status)) + "," +
           (r.pass ? "pass" : "fail") + "," + csv_field(r.reason) + "," +
           format_float(r.generation_latency_s) + "," + r.timestamp + "\n";
  }
  return out;
}

std::vector<RunRecord> parse_records_csv(const std::string& text) {
  const auto rows = parse_csv(text);
  if (rows.empty()) throw std::invalid_argument("empty CSV");
  std::vector<RunRecord> out;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& row = rows[i];
    if (row.size() != 8) throw std::invalid_argument("CSV row " + std::to_string(i) + " has wrong arity");
    RunRecord r;
    r.case_id = std::stoi(row[0]);
    r.repetition = std::stoi(row[1]);
    r.utterance = row[2];
    r.status = status_from_string(row[3]);
    r.pass = row[4] == "pass";
    r.reason = row[5];
    r.generation_latency_s = std::stod(row[6]);
    r.timestamp = row[7];
    out.push_back(std::move(r));
  }
  return out;
}

json summary_json(const Summary& s) {
  json cases = json::array();
  for (const auto& c : s.cases) {
    cases.push_back({{"case_id", c.case_id},
                     {"utterance", c.utterance},
                     {"runs", c.runs},
                     {"mean_latency_s", c.mean_latency_s},
                     {"stddev_latency_s", c.stddev_latency_s},
                     {"min_latency_s", c.min_latency_s},
                     {"max_latency_s", c.max_latency_s},
                     {"passed", c.passed}});
  }
  return {{"records", s.records},
          {"cases", s.cases.size()},
          {"passes", s.passes},
          {"success_rate", s.success_rate},
          {"per_command", cases}};
}

std::string chart_csv(const Summary& s) {
  std::string out = "case_id,utterance,mean_latency_s,stddev_latency_s\n";
  for (const auto& c : s.cases) {
    out += std::to_string(c.case_id) + "," + csv_field(c.utterance) + "," +
           format_float(c.mean_latency_s) + "," + format_float(c.stddev_latency_s) + "\n";
  }
  return out;
}

void write_reports(const std::string& dir, const std::vector<RunRecord>& records, const Summary& s) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  write_text_file((fs::path(dir) / "runs.csv").string(), records_csv(records));
  write_text_file((fs::path(dir) / "summary.json").string(), summary_json(s).dump(2) + "\n");
  write_text_file((fs::path(dir) / "latency_chart.csv").string(), chart_csv(s));
}

}  // namespace lmpvc::bench
