#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "lmpvc/codegen.hpp"
#include "lmpvc/executor.hpp"
#include "lmpvc/policy_bank.hpp"
#include "lmpvc/robot_world.hpp"

namespace lmpvc::bench {

enum class OracleKind { pose_delta, say_matches, calls_policy, world_predicate, code_contains };
std::string_view to_string(OracleKind k);

// Oracle parameters by kind:
//   pose_delta:      dx, dy, dz (m, default 0), dyaw_deg (optional), tolerance (default 1e-6)
//   say_matches:     pattern (case-insensitive regex searched in every say output)
//   calls_policy:    policy (registry name; its entry or hint alias must be reachable)
//   world_predicate: predicate = holding | object_at | gripper_open | gripper_closed,
//                    object, location, tolerance (default 1e-6)
//   code_contains:   text
struct OracleSpec {
  OracleKind kind = OracleKind::code_contains;
  nlohmann::json params = nlohmann::json::object();
};

struct CommandCase {
  int id = 0;
  std::string utterance;
  OracleSpec oracle;
  std::vector<std::string> tags;
};

CommandCase parse_case(const nlohmann::json& j);
/// One CommandCase per line; blank lines skipped. Throws std::invalid_argument
/// naming the line on malformed input or duplicate ids.
std::vector<CommandCase> load_cases(const std::string& path);

struct Verdict {
  bool pass = false;
  std::string reason;
};

Verdict judge(const CommandCase& c, const ExecutionReport& report, const std::optional<LMP>& lmp,
              const FunctionBindings& bindings, const PolicyRegistry& registry,
              const WorldModel& before, const WorldModel& after);

struct RunRecord {
  int case_id = 0;
  int repetition = 0;  // 1-based
  std::string utterance;
  ExecutionStatus status = ExecutionStatus::ok;
  bool pass = false;
  std::string reason;
  double generation_latency_s = 0.0;
  std::string timestamp;  // ISO 8601, UTC
};

struct SuiteOptions {
  int repetitions = 10;
  double inter_run_delay_s = 0.0;
  int max_rounds = 3;
  ExecutionLimits limits;
  double time_dilation = 0.0;
  std::function<void(const RunRecord&)> on_record;
};

/// Every case x repetition from the same world snapshot, with an empty context.
std::vector<RunRecord> run_suite(const std::vector<CommandCase>& cases, const SuiteOptions& options,
                                 CompletionClient& client, World& world, PolicyBank& bank,
                                 const std::string& preamble);

struct CaseStats {
  int case_id = 0;
  std::string utterance;
  std::size_t runs = 0;
  double mean_latency_s = 0.0;
  double stddev_latency_s = 0.0;  // sample standard deviation; 0 for a single run
  double min_latency_s = 0.0;
  double max_latency_s = 0.0;
  bool passed = false;  // first repetition
};

struct Summary {
  std::vector<CaseStats> cases;  // in first-appearance order
  std::size_t records = 0;
  std::size_t passes = 0;
  double success_rate = 0.0;  // passes / cases, first-repetition verdicts
};

double mean(const std::vector<double>& xs);
double sample_stddev(const std::vector<double>& xs);

Summary summarize(const std::vector<RunRecord>& records);

inline constexpr const char* kCsvHeader =
    "case_id,repetition,utterance,status,verdict,reason,generation_latency_s,timestamp";

std::string records_csv(const std::vector<RunRecord>& records);
std::vector<RunRecord> parse_records_csv(const std::string& text);
nlohmann::json summary_json(const Summary& s);
/// Per-command bar chart data: case_id,utterance,mean_latency_s,stddev_latency_s.
std::string chart_csv(const Summary& s);

/// Writes runs.csv, summary.json and latency_chart.csv into `dir`.
void write_reports(const std::string& dir, const std::vector<RunRecord>& records, const Summary& s);

}  // namespace lmpvc::bench
