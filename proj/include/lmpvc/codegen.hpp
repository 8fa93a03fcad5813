#pragma once

#include <chrono>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "lmpvc/lmp.hpp"

namespace lmpvc {

inline constexpr const char* kStopSequence = "#end of function";
inline constexpr const char* kDirectivePrefix = "#define function: ";

struct PromptBundle {
  std::string preamble;
  std::string policy_extension;
  std::string context_code;
  std::string user_directive;

  /// Segments in fixed order, each newline-terminated.
  std::string text() const;
};

/// "#define function: " + normalized utterance.
std::string directive_for(const std::string& utterance);
/// Context segment: each LMP as its directive, its code and the stop marker.
std::string format_context(const std::vector<LMP>& context);
PromptBundle build_prompt(const std::string& preamble, const std::string& registry_extension,
                          const std::vector<LMP>& context, const std::string& utterance);
/// Same prompt with the directive replaced, as used when re-prompting for a helper.
PromptBundle with_directive(PromptBundle prompt, const std::string& utterance);

class CompletionError : public std::runtime_error {
 public:
  enum class Kind { transport, endpoint_status, empty_completion, no_canned_response };
  CompletionError(Kind kind, const std::string& message) : std::runtime_error(message), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

std::string_view to_string(CompletionError::Kind k);

struct Completion {
  std::string text;
  double elapsed_s = 0.0;
};

class CompletionClient {
 public:
  virtual ~CompletionClient() = default;
  virtual Completion complete(const std::string& prompt, const std::vector<std::string>& stop) = 0;
  virtual bool is_mock() const = 0;
  virtual std::string describe() const = 0;
};

/// Canned completions keyed by the normalized directive of the prompt's last
/// "#define function:" line.
///
/// Fixture: {"completions": {directive: text | [lines]},
///           "rounds": {directive: [text | [lines], ...]}}
/// A directive in "rounds" answers its n-th request with the n-th entry (the
/// last entry repeats).
class MockClient : public CompletionClient {
 public:
  explicit MockClient(const nlohmann::json& fixture);
  static std::shared_ptr<MockClient> from_file(const std::string& path);

  Completion complete(const std::string& prompt, const std::vector<std::string>& stop) override;
  bool is_mock() const override { return true; }
  std::string describe() const override { return "mock"; }

  /// Forgets how often each "rounds" directive has been requested.
  void reset_rounds();
  std::vector<std::string> requested() const;

 private:
  std::map<std::string, std::string> completions_;
  std::map<std::string, std::vector<std::string>> rounds_;
  std::map<std::string, std::size_t> round_index_;
  std::vector<std::string> requested_;
  mutable std::mutex mutex_;
};

struct EndpointSettings {
  std::string base_url = "http://127.0.0.1:8080";
  std::string model = "starcoder2-15b";
  std::string api_key;
  double temperature = 0.0;
  int max_tokens = 512;
  double timeout_s = 30.0;
};

/// Plain-completion HTTP client: POST {base_url}/v1/completions with
/// {model, prompt, temperature, max_tokens, stop}; reads choices[0].text.
class EndpointClient : public CompletionClient {
 public:
  explicit EndpointClient(EndpointSettings settings);
  Completion complete(const std::string& prompt, const std::vector<std::string>& stop) override;
  bool is_mock() const override { return false; }
  std::string describe() const override { return settings_.base_url; }

 private:
  EndpointSettings settings_;
};

/// The directive text of the last "#define function:" line of a prompt, normalized.
std::string prompt_directive(const std::string& prompt);

/// One completion call, truncated at the stop sequence. Throws CompletionError.
Completion complete(const std::string& prompt_text, CompletionClient& client);

class GenerationError : public std::runtime_error {
 public:
  GenerationError(const std::string& message, std::vector<std::string> unresolved = {})
      : std::runtime_error(message), unresolved_(std::move(unresolved)) {}
  const std::vector<std::string>& unresolved() const noexcept { return unresolved_; }

 private:
  std::vector<std::string> unresolved_;
};

struct GenerationStats {
  int rounds = 0;
  int calls = 0;
  double latency_s = 0.0;  // summed over completion calls
};

/// Generates the top-level function, then re-prompts for every undefined
/// call until none remain. Each newly resolved fragment is placed before the
/// code that needed it, so the top-level function ends up last.
/// Throws CompletionError, script::ParseError or GenerationError.
LMP resolve_and_assemble(const std::string& utterance, const PromptBundle& prompt,
                         CompletionClient& client, const std::set<std::string>& known_names,
                         int max_rounds = 3, GenerationStats* stats = nullptr);

}  // namespace lmpvc
