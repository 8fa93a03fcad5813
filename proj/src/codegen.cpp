#include "lmpvc/codegen.hpp"

#include <deque>

#include "lmpvc/executor.hpp"
#include "lmpvc/script/parser.hpp"
#include "lmpvc/text.hpp"

namespace lmpvc {

using nlohmann::json;

namespace {

void append_segment(std::string& out, const std::string& segment) {
  if (segment.empty()) return;
  out += segment;
  if (out.back() != '\n') out += '\n';
}

// Right-trimmed lines without leading or trailing blank lines, newline-terminated.
std::string canonical_code(std::string_view text) {
  const auto lines = split_lines(text);
  std::size_t begin = 0;
  std::size_t end = lines.size();
  while (begin < end && trim(lines[begin]).empty()) ++begin;
  while (end > begin && trim(lines[end - 1]).empty()) --end;
  std::string out;
  for (std::size_t i = begin; i < end; ++i) out += rtrim(lines[i]) + "\n";
  return out;
}

std::string completion_text(const json& j) {
  if (j.is_string()) return j.get<std::string>();
  if (j.is_array()) {
    std::string out;
    for (const auto& line : j) out += line.get<std::string>() + "\n";
    return out;
  }
  throw std::invalid_argument("completion must be a string or an array of lines");
}

}  // namespace

std::string PromptBundle::text() const {
  std::string out;
  append_segment(out, preamble);
  append_segment(out, policy_extension);
  append_segment(out, context_code);
  append_segment(out, user_directive);
  return out;
}

std::string directive_for(const std::string& utterance) {
  return kDirectivePrefix + normalize_utterance(utterance);
}

std::string format_context(const std::vector<LMP>& context) {
  std::string out;
  for (const auto& lmp : context) {
    out += directive_for(lmp.utterance) + "\n";
    append_segment(out, lmp.code_text);
    out += std::string(kStopSequence) + "\n";
  }
  return out;
}

PromptBundle build_prompt(const std::string& preamble, const std::string& registry_extension,
                          const std::vector<LMP>& context, const std::string& utterance) {
  return PromptBundle{preamble, registry_extension, format_context(context),
                      directive_for(utterance)};
}

PromptBundle with_directive(PromptBundle prompt, const std::string& utterance) {
  prompt.user_directive = directive_for(utterance);
  return prompt;
}

std::string_view to_string(CompletionError::Kind k) {
  switch (k) {
    case CompletionError::Kind::transport: return "transport";
    case CompletionError::Kind::endpoint_status: return "endpoint_status";
    case CompletionError::Kind::empty_completion: return "empty_completion";
    case CompletionError::Kind::no_canned_response: return "no_canned_response";
  }
  return "unknown";
}

std::string prompt_directive(const std::string& prompt) {
  const auto lines = split_lines(prompt);
  constexpr std::string_view prefix = "#define function:";
  for (auto it = lines.rbegin(); it != lines.rend(); ++it) {
    const std::string s = trim(*it);
    if (starts_with_ci(s, prefix)) return normalize_utterance(std::string_view(s).substr(prefix.size()));
  }
  return "";
}

MockClient::MockClient(const json& fixture) {
  const json completions = fixture.value("completions", json::object());
  const json rounds = fixture.value("rounds", json::object());
  for (const auto& [key, value] : completions.items()) {
    completions_[normalize_utterance(key)] = completion_text(value);
  }
  for (const auto& [key, value] : rounds.items()) {
    auto& seq = rounds_[normalize_utterance(key)];
    for (const auto& c : value) seq.push_back(completion_text(c));
    if (seq.empty()) throw std::invalid_argument("rounds entry '" + key + "' is empty");
  }
}

std::shared_ptr<MockClient> MockClient::from_file(const std::string& path) {
  return std::make_shared<MockClient>(json::parse(read_text_file(path)));
}

Completion MockClient::complete(const std::string& prompt, const std::vector<std::string>&) {
  const auto start = std::chrono::steady_clock::now();
  const std::string directive = prompt_directive(prompt);
  std::string text;
  {
    std::lock_guard lock(mutex_);
    requested_.push_back(directive);
    if (auto r = rounds_.find(directive); r != rounds_.end()) {
      std::size_t& n = round_index_[directive];
      text = r->second[std::min(n, r->second.size() - 1)];
      ++n;
    } else if (auto c = completions_.find(directive); c != completions_.end()) {
      text = c->second;
    } else {
      throw CompletionError(CompletionError::Kind::no_canned_response,
                            "no canned response for '" + directive + "'");
    }
  }
  const double elapsed =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return Completion{std::move(text), elapsed};
}

void MockClient::reset_rounds() {
  std::lock_guard lock(mutex_);
  round_index_.clear();
}

std::vector<std::string> MockClient::requested() const {
  std::lock_guard lock(mutex_);
  return requested_;
}

Completion complete(const std::string& prompt_text, CompletionClient& client) {
  Completion c = client.complete(prompt_text, {kStopSequence});
  if (auto pos = c.text.find(kStopSequence); pos != std::string::npos) c.text.erase(pos);
  if (trim(c.text).empty()) {
    throw CompletionError(CompletionError::Kind::empty_completion, "the model returned no code");
  }
  return c;
}

LMP resolve_and_assemble(const std::string& utterance, const PromptBundle& prompt,
                         CompletionClient& client, const std::set<std::string>& known_names,
                         int max_rounds, GenerationStats* stats) {
  if (max_rounds < 1) throw std::invalid_argument("max_rounds must be at least 1");
  GenerationStats local;
  GenerationStats& st = stats != nullptr ? *stats : local;
  st = {};

  LMP lmp;
  lmp.utterance = utterance;
  try {
    lmp.top_level_function = sanitize_name(utterance);
  } catch (const NameError& e) {
    throw GenerationError(e.what());
  }

  auto call = [&](const PromptBundle& p) {
    Completion c = complete(p.text(), client);
    ++st.calls;
    st.latency_s += c.elapsed_s;
    return canonical_code(c.text);
  };

  std::deque<std::string> fragments{call(prompt)};
  st.rounds = 1;
  script::Program program = script::parse_program(fragments.front());
  if (program.find(lmp.top_level_function) == nullptr) {
    throw GenerationError("generated code does not define '" + lmp.top_level_function + "'");
  }

  auto join = [&] {
    std::string out;
    for (const auto& f : fragments) {
      if (!out.empty()) out += "\n";
      out += f;
    }
    return out;
  };

  std::vector<std::string> pending = detect_undefined_calls(program, known_names);
  while (!pending.empty()) {
    if (st.rounds >= max_rounds) {
      std::string names;
      for (const auto& n : pending) names += (names.empty() ? "" : ", ") + n;
      throw GenerationError("undefined functions remain after " + std::to_string(max_rounds) +
                                " rounds: " + names,
                            pending);
    }
    ++st.rounds;
    bool progress = false;
    for (const auto& name : pending) {
      if (program.find(name) != nullptr) continue;  // defined by an earlier fragment this round
      std::string helper_utterance = name;
      std::replace(helper_utterance.begin(), helper_utterance.end(), '_', ' ');
      std::string fragment = call(with_directive(prompt, helper_utterance));
      const script::Program part = script::parse_program(fragment);
      bool adds = false;
      for (const auto& def : part.definitions) {
        if (program.find(def->name) == nullptr) adds = true;
      }
      if (!adds) continue;
      fragments.push_front(std::move(fragment));
      program = script::parse_program(join());
      progress = true;
    }
    if (!progress) {
      throw GenerationError("re-prompting produced no new definitions for: " + pending.front(),
                            pending);
    }
    pending = detect_undefined_calls(program, known_names);
  }

  lmp.code_text = join();
  if (program.definitions.back()->name != lmp.top_level_function) {
    // A fragment defined helpers after the top-level function; move it down.
    std::string code;
    const script::FunctionDef* top = nullptr;
    for (const auto& def : program.definitions) {
      if (def->name == lmp.top_level_function) {
        top = def.get();
        continue;
      }
      if (program.find(def->name) != def.get()) continue;  // shadowed
      code += (code.empty() ? "" : "\n") + canonical_code(def->source);
    }
    code += (code.empty() ? "" : "\n") + canonical_code(top->source);
    lmp.code_text = code;
    program = script::parse_program(lmp.code_text);
  }
  for (const auto& def : program.definitions) {
    if (def->name != lmp.top_level_function) lmp.dependency_functions.push_back(def->name);
  }
  lmp.created_at = std::chrono::system_clock::now();
  return lmp;
}

}  // namespace lmpvc
