#include "lmpvc/policy_bank.hpp"

#include <filesystem>

#include <json.hpp>

#include "lmpvc/script/parser.hpp"
#include "lmpvc/text.hpp"

namespace lmpvc {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// "#BODY", "# BODY", "#body" all name the same tag.
bool is_tag(const std::string& line, std::string_view tag) {
  const std::string s = trim(line);
  if (s.empty() || s[0] != '#') return false;
  std::string_view rest(s);
  rest.remove_prefix(1);
  if (!rest.empty() && rest[0] == ' ') rest.remove_prefix(1);
  return to_lower(rest) == tag;
}

// Returns the utterance of a "# define function: ..." comment, if `line` is one.
std::optional<std::string> directive_comment(const std::string& line) {
  const std::string s = trim(line);
  if (s.empty() || s[0] != '#') return std::nullopt;
  const std::string rest = trim(std::string_view(s).substr(1));
  constexpr std::string_view prefix = "define function:";
  if (!starts_with_ci(rest, prefix)) return std::nullopt;
  return trim(std::string_view(rest).substr(prefix.size()));
}

std::string canonical_block(const std::vector<std::string>& lines, std::size_t begin,
                            std::size_t end) {
  while (begin < end && trim(lines[begin]).empty()) ++begin;
  while (end > begin && trim(lines[end - 1]).empty()) --end;
  std::string out;
  for (std::size_t i = begin; i < end; ++i) {
    out += rtrim(lines[i]);
    out += '\n';
  }
  return out;
}

script::Program parse_with_offset(const std::string& source, int first_line) {
  try {
    return script::parse_program(source);
  } catch (const script::ParseError& e) {
    throw PolicyParseError(e.line() + first_line - 1, e.message());
  }
}

std::string alias_source(const Policy& p) {
  return "def " + p.alias_function + "(robot):\n    " + p.entry_function + "(robot)\n";
}

}  // namespace

std::vector<std::string> Policy::body_functions() const {
  std::vector<std::string> names;
  for (const auto& fn : script::parse_program(body_source).definitions) names.push_back(fn->name);
  return names;
}

std::string Policy::hint_block() const {
  return "# define function: " + hint_utterance + "\n" + alias_source(*this) + "# end of function\n";
}

bool operator==(const Policy& a, const Policy& b) {
  return a.name == b.name && a.imports == b.imports && a.body_source == b.body_source &&
         a.entry_function == b.entry_function && a.hint_utterance == b.hint_utterance &&
         a.alias_function == b.alias_function && a.learned == b.learned;
}

Policy parse_policy_file(const std::string& text) {
  const std::vector<std::string> lines = split_lines(text);
  std::vector<std::size_t> body_tags;
  std::vector<std::size_t> hint_tags;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (is_tag(lines[i], "body")) body_tags.push_back(i);
    if (is_tag(lines[i], "hint")) hint_tags.push_back(i);
  }
  if (body_tags.empty()) throw PolicyParseError(0, "missing #BODY tag");
  if (hint_tags.empty()) throw PolicyParseError(0, "missing # HINT tag");
  if (body_tags.size() > 1) {
    throw PolicyParseError(static_cast<int>(body_tags[1]) + 1, "duplicated #BODY tag");
  }
  if (hint_tags.size() > 1) {
    throw PolicyParseError(static_cast<int>(hint_tags[1]) + 1, "duplicated # HINT tag");
  }
  const std::size_t body_at = body_tags[0];
  const std::size_t hint_at = hint_tags[0];
  if (hint_at < body_at) {
    throw PolicyParseError(static_cast<int>(hint_at) + 1, "# HINT tag must follow #BODY");
  }

  Policy p;
  for (std::size_t i = 0; i < body_at; ++i) {
    const std::string s = trim(lines[i]);
    if (s.empty() || s[0] == '#') continue;
    const int line_no = static_cast<int>(i) + 1;
    if (s.rfind("import ", 0) != 0) {
      throw PolicyParseError(line_no, "only import statements may precede #BODY");
    }
    const std::string mod = trim(std::string_view(s).substr(7));
    if (!is_identifier(mod)) throw PolicyParseError(line_no, "malformed import '" + s + "'");
    if (whitelisted_modules().count(mod) == 0) {
      throw PolicyParseError(line_no, "module '" + mod + "' is not available to scripts");
    }
    if (std::find(p.imports.begin(), p.imports.end(), mod) == p.imports.end()) {
      p.imports.push_back(mod);
    }
  }

  p.body_source = canonical_block(lines, body_at + 1, hint_at);
  if (p.body_source.empty()) {
    throw PolicyParseError(static_cast<int>(body_at) + 1, "policy body defines no functions");
  }
  const script::Program body = parse_with_offset(p.body_source, static_cast<int>(body_at) + 2);
  if (body.definitions.empty()) {
    throw PolicyParseError(static_cast<int>(body_at) + 1, "policy body defines no functions");
  }
  for (const auto& l : split_lines(p.body_source)) {
    if (trim(l) == kLearnedMarker) p.learned = true;
  }

  // Hint block: directive comment, alias definition, end marker.
  std::size_t i = hint_at + 1;
  while (i < lines.size() && trim(lines[i]).empty()) ++i;
  if (i == lines.size()) {
    throw PolicyParseError(static_cast<int>(hint_at) + 1, "hint block is empty");
  }
  const auto utterance = directive_comment(lines[i]);
  if (!utterance || utterance->empty()) {
    throw PolicyParseError(static_cast<int>(i) + 1,
                           "hint must start with '# define function: <utterance>'");
  }
  p.hint_utterance = *utterance;
  const std::size_t alias_begin = ++i;
  while (i < lines.size() && !is_tag(lines[i], "end of function")) ++i;
  if (i == lines.size()) {
    throw PolicyParseError(static_cast<int>(lines.size()), "hint block lacks '# end of function'");
  }
  const std::size_t alias_end = i;
  for (std::size_t k = alias_end + 1; k < lines.size(); ++k) {
    if (!trim(lines[k]).empty()) {
      throw PolicyParseError(static_cast<int>(k) + 1, "unexpected text after '# end of function'");
    }
  }
  const std::string alias_text = canonical_block(lines, alias_begin, alias_end);
  const int alias_line = static_cast<int>(alias_begin) + 1;
  const script::Program alias = parse_with_offset(alias_text, alias_line);
  if (alias.definitions.size() != 1) {
    throw PolicyParseError(alias_line, "hint block must define exactly one alias function");
  }
  const script::FunctionDef& def = *alias.definitions.front();
  const script::Call* call = nullptr;
  if (def.body.size() == 1) {
    if (auto* es = std::get_if<script::ExprStmt>(&def.body.front()->node)) {
      call = std::get_if<script::Call>(&es->expr->node);
    }
  }
  const script::NameRef* callee = call ? std::get_if<script::NameRef>(&call->callee->node) : nullptr;
  const script::NameRef* arg =
      call && call->args.size() == 1 ? std::get_if<script::NameRef>(&call->args[0]->node) : nullptr;
  if (callee == nullptr || arg == nullptr || arg->name != def.param) {
    throw PolicyParseError(alias_line, "alias body must be a single call '<entry>(" + def.param + ")'");
  }
  p.alias_function = def.name;
  p.entry_function = callee->name;
  std::string expected;
  try {
    expected = sanitize_name(p.hint_utterance);
  } catch (const NameError&) {
    throw PolicyParseError(alias_line - 1, "hint utterance has no alphanumeric content");
  }
  if (p.alias_function != expected) {
    throw PolicyParseError(alias_line, "alias for '" + p.hint_utterance + "' must be named '" +
                                           expected + "', not '" + p.alias_function + "'");
  }
  if (body.find(p.entry_function) == nullptr) {
    throw PolicyParseError(alias_line, "entry function '" + p.entry_function +
                                           "' is not defined in the policy body");
  }
  if (body.find(p.alias_function) != nullptr) {
    throw PolicyParseError(alias_line, "alias '" + p.alias_function + "' is also defined in the body");
  }
  p.name = p.entry_function;
  return p;
}

std::string serialize_policy(const Policy& p) {
  std::string out;
  for (const auto& m : p.imports) out += "import " + m + "\n";
  out += "#BODY\n";
  out += p.body_source;
  out += "# HINT\n";
  out += p.hint_block();
  return out;
}

std::string PolicyRegistry::resolve(const RegistryEntry& e) const {
  const fs::path file(e.file);
  if (file.is_absolute()) return file.string();
  return (fs::path(path).parent_path() / file).lexically_normal().string();
}

const RegistryEntry* PolicyRegistry::entry(const std::string& name) const {
  for (const auto& e : entries) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

namespace {

Policy load_policy(const PolicyRegistry& reg, const RegistryEntry& e) {
  const std::string file = reg.resolve(e);
  if (!fs::exists(file)) throw PolicyError("policy file not found: " + file);
  Policy p = parse_policy_file(read_text_file(file));
  p.name = e.name;
  p.source_path = file;
  return p;
}

}  // namespace

PolicyRegistry load_registry(const std::string& path) {
  if (!fs::exists(path)) throw PolicyError("policy registry not found: " + path);
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw PolicyError("policy registry " + path + ": " + e.what());
  }
  PolicyRegistry reg;
  reg.path = path;
  try {
    for (const auto& item : j.at("policies")) {
      RegistryEntry e{item.at("name").get<std::string>(), item.at("file").get<std::string>(),
                      item.value("enabled", true)};
      if (reg.entry(e.name) != nullptr) {
        throw PolicyError("policy registry " + path + ": duplicate name '" + e.name + "'");
      }
      reg.entries.push_back(e);
    }
  } catch (const json::exception& e) {
    throw PolicyError("policy registry " + path + ": " + e.what());
  }
  for (const auto& e : reg.entries) {
    if (!e.enabled) continue;
    try {
      reg.loaded[e.name] = load_policy(reg, e);
    } catch (const std::exception& ex) {
      reg.errors[e.name] = ex.what();
    }
  }
  return reg;
}

void save_registry(const PolicyRegistry& reg) {
  json items = json::array();
  for (const auto& e : reg.entries) {
    items.push_back({{"name", e.name}, {"file", e.file}, {"enabled", e.enabled}});
  }
  write_text_file(reg.path, json{{"policies", items}}.dump(2) + "\n");
}

std::string prompt_extension(const PolicyRegistry& reg) {
  std::vector<std::string> imports;
  std::string hints;
  for (const auto& e : reg.entries) {
    auto it = reg.loaded.find(e.name);
    if (!e.enabled || it == reg.loaded.end()) continue;
    for (const auto& m : it->second.imports) {
      if (std::find(imports.begin(), imports.end(), m) == imports.end()) imports.push_back(m);
    }
    hints += it->second.hint_block();
  }
  std::string out;
  for (const auto& m : imports) out += "import " + m + "\n";
  return out + hints;
}

FunctionBindings execution_bindings(const PolicyRegistry& reg) {
  FunctionBindings out;
  auto bind = [&](const std::string& policy, std::shared_ptr<const script::FunctionDef> def) {
    auto [it, inserted] = out.emplace(def->name, BoundFunction{def, policy});
    if (!inserted) {
      throw PolicyConflictError("function '" + def->name + "' is defined by both policy '" +
                                it->second.origin + "' and policy '" + policy + "'");
    }
  };
  for (const auto& e : reg.entries) {
    auto it = reg.loaded.find(e.name);
    if (!e.enabled || it == reg.loaded.end()) continue;
    const Policy& p = it->second;
    const script::Program body = script::parse_program(p.body_source);
    for (const auto& [name, def] : body.functions) bind(p.name, def);
    const script::Program alias = script::parse_program(alias_source(p));
    bind(p.name, alias.definitions.front());
  }
  return out;
}

RecordingSession begin_recording() {
  return RecordingSession{{}, std::chrono::system_clock::now()};
}

void record_step(RecordingSession& session, const LMP& lmp) { session.steps.push_back(lmp); }

std::string ordinal(int n) {
  const int tens = n % 100;
  const char* suffix = "th";
  if (tens < 11 || tens > 13) {
    switch (n % 10) {
      case 1: suffix = "st"; break;
      case 2: suffix = "nd"; break;
      case 3: suffix = "rd"; break;
      default: break;
    }
  }
  return std::to_string(n) + suffix;
}

Policy finalize_recording(const RecordingSession& session, const std::string& name,
                          const std::string& hint, const std::set<std::string>& taken) {
  if (session.steps.empty()) throw PolicyError("nothing has been recorded");
  Policy p;
  try {
    p.name = sanitize_name(name);
  } catch (const NameError&) {
    throw PolicyError("policy name '" + name + "' has no alphanumeric content");
  }
  p.hint_utterance = normalize_utterance(hint);
  try {
    p.alias_function = sanitize_name(p.hint_utterance);
  } catch (const NameError&) {
    throw PolicyError("hint '" + hint + "' has no alphanumeric content");
  }
  p.entry_function = p.name;
  p.learned = true;
  if (taken.count(p.name) != 0) throw PolicyError("policy name '" + p.name + "' is already in use");
  if (taken.count(p.alias_function) != 0) {
    throw PolicyError("hint function '" + p.alias_function + "' is already in use");
  }
  if (p.alias_function == p.name) {
    throw PolicyError("hint '" + hint + "' maps to the policy name itself");
  }

  std::map<std::string, std::string> defined;  // name -> source
  std::string body;
  const bool single = session.steps.size() == 1;
  for (std::size_t i = 0; i < session.steps.size(); ++i) {
    body += single ? std::string("# Generated code\n")
                   : "# Generated code based on " + ordinal(static_cast<int>(i) + 1) + " command\n";
    const script::Program step = script::parse_program(session.steps[i].code_text);
    for (const auto& def : step.definitions) {
      if (def->name == p.name || def->name == p.alias_function) {
        throw PolicyError("recorded function '" + def->name + "' clashes with the new policy's names");
      }
      auto it = defined.find(def->name);
      if (it != defined.end()) {
        if (it->second != def->source) {
          throw PolicyError("recorded steps define '" + def->name + "' differently");
        }
        continue;
      }
      defined[def->name] = def->source;
      body += def->source;
      if (body.back() != '\n') body += '\n';
    }
  }
  body += std::string(kLearnedMarker) + "\n";
  body += "def " + p.name + "(robot):\n";
  for (const auto& step : session.steps) body += "    " + step.top_level_function + "(robot)\n";
  p.body_source = body;
  return p;
}

PolicyBank::PolicyBank(PolicyRegistry registry, std::string policies_dir)
    : registry_(std::move(registry)), policies_dir_(std::move(policies_dir)) {
  if (policies_dir_.empty()) policies_dir_ = fs::path(registry_.path).parent_path().string();
}

PolicyBank PolicyBank::open(const std::string& registry_path, const std::string& policies_dir) {
  return PolicyBank(load_registry(registry_path), policies_dir);
}

PolicyRegistry PolicyBank::snapshot() const {
  std::lock_guard lock(mutex_);
  return registry_;
}

std::string PolicyBank::prompt_extension() const {
  std::lock_guard lock(mutex_);
  return lmpvc::prompt_extension(registry_);
}

FunctionBindings PolicyBank::bindings() const {
  std::lock_guard lock(mutex_);
  return execution_bindings(registry_);
}

std::set<std::string> PolicyBank::bound_names() const {
  std::set<std::string> names;
  for (const auto& [name, b] : bindings()) names.insert(name);
  return names;
}

std::optional<Policy> PolicyBank::get(const std::string& name) const {
  std::lock_guard lock(mutex_);
  auto it = registry_.loaded.find(name);
  if (it == registry_.loaded.end()) return std::nullopt;
  return it->second;
}

void PolicyBank::check_conflicts_locked(const Policy& p, const std::string& replacing) const {
  PolicyRegistry trial = registry_;
  trial.loaded.erase(replacing);
  if (!replacing.empty()) {
    for (auto& e : trial.entries) {
      if (e.name == replacing) e.enabled = false;
    }
  }
  trial.entries.push_back({"\x01" + p.name, "", true});
  trial.loaded["\x01" + p.name] = p;
  try {
    execution_bindings(trial);
  } catch (const PolicyConflictError& e) {
    std::string msg = e.what();
    for (std::size_t pos; (pos = msg.find('\x01')) != std::string::npos;) msg.erase(pos, 1);
    throw PolicyError(msg);
  }
}

void PolicyBank::write_policy_locked(const std::string& file, const Policy& p) {
  write_text_file(file, serialize_policy(p));
}

void PolicyBank::add(const Policy& policy) {
  std::lock_guard lock(mutex_);
  if (!is_identifier(policy.name)) throw PolicyError("invalid policy name '" + policy.name + "'");
  if (registry_.entry(policy.name) != nullptr) {
    throw PolicyError("policy '" + policy.name + "' already exists");
  }
  check_conflicts_locked(policy, "");
  const fs::path file = fs::path(policies_dir_) / (policy.name + ".policy");
  if (fs::exists(file)) throw PolicyError("refusing to overwrite " + file.string());
  Policy p = policy;
  p.source_path = file.string();
  write_policy_locked(p.source_path, p);
  const fs::path reg_dir = fs::path(registry_.path).parent_path();
  registry_.entries.push_back({p.name, fs::proximate(file, reg_dir).string(), true});
  registry_.loaded[p.name] = p;
  save_registry(registry_);
}

bool PolicyBank::put(const std::string& name, const std::string& text) {
  Policy p = parse_policy_file(text);
  p.name = name;
  {
    std::lock_guard lock(mutex_);
    const RegistryEntry* e = registry_.entry(name);
    if (e != nullptr) {
      if (e->enabled) check_conflicts_locked(p, name);
      p.source_path = registry_.resolve(*e);
      write_policy_locked(p.source_path, p);
      registry_.errors.erase(name);
      if (e->enabled) registry_.loaded[name] = p;
      return false;
    }
  }
  add(p);
  return true;
}

bool PolicyBank::remove(const std::string& name) {
  std::lock_guard lock(mutex_);
  auto it = std::find_if(registry_.entries.begin(), registry_.entries.end(),
                         [&](const RegistryEntry& e) { return e.name == name; });
  if (it == registry_.entries.end()) return false;
  registry_.entries.erase(it);
  registry_.loaded.erase(name);
  registry_.errors.erase(name);
  save_registry(registry_);
  return true;
}

bool PolicyBank::set_enabled(const std::string& name, bool enabled) {
  std::lock_guard lock(mutex_);
  auto it = std::find_if(registry_.entries.begin(), registry_.entries.end(),
                         [&](const RegistryEntry& e) { return e.name == name; });
  if (it == registry_.entries.end()) return false;
  if (enabled && !it->enabled) {
    Policy p = load_policy(registry_, *it);
    check_conflicts_locked(p, "");
    registry_.loaded[name] = p;
    registry_.errors.erase(name);
  } else if (!enabled) {
    registry_.loaded.erase(name);
    registry_.errors.erase(name);
  }
  it->enabled = enabled;
  save_registry(registry_);
  return true;
}

std::string stage_registry(const std::string& registry_path, const std::string& dir) {
  const PolicyRegistry src = [&] {
    PolicyRegistry r;
    r.path = registry_path;
    const json j = json::parse(read_text_file(registry_path));
    for (const auto& item : j.at("policies")) {
      r.entries.push_back({item.at("name").get<std::string>(), item.at("file").get<std::string>(),
                           item.value("enabled", true)});
    }
    return r;
  }();
  fs::create_directories(dir);
  PolicyRegistry staged;
  staged.path = (fs::path(dir) / "registry.json").string();
  std::set<std::string> used;
  for (const auto& e : src.entries) {
    std::string base = fs::path(e.file).filename().string();
    while (!used.insert(base).second) base = "_" + base;
    const std::string from = src.resolve(e);
    if (fs::exists(from)) {
      fs::copy_file(from, fs::path(dir) / base, fs::copy_options::overwrite_existing);
    }
    staged.entries.push_back({e.name, base, e.enabled});
  }
  save_registry(staged);
  return staged.path;
}

}  // namespace lmpvc
