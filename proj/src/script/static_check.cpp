#include <algorithm>
#include <deque>

#include "lmpvc/executor.hpp"

namespace lmpvc {

using namespace script;

const std::map<std::string, std::set<std::string>>& whitelisted_modules() {
  static const std::map<std::string, std::set<std::string>> modules{
      {"math", {"pi", "cos", "sin", "sqrt", "radians"}},
      {"time", {"time", "sleep"}},
  };
  return modules;
}

const std::set<std::string>& script_builtins() {
  static const std::set<std::string> b{"range", "len", "abs", "min", "max", "round"};
  return b;
}

const std::set<std::string>& pose_attributes() {
  static const std::set<std::string> a{"position", "orientation", "x", "y", "z", "w"};
  return a;
}

namespace {

const std::set<std::string> kModuleConstants{"pi"};

class OrderedSet {
 public:
  void add(const std::string& s) {
    if (seen_.insert(s).second) items_.push_back(s);
  }
  std::vector<std::string> take() { return std::move(items_); }

 private:
  std::set<std::string> seen_;
  std::vector<std::string> items_;
};

void collect_locals(const Block& block, std::set<std::string>& out) {
  for (const auto& s : block) {
    std::visit(
        [&](const auto& node) {
          using T = std::decay_t<decltype(node)>;
          if constexpr (std::is_same_v<T, Assign> || std::is_same_v<T, AugAssign>) {
            if (auto* n = std::get_if<NameTarget>(&node.target)) out.insert(n->name);
            if (auto* t = std::get_if<TupleTarget>(&node.target)) {
              out.insert(t->names.begin(), t->names.end());
            }
          } else if constexpr (std::is_same_v<T, If>) {
            for (const auto& br : node.branches) collect_locals(br.body, out);
            collect_locals(node.orelse, out);
          } else if constexpr (std::is_same_v<T, For>) {
            out.insert(node.var);
            collect_locals(node.body, out);
          } else if constexpr (std::is_same_v<T, While>) {
            collect_locals(node.body, out);
          }
        },
        s->node);
  }
}

class Checker {
 public:
  Checker(const Program& program, const FunctionBindings& bindings)
      : program_(program), bindings_(bindings) {}

  StaticCheckResult run() {
    for (const auto& fn : program_.definitions) {
      check_function(*fn);
    }
    while (!pending_.empty()) {
      const std::string name = pending_.front();
      pending_.pop_front();
      const auto& bound = bindings_.at(name);
      check_function(*bound.def);
    }
    StaticCheckResult r;
    r.undefined = undefined_.take();
    r.problems = std::move(problems_);
    return r;
  }

 private:
  void undefined(const std::string& name, int line, const std::string& what) {
    undefined_.add(name);
    problems_.push_back("line " + std::to_string(line) + ": " + what);
  }

  void check_function(const FunctionDef& fn) {
    fn_ = &fn;
    locals_.clear();
    locals_.insert(fn.param);
    collect_locals(fn.body, locals_);
    check_block(fn.body);
  }

  bool is_module_name(const std::string& n) const {
    return whitelisted_modules().count(n) != 0 && locals_.count(n) == 0;
  }

  void check_block(const Block& block) {
    for (const auto& s : block) check_stmt(*s);
  }

  void check_target(const Target& t, int line) {
    if (auto* a = std::get_if<AttributeTarget>(&t)) {
      if (auto* n = std::get_if<NameRef>(&a->object->node);
          n != nullptr && (n->name == fn_->param || is_module_name(n->name))) {
        problems_.push_back("line " + std::to_string(line) + ": cannot assign attributes of '" +
                            n->name + "'");
        return;
      }
      check_expr(*a->object);
      if (pose_attributes().count(a->attr) == 0) {
        undefined(a->attr, line, "unknown pose attribute '" + a->attr + "'");
      }
    }
  }

  void check_stmt(const Stmt& s) {
    std::visit(
        [&](const auto& node) {
          using T = std::decay_t<decltype(node)>;
          if constexpr (std::is_same_v<T, Assign>) {
            check_target(node.target, s.line);
            check_expr(*node.value);
          } else if constexpr (std::is_same_v<T, AugAssign>) {
            check_target(node.target, s.line);
            check_expr(*node.value);
          } else if constexpr (std::is_same_v<T, ExprStmt>) {
            check_expr(*node.expr);
          } else if constexpr (std::is_same_v<T, If>) {
            for (const auto& br : node.branches) {
              check_expr(*br.condition);
              check_block(br.body);
            }
            check_block(node.orelse);
          } else if constexpr (std::is_same_v<T, For>) {
            for (const auto& a : node.range_args) check_expr(*a);
            check_block(node.body);
          } else if constexpr (std::is_same_v<T, While>) {
            check_expr(*node.condition);
            check_block(node.body);
          }
        },
        s.node);
  }

  void check_call(const Call& call, int line) {
    for (const auto& a : call.args) check_expr(*a);
    if (auto* n = std::get_if<NameRef>(&call.callee->node)) {
      const bool in_program = program_.functions.count(n->name) != 0;
      const bool in_bindings = bindings_.count(n->name) != 0;
      if (in_program || in_bindings) {
        if (call.args.size() != 1) {
          problems_.push_back("line " + std::to_string(line) + ": " + n->name +
                              "() takes exactly one argument");
        }
        if (!in_program && in_bindings && visited_bound_.insert(n->name).second) {
          pending_.push_back(n->name);
        }
        return;
      }
      if (script_builtins().count(n->name) != 0) return;
      undefined(n->name, line, "call to undefined function '" + n->name + "'");
      return;
    }
    if (auto* a = std::get_if<Attribute>(&call.callee->node)) {
      if (auto* recv = std::get_if<NameRef>(&a->object->node)) {
        if (recv->name == fn_->param) {
          const auto& api = controller_api_names();
          if (std::find(api.begin(), api.end(), a->attr) == api.end()) {
            undefined(a->attr, line,
                      "controller has no method '" + recv->name + "." + a->attr + "'");
          }
          return;
        }
        if (is_module_name(recv->name)) {
          const auto& members = whitelisted_modules().at(recv->name);
          if (members.count(a->attr) == 0 || kModuleConstants.count(a->attr) != 0) {
            undefined(a->attr, line,
                      "'" + recv->name + "." + a->attr + "' is not an allowed function");
          }
          return;
        }
      }
      check_expr(*a->object);
      undefined(a->attr, line, "values have no method '" + a->attr + "'");
      return;
    }
    check_expr(*call.callee);
    problems_.push_back("line " + std::to_string(line) + ": expression is not callable");
  }

  void check_expr(const Expr& e) {
    std::visit(
        [&](const auto& node) {
          using T = std::decay_t<decltype(node)>;
          if constexpr (std::is_same_v<T, NameRef>) {
            if (locals_.count(node.name) == 0 && whitelisted_modules().count(node.name) == 0) {
              undefined(node.name, e.line, "undefined name '" + node.name + "'");
            }
          } else if constexpr (std::is_same_v<T, Attribute>) {
            if (auto* recv = std::get_if<NameRef>(&node.object->node)) {
              if (is_module_name(recv->name)) {
                if (kModuleConstants.count(node.attr) == 0 ||
                    whitelisted_modules().at(recv->name).count(node.attr) == 0) {
                  undefined(node.attr, e.line,
                            "'" + recv->name + "." + node.attr + "' is not an allowed constant");
                }
                return;
              }
              if (recv->name == fn_->param) {
                undefined(node.attr, e.line, "controller has no attribute '" + node.attr + "'");
                return;
              }
            }
            check_expr(*node.object);
            if (pose_attributes().count(node.attr) == 0) {
              undefined(node.attr, e.line, "unknown attribute '" + node.attr + "'");
            }
          } else if constexpr (std::is_same_v<T, Call>) {
            check_call(node, e.line);
          } else if constexpr (std::is_same_v<T, Unary>) {
            check_expr(*node.operand);
          } else if constexpr (std::is_same_v<T, Binary>) {
            check_expr(*node.lhs);
            check_expr(*node.rhs);
          } else if constexpr (std::is_same_v<T, BoolOp>) {
            for (const auto& o : node.operands) check_expr(*o);
          } else if constexpr (std::is_same_v<T, Compare>) {
            check_expr(*node.first);
            for (const auto& [op, rhs] : node.rest) check_expr(*rhs);
          }
        },
        e.node);
  }

  const Program& program_;
  const FunctionBindings& bindings_;
  const FunctionDef* fn_ = nullptr;
  std::set<std::string> locals_;
  OrderedSet undefined_;
  std::vector<std::string> problems_;
  std::deque<std::string> pending_;
  std::set<std::string> visited_bound_;
};

void collect_calls(const Expr& e, std::vector<std::string>& out);

void collect_calls(const Block& block, std::vector<std::string>& out) {
  for (const auto& s : block) {
    std::visit(
        [&](const auto& node) {
          using T = std::decay_t<decltype(node)>;
          if constexpr (std::is_same_v<T, Assign> || std::is_same_v<T, AugAssign>) {
            if (auto* a = std::get_if<AttributeTarget>(&node.target)) collect_calls(*a->object, out);
            collect_calls(*node.value, out);
          } else if constexpr (std::is_same_v<T, ExprStmt>) {
            collect_calls(*node.expr, out);
          } else if constexpr (std::is_same_v<T, If>) {
            for (const auto& br : node.branches) {
              collect_calls(*br.condition, out);
              collect_calls(br.body, out);
            }
            collect_calls(node.orelse, out);
          } else if constexpr (std::is_same_v<T, For>) {
            for (const auto& a : node.range_args) collect_calls(*a, out);
            collect_calls(node.body, out);
          } else if constexpr (std::is_same_v<T, While>) {
            collect_calls(*node.condition, out);
            collect_calls(node.body, out);
          }
        },
        s->node);
  }
}

void collect_calls(const Expr& e, std::vector<std::string>& out) {
  std::visit(
      [&](const auto& node) {
        using T = std::decay_t<decltype(node)>;
        if constexpr (std::is_same_v<T, Call>) {
          if (auto* n = std::get_if<NameRef>(&node.callee->node)) {
            out.push_back(n->name);
          } else {
            collect_calls(*node.callee, out);
          }
          for (const auto& a : node.args) collect_calls(*a, out);
        } else if constexpr (std::is_same_v<T, Attribute>) {
          collect_calls(*node.object, out);
        } else if constexpr (std::is_same_v<T, Unary>) {
          collect_calls(*node.operand, out);
        } else if constexpr (std::is_same_v<T, Binary>) {
          collect_calls(*node.lhs, out);
          collect_calls(*node.rhs, out);
        } else if constexpr (std::is_same_v<T, BoolOp>) {
          for (const auto& o : node.operands) collect_calls(*o, out);
        } else if constexpr (std::is_same_v<T, Compare>) {
          collect_calls(*node.first, out);
          for (const auto& [op, rhs] : node.rest) collect_calls(*rhs, out);
        }
      },
      e.node);
}

}  // namespace

StaticCheckResult static_check(const Program& program, const FunctionBindings& bindings) {
  return Checker(program, bindings).run();
}

std::vector<std::string> detect_undefined_calls(const Program& program,
                                                const std::set<std::string>& known_names) {
  std::set<std::string> module_members;
  for (const auto& [mod, members] : whitelisted_modules()) {
    module_members.insert(members.begin(), members.end());
  }
  const auto& api = controller_api_names();
  OrderedSet result;
  for (const auto& fn : program.definitions) {
    std::vector<std::string> calls;
    collect_calls(fn->body, calls);
    for (const auto& name : calls) {
      if (program.functions.count(name) != 0 || known_names.count(name) != 0 ||
          script_builtins().count(name) != 0 || module_members.count(name) != 0 ||
          std::find(api.begin(), api.end(), name) != api.end()) {
        continue;
      }
      result.add(name);
    }
  }
  return result.take();
}

std::vector<std::string> called_functions(const FunctionDef& fn) {
  std::vector<std::string> calls;
  collect_calls(fn.body, calls);
  return calls;
}

std::set<std::string> reachable_functions(const Program& program, const FunctionBindings& bindings,
                                          const std::string& entry) {
  std::set<std::string> seen;
  std::deque<std::string> queue{entry};
  while (!queue.empty()) {
    const std::string name = queue.front();
    queue.pop_front();
    const FunctionDef* fn = program.find(name);
    if (fn == nullptr) {
      auto it = bindings.find(name);
      if (it == bindings.end()) continue;
      fn = it->second.def.get();
    }
    if (!seen.insert(name).second) continue;
    for (const auto& callee : called_functions(*fn)) queue.push_back(callee);
  }
  return seen;
}

}  // namespace lmpvc
