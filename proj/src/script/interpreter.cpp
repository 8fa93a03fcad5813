#include <algorithm>
#include <charconv>
#include <cmath>
#include <thread>
#include <variant>

#include "lmpvc/executor.hpp"
#include "lmpvc/script/parser.hpp"

namespace lmpvc {

using namespace script;

std::string_view to_string(ExecutionStatus s) {
  switch (s) {
    case ExecutionStatus::ok: return "ok";
    case ExecutionStatus::generation_failed: return "generation_failed";
    case ExecutionStatus::parse_error: return "parse_error";
    case ExecutionStatus::static_check_failed: return "static_check_failed";
    case ExecutionStatus::runtime_error: return "runtime_error";
    case ExecutionStatus::timeout: return "timeout";
    case ExecutionStatus::aborted: return "aborted";
  }
  return "unknown";
}

void AbortSignal::raise() {
  {
    std::lock_guard lock(mutex_);
    flag_.store(true, std::memory_order_release);
  }
  cv_.notify_all();
}

void AbortSignal::reset() {
  std::lock_guard lock(mutex_);
  flag_.store(false, std::memory_order_release);
}

bool AbortSignal::wait_for(std::chrono::nanoseconds d) {
  std::unique_lock lock(mutex_);
  return !cv_.wait_for(lock, d, [&] { return flag_.load(std::memory_order_acquire); });
}

std::string format_float(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (v == 0.0) return std::signbit(v) ? "-0.0" : "0.0";
  // Shortest round-trip digits, then Python's repr layout rules.
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::scientific);
  std::string sci(buf, end);
  const bool negative = sci.front() == '-';
  if (negative) sci.erase(0, 1);
  const auto epos = sci.find('e');
  std::string digits = sci.substr(0, epos);
  digits.erase(std::remove(digits.begin(), digits.end(), '.'), digits.end());
  const int exponent = std::stoi(sci.substr(epos + 1));
  std::string out;
  if (exponent >= -5 + 1 && exponent < 16) {
    if (exponent >= 0) {
      const auto int_len = static_cast<std::size_t>(exponent) + 1;
      if (digits.size() <= int_len) {
        out = digits + std::string(int_len - digits.size(), '0') + ".0";
      } else {
        out = digits.substr(0, int_len) + "." + digits.substr(int_len);
      }
    } else {
      out = "0." + std::string(static_cast<std::size_t>(-exponent - 1), '0') + digits;
    }
  } else {
    out = digits.substr(0, 1);
    if (digits.size() > 1) out += "." + digits.substr(1);
    const int a = std::abs(exponent);
    out += exponent < 0 ? "e-" : "e+";
    if (a < 10) out += '0';
    out += std::to_string(a);
  }
  return negative ? "-" + out : out;
}

namespace {

struct PoseBox {
  Pose pose;
};

struct Value;
struct NoneV {};
struct RobotV {};
struct ModuleV {
  std::string name;
};
struct PoseV {
  std::shared_ptr<PoseBox> box;
};
struct VecV {
  std::shared_ptr<PoseBox> box;
  bool orientation = false;
};
struct RangeV {
  std::int64_t begin = 0;
  std::int64_t end = 0;
};
struct TupleV {
  std::shared_ptr<std::vector<Value>> items;
};

struct Value {
  std::variant<NoneV, bool, std::int64_t, double, std::string, PoseV, VecV, RangeV, TupleV,
               ModuleV, RobotV>
      v;
};

struct ScriptError {
  std::string message;
  int line = 0;
};
struct LimitExceeded {
  std::string message;
};
struct Aborted {};

std::string type_name(const Value& val) {
  return std::visit(
      [](const auto& x) -> std::string {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, NoneV>) return "NoneType";
        if constexpr (std::is_same_v<T, bool>) return "bool";
        if constexpr (std::is_same_v<T, std::int64_t>) return "int";
        if constexpr (std::is_same_v<T, double>) return "float";
        if constexpr (std::is_same_v<T, std::string>) return "str";
        if constexpr (std::is_same_v<T, PoseV>) return "Pose";
        if constexpr (std::is_same_v<T, VecV>) return x.orientation ? "Quaternion" : "Point";
        if constexpr (std::is_same_v<T, RangeV>) return "range";
        if constexpr (std::is_same_v<T, TupleV>) return "tuple";
        if constexpr (std::is_same_v<T, ModuleV>) return "module";
        if constexpr (std::is_same_v<T, RobotV>) return "robot";
      },
      val.v);
}

bool is_number(const Value& v) {
  return std::holds_alternative<std::int64_t>(v.v) || std::holds_alternative<double>(v.v);
}

double to_double(const Value& v) {
  if (auto* i = std::get_if<std::int64_t>(&v.v)) return static_cast<double>(*i);
  return std::get<double>(v.v);
}

bool truthy(const Value& val) {
  return std::visit(
      [](const auto& x) -> bool {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, NoneV>) return false;
        if constexpr (std::is_same_v<T, bool>) return x;
        if constexpr (std::is_same_v<T, std::int64_t>) return x != 0;
        if constexpr (std::is_same_v<T, double>) return x != 0.0;
        if constexpr (std::is_same_v<T, std::string>) return !x.empty();
        if constexpr (std::is_same_v<T, RangeV>) return x.end > x.begin;
        if constexpr (std::is_same_v<T, TupleV>) return !x.items->empty();
        return true;
      },
      val.v);
}

double& component(VecV& vec, const std::string& attr, int line) {
  Pose& p = vec.box->pose;
  if (vec.orientation) {
    if (attr == "w") return p.orientation.w;
    if (attr == "x") return p.orientation.x;
    if (attr == "y") return p.orientation.y;
    if (attr == "z") return p.orientation.z;
  } else {
    if (attr == "x") return p.position.x;
    if (attr == "y") return p.position.y;
    if (attr == "z") return p.position.z;
  }
  throw ScriptError{std::string("'") + (vec.orientation ? "Quaternion" : "Point") +
                        "' object has no attribute '" + attr + "'",
                    line};
}

class Interpreter {
 public:
  Interpreter(const Program& program, const FunctionBindings& bindings, Controller& robot,
              const ExecutionLimits& limits, const ExecutionOptions& options,
              ExecutionReport& report)
      : program_(program),
        bindings_(bindings),
        robot_(robot),
        limits_(limits),
        options_(options),
        report_(report) {
    start_ = std::chrono::steady_clock::now();
    deadline_ = start_ + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                             std::chrono::duration<double>(limits.wall_deadline_s));
    epoch_at_start_ = std::chrono::duration<double>(
                          std::chrono::system_clock::now().time_since_epoch())
                          .count();
  }

  void run(const std::string& entry) {
    const FunctionDef* fn = program_.find(entry);
    if (fn == nullptr) {
      throw ScriptError{"entry function '" + entry + "' is not defined", 0};
    }
    call_function(*fn, Value{RobotV{}}, fn->first_line);
  }

  std::uint64_t steps() const { return steps_; }

 private:
  using Frame = std::map<std::string, Value>;

  void tick(int line) {
    line_ = line;
    if (++steps_ > limits_.max_steps) {
      throw LimitExceeded{"step limit of " + std::to_string(limits_.max_steps) + " exceeded"};
    }
    if (options_.abort != nullptr && options_.abort->raised()) throw Aborted{};
    if (std::chrono::steady_clock::now() > deadline_) {
      throw LimitExceeded{"wall-clock deadline exceeded"};
    }
  }

  const FunctionDef* lookup_function(const std::string& name) const {
    if (const FunctionDef* f = program_.find(name)) return f;
    auto it = bindings_.find(name);
    return it == bindings_.end() ? nullptr : it->second.def.get();
  }

  void call_function(const FunctionDef& fn, Value arg, int line) {
    if (depth_ >= limits_.max_call_depth) {
      throw ScriptError{"maximum call depth exceeded in '" + fn.name + "'", line};
    }
    ++depth_;
    Frame frame;
    frame[fn.param] = std::move(arg);
    frames_.push_back(std::move(frame));
    exec_block(fn.body);
    frames_.pop_back();
    --depth_;
  }

  Frame& frame() { return frames_.back(); }

  void exec_block(const Block& block) {
    for (const auto& s : block) exec_stmt(*s);
  }

  void exec_stmt(const Stmt& s) {
    tick(s.line);
    std::visit([&](const auto& node) { exec(node, s.line); }, s.node);
  }

  void exec(const Assign& node, int line) {
    Value value = eval(*node.value);
    if (auto* n = std::get_if<NameTarget>(&node.target)) {
      frame()[n->name] = std::move(value);
    } else if (auto* t = std::get_if<TupleTarget>(&node.target)) {
      auto* tup = std::get_if<TupleV>(&value.v);
      if (tup == nullptr || tup->items->size() != t->names.size()) {
        throw ScriptError{"cannot unpack " + type_name(value) + " into " +
                              std::to_string(t->names.size()) + " names",
                          line};
      }
      for (std::size_t i = 0; i < t->names.size(); ++i) {
        frame()[t->names[i]] = (*tup->items)[i];
      }
    } else {
      const auto& a = std::get<AttributeTarget>(node.target);
      Value obj = eval(*a.object);
      store_attribute(obj, a.attr, value, line);
    }
  }

  void exec(const AugAssign& node, int line) {
    const BinaryOp op = node.op == AugOp::add ? BinaryOp::add : BinaryOp::sub;
    if (auto* n = std::get_if<NameTarget>(&node.target)) {
      auto it = frame().find(n->name);
      if (it == frame().end()) {
        throw ScriptError{"local variable '" + n->name + "' referenced before assignment", line};
      }
      Value rhs = eval(*node.value);
      it = frame().find(n->name);
      it->second = binary(op, it->second, rhs, line);
      return;
    }
    const auto& a = std::get<AttributeTarget>(node.target);
    Value obj = eval(*a.object);
    Value current = load_attribute(obj, a.attr, line);
    Value rhs = eval(*node.value);
    store_attribute(obj, a.attr, binary(op, current, rhs, line), line);
  }

  void exec(const ExprStmt& node, int) { eval(*node.expr); }

  void exec(const If& node, int) {
    for (const auto& br : node.branches) {
      if (truthy(eval(*br.condition))) {
        exec_block(br.body);
        return;
      }
    }
    exec_block(node.orelse);
  }

  void exec(const For& node, int line) {
    std::vector<Value> args;
    for (const auto& a : node.range_args) args.push_back(eval(*a));
    const RangeV r = make_range(args, line);
    std::uint64_t iterations = 0;
    for (std::int64_t i = r.begin; i < r.end; ++i) {
      if (++iterations > limits_.max_loop_iterations) {
        throw LimitExceeded{"loop iteration limit of " +
                            std::to_string(limits_.max_loop_iterations) + " exceeded"};
      }
      frame()[node.var] = Value{i};
      exec_block(node.body);
    }
  }

  void exec(const While& node, int line) {
    std::uint64_t iterations = 0;
    while (true) {
      tick(line);
      if (!truthy(eval(*node.condition))) break;
      if (++iterations > limits_.max_loop_iterations) {
        throw LimitExceeded{"loop iteration limit of " +
                            std::to_string(limits_.max_loop_iterations) + " exceeded"};
      }
      exec_block(node.body);
    }
  }

  RangeV make_range(const std::vector<Value>& args, int line) {
    std::vector<std::int64_t> ints;
    for (const auto& a : args) {
      auto* i = std::get_if<std::int64_t>(&a.v);
      if (i == nullptr) {
        throw ScriptError{"range() arguments must be integers, got " + type_name(a), line};
      }
      ints.push_back(*i);
    }
    if (ints.size() == 1) return RangeV{0, ints[0]};
    if (ints.size() == 2) return RangeV{ints[0], ints[1]};
    throw ScriptError{"range() takes 1 or 2 arguments", line};
  }

  Value load_attribute(Value& obj, const std::string& attr, int line) {
    if (auto* p = std::get_if<PoseV>(&obj.v)) {
      if (attr == "position") return Value{VecV{p->box, false}};
      if (attr == "orientation") return Value{VecV{p->box, true}};
    } else if (auto* vec = std::get_if<VecV>(&obj.v)) {
      return Value{component(*vec, attr, line)};
    } else if (auto* m = std::get_if<ModuleV>(&obj.v)) {
      if (m->name == "math" && attr == "pi") return Value{M_PI};
      throw ScriptError{"module '" + m->name + "' has no constant '" + attr + "'", line};
    }
    throw ScriptError{"'" + type_name(obj) + "' object has no attribute '" + attr + "'", line};
  }

  void store_attribute(Value& obj, const std::string& attr, const Value& value, int line) {
    if (auto* p = std::get_if<PoseV>(&obj.v)) {
      auto* src = std::get_if<VecV>(&value.v);
      if (attr == "position" && src != nullptr && !src->orientation) {
        p->box->pose.position = src->box->pose.position;
        return;
      }
      if (attr == "orientation" && src != nullptr && src->orientation) {
        p->box->pose.orientation = src->box->pose.orientation;
        return;
      }
      throw ScriptError{"cannot assign " + type_name(value) + " to pose attribute '" + attr + "'",
                        line};
    }
    if (auto* vec = std::get_if<VecV>(&obj.v)) {
      if (!is_number(value)) {
        throw ScriptError{"pose components must be numbers, got " + type_name(value), line};
      }
      component(*vec, attr, line) = to_double(value);
      return;
    }
    throw ScriptError{"attribute assignment is only allowed on poses, not " + type_name(obj), line};
  }

  Value eval(const Expr& e) {
    return std::visit([&](const auto& node) { return eval_node(node, e.line); }, e.node);
  }

  Value eval_node(const IntLit& n, int) { return Value{n.value}; }
  Value eval_node(const FloatLit& n, int) { return Value{n.value}; }
  Value eval_node(const StringLit& n, int) { return Value{n.value}; }
  Value eval_node(const BoolLit& n, int) { return Value{n.value}; }

  Value eval_node(const NameRef& n, int line) {
    auto it = frame().find(n.name);
    if (it != frame().end()) return it->second;
    if (whitelisted_modules().count(n.name) != 0) return Value{ModuleV{n.name}};
    throw ScriptError{"name '" + n.name + "' is not defined", line};
  }

  Value eval_node(const Attribute& n, int line) {
    Value obj = eval(*n.object);
    return load_attribute(obj, n.attr, line);
  }

  Value eval_node(const Unary& n, int line) {
    Value v = eval(*n.operand);
    if (n.op == UnaryOp::logical_not) return Value{!truthy(v)};
    if (auto* i = std::get_if<std::int64_t>(&v.v)) {
      if (n.op == UnaryOp::pos) return v;
      if (*i == std::numeric_limits<std::int64_t>::min()) {
        throw ScriptError{"integer overflow", line};
      }
      return Value{-*i};
    }
    if (auto* d = std::get_if<double>(&v.v)) return Value{n.op == UnaryOp::neg ? -*d : *d};
    throw ScriptError{"bad operand type for unary " + std::string(n.op == UnaryOp::neg ? "-" : "+") +
                          ": '" + type_name(v) + "'",
                      line};
  }

  static const char* op_symbol(BinaryOp op) {
    switch (op) {
      case BinaryOp::add: return "+";
      case BinaryOp::sub: return "-";
      case BinaryOp::mul: return "*";
      case BinaryOp::div: return "/";
    }
    return "?";
  }

  Value binary(BinaryOp op, const Value& a, const Value& b, int line) {
    if (op == BinaryOp::add) {
      auto* sa = std::get_if<std::string>(&a.v);
      auto* sb = std::get_if<std::string>(&b.v);
      if (sa != nullptr && sb != nullptr) return Value{*sa + *sb};
    }
    if (!is_number(a) || !is_number(b)) {
      throw ScriptError{std::string("unsupported operand types for ") + op_symbol(op) + ": '" +
                            type_name(a) + "' and '" + type_name(b) + "'",
                        line};
    }
    auto* ia = std::get_if<std::int64_t>(&a.v);
    auto* ib = std::get_if<std::int64_t>(&b.v);
    if (op == BinaryOp::div) {
      const double den = to_double(b);
      if (den == 0.0) throw ScriptError{"division by zero", line};
      return Value{to_double(a) / den};
    }
    if (ia != nullptr && ib != nullptr) {
      std::int64_t r = 0;
      bool overflow = false;
      switch (op) {
        case BinaryOp::add: overflow = __builtin_add_overflow(*ia, *ib, &r); break;
        case BinaryOp::sub: overflow = __builtin_sub_overflow(*ia, *ib, &r); break;
        case BinaryOp::mul: overflow = __builtin_mul_overflow(*ia, *ib, &r); break;
        default: break;
      }
      if (overflow) throw ScriptError{"integer overflow", line};
      return Value{r};
    }
    const double x = to_double(a);
    const double y = to_double(b);
    switch (op) {
      case BinaryOp::add: return Value{x + y};
      case BinaryOp::sub: return Value{x - y};
      case BinaryOp::mul: return Value{x * y};
      default: break;
    }
    return Value{NoneV{}};
  }

  Value eval_node(const Binary& n, int line) {
    Value a = eval(*n.lhs);
    Value b = eval(*n.rhs);
    return binary(n.op, a, b, line);
  }

  Value eval_node(const BoolOp& n, int) {
    Value v;
    for (const auto& operand : n.operands) {
      v = eval(*operand);
      if (n.is_and ? !truthy(v) : truthy(v)) return v;
    }
    return v;
  }

  static bool equal(const Value& a, const Value& b) {
    if (is_number(a) && is_number(b)) {
      auto* ia = std::get_if<std::int64_t>(&a.v);
      auto* ib = std::get_if<std::int64_t>(&b.v);
      if (ia != nullptr && ib != nullptr) return *ia == *ib;
      return to_double(a) == to_double(b);
    }
    if (a.v.index() != b.v.index()) return false;
    return std::visit(
        [&](const auto& x) -> bool {
          using T = std::decay_t<decltype(x)>;
          const auto& y = std::get<T>(b.v);
          if constexpr (std::is_same_v<T, NoneV> || std::is_same_v<T, RobotV>) return true;
          if constexpr (std::is_same_v<T, bool> || std::is_same_v<T, std::string>) return x == y;
          if constexpr (std::is_same_v<T, PoseV>) return x.box == y.box;
          if constexpr (std::is_same_v<T, VecV>) return x.box == y.box && x.orientation == y.orientation;
          if constexpr (std::is_same_v<T, RangeV>) return x.begin == y.begin && x.end == y.end;
          if constexpr (std::is_same_v<T, ModuleV>) return x.name == y.name;
          if constexpr (std::is_same_v<T, TupleV>) {
            if (x.items->size() != y.items->size()) return false;
            for (std::size_t i = 0; i < x.items->size(); ++i) {
              if (!equal((*x.items)[i], (*y.items)[i])) return false;
            }
            return true;
          }
          return false;
        },
        a.v);
  }

  bool compare(CompareOp op, const Value& a, const Value& b, int line) {
    if (op == CompareOp::eq) return equal(a, b);
    if (op == CompareOp::ne) return !equal(a, b);
    int c = 0;
    if (is_number(a) && is_number(b)) {
      auto* ia = std::get_if<std::int64_t>(&a.v);
      auto* ib = std::get_if<std::int64_t>(&b.v);
      if (ia != nullptr && ib != nullptr) {
        c = (*ia < *ib) ? -1 : (*ia > *ib ? 1 : 0);
      } else {
        const double x = to_double(a);
        const double y = to_double(b);
        if (std::isnan(x) || std::isnan(y)) return false;
        c = (x < y) ? -1 : (x > y ? 1 : 0);
      }
    } else if (std::holds_alternative<std::string>(a.v) && std::holds_alternative<std::string>(b.v)) {
      c = std::get<std::string>(a.v).compare(std::get<std::string>(b.v));
    } else {
      throw ScriptError{"ordering not supported between '" + type_name(a) + "' and '" +
                            type_name(b) + "'",
                        line};
    }
    switch (op) {
      case CompareOp::lt: return c < 0;
      case CompareOp::le: return c <= 0;
      case CompareOp::gt: return c > 0;
      case CompareOp::ge: return c >= 0;
      default: return false;
    }
  }

  Value eval_node(const Compare& n, int line) {
    Value lhs = eval(*n.first);
    for (const auto& [op, rhs_expr] : n.rest) {
      Value rhs = eval(*rhs_expr);
      if (!compare(op, lhs, rhs, line)) return Value{false};
      lhs = std::move(rhs);
    }
    return Value{true};
  }

  Value eval_node(const Call& n, int line) {
    std::vector<Value> args;
    if (auto* name = std::get_if<NameRef>(&n.callee->node)) {
      for (const auto& a : n.args) args.push_back(eval(*a));
      if (const FunctionDef* fn = lookup_function(name->name)) {
        if (args.size() != 1) {
          throw ScriptError{name->name + "() takes exactly one argument", line};
        }
        call_function(*fn, std::move(args[0]), line);
        line_ = line;
        return Value{NoneV{}};
      }
      return call_builtin(name->name, args, line);
    }
    if (auto* attr = std::get_if<Attribute>(&n.callee->node)) {
      Value recv = eval(*attr->object);
      for (const auto& a : n.args) args.push_back(eval(*a));
      if (std::holds_alternative<RobotV>(recv.v)) return call_robot(attr->attr, args, line);
      if (auto* m = std::get_if<ModuleV>(&recv.v)) return call_module(m->name, attr->attr, args, line);
      throw ScriptError{"'" + type_name(recv) + "' object has no method '" + attr->attr + "'", line};
    }
    throw ScriptError{"expression is not callable", line};
  }

  static void expect_args(const std::string& fn, const std::vector<Value>& args, std::size_t n,
                          int line) {
    if (args.size() != n) {
      throw ScriptError{fn + "() takes " + std::to_string(n) + " argument" + (n == 1 ? "" : "s") +
                            " (" + std::to_string(args.size()) + " given)",
                        line};
    }
  }

  double number_arg(const std::string& fn, const Value& v, int line) {
    if (!is_number(v)) {
      throw ScriptError{fn + "() expects a number, got " + type_name(v), line};
    }
    return to_double(v);
  }

  std::string say_text(const Value& v, int line) {
    if (auto* s = std::get_if<std::string>(&v.v)) return *s;
    if (auto* i = std::get_if<std::int64_t>(&v.v)) return std::to_string(*i);
    if (auto* d = std::get_if<double>(&v.v)) return format_float(*d);
    if (auto* b = std::get_if<bool>(&v.v)) return *b ? "True" : "False";
    throw ScriptError{"say() expects text, got " + type_name(v), line};
  }

  Value call_builtin(const std::string& fn, std::vector<Value>& args, int line) {
    if (fn == "range") return Value{make_range(args, line)};
    if (fn == "len") {
      expect_args(fn, args, 1, line);
      if (auto* s = std::get_if<std::string>(&args[0].v)) {
        return Value{static_cast<std::int64_t>(s->size())};
      }
      if (auto* r = std::get_if<RangeV>(&args[0].v)) return Value{std::max<std::int64_t>(0, r->end - r->begin)};
      if (auto* t = std::get_if<TupleV>(&args[0].v)) {
        return Value{static_cast<std::int64_t>(t->items->size())};
      }
      throw ScriptError{"object of type '" + type_name(args[0]) + "' has no len()", line};
    }
    if (fn == "abs") {
      expect_args(fn, args, 1, line);
      if (auto* i = std::get_if<std::int64_t>(&args[0].v)) {
        if (*i == std::numeric_limits<std::int64_t>::min()) throw ScriptError{"integer overflow", line};
        return Value{*i < 0 ? -*i : *i};
      }
      return Value{std::abs(number_arg(fn, args[0], line))};
    }
    if (fn == "min" || fn == "max") {
      std::vector<Value> items = args;
      if (args.size() == 1) {
        auto* r = std::get_if<RangeV>(&args[0].v);
        if (r == nullptr || r->end <= r->begin) {
          throw ScriptError{fn + "() expects two or more numbers or a non-empty range", line};
        }
        return Value{fn == "min" ? r->begin : r->end - 1};
      }
      if (items.size() < 2) throw ScriptError{fn + "() expects two or more numbers", line};
      Value best = items[0];
      number_arg(fn, best, line);
      for (std::size_t i = 1; i < items.size(); ++i) {
        number_arg(fn, items[i], line);
        const bool better = fn == "min" ? compare(CompareOp::lt, items[i], best, line)
                                        : compare(CompareOp::gt, items[i], best, line);
        if (better) best = items[i];
      }
      return best;
    }
    if (fn == "round") {
      if (args.empty() || args.size() > 2) throw ScriptError{"round() takes 1 or 2 arguments", line};
      if (args.size() == 1) {
        if (std::holds_alternative<std::int64_t>(args[0].v)) return args[0];
        const double x = number_arg(fn, args[0], line);
        const double r = std::nearbyint(x);  // ties to even, as Python does
        if (!std::isfinite(r) || std::abs(r) > 9.2e18) throw ScriptError{"cannot round to int", line};
        return Value{static_cast<std::int64_t>(r)};
      }
      auto* nd = std::get_if<std::int64_t>(&args[1].v);
      if (nd == nullptr) throw ScriptError{"round() digits must be an integer", line};
      if (std::holds_alternative<std::int64_t>(args[0].v) && *nd >= 0) return args[0];
      const double x = number_arg(fn, args[0], line);
      if (!std::isfinite(x)) return Value{x};
      if (*nd >= 0) {
        // printf rounds the exact binary value, which is what Python does too
        const int digits = static_cast<int>(std::min<std::int64_t>(*nd, 340));
        std::vector<char> buf(static_cast<std::size_t>(digits) + 320);
        std::snprintf(buf.data(), buf.size(), "%.*f", digits, x);
        return Value{std::strtod(buf.data(), nullptr)};
      }
      const double scale = std::pow(10.0, static_cast<double>(-*nd));
      return Value{std::nearbyint(x / scale) * scale};
    }
    throw ScriptError{"name '" + fn + "' is not defined", line};
  }

  Value call_module(const std::string& mod, const std::string& fn, std::vector<Value>& args,
                    int line) {
    const auto& members = whitelisted_modules().at(mod);
    if (members.count(fn) == 0 || fn == "pi") {
      throw ScriptError{"'" + mod + "." + fn + "' is not an allowed function", line};
    }
    if (mod == "math") {
      expect_args(mod + "." + fn, args, 1, line);
      const double x = number_arg(mod + "." + fn, args[0], line);
      if (fn == "cos") return Value{std::cos(x)};
      if (fn == "sin") return Value{std::sin(x)};
      if (fn == "radians") return Value{x * M_PI / 180.0};
      if (x < 0.0) throw ScriptError{"math domain error", line};
      return Value{std::sqrt(x)};
    }
    if (fn == "time") {
      expect_args("time.time", args, 0, line);
      const double real = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
      return Value{epoch_at_start_ + real + clock_offset_};
    }
    expect_args("time.sleep", args, 1, line);
    const double seconds = number_arg("time.sleep", args[0], line);
    if (seconds < 0.0) throw ScriptError{"sleep length must be non-negative", line};
    sleep(seconds);
    return Value{NoneV{}};
  }

  // Sleeps seconds * time_dilation of real time. time.time() still advances by
  // the full `seconds`, so wall-clock polling loops behave the same when dilated.
  void sleep(double seconds) {
    const auto before = std::chrono::steady_clock::now();
    const double real = seconds * options_.time_dilation;
    auto wait = std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::duration<double>(real));
    const auto remaining = std::chrono::duration_cast<std::chrono::nanoseconds>(deadline_ - before);
    const bool hits_deadline = wait > remaining;
    if (hits_deadline) wait = std::max(remaining, std::chrono::nanoseconds(0));
    if (wait.count() > 0) {
      if (options_.abort != nullptr) {
        if (!options_.abort->wait_for(wait)) throw Aborted{};
      } else {
        std::this_thread::sleep_for(wait);
      }
    }
    if (hits_deadline) throw LimitExceeded{"wall-clock deadline exceeded"};
    const double slept = std::chrono::duration<double>(std::chrono::steady_clock::now() - before).count();
    clock_offset_ += seconds - slept;
  }

  Value call_robot(const std::string& method, std::vector<Value>& args, int line) {
    try {
      if (method == "get_pose") {
        expect_args("get_pose", args, 0, line);
        return Value{PoseV{std::make_shared<PoseBox>(PoseBox{robot_.get_pose()})}};
      }
      if (method == "add_waypoint") {
        expect_args("add_waypoint", args, 1, line);
        auto* p = std::get_if<PoseV>(&args[0].v);
        if (p == nullptr) {
          throw ScriptError{"add_waypoint() expects a Pose, got " + type_name(args[0]), line};
        }
        robot_.add_waypoint(p->box->pose);
        pending_.push_back(p->box->pose);
        return Value{NoneV{}};
      }
      if (method == "go") {
        expect_args("go", args, 0, line);
        std::vector<Pose> sent;
        sent.swap(pending_);
        const MotionOutcome outcome = robot_.go();
        report_.motion_log.insert(report_.motion_log.end(), sent.begin(), sent.end());
        if (outcome == MotionOutcome::interrupted) throw Aborted{};
        return Value{NoneV{}};
      }
      if (method == "stop") {
        expect_args("stop", args, 0, line);
        pending_.clear();
        robot_.stop();
        return Value{NoneV{}};
      }
      if (method == "find") {
        expect_args("find", args, 1, line);
        auto* s = std::get_if<std::string>(&args[0].v);
        if (s == nullptr) throw ScriptError{"find() expects an object name", line};
        const FindResult r = robot_.find(*s);
        auto items = std::make_shared<std::vector<Value>>();
        items->push_back(Value{PoseV{std::make_shared<PoseBox>(PoseBox{r.pose})}});
        items->push_back(Value{r.found});
        return Value{TupleV{std::move(items)}};
      }
      if (method == "say") {
        expect_args("say", args, 1, line);
        std::string text = say_text(args[0], line);
        report_.say_outputs.push_back(text);
        robot_.say(text);
        return Value{NoneV{}};
      }
      if (method == "open_hand") {
        expect_args("open_hand", args, 0, line);
        report_.gripper_events.push_back(robot_.open_hand());
        return Value{NoneV{}};
      }
      if (method == "close_hand") {
        expect_args("close_hand", args, 0, line);
        report_.gripper_events.push_back(robot_.close_hand());
        return Value{NoneV{}};
      }
    } catch (const ControllerError& e) {
      throw ScriptError{std::string("robot.") + method + "(): " + e.what(), line};
    }
    throw ScriptError{"controller has no method '" + method + "'", line};
  }

 public:
  int line() const { return line_; }

 private:
  const Program& program_;
  const FunctionBindings& bindings_;
  Controller& robot_;
  const ExecutionLimits& limits_;
  const ExecutionOptions& options_;
  ExecutionReport& report_;
  std::vector<Frame> frames_;
  std::vector<Pose> pending_;
  std::chrono::steady_clock::time_point start_;
  std::chrono::steady_clock::time_point deadline_;
  double epoch_at_start_ = 0.0;
  double clock_offset_ = 0.0;
  std::uint64_t steps_ = 0;
  int depth_ = 0;
  int line_ = 0;
};

}  // namespace

ExecutionReport execute(const Program& program, const std::string& entry,
                        const FunctionBindings& bindings, Controller& robot,
                        const ExecutionLimits& limits, const ExecutionOptions& options) {
  ExecutionReport report;
  const auto start = std::chrono::steady_clock::now();
  Interpreter interp(program, bindings, robot, limits, options, report);
  try {
    interp.run(entry);
  } catch (const ScriptError& e) {
    report.status = ExecutionStatus::runtime_error;
    report.error_detail = e.message;
    report.error_line = e.line != 0 ? e.line : interp.line();
  } catch (const LimitExceeded& e) {
    report.status = ExecutionStatus::timeout;
    report.error_detail = e.message;
    report.error_line = interp.line();
  } catch (const Aborted&) {
    report.status = ExecutionStatus::aborted;
    report.error_detail = "execution aborted by stop";
    report.error_line = interp.line();
  }
  report.steps = interp.steps();
  report.elapsed_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

ExecutionReport run_source(std::string_view source, const std::string& entry,
                           const FunctionBindings& bindings, Controller& robot,
                           const ExecutionLimits& limits, const ExecutionOptions& options) {
  ExecutionReport report;
  Program program;
  try {
    program = parse_program(source);
  } catch (const ParseError& e) {
    report.status = ExecutionStatus::parse_error;
    report.error_detail = e.what();
    report.error_line = e.line();
    return report;
  }
  StaticCheckResult check = static_check(program, bindings);
  if (!check.ok()) {
    report.status = ExecutionStatus::static_check_failed;
    report.undefined_names = check.undefined;
    for (const auto& p : check.problems) {
      if (!report.error_detail.empty()) report.error_detail += "; ";
      report.error_detail += p;
    }
    return report;
  }
  return execute(program, entry, bindings, robot, limits, options);
}

}  // namespace lmpvc
