#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace lmpvc::script {

struct Expr;
struct Stmt;
using ExprPtr = std::unique_ptr<Expr>;
using StmtPtr = std::unique_ptr<Stmt>;
using Block = std::vector<StmtPtr>;

enum class BinaryOp { add, sub, mul, div };
enum class UnaryOp { neg, pos, logical_not };
enum class CompareOp { eq, ne, lt, le, gt, ge };

struct IntLit {
  std::int64_t value = 0;
};
struct FloatLit {
  double value = 0.0;
};
struct StringLit {
  std::string value;
};
struct BoolLit {
  bool value = false;
};
struct NameRef {
  std::string name;
};
struct Attribute {
  ExprPtr object;
  std::string attr;
};
struct Call {
  ExprPtr callee;
  std::vector<ExprPtr> args;
};
struct Unary {
  UnaryOp op;
  ExprPtr operand;
};
struct Binary {
  BinaryOp op;
  ExprPtr lhs;
  ExprPtr rhs;
};
// `and` / `or` with Python's operand-returning short-circuit semantics.
struct BoolOp {
  bool is_and = true;
  std::vector<ExprPtr> operands;
};
// Chained comparison: a < b <= c.
struct Compare {
  ExprPtr first;
  std::vector<std::pair<CompareOp, ExprPtr>> rest;
};

struct Expr {
  int line = 0;
  std::variant<IntLit, FloatLit, StringLit, BoolLit, NameRef, Attribute, Call, Unary, Binary,
               BoolOp, Compare>
      node;
};

// Assignment targets.
struct NameTarget {
  std::string name;
};
struct AttributeTarget {
  ExprPtr object;
  std::string attr;
};
struct TupleTarget {
  std::vector<std::string> names;
};
using Target = std::variant<NameTarget, AttributeTarget, TupleTarget>;

struct Assign {
  Target target;
  ExprPtr value;
};
enum class AugOp { add, sub };
struct AugAssign {
  Target target;  // NameTarget or AttributeTarget
  AugOp op;
  ExprPtr value;
};
struct ExprStmt {
  ExprPtr expr;
};
struct IfBranch {
  ExprPtr condition;
  Block body;
};
struct If {
  std::vector<IfBranch> branches;
  Block orelse;
};
// for <var> in range(...)
struct For {
  std::string var;
  std::vector<ExprPtr> range_args;  // 1 or 2
  Block body;
};
struct While {
  ExprPtr condition;
  Block body;
};

struct Stmt {
  int line = 0;
  std::variant<Assign, AugAssign, ExprStmt, If, For, While> node;
};

struct FunctionDef {
  std::string name;
  std::string param;
  Block body;
  int first_line = 0;  // 1-based, the `def` line
  int last_line = 0;   // last line of the body
  std::string source;  // exact source text of the definition
};

/// Parsed command script: top-level function definitions only.
struct Program {
  std::string source;
  std::vector<std::shared_ptr<const FunctionDef>> definitions;  // source order
  std::map<std::string, std::shared_ptr<const FunctionDef>> functions;  // later def wins
  std::size_t statement_count = 0;

  const FunctionDef* find(const std::string& name) const {
    auto it = functions.find(name);
    return it == functions.end() ? nullptr : it->second.get();
  }
};

}  // namespace lmpvc::script
