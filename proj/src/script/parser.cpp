#include "lmpvc/script/parser.hpp"

#include <cctype>
#include <charconv>
#include <optional>
#include <set>
#include <vector>

#include "lmpvc/text.hpp"

namespace lmpvc::script {

namespace {

enum class Tok { name, integer, floating, string, op, newline, indent, dedent, end };

struct Token {
  Tok kind;
  std::string text;
  int line = 0;
  std::int64_t ivalue = 0;
  double fvalue = 0.0;
};

const std::set<std::string>& supported_keywords() {
  static const std::set<std::string> k{"def", "if",  "elif", "else", "for",  "in",
                                       "while", "not", "and", "or",   "True", "False"};
  return k;
}

const std::set<std::string>& unsupported_keywords() {
  static const std::set<std::string> k{
      "None",   "as",     "assert", "async", "await",  "break",    "class",
      "continue", "del",  "except", "finally", "from", "global",   "import",
      "is",     "lambda", "nonlocal", "pass", "raise",  "return",   "try",
      "with",   "yield"};
  return k;
}

class Lexer {
 public:
  explicit Lexer(std::string_view src) : src_(src) {}

  std::vector<Token> run() {
    indents_.push_back(0);
    while (pos_ < src_.size()) {
      lex_line();
    }
    if (!tokens_.empty() && tokens_.back().kind != Tok::newline &&
        tokens_.back().kind != Tok::dedent) {
      push(Tok::newline, "");
    }
    while (indents_.size() > 1) {
      indents_.pop_back();
      push(Tok::dedent, "");
    }
    push(Tok::end, "");
    return std::move(tokens_);
  }

 private:
  void push(Tok k, std::string text) { tokens_.push_back(Token{k, std::move(text), line_}); }

  // Handles one physical line (or several joined by open brackets).
  void lex_line() {
    int col = 0;
    while (pos_ < src_.size() && (src_[pos_] == ' ' || src_[pos_] == '\t')) {
      col = src_[pos_] == '\t' ? (col / 8 + 1) * 8 : col + 1;
      ++pos_;
    }
    if (pos_ >= src_.size()) return;
    const char c = src_[pos_];
    if (c == '\n' || c == '\r' || c == '#') {
      skip_to_eol();
      return;
    }
    if (col > indents_.back()) {
      indents_.push_back(col);
      push(Tok::indent, "");
    } else {
      while (col < indents_.back()) {
        indents_.pop_back();
        push(Tok::dedent, "");
      }
      if (col != indents_.back()) {
        throw ParseError(line_, "inconsistent dedent");
      }
    }
    lex_logical_line();
  }

  void skip_to_eol() {
    while (pos_ < src_.size() && src_[pos_] != '\n') ++pos_;
    if (pos_ < src_.size()) {
      ++pos_;
      ++line_;
    }
  }

  void lex_logical_line() {
    int depth = 0;
    while (pos_ < src_.size()) {
      const char c = src_[pos_];
      if (c == '\n') {
        ++pos_;
        if (depth > 0) {
          ++line_;
          continue;
        }
        push(Tok::newline, "");
        ++line_;
        return;
      }
      if (c == ' ' || c == '\t' || c == '\r') {
        ++pos_;
        continue;
      }
      if (c == '#') {
        while (pos_ < src_.size() && src_[pos_] != '\n') ++pos_;
        continue;
      }
      if (c == '\\') {
        throw ParseError(line_, "line continuation is not supported");
      }
      if (std::isalpha(static_cast<unsigned char>(c)) != 0 || c == '_') {
        const std::size_t b = pos_;
        while (pos_ < src_.size() && (std::isalnum(static_cast<unsigned char>(src_[pos_])) != 0 ||
                                      src_[pos_] == '_')) {
          ++pos_;
        }
        push(Tok::name, std::string(src_.substr(b, pos_ - b)));
        continue;
      }
      if (std::isdigit(static_cast<unsigned char>(c)) != 0 ||
          (c == '.' && pos_ + 1 < src_.size() &&
           std::isdigit(static_cast<unsigned char>(src_[pos_ + 1])) != 0)) {
        lex_number();
        continue;
      }
      if (c == '"' || c == '\'') {
        lex_string(c);
        continue;
      }
      if (static_cast<unsigned char>(c) >= 0x80) {
        throw ParseError(line_, "non-ASCII character outside string literal");
      }
      lex_operator(depth);
    }
    if (depth > 0) {
      throw ParseError(line_, "unbalanced brackets at end of input");
    }
  }

  void lex_number() {
    const std::size_t b = pos_;
    bool is_float = false;
    while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_])) != 0) ++pos_;
    if (pos_ < src_.size() && src_[pos_] == '.') {
      is_float = true;
      ++pos_;
      while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_])) != 0) {
        ++pos_;
      }
    }
    if (pos_ < src_.size() && (src_[pos_] == 'e' || src_[pos_] == 'E')) {
      std::size_t p = pos_ + 1;
      if (p < src_.size() && (src_[p] == '+' || src_[p] == '-')) ++p;
      if (p < src_.size() && std::isdigit(static_cast<unsigned char>(src_[p])) != 0) {
        is_float = true;
        pos_ = p;
        while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_])) != 0) {
          ++pos_;
        }
      }
    }
    if (pos_ < src_.size() && (std::isalpha(static_cast<unsigned char>(src_[pos_])) != 0 ||
                               src_[pos_] == '_')) {
      throw ParseError(line_, "malformed number literal");
    }
    const std::string text(src_.substr(b, pos_ - b));
    Token t{is_float ? Tok::floating : Tok::integer, text, line_};
    if (is_float) {
      t.fvalue = std::stod(text);
    } else {
      auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), t.ivalue);
      if (ec != std::errc{}) {
        throw ParseError(line_, "integer literal out of range");
      }
    }
    tokens_.push_back(std::move(t));
  }

  void lex_string(char quote) {
    if (src_.substr(pos_, 3) == std::string(3, quote)) {
      throw ParseError(line_, "triple-quoted strings are not supported");
    }
    ++pos_;
    std::string value;
    while (true) {
      if (pos_ >= src_.size() || src_[pos_] == '\n') {
        throw ParseError(line_, "unterminated string literal");
      }
      const char c = src_[pos_++];
      if (c == quote) break;
      if (c == '\\') {
        if (pos_ >= src_.size()) throw ParseError(line_, "unterminated string literal");
        const char e = src_[pos_++];
        switch (e) {
          case 'n': value.push_back('\n'); break;
          case 't': value.push_back('\t'); break;
          case '\\': value.push_back('\\'); break;
          case '\'': value.push_back('\''); break;
          case '"': value.push_back('"'); break;
          default:
            throw ParseError(line_, std::string("unsupported escape sequence \\") + e);
        }
        continue;
      }
      value.push_back(c);
    }
    push(Tok::string, std::move(value));
  }

  void lex_operator(int& depth) {
    static const std::vector<std::string> ops{
        "**=", "//=", ">>=", "<<=", "->", "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=",
        "==",  "!=",  "<=",  ">=",  "**", "//", "<<", ">>", ":=", "+",  "-",  "*",  "/",
        "%",   "<",   ">",   "=",   "(",  ")",  "[",  "]",  "{",  "}",  ",",  ".",  ":",
        ";",   "@",   "&",   "|",   "^",  "~"};
    for (const auto& op : ops) {
      if (src_.substr(pos_, op.size()) == op) {
        pos_ += op.size();
        if (op == "(" || op == "[" || op == "{") ++depth;
        if (op == ")" || op == "]" || op == "}") {
          if (depth == 0) throw ParseError(line_, "unmatched '" + op + "'");
          --depth;
        }
        push(Tok::op, op);
        return;
      }
    }
    throw ParseError(line_, std::string("unexpected character '") + src_[pos_] + "'");
  }

  std::string_view src_;
  std::size_t pos_ = 0;
  int line_ = 1;
  std::vector<int> indents_;
  std::vector<Token> tokens_;
};

class Parser {
 public:
  Parser(std::vector<Token> tokens, std::string_view source)
      : toks_(std::move(tokens)), source_lines_(split_lines(source)) {}

  Program run(std::string_view source) {
    Program prog;
    prog.source = std::string(source);
    while (!at(Tok::end)) {
      if (accept(Tok::newline)) continue;
      if (at(Tok::indent)) throw ParseError(peek().line, "unexpected indent");
      if (!is_name("def")) {
        check_keyword(peek());
        throw ParseError(peek().line, "only function definitions are allowed at top level");
      }
      auto fn = std::make_shared<FunctionDef>(parse_def());
      prog.functions[fn->name] = fn;
      prog.definitions.push_back(std::move(fn));
    }
    prog.statement_count = statements_;
    return prog;
  }

 private:
  const Token& peek(std::size_t ahead = 0) const {
    const std::size_t i = std::min(pos_ + ahead, toks_.size() - 1);
    return toks_[i];
  }
  bool at(Tok k) const { return peek().kind == k; }
  bool is_op(const char* op, std::size_t ahead = 0) const {
    return peek(ahead).kind == Tok::op && peek(ahead).text == op;
  }
  bool is_name(const char* n, std::size_t ahead = 0) const {
    return peek(ahead).kind == Tok::name && peek(ahead).text == n;
  }
  const Token& advance() {
    const Token& t = toks_[pos_];
    if (t.kind != Tok::newline && t.kind != Tok::indent && t.kind != Tok::dedent &&
        t.kind != Tok::end) {
      last_line_ = t.line;
    }
    if (pos_ + 1 < toks_.size()) ++pos_;
    return t;
  }
  bool accept(Tok k) {
    if (at(k)) {
      advance();
      return true;
    }
    return false;
  }
  bool accept_op(const char* op) {
    if (is_op(op)) {
      advance();
      return true;
    }
    return false;
  }
  void expect_op(const char* op) {
    if (!accept_op(op)) {
      throw ParseError(peek().line, std::string("expected '") + op + "', found " + describe(peek()));
    }
  }
  void expect(Tok k, const char* what) {
    if (!accept(k)) {
      throw ParseError(peek().line, std::string("expected ") + what + ", found " + describe(peek()));
    }
  }

  static std::string describe(const Token& t) {
    switch (t.kind) {
      case Tok::newline: return "end of line";
      case Tok::indent: return "indent";
      case Tok::dedent: return "dedent";
      case Tok::end: return "end of input";
      case Tok::string: return "string literal";
      default: return "'" + t.text + "'";
    }
  }

  static void check_keyword(const Token& t) {
    if (t.kind == Tok::name && unsupported_keywords().count(t.text) != 0) {
      if (t.text == "import" || t.text == "from") {
        throw ParseError(t.line, "import statements are not allowed in generated code");
      }
      throw ParseError(t.line, "'" + t.text + "' is not supported");
    }
  }

  std::string expect_identifier(const char* what) {
    const Token& t = peek();
    check_keyword(t);
    if (t.kind != Tok::name || supported_keywords().count(t.text) != 0) {
      throw ParseError(t.line, std::string("expected ") + what + ", found " + describe(t));
    }
    return advance().text;
  }

  FunctionDef parse_def() {
    FunctionDef fn;
    fn.first_line = advance().line;  // 'def'
    fn.name = expect_identifier("function name");
    expect_op("(");
    if (is_op(")")) {
      throw ParseError(peek().line, "function '" + fn.name + "' must take exactly one parameter");
    }
    fn.param = expect_identifier("parameter name");
    if (!is_op(")")) {
      throw ParseError(peek().line, "function '" + fn.name + "' must take exactly one parameter");
    }
    expect_op(")");
    if (is_op("->")) throw ParseError(peek().line, "annotations are not supported");
    expect_op(":");
    fn.body = parse_suite();
    fn.last_line = last_line_;
    std::string text;
    for (int l = fn.first_line; l <= fn.last_line && l <= static_cast<int>(source_lines_.size());
         ++l) {
      text += rtrim(source_lines_[static_cast<std::size_t>(l - 1)]);
      text += '\n';
    }
    fn.source = std::move(text);
    return fn;
  }

  Block parse_suite() {
    Block block;
    if (!accept(Tok::newline)) {
      block.push_back(parse_simple_statement());
      expect(Tok::newline, "end of line");
      return block;
    }
    if (!accept(Tok::indent)) {
      throw ParseError(peek().line, "expected an indented block");
    }
    while (!accept(Tok::dedent)) {
      if (at(Tok::end)) break;
      if (accept(Tok::newline)) continue;
      block.push_back(parse_statement());
    }
    return block;
  }

  StmtPtr make_stmt(int line) {
    ++statements_;
    auto s = std::make_unique<Stmt>();
    s->line = line;
    return s;
  }

  StmtPtr parse_statement() {
    const Token& t = peek();
    if (t.kind == Tok::indent) throw ParseError(t.line, "unexpected indent");
    if (is_name("def")) throw ParseError(t.line, "nested function definitions are not allowed");
    if (is_name("if")) return parse_if();
    if (is_name("for")) return parse_for();
    if (is_name("while")) return parse_while();
    if (is_name("elif") || is_name("else")) {
      throw ParseError(t.line, "'" + t.text + "' without matching 'if'");
    }
    auto s = parse_simple_statement();
    expect(Tok::newline, "end of line");
    return s;
  }

  StmtPtr parse_if() {
    auto s = make_stmt(advance().line);
    If node;
    IfBranch first;
    first.condition = parse_expr();
    expect_op(":");
    first.body = parse_suite();
    node.branches.push_back(std::move(first));
    while (is_name("elif")) {
      advance();
      IfBranch br;
      br.condition = parse_expr();
      expect_op(":");
      br.body = parse_suite();
      node.branches.push_back(std::move(br));
    }
    if (is_name("else")) {
      advance();
      expect_op(":");
      node.orelse = parse_suite();
    }
    s->node = std::move(node);
    return s;
  }

  StmtPtr parse_for() {
    auto s = make_stmt(advance().line);
    For node;
    node.var = expect_identifier("loop variable");
    if (is_op(",")) throw ParseError(peek().line, "for-loops take a single loop variable");
    if (!is_name("in")) throw ParseError(peek().line, "expected 'in'");
    advance();
    const int line = peek().line;
    ExprPtr iter = parse_expr();
    auto* call = std::get_if<Call>(&iter->node);
    const NameRef* callee = call ? std::get_if<NameRef>(&call->callee->node) : nullptr;
    if (callee == nullptr || callee->name != "range" || call->args.empty() ||
        call->args.size() > 2) {
      throw ParseError(line, "for-loops must iterate over range(n) or range(a, b)");
    }
    node.range_args = std::move(call->args);
    expect_op(":");
    node.body = parse_suite();
    s->node = std::move(node);
    return s;
  }

  StmtPtr parse_while() {
    auto s = make_stmt(advance().line);
    While node;
    node.condition = parse_expr();
    expect_op(":");
    node.body = parse_suite();
    s->node = std::move(node);
    return s;
  }

  bool tuple_target_ahead() const {
    if (is_op("(") && peek(1).kind == Tok::name && is_op(",", 2)) return true;
    return peek().kind == Tok::name && is_op(",", 1);
  }

  StmtPtr parse_simple_statement() {
    const Token& start = peek();
    check_keyword(start);
    if (start.kind == Tok::name && (start.text == "if" || start.text == "for" ||
                                    start.text == "while" || start.text == "def")) {
      throw ParseError(start.line, "compound statement not allowed here");
    }
    auto s = make_stmt(start.line);
    if (tuple_target_ahead()) {
      TupleTarget target;
      const bool parens = accept_op("(");
      target.names.push_back(expect_identifier("name"));
      while (accept_op(",")) {
        if (parens && is_op(")")) break;
        target.names.push_back(expect_identifier("name"));
      }
      if (parens) expect_op(")");
      if (target.names.size() != 2) {
        throw ParseError(start.line, "tuple destructuring must bind exactly two names");
      }
      expect_op("=");
      ExprPtr value = parse_expr();
      if (!std::holds_alternative<Call>(value->node)) {
        throw ParseError(start.line, "tuple destructuring requires a call on the right-hand side");
      }
      s->node = Assign{std::move(target), std::move(value)};
      return s;
    }

    ExprPtr lhs = parse_expr();
    if (is_op(",")) throw ParseError(peek().line, "tuple expressions are not supported");
    if (accept_op("=")) {
      Target target = to_target(std::move(lhs), start.line);
      ExprPtr value = parse_expr();
      if (is_op(",")) throw ParseError(peek().line, "tuple expressions are not supported");
      if (is_op("=")) throw ParseError(peek().line, "chained assignment is not supported");
      s->node = Assign{std::move(target), std::move(value)};
      return s;
    }
    if (is_op("+=") || is_op("-=")) {
      const AugOp op = advance().text == "+=" ? AugOp::add : AugOp::sub;
      Target target = to_target(std::move(lhs), start.line);
      s->node = AugAssign{std::move(target), op, parse_expr()};
      return s;
    }
    if (peek().kind == Tok::op && peek().text.size() >= 2 && peek().text.back() == '=' &&
        peek().text != "==" && peek().text != "!=" && peek().text != "<=" &&
        peek().text != ">=") {
      throw ParseError(peek().line, "augmented assignment '" + peek().text + "' is not supported");
    }
    if (!std::holds_alternative<Call>(lhs->node)) {
      throw ParseError(start.line, "expression statements must be calls");
    }
    s->node = ExprStmt{std::move(lhs)};
    return s;
  }

  static Target to_target(ExprPtr e, int line) {
    if (auto* n = std::get_if<NameRef>(&e->node)) {
      if (n->name == "True" || n->name == "False") throw ParseError(line, "cannot assign to literal");
      return NameTarget{n->name};
    }
    if (auto* a = std::get_if<Attribute>(&e->node)) {
      return AttributeTarget{std::move(a->object), a->attr};
    }
    throw ParseError(line, "invalid assignment target");
  }

  ExprPtr make_expr(int line) {
    auto e = std::make_unique<Expr>();
    e->line = line;
    return e;
  }

  ExprPtr parse_expr() { return parse_or(); }

  ExprPtr parse_or() {
    ExprPtr first = parse_and();
    if (!is_name("or")) return first;
    auto e = make_expr(first->line);
    BoolOp node{false, {}};
    node.operands.push_back(std::move(first));
    while (is_name("or")) {
      advance();
      node.operands.push_back(parse_and());
    }
    e->node = std::move(node);
    return e;
  }

  ExprPtr parse_and() {
    ExprPtr first = parse_not();
    if (!is_name("and")) return first;
    auto e = make_expr(first->line);
    BoolOp node{true, {}};
    node.operands.push_back(std::move(first));
    while (is_name("and")) {
      advance();
      node.operands.push_back(parse_not());
    }
    e->node = std::move(node);
    return e;
  }

  ExprPtr parse_not() {
    if (is_name("not")) {
      auto e = make_expr(advance().line);
      e->node = Unary{UnaryOp::logical_not, parse_not()};
      return e;
    }
    return parse_comparison();
  }

  std::optional<CompareOp> compare_op() const {
    if (peek().kind == Tok::name && (peek().text == "in" || peek().text == "is")) {
      throw ParseError(peek().line, "'" + peek().text + "' comparisons are not supported");
    }
    if (peek().kind != Tok::op) return std::nullopt;
    const std::string& t = peek().text;
    if (t == "==") return CompareOp::eq;
    if (t == "!=") return CompareOp::ne;
    if (t == "<") return CompareOp::lt;
    if (t == "<=") return CompareOp::le;
    if (t == ">") return CompareOp::gt;
    if (t == ">=") return CompareOp::ge;
    return std::nullopt;
  }

  ExprPtr parse_comparison() {
    ExprPtr first = parse_arith();
    auto op = compare_op();
    if (!op) return first;
    auto e = make_expr(first->line);
    Compare node;
    node.first = std::move(first);
    while ((op = compare_op())) {
      advance();
      node.rest.emplace_back(*op, parse_arith());
    }
    e->node = std::move(node);
    return e;
  }

  ExprPtr parse_arith() {
    ExprPtr lhs = parse_term();
    while (is_op("+") || is_op("-")) {
      const BinaryOp op = advance().text == "+" ? BinaryOp::add : BinaryOp::sub;
      auto e = make_expr(lhs->line);
      e->node = Binary{op, std::move(lhs), parse_term()};
      lhs = std::move(e);
    }
    return lhs;
  }

  ExprPtr parse_term() {
    ExprPtr lhs = parse_factor();
    while (true) {
      if (is_op("*") || is_op("/")) {
        const BinaryOp op = advance().text == "*" ? BinaryOp::mul : BinaryOp::div;
        auto e = make_expr(lhs->line);
        e->node = Binary{op, std::move(lhs), parse_factor()};
        lhs = std::move(e);
        continue;
      }
      if (is_op("%") || is_op("//") || is_op("**") || is_op("@") || is_op("&") || is_op("|") ||
          is_op("^") || is_op("<<") || is_op(">>")) {
        throw ParseError(peek().line, "operator '" + peek().text + "' is not supported");
      }
      return lhs;
    }
  }

  ExprPtr parse_factor() {
    if (is_op("-") || is_op("+")) {
      const Token& t = advance();
      auto e = make_expr(t.line);
      e->node = Unary{t.text == "-" ? UnaryOp::neg : UnaryOp::pos, parse_factor()};
      return e;
    }
    if (is_op("~")) throw ParseError(peek().line, "operator '~' is not supported");
    return parse_postfix();
  }

  ExprPtr parse_postfix() {
    ExprPtr e = parse_atom();
    while (true) {
      if (accept_op(".")) {
        auto a = make_expr(e->line);
        a->node = Attribute{std::move(e), expect_identifier("attribute name")};
        e = std::move(a);
        continue;
      }
      if (is_op("(")) {
        const int line = advance().line;
        auto c = make_expr(line);
        Call call{std::move(e), {}};
        if (!accept_op(")")) {
          while (true) {
            if (peek().kind == Tok::name && is_op("=", 1)) {
              throw ParseError(peek().line, "keyword arguments are not supported");
            }
            if (is_op("*") || is_op("**")) {
              throw ParseError(peek().line, "argument unpacking is not supported");
            }
            call.args.push_back(parse_expr());
            if (accept_op(")")) break;
            expect_op(",");
            if (accept_op(")")) break;
          }
        }
        c->node = std::move(call);
        e = std::move(c);
        continue;
      }
      if (is_op("[")) throw ParseError(peek().line, "subscripting is not supported");
      return e;
    }
  }

  ExprPtr parse_atom() {
    const Token& t = peek();
    check_keyword(t);
    auto e = make_expr(t.line);
    switch (t.kind) {
      case Tok::integer:
        e->node = IntLit{t.ivalue};
        advance();
        return e;
      case Tok::floating:
        e->node = FloatLit{t.fvalue};
        advance();
        return e;
      case Tok::string: {
        std::string value = advance().text;
        while (at(Tok::string)) value += advance().text;
        e->node = StringLit{std::move(value)};
        return e;
      }
      case Tok::name:
        if (t.text == "True" || t.text == "False") {
          e->node = BoolLit{t.text == "True"};
          advance();
          return e;
        }
        if (supported_keywords().count(t.text) != 0) {
          throw ParseError(t.line, "unexpected keyword '" + t.text + "'");
        }
        e->node = NameRef{advance().text};
        return e;
      case Tok::op:
        if (t.text == "(") {
          advance();
          ExprPtr inner = parse_expr();
          if (is_op(",")) throw ParseError(peek().line, "tuple expressions are not supported");
          expect_op(")");
          return inner;
        }
        if (t.text == "[") throw ParseError(t.line, "list literals are not supported");
        if (t.text == "{") throw ParseError(t.line, "dict and set literals are not supported");
        throw ParseError(t.line, "unexpected '" + t.text + "'");
      default:
        throw ParseError(t.line, "unexpected " + describe(t));
    }
  }

  std::vector<Token> toks_;
  std::vector<std::string> source_lines_;
  std::size_t pos_ = 0;
  int last_line_ = 0;
  std::size_t statements_ = 0;
};

}  // namespace

Program parse_program(std::string_view source) {
  Parser parser(Lexer(source).run(), source);
  return parser.run(source);
}

}  // namespace lmpvc::script
