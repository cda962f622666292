#pragma once

#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "odefilter/errors.hpp"
#include "odefilter/util.hpp"

namespace odefilter {

enum class UnaryOp { Neg };
enum class BinaryOp { Add, Sub, Mul, Div, Pow };
enum class CallFn { Exp, Ln, Sin, Cos, Sqrt, Abs, Min, Max };

inline int call_arity(CallFn fn) { return fn == CallFn::Min || fn == CallFn::Max ? 2 : 1; }

inline std::string_view call_name(CallFn fn) {
  switch (fn) {
    case CallFn::Exp: return "exp";
    case CallFn::Ln: return "ln";
    case CallFn::Sin: return "sin";
    case CallFn::Cos: return "cos";
    case CallFn::Sqrt: return "sqrt";
    case CallFn::Abs: return "abs";
    case CallFn::Min: return "min";
    case CallFn::Max: return "max";
  }
  return "?";
}

struct ExprNode;
using ExprPtr = std::shared_ptr<const ExprNode>;

/// Immutable expression tree for ODE right-hand sides. Trees are shared
/// freely after construction; evaluation is pure.
struct ExprNode {
  enum class Kind { Constant, Symbol, Unary, Binary, Call };

  Kind kind;
  double value = 0.0;       // Constant
  std::string name;         // Symbol
  UnaryOp uop = UnaryOp::Neg;
  BinaryOp bop = BinaryOp::Add;
  CallFn fn = CallFn::Exp;
  std::vector<ExprPtr> children;

  static ExprPtr constant(double v) {
    auto n = std::make_shared<ExprNode>();
    n->kind = Kind::Constant;
    n->value = v;
    return n;
  }
  static ExprPtr symbol(std::string s) {
    auto n = std::make_shared<ExprNode>();
    n->kind = Kind::Symbol;
    n->name = std::move(s);
    return n;
  }
  static ExprPtr unary(UnaryOp op, ExprPtr child) {
    auto n = std::make_shared<ExprNode>();
    n->kind = Kind::Unary;
    n->uop = op;
    n->children = {std::move(child)};
    return n;
  }
  static ExprPtr binary(BinaryOp op, ExprPtr lhs, ExprPtr rhs) {
    auto n = std::make_shared<ExprNode>();
    n->kind = Kind::Binary;
    n->bop = op;
    n->children = {std::move(lhs), std::move(rhs)};
    return n;
  }
  static ExprPtr call(CallFn f, std::vector<ExprPtr> args) {
    auto n = std::make_shared<ExprNode>();
    n->kind = Kind::Call;
    n->fn = f;
    n->children = std::move(args);
    return n;
  }
};

using Bindings = std::map<std::string, double>;

inline bool expr_equal(const ExprNode& a, const ExprNode& b) {
  if (a.kind != b.kind) return false;
  switch (a.kind) {
    case ExprNode::Kind::Constant:
      return a.value == b.value || (a.value != a.value && b.value != b.value);
    case ExprNode::Kind::Symbol:
      return a.name == b.name;
    case ExprNode::Kind::Unary:
      if (a.uop != b.uop) return false;
      break;
    case ExprNode::Kind::Binary:
      if (a.bop != b.bop) return false;
      break;
    case ExprNode::Kind::Call:
      if (a.fn != b.fn) return false;
      break;
  }
  if (a.children.size() != b.children.size()) return false;
  for (std::size_t i = 0; i < a.children.size(); ++i)
    if (!expr_equal(*a.children[i], *b.children[i])) return false;
  return true;
}

inline bool expr_equal(const ExprPtr& a, const ExprPtr& b) { return expr_equal(*a, *b); }

namespace detail {

inline bool ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
inline bool ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

/// Recursive-descent parser implementing
///   expr   := term (('+'|'-') term)*
///   term   := factor (('*'|'/') factor)*
///   factor := '-' factor | power
///   power  := atom ('^' factor)?          -- right-associative
///   atom   := number | ident | ident '(' expr {',' expr} ')' | '(' expr ')'
class ExprParser {
 public:
  explicit ExprParser(std::string_view text) : text_(text) {}

  ExprPtr parse() {
    auto e = parse_expr();
    skip_ws();
    if (pos_ != text_.size()) throw SyntaxError(pos_, "end of input");
    return e;
  }

 private:
  std::string_view text_;
  std::size_t pos_ = 0;

  void skip_ws() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }
  char peek() {
    skip_ws();
    return pos_ < text_.size() ? text_[pos_] : '\0';
  }
  bool consume(char c) {
    if (peek() == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  ExprPtr parse_expr() {
    auto lhs = parse_term();
    for (;;) {
      if (consume('+'))
        lhs = ExprNode::binary(BinaryOp::Add, lhs, parse_term());
      else if (consume('-'))
        lhs = ExprNode::binary(BinaryOp::Sub, lhs, parse_term());
      else
        return lhs;
    }
  }

  ExprPtr parse_term() {
    auto lhs = parse_factor();
    for (;;) {
      if (consume('*'))
        lhs = ExprNode::binary(BinaryOp::Mul, lhs, parse_factor());
      else if (consume('/'))
        lhs = ExprNode::binary(BinaryOp::Div, lhs, parse_factor());
      else
        return lhs;
    }
  }

  ExprPtr parse_factor() {
    if (consume('-')) {
      auto child = parse_factor();
      // Fold a negated literal into the constant so unparse round-trips.
      if (child->kind == ExprNode::Kind::Constant) return ExprNode::constant(-child->value);
      return ExprNode::unary(UnaryOp::Neg, child);
    }
    return parse_power();
  }

  ExprPtr parse_power() {
    auto base = parse_atom();
    if (consume('^')) return ExprNode::binary(BinaryOp::Pow, base, parse_factor());
    return base;
  }

  ExprPtr parse_atom() {
    char c = peek();
    if (c == '(') {
      ++pos_;
      auto e = parse_expr();
      if (!consume(')')) throw SyntaxError(pos_, "')'");
      return e;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return parse_number();
    if (ident_start(c)) return parse_ident();
    throw SyntaxError(pos_, "number, identifier or '('");
  }

  ExprPtr parse_number() {
    std::size_t start = pos_;
    while (pos_ < text_.size() &&
           (std::isdigit(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '.'))
      ++pos_;
    if (pos_ < text_.size() && (text_[pos_] == 'e' || text_[pos_] == 'E')) {
      std::size_t mark = pos_++;
      if (pos_ < text_.size() && (text_[pos_] == '+' || text_[pos_] == '-')) ++pos_;
      if (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) {
        while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) ++pos_;
      } else {
        pos_ = mark;  // trailing 'e' belongs to something else
      }
    }
    double v = 0.0;
    auto res = std::from_chars(text_.data() + start, text_.data() + pos_, v);
    if (res.ec != std::errc{} || res.ptr != text_.data() + pos_)
      throw SyntaxError(start, "numeric literal");
    return ExprNode::constant(v);
  }

  ExprPtr parse_ident() {
    std::size_t start = pos_;
    while (pos_ < text_.size() && ident_char(text_[pos_])) ++pos_;
    std::string name(text_.substr(start, pos_ - start));
    if (peek() == '(') {
      ++pos_;
      std::vector<ExprPtr> args;
      args.push_back(parse_expr());
      while (consume(',')) args.push_back(parse_expr());
      if (!consume(')')) throw SyntaxError(pos_, "')' or ','");
      CallFn fn;
      if (name == "exp") fn = CallFn::Exp;
      else if (name == "ln") fn = CallFn::Ln;
      else if (name == "sin") fn = CallFn::Sin;
      else if (name == "cos") fn = CallFn::Cos;
      else if (name == "sqrt") fn = CallFn::Sqrt;
      else if (name == "abs") fn = CallFn::Abs;
      else if (name == "min") fn = CallFn::Min;
      else if (name == "max") fn = CallFn::Max;
      else throw UnknownFunctionError(name);
      if (static_cast<int>(args.size()) != call_arity(fn))
        throw SyntaxError(start, std::string(call_name(fn)) + " takes " +
                                     std::to_string(call_arity(fn)) + " argument(s)");
      return ExprNode::call(fn, std::move(args));
    }
    return ExprNode::symbol(std::move(name));
  }
};

}  // namespace detail

/// Parse infix text into an expression tree. Precedence, tightest first:
/// '^' (right-assoc), unary '-', '*'/'/', '+'/'-'.
inline ExprPtr parse_expr(std::string_view text) { return detail::ExprParser(text).parse(); }

/// Evaluate with named bindings. Unbound symbols and domain violations
/// (ln/sqrt of a negative, division by exact zero) throw.
inline double eval_expr(const ExprNode& node, const Bindings& env) {
  switch (node.kind) {
    case ExprNode::Kind::Constant:
      return node.value;
    case ExprNode::Kind::Symbol: {
      auto it = env.find(node.name);
      if (it == env.end()) throw UnboundSymbolError(node.name);
      return it->second;
    }
    case ExprNode::Kind::Unary:
      return -eval_expr(*node.children[0], env);
    case ExprNode::Kind::Binary: {
      double a = eval_expr(*node.children[0], env);
      double b = eval_expr(*node.children[1], env);
      switch (node.bop) {
        case BinaryOp::Add: return a + b;
        case BinaryOp::Sub: return a - b;
        case BinaryOp::Mul: return a * b;
        case BinaryOp::Div:
          if (b == 0.0) throw DomainError("division by zero");
          return a / b;
        case BinaryOp::Pow: {
          double r = std::pow(a, b);
          if (r != r) throw DomainError("pow outside real domain");
          return r;
        }
      }
      break;
    }
    case ExprNode::Kind::Call: {
      double a = eval_expr(*node.children[0], env);
      switch (node.fn) {
        case CallFn::Exp: return std::exp(a);
        case CallFn::Ln:
          if (a < 0.0) throw DomainError("ln of a negative");
          return std::log(a);
        case CallFn::Sin: return std::sin(a);
        case CallFn::Cos: return std::cos(a);
        case CallFn::Sqrt:
          if (a < 0.0) throw DomainError("sqrt of a negative");
          return std::sqrt(a);
        case CallFn::Abs: return std::fabs(a);
        case CallFn::Min: return std::fmin(a, eval_expr(*node.children[1], env));
        case CallFn::Max: return std::fmax(a, eval_expr(*node.children[1], env));
      }
      break;
    }
  }
  throw Error("corrupt expression node");
}

inline double eval_expr(const ExprPtr& node, const Bindings& env) { return eval_expr(*node, env); }

inline void collect_symbols(const ExprNode& node, std::set<std::string>& out) {
  if (node.kind == ExprNode::Kind::Symbol) out.insert(node.name);
  for (const auto& c : node.children) collect_symbols(*c, out);
}

/// Exactly the symbol names appearing in the tree.
inline std::set<std::string> free_symbols(const ExprNode& node) {
  std::set<std::string> out;
  collect_symbols(node, out);
  return out;
}

inline std::set<std::string> free_symbols(const ExprPtr& node) { return free_symbols(*node); }

namespace detail {

// Printer precedence; higher binds tighter. A negative literal prints with
// a leading '-', so it behaves like a unary-minus node.
inline int eprec(const ExprNode& n) {
  switch (n.kind) {
    case ExprNode::Kind::Binary:
      switch (n.bop) {
        case BinaryOp::Add:
        case BinaryOp::Sub: return 1;
        case BinaryOp::Mul:
        case BinaryOp::Div: return 2;
        case BinaryOp::Pow: return 4;
      }
      return 1;
    case ExprNode::Kind::Unary: return 3;
    case ExprNode::Kind::Constant: return std::signbit(n.value) ? 3 : 5;
    default: return 5;
  }
}

inline void unparse_rec(const ExprNode& n, std::string& out) {
  auto child = [&](const ExprNode& c, bool needs_paren) {
    if (needs_paren) out += '(';
    unparse_rec(c, out);
    if (needs_paren) out += ')';
  };
  switch (n.kind) {
    case ExprNode::Kind::Constant:
      out += fmt_double(n.value);
      return;
    case ExprNode::Kind::Symbol:
      out += n.name;
      return;
    case ExprNode::Kind::Unary: {
      out += '-';
      child(*n.children[0], eprec(*n.children[0]) < 3);
      return;
    }
    case ExprNode::Kind::Binary: {
      const ExprNode& l = *n.children[0];
      const ExprNode& r = *n.children[1];
      int p = eprec(n);
      bool lparen, rparen;
      const char* op;
      if (n.bop == BinaryOp::Pow) {
        lparen = eprec(l) <= p;  // right-associative
        rparen = eprec(r) < p;
        op = "^";
      } else {
        lparen = eprec(l) < p;   // left-associative; right child at equal
        rparen = eprec(r) <= p;  // precedence keeps its grouping parens
        switch (n.bop) {
          case BinaryOp::Add: op = "+"; break;
          case BinaryOp::Sub: op = "-"; break;
          case BinaryOp::Mul: op = "*"; break;
          default: op = "/"; break;
        }
      }
      child(l, lparen);
      out += op;
      child(r, rparen);
      return;
    }
    case ExprNode::Kind::Call: {
      out += call_name(n.fn);
      out += '(';
      unparse_rec(*n.children[0], out);
      for (std::size_t i = 1; i < n.children.size(); ++i) {
        out += ',';
        unparse_rec(*n.children[i], out);
      }
      out += ')';
      return;
    }
  }
}

}  // namespace detail

/// Canonical text form; parse(unparse(t)) is structurally equal to t for
/// every parser-produced tree.
inline std::string unparse(const ExprNode& node) {
  std::string out;
  detail::unparse_rec(node, out);
  return out;
}

inline std::string unparse(const ExprPtr& node) { return unparse(*node); }

/// Maps symbol names to slots in a flat value vector: states first, then
/// parameters, then inputs. Shared by the filter engine and the reference
/// integrators so both evaluate identical programs.
struct SlotLayout {
  std::map<std::string, int> slot_of;
  int n_states = 0, n_params = 0, n_inputs = 0;

  int width() const { return n_states + n_params + n_inputs; }
  int state_slot(int k) const { return k; }
  int param_slot(int j) const { return n_states + j; }
  int input_slot(int i) const { return n_states + n_params + i; }
};

/// An expression compiled to a postfix program over slot-indexed values.
/// Evaluation is allocation-free and never throws; IEEE specials propagate
/// and are culled downstream by the engine's finiteness checks.
class BoundExpr {
 public:
  enum class Op : std::uint8_t {
    PushConst, PushVar, Add, Sub, Mul, Div, Pow, Neg,
    Exp, Ln, Sin, Cos, Sqrt, Abs, Min, Max
  };
  struct Instr {
    Op op;
    std::int32_t slot = 0;
    double value = 0.0;
  };

  BoundExpr() = default;

  static BoundExpr bind(const ExprNode& e, const SlotLayout& layout) {
    BoundExpr b;
    b.emit(e, layout);
    int depth = 0, max_depth = 0;
    for (const auto& ins : b.prog_) {
      switch (ins.op) {
        case Op::PushConst:
        case Op::PushVar: ++depth; break;
        case Op::Add: case Op::Sub: case Op::Mul: case Op::Div:
        case Op::Pow: case Op::Min: case Op::Max: --depth; break;
        default: break;  // unary: depth unchanged
      }
      if (depth > max_depth) max_depth = depth;
    }
    if (max_depth > kMaxStack) throw Error("expression too deep to bind");
    return b;
  }

  double eval(std::span<const double> vars) const noexcept {
    std::array<double, kMaxStack> st;
    int top = -1;
    for (const auto& ins : prog_) {
      switch (ins.op) {
        case Op::PushConst: st[++top] = ins.value; break;
        case Op::PushVar: st[++top] = vars[static_cast<std::size_t>(ins.slot)]; break;
        case Op::Add: st[top - 1] = st[top - 1] + st[top]; --top; break;
        case Op::Sub: st[top - 1] = st[top - 1] - st[top]; --top; break;
        case Op::Mul: st[top - 1] = st[top - 1] * st[top]; --top; break;
        case Op::Div: st[top - 1] = st[top - 1] / st[top]; --top; break;
        case Op::Pow: st[top - 1] = std::pow(st[top - 1], st[top]); --top; break;
        case Op::Neg: st[top] = -st[top]; break;
        case Op::Exp: st[top] = std::exp(st[top]); break;
        case Op::Ln: st[top] = std::log(st[top]); break;
        case Op::Sin: st[top] = std::sin(st[top]); break;
        case Op::Cos: st[top] = std::cos(st[top]); break;
        case Op::Sqrt: st[top] = std::sqrt(st[top]); break;
        case Op::Abs: st[top] = std::fabs(st[top]); break;
        case Op::Min: st[top - 1] = std::fmin(st[top - 1], st[top]); --top; break;
        case Op::Max: st[top - 1] = std::fmax(st[top - 1], st[top]); --top; break;
      }
    }
    return st[0];
  }

  bool empty() const { return prog_.empty(); }

 private:
  static constexpr int kMaxStack = 64;
  std::vector<Instr> prog_;

  void emit(const ExprNode& n, const SlotLayout& layout) {
    switch (n.kind) {
      case ExprNode::Kind::Constant:
        prog_.push_back({Op::PushConst, 0, n.value});
        return;
      case ExprNode::Kind::Symbol: {
        auto it = layout.slot_of.find(n.name);
        if (it == layout.slot_of.end()) throw UnboundSymbolError(n.name);
        prog_.push_back({Op::PushVar, it->second, 0.0});
        return;
      }
      case ExprNode::Kind::Unary:
        emit(*n.children[0], layout);
        prog_.push_back({Op::Neg});
        return;
      case ExprNode::Kind::Binary:
        emit(*n.children[0], layout);
        emit(*n.children[1], layout);
        switch (n.bop) {
          case BinaryOp::Add: prog_.push_back({Op::Add}); break;
          case BinaryOp::Sub: prog_.push_back({Op::Sub}); break;
          case BinaryOp::Mul: prog_.push_back({Op::Mul}); break;
          case BinaryOp::Div: prog_.push_back({Op::Div}); break;
          case BinaryOp::Pow: prog_.push_back({Op::Pow}); break;
        }
        return;
      case ExprNode::Kind::Call:
        for (const auto& c : n.children) emit(*c, layout);
        switch (n.fn) {
          case CallFn::Exp: prog_.push_back({Op::Exp}); break;
          case CallFn::Ln: prog_.push_back({Op::Ln}); break;
          case CallFn::Sin: prog_.push_back({Op::Sin}); break;
          case CallFn::Cos: prog_.push_back({Op::Cos}); break;
          case CallFn::Sqrt: prog_.push_back({Op::Sqrt}); break;
          case CallFn::Abs: prog_.push_back({Op::Abs}); break;
          case CallFn::Min: prog_.push_back({Op::Min}); break;
          case CallFn::Max: prog_.push_back({Op::Max}); break;
        }
        return;
    }
  }
};

}  // namespace odefilter
