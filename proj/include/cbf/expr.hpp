#pragma once

#include <charconv>
#include <cmath>
#include <cstdio>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "cbf/errors.hpp"

namespace cbf {

/// Unary functions available in the expression grammar.
enum class Func { Sin, Cos, Exp, Log, Sqrt, Tanh };

inline const char* func_name(Func f) {
  switch (f) {
    case Func::Sin: return "sin";
    case Func::Cos: return "cos";
    case Func::Exp: return "exp";
    case Func::Log: return "log";
    case Func::Sqrt: return "sqrt";
    case Func::Tanh: return "tanh";
  }
  return "?";
}

namespace detail {

/// Exact integer power by squaring; k may be negative.
inline double ipow(double base, int k) {
  if (k < 0) return 1.0 / ipow(base, -k);
  double result = 1.0;
  double b = base;
  for (unsigned e = static_cast<unsigned>(k); e != 0; e >>= 1) {
    if (e & 1u) result *= b;
    b *= b;
  }
  return result;
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

/// Immutable scalar expression over state variables x1..xn.
///
/// Nodes are shared and never mutated after construction, so expressions are
/// cheap to copy and safe to evaluate concurrently. The factory functions
/// apply light simplification only (constant folding plus 0/1 identities);
/// correctness of derivatives is validated numerically rather than by
/// canonicalization.
class Expr {
 public:
  enum class Kind { Constant, Variable, Add, Sub, Mul, Div, Neg, Pow, Call };

  /// Zero expression.
  Expr() : node_(zero_node()) {}

  static Expr constant(double value) {
    auto n = std::make_shared<Node>();
    n->kind = Kind::Constant;
    n->value = value;
    return Expr(std::move(n));
  }

  /// 1-based state variable x<index>.
  static Expr variable(int index) {
    auto n = std::make_shared<Node>();
    n->kind = Kind::Variable;
    n->var = index;
    return Expr(std::move(n));
  }

  Kind kind() const { return node_->kind; }
  double value() const { return node_->value; }
  int var_index() const { return node_->var; }
  int exponent() const { return node_->exponent; }
  Func fn() const { return node_->fn; }
  Expr child_a() const { return Expr(node_->a); }
  Expr child_b() const { return Expr(node_->b); }

  bool is_constant() const { return node_->kind == Kind::Constant; }
  bool is_constant(double v) const {
    return is_constant() && node_->value == v;
  }

  /// Evaluates at a state vector. Throws DomainError at singularities,
  /// reporting the offending subexpression.
  double eval(std::span<const double> x) const { return eval_node(node_.get(), x); }

  /// Exact partial derivative with respect to x<var> (1-based).
  Expr diff(int var) const { return diff_node(node_.get(), var); }

  /// Grammar-conformant text; parsing it back yields a structurally
  /// identical tree.
  std::string str() const { return print_node(node_.get()).text; }

  /// Structural equality (same shape, same payloads).
  bool same_as(const Expr& other) const {
    return same_node(node_.get(), other.node_.get());
  }

  /// Largest variable index referenced, 0 for constant expressions.
  int max_var_index() const { return max_var_node(node_.get()); }

  friend Expr operator+(const Expr& a, const Expr& b) {
    if (a.is_constant(0.0)) return b;
    if (b.is_constant(0.0)) return a;
    if (a.is_constant() && b.is_constant())
      return constant(a.value() + b.value());
    if (b.kind() == Kind::Neg) return a - b.child_a();
    return binary(Kind::Add, a, b);
  }

  friend Expr operator-(const Expr& a, const Expr& b) {
    if (b.is_constant(0.0)) return a;
    if (a.is_constant() && b.is_constant())
      return constant(a.value() - b.value());
    if (a.is_constant(0.0)) return -b;
    if (b.kind() == Kind::Neg) return a + b.child_a();
    return binary(Kind::Sub, a, b);
  }

  friend Expr operator*(const Expr& a, const Expr& b) {
    if (a.is_constant() && b.is_constant())
      return constant(a.value() * b.value());
    if (a.is_constant(0.0) || b.is_constant(0.0)) return constant(0.0);
    if (a.is_constant(1.0)) return b;
    if (b.is_constant(1.0)) return a;
    return binary(Kind::Mul, a, b);
  }

  friend Expr operator/(const Expr& a, const Expr& b) {
    if (b.is_constant(1.0)) return a;
    if (a.is_constant(0.0)) return constant(0.0);
    if (a.is_constant() && b.is_constant() && b.value() != 0.0)
      return constant(a.value() / b.value());
    return binary(Kind::Div, a, b);
  }

  friend Expr operator-(const Expr& a) {
    if (a.is_constant()) return constant(-a.value());
    if (a.kind() == Kind::Neg) return a.child_a();
    auto n = std::make_shared<Node>();
    n->kind = Kind::Neg;
    n->a = a.node_;
    return Expr(std::move(n));
  }

  friend Expr pow(const Expr& a, int k) {
    if (k == 0) return constant(1.0);
    if (k == 1) return a;
    if (a.is_constant() && !(a.value() == 0.0 && k < 0))
      return constant(detail::ipow(a.value(), k));
    auto n = std::make_shared<Node>();
    n->kind = Kind::Pow;
    n->a = a.node_;
    n->exponent = k;
    return Expr(std::move(n));
  }

  friend Expr call(Func f, const Expr& a) {
    if (a.is_constant()) {
      const double v = apply_func(f, a.value());
      if (std::isfinite(v)) return constant(v);  // keep singular calls unfolded
    }
    auto n = std::make_shared<Node>();
    n->kind = Kind::Call;
    n->a = a.node_;
    n->fn = f;
    return Expr(std::move(n));
  }

  friend Expr sin(const Expr& a) { return call(Func::Sin, a); }
  friend Expr cos(const Expr& a) { return call(Func::Cos, a); }
  friend Expr exp(const Expr& a) { return call(Func::Exp, a); }
  friend Expr log(const Expr& a) { return call(Func::Log, a); }
  friend Expr sqrt(const Expr& a) { return call(Func::Sqrt, a); }
  friend Expr tanh(const Expr& a) { return call(Func::Tanh, a); }

 private:
  struct Node;
  using NodePtr = std::shared_ptr<const Node>;

  struct Node {
    Kind kind = Kind::Constant;
    double value = 0.0;      // Constant
    int var = 0;             // Variable (1-based)
    int exponent = 0;        // Pow
    Func fn = Func::Sin;     // Call
    NodePtr a, b;
  };

  explicit Expr(NodePtr n) : node_(std::move(n)) {}

  static const NodePtr& zero_node() {
    static const NodePtr zero = std::make_shared<Node>();
    return zero;
  }

  static Expr binary(Kind k, const Expr& a, const Expr& b) {
    auto n = std::make_shared<Node>();
    n->kind = k;
    n->a = a.node_;
    n->b = b.node_;
    return Expr(std::move(n));
  }

  static double apply_func(Func f, double v) {
    switch (f) {
      case Func::Sin: return std::sin(v);
      case Func::Cos: return std::cos(v);
      case Func::Exp: return std::exp(v);
      case Func::Log: return std::log(v);
      case Func::Sqrt: return std::sqrt(v);
      case Func::Tanh: return std::tanh(v);
    }
    return 0.0;
  }

  static double eval_node(const Node* n, std::span<const double> x) {
    switch (n->kind) {
      case Kind::Constant:
        return n->value;
      case Kind::Variable:
        if (n->var < 1 || static_cast<std::size_t>(n->var) > x.size())
          throw Error("expression references x" + std::to_string(n->var) +
                      " but the state has dimension " + std::to_string(x.size()));
        return x[static_cast<std::size_t>(n->var - 1)];
      case Kind::Add:
        return eval_node(n->a.get(), x) + eval_node(n->b.get(), x);
      case Kind::Sub:
        return eval_node(n->a.get(), x) - eval_node(n->b.get(), x);
      case Kind::Mul:
        return eval_node(n->a.get(), x) * eval_node(n->b.get(), x);
      case Kind::Div: {
        const double den = eval_node(n->b.get(), x);
        if (den == 0.0)
          throw DomainError("division by zero", print_node(n).text);
        return eval_node(n->a.get(), x) / den;
      }
      case Kind::Neg:
        return -eval_node(n->a.get(), x);
      case Kind::Pow: {
        const double base = eval_node(n->a.get(), x);
        if (base == 0.0 && n->exponent < 0)
          throw DomainError("zero raised to a negative power", print_node(n).text);
        return detail::ipow(base, n->exponent);
      }
      case Kind::Call: {
        const double v = eval_node(n->a.get(), x);
        if (n->fn == Func::Log && v <= 0.0)
          throw DomainError("log of a nonpositive value", print_node(n).text);
        if (n->fn == Func::Sqrt && v < 0.0)
          throw DomainError("sqrt of a negative value", print_node(n).text);
        return apply_func(n->fn, v);
      }
    }
    return 0.0;
  }

  static Expr diff_node(const Node* n, int var) {
    const Expr A(n->a);
    const Expr B(n->b);
    switch (n->kind) {
      case Kind::Constant:
        return constant(0.0);
      case Kind::Variable:
        return constant(n->var == var ? 1.0 : 0.0);
      case Kind::Add:
        return A.diff(var) + B.diff(var);
      case Kind::Sub:
        return A.diff(var) - B.diff(var);
      case Kind::Mul:
        return A.diff(var) * B + A * B.diff(var);
      case Kind::Div:
        return (A.diff(var) * B - A * B.diff(var)) / pow(B, 2);
      case Kind::Neg:
        return -A.diff(var);
      case Kind::Pow:
        return constant(n->exponent) * pow(A, n->exponent - 1) * A.diff(var);
      case Kind::Call: {
        const Expr da = A.diff(var);
        switch (n->fn) {
          case Func::Sin: return cos(A) * da;
          case Func::Cos: return -(sin(A) * da);
          case Func::Exp: return exp(A) * da;
          case Func::Log: return da / A;
          case Func::Sqrt: return da / (constant(2.0) * sqrt(A));
          case Func::Tanh: return (constant(1.0) - pow(tanh(A), 2)) * da;
        }
        return constant(0.0);
      }
    }
    return constant(0.0);
  }

  // Printing precedences: Add/Sub 1, Mul/Div 2, Neg 3, Pow 4, atoms 5.
  // The grammar's unary minus applies to an (optionally powered) atom, so a
  // Neg child below another Neg or a negative literal must be parenthesized.
  struct Printed {
    std::string text;
    int prec;
  };

  static std::string wrap_lt(const Printed& p, int min_prec) {
    return p.prec < min_prec ? "(" + p.text + ")" : p.text;
  }
  static std::string wrap_le(const Printed& p, int min_prec) {
    return p.prec <= min_prec ? "(" + p.text + ")" : p.text;
  }

  static Printed print_node(const Node* n) {
    switch (n->kind) {
      case Kind::Constant:
        return {detail::format_double(n->value), n->value < 0 ? 3 : 5};
      case Kind::Variable:
        return {"x" + std::to_string(n->var), 5};
      case Kind::Add: {
        const Printed l = print_node(n->a.get());
        const Printed r = print_node(n->b.get());
        return {wrap_lt(l, 1) + " + " + wrap_le(r, 1), 1};
      }
      case Kind::Sub: {
        const Printed l = print_node(n->a.get());
        const Printed r = print_node(n->b.get());
        return {wrap_lt(l, 1) + " - " + wrap_le(r, 1), 1};
      }
      case Kind::Mul: {
        const Printed l = print_node(n->a.get());
        const Printed r = print_node(n->b.get());
        return {wrap_lt(l, 2) + " * " + wrap_le(r, 2), 2};
      }
      case Kind::Div: {
        const Printed l = print_node(n->a.get());
        const Printed r = print_node(n->b.get());
        return {wrap_lt(l, 2) + " / " + wrap_le(r, 2), 2};
      }
      case Kind::Neg: {
        const Printed c = print_node(n->a.get());
        return {"-" + wrap_lt(c, 4), 3};
      }
      case Kind::Pow: {
        const Printed base = print_node(n->a.get());
        return {wrap_lt(base, 5) + "^" + std::to_string(n->exponent), 4};
      }
      case Kind::Call:
        return {std::string(func_name(n->fn)) + "(" +
                    print_node(n->a.get()).text + ")",
                5};
    }
    return {"", 5};
  }

  static bool same_node(const Node* x, const Node* y) {
    if (x == y) return true;
    if (x->kind != y->kind) return false;
    switch (x->kind) {
      case Kind::Constant: return x->value == y->value;
      case Kind::Variable: return x->var == y->var;
      case Kind::Neg: return same_node(x->a.get(), y->a.get());
      case Kind::Pow:
        return x->exponent == y->exponent && same_node(x->a.get(), y->a.get());
      case Kind::Call:
        return x->fn == y->fn && same_node(x->a.get(), y->a.get());
      default:
        return same_node(x->a.get(), y->a.get()) &&
               same_node(x->b.get(), y->b.get());
    }
  }

  static int max_var_node(const Node* n) {
    switch (n->kind) {
      case Kind::Constant: return 0;
      case Kind::Variable: return n->var;
      case Kind::Add:
      case Kind::Sub:
      case Kind::Mul:
      case Kind::Div:
        return std::max(max_var_node(n->a.get()), max_var_node(n->b.get()));
      default:
        return max_var_node(n->a.get());
    }
  }

  NodePtr node_;
};

namespace detail {

// Recursive-descent parser for the expression grammar:
//   expr   := term (('+'|'-') term)*
//   term   := factor (('*'|'/') factor)*
//   factor := ['-'] atom ['^' integer]
//   atom   := number | 'x' index | func '(' expr ')' | '(' expr ')'
class ExprParser {
 public:
  ExprParser(std::string_view src, int n_vars) : src_(src), n_vars_(n_vars) {}

  Expr parse() {
    Expr e = expr();
    skip_ws();
    if (pos_ != src_.size())
      throw ParseError("syntax error at position " + std::to_string(pos_) +
                           ": unexpected '" + std::string(1, src_[pos_]) + "'",
                       pos_);
    return e;
  }

 private:
  Expr expr() {
    Expr e = term();
    for (;;) {
      skip_ws();
      if (consume('+')) {
        e = e + term();
      } else if (consume('-')) {
        e = e - term();
      } else {
        return e;
      }
    }
  }

  Expr term() {
    Expr e = factor();
    for (;;) {
      skip_ws();
      if (consume('*')) {
        e = e * factor();
      } else if (consume('/')) {
        e = e / factor();
      } else {
        return e;
      }
    }
  }

  Expr factor() {
    skip_ws();
    const bool negated = consume('-');
    Expr e = atom();
    skip_ws();
    if (consume('^')) e = pow(e, parse_int());
    return negated ? -e : e;
  }

  Expr atom() {
    skip_ws();
    if (pos_ >= src_.size())
      throw ParseError("syntax error at position " + std::to_string(pos_) +
                           ": unexpected end of input",
                       pos_);
    const char c = src_[pos_];
    if (is_digit(c) || c == '.') return parse_number();
    if (consume('(')) {
      Expr e = expr();
      skip_ws();
      if (!consume(')'))
        throw ParseError("syntax error at position " + std::to_string(pos_) +
                             ": expected ')'",
                         pos_);
      return e;
    }
    if (is_alpha(c)) return parse_identifier();
    throw ParseError("syntax error at position " + std::to_string(pos_) +
                         ": unexpected '" + std::string(1, c) + "'",
                     pos_);
  }

  Expr parse_identifier() {
    const std::size_t start = pos_;
    // 'x' immediately followed by digits is a state variable.
    if (src_[pos_] == 'x' && pos_ + 1 < src_.size() && is_digit(src_[pos_ + 1])) {
      ++pos_;
      const std::size_t idx_start = pos_;
      while (pos_ < src_.size() && is_digit(src_[pos_])) ++pos_;
      int index = 0;
      const auto res = std::from_chars(src_.data() + idx_start,
                                       src_.data() + pos_, index);
      if (res.ec != std::errc())
        throw ParseError("invalid variable index at position " +
                             std::to_string(idx_start),
                         idx_start);
      if (index < 1 || index > n_vars_)
        throw ParseError("variable index out of range at position " +
                             std::to_string(start) + ": x" +
                             std::to_string(index) + " (n=" +
                             std::to_string(n_vars_) + ")",
                         start);
      return Expr::variable(index);
    }
    while (pos_ < src_.size() && is_alpha(src_[pos_])) ++pos_;
    const std::string_view name = src_.substr(start, pos_ - start);
    Func f;
    if (name == "sin") f = Func::Sin;
    else if (name == "cos") f = Func::Cos;
    else if (name == "exp") f = Func::Exp;
    else if (name == "log") f = Func::Log;
    else if (name == "sqrt") f = Func::Sqrt;
    else if (name == "tanh") f = Func::Tanh;
    else if (name == "x")
      throw ParseError("variable index expected after 'x' at position " +
                           std::to_string(start),
                       start);
    else
      throw ParseError("unknown identifier '" + std::string(name) +
                           "' at position " + std::to_string(start),
                       start);
    skip_ws();
    if (!consume('('))
      throw ParseError("expected '(' after function '" + std::string(name) +
                           "' at position " + std::to_string(pos_),
                       pos_);
    Expr arg = expr();
    skip_ws();
    if (!consume(')'))
      throw ParseError("syntax error at position " + std::to_string(pos_) +
                           ": expected ')'",
                       pos_);
    return call(f, arg);
  }

  Expr parse_number() {
    const std::size_t start = pos_;
    while (pos_ < src_.size() && (is_digit(src_[pos_]) || src_[pos_] == '.'))
      ++pos_;
    // Optional exponent; only consumed when followed by a valid tail.
    if (pos_ < src_.size() && (src_[pos_] == 'e' || src_[pos_] == 'E')) {
      std::size_t probe = pos_ + 1;
      if (probe < src_.size() && (src_[probe] == '+' || src_[probe] == '-'))
        ++probe;
      if (probe < src_.size() && is_digit(src_[probe])) {
        pos_ = probe;
        while (pos_ < src_.size() && is_digit(src_[pos_])) ++pos_;
      }
    }
    double value = 0.0;
    const auto res =
        std::from_chars(src_.data() + start, src_.data() + pos_, value);
    if (res.ec != std::errc() || res.ptr != src_.data() + pos_)
      throw ParseError("invalid number at position " + std::to_string(start),
                       start);
    return Expr::constant(value);
  }

  int parse_int() {
    skip_ws();
    const std::size_t start = pos_;
    if (pos_ < src_.size() && src_[pos_] == '-') ++pos_;
    const std::size_t digits_start = pos_;
    while (pos_ < src_.size() && is_digit(src_[pos_])) ++pos_;
    int value = 0;
    const auto res =
        std::from_chars(src_.data() + start, src_.data() + pos_, value);
    if (pos_ == digits_start || res.ec != std::errc())
      throw ParseError("integer exponent expected at position " +
                           std::to_string(start),
                       start);
    return value;
  }

  static bool is_digit(char c) { return c >= '0' && c <= '9'; }
  static bool is_alpha(char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z');
  }

  void skip_ws() {
    while (pos_ < src_.size() &&
           (src_[pos_] == ' ' || src_[pos_] == '\t' || src_[pos_] == '\n' ||
            src_[pos_] == '\r'))
      ++pos_;
  }

  bool consume(char c) {
    skip_ws();
    if (pos_ < src_.size() && src_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  std::string_view src_;
  int n_vars_;
  std::size_t pos_ = 0;
};

}  // namespace detail

/// Parses an expression over variables x1..x<n_vars>.
inline Expr parse_expr(std::string_view source, int n_vars) {
  return detail::ExprParser(source, n_vars).parse();
}

/// A list of n scalar components, one per state dimension.
struct VectorField {
  int n = 0;
  std::vector<Expr> comps;
};

/// Dense matrix of expressions, row-major.
class ExprMatrix {
 public:
  ExprMatrix() = default;
  ExprMatrix(int rows, int cols)
      : rows_(rows), cols_(cols), cells_(static_cast<std::size_t>(rows) * cols) {}

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  Expr& at(int i, int j) { return cells_[static_cast<std::size_t>(i) * cols_ + j]; }
  const Expr& at(int i, int j) const {
    return cells_[static_cast<std::size_t>(i) * cols_ + j];
  }

 private:
  int rows_ = 0, cols_ = 0;
  std::vector<Expr> cells_;
};

/// Row vector of partials (d e / d x1, ..., d e / d xn).
inline std::vector<Expr> gradient(const Expr& e, int n) {
  std::vector<Expr> g;
  g.reserve(static_cast<std::size_t>(n));
  for (int i = 1; i <= n; ++i) g.push_back(e.diff(i));
  return g;
}

/// J(i,j) = d comps[i] / d x_{j+1}.
inline ExprMatrix jacobian(const VectorField& v) {
  ExprMatrix J(v.n, v.n);
  for (int i = 0; i < v.n; ++i)
    for (int j = 0; j < v.n; ++j) J.at(i, j) = v.comps[static_cast<std::size_t>(i)].diff(j + 1);
  return J;
}

/// Symmetric second-derivative matrix; one triangle is differentiated and
/// mirrored, so evaluated symmetry is exact.
inline ExprMatrix hessian(const Expr& e, int n) {
  const std::vector<Expr> g = gradient(e, n);
  ExprMatrix H(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = i; j < n; ++j) {
      Expr hij = g[static_cast<std::size_t>(i)].diff(j + 1);
      H.at(i, j) = hij;
      H.at(j, i) = hij;
    }
  }
  return H;
}

}  // namespace cbf
