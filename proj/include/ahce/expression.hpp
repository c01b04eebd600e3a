#pragma once

// Closed-form structural-equation expressions.
//
// Grammar:
//   expr    := term (('+' | '-') term)*
//   term    := unary (('*' | '/') unary)*
//   unary   := '-' unary | power
//   power   := primary ('^' unary)?          right associative, binds tighter than unary minus
//   primary := number | name | func '(' expr ')' | '(' expr ')'
//   func    := 'log' | 'exp'
//
// log(u) evaluates as log(max(|u|, 1e-12)) so that log(Z^2) stays finite at
// Z = 0. Expressions are compiled to a postfix program over variable indices.

#include <array>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <cstdlib>
#include <functional>
#include <memory>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "ahce/error.hpp"

namespace ahce {

inline constexpr double kLogFloor = 1e-12;

inline double guarded_log(double u) { return std::log(std::max(std::abs(u), kLogFloor)); }

class Expression {
 public:
  /// Resolves a variable name to an index; must throw for unknown names.
  using Resolver = std::function<std::size_t(const std::string&)>;

  Expression() = default;

  /// An empty (all-whitespace) source compiles to the constant 0.
  static Expression compile(const std::string& source, const Resolver& resolve) {
    Expression e;
    e.source_ = source;
    Parser p{source, resolve, e.program_, e.references_};
    p.skip_ws();
    if (p.pos == source.size()) {
      e.program_.push_back({Op::constant, 0.0, 0});
    } else {
      p.expr();
      p.skip_ws();
      if (p.pos != source.size()) p.error("unexpected '" + std::string(1, source[p.pos]) + "'");
    }
    e.max_depth_ = e.compute_depth();
    if (e.max_depth_ > kMaxStack) fail(Errc::parse, "expression too deeply nested: " + source);
    return e;
  }

  double evaluate(std::span<const double> values) const {
    std::array<double, kMaxStack> stack;
    std::size_t top = 0;
    for (const auto& ins : program_) {
      switch (ins.op) {
        case Op::constant:
          stack[top++] = ins.value;
          break;
        case Op::variable:
          stack[top++] = values[ins.index];
          break;
        case Op::add:
          --top;
          stack[top - 1] += stack[top];
          break;
        case Op::sub:
          --top;
          stack[top - 1] -= stack[top];
          break;
        case Op::mul:
          --top;
          stack[top - 1] *= stack[top];
          break;
        case Op::div:
          --top;
          stack[top - 1] /= stack[top];
          break;
        case Op::pow:
          --top;
          stack[top - 1] = std::pow(stack[top - 1], stack[top]);
          break;
        case Op::powi: {
          double base = stack[top - 1];
          double acc = 1.0;
          for (std::size_t k = 0; k < ins.index; ++k) acc *= base;
          stack[top - 1] = acc;
          break;
        }
        case Op::neg:
          stack[top - 1] = -stack[top - 1];
          break;
        case Op::log:
          stack[top - 1] = guarded_log(stack[top - 1]);
          break;
        case Op::exp:
          stack[top - 1] = std::exp(stack[top - 1]);
          break;
      }
    }
    return stack[0];
  }

  const std::string& source() const { return source_; }
  /// Variable indices referenced by the expression.
  const std::set<std::size_t>& references() const { return references_; }

 private:
  static constexpr std::size_t kMaxStack = 64;

  enum class Op { constant, variable, add, sub, mul, div, pow, powi, neg, log, exp };
  struct Instruction {
    Op op;
    double value;
    std::size_t index;  // variable index, or the exponent for powi
  };

  struct Parser {
    const std::string& src;
    const Resolver& resolve;
    std::vector<Instruction>& out;
    std::set<std::size_t>& refs;
    std::size_t pos = 0;

    [[noreturn]] void error(const std::string& what) const {
      fail(Errc::parse, "expression '" + src + "' at column " + std::to_string(pos + 1) + ": " + what);
    }
    void skip_ws() {
      while (pos < src.size() && std::isspace(static_cast<unsigned char>(src[pos]))) ++pos;
    }
    bool accept(char c) {
      skip_ws();
      if (pos < src.size() && src[pos] == c) {
        ++pos;
        return true;
      }
      return false;
    }
    void expect(char c) {
      if (!accept(c)) error(std::string("expected '") + c + "'");
    }

    void expr() {
      term();
      for (;;) {
        if (accept('+')) {
          term();
          out.push_back({Op::add, 0, 0});
        } else if (accept('-')) {
          term();
          out.push_back({Op::sub, 0, 0});
        } else {
          return;
        }
      }
    }
    void term() {
      unary();
      for (;;) {
        if (accept('*')) {
          unary();
          out.push_back({Op::mul, 0, 0});
        } else if (accept('/')) {
          unary();
          out.push_back({Op::div, 0, 0});
        } else {
          return;
        }
      }
    }
    void unary() {
      if (accept('-')) {
        unary();
        out.push_back({Op::neg, 0, 0});
      } else {
        power();
      }
    }
    void power() {
      primary();
      if (accept('^')) {
        std::size_t start = out.size();
        unary();
        // Small non-negative integer exponents become repeated products.
        if (out.size() == start + 1 && out[start].op == Op::constant) {
          double k = out[start].value;
          if (k >= 0 && k <= 16 && k == std::floor(k)) {
            out.pop_back();
            out.push_back({Op::powi, 0, static_cast<std::size_t>(k)});
            return;
          }
        }
        out.push_back({Op::pow, 0, 0});
      }
    }
    void primary() {
      skip_ws();
      if (pos >= src.size()) error("unexpected end of expression");
      char c = src[pos];
      if (c == '(') {
        ++pos;
        expr();
        expect(')');
        return;
      }
      if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
        const char* begin = src.c_str() + pos;
        char* end = nullptr;
        double v = std::strtod(begin, &end);
        if (end == begin) error("bad number");
        pos += static_cast<std::size_t>(end - begin);
        out.push_back({Op::constant, v, 0});
        return;
      }
      if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
        std::size_t start = pos;
        while (pos < src.size() &&
               (std::isalnum(static_cast<unsigned char>(src[pos])) || src[pos] == '_' || src[pos] == '.')) {
          ++pos;
        }
        std::string name = src.substr(start, pos - start);
        skip_ws();
        if ((name == "log" || name == "exp") && pos < src.size() && src[pos] == '(') {
          ++pos;
          expr();
          expect(')');
          out.push_back({name == "log" ? Op::log : Op::exp, 0, 0});
          return;
        }
        std::size_t idx = resolve(name);
        refs.insert(idx);
        out.push_back({Op::variable, 0, idx});
        return;
      }
      error(std::string("unexpected '") + c + "'");
    }
  };

  std::size_t compute_depth() const {
    std::size_t depth = 0, peak = 0;
    for (const auto& ins : program_) {
      switch (ins.op) {
        case Op::constant:
        case Op::variable:
          ++depth;
          break;
        case Op::add:
        case Op::sub:
        case Op::mul:
        case Op::div:
        case Op::pow:
          --depth;
          break;
        default:
          break;
      }
      peak = std::max(peak, depth);
    }
    return peak;
  }

  std::string source_;
  std::vector<Instruction> program_;
  std::set<std::size_t> references_;
  std::size_t max_depth_ = 0;
};

}  // namespace ahce
