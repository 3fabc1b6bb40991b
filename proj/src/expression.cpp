#include "levyfilter/expression.hpp"

#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <numbers>

#include <fmt/format.h>

#include "levyfilter/errors.hpp"

namespace levyfilter {

namespace {

constexpr std::size_t kMaxStack = 64;

class Parser {
 public:
  Parser(std::string_view text, std::vector<Expression::Instr>& program)
      : text_(text), program_(program) {}

  void parse() {
    expr();
    skip_space();
    if (pos_ != text_.size()) fail("unexpected trailing input");
  }

  int max_index[3] = {-1, -1, -1};
  bool uses_time = false;

 private:
  using Op = Expression::Op;

  [[noreturn]] void fail(std::string_view why) const {
    throw ConfigError(fmt::format("expression '{}': {} at offset {}", text_, why, pos_));
  }

  void skip_space() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  bool accept(char c) {
    skip_space();
    if (pos_ < text_.size() && text_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  void expect(char c) {
    if (!accept(c)) fail(fmt::format("expected '{}'", c));
  }

  void emit(Op op, int index = 0, double value = 0.0) { program_.push_back({op, index, value}); }

  void expr() {
    term();
    for (;;) {
      if (accept('+')) {
        term();
        emit(Op::add);
      } else if (accept('-')) {
        term();
        emit(Op::sub);
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
        emit(Op::mul);
      } else if (accept('/')) {
        unary();
        emit(Op::div);
      } else {
        return;
      }
    }
  }

  void unary() {
    if (accept('-')) {
      unary();
      emit(Op::neg);
    } else if (accept('+')) {
      unary();
    } else {
      primary();
    }
  }

  std::string_view identifier() {
    const auto start = pos_;
    while (pos_ < text_.size() &&
           (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_')) {
      ++pos_;
    }
    return text_.substr(start, pos_ - start);
  }

  int subscript() {
    expect('[');
    skip_space();
    int value = -1;
    auto [ptr, ec] = std::from_chars(text_.data() + pos_, text_.data() + text_.size(), value);
    if (ec != std::errc() || value < 0) fail("expected a non-negative index");
    pos_ = static_cast<std::size_t>(ptr - text_.data());
    expect(']');
    return value;
  }

  void primary() {
    skip_space();
    if (pos_ >= text_.size()) fail("unexpected end of input");
    const char c = text_[pos_];
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
      double value = 0.0;
      auto [ptr, ec] = std::from_chars(text_.data() + pos_, text_.data() + text_.size(), value);
      if (ec != std::errc()) fail("bad number");
      pos_ = static_cast<std::size_t>(ptr - text_.data());
      emit(Op::constant, 0, value);
      return;
    }
    if (accept('(')) {
      expr();
      expect(')');
      return;
    }
    const auto name = identifier();
    if (name.empty()) fail("unexpected character");
    if (name == "pi") return emit(Op::constant, 0, std::numbers::pi);
    if (name == "t") {
      uses_time = true;
      return emit(Op::var_t);
    }
    if (name == "x" || name == "z" || name == "u") {
      const int slot = name == "x" ? 0 : (name == "z" ? 1 : 2);
      const int index = subscript();
      max_index[slot] = std::max(max_index[slot], index);
      return emit(slot == 0 ? Op::var_x : (slot == 1 ? Op::var_z : Op::var_u), index);
    }
    Op fn;
    if (name == "sin") {
      fn = Op::sin;
    } else if (name == "cos") {
      fn = Op::cos;
    } else if (name == "exp") {
      fn = Op::exp;
    } else if (name == "arctan" || name == "atan") {
      fn = Op::atan;
    } else if (name == "tanh") {
      fn = Op::tanh;
    } else {
      fail(fmt::format("unknown identifier '{}'", name));
    }
    expect('(');
    expr();
    expect(')');
    emit(fn);
  }

  std::string_view text_;
  std::size_t pos_ = 0;
  std::vector<Expression::Instr>& program_;
};

}  // namespace

Expression Expression::parse(std::string_view text) {
  Expression e;
  e.text_ = std::string(text);
  Parser parser(e.text_, e.program_);
  parser.parse();
  std::copy(std::begin(parser.max_index), std::end(parser.max_index), e.max_index_);
  e.uses_time_ = parser.uses_time;

  std::size_t depth = 0;
  std::size_t max_depth = 0;
  for (const auto& ins : e.program_) {
    switch (ins.op) {
      case Op::constant: case Op::var_x: case Op::var_z: case Op::var_u: case Op::var_t:
        ++depth;
        break;
      case Op::add: case Op::sub: case Op::mul: case Op::div:
        --depth;
        break;
      default:
        break;
    }
    max_depth = std::max(max_depth, depth);
  }
  if (max_depth > kMaxStack) {
    throw ConfigError(fmt::format("expression '{}' is nested too deeply", text));
  }
  return e;
}

double Expression::evaluate(const EvalPoint& p) const {
  std::array<double, kMaxStack> stack;
  std::size_t top = 0;
  for (const auto& ins : program_) {
    switch (ins.op) {
      case Op::constant: stack[top++] = ins.value; break;
      case Op::var_x: stack[top++] = p.x[ins.index]; break;
      case Op::var_z: stack[top++] = p.z[ins.index]; break;
      case Op::var_u: stack[top++] = p.u[ins.index]; break;
      case Op::var_t: stack[top++] = p.t; break;
      case Op::add: --top; stack[top - 1] += stack[top]; break;
      case Op::sub: --top; stack[top - 1] -= stack[top]; break;
      case Op::mul: --top; stack[top - 1] *= stack[top]; break;
      case Op::div: --top; stack[top - 1] /= stack[top]; break;
      case Op::neg: stack[top - 1] = -stack[top - 1]; break;
      case Op::sin: stack[top - 1] = std::sin(stack[top - 1]); break;
      case Op::cos: stack[top - 1] = std::cos(stack[top - 1]); break;
      case Op::exp: stack[top - 1] = std::exp(stack[top - 1]); break;
      case Op::atan: stack[top - 1] = std::atan(stack[top - 1]); break;
      case Op::tanh: stack[top - 1] = std::tanh(stack[top - 1]); break;
    }
  }
  return stack[0];
}

// ---------------------------------------------------------------------------

Field::Field(std::size_t rows, std::size_t cols, Fn fn, std::vector<std::string> source)
    : rows_(rows), cols_(cols), fn_(std::move(fn)), source_(std::move(source)) {
  if (!source_.empty() && source_.size() != rows_ * cols_) {
    throw InvalidArgument("field source size does not match its shape");
  }
}

Field Field::from_expressions(std::size_t rows, std::size_t cols,
                              const std::vector<std::string>& exprs,
                              const FieldSignature& signature, std::string_view name) {
  if (exprs.size() != rows * cols) {
    throw ConfigError(fmt::format("{}: expected {} entries, got {}", name, rows * cols,
                                  exprs.size()));
  }
  std::vector<Expression> compiled;
  compiled.reserve(exprs.size());
  bool all_zero = true;
  for (const auto& text : exprs) {
    auto e = Expression::parse(text);
    auto check = [&](int max_index, std::size_t dim, char var) {
      if (max_index >= 0 && static_cast<std::size_t>(max_index) >= dim) {
        throw ConfigError(fmt::format("{}: '{}' uses {}[{}] but only {} are available", name,
                                      text, var, max_index, dim));
      }
    };
    check(e.max_x_index(), signature.x_dim, 'x');
    check(e.max_z_index(), signature.z_dim, 'z');
    check(e.max_u_index(), signature.u_dim, 'u');
    if (e.uses_time() && !signature.time) {
      throw ConfigError(fmt::format("{}: '{}' may not depend on t", name, text));
    }
    if (e.max_x_index() >= 0 || e.max_z_index() >= 0 || e.max_u_index() >= 0 || e.uses_time() ||
        e.evaluate({}) != 0.0) {
      all_zero = false;
    }
    compiled.push_back(std::move(e));
  }
  Field f(rows, cols,
          [compiled = std::move(compiled)](const EvalPoint& p, std::span<double> out) {
            for (std::size_t i = 0; i < compiled.size(); ++i) out[i] = compiled[i].evaluate(p);
          },
          exprs);
  f.zero_ = all_zero;
  return f;
}

Field Field::zero(std::size_t rows, std::size_t cols) {
  Field f(rows, cols, [](const EvalPoint&, std::span<double> out) {
    std::fill(out.begin(), out.end(), 0.0);
  }, std::vector<std::string>(rows * cols, "0"));
  f.zero_ = true;
  return f;
}

Field Field::constant(std::size_t rows, std::size_t cols, std::vector<double> values) {
  if (values.size() != rows * cols) throw InvalidArgument("constant field has wrong size");
  std::vector<std::string> source;
  bool all_zero = true;
  for (double v : values) {
    source.push_back(fmt::format("{:.17g}", v));
    all_zero = all_zero && v == 0.0;
  }
  Field f(rows, cols, [values = std::move(values)](const EvalPoint&, std::span<double> out) {
    std::copy(values.begin(), values.end(), out.begin());
  }, std::move(source));
  f.zero_ = all_zero;
  return f;
}

std::vector<double> Field::eval(const EvalPoint& p) const {
  std::vector<double> out(size());
  fn_(p, out);
  return out;
}

}  // namespace levyfilter
