#pragma once

#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace levyfilter {

/// Arguments a coefficient may depend on.
struct EvalPoint {
  std::span<const double> x;
  std::span<const double> z;
  std::span<const double> u;
  double t = 0.0;
};

/// Compiled arithmetic expression over x[i], z[j], u[k] and t.
///
/// Grammar: numbers, `pi`, + - * / (unary minus), parentheses and the
/// functions sin, cos, exp, arctan (alias atan) and tanh.
class Expression {
 public:
  static Expression parse(std::string_view text);

  double evaluate(const EvalPoint& p) const;

  const std::string& text() const noexcept { return text_; }
  // -1 when the variable does not occur
  int max_x_index() const noexcept { return max_index_[0]; }
  int max_z_index() const noexcept { return max_index_[1]; }
  int max_u_index() const noexcept { return max_index_[2]; }
  bool uses_time() const noexcept { return uses_time_; }

  enum class Op : unsigned char {
    constant, var_x, var_z, var_u, var_t, add, sub, mul, div, neg, sin, cos, exp, atan, tanh
  };
  struct Instr {
    Op op;
    int index = 0;
    double value = 0.0;
  };

 private:
  Expression() = default;

  std::string text_;
  std::vector<Instr> program_;  // postfix
  int max_index_[3] = {-1, -1, -1};
  bool uses_time_ = false;
};

/// Which arguments a field may read; used to reject expressions that
/// reference variables outside their signature.
struct FieldSignature {
  std::size_t x_dim = 0;
  std::size_t z_dim = 0;
  std::size_t u_dim = 0;
  bool time = false;
};

/// A vector- or matrix-valued coefficient (row-major), evaluated into a
/// caller-owned buffer. Either a compiled expression list or a host callback.
class Field {
 public:
  using Fn = std::function<void(const EvalPoint&, std::span<double>)>;

  Field() = default;
  Field(std::size_t rows, std::size_t cols, Fn fn, std::vector<std::string> source = {});

  static Field from_expressions(std::size_t rows, std::size_t cols,
                                const std::vector<std::string>& exprs,
                                const FieldSignature& signature, std::string_view name);
  static Field zero(std::size_t rows, std::size_t cols);
  static Field constant(std::size_t rows, std::size_t cols, std::vector<double> values);

  void operator()(const EvalPoint& p, std::span<double> out) const { fn_(p, out); }
  std::vector<double> eval(const EvalPoint& p) const;

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return rows_ * cols_; }
  bool is_zero() const noexcept { return zero_; }
  bool serializable() const noexcept { return !source_.empty(); }
  const std::vector<std::string>& source() const noexcept { return source_; }
  explicit operator bool() const noexcept { return static_cast<bool>(fn_); }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  Fn fn_;
  std::vector<std::string> source_;
  bool zero_ = false;
};

}  // namespace levyfilter
