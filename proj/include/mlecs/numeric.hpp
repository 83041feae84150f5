#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mlecs {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Vector = std::vector<double>;

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix identity(std::size_t n);
  /// Stacks equal-length vectors as the columns of a matrix.
  static Matrix from_columns(std::span<const Vector> columns);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
  Vector column(std::size_t c) const;

  Matrix transpose() const;
  std::string shape() const;

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  Vector data_;
};

Matrix matmul(const Matrix& a, const Matrix& b);
Vector matvec(const Matrix& a, std::span<const double> x);
/// aᵀ·x without materializing the transpose.
Vector matvec_transposed(const Matrix& a, std::span<const double> x);
/// m += scale · u·vᵀ
void add_outer(Matrix& m, std::span<const double> u, std::span<const double> v, double scale = 1.0);

/// AᵀA of a column-stacked vector set.
Matrix gram(const Matrix& a);

/// Determinant via LU with partial pivoting. Not clamped; callers taking a
/// square root of a Gram determinant clamp at zero themselves.
double det(const Matrix& g);

/// (G + eps·I)⁻¹ by LU solve against the identity.
Matrix inverse_regularized(const Matrix& g, double eps);

double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> a);

Vector log_softmax(std::span<const double> logits);
Vector softmax(std::span<const double> logits);

/// Σ p·ln(p/q) with 0·ln0 = 0 and q floored at 1e-12.
double kl_divergence(std::span<const double> p, std::span<const double> q);

bool all_finite(std::span<const double> values);

struct GradReport {
  Vector analytic;
  Vector numeric;
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
};

using ScalarFn = std::function<double(std::span<const double>)>;

/// Central finite differences of `f` at `x`, compared against `analytic`.
GradReport grad_check(const ScalarFn& f, std::span<const double> x, std::span<const double> analytic,
                      double h = 1e-5);

}  // namespace mlecs
