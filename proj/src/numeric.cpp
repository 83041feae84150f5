#include "mlecs/numeric.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>

namespace mlecs {

namespace {

void require_finite(std::span<const double> values, const char* op) {
  if (!all_finite(values)) throw Error(fmt::format("{}: non-finite result", op));
}

// In-place LU with partial pivoting. Returns the permutation sign, or 0 if a
// pivot underflows `tiny` (the matrix is then treated as singular).
struct LuFactor {
  Matrix lu;
  std::vector<std::size_t> perm;
  int sign = 1;
  bool singular = false;
};

LuFactor lu_factor(Matrix m, double tiny) {
  const std::size_t n = m.rows();
  LuFactor f{std::move(m), std::vector<std::size_t>(n), 1, false};
  for (std::size_t i = 0; i < n; ++i) f.perm[i] = i;
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t p = k;
    double best = std::abs(f.lu(k, k));
    for (std::size_t i = k + 1; i < n; ++i) {
      if (std::abs(f.lu(i, k)) > best) {
        best = std::abs(f.lu(i, k));
        p = i;
      }
    }
    if (best <= tiny) {
      f.singular = true;
      continue;
    }
    if (p != k) {
      for (std::size_t c = 0; c < n; ++c) std::swap(f.lu(k, c), f.lu(p, c));
      std::swap(f.perm[k], f.perm[p]);
      f.sign = -f.sign;
    }
    const double pivot = f.lu(k, k);
    for (std::size_t i = k + 1; i < n; ++i) {
      const double l = f.lu(i, k) / pivot;
      f.lu(i, k) = l;
      if (l == 0.0) continue;
      for (std::size_t c = k + 1; c < n; ++c) f.lu(i, c) -= l * f.lu(k, c);
    }
  }
  return f;
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw Error("Matrix: ragged initializer");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::from_columns(std::span<const Vector> columns) {
  if (columns.empty()) return {};
  const std::size_t n = columns.front().size();
  Matrix m(n, columns.size());
  for (std::size_t c = 0; c < columns.size(); ++c) {
    if (columns[c].size() != n) {
      throw Error(fmt::format("from_columns: column {} has length {}, expected {}", c,
                              columns[c].size(), n));
    }
    for (std::size_t r = 0; r < n; ++r) m(r, c) = columns[c][r];
  }
  return m;
}

Vector Matrix::column(std::size_t c) const {
  Vector v(rows_);
  for (std::size_t r = 0; r < rows_; ++r) v[r] = (*this)(r, c);
  return v;
}

Matrix Matrix::transpose() const {
  Matrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

std::string Matrix::shape() const { return fmt::format("{}x{}", rows_, cols_); }

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw Error(fmt::format("matmul: shape mismatch {} x {}", a.shape(), b.shape()));
  }
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aik * b(k, j);
    }
  }
  require_finite(out.data(), "matmul");
  return out;
}

Vector matvec(const Matrix& a, std::span<const double> x) {
  if (a.cols() != x.size()) {
    throw Error(fmt::format("matvec: shape mismatch {} x {}", a.shape(), x.size()));
  }
  Vector out(a.rows(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto row = a.row(i);
    double s = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) s += row[k] * x[k];
    out[i] = s;
  }
  require_finite(out, "matvec");
  return out;
}

Vector matvec_transposed(const Matrix& a, std::span<const double> x) {
  if (a.rows() != x.size()) {
    throw Error(fmt::format("matvec_transposed: shape mismatch {}^T x {}", a.shape(), x.size()));
  }
  Vector out(a.cols(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double xi = x[i];
    if (xi == 0.0) continue;
    auto row = a.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) out[k] += row[k] * xi;
  }
  require_finite(out, "matvec_transposed");
  return out;
}

void add_outer(Matrix& m, std::span<const double> u, std::span<const double> v, double scale) {
  if (m.rows() != u.size() || m.cols() != v.size()) {
    throw Error(fmt::format("add_outer: {} vs {}x{}", m.shape(), u.size(), v.size()));
  }
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double ui = scale * u[i];
    if (ui == 0.0) continue;
    auto row = m.row(i);
    for (std::size_t j = 0; j < v.size(); ++j) row[j] += ui * v[j];
  }
}

Matrix gram(const Matrix& a) {
  if (a.empty()) throw Error("gram: empty matrix");
  const std::size_t k = a.cols();
  Matrix g(k, k);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = i; j < k; ++j) {
      double s = 0.0;
      for (std::size_t r = 0; r < a.rows(); ++r) s += a(r, i) * a(r, j);
      g(i, j) = s;
      g(j, i) = s;
    }
  }
  require_finite(g.data(), "gram");
  return g;
}

double det(const Matrix& g) {
  if (g.rows() != g.cols()) throw Error(fmt::format("det: non-square input {}", g.shape()));
  if (g.rows() == 0) return 1.0;
  const auto f = lu_factor(g, 0.0);
  if (f.singular) return 0.0;
  double d = f.sign;
  for (std::size_t i = 0; i < g.rows(); ++i) d *= f.lu(i, i);
  if (!std::isfinite(d)) throw Error("det: non-finite result");
  return d;
}

Matrix inverse_regularized(const Matrix& g, double eps) {
  if (g.rows() != g.cols()) {
    throw Error(fmt::format("inverse_regularized: non-square input {}", g.shape()));
  }
  if (eps < 0.0) throw Error("inverse_regularized: eps must be >= 0");
  const std::size_t n = g.rows();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double scale = std::max({1.0, std::abs(g(i, j)), std::abs(g(j, i))});
      if (std::abs(g(i, j) - g(j, i)) > 1e-9 * scale) {
        throw Error("inverse_regularized: input is not symmetric");
      }
    }
  }
  Matrix reg = g;
  for (std::size_t i = 0; i < n; ++i) reg(i, i) += eps;
  const auto f = lu_factor(reg, 1e-300);
  if (f.singular) throw Error("inverse_regularized: singular matrix after regularization");

  Matrix inv(n, n);
  Vector y(n);
  for (std::size_t col = 0; col < n; ++col) {
    // P·A = L·U; solve L·y = P·e_col, then U·x = y.
    for (std::size_t i = 0; i < n; ++i) {
      double s = f.perm[i] == col ? 1.0 : 0.0;
      for (std::size_t k = 0; k < i; ++k) s -= f.lu(i, k) * y[k];
      y[i] = s;
    }
    for (std::size_t ii = n; ii-- > 0;) {
      double s = y[ii];
      for (std::size_t k = ii + 1; k < n; ++k) s -= f.lu(ii, k) * inv(k, col);
      inv(ii, col) = s / f.lu(ii, ii);
    }
  }
  require_finite(inv.data(), "inverse_regularized");
  return inv;
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error(fmt::format("dot: length {} vs {}", a.size(), b.size()));
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

Vector log_softmax(std::span<const double> logits) {
  if (logits.empty()) throw Error("log_softmax: empty input");
  if (!all_finite(logits)) throw Error("log_softmax: non-finite input");
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double v : logits) sum += std::exp(v - mx);
  const double lse = mx + std::log(sum);
  Vector out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

Vector softmax(std::span<const double> logits) {
  Vector out = log_softmax(logits);
  for (double& v : out) v = std::exp(v);
  return out;
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) {
    throw Error(fmt::format("kl_divergence: length {} vs {}", p.size(), q.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    s += p[i] * std::log(p[i] / std::max(q[i], 1e-12));
  }
  return s;
}

bool all_finite(std::span<const double> values) {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

GradReport grad_check(const ScalarFn& f, std::span<const double> x, std::span<const double> analytic,
                      double h) {
  if (h <= 0.0) throw Error("grad_check: h must be positive");
  if (analytic.size() != x.size()) {
    throw Error(fmt::format("grad_check: {} analytic entries for {} parameters", analytic.size(),
                            x.size()));
  }
  GradReport report;
  report.analytic.assign(analytic.begin(), analytic.end());
  report.numeric.resize(x.size());
  Vector probe(x.begin(), x.end());
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double up = f(probe);
    probe[i] = x[i] - h;
    const double down = f(probe);
    probe[i] = x[i];
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw Error(fmt::format("grad_check: non-finite function value at index {}", i));
    }
    report.numeric[i] = (up - down) / (2.0 * h);
    const double a = report.analytic[i];
    const double n = report.numeric[i];
    const double abs_err = std::abs(a - n);
    const double rel_err = abs_err / std::max({std::abs(a), std::abs(n), 1e-8});
    report.max_abs_err = std::max(report.max_abs_err, abs_err);
    report.max_rel_err = std::max(report.max_rel_err, rel_err);
  }
  return report;
}

}  // namespace mlecs
