#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "mlecs/model.hpp"
#include "mlecs/numeric.hpp"
#include "mlecs/rng.hpp"
#include "mlecs/volume.hpp"

namespace testing {

using mlecs::Matrix;
using mlecs::Rng;
using mlecs::Vector;

inline Vector gaussian(std::size_t n, Rng& rng, double sd = 1.0) {
  std::normal_distribution<double> g(0.0, sd);
  Vector v(n);
  for (double& x : v) x = g(rng);
  return v;
}

inline Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng) {
  Matrix m(r, c);
  const Vector v = gaussian(r * c, rng);
  std::copy(v.begin(), v.end(), m.data().begin());
  return m;
}

inline Vector unit(Vector v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  for (double& x : v) x /= std::sqrt(s);
  return v;
}

inline Vector random_simplex(std::size_t n, Rng& rng) {
  std::uniform_real_distribution<double> u(0.05, 1.0);
  Vector p(n);
  double s = 0.0;
  for (double& x : p) s += (x = u(rng));
  for (double& x : p) x /= s;
  return p;
}

// Independent oracles, written without the library's numeric kernels.

inline Matrix triple_loop(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      out(i, j) = s;
    }
  return out;
}

inline double cofactor_det(const Matrix& m) {
  const std::size_t n = m.rows();
  if (n == 1) return m(0, 0);
  double total = 0.0;
  for (std::size_t c = 0; c < n; ++c) {
    Matrix minor(n - 1, n - 1);
    for (std::size_t i = 1; i < n; ++i)
      for (std::size_t j = 0, k = 0; j < n; ++j)
        if (j != c) minor(i - 1, k++) = m(i, j);
    total += (c % 2 == 0 ? 1.0 : -1.0) * m(0, c) * cofactor_det(minor);
  }
  return total;
}

// Gram determinant of column vectors via dot products and cofactor expansion.
inline double oracle_volume(const std::vector<Vector>& vs) {
  Matrix g(vs.size(), vs.size());
  for (std::size_t i = 0; i < vs.size(); ++i)
    for (std::size_t j = 0; j < vs.size(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < vs[i].size(); ++k) s += vs[i][k] * vs[j][k];
      g(i, j) = s;
    }
  return std::sqrt(std::max(cofactor_det(g), 0.0));
}

inline double naive_neg_log_softmax0(const Vector& scores) {
  long double z = 0.0L;
  for (double s : scores) z += std::exp(static_cast<long double>(s));
  return static_cast<double>(-(static_cast<long double>(scores[0]) - std::log(z)));
}

// Per-sample InfoNCE terms evaluated straight from the raw vectors.
inline double oracle_o2a(const mlecs::ContrastiveBatch& b) {
  const std::size_t n = b.samples.size();
  double total = 0.0;
  for (std::size_t v = 0; v < n; ++v) {
    Vector scores;
    for (std::size_t k = 0; k < b.negative_count; ++k) {
      std::vector<Vector> set{b.samples[v].anchor};
      for (const auto& o : b.samples[(v + k) % n].others) set.push_back(o);
      scores.push_back(-oracle_volume(set));
    }
    total += naive_neg_log_softmax0(scores);
  }
  return total / static_cast<double>(n);
}

inline double oracle_a2o(const mlecs::ContrastiveBatch& b) {
  const std::size_t n = b.samples.size();
  double total = 0.0;
  for (std::size_t v = 0; v < n; ++v) {
    Vector scores;
    for (std::size_t k = 0; k < b.negative_count; ++k) {
      std::vector<Vector> set{b.samples[(v + k) % n].anchor};
      for (const auto& o : b.samples[v].others) set.push_back(o);
      scores.push_back(-oracle_volume(set));
    }
    total += naive_neg_log_softmax0(scores);
  }
  return total / static_cast<double>(n);
}

// Sort descending, pool with the remainder in the leading bins, softmax, KL.
inline double oracle_kt(const mlecs::LogitSequence& p, const mlecs::LogitSequence& q, std::size_t bins) {
  auto pool = [&](std::span<const double> row) {
    Vector s(row.begin(), row.end());
    std::sort(s.begin(), s.end(), std::greater<>());
    Vector out;
    std::size_t pos = 0;
    for (std::size_t k = 0; k < bins; ++k) {
      const std::size_t n = s.size() / bins + (k < s.size() % bins ? 1 : 0);
      long double acc = 0.0L;
      for (std::size_t i = 0; i < n; ++i) acc += s[pos++];
      out.push_back(static_cast<double>(acc / n));
    }
    long double z = 0.0L;
    for (double v : out) z += std::exp(static_cast<long double>(v));
    for (double& v : out) v = static_cast<double>(std::exp(static_cast<long double>(v)) / z);
    return out;
  };
  double total = 0.0;
  for (std::size_t i = 0; i < std::min(p.length(), q.length()); ++i) {
    const Vector a = pool(p.data.row(i));
    const Vector b = pool(q.data.row(i));
    for (std::size_t k = 0; k < bins; ++k) total += a[k] * std::log(a[k] / b[k]);
  }
  return total;
}

}  // namespace testing
