#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "mlecs/numeric.hpp"
#include "support.hpp"

using namespace mlecs;
using testing::gaussian;
using testing::random_matrix;

TEST_CASE("matmul small fixtures") {
  const Matrix m{{1, 2, 3}, {4, 5, 6}, {7, 8, 9}};
  CHECK(matmul(Matrix::identity(3), m) == m);
  const Matrix r = matmul(Matrix{{1, 2}, {3, 4}}, Matrix{{0}, {1}});
  CHECK(r == Matrix{{2}, {4}});
}

TEST_CASE("matmul agrees with a triple loop") {
  Rng rng(11);
  const Matrix a = random_matrix(5, 7, rng);
  const Matrix b = random_matrix(7, 3, rng);
  const Matrix got = matmul(a, b);
  const Matrix want = testing::triple_loop(a, b);
  for (std::size_t i = 0; i < got.size(); ++i) CHECK(std::abs(got.data()[i] - want.data()[i]) < 1e-12);
}

TEST_CASE("matmul rejects mismatched shapes and names both") {
  try {
    matmul(Matrix(2, 3), Matrix(4, 2));
    FAIL("expected an error");
  } catch (const Error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("2x3") != std::string::npos);
    CHECK(msg.find("4x2") != std::string::npos);
  }
}

TEST_CASE("gram fixtures") {
  const Matrix q = Matrix::from_columns(std::vector<Vector>{{1, 0, 0}, {0, 1, 0}});
  CHECK(gram(q) == Matrix::identity(2));
  const Matrix single = gram(Matrix::from_columns(std::vector<Vector>{{3, 4}}));
  CHECK(single.rows() == 1);
  CHECK(single(0, 0) == doctest::Approx(25.0));
  const Matrix g = gram(Matrix::from_columns(std::vector<Vector>{{1, 0, 1, 0}, {0, 2, 0, 0}, {1, 1, 0, 1}}));
  CHECK(g == Matrix{{2, 0, 1}, {0, 4, 2}, {1, 2, 3}});
}

TEST_CASE("gram is symmetric and positive semidefinite") {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t d = 1 + trial % 6;
    const std::size_t k = 1 + trial % 4;
    const Matrix g = gram(random_matrix(d, k, rng));
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < k; ++j) REQUIRE(std::abs(g(i, j) - g(j, i)) < 1e-12);
    // Rayleigh quotients over random directions bound the smallest eigenvalue.
    for (int probe = 0; probe < 20; ++probe) {
      const Vector x = testing::unit(gaussian(k, rng));
      REQUIRE(dot(x, matvec(g, x)) >= -1e-9);
    }
    for (std::size_t i = 0; i < k; ++i) REQUIRE(g(i, i) >= 0.0);
  }
}

TEST_CASE("det fixtures") {
  CHECK(det(Matrix::identity(4)) == doctest::Approx(1.0));
  CHECK(std::abs(det(Matrix{{1, 2, 3}, {4, 5, 6}, {1, 2, 3}})) < 1e-10);
  const Matrix g{{2, 0, 1}, {0, 4, 2}, {1, 2, 3}};
  CHECK(testing::cofactor_det(g) == doctest::Approx(12.0).epsilon(1e-15));
  CHECK(std::abs(det(g) - testing::cofactor_det(g)) < 1e-12);
  CHECK_THROWS_AS(det(Matrix(2, 3)), Error);
}

TEST_CASE("det of a Gram matrix is the squared determinant") {
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + trial % 5;
    const Matrix a = random_matrix(n, n, rng);
    const double d = det(a);
    CHECK(std::abs(det(gram(a)) - d * d) <= 1e-8 * std::max(1.0, d * d));
  }
}

TEST_CASE("row permutation flips det by the permutation parity") {
  Rng rng(9);
  const Matrix a = random_matrix(4, 4, rng);
  std::vector<std::size_t> perm{0, 1, 2, 3};
  int count = 0;
  do {
    Matrix p(4, 4);
    for (std::size_t r = 0; r < 4; ++r)
      for (std::size_t c = 0; c < 4; ++c) p(r, c) = a(perm[r], c);
    int inversions = 0;
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = i + 1; j < 4; ++j) inversions += perm[i] > perm[j];
    const double sign = inversions % 2 == 0 ? 1.0 : -1.0;
    CHECK(det(p) == doctest::Approx(sign * det(a)).epsilon(1e-10));
    ++count;
  } while (std::next_permutation(perm.begin(), perm.end()));
  CHECK(count == 24);
}

TEST_CASE("inverse_regularized") {
  CHECK(inverse_regularized(Matrix::identity(3), 0.0) == Matrix::identity(3));
  const Matrix inv = inverse_regularized(Matrix{{2, 0}, {0, 4}}, 0.0);
  CHECK(inv(0, 0) == doctest::Approx(0.5));
  CHECK(inv(1, 1) == doctest::Approx(0.25));
  CHECK(inv(0, 1) == 0.0);

  // Rank-1 Gram of a duplicated unit vector: only the regularizer makes it invertible.
  const Vector v = testing::unit({1, 2, 2});
  const Matrix g = gram(Matrix::from_columns(std::vector<Vector>{v, v}));
  const double eps = 1e-8;
  Matrix reg = g;
  for (std::size_t i = 0; i < 2; ++i) reg(i, i) += eps;
  const Matrix prod = matmul(reg, inverse_regularized(g, eps));
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j) CHECK(std::abs(prod(i, j) - (i == j ? 1.0 : 0.0)) < 1e-6);

  CHECK_THROWS_AS(inverse_regularized(Matrix(2, 2), 0.0), Error);
  CHECK_THROWS_AS(inverse_regularized(Matrix{{1, 2}, {0, 1}}, 0.0), Error);
}

TEST_CASE("inverse_regularized residual on random SPD matrices") {
  Rng rng(10);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix g = gram(random_matrix(6, 4, rng));
    const Matrix prod = matmul(g, inverse_regularized(g, 0.0));
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j) CHECK(std::abs(prod(i, j) - (i == j ? 1.0 : 0.0)) < 1e-8);
  }
}

TEST_CASE("log_softmax") {
  const Vector a = log_softmax(Vector{0.0, 0.0});
  CHECK(a[0] == doctest::Approx(-std::log(2.0)));
  CHECK(a[1] == doctest::Approx(-std::log(2.0)));
  const Vector big = log_softmax(Vector{1000.0, 0.0});
  CHECK(all_finite(big));
  CHECK(std::abs(big[0]) < 1e-12);
  CHECK_THROWS_AS(log_softmax(Vector{}), Error);

  Rng rng(12);
  const Vector x = gaussian(6, rng, 3.0);
  const Vector got = log_softmax(x);
  long double z = 0.0L;
  for (double v : x) z += std::exp(static_cast<long double>(v));
  double mass = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    CHECK(std::abs(got[i] - static_cast<double>(x[i] - std::log(z))) < 1e-12);
    mass += std::exp(got[i]);
  }
  CHECK(std::abs(mass - 1.0) < 1e-12);

  Vector shifted = x;
  for (double& v : shifted) v += 17.25;
  const Vector s = log_softmax(shifted);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(s[i] - got[i]) < 1e-12);
}

TEST_CASE("kl_divergence") {
  const Vector p{0.2, 0.3, 0.5};
  CHECK(kl_divergence(p, p) == 0.0);
  CHECK(kl_divergence(Vector{1.0, 0.0}, Vector{0.5, 0.5}) == doctest::Approx(std::log(2.0)));
  CHECK_THROWS_AS(kl_divergence(Vector{1.0}, Vector{0.5, 0.5}), Error);

  Rng rng(13);
  for (int trial = 0; trial < 50; ++trial) {
    const Vector a = testing::random_simplex(5, rng);
    const Vector b = testing::random_simplex(5, rng);
    double direct = 0.0;
    for (std::size_t i = 0; i < 5; ++i) direct += a[i] * std::log(a[i] / b[i]);
    CHECK(std::abs(kl_divergence(a, b) - direct) < 1e-12);
    CHECK(kl_divergence(a, b) > 1e-9);  // distinct pairs are strictly positive
  }
}

TEST_CASE("grad_check") {
  Rng rng(14);
  const Vector x = gaussian(7, rng);
  Vector twice(x);
  for (double& v : twice) v *= 2.0;
  const auto sq = grad_check([](std::span<const double> p) { return dot(p, p); }, x, twice);
  CHECK(sq.max_rel_err < 1e-7);
  CHECK(sq.numeric.size() == x.size());

  const auto flat = grad_check([](std::span<const double>) { return 3.0; }, x, Vector(7, 0.0));
  CHECK(flat.max_abs_err < 1e-9);

  auto blows_up = [](std::span<const double> p) { return p[2] > 0.5 ? std::nan("") : 0.0; };
  Vector at(5, 0.5);
  try {
    grad_check(blows_up, at, Vector(5, 0.0));
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("index 2") != std::string::npos);
  }
  CHECK_THROWS_AS(grad_check(blows_up, at, Vector(5, 0.0), 0.0), Error);
}

TEST_CASE("operations reject non-finite results") {
  const Matrix huge{{1e200, 1e200}};
  CHECK_THROWS_AS(gram(huge), Error);
}
