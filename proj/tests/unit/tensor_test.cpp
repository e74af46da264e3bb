#include <algorithm>
#include <cmath>
#include <numeric>

#include "alignlens/tensor.hpp"
#include "doctest.h"
#include "test_support.hpp"

using namespace alignlens;

TEST_CASE("matmul identity and hand arithmetic") {
  Matrix b(2, 3, std::vector<float>{1, 2, 3, 4, 5, 6});
  CHECK(matmul(Matrix::identity(2), b) == b);
  Matrix a(2, 2, std::vector<float>{1, 2, 3, 4});
  Matrix v(2, 1, std::vector<float>{0, 1});
  CHECK(matmul(a, v) == Matrix(2, 1, std::vector<float>{2, 4}));
}

TEST_CASE("matmul matches naive triple loop") {
  Rng rng(11);
  for (int rep = 0; rep < 5; ++rep) {
    const auto a = testing::random_matrix(rng, 8, 8);
    const auto b = testing::random_matrix(rng, 8, 8);
    const auto got = matmul(a, b);
    const auto want = testing::naive_matmul(a, b);
    for (std::size_t i = 0; i < got.size(); ++i) CHECK(got.data()[i] == doctest::Approx(want.data()[i]).epsilon(1e-6));
    const auto af = testing::random_matrix_f(rng, 8, 5);
    const auto bf = testing::random_matrix_f(rng, 5, 7);
    const auto gf = matmul(af, bf);
    const auto wf = testing::naive_matmul(af, bf);
    for (std::size_t i = 0; i < gf.size(); ++i) CHECK(std::abs(gf.data()[i] - wf.data()[i]) <= 1e-6);
  }
}

TEST_CASE("matmul rejects mismatched shapes") {
  CHECK_THROWS_AS(matmul(Matrix(2, 3), Matrix(2, 3)), DimensionError);
}

TEST_CASE("transpose swaps indices") {
  Matrix a(2, 3, std::vector<float>{1, 2, 3, 4, 5, 6});
  const auto t = transpose(a);
  REQUIRE(t.rows() == 3);
  CHECK(t(2, 1) == 6.0f);
  CHECK(transpose(t) == a);
}

TEST_CASE("softmax rows") {
  const auto u = softmax_rows(Matrix(1, 3), 1.0);
  for (float x : u.data()) CHECK(x == doctest::Approx(1.0 / 3.0));
  const auto s = softmax_rows(Matrix(1, 2, std::vector<float>{1000.0f, -1000.0f}), 1.0);
  CHECK(s(0, 0) == doctest::Approx(1.0));
  CHECK(s(0, 1) == doctest::Approx(0.0));
  const auto f = softmax_rows(Matrix(1, 2, std::vector<float>{1.0f, 2.0f}), 1.0);
  CHECK(f(0, 0) == doctest::Approx(0.26894).epsilon(1e-5));
  CHECK(f(0, 1) == doctest::Approx(0.73106).epsilon(1e-5));
}

TEST_CASE("symmetric eig on identity and diagonal") {
  const auto id = symmetric_eig(MatrixD::identity(4));
  for (double l : id.eigenvalues) CHECK(l == doctest::Approx(1.0));
  MatrixD d(2, 2);
  d(0, 0) = 1.0;
  d(1, 1) = 3.0;
  const auto r = symmetric_eig(d);
  CHECK(r.eigenvalues[0] == doctest::Approx(3.0));
  CHECK(r.eigenvalues[1] == doctest::Approx(1.0));
  CHECK(std::abs(r.eigenvectors(1, 0)) == doctest::Approx(1.0));
  CHECK(std::abs(r.eigenvectors(0, 1)) == doctest::Approx(1.0));
}

TEST_CASE("symmetric eig residual on random 6x6") {
  Rng rng(5);
  const auto c = testing::random_covariance(rng, 6);
  const auto r = symmetric_eig(c);
  double trace = 0.0, sum = 0.0;
  for (std::size_t i = 0; i < 6; ++i) trace += c(i, i);
  for (double l : r.eigenvalues) sum += l;
  CHECK(std::abs(sum - trace) <= 1e-9 * trace);
  CHECK(std::is_sorted(r.eigenvalues.rbegin(), r.eigenvalues.rend()));
  const auto cv = matmul(c, r.eigenvectors);
  double res = 0.0;
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 6; ++j) res += std::pow(cv(i, j) - r.eigenvectors(i, j) * r.eigenvalues[j], 2);
  CHECK(std::sqrt(res) <= 1e-8 * frobenius_norm(c));
}

TEST_CASE("symmetric eig rejects non-square and non-finite input") {
  CHECK_THROWS_AS(symmetric_eig(MatrixD(2, 3)), DimensionError);
  MatrixD bad(2, 2);
  bad(0, 1) = bad(1, 0) = std::nan("");
  CHECK_THROWS(symmetric_eig(bad));
}

TEST_CASE("cosine") {
  const std::vector<double> u{1, 0}, v{1, 1}, w{0, 1};
  CHECK(cosine(u, u) == doctest::Approx(1.0));
  CHECK(cosine(u, w) == doctest::Approx(0.0));
  CHECK(cosine(u, v) == doctest::Approx(0.70711).epsilon(1e-5));
}

TEST_CASE("top_k ordering and ties") {
  CHECK(top_k(std::vector<double>{5, 1, 9}, 2) == std::vector<std::size_t>{2, 0});
  CHECK(top_k(std::vector<double>{4, 4, 4, 4}, 3) == std::vector<std::size_t>{0, 1, 2});
  CHECK_THROWS_AS(top_k(std::vector<double>{1, 2}, 3), RangeError);
}

TEST_CASE("top_k matches full sort") {
  Rng rng(99);
  std::vector<double> s(1000);
  for (double& x : s) x = std::floor(rng.uniform(0, 200));
  std::vector<std::size_t> idx(s.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });
  idx.resize(50);
  CHECK(top_k(s, 50) == idx);
}
