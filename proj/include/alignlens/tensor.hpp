#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "alignlens/error.hpp"

namespace alignlens {

// Dense row-major matrix. Weights and exported maps use float storage;
// double storage is used where accumulated precision has to survive
// (covariances, eigenvectors, runtime activations).
template <typename T>
class BasicMatrix {
 public:
  using value_type = T;

  BasicMatrix() = default;
  BasicMatrix(std::size_t rows, std::size_t cols, T fill = T{})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  BasicMatrix(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw DimensionError("matrix data length " + std::to_string(data_.size()) +
                           " does not match " + std::to_string(rows_) + "x" +
                           std::to_string(cols_));
    }
  }

  static BasicMatrix identity(std::size_t n) {
    BasicMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = T{1};
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  const std::vector<T>& storage() const { return data_; }

  std::vector<T> column(std::size_t c) const {
    std::vector<T> out(rows_);
    for (std::size_t r = 0; r < rows_; ++r) out[r] = (*this)(r, c);
    return out;
  }

  template <typename U>
  BasicMatrix<U> cast() const {
    std::vector<U> out(data_.size());
    std::transform(data_.begin(), data_.end(), out.begin(),
                   [](T v) { return static_cast<U>(v); });
    return BasicMatrix<U>(rows_, cols_, std::move(out));
  }

  bool operator==(const BasicMatrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

using Matrix = BasicMatrix<float>;
using MatrixD = BasicMatrix<double>;

struct EigenResult {
  std::vector<double> eigenvalues;  // descending
  MatrixD eigenvectors;             // column j pairs with eigenvalues[j]
  std::size_t sweeps = 0;
};

// Product with 64-bit accumulation in a fixed (i, j, ascending k) order.
Matrix matmul(const Matrix& a, const Matrix& b);
MatrixD matmul(const MatrixD& a, const MatrixD& b);

Matrix transpose(const Matrix& a);
MatrixD transpose(const MatrixD& a);

// Row-wise softmax of a / scale, with the row max subtracted first.
Matrix softmax_rows(const Matrix& a, double scale);

// Cyclic Jacobi. Stops once the off-diagonal Frobenius mass drops below
// 1e-10 * ||C||_F; throws NumericError after 100 sweeps.
EigenResult symmetric_eig(const MatrixD& c);
EigenResult symmetric_eig(const Matrix& c);

double cosine(std::span<const float> u, std::span<const float> v);
double cosine(std::span<const double> u, std::span<const double> v);

double frobenius_norm(const MatrixD& m);

template <typename T>
bool all_finite(std::span<const T> values) {
  return std::all_of(values.begin(), values.end(), [](T v) { return std::isfinite(v); });
}

// Indices of the k largest scores, largest first; equal scores keep the
// smaller index first.
template <typename T>
std::vector<std::size_t> top_k(std::span<const T> scores, std::size_t k) {
  if (k > scores.size()) {
    throw RangeError("top_k: k=" + std::to_string(k) + " exceeds length " +
                     std::to_string(scores.size()));
  }
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  auto before = [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  };
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), before);
  idx.resize(k);
  return idx;
}

template <typename T>
std::vector<std::size_t> top_k(const std::vector<T>& scores, std::size_t k) {
  return top_k(std::span<const T>(scores), k);
}

}  // namespace alignlens
