#include "alignlens/tensor.hpp"

#include <limits>
#include <utility>

namespace alignlens {

namespace {

template <typename T>
BasicMatrix<T> matmul_impl(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                         " times " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
  BasicMatrix<T> out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) {
        acc += static_cast<double>(a(i, k)) * static_cast<double>(b(k, j));
      }
      out(i, j) = static_cast<T>(acc);
    }
  }
  if (!all_finite(std::as_const(out).data())) throw NumericError("matmul: non-finite result");
  return out;
}

template <typename T>
BasicMatrix<T> transpose_impl(const BasicMatrix<T>& a) {
  BasicMatrix<T> out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

template <typename T>
double cosine_impl(std::span<const T> u, std::span<const T> v) {
  if (u.size() != v.size()) throw DimensionError("cosine: length mismatch");
  double dot = 0.0, nu = 0.0, nv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double a = u[i], b = v[i];
    dot += a * b;
    nu += a * a;
    nv += b * b;
  }
  if (nu == 0.0 || nv == 0.0) throw ValidationError("cosine: zero-norm vector");
  return std::clamp(dot / (std::sqrt(nu) * std::sqrt(nv)), -1.0, 1.0);
}

}  // namespace

Matrix matmul(const Matrix& a, const Matrix& b) { return matmul_impl(a, b); }
MatrixD matmul(const MatrixD& a, const MatrixD& b) { return matmul_impl(a, b); }

Matrix transpose(const Matrix& a) { return transpose_impl(a); }
MatrixD transpose(const MatrixD& a) { return transpose_impl(a); }

Matrix softmax_rows(const Matrix& a, double scale) {
  if (!(scale > 0.0)) throw ValidationError("softmax_rows: scale must be positive");
  Matrix out(a.rows(), a.cols());
  std::vector<double> z(a.cols());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < a.cols(); ++c) {
      z[c] = static_cast<double>(a(r, c)) / scale;
      mx = std::max(mx, z[c]);
    }
    double sum = 0.0;
    for (std::size_t c = 0; c < a.cols(); ++c) {
      z[c] = std::exp(z[c] - mx);
      sum += z[c];
    }
    for (std::size_t c = 0; c < a.cols(); ++c) out(r, c) = static_cast<float>(z[c] / sum);
  }
  return out;
}

double frobenius_norm(const MatrixD& m) {
  double acc = 0.0;
  for (double v : m.data()) acc += v * v;
  return std::sqrt(acc);
}

EigenResult symmetric_eig(const MatrixD& c) {
  const std::size_t n = c.rows();
  if (c.cols() != n) throw DimensionError("symmetric_eig: matrix is not square");
  if (!all_finite(c.data())) throw ValidationError("symmetric_eig: non-finite input");

  const double norm = frobenius_norm(c);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (std::abs(c(i, j) - c(j, i)) > 1e-6 * norm) {
        throw ValidationError("symmetric_eig: matrix is not symmetric");
      }
    }
  }

  MatrixD a(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) a(i, j) = 0.5 * (c(i, j) + c(j, i));
  MatrixD v = MatrixD::identity(n);

  auto off_mass = [&] {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (i != j) s += a(i, j) * a(i, j);
    return std::sqrt(s);
  };

  constexpr std::size_t kMaxSweeps = 100;
  const double target = 1e-10 * norm;
  std::size_t sweep = 0;
  while (off_mass() >= target && norm > 0.0) {
    if (sweep == kMaxSweeps) {
      throw NumericError("symmetric_eig: no convergence after 100 sweeps");
    }
    ++sweep;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double cs = 1.0 / std::sqrt(t * t + 1.0);
        const double sn = t * cs;
        // A <- J^T A J with J the (p, q) rotation.
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = cs * akp - sn * akq;
          a(k, q) = sn * akp + cs * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = cs * apk - sn * aqk;
          a(q, k) = sn * apk + cs * aqk;
        }
        a(p, q) = 0.0;
        a(q, p) = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = cs * vkp - sn * vkq;
          v(k, q) = sn * vkp + cs * vkq;
        }
      }
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return a(x, x) > a(y, y); });

  EigenResult out;
  out.sweeps = sweep;
  out.eigenvalues.resize(n);
  out.eigenvectors = MatrixD(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    out.eigenvalues[j] = a(order[j], order[j]);
    for (std::size_t i = 0; i < n; ++i) out.eigenvectors(i, j) = v(i, order[j]);
  }
  return out;
}

EigenResult symmetric_eig(const Matrix& c) { return symmetric_eig(c.cast<double>()); }

double cosine(std::span<const float> u, std::span<const float> v) { return cosine_impl(u, v); }
double cosine(std::span<const double> u, std::span<const double> v) { return cosine_impl(u, v); }

}  // namespace alignlens
