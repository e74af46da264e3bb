#pragma once

#include <unistd.h>

#include <filesystem>
#include <string>
#include <vector>

#include "alignlens/checkpoint.hpp"
#include "alignlens/fixture.hpp"
#include "alignlens/random.hpp"
#include "alignlens/tensor.hpp"

namespace testing {

inline std::filesystem::path data_dir() { return ALIGNLENS_TEST_DATA_DIR; }

inline alignlens::MatrixD random_matrix(alignlens::Rng& rng, std::size_t rows, std::size_t cols) {
  alignlens::MatrixD m(rows, cols);
  for (double& x : m.data()) x = rng.normal();
  return m;
}

inline alignlens::Matrix random_matrix_f(alignlens::Rng& rng, std::size_t rows, std::size_t cols) {
  alignlens::Matrix m(rows, cols);
  for (float& x : m.data()) x = static_cast<float>(rng.normal());
  return m;
}

inline alignlens::MatrixD random_covariance(alignlens::Rng& rng, std::size_t d) {
  const auto a = random_matrix(rng, d + 3, d);
  alignlens::MatrixD c(d, d);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      double s = 0.0;
      for (std::size_t r = 0; r < a.rows(); ++r) s += a(r, i) * a(r, j);
      c(i, j) = s;
    }
  return c;
}

template <typename T>
alignlens::BasicMatrix<T> naive_matmul(const alignlens::BasicMatrix<T>& a, const alignlens::BasicMatrix<T>& b) {
  alignlens::BasicMatrix<T> out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      long double s = 0.0L;
      for (std::size_t k = 0; k < a.cols(); ++k) s += static_cast<long double>(a(i, k)) * b(k, j);
      out(i, j) = static_cast<T>(s);
    }
  return out;
}

inline alignlens::ModelBundle tiny_bundle(std::uint64_t seed, std::size_t layers = 2, std::size_t d_model = 16) {
  alignlens::FixtureSpec spec;
  spec.seed = seed;
  spec.n_layers = layers;
  spec.d_model = d_model;
  spec.d_head = d_model / 2;
  spec.d_ffn = 2 * d_model;
  return alignlens::make_random_bundle(spec);
}

// Smooth normalization regime used for first-order comparisons.
inline alignlens::ModelBundle smooth_bundle(std::uint64_t seed) {
  alignlens::FixtureSpec spec;
  spec.seed = seed;
  spec.norm_eps = 1.0;
  spec.embed_scale = 0.05;
  return alignlens::make_random_bundle(spec);
}

}  // namespace testing

namespace testing {

// Directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("alignlens_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace testing
