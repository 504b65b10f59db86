// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "echo/errors.hpp"

namespace echo {

/// Dense row-major matrix of doubles. Column vectors are n x 1 matrices and
/// batched activations are stored feature-major: one column per sample.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  /// Row-wise literal: Matrix::from_rows({{1, 2}, {3, 4}}).
  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Matrix column(std::initializer_list<double> values);
  static Matrix column(std::span<const double> values);
  static Matrix identity(std::size_t n);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::vector<double>& storage() noexcept { return data_; }

  void fill(double v);
  bool same_shape(const Matrix& other) const noexcept {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }
  std::string shape_string() const;

  bool operator==(const Matrix& other) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

using Vector = std::vector<double>;

/// xoshiro256** seeded through SplitMix64. The stream depends only on the
/// 64-bit seed, so it is identical on every platform. Single owner: never
/// share one instance across threads.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t next_u64();
  /// Uniform double in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);
  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t uniform_int(std::uint64_t n);
  /// Uniform integer in [lo, hi] inclusive.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  bool bernoulli(double p) { return uniform() < p; }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t s_[4];
};

/// SplitMix64 finaliser of (seed, index); used to give every generated item
/// its own independent stream so serial and parallel generation agree.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

// --- kernels ---------------------------------------------------------------

/// Threading policy for the dense kernels. `serial` is the reference path
/// kept for testing; `parallel` splits output rows across OpenMP threads and
/// produces bit-identical results.
enum class Exec { serial, parallel };

/// Process-wide default used by the convenience overloads below.
void set_default_exec(Exec exec) noexcept;
Exec default_exec() noexcept;

namespace kernels {
// C (m x n) += A (m x k) * B (k x n)
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, Exec exec);
// C (m x n) += A (m x k) * B^T, B is n x k
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, Exec exec);
// C (m x n) += A^T * B, A is k x m, B is k x n
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, Exec exec);
}  // namespace kernels

// --- operations ------------------------------------------------------------

Matrix matmul(const Matrix& a, const Matrix& b, Exec exec);
Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);

enum class ElemOp { add, sub, hadamard, sigmoid, tanh, scale };

/// Binary ops (add, sub, hadamard) need two same-shaped operands.
Matrix elementwise(ElemOp op, const Matrix& a, const Matrix& b);
/// Unary ops (sigmoid, tanh) ignore `factor`; scale multiplies by it.
Matrix elementwise(ElemOp op, const Matrix& a, double factor = 1.0);

Matrix add(const Matrix& a, const Matrix& b);
Matrix sub(const Matrix& a, const Matrix& b);
Matrix hadamard(const Matrix& a, const Matrix& b);
Matrix sigmoid(const Matrix& a);
Matrix tanh(const Matrix& a);
Matrix scale(const Matrix& a, double factor);

double sigmoid(double z) noexcept;

/// Numerically stable softmax (max-subtracted). Throws DomainError on empty
/// or non-finite input.
Vector softmax(std::span<const double> v);
/// Column-wise softmax of a matrix.
Matrix softmax_columns(const Matrix& m);
/// log(sum(exp(v))) with max subtraction.
double log_sum_exp(std::span<const double> v);

enum class InitScheme { xavier_uniform, zeros, ones };

Matrix rand_init(Rng& rng, std::size_t rows, std::size_t cols, InitScheme scheme);

double sum(const Matrix& m);
double frobenius_norm(const Matrix& m);
bool all_finite(const Matrix& m);

/// Shortest decimal text that parses back to exactly `v`.
std::string format_double(double v);

}  // namespace echo
