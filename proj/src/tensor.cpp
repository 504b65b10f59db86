// SPDX-License-Identifier: Apache-2.0
#include "echo/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <limits>

namespace echo {

namespace {

void require_positive(std::size_t rows, std::size_t cols) {
  if (rows == 0 || cols == 0)
    throw ShapeError("matrix dimensions must be positive, got " + std::to_string(rows) + "x" +
                     std::to_string(cols));
}

void require_same(const Matrix& a, const Matrix& b, const char* op) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " +
                     b.shape_string());
}

std::atomic<Exec> g_default_exec{Exec::parallel};

// Below this many multiply-adds the OpenMP fork costs more than it saves.
constexpr std::size_t kParallelWork = 1 << 15;

std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace

// --- Matrix ----------------------------------------------------------------

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {
  require_positive(rows, cols);
}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  require_positive(rows, cols);
  if (data_.size() != rows * cols)
    throw ShapeError("matrix data length " + std::to_string(data_.size()) + " does not match " +
                     std::to_string(rows) + "x" + std::to_string(cols));
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("ragged matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Matrix(r, c, std::move(data));
}

Matrix Matrix::column(std::initializer_list<double> values) {
  return Matrix(values.size(), 1, std::vector<double>(values));
}

Matrix Matrix::column(std::span<const double> values) {
  return Matrix(values.size(), 1, std::vector<double>(values.begin(), values.end()));
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

std::string Matrix::shape_string() const {
  return "(" + std::to_string(rows_) + "x" + std::to_string(cols_) + ")";
}

// --- Rng -------------------------------------------------------------------

Rng::Rng(std::uint64_t seed) {
  std::uint64_t sm = seed;
  for (auto& word : s_) word = splitmix64(sm);
}

std::uint64_t Rng::next_u64() {
  const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
  const std::uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

std::uint64_t Rng::uniform_int(std::uint64_t n) {
  if (n == 0) throw DomainError("uniform_int: empty range");
  // Rejection sampling keeps the result exactly uniform.
  const std::uint64_t limit =
      std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return x % n;
}

std::int64_t Rng::uniform_int(std::int64_t lo, std::int64_t hi) {
  if (hi < lo) throw DomainError("uniform_int: hi < lo");
  return lo + static_cast<std::int64_t>(uniform_int(static_cast<std::uint64_t>(hi - lo) + 1));
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t state = seed ^ (index * 0xD1B54A32D192ED03ULL);
  splitmix64(state);
  return splitmix64(state);
}

// --- kernels ---------------------------------------------------------------

void set_default_exec(Exec exec) noexcept { g_default_exec.store(exec); }
Exec default_exec() noexcept { return g_default_exec.load(); }

namespace kernels {

namespace {

// Rows i..i+3 of C += A * B (row-major, A row stride lda). Each B row is
// loaded once per group of four output rows.
inline void rows4_nn(std::size_t n, std::size_t k, const double* __restrict a0,
                     std::size_t lda_step, std::size_t a_stride_p, const double* __restrict b,
                     double* __restrict c0) {
  const double* a1 = a0 + lda_step;
  const double* a2 = a1 + lda_step;
  const double* a3 = a2 + lda_step;
  double* __restrict c1 = c0 + n;
  double* __restrict c2 = c1 + n;
  double* __restrict c3 = c2 + n;
  for (std::size_t p = 0; p < k; ++p) {
    const std::size_t off = p * a_stride_p;
    const double x0 = a0[off], x1 = a1[off], x2 = a2[off], x3 = a3[off];
    const double* bp = b + p * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double bj = bp[j];
      c0[j] += x0 * bj;
      c1[j] += x1 * bj;
      c2[j] += x2 * bj;
      c3[j] += x3 * bj;
    }
  }
}

inline void row1_nn(std::size_t n, std::size_t k, const double* a0, std::size_t a_stride_p,
                    const double* b, double* c0) {
  for (std::size_t p = 0; p < k; ++p) {
    const double x0 = a0[p * a_stride_p];
    const double* bp = b + p * n;
    for (std::size_t j = 0; j < n; ++j) c0[j] += x0 * bp[j];
  }
}

// Shared driver: C (m x n) += op(A) * B where element (i, p) of op(A) sits at
// a[i * row_step + p * p_step]. Output rows are independent, so splitting
// them across threads does not change any result bit.
void gemm_rows(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t row_step,
               std::size_t p_step, const double* b, double* c, Exec exec) {
  const std::size_t groups = m / 4;
  const bool par = exec == Exec::parallel && m * n * k >= kParallelWork && groups > 1;
#pragma omp parallel for schedule(static) if (par)
  for (std::ptrdiff_t g = 0; g < static_cast<std::ptrdiff_t>(groups); ++g) {
    const auto i = static_cast<std::size_t>(g) * 4;
    rows4_nn(n, k, a + i * row_step, row_step, p_step, b, c + i * n);
  }
  for (std::size_t i = groups * 4; i < m; ++i)
    row1_nn(n, k, a + i * row_step, p_step, b, c + i * n);
}

}  // namespace

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, Exec exec) {
  gemm_rows(m, n, k, a, k, 1, b, c, exec);
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, Exec exec) {
  // Transpose B (n x k) once so the inner loop runs over contiguous memory.
  std::vector<double> bt(k * n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
  gemm_rows(m, n, k, a, k, 1, bt.data(), c, exec);
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, Exec exec) {
  gemm_rows(m, n, k, a, 1, m, b, c, exec);
}

}  // namespace kernels

// --- operations ------------------------------------------------------------

Matrix matmul(const Matrix& a, const Matrix& b, Exec exec) {
  if (a.cols() != b.rows())
    throw ShapeError("matmul: shape mismatch " + a.shape_string() + " x " + b.shape_string());
  Matrix c(a.rows(), b.cols());
  kernels::gemm_nn(a.rows(), b.cols(), a.cols(), a.data().data(), b.data().data(), c.data().data(),
                   exec);
  return c;
}

Matrix matmul(const Matrix& a, const Matrix& b) { return matmul(a, b, default_exec()); }

Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

double sigmoid(double z) noexcept {
  // Branch keeps exp() from overflowing for large |z|.
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

Matrix elementwise(ElemOp op, const Matrix& a, const Matrix& b) {
  const char* name = op == ElemOp::add ? "add" : op == ElemOp::sub ? "sub" : "hadamard";
  if (op != ElemOp::add && op != ElemOp::sub && op != ElemOp::hadamard)
    throw ContractError("elementwise: binary call with a unary op");
  require_same(a, b, name);
  Matrix out = a;
  auto o = out.data();
  auto y = b.data();
  switch (op) {
    case ElemOp::add:
      for (std::size_t i = 0; i < o.size(); ++i) o[i] += y[i];
      break;
    case ElemOp::sub:
      for (std::size_t i = 0; i < o.size(); ++i) o[i] -= y[i];
      break;
    default:
      for (std::size_t i = 0; i < o.size(); ++i) o[i] *= y[i];
      break;
  }
  return out;
}

Matrix elementwise(ElemOp op, const Matrix& a, double factor) {
  Matrix out = a;
  auto o = out.data();
  switch (op) {
    case ElemOp::sigmoid:
      for (auto& v : o) v = sigmoid(v);
      break;
    case ElemOp::tanh:
      for (auto& v : o) v = std::tanh(v);
      break;
    case ElemOp::scale:
      for (auto& v : o) v *= factor;
      break;
    default:
      throw ContractError("elementwise: unary call with a binary op");
  }
  return out;
}

Matrix add(const Matrix& a, const Matrix& b) { return elementwise(ElemOp::add, a, b); }
Matrix sub(const Matrix& a, const Matrix& b) { return elementwise(ElemOp::sub, a, b); }
Matrix hadamard(const Matrix& a, const Matrix& b) { return elementwise(ElemOp::hadamard, a, b); }
Matrix sigmoid(const Matrix& a) { return elementwise(ElemOp::sigmoid, a); }
Matrix tanh(const Matrix& a) { return elementwise(ElemOp::tanh, a); }
Matrix scale(const Matrix& a, double factor) { return elementwise(ElemOp::scale, a, factor); }

Vector softmax(std::span<const double> v) {
  if (v.empty()) throw DomainError("softmax of an empty vector");
  if (!std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); }))
    throw DomainError("softmax of a non-finite vector");
  const double mx = *std::max_element(v.begin(), v.end());
  Vector out(v.size());
  double total = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - mx);
    total += out[i];
  }
  for (auto& x : out) x /= total;
  return out;
}

Matrix softmax_columns(const Matrix& m) {
  Matrix out(m.rows(), m.cols());
  Vector col(m.rows());
  for (std::size_t j = 0; j < m.cols(); ++j) {
    for (std::size_t i = 0; i < m.rows(); ++i) col[i] = m(i, j);
    const Vector s = softmax(col);
    for (std::size_t i = 0; i < m.rows(); ++i) out(i, j) = s[i];
  }
  return out;
}

double log_sum_exp(std::span<const double> v) {
  if (v.empty()) throw DomainError("log_sum_exp of an empty vector");
  const double mx = *std::max_element(v.begin(), v.end());
  double total = 0.0;
  for (double x : v) total += std::exp(x - mx);
  return mx + std::log(total);
}

Matrix rand_init(Rng& rng, std::size_t rows, std::size_t cols, InitScheme scheme) {
  require_positive(rows, cols);
  switch (scheme) {
    case InitScheme::zeros:
      return Matrix(rows, cols, 0.0);
    case InitScheme::ones:
      return Matrix(rows, cols, 1.0);
    case InitScheme::xavier_uniform: {
      const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
      Matrix m(rows, cols);
      for (auto& v : m.data()) v = rng.uniform(-bound, bound);
      return m;
    }
  }
  throw ContractError("rand_init: unknown scheme");
}

double sum(const Matrix& m) {
  double s = 0.0;
  for (double v : m.data()) s += v;
  return s;
}

double frobenius_norm(const Matrix& m) {
  double s = 0.0;
  for (double v : m.data()) s += v * v;
  return std::sqrt(s);
}

std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

bool all_finite(const Matrix& m) {
  return std::all_of(m.data().begin(), m.data().end(), [](double v) { return std::isfinite(v); });
}

}  // namespace echo
