#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "uqh/errors.hpp"

namespace uqh {

using Vector = std::vector<double>;

// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix identity(std::size_t n);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }

  bool all_finite() const noexcept;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Counter-based generator: the n-th draw of a stream is a pure function of
// (key, n), so streams are reproducible on any platform and substreams
// derived from distinct ids never share state.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed, std::uint64_t stream_id = 0);

  RngStream substream(std::uint64_t stream_id) const;

  std::uint64_t next_u64();
  // Uniform on [0, 1) with 53 random bits.
  double uniform();
  // Uniform integer in [0, bound). bound must be > 0.
  std::uint64_t below(std::uint64_t bound);
  double normal();
  double sign();

  std::uint64_t key() const noexcept { return key_; }
  std::uint64_t counter() const noexcept { return counter_; }

  friend bool operator==(const RngStream&, const RngStream&) = default;

 private:
  RngStream(std::uint64_t key, std::uint64_t counter, int) : key_(key), counter_(counter) {}
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

Vector rademacher(RngStream& rng, std::size_t n);
Vector normal_vector(RngStream& rng, std::size_t n);

double stable_sigmoid(double x) noexcept;
// log(1 + exp(x)) without overflow.
double softplus(double x) noexcept;
// Throws DomainError for y <= 0.
double inv_softplus(double y);
// log(sigmoid(x)), used by the logit-form cross entropy.
double log_sigmoid(double x) noexcept;

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> a);
void axpy(double alpha, std::span<const double> x, std::span<double> y);
void scale(double alpha, std::span<double> x);

// y = W x
void matvec(const Matrix& w, std::span<const double> x, std::span<double> y);
// y = W^T x
void matvec_t(const Matrix& w, std::span<const double> x, std::span<double> y);
// Y = X W^T  (X: n x k, W: m x k, Y: n x m)
Matrix matmul_nt(const Matrix& x, const Matrix& w);
// a += alpha * x y^T
void rank1_update(Matrix& a, double alpha, std::span<const double> x, std::span<const double> y);
// x^T S x for symmetric S, reading only the upper triangle.
double symmetric_quadratic_form(const Matrix& s, std::span<const double> x);
// Row-wise x_r^T S x_r for every row of x. Each row of S is read once for
// the whole batch, so S streams through memory once instead of per row.
Vector symmetric_quadratic_forms(const Matrix& s, const Matrix& x);

struct SpectralEstimate {
  double sigma = 0.0;
  Vector u;  // left singular vector estimate (rows)
  Vector v;  // right singular vector estimate (cols)
};

// Largest singular value by power iteration from a random start.
// A zero matrix yields sigma = 0 and arbitrary unit u, v.
SpectralEstimate power_iteration(const Matrix& w, std::size_t iters, RngStream& rng);
// Warm-started variant; u_start must have w.rows() entries and be nonzero.
SpectralEstimate power_iteration(const Matrix& w, std::size_t iters, std::span<const double> u_start);

struct CholeskyInverse {
  Matrix inverse;
  // Reciprocal condition estimate of the input, from the factorization.
  double rcond = 0.0;
};

// Inverse of a symmetric positive definite matrix. Throws NumericalError
// with a condition diagnostic when the input is not SPD or is singular.
CholeskyInverse spd_inverse(const Matrix& a);

void require_finite(std::span<const double> values, const char* what);

}  // namespace uqh
