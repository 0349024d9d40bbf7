#include "uqh/numerics.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <cmath>
#include <numbers>
#include <sstream>
#include <string>

#include "uqh/kernels.hpp"

namespace uqh {

namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::uint64_t derive_key(std::uint64_t parent, std::uint64_t stream_id) {
  return mix64(parent ^ mix64(stream_id * kGolden + 0x632BE59BD9B4E019ULL));
}

void check_same_size(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    std::ostringstream os;
    os << what << ": size mismatch (" << a << " vs " << b << ")";
    throw DimensionError(os.str());
  }
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  check_same_size(data_.size(), rows * cols, "Matrix");
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

bool Matrix::all_finite() const noexcept {
  for (double x : data_) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// RngStream

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream_id)
    : key_(derive_key(mix64(seed + kGolden), stream_id)) {}

RngStream RngStream::substream(std::uint64_t stream_id) const {
  return RngStream(derive_key(key_, stream_id), 0, 0);
}

std::uint64_t RngStream::next_u64() {
  return mix64(key_ + (++counter_) * kGolden);
}

double RngStream::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::uint64_t RngStream::below(std::uint64_t bound) {
  if (bound == 0) throw ArgumentError("RngStream::below: bound must be positive");
  // Rejection keeps the result exactly uniform.
  const std::uint64_t limit = bound * (UINT64_MAX / bound);
  std::uint64_t x = next_u64();
  while (x >= limit) x = next_u64();
  return x % bound;
}

double RngStream::normal() {
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double RngStream::sign() { return (next_u64() >> 63) != 0 ? 1.0 : -1.0; }

Vector rademacher(RngStream& rng, std::size_t n) {
  Vector out(n);
  for (auto& x : out) x = rng.sign();
  return out;
}

Vector normal_vector(RngStream& rng, std::size_t n) {
  Vector out(n);
  for (auto& x : out) x = rng.normal();
  return out;
}

// ---------------------------------------------------------------------------
// Scalar functions

double stable_sigmoid(double x) noexcept {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus(double x) noexcept {
  // max(x, 0) + log1p(exp(-|x|))
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

double inv_softplus(double y) {
  if (!(y > 0.0)) throw DomainError("inv_softplus: argument must be positive");
  // log(exp(y) - 1) = y + log(1 - exp(-y))
  return y + std::log(-std::expm1(-y));
}

double log_sigmoid(double x) noexcept {
  return -softplus(-x);
}

// ---------------------------------------------------------------------------
// Vector kernels

double dot(std::span<const double> a, std::span<const double> b) {
  check_same_size(a.size(), b.size(), "dot");
  return kernels::active().dot(a.data(), b.data(), a.size());
}

double norm2(std::span<const double> a) {
  return std::sqrt(kernels::active().dot(a.data(), a.data(), a.size()));
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  check_same_size(x.size(), y.size(), "axpy");
  kernels::active().axpy(alpha, x.data(), y.data(), x.size());
}

void scale(double alpha, std::span<double> x) {
  kernels::active().scal(alpha, x.data(), x.size());
}

void matvec(const Matrix& w, std::span<const double> x, std::span<double> y) {
  check_same_size(w.cols(), x.size(), "matvec input");
  check_same_size(w.rows(), y.size(), "matvec output");
  const auto& k = kernels::active();
  for (std::size_t r = 0; r < w.rows(); ++r) y[r] = k.dot(w.row(r).data(), x.data(), x.size());
}

void matvec_t(const Matrix& w, std::span<const double> x, std::span<double> y) {
  check_same_size(w.rows(), x.size(), "matvec_t input");
  check_same_size(w.cols(), y.size(), "matvec_t output");
  const auto& k = kernels::active();
  std::fill(y.begin(), y.end(), 0.0);
  for (std::size_t r = 0; r < w.rows(); ++r) {
    if (x[r] != 0.0) k.axpy(x[r], w.row(r).data(), y.data(), y.size());
  }
}

Matrix matmul_nt(const Matrix& x, const Matrix& w) {
  check_same_size(x.cols(), w.cols(), "matmul_nt");
  const auto& k = kernels::active();
  Matrix y(x.rows(), w.rows());
  // Weight rows are the large operand; stream each once per batch.
  for (std::size_t j = 0; j < w.rows(); ++j) {
    const double* wj = w.row(j).data();
    for (std::size_t i = 0; i < x.rows(); ++i) y(i, j) = k.dot(x.row(i).data(), wj, x.cols());
  }
  return y;
}

void rank1_update(Matrix& a, double alpha, std::span<const double> x, std::span<const double> y) {
  check_same_size(a.rows(), x.size(), "rank1_update rows");
  check_same_size(a.cols(), y.size(), "rank1_update cols");
  const auto& k = kernels::active();
  for (std::size_t r = 0; r < a.rows(); ++r) {
    const double s = alpha * x[r];
    if (s != 0.0) k.axpy(s, y.data(), a.row(r).data(), y.size());
  }
}

double symmetric_quadratic_form(const Matrix& s, std::span<const double> x) {
  check_same_size(s.rows(), s.cols(), "symmetric_quadratic_form (square)");
  check_same_size(s.rows(), x.size(), "symmetric_quadratic_form");
  const auto& k = kernels::active();
  const std::size_t n = x.size();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (x[i] == 0.0) continue;
    const double off = i + 1 < n ? k.dot(s.row(i).data() + i + 1, x.data() + i + 1, n - i - 1) : 0.0;
    total += x[i] * (s(i, i) * x[i] + 2.0 * off);
  }
  return total;
}

Vector symmetric_quadratic_forms(const Matrix& s, const Matrix& x) {
  check_same_size(s.rows(), s.cols(), "symmetric_quadratic_forms (square)");
  check_same_size(s.rows(), x.cols(), "symmetric_quadratic_forms");
  const auto& k = kernels::active();
  const std::size_t n = s.rows();
  Vector total(x.rows(), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double* si = s.row(i).data();
    for (std::size_t r = 0; r < x.rows(); ++r) {
      const double* xr = x.row(r).data();
      if (xr[i] == 0.0) continue;
      const double off = i + 1 < n ? k.dot(si + i + 1, xr + i + 1, n - i - 1) : 0.0;
      total[r] += xr[i] * (si[i] * xr[i] + 2.0 * off);
    }
  }
  return total;
}

// ---------------------------------------------------------------------------
// Power iteration

namespace {

SpectralEstimate iterate_from(const Matrix& w, std::size_t iters, Vector u) {
  SpectralEstimate est;
  Vector v(w.cols());
  const double u_norm = norm2(u);
  scale(1.0 / u_norm, u);
  for (std::size_t it = 0; it < iters; ++it) {
    matvec_t(w, u, v);
    const double vn = norm2(v);
    if (vn == 0.0) {
      // u lies in the left null space; for a zero matrix every u does.
      std::fill(v.begin(), v.end(), 0.0);
      v[0] = 1.0;
      est.sigma = 0.0;
      est.u = std::move(u);
      est.v = std::move(v);
      return est;
    }
    scale(1.0 / vn, v);
    matvec(w, v, u);
    const double un = norm2(u);
    est.sigma = un;
    if (un == 0.0) {
      std::fill(u.begin(), u.end(), 0.0);
      u[0] = 1.0;
      break;
    }
    scale(1.0 / un, u);
  }
  est.u = std::move(u);
  est.v = std::move(v);
  return est;
}

}  // namespace

SpectralEstimate power_iteration(const Matrix& w, std::size_t iters, RngStream& rng) {
  if (w.rows() == 0 || w.cols() == 0) throw DimensionError("power_iteration: empty matrix");
  if (iters == 0) throw ArgumentError("power_iteration: iters must be >= 1");
  Vector u = normal_vector(rng, w.rows());
  if (norm2(u) == 0.0) u[0] = 1.0;
  return iterate_from(w, iters, std::move(u));
}

SpectralEstimate power_iteration(const Matrix& w, std::size_t iters, std::span<const double> u_start) {
  if (w.rows() == 0 || w.cols() == 0) throw DimensionError("power_iteration: empty matrix");
  if (iters == 0) throw ArgumentError("power_iteration: iters must be >= 1");
  check_same_size(w.rows(), u_start.size(), "power_iteration warm start");
  Vector u(u_start.begin(), u_start.end());
  if (norm2(u) == 0.0) u[0] = 1.0;
  return iterate_from(w, iters, std::move(u));
}

// ---------------------------------------------------------------------------
// SPD inverse

CholeskyInverse spd_inverse(const Matrix& a) {
  if (a.rows() != a.cols()) throw DimensionError("spd_inverse: matrix is not square");
  if (!a.all_finite()) throw NumericalError("spd_inverse: matrix has non-finite entries");
  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const std::size_t n = a.rows();
  Eigen::Map<const RowMat> view(a.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  Eigen::LLT<RowMat> llt(view);
  const double rcond = llt.info() == Eigen::Success ? llt.rcond() : 0.0;
  if (llt.info() != Eigen::Success || !(rcond > 1e-15)) {
    double min_diag = n > 0 ? a(0, 0) : 0.0;
    for (std::size_t i = 0; i < n; ++i) min_diag = std::min(min_diag, a(i, i));
    std::ostringstream os;
    os << "spd_inverse: matrix is not symmetric positive definite or is singular"
       << " (rcond estimate " << rcond << ", min diagonal " << min_diag << ")";
    throw NumericalError(os.str());
  }
  CholeskyInverse out;
  out.rcond = rcond;
  out.inverse = Matrix(n, n);
  Eigen::Map<RowMat> inv(out.inverse.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  inv = llt.solve(RowMat::Identity(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n)));
  // Round-off leaves a tiny asymmetry; the quadratic form reads one triangle.
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double m = 0.5 * (out.inverse(i, j) + out.inverse(j, i));
      out.inverse(i, j) = m;
      out.inverse(j, i) = m;
    }
  }
  return out;
}

void require_finite(std::span<const double> values, const char* what) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      std::ostringstream os;
      os << what << ": non-finite value at flat index " << i;
      throw NumericalError(os.str());
    }
  }
}

}  // namespace uqh
