#include <cmath>
#include <numbers>
#include <sstream>

#include "uqh/heads.hpp"
#include "uqh/loss.hpp"

namespace uqh {

namespace {

constexpr std::size_t kColdStartIters = 20;

void check_input(const SngpParams& p, const Matrix& x) {
  if (x.cols() != p.w_hid.cols()) {
    std::ostringstream os;
    os << "sngp: input has " << x.cols() << " columns, head expects " << p.w_hid.cols();
    throw DimensionError(os.str());
  }
}

Matrix hidden_pre(const SngpParams& p, const Matrix& x) {
  Matrix pre = matmul_nt(x, p.w_hid);
  for (std::size_t i = 0; i < pre.rows(); ++i) axpy(1.0, p.b_hid, pre.row(i));
  return pre;
}

Matrix relu(Matrix m) {
  for (double& v : m.values()) v = v > 0.0 ? v : 0.0;
  return m;
}

// Random-feature arguments W_rff h + b_rff for each row of h.
Matrix rff_arguments(const SngpParams& p, const Matrix& h) {
  Matrix a = matmul_nt(h, p.w_rff);
  for (std::size_t i = 0; i < a.rows(); ++i) axpy(1.0, p.b_rff, a.row(i));
  return a;
}

double feature_scale(const SngpParams& p) {
  return std::sqrt(2.0 / static_cast<double>(p.w_rff.rows()));
}

Matrix cosine_features(const SngpParams& p, Matrix args) {
  const double amp = feature_scale(p);
  for (double& v : args.values()) v = amp * std::cos(v);
  return args;
}

}  // namespace

SngpParams sngp_init(const HeadConfig& cfg, RngStream& rng) {
  cfg.validate();
  SngpParams p;
  const double bound = 1.0 / std::sqrt(static_cast<double>(cfg.input_dim));
  p.w_hid = Matrix(cfg.hidden, cfg.input_dim);
  for (double& w : p.w_hid.values()) w = bound * (2.0 * rng.uniform() - 1.0);
  p.b_hid.resize(cfg.hidden);
  for (double& b : p.b_hid) b = bound * (2.0 * rng.uniform() - 1.0);
  p.w_rff = Matrix(cfg.rff_dim, cfg.hidden);
  for (double& w : p.w_rff.values()) w = rng.normal();
  p.b_rff.resize(cfg.rff_dim);
  for (double& b : p.b_rff) b = 2.0 * std::numbers::pi * rng.uniform();
  const double beta_bound = 1.0 / std::sqrt(static_cast<double>(cfg.rff_dim));
  p.beta.resize(cfg.rff_dim);
  for (double& b : p.beta) b = beta_bound * (2.0 * rng.uniform() - 1.0);
  sngp_reset_precision(p, cfg.ridge);
  spectral_normalize(p, cfg, rng);
  return p;
}

double spectral_normalize(SngpParams& p, const HeadConfig& cfg) {
  if (p.sn_u.size() != p.w_hid.rows()) {
    throw StateError("spectral_normalize: missing warm-start vector; use the cold-start overload");
  }
  SpectralEstimate est = power_iteration(p.w_hid, cfg.power_iters, p.sn_u);
  p.sn_u = std::move(est.u);
  p.sn_v = std::move(est.v);
  if (est.sigma > cfg.spectral_bound) scale(cfg.spectral_bound / est.sigma, p.w_hid.values());
  return est.sigma;
}

double spectral_normalize(SngpParams& p, const HeadConfig& cfg, RngStream& rng) {
  SpectralEstimate est = power_iteration(p.w_hid, kColdStartIters, rng);
  p.sn_u = std::move(est.u);
  p.sn_v = std::move(est.v);
  if (est.sigma > cfg.spectral_bound) scale(cfg.spectral_bound / est.sigma, p.w_hid.values());
  return est.sigma;
}

Vector rff_transform(std::span<const double> h, const SngpParams& p) {
  if (h.size() != p.w_rff.cols()) throw DimensionError("rff_transform: hidden size mismatch");
  Vector phi(p.w_rff.rows());
  matvec(p.w_rff, h, phi);
  const double amp = feature_scale(p);
  for (std::size_t j = 0; j < phi.size(); ++j) phi[j] = amp * std::cos(phi[j] + p.b_rff[j]);
  return phi;
}

Matrix sngp_hidden(const SngpParams& p, const Matrix& x) {
  check_input(p, x);
  return relu(hidden_pre(p, x));
}

Matrix sngp_features(const SngpParams& p, const Matrix& x) {
  return cosine_features(p, rff_arguments(p, sngp_hidden(p, x)));
}

SngpOutput sngp_forward(const SngpParams& p, const Matrix& x, bool with_variance) {
  if (with_variance && !p.finalized) {
    throw StateError("sngp_forward: variance requested before the covariance was finalized");
  }
  const Matrix phi = sngp_features(p, x);
  SngpOutput out;
  out.logits.resize(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) out.logits[i] = dot(phi.row(i), p.beta);
  if (with_variance) {
    out.variance = symmetric_quadratic_forms(p.covariance, phi);
  }
  return out;
}

double sngp_loss_grad(const SngpParams& p, const Matrix& x, std::span<const double> labels, SngpGrads& grads) {
  check_input(p, x);
  const std::size_t n = x.rows();
  const std::size_t hidden = p.w_hid.rows();
  const std::size_t rff = p.w_rff.rows();
  const Matrix pre = hidden_pre(p, x);
  const Matrix h = relu(pre);
  const Matrix args = rff_arguments(p, h);
  const Matrix phi = cosine_features(p, args);
  Vector logits(n);
  for (std::size_t i = 0; i < n; ++i) logits[i] = dot(phi.row(i), p.beta);
  const BceResult bce = bce_loss(logits, labels);

  grads.w_hid = Matrix(hidden, x.cols());
  grads.b_hid.assign(hidden, 0.0);
  grads.beta.assign(rff, 0.0);
  const double amp = feature_scale(p);
  Vector d_args(rff);
  Vector dh(hidden);
  for (std::size_t i = 0; i < n; ++i) {
    const double dz = bce.dlogits[i];
    axpy(dz, phi.row(i), grads.beta);
    for (std::size_t j = 0; j < rff; ++j) d_args[j] = -amp * std::sin(args(i, j)) * dz * p.beta[j];
    matvec_t(p.w_rff, d_args, dh);
    for (std::size_t j = 0; j < hidden; ++j) {
      if (pre(i, j) <= 0.0) dh[j] = 0.0;
    }
    axpy(1.0, dh, grads.b_hid);
    rank1_update(grads.w_hid, 1.0, dh, x.row(i));
  }
  return bce.loss;
}

void sngp_reset_precision(SngpParams& p, double ridge) {
  const std::size_t rff = p.w_rff.rows();
  p.precision = Matrix(rff, rff);
  for (std::size_t j = 0; j < rff; ++j) p.precision(j, j) = ridge;
  p.covariance = Matrix();
  p.finalized = false;
}

void sngp_precision_update(SngpParams& p, const Matrix& phi_batch, std::span<const double> probs) {
  const std::size_t rff = p.precision.rows();
  if (phi_batch.cols() != rff) throw DimensionError("sngp_precision_update: feature width mismatch");
  if (phi_batch.rows() != probs.size()) throw DimensionError("sngp_precision_update: probs length mismatch");
  Vector scaled(rff);
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double q = probs[i];
    if (!(q >= 0.0 && q <= 1.0)) throw DomainError("sngp_precision_update: probability outside [0, 1]");
    const double weight = q * (1.0 - q);
    if (weight == 0.0) continue;
    // Updating with (sqrt(w) phi)(sqrt(w) phi)^T keeps the matrix bitwise symmetric.
    const double root = std::sqrt(weight);
    auto row = phi_batch.row(i);
    for (std::size_t j = 0; j < rff; ++j) scaled[j] = root * row[j];
    rank1_update(p.precision, 1.0, scaled, scaled);
  }
}

void sngp_covariance_finalize(SngpParams& p) {
  CholeskyInverse inv = spd_inverse(p.precision);
  p.covariance = std::move(inv.inverse);
  p.finalized = true;
}

double mean_field_adjust(double logit, double variance, double lambda) {
  if (variance < 0.0) throw DomainError("mean_field_adjust: variance must be non-negative");
  return stable_sigmoid(logit / std::sqrt(1.0 + lambda * variance));
}

}  // namespace uqh
