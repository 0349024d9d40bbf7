#include <cmath>
#include <sstream>

#include "uqh/heads.hpp"
#include "uqh/loss.hpp"

namespace uqh {

namespace {

void check_input(const BnnParams& p, const Matrix& x) {
  if (x.cols() != p.w1_mu.cols()) {
    std::ostringstream os;
    os << "bnn: input has " << x.cols() << " columns, head expects " << p.w1_mu.cols();
    throw DimensionError(os.str());
  }
}

// One realized weight perturbation and everything the backward pass needs.
struct FlipoutTrace {
  Matrix delta_w1;  // sigma_w1 * eps_w1
  Vector delta_w2;
  Vector b1;        // sampled biases
  double b2 = 0.0;
  Matrix xs;        // x * s1
  Matrix pre;       // layer-1 pre-activations
  Matrix h;         // relu(pre)
  Vector logits;
};

FlipoutTrace run_forward(const BnnParams& p, const Matrix& x, const FlipoutNoise& noise) {
  check_input(p, x);
  const std::size_t n = x.rows();
  const std::size_t d = x.cols();
  const std::size_t hidden = p.w1_mu.rows();
  if (noise.s1.rows() != n || noise.s1.cols() != d || noise.r1.rows() != n || noise.r1.cols() != hidden ||
      noise.s2.rows() != n || noise.s2.cols() != hidden || noise.r2.size() != n ||
      noise.eps_w1.rows() != hidden || noise.eps_w1.cols() != d) {
    throw DimensionError("flipout: noise shapes do not match parameters and batch");
  }

  FlipoutTrace t;
  t.delta_w1 = Matrix(hidden, d);
  {
    auto rho = p.w1_rho.values();
    auto eps = noise.eps_w1.values();
    auto out = t.delta_w1.values();
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = softplus(rho[k]) * eps[k];
  }
  t.delta_w2.resize(hidden);
  t.b1.resize(hidden);
  for (std::size_t j = 0; j < hidden; ++j) {
    t.delta_w2[j] = softplus(p.w2_rho[j]) * noise.eps_w2[j];
    t.b1[j] = p.b1_mu[j] + softplus(p.b1_rho[j]) * noise.eps_b1[j];
  }
  t.b2 = p.b2_mu + softplus(p.b2_rho) * noise.eps_b2;

  t.xs = Matrix(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < d; ++c) t.xs(i, c) = x(i, c) * noise.s1(i, c);
  }
  t.pre = matmul_nt(x, p.w1_mu);
  const Matrix perturb = matmul_nt(t.xs, t.delta_w1);
  t.h = Matrix(n, hidden);
  t.logits.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    double flip = 0.0;
    for (std::size_t j = 0; j < hidden; ++j) {
      const double a = t.pre(i, j) + perturb(i, j) * noise.r1(i, j) + t.b1[j];
      t.pre(i, j) = a;
      const double hj = a > 0.0 ? a : 0.0;
      t.h(i, j) = hj;
      flip += hj * noise.s2(i, j) * t.delta_w2[j];
    }
    t.logits[i] = dot(t.h.row(i), p.w2_mu) + noise.r2[i] * flip + t.b2;
  }
  return t;
}

}  // namespace

BnnParams BnnParams::zeros(const HeadConfig& cfg) {
  BnnParams p;
  p.w1_mu = Matrix(cfg.hidden, cfg.input_dim);
  p.w1_rho = Matrix(cfg.hidden, cfg.input_dim);
  p.b1_mu.assign(cfg.hidden, 0.0);
  p.b1_rho.assign(cfg.hidden, 0.0);
  p.w2_mu.assign(cfg.hidden, 0.0);
  p.w2_rho.assign(cfg.hidden, 0.0);
  return p;
}

DnnParams BnnParams::mean_network() const {
  return DnnParams{w1_mu, b1_mu, w2_mu, b2_mu};
}

FlipoutNoise sample_flipout_noise(const BnnParams& p, std::size_t n, RngStream& rng) {
  const std::size_t hidden = p.w1_mu.rows();
  const std::size_t d = p.w1_mu.cols();
  FlipoutNoise z;
  z.eps_w1 = Matrix(hidden, d);
  for (double& e : z.eps_w1.values()) e = rng.normal();
  z.eps_b1 = normal_vector(rng, hidden);
  z.eps_w2 = normal_vector(rng, hidden);
  z.eps_b2 = rng.normal();
  z.s1 = Matrix(n, d);
  z.r1 = Matrix(n, hidden);
  z.s2 = Matrix(n, hidden);
  z.r2.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (double& s : z.s1.row(i)) s = rng.sign();
    for (double& s : z.r1.row(i)) s = rng.sign();
    for (double& s : z.s2.row(i)) s = rng.sign();
    z.r2[i] = rng.sign();
  }
  return z;
}

Vector flipout_forward(const BnnParams& p, const Matrix& x, const FlipoutNoise& noise) {
  return run_forward(p, x, noise).logits;
}

Vector flipout_forward(const BnnParams& p, const Matrix& x, RngStream& rng) {
  check_input(p, x);
  return flipout_forward(p, x, sample_flipout_noise(p, x.rows(), rng));
}

double kl_gaussian(double mu, double sigma, double prior_std) {
  const double ratio = sigma / prior_std;
  return -std::log(ratio) + 0.5 * (ratio * ratio + (mu * mu) / (prior_std * prior_std)) - 0.5;
}

double kl_total(const BnnParams& p, double prior_std) {
  double total = 0.0;
  auto add = [&](std::span<const double> mu, std::span<const double> rho) {
    for (std::size_t k = 0; k < mu.size(); ++k) total += kl_gaussian(mu[k], softplus(rho[k]), prior_std);
  };
  add(p.w1_mu.values(), p.w1_rho.values());
  add(p.b1_mu, p.b1_rho);
  add(p.w2_mu, p.w2_rho);
  total += kl_gaussian(p.b2_mu, softplus(p.b2_rho), prior_std);
  return total;
}

double bnn_loss_grad(const BnnParams& p, const Matrix& x, std::span<const double> labels,
                     const FlipoutNoise& noise, double prior_std, std::size_t n_train, BnnParams& grads) {
  if (n_train == 0) throw ArgumentError("bnn_loss_grad: n_train must be >= 1");
  const FlipoutTrace t = run_forward(p, x, noise);
  const BceResult bce = bce_loss(t.logits, labels);
  const std::size_t n = x.rows();
  const std::size_t d = x.cols();
  const std::size_t hidden = p.w1_mu.rows();

  grads = BnnParams::zeros(HeadConfig{.input_dim = d, .hidden = hidden});
  Matrix d_delta_w1(hidden, d);
  Vector d_delta_w2(hidden, 0.0);
  Vector d_b1(hidden, 0.0);
  double d_b2 = 0.0;
  Vector da(hidden);
  Vector da_r(hidden);
  for (std::size_t i = 0; i < n; ++i) {
    const double dz = bce.dlogits[i];
    const double r2 = noise.r2[i];
    d_b2 += dz;
    for (std::size_t j = 0; j < hidden; ++j) {
      const double hj = t.h(i, j);
      grads.w2_mu[j] += dz * hj;
      d_delta_w2[j] += dz * r2 * hj * noise.s2(i, j);
      const double dh = dz * (p.w2_mu[j] + r2 * noise.s2(i, j) * t.delta_w2[j]);
      da[j] = t.pre(i, j) > 0.0 ? dh : 0.0;
      da_r[j] = da[j] * noise.r1(i, j);
    }
    axpy(1.0, da, d_b1);
    rank1_update(grads.w1_mu, 1.0, da, x.row(i));
    rank1_update(d_delta_w1, 1.0, da_r, t.xs.row(i));
  }

  // Chain through the reparameterization sigma = softplus(rho):
  // dsigma/drho = sigmoid(rho).
  {
    auto rho = p.w1_rho.values();
    auto eps = noise.eps_w1.values();
    auto dd = d_delta_w1.values();
    auto out = grads.w1_rho.values();
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = dd[k] * eps[k] * stable_sigmoid(rho[k]);
  }
  for (std::size_t j = 0; j < hidden; ++j) {
    grads.w2_rho[j] = d_delta_w2[j] * noise.eps_w2[j] * stable_sigmoid(p.w2_rho[j]);
    grads.b1_mu[j] = d_b1[j];
    grads.b1_rho[j] = d_b1[j] * noise.eps_b1[j] * stable_sigmoid(p.b1_rho[j]);
  }
  grads.b2_mu = d_b2;
  grads.b2_rho = d_b2 * noise.eps_b2 * stable_sigmoid(p.b2_rho);

  // KL term, scaled by 1/n_train.
  const double w = 1.0 / static_cast<double>(n_train);
  const double prior_var = prior_std * prior_std;
  auto add_kl = [&](std::span<const double> mu, std::span<const double> rho, std::span<double> g_mu,
                    std::span<double> g_rho) {
    for (std::size_t k = 0; k < mu.size(); ++k) {
      const double sigma = softplus(rho[k]);
      g_mu[k] += w * mu[k] / prior_var;
      g_rho[k] += w * (sigma / prior_var - 1.0 / sigma) * stable_sigmoid(rho[k]);
    }
  };
  add_kl(p.w1_mu.values(), p.w1_rho.values(), grads.w1_mu.values(), grads.w1_rho.values());
  add_kl(p.b1_mu, p.b1_rho, grads.b1_mu, grads.b1_rho);
  add_kl(p.w2_mu, p.w2_rho, grads.w2_mu, grads.w2_rho);
  add_kl(std::span<const double>(&p.b2_mu, 1), std::span<const double>(&p.b2_rho, 1),
         std::span<double>(&grads.b2_mu, 1), std::span<double>(&grads.b2_rho, 1));

  return elbo_objective(bce.loss, kl_total(p, prior_std), n_train);
}

}  // namespace uqh
