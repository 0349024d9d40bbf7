#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "support/oracles.hpp"
#include "support/synthetic.hpp"
#include "uqh/heads.hpp"

namespace uqh::testing {

inline constexpr double kGradStep = 1e-5;
inline constexpr double kGradRelTol = 1e-4;

inline double gradient_relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / denom;
}

struct GradCheck {
  double worst = 0.0;
  std::string worst_at;  // "tensor[k]"
  std::size_t components = 0;
};

// Compares every analytic gradient component with a central difference of
// `loss` taken through the matching parameter tensor.
inline GradCheck check_gradients(std::vector<TensorView> params, std::vector<TensorView> grads,
                                 const std::function<double()>& loss) {
  GradCheck out;
  if (params.size() != grads.size()) throw std::logic_error("gradient/parameter tensor count mismatch");
  for (std::size_t t = 0; t < params.size(); ++t) {
    if (params[t].name != grads[t].name || params[t].values.size() != grads[t].values.size()) {
      throw std::logic_error("gradient/parameter tensor mismatch at " + params[t].name);
    }
    for (std::size_t k = 0; k < params[t].values.size(); ++k) {
      const double numeric = central_difference(loss, params[t].values, k, kGradStep);
      const double err = gradient_relative_error(grads[t].values[k], numeric);
      ++out.components;
      if (err > out.worst) {
        out.worst = err;
        out.worst_at = params[t].name + "[" + std::to_string(k) + "]";
      }
    }
  }
  return out;
}

inline HeadConfig gradcheck_config() {
  HeadConfig cfg;
  cfg.input_dim = 3;
  cfg.hidden = 4;
  cfg.rff_dim = 4;
  return cfg;
}

inline void random_instance(RngStream& rng, Matrix& x, Vector& y, std::size_t n = 5, std::size_t d = 3) {
  x = random_matrix(n, d, rng);
  y.assign(n, 0.0);
  for (double& v : y) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
}

// One random small instance per head: parameters drawn away from any
// special values, a 5-row batch, and for BNN a fixed noise draw shared by
// the analytic pass and every perturbed evaluation.
inline GradCheck gradient_instance(HeadKind kind, std::uint64_t seed) {
  RngStream rng(seed);
  const HeadConfig cfg = gradcheck_config();
  Matrix x;
  Vector y;
  switch (kind) {
    case HeadKind::Dnn: {
      HeadParams hp = DnnParams{random_matrix(4, 3, rng), random_vector(4, rng), random_vector(4, rng), rng.normal()};
      random_instance(rng, x, y);
      HeadGrads g = DnnParams{};
      dnn_loss_grad(std::get<DnnParams>(hp), x, y, std::get<DnnParams>(g));
      return check_gradients(trainable_tensors(hp), grad_tensors(g), [&] {
        DnnParams scratch;
        return dnn_loss_grad(std::get<DnnParams>(hp), x, y, scratch);
      });
    }
    case HeadKind::Bnn: {
      BnnParams p;
      p.w1_mu = random_matrix(4, 3, rng);
      p.w1_rho = random_matrix(4, 3, rng, 0.5);
      p.b1_mu = random_vector(4, rng);
      p.b1_rho = random_vector(4, rng, 0.5);
      p.w2_mu = random_vector(4, rng);
      p.w2_rho = random_vector(4, rng, 0.5);
      p.b2_mu = rng.normal();
      p.b2_rho = 0.5 * rng.normal();
      random_instance(rng, x, y);
      const std::size_t n_train = 50;
      const FlipoutNoise noise = sample_flipout_noise(p, x.rows(), rng);
      HeadParams hp = p;
      HeadGrads g = BnnParams{};
      bnn_loss_grad(std::get<BnnParams>(hp), x, y, noise, 1.0, n_train, std::get<BnnParams>(g));
      return check_gradients(trainable_tensors(hp), grad_tensors(g), [&] {
        BnnParams scratch;
        return bnn_loss_grad(std::get<BnnParams>(hp), x, y, noise, 1.0, n_train, scratch);
      });
    }
    case HeadKind::Sngp: {
      Model m = init_model(HeadKind::Sngp, cfg, rng);
      auto& p = std::get<SngpParams>(m.params);
      p.w_hid = random_matrix(4, 3, rng);
      p.b_hid = random_vector(4, rng);
      p.beta = random_vector(4, rng);
      random_instance(rng, x, y);
      HeadGrads g = SngpGrads{};
      sngp_loss_grad(p, x, y, std::get<SngpGrads>(g));
      return check_gradients(trainable_tensors(m.params), grad_tensors(g), [&] {
        SngpGrads scratch;
        return sngp_loss_grad(std::get<SngpParams>(m.params), x, y, scratch);
      });
    }
  }
  throw std::logic_error("unknown head kind");
}

}  // namespace uqh::testing
