#include <cmath>
#include <sstream>

#include "uqh/heads.hpp"

namespace uqh {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

using Shape = std::vector<std::uint64_t>;

Shape shape_of(const Matrix& m) { return {m.rows(), m.cols()}; }
Shape shape_of(const Vector& v) { return {v.size()}; }

TensorView view(std::string name, Matrix& m, bool decay = true) {
  return {std::move(name), shape_of(m), m.values(), decay};
}
TensorView view(std::string name, Vector& v, bool decay = true) {
  return {std::move(name), shape_of(v), v, decay};
}
TensorView view(std::string name, double& s, bool decay = true) {
  return {std::move(name), {}, std::span<double>(&s, 1), decay};
}

std::vector<TensorView> dnn_tensors(DnnParams& p) {
  return {view("w1", p.w1), view("b1", p.b1), view("w2", p.w2), view("b2", p.b2)};
}

std::vector<TensorView> bnn_tensors(BnnParams& p) {
  return {view("w1_mu", p.w1_mu), view("w1_rho", p.w1_rho, false), view("b1_mu", p.b1_mu),
          view("b1_rho", p.b1_rho, false), view("w2_mu", p.w2_mu), view("w2_rho", p.w2_rho, false),
          view("b2_mu", p.b2_mu), view("b2_rho", p.b2_rho, false)};
}

void fill_uniform(std::span<double> values, double bound, RngStream& rng) {
  for (double& v : values) v = bound * (2.0 * rng.uniform() - 1.0);
}

}  // namespace

std::string_view to_string(HeadKind kind) {
  switch (kind) {
    case HeadKind::Dnn: return "dnn";
    case HeadKind::Bnn: return "bnn";
    case HeadKind::Sngp: return "sngp";
  }
  return "unknown";
}

HeadKind parse_head_kind(std::string_view name) {
  if (name == "dnn") return HeadKind::Dnn;
  if (name == "bnn") return HeadKind::Bnn;
  if (name == "sngp") return HeadKind::Sngp;
  throw ArgumentError("unknown head kind '" + std::string(name) + "' (expected dnn, bnn or sngp)");
}

void HeadConfig::validate() const {
  std::ostringstream problems;
  if (input_dim < 1) problems << " input_dim must be >= 1;";
  if (hidden < 1) problems << " hidden must be >= 1;";
  if (rff_dim < 1) problems << " rff_dim must be >= 1;";
  if (!(spectral_bound > 0.0)) problems << " spectral_bound must be > 0;";
  if (!(ridge > 0.0)) problems << " ridge must be > 0;";
  if (!(mean_field_lambda >= 0.0)) problems << " mean_field_lambda must be >= 0;";
  if (k_samples < 1) problems << " k_samples must be >= 1;";
  if (!(prior_std > 0.0)) problems << " prior_std must be > 0;";
  if (power_iters < 1) problems << " power_iters must be >= 1;";
  const std::string msg = problems.str();
  if (!msg.empty()) throw ArgumentError("invalid head config:" + msg);
}

Model init_model(HeadKind kind, const HeadConfig& cfg, RngStream& rng) {
  cfg.validate();
  Model model;
  model.kind = kind;
  model.cfg = cfg;
  const double in_bound = 1.0 / std::sqrt(static_cast<double>(cfg.input_dim));
  const double hid_bound = 1.0 / std::sqrt(static_cast<double>(cfg.hidden));
  switch (kind) {
    case HeadKind::Dnn: {
      DnnParams p = DnnParams::zeros(cfg);
      fill_uniform(p.w1.values(), in_bound, rng);
      fill_uniform(p.b1, in_bound, rng);
      fill_uniform(p.w2, hid_bound, rng);
      p.b2 = hid_bound * (2.0 * rng.uniform() - 1.0);
      model.params = std::move(p);
      break;
    }
    case HeadKind::Bnn: {
      BnnParams p = BnnParams::zeros(cfg);
      const double rho = inv_softplus(cfg.prior_std);
      for (double& r : p.w1_rho.values()) r = rho;
      std::fill(p.b1_rho.begin(), p.b1_rho.end(), rho);
      std::fill(p.w2_rho.begin(), p.w2_rho.end(), rho);
      p.b2_rho = rho;
      model.params = std::move(p);
      break;
    }
    case HeadKind::Sngp:
      model.params = sngp_init(cfg, rng);
      break;
  }
  return model;
}

std::vector<TensorView> trainable_tensors(HeadParams& params) {
  return std::visit(Overloaded{
                        [](DnnParams& p) { return dnn_tensors(p); },
                        [](BnnParams& p) { return bnn_tensors(p); },
                        [](SngpParams& p) {
                          return std::vector<TensorView>{view("w_hid", p.w_hid), view("b_hid", p.b_hid),
                                                         view("beta", p.beta)};
                        },
                    },
                    params);
}

std::vector<TensorView> grad_tensors(HeadGrads& grads) {
  return std::visit(Overloaded{
                        [](DnnParams& g) { return dnn_tensors(g); },
                        [](BnnParams& g) { return bnn_tensors(g); },
                        [](SngpGrads& g) {
                          return std::vector<TensorView>{view("w_hid", g.w_hid), view("b_hid", g.b_hid),
                                                         view("beta", g.beta)};
                        },
                    },
                    grads);
}

HeadGrads zero_grads(const HeadParams& params) {
  return std::visit(Overloaded{
                        [](const DnnParams& p) -> HeadGrads {
                          return DnnParams::zeros({.input_dim = p.w1.cols(), .hidden = p.w1.rows()});
                        },
                        [](const BnnParams& p) -> HeadGrads {
                          return BnnParams::zeros({.input_dim = p.w1_mu.cols(), .hidden = p.w1_mu.rows()});
                        },
                        [](const SngpParams& p) -> HeadGrads {
                          return SngpGrads{Matrix(p.w_hid.rows(), p.w_hid.cols()), Vector(p.b_hid.size(), 0.0),
                                           Vector(p.beta.size(), 0.0)};
                        },
                    },
                    params);
}

int hard_label(double prob) noexcept { return prob >= 0.5 ? 1 : 0; }

LossAndGrads gradient(const Model& model, const Matrix& x, std::span<const double> labels, RngStream& rng,
                      std::size_t n_train) {
  if (n_train == 0) throw ArgumentError("gradient: n_train must be >= 1");
  LossAndGrads out;
  std::visit(Overloaded{
                 [&](const DnnParams& p) {
                   DnnParams g;
                   out.loss = dnn_loss_grad(p, x, labels, g);
                   out.grads = std::move(g);
                 },
                 [&](const BnnParams& p) {
                   if (x.cols() != p.w1_mu.cols()) throw DimensionError("gradient: input width mismatch");
                   const FlipoutNoise noise = sample_flipout_noise(p, x.rows(), rng);
                   BnnParams g;
                   out.loss = bnn_loss_grad(p, x, labels, noise, model.cfg.prior_std, n_train, g);
                   out.grads = std::move(g);
                 },
                 [&](const SngpParams& p) {
                   SngpGrads g;
                   out.loss = sngp_loss_grad(p, x, labels, g);
                   out.grads = std::move(g);
                 },
             },
             model.params);
  return out;
}

Vector forward_logits(const Model& model, const Matrix& x, RngStream& rng) {
  return std::visit(Overloaded{
                        [&](const DnnParams& p) { return dnn_forward(p, x); },
                        [&](const BnnParams& p) { return flipout_forward(p, x, rng); },
                        [&](const SngpParams& p) { return sngp_forward(p, x, false).logits; },
                    },
                    model.params);
}

std::vector<UncertainPrediction> predict_with_uncertainty(const Model& model, const Matrix& x, RngStream& rng) {
  const std::size_t n = x.rows();
  std::vector<UncertainPrediction> out(n);
  std::visit(Overloaded{
                 [&](const DnnParams& p) {
                   const Vector logits = dnn_forward(p, x);
                   for (std::size_t i = 0; i < n; ++i) {
                     out[i].prob_mean = stable_sigmoid(logits[i]);
                     out[i].variance = 0.0;
                   }
                 },
                 [&](const BnnParams& p) {
                   const std::size_t k = model.cfg.k_samples;
                   Matrix probs(k, n);
                   for (std::size_t s = 0; s < k; ++s) {
                     const Vector logits = flipout_forward(p, x, rng);
                     for (std::size_t i = 0; i < n; ++i) probs(s, i) = stable_sigmoid(logits[i]);
                   }
                   for (std::size_t i = 0; i < n; ++i) {
                     double mean = 0.0;
                     for (std::size_t s = 0; s < k; ++s) mean += probs(s, i);
                     mean /= static_cast<double>(k);
                     double var = 0.0;
                     for (std::size_t s = 0; s < k; ++s) {
                       const double dv = probs(s, i) - mean;
                       var += dv * dv;
                     }
                     out[i].prob_mean = mean;
                     out[i].variance = var / static_cast<double>(k);
                   }
                 },
                 [&](const SngpParams& p) {
                   const SngpOutput fwd = sngp_forward(p, x, true);
                   for (std::size_t i = 0; i < n; ++i) {
                     // Round-off can leave a variance a hair below zero.
                     const double var = std::max(fwd.variance[i], 0.0);
                     out[i].prob_mean = mean_field_adjust(fwd.logits[i], var, model.cfg.mean_field_lambda);
                     out[i].variance = var;
                   }
                 },
             },
             model.params);
  for (auto& pred : out) pred.label = hard_label(pred.prob_mean);
  return out;
}

}  // namespace uqh
