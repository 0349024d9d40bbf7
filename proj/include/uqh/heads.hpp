#pragma once

#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "uqh/numerics.hpp"

namespace uqh {

enum class HeadKind : std::uint8_t { Dnn = 0, Bnn = 1, Sngp = 2 };

std::string_view to_string(HeadKind kind);
// Accepts "dnn", "bnn", "sngp". Throws ArgumentError otherwise.
HeadKind parse_head_kind(std::string_view name);

struct HeadConfig {
  std::size_t input_dim = 0;
  std::size_t hidden = 1024;
  std::size_t rff_dim = 1024;          // SNGP random features ("inducing points")
  double spectral_bound = 0.95;
  double ridge = 1.0;                  // SNGP prior precision s
  double mean_field_lambda = std::numbers::pi / 8.0;
  std::size_t k_samples = 10;          // BNN predictions per input
  double prior_std = 1.0;
  std::size_t power_iters = 1;         // per spectral normalization, warm-started

  void validate() const;
  friend bool operator==(const HeadConfig&, const HeadConfig&) = default;
};

struct DnnParams {
  Matrix w1;  // hidden x d
  Vector b1;  // hidden
  Vector w2;  // hidden
  double b2 = 0.0;

  static DnnParams zeros(const HeadConfig& cfg);
  friend bool operator==(const DnnParams&, const DnnParams&) = default;
};

// Mean-field Gaussian posterior, sigma = softplus(rho) elementwise.
struct BnnParams {
  Matrix w1_mu, w1_rho;
  Vector b1_mu, b1_rho;
  Vector w2_mu, w2_rho;
  double b2_mu = 0.0, b2_rho = 0.0;

  static BnnParams zeros(const HeadConfig& cfg);
  // The deterministic network with weights at the posterior mean.
  DnnParams mean_network() const;
  friend bool operator==(const BnnParams&, const BnnParams&) = default;
};

struct SngpParams {
  Matrix w_hid;   // hidden x d, spectrally normalized
  Vector b_hid;   // hidden
  Vector sn_u;    // warm-start left singular vector (hidden)
  Vector sn_v;    // warm-start right singular vector (d)
  Matrix w_rff;   // rff_dim x hidden, frozen
  Vector b_rff;   // rff_dim, frozen
  Vector beta;    // rff_dim
  Matrix precision;   // rff_dim x rff_dim
  Matrix covariance;  // empty until finalized
  bool finalized = false;

  friend bool operator==(const SngpParams&, const SngpParams&) = default;
};

// Gradient container for the trainable SNGP tensors.
struct SngpGrads {
  Matrix w_hid;
  Vector b_hid;
  Vector beta;
};

using HeadParams = std::variant<DnnParams, BnnParams, SngpParams>;
using HeadGrads = std::variant<DnnParams, BnnParams, SngpGrads>;

struct Model {
  HeadKind kind = HeadKind::Dnn;
  HeadConfig cfg;
  std::uint64_t seed = 0;  // training seed, recorded so evaluation can rebuild the split
  HeadParams params;

  friend bool operator==(const Model&, const Model&) = default;
};

// Random initialization. BNN posteriors start at mu = 0, sigma = prior_std.
Model init_model(HeadKind kind, const HeadConfig& cfg, RngStream& rng);

// ---------------------------------------------------------------------------
// Named tensor views, shared by the optimizer and the model file format.

struct TensorView {
  std::string name;
  std::vector<std::uint64_t> shape;
  std::span<double> values;
  bool decay = true;  // decoupled weight decay applies
};

// Trainable tensors in a fixed order; grads_tensors() returns the matching
// order for the gradient container of the same head.
std::vector<TensorView> trainable_tensors(HeadParams& params);
std::vector<TensorView> grad_tensors(HeadGrads& grads);
HeadGrads zero_grads(const HeadParams& params);

// ---------------------------------------------------------------------------
// DNN

Vector dnn_forward(const DnnParams& p, const Matrix& x);
// Mean BCE loss and its gradient.
double dnn_loss_grad(const DnnParams& p, const Matrix& x, std::span<const double> labels, DnnParams& grads);

// ---------------------------------------------------------------------------
// BNN (flipout)

// All random draws of one flipout forward call: a shared weight
// perturbation per layer plus per-example Rademacher sign vectors.
struct FlipoutNoise {
  Matrix eps_w1;  // hidden x d
  Vector eps_b1;  // hidden
  Vector eps_w2;  // hidden
  double eps_b2 = 0.0;
  Matrix s1;      // n x d   input signs, layer 1
  Matrix r1;      // n x hidden output signs, layer 1
  Matrix s2;      // n x hidden input signs, layer 2
  Vector r2;      // n      output signs, layer 2
};

FlipoutNoise sample_flipout_noise(const BnnParams& p, std::size_t n, RngStream& rng);
Vector flipout_forward(const BnnParams& p, const Matrix& x, const FlipoutNoise& noise);
Vector flipout_forward(const BnnParams& p, const Matrix& x, RngStream& rng);

double kl_total(const BnnParams& p, double prior_std);
// KL(N(mu, sigma^2) || N(0, prior_std^2)) for one parameter.
double kl_gaussian(double mu, double sigma, double prior_std);

// Mean BCE of one flipout sample plus kl_total / n_train.
double bnn_loss_grad(const BnnParams& p, const Matrix& x, std::span<const double> labels,
                     const FlipoutNoise& noise, double prior_std, std::size_t n_train, BnnParams& grads);

// ---------------------------------------------------------------------------
// SNGP

SngpParams sngp_init(const HeadConfig& cfg, RngStream& rng);

// Rescales w_hid to the spectral bound when its estimated norm exceeds it.
// Returns the norm estimate before rescaling.
double spectral_normalize(SngpParams& p, const HeadConfig& cfg);
// Cold-start variant used at initialization: random start, 20 iterations.
double spectral_normalize(SngpParams& p, const HeadConfig& cfg, RngStream& rng);

Vector rff_transform(std::span<const double> h, const SngpParams& p);
// Hidden features relu(W_hid x + b_hid) for each row.
Matrix sngp_hidden(const SngpParams& p, const Matrix& x);
// Random features for each row.
Matrix sngp_features(const SngpParams& p, const Matrix& x);

struct SngpOutput {
  Vector logits;
  Vector variance;  // empty unless requested
};
SngpOutput sngp_forward(const SngpParams& p, const Matrix& x, bool with_variance);

double sngp_loss_grad(const SngpParams& p, const Matrix& x, std::span<const double> labels, SngpGrads& grads);

void sngp_reset_precision(SngpParams& p, double ridge);
void sngp_precision_update(SngpParams& p, const Matrix& phi_batch, std::span<const double> probs);
// Inverts the precision into the covariance and marks the head finalized.
void sngp_covariance_finalize(SngpParams& p);

double mean_field_adjust(double logit, double variance, double lambda);

// ---------------------------------------------------------------------------
// Uniform entry points

struct UncertainPrediction {
  double prob_mean = 0.0;
  double variance = 0.0;
  int label = 0;
};

int hard_label(double prob) noexcept;

// Loss and gradient of the training objective for any head.
struct LossAndGrads {
  double loss = 0.0;
  HeadGrads grads;
};
LossAndGrads gradient(const Model& model, const Matrix& x, std::span<const double> labels, RngStream& rng,
                      std::size_t n_train);

// Deterministic logits for DNN/SNGP; one flipout sample for BNN.
Vector forward_logits(const Model& model, const Matrix& x, RngStream& rng);

std::vector<UncertainPrediction> predict_with_uncertainty(const Model& model, const Matrix& x, RngStream& rng);

}  // namespace uqh
