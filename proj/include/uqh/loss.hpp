#pragma once

#include <span>

#include "uqh/numerics.hpp"

namespace uqh {

struct BceResult {
  double loss = 0.0;
  Vector dlogits;  // d(mean loss)/d(logit_i) = (sigmoid(z_i) - y_i) / n
};

// Mean binary cross-entropy in the logit form. Throws ArgumentError on empty
// or mismatched input.
BceResult bce_loss(std::span<const double> logits, std::span<const double> labels);

double elbo_objective(double bce, double kl, std::size_t n_train);

}  // namespace uqh
