#include <sstream>

#include "uqh/heads.hpp"
#include "uqh/loss.hpp"

namespace uqh {

namespace {

void check_input(const DnnParams& p, const Matrix& x) {
  if (x.cols() != p.w1.cols()) {
    std::ostringstream os;
    os << "dnn: input has " << x.cols() << " columns, head expects " << p.w1.cols();
    throw DimensionError(os.str());
  }
}

// relu(X W1^T + b1), keeping the pre-activations for the backward pass.
Matrix hidden_pre(const DnnParams& p, const Matrix& x) {
  Matrix pre = matmul_nt(x, p.w1);
  for (std::size_t i = 0; i < pre.rows(); ++i) axpy(1.0, p.b1, pre.row(i));
  return pre;
}

}  // namespace

DnnParams DnnParams::zeros(const HeadConfig& cfg) {
  DnnParams p;
  p.w1 = Matrix(cfg.hidden, cfg.input_dim);
  p.b1.assign(cfg.hidden, 0.0);
  p.w2.assign(cfg.hidden, 0.0);
  return p;
}

Vector dnn_forward(const DnnParams& p, const Matrix& x) {
  check_input(p, x);
  Matrix h = hidden_pre(p, x);
  Vector logits(x.rows());
  for (std::size_t i = 0; i < h.rows(); ++i) {
    auto row = h.row(i);
    for (double& v : row) v = v > 0.0 ? v : 0.0;
    logits[i] = dot(row, p.w2) + p.b2;
  }
  return logits;
}

double dnn_loss_grad(const DnnParams& p, const Matrix& x, std::span<const double> labels, DnnParams& grads) {
  check_input(p, x);
  const Matrix pre = hidden_pre(p, x);
  const std::size_t n = x.rows();
  const std::size_t hidden = p.w1.rows();
  Matrix h = pre;
  Vector logits(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto row = h.row(i);
    for (double& v : row) v = v > 0.0 ? v : 0.0;
    logits[i] = dot(row, p.w2) + p.b2;
  }
  const BceResult bce = bce_loss(logits, labels);

  grads = DnnParams::zeros(HeadConfig{.input_dim = p.w1.cols(), .hidden = hidden});
  Vector da(hidden);
  for (std::size_t i = 0; i < n; ++i) {
    const double dz = bce.dlogits[i];
    axpy(dz, h.row(i), grads.w2);
    grads.b2 += dz;
    for (std::size_t j = 0; j < hidden; ++j) da[j] = pre(i, j) > 0.0 ? dz * p.w2[j] : 0.0;
    axpy(1.0, da, grads.b1);
    rank1_update(grads.w1, 1.0, da, x.row(i));
  }
  return bce.loss;
}

}  // namespace uqh
