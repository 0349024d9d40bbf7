#include "uqh/training.hpp"

#include <chrono>
#include <cmath>
#include <json.hpp>
#include <sstream>

namespace uqh {

// ---------------------------------------------------------------------------
// Losses

BceResult bce_loss(std::span<const double> logits, std::span<const double> labels) {
  if (logits.empty()) throw ArgumentError("bce_loss: empty batch");
  if (logits.size() != labels.size()) throw ArgumentError("bce_loss: logits and labels differ in length");
  const double n = static_cast<double>(logits.size());
  BceResult out;
  out.dlogits.resize(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double z = logits[i];
    const double y = labels[i];
    // -[y log s(z) + (1-y) log s(-z)]
    total -= y * log_sigmoid(z) + (1.0 - y) * log_sigmoid(-z);
    out.dlogits[i] = (stable_sigmoid(z) - y) / n;
  }
  out.loss = total / n;
  return out;
}

double elbo_objective(double bce, double kl, std::size_t n_train) {
  if (n_train == 0) throw ArgumentError("elbo_objective: n_train must be >= 1");
  return bce + kl / static_cast<double>(n_train);
}

// ---------------------------------------------------------------------------
// Config

void TrainConfig::validate() const {
  std::ostringstream problems;
  if (!(learning_rate > 0.0)) problems << " learning_rate must be > 0;";
  if (!(scheduler_factor > 0.0 && scheduler_factor < 1.0)) problems << " scheduler_factor must be in (0, 1);";
  if (!(weight_decay >= 0.0)) problems << " weight_decay must be >= 0;";
  if (max_epochs < 1) problems << " max_epochs must be >= 1;";
  if (batch_size < 1) problems << " batch_size must be >= 1;";
  if (early_stop_patience < 1) problems << " early_stop_patience must be >= 1;";
  if (!(min_improvement >= 0.0)) problems << " min_improvement must be >= 0;";
  const std::string msg = problems.str();
  if (!msg.empty()) throw ArgumentError("invalid train config:" + msg);
}

// ---------------------------------------------------------------------------
// Optimizer

void adamw_step(OptimizerState& state, std::span<const TensorView> params, std::span<const TensorView> grads,
                double lr, double weight_decay) {
  if (params.size() != grads.size()) throw DimensionError("adamw_step: parameter and gradient counts differ");
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.values.size(), 0.0);
      state.second_moment.emplace_back(p.values.size(), 0.0);
    }
  }
  if (state.first_moment.size() != params.size()) throw DimensionError("adamw_step: optimizer state shape mismatch");
  for (std::size_t t = 0; t < params.size(); ++t) {
    if (params[t].values.size() != grads[t].values.size() ||
        state.first_moment[t].size() != params[t].values.size()) {
      throw DimensionError("adamw_step: shape mismatch for tensor " + params[t].name);
    }
  }

  ++state.step;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto p = params[t].values;
    auto g = grads[t].values;
    auto& m = state.first_moment[t];
    auto& v = state.second_moment[t];
    const double decay = params[t].decay ? 1.0 - lr * weight_decay : 1.0;
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g[k];
      v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g[k] * g[k];
      const double m_hat = m[k] / bc1;
      const double v_hat = v[k] / bc2;
      p[k] = p[k] * decay - lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
  }
}

// ---------------------------------------------------------------------------
// Schedules

PlateauScheduler::PlateauScheduler(double lr, double factor, std::size_t patience, double min_improvement)
    : lr_(lr), factor_(factor), patience_(patience), min_improvement_(min_improvement) {}

double PlateauScheduler::step(double val_loss) {
  if (val_loss < best_ - min_improvement_) {
    best_ = val_loss;
    bad_epochs_ = 0;
    return lr_;
  }
  if (++bad_epochs_ > patience_) {
    lr_ *= factor_;
    bad_epochs_ = 0;
    ++reductions_;
  }
  return lr_;
}

EarlyStopping::EarlyStopping(std::size_t patience, double min_improvement)
    : patience_(patience), min_improvement_(min_improvement) {}

EarlyStopping::Decision EarlyStopping::step(double val_loss) {
  ++epoch_;
  improved_ = val_loss < best_ - min_improvement_;
  if (improved_) {
    best_ = val_loss;
    best_epoch_ = epoch_;
    failures_ = 0;
    return Decision::Continue;
  }
  return ++failures_ >= patience_ ? Decision::Stop : Decision::Continue;
}

std::string_view to_string(StopReason reason) {
  return reason == StopReason::EarlyStop ? "early-stop" : "max-epochs";
}

RngStream derive_stream(std::uint64_t seed, Stream stream) {
  return RngStream(seed).substream(static_cast<std::uint64_t>(stream));
}

// ---------------------------------------------------------------------------
// Training loop

double validation_loss(const Model& model, const Matrix& x, std::span<const double> labels, RngStream rng) {
  const Vector logits = forward_logits(model, x, rng);
  return bce_loss(logits, labels).loss;
}

void sngp_refit_covariance(SngpParams& p, const HeadConfig& cfg, const Matrix& x, std::size_t batch_size) {
  sngp_reset_precision(p, cfg.ridge);
  std::vector<std::size_t> rows;
  for (std::size_t start = 0; start < x.rows(); start += batch_size) {
    const std::size_t end = std::min(x.rows(), start + batch_size);
    rows.resize(end - start);
    for (std::size_t i = start; i < end; ++i) rows[i - start] = i;
    const Matrix phi = sngp_features(p, gather_rows(x, rows));
    Vector probs(phi.rows());
    for (std::size_t i = 0; i < phi.rows(); ++i) probs[i] = stable_sigmoid(dot(phi.row(i), p.beta));
    sngp_precision_update(p, phi, probs);
  }
  sngp_covariance_finalize(p);
}

namespace {

bool grads_finite(HeadGrads& grads) {
  for (const auto& t : grad_tensors(grads)) {
    for (double g : t.values) {
      if (!std::isfinite(g)) return false;
    }
  }
  return true;
}

}  // namespace

TrainResult train(HeadKind kind, const EmbeddingDataset& dataset, const SplitIndices& splits, HeadConfig head_cfg,
                  const TrainConfig& train_cfg) {
  train_cfg.validate();
  if (!dataset.has_labels()) throw ArgumentError("train: dataset has no labels");
  if (splits.train.empty() || splits.val.empty()) throw ArgumentError("train: empty train or validation split");
  validate_dataset(dataset);
  head_cfg.input_dim = dataset.dim();
  head_cfg.validate();

  const Vector all_labels = dataset.label_vector();
  const Matrix x_train = gather_rows(dataset.embeddings, splits.train);
  const Vector y_train = gather(all_labels, splits.train);
  const Matrix x_val = gather_rows(dataset.embeddings, splits.val);
  const Vector y_val = gather(all_labels, splits.val);
  const std::size_t n_train = x_train.rows();

  RngStream init_rng = derive_stream(train_cfg.seed, Stream::Init);
  RngStream shuffle_rng = derive_stream(train_cfg.seed, Stream::Shuffle);
  RngStream flipout_rng = derive_stream(train_cfg.seed, Stream::Flipout);
  const RngStream validation_rng = derive_stream(train_cfg.seed, Stream::Validation);

  TrainResult result;
  Model& model = result.model;
  model = init_model(kind, head_cfg, init_rng);
  model.seed = train_cfg.seed;
  HeadParams best = model.params;

  OptimizerState opt;
  PlateauScheduler scheduler(train_cfg.learning_rate, train_cfg.scheduler_factor, train_cfg.scheduler_patience,
                             train_cfg.min_improvement);
  EarlyStopping stopper(train_cfg.early_stop_patience, train_cfg.min_improvement);
  TrainHistory& history = result.history;

  std::vector<std::size_t> order(n_train);
  for (std::size_t i = 0; i < n_train; ++i) order[i] = i;
  std::vector<std::size_t> batch_rows;

  for (std::size_t epoch = 1; epoch <= train_cfg.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = scheduler.learning_rate();
    for (std::size_t i = n_train - 1; i > 0; --i) {
      std::swap(order[i], order[static_cast<std::size_t>(shuffle_rng.below(i + 1))]);
    }

    double loss_sum = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < n_train; start += train_cfg.batch_size, ++batch_index) {
      const std::size_t end = std::min(n_train, start + train_cfg.batch_size);
      batch_rows.assign(order.begin() + static_cast<std::ptrdiff_t>(start),
                        order.begin() + static_cast<std::ptrdiff_t>(end));
      const Matrix xb = gather_rows(x_train, batch_rows);
      const Vector yb = gather(y_train, batch_rows);
      LossAndGrads lg = gradient(model, xb, yb, flipout_rng, n_train);
      if (!std::isfinite(lg.loss) || !grads_finite(lg.grads)) {
        std::ostringstream os;
        os << "training diverged: non-finite loss or gradient at epoch " << epoch << ", batch " << batch_index;
        throw TrainingError(os.str(), epoch, batch_index);
      }
      loss_sum += lg.loss * static_cast<double>(end - start);
      auto params = trainable_tensors(model.params);
      auto grads = grad_tensors(lg.grads);
      adamw_step(opt, params, grads, lr, train_cfg.weight_decay);
      if (auto* sngp = std::get_if<SngpParams>(&model.params)) spectral_normalize(*sngp, model.cfg);
    }

    const double val = validation_loss(model, x_val, y_val, validation_rng);
    if (!std::isfinite(val)) {
      std::ostringstream os;
      os << "training diverged: non-finite validation loss at epoch " << epoch;
      throw TrainingError(os.str(), epoch, batch_index);
    }
    history.train_loss.push_back(loss_sum / static_cast<double>(n_train));
    history.val_loss.push_back(val);
    history.learning_rate.push_back(lr);

    const auto decision = stopper.step(val);
    if (stopper.improved()) best = model.params;
    scheduler.step(val);
    history.seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    if (decision == EarlyStopping::Decision::Stop) {
      history.stop_reason = StopReason::EarlyStop;
      break;
    }
  }
  if (history.stop_reason != StopReason::EarlyStop) history.stop_reason = StopReason::MaxEpochs;
  history.best_epoch = stopper.best_epoch();
  model.params = std::move(best);

  if (auto* sngp = std::get_if<SngpParams>(&model.params)) {
    sngp_refit_covariance(*sngp, model.cfg, x_train, train_cfg.batch_size);
  }
  return result;
}

std::string history_to_json(const TrainHistory& history, bool include_timing) {
  nlohmann::ordered_json j;
  j["epochs"] = history.epochs();
  j["best_epoch"] = history.best_epoch;
  j["stop_reason"] = std::string(to_string(history.stop_reason));
  j["train_loss"] = history.train_loss;
  j["val_loss"] = history.val_loss;
  j["learning_rate"] = history.learning_rate;
  if (include_timing) j["seconds"] = history.seconds;
  return j.dump(2) + "\n";
}

}  // namespace uqh
