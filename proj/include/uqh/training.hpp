#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "uqh/data.hpp"
#include "uqh/heads.hpp"
#include "uqh/loss.hpp"

namespace uqh {

struct TrainConfig {
  double learning_rate = 2e-5;
  double scheduler_factor = 0.1;
  std::size_t scheduler_patience = 1;
  double weight_decay = 0.01;
  std::size_t max_epochs = 500;
  std::size_t batch_size = 16;
  std::size_t early_stop_patience = 5;
  std::uint64_t seed = 0;
  double min_improvement = 1e-6;

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct OptimizerState {
  std::vector<Vector> first_moment;
  std::vector<Vector> second_moment;
  std::uint64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with decoupled weight decay: param *= (1 - lr * wd) for tensors
// flagged for decay, then the bias-corrected Adam update.
void adamw_step(OptimizerState& state, std::span<const TensorView> params, std::span<const TensorView> grads,
                double lr, double weight_decay);

// Reduce-on-plateau over validation loss. After patience + 1 consecutive
// epochs without an improvement of at least min_improvement over the best
// loss, the rate is multiplied by factor and the counter restarts.
class PlateauScheduler {
 public:
  PlateauScheduler(double lr, double factor, std::size_t patience, double min_improvement);
  double step(double val_loss);
  double learning_rate() const noexcept { return lr_; }
  std::size_t reductions() const noexcept { return reductions_; }

 private:
  double lr_;
  double factor_;
  std::size_t patience_;
  double min_improvement_;
  double best_ = std::numeric_limits<double>::infinity();
  std::size_t bad_epochs_ = 0;
  std::size_t reductions_ = 0;
};

class EarlyStopping {
 public:
  enum class Decision { Continue, Stop };

  EarlyStopping(std::size_t patience, double min_improvement);
  Decision step(double val_loss);
  // Whether the most recent step set a new best.
  bool improved() const noexcept { return improved_; }
  double best() const noexcept { return best_; }
  std::size_t best_epoch() const noexcept { return best_epoch_; }

 private:
  std::size_t patience_;
  double min_improvement_;
  double best_ = std::numeric_limits<double>::infinity();
  std::size_t failures_ = 0;
  std::size_t epoch_ = 0;
  std::size_t best_epoch_ = 0;
  bool improved_ = false;
};

enum class StopReason { EarlyStop, MaxEpochs };
std::string_view to_string(StopReason reason);

struct TrainHistory {
  std::vector<double> train_loss;
  std::vector<double> val_loss;
  std::vector<double> learning_rate;
  std::vector<double> seconds;
  StopReason stop_reason = StopReason::MaxEpochs;
  std::size_t best_epoch = 0;  // 1-based

  std::size_t epochs() const noexcept { return val_loss.size(); }
};

// Substream ids derived from the single training seed.
enum class Stream : std::uint64_t {
  Shuffle = 1,
  Init = 2,
  Flipout = 3,
  Validation = 4,
  Split = 5,
  Predict = 6,
};
RngStream derive_stream(std::uint64_t seed, Stream stream);

struct TrainResult {
  Model model;
  TrainHistory history;
};

// Mean validation BCE of the model's logits. BNN heads use a single flipout
// sample drawn from the given stream.
double validation_loss(const Model& model, const Matrix& x, std::span<const double> labels, RngStream rng);

TrainResult train(HeadKind kind, const EmbeddingDataset& dataset, const SplitIndices& splits, HeadConfig head_cfg,
                  const TrainConfig& train_cfg);

// Rebuilds the SNGP Laplace posterior with one pass over x.
void sngp_refit_covariance(SngpParams& p, const HeadConfig& cfg, const Matrix& x, std::size_t batch_size);

// JSON object with per-epoch arrays; wall-clock seconds can be left out so
// two histories of the same run compare byte-for-byte.
std::string history_to_json(const TrainHistory& history, bool include_timing = true);

}  // namespace uqh
