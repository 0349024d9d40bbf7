#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "uqh/heads.hpp"

namespace uqh {

struct EvalReport {
  double accuracy = 0.0;
  double f1 = 0.0;
  double latency_ms_mean = 0.0;
  double latency_ms_std = 0.0;
  std::uint64_t k_samples_used = 1;
  double top_decile_accuracy = 0.0;
  double bottom_decile_accuracy = 0.0;
  double mean_variance = 0.0;
  std::uint64_t flop_proxy = 0;
  double wall_seconds = 0.0;

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

double accuracy(std::span<const int> preds, std::span<const int> labels);
// Positive-class F1; 0 when precision + recall is 0.
double f1_binary(std::span<const int> preds, std::span<const int> labels);

struct DecileReport {
  double top_decile_accuracy = 0.0;     // highest-variance ceil(n/10) rows
  double bottom_decile_accuracy = 0.0;  // lowest-variance ceil(n/10) rows
  double mean_variance = 0.0;
  std::vector<std::size_t> top_rows;
  std::vector<std::size_t> bottom_rows;
};

// Rows ordered by ascending variance, ties broken by row index.
std::vector<std::size_t> variance_order(std::span<const UncertainPrediction> predictions);

DecileReport variance_decile_report(std::span<const UncertainPrediction> predictions, std::span<const int> labels);

struct LatencyStats {
  double mean_ms = 0.0;
  double std_ms = 0.0;  // sample standard deviation
};

// Per-batch latency of predict_with_uncertainty over `repeats` timed runs
// after one untimed warmup. Each run draws from its own copy of `rng`.
LatencyStats timing_benchmark(const Model& model, const Matrix& x, std::size_t repeats, const RngStream& rng);

// Multiply-accumulate count of one prediction.
std::uint64_t flop_proxy(HeadKind kind, const HeadConfig& cfg);

struct EvalOptions {
  // 0 skips the latency benchmark; every timing field is then 0 and the
  // report is a pure function of (model, data, seed).
  std::size_t timing_repeats = 0;
};

struct Evaluation {
  EvalReport report;
  std::vector<UncertainPrediction> predictions;
};

Evaluation evaluate(const Model& model, const Matrix& x, std::span<const int> labels, const RngStream& rng,
                    const EvalOptions& options = {});

std::string report_to_json(const EvalReport& report);
EvalReport report_from_json(std::string_view text);
void write_report(const EvalReport& report, const std::filesystem::path& path);
EvalReport read_report(const std::filesystem::path& path);

// Terminal table with Top 10% / Bot 10% accuracies (x100) and mean variance.
std::string render_decile_table(std::string_view row_label, const EvalReport& report);

}  // namespace uqh
