#include "uqh/evaluation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <numeric>
#include <sstream>

namespace uqh {

namespace {

void check_pair(std::span<const int> preds, std::span<const int> labels, const char* what) {
  if (preds.empty()) throw ArgumentError(std::string(what) + ": empty input");
  if (preds.size() != labels.size()) throw ArgumentError(std::string(what) + ": length mismatch");
}

}  // namespace

double accuracy(std::span<const int> preds, std::span<const int> labels) {
  check_pair(preds, labels, "accuracy");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hits += preds[i] == labels[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

double f1_binary(std::span<const int> preds, std::span<const int> labels) {
  check_pair(preds, labels, "f1_binary");
  double tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i] == 1 && labels[i] == 1) tp += 1;
    if (preds[i] == 1 && labels[i] != 1) fp += 1;
    if (preds[i] != 1 && labels[i] == 1) fn += 1;
  }
  const double precision = tp + fp > 0 ? tp / (tp + fp) : 0.0;
  const double recall = tp + fn > 0 ? tp / (tp + fn) : 0.0;
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

std::vector<std::size_t> variance_order(std::span<const UncertainPrediction> predictions) {
  std::vector<std::size_t> order(predictions.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return predictions[a].variance < predictions[b].variance;
  });
  return order;
}

DecileReport variance_decile_report(std::span<const UncertainPrediction> predictions, std::span<const int> labels) {
  const std::size_t n = predictions.size();
  if (n < 10) throw ArgumentError("variance_decile_report: need at least 10 predictions, got " + std::to_string(n));
  if (labels.size() != n) throw ArgumentError("variance_decile_report: label count mismatch");
  const std::vector<std::size_t> order = variance_order(predictions);
  const std::size_t k = (n + 9) / 10;

  DecileReport r;
  r.bottom_rows.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
  r.top_rows.assign(order.end() - static_cast<std::ptrdiff_t>(k), order.end());
  auto acc = [&](const std::vector<std::size_t>& rows) {
    std::size_t hits = 0;
    for (auto i : rows) hits += predictions[i].label == labels[i] ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(rows.size());
  };
  r.bottom_decile_accuracy = acc(r.bottom_rows);
  r.top_decile_accuracy = acc(r.top_rows);
  double total = 0.0;
  for (const auto& p : predictions) total += p.variance;
  r.mean_variance = total / static_cast<double>(n);
  return r;
}

LatencyStats timing_benchmark(const Model& model, const Matrix& x, std::size_t repeats, const RngStream& rng) {
  if (repeats < 2) throw ArgumentError("timing_benchmark: repeats must be >= 2");
  using Clock = std::chrono::steady_clock;
  {
    RngStream warm = rng;
    (void)predict_with_uncertainty(model, x, warm);
  }
  std::vector<double> ms(repeats);
  for (std::size_t r = 0; r < repeats; ++r) {
    RngStream run = rng;
    const auto t0 = Clock::now();
    auto preds = predict_with_uncertainty(model, x, run);
    const auto t1 = Clock::now();
    ms[r] = std::chrono::duration<double, std::milli>(t1 - t0).count();
    if (preds.size() != x.rows()) throw StateError("timing_benchmark: prediction count mismatch");
  }
  LatencyStats s;
  s.mean_ms = std::accumulate(ms.begin(), ms.end(), 0.0) / static_cast<double>(repeats);
  double ss = 0.0;
  for (double m : ms) ss += (m - s.mean_ms) * (m - s.mean_ms);
  s.std_ms = std::sqrt(ss / static_cast<double>(repeats - 1));
  return s;
}

std::uint64_t flop_proxy(HeadKind kind, const HeadConfig& cfg) {
  const std::uint64_t d = cfg.input_dim;
  const std::uint64_t h = cfg.hidden;
  const std::uint64_t rff = cfg.rff_dim;
  const std::uint64_t dense = d * h + h;
  switch (kind) {
    case HeadKind::Dnn: return dense;
    case HeadKind::Bnn: return cfg.k_samples * dense + dense;
    case HeadKind::Sngp: return d * h + h * rff + rff + rff * rff;
  }
  return 0;
}

Evaluation evaluate(const Model& model, const Matrix& x, std::span<const int> labels, const RngStream& rng,
                    const EvalOptions& options) {
  Evaluation ev;
  RngStream pred_rng = rng;
  ev.predictions = predict_with_uncertainty(model, x, pred_rng);
  std::vector<int> preds(ev.predictions.size());
  for (std::size_t i = 0; i < preds.size(); ++i) preds[i] = ev.predictions[i].label;

  EvalReport& r = ev.report;
  r.accuracy = accuracy(preds, labels);
  r.f1 = f1_binary(preds, labels);
  r.k_samples_used = model.kind == HeadKind::Bnn ? model.cfg.k_samples : 1;
  const DecileReport dec = variance_decile_report(ev.predictions, labels);
  r.top_decile_accuracy = dec.top_decile_accuracy;
  r.bottom_decile_accuracy = dec.bottom_decile_accuracy;
  r.mean_variance = dec.mean_variance;
  r.flop_proxy = flop_proxy(model.kind, model.cfg);
  if (options.timing_repeats > 0) {
    const auto t0 = std::chrono::steady_clock::now();
    const LatencyStats lat = timing_benchmark(model, x, options.timing_repeats, rng);
    r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    r.latency_ms_mean = lat.mean_ms;
    r.latency_ms_std = lat.std_ms;
  }
  return ev;
}

std::string report_to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["accuracy"] = r.accuracy;
  j["f1"] = r.f1;
  j["latency_ms_mean"] = r.latency_ms_mean;
  j["latency_ms_std"] = r.latency_ms_std;
  j["k_samples_used"] = r.k_samples_used;
  j["top_decile_accuracy"] = r.top_decile_accuracy;
  j["bottom_decile_accuracy"] = r.bottom_decile_accuracy;
  j["mean_variance"] = r.mean_variance;
  j["flop_proxy"] = r.flop_proxy;
  j["wall_seconds"] = r.wall_seconds;
  return j.dump(2) + "\n";
}

EvalReport report_from_json(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("report: invalid JSON: ") + e.what());
  }
  EvalReport r;
  try {
    r.accuracy = j.at("accuracy").get<double>();
    r.f1 = j.at("f1").get<double>();
    r.latency_ms_mean = j.at("latency_ms_mean").get<double>();
    r.latency_ms_std = j.at("latency_ms_std").get<double>();
    r.k_samples_used = j.at("k_samples_used").get<std::uint64_t>();
    r.top_decile_accuracy = j.at("top_decile_accuracy").get<double>();
    r.bottom_decile_accuracy = j.at("bottom_decile_accuracy").get<double>();
    r.mean_variance = j.at("mean_variance").get<double>();
    r.flop_proxy = j.at("flop_proxy").get<std::uint64_t>();
    r.wall_seconds = j.at("wall_seconds").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("report: ") + e.what());
  }
  return r;
}

void write_report(const EvalReport& report, const std::filesystem::path& path) {
  const std::string text = report_to_json(report);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open report for writing", path.string());
  out << text;
  if (!out) throw IoError("write failed", path.string());
}

EvalReport read_report(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open report", path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return report_from_json(ss.str());
}

std::string render_decile_table(std::string_view row_label, const EvalReport& report) {
  char line[160];
  std::string out;
  std::snprintf(line, sizeof line, "%-16s %10s %10s %14s\n", "Model", "Top 10%", "Bot 10%", "Mean variance");
  out += line;
  std::snprintf(line, sizeof line, "%-16.*s %10.3f %10.3f %14.6f\n", static_cast<int>(row_label.size()),
                row_label.data(), 100.0 * report.top_decile_accuracy, 100.0 * report.bottom_decile_accuracy,
                report.mean_variance);
  out += line;
  return out;
}

}  // namespace uqh
