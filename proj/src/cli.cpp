#include "uqh/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <optional>

#include "uqh/config.hpp"
#include "uqh/data.hpp"
#include "uqh/evaluation.hpp"
#include "uqh/model_io.hpp"
#include "uqh/training.hpp"

namespace uqh {

namespace {

std::vector<int> int_labels(const EmbeddingDataset& ds) {
  if (!ds.labels) throw FormatError("embedding file has no labels");
  return std::vector<int>(ds.labels->begin(), ds.labels->end());
}

EmbeddingDataset load_checked(const std::string& path) {
  EmbeddingDataset ds = load_dataset(path);
  validate_dataset(ds);
  return ds;
}

void check_width(const Model& model, const EmbeddingDataset& ds) {
  if (ds.dim() != model.cfg.input_dim) {
    throw FormatError("embedding dim " + std::to_string(ds.dim()) + " does not match model input_dim " +
                      std::to_string(model.cfg.input_dim));
  }
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open file for writing", path.string());
  out << text;
  if (!out) throw IoError("write failed", path.string());
}

struct TrainArgs {
  std::string head, embeddings, config, out;
  std::optional<std::uint64_t> seed;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
  RunConfig cfg = a.config.empty() ? RunConfig{} : load_config(a.config);
  if (a.seed) cfg.train.seed = *a.seed;
  const HeadKind kind = parse_head_kind(a.head);
  const EmbeddingDataset ds = load_checked(a.embeddings);
  if (!ds.has_labels()) throw FormatError("train: embedding file has no labels");
  const SplitIndices splits = split_dataset(ds.n(), cfg.train.seed);
  const TrainResult result = train(kind, ds, splits, cfg.head, cfg.train);

  const auto& h = result.history;
  for (std::size_t e = 0; e < h.epochs(); ++e) {
    char line[160];
    std::snprintf(line, sizeof line, "epoch %zu train_loss %.6f val_loss %.6f lr %.3g\n", e + 1, h.train_loss[e],
                  h.val_loss[e], h.learning_rate[e]);
    out << line;
  }
  out << "stop: " << to_string(h.stop_reason) << ", best epoch " << h.best_epoch << "\n";

  save_model(a.out, result.model);
  write_text(a.out + ".history.json", history_to_json(h));
  out << "model written to " << a.out << "\n";
  return kExitOk;
}

struct EvalArgs {
  std::string model, embeddings, report;
  std::uint64_t seed = 0;
  bool allow_seed_mismatch = false;
  std::size_t timing_repeats = 0;
};

int cmd_eval(const EvalArgs& a, std::ostream& out, std::ostream& err) {
  const Model model = load_model(a.model);
  if (model.seed != a.seed) {
    if (!a.allow_seed_mismatch) {
      err << "error: --seed " << a.seed << " differs from the training seed " << model.seed
          << " recorded in the model; the test split would overlap training rows"
          << " (pass --allow-seed-mismatch to evaluate anyway)\n";
      return kExitUsage;
    }
    err << "warning: evaluating with seed " << a.seed << " but the model was trained with seed " << model.seed
        << "\n";
  }
  const EmbeddingDataset ds = load_checked(a.embeddings);
  check_width(model, ds);
  const std::vector<int> labels = int_labels(ds);
  const SplitIndices splits = split_dataset(ds.n(), a.seed);
  const Matrix x_test = gather_rows(ds.embeddings, splits.test);
  std::vector<int> y_test(splits.test.size());
  for (std::size_t i = 0; i < y_test.size(); ++i) y_test[i] = labels[splits.test[i]];

  EvalOptions opts;
  opts.timing_repeats = a.timing_repeats;
  const Evaluation ev = evaluate(model, x_test, y_test, derive_stream(a.seed, Stream::Predict), opts);
  write_report(ev.report, a.report);

  char line[160];
  std::snprintf(line, sizeof line, "accuracy %.5f  f1 %.5f  flop_proxy %llu\n", ev.report.accuracy, ev.report.f1,
                static_cast<unsigned long long>(ev.report.flop_proxy));
  out << line;
  if (a.timing_repeats > 0) {
    std::snprintf(line, sizeof line, "latency %.3f +- %.3f ms per batch of %zu\n", ev.report.latency_ms_mean,
                  ev.report.latency_ms_std, x_test.rows());
    out << line;
  }
  out << render_decile_table(to_string(model.kind), ev.report);
  return kExitOk;
}

struct PredictArgs {
  std::string model, embeddings, out;
  std::optional<std::uint64_t> seed;
};

std::vector<UncertainPrediction> predict_file(const Model& model, const std::string& embeddings,
                                              std::optional<std::uint64_t> seed) {
  const EmbeddingDataset ds = load_checked(embeddings);
  check_width(model, ds);
  RngStream rng = derive_stream(seed.value_or(model.seed), Stream::Predict);
  return predict_with_uncertainty(model, ds.embeddings, rng);
}

int cmd_predict(const PredictArgs& a, std::ostream& out) {
  const Model model = load_model(a.model);
  const auto preds = predict_file(model, a.embeddings, a.seed);
  std::string text;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    nlohmann::ordered_json j;
    j["index"] = i;
    j["prob_mean"] = preds[i].prob_mean;
    j["variance"] = preds[i].variance;
    j["label"] = preds[i].label;
    text += j.dump();
    text += '\n';
  }
  write_text(a.out, text);
  out << preds.size() << " predictions written to " << a.out << "\n";
  return kExitOk;
}

struct RankArgs {
  std::string model, embeddings;
  std::size_t top = 5, bottom = 5;
  std::optional<std::uint64_t> seed;
};

int cmd_rank(const RankArgs& a, std::ostream& out) {
  const Model model = load_model(a.model);
  const auto preds = predict_file(model, a.embeddings, a.seed);
  const std::vector<std::size_t> order = variance_order(preds);
  const std::size_t top = std::min(a.top, order.size());
  const std::size_t bottom = std::min(a.bottom, order.size());
  char line[160];
  auto row = [&](std::size_t i) {
    std::snprintf(line, sizeof line, "%8zu %12.6f %14.6e %6d\n", i, preds[i].prob_mean, preds[i].variance,
                  preds[i].label);
    out << line;
  };
  std::snprintf(line, sizeof line, "%8s %12s %14s %6s\n", "index", "prob_mean", "variance", "label");
  out << "high uncertainty (top " << top << ")\n" << line;
  for (std::size_t k = 0; k < top; ++k) row(order[order.size() - 1 - k]);
  out << "low uncertainty (bottom " << bottom << ")\n" << line;
  for (std::size_t k = 0; k < bottom; ++k) row(order[k]);
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Uncertainty-aware classification heads on text embeddings", "uqh"};
  app.require_subcommand(1);

  TrainArgs ta;
  std::uint64_t train_seed = 0;
  auto* train_cmd = app.add_subcommand("train", "Train a head on the 64/16/20 split");
  train_cmd->add_option("--head", ta.head, "dnn | bnn | sngp")->required()->check(CLI::IsMember({"dnn", "bnn", "sngp"}));
  train_cmd->add_option("--embeddings", ta.embeddings, "UQEB or JSON-lines dataset")->required();
  train_cmd->add_option("--config", ta.config, "key = value config file");
  auto* train_seed_opt = train_cmd->add_option("--seed", train_seed, "Seed for split, init and sampling");
  train_cmd->add_option("--out", ta.out, "Model output path")->required();

  EvalArgs ea;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a model on the test split");
  eval_cmd->add_option("--model", ea.model)->required();
  eval_cmd->add_option("--embeddings", ea.embeddings)->required();
  eval_cmd->add_option("--seed", ea.seed, "Split seed; must match training")->required();
  eval_cmd->add_option("--report", ea.report, "JSON report output path")->required();
  eval_cmd->add_flag("--allow-seed-mismatch", ea.allow_seed_mismatch);
  eval_cmd->add_option("--timing-repeats", ea.timing_repeats, "Latency benchmark runs (0 = skip)");

  PredictArgs pa;
  std::uint64_t predict_seed = 0;
  auto* predict_cmd = app.add_subcommand("predict", "Write per-row predictions as JSON lines");
  predict_cmd->add_option("--model", pa.model)->required();
  predict_cmd->add_option("--embeddings", pa.embeddings)->required();
  predict_cmd->add_option("--out", pa.out)->required();
  auto* predict_seed_opt = predict_cmd->add_option("--seed", predict_seed, "Sampling seed (default: training seed)");

  RankArgs ra;
  std::uint64_t rank_seed = 0;
  auto* rank_cmd = app.add_subcommand("rank", "Show the most and least uncertain rows");
  rank_cmd->add_option("--model", ra.model)->required();
  rank_cmd->add_option("--embeddings", ra.embeddings)->required();
  rank_cmd->add_option("--top", ra.top)->required();
  rank_cmd->add_option("--bottom", ra.bottom)->required();
  auto* rank_seed_opt = rank_cmd->add_option("--seed", rank_seed, "Sampling seed (default: training seed)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (train_cmd->parsed()) {
      if (*train_seed_opt) ta.seed = train_seed;
      return cmd_train(ta, out);
    }
    if (eval_cmd->parsed()) return cmd_eval(ea, out, err);
    if (predict_cmd->parsed()) {
      if (*predict_seed_opt) pa.seed = predict_seed;
      return cmd_predict(pa, out);
    }
    if (rank_cmd->parsed()) {
      if (*rank_seed_opt) ra.seed = rank_seed;
      return cmd_rank(ra, out);
    }
  } catch (const ArgumentError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const DimensionError& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitNumerical;
  }
  err << "usage error: no subcommand\n";
  return kExitUsage;
}

}  // namespace uqh
