// Acceptance suite: one PASS/FAIL line per criterion. Exit status is the
// number of failing criteria (0 when everything passes).
//
// Usage: acceptance [name-substring ...]   runs only matching criteria.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <json.hpp>
#include <sstream>
#include <string>
#include <vector>

#include "support/gradcheck.hpp"
#include "support/oracles.hpp"
#include "support/synthetic.hpp"
#include "support/temp_dir.hpp"
#include "uqh/cli.hpp"
#include "uqh/evaluation.hpp"
#include "uqh/training.hpp"

using namespace uqh;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---------------------------------------------------------------------------
// Shared experiment settings. The paper's head widths are kept (1024 hidden
// units, 1024 random features, K = 10); only the optimizer rate is raised
// from the fine-tuning default because the heads here start from scratch.

HeadConfig paper_head() { return HeadConfig{}; }

TrainConfig desk_train(std::uint64_t seed) {
  TrainConfig tc;
  tc.learning_rate = 1e-3;
  tc.max_epochs = 50;
  tc.seed = seed;
  return tc;
}

testing::TwoGaussians separable(std::uint64_t seed) {
  testing::TwoGaussians g;
  g.n = 2000;
  g.dim = 16;
  g.stddev = 0.5;
  g.separation = 3.0;
  g.seed = seed;
  return g;
}

struct Split {
  Matrix x_train, x_test;
  std::vector<int> y_test;
};

Split materialize(const EmbeddingDataset& ds, const SplitIndices& s) {
  Split out;
  out.x_train = gather_rows(ds.embeddings, s.train);
  out.x_test = gather_rows(ds.embeddings, s.test);
  for (std::size_t i : s.test) out.y_test.push_back((*ds.labels)[i]);
  return out;
}

// ---------------------------------------------------------------------------

Outcome gradient_oracle() {
  const auto t0 = Clock::now();
  constexpr int kInstances = 25;
  double worst = 0.0;
  std::string where;
  std::size_t components = 0;
  for (auto kind : {HeadKind::Dnn, HeadKind::Bnn, HeadKind::Sngp}) {
    for (int s = 0; s < kInstances; ++s) {
      const auto r = testing::gradient_instance(kind, 90000 + 1000 * static_cast<int>(kind) + s);
      components += r.components;
      if (r.worst > worst) {
        worst = r.worst;
        where = std::string(to_string(kind)) + " seed " + std::to_string(s) + " " + r.worst_at;
      }
    }
  }
  const double secs = seconds_since(t0);
  return {worst < testing::kGradRelTol && secs < 30.0,
          fmt("%d instances/head, %zu components, worst rel err %.2e (%s), %.2f s (limits 1e-4, 30 s)", kInstances,
              components, worst, where.c_str(), secs)};
}

Outcome spectral_bound() {
  const EmbeddingDataset ds = testing::make_two_gaussians(separable(21));
  HeadConfig cfg = paper_head();
  cfg.input_dim = ds.dim();
  RngStream rng(21);
  Model m = init_model(HeadKind::Sngp, cfg, rng);
  const Vector labels = ds.label_vector();
  OptimizerState opt;
  double max_pre = 0.0;
  std::vector<std::size_t> rows(16);
  for (int step = 0; step < 200; ++step) {
    for (auto& r : rows) r = static_cast<std::size_t>(rng.below(ds.n()));
    const Matrix xb = gather_rows(ds.embeddings, rows);
    const Vector yb = gather(labels, rows);
    LossAndGrads lg = gradient(m, xb, yb, rng, ds.n());
    auto params = trainable_tensors(m.params);
    auto grads = grad_tensors(lg.grads);
    // A large rate so the constraint actually binds.
    adamw_step(opt, params, grads, 5e-2, 0.01);
    max_pre = std::max(max_pre, spectral_normalize(std::get<SngpParams>(m.params), cfg));
  }
  const Matrix& w = std::get<SngpParams>(m.params).w_hid;
  RngStream pi_rng(5);
  const double sigma_pi = power_iteration(w, 200, pi_rng).sigma;
  const double sigma_svd = testing::svd_largest_singular_value(w);
  const bool pass = sigma_pi <= 0.95 + 1e-3 && sigma_svd <= 0.95 + 1e-3 && std::abs(sigma_pi - sigma_svd) <= 1e-3;
  return {pass, fmt("after 200 steps: power iteration %.6f, SVD %.6f (bound 0.951, agreement 1e-3); "
                    "largest pre-projection estimate %.3f",
                    sigma_pi, sigma_svd, max_pre)};
}

Outcome laplace_oracle() {
  double worst_prec = 0.0, worst_inv = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    RngStream rng(700 + seed);
    HeadConfig cfg;
    cfg.input_dim = 8;
    cfg.hidden = 16;
    cfg.rff_dim = 48;
    cfg.ridge = 0.5 + rng.uniform();
    Model m = init_model(HeadKind::Sngp, cfg, rng);
    auto& p = std::get<SngpParams>(m.params);
    sngp_reset_precision(p, cfg.ridge);
    Matrix brute = Matrix::identity(cfg.rff_dim);
    for (double& v : brute.values()) v *= cfg.ridge;
    const std::size_t batches = 3 + rng.below(6);
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t n = 1 + rng.below(40);
      const Matrix x = testing::random_matrix(n, cfg.input_dim, rng, 1.5);
      const Matrix phi = sngp_features(p, x);
      Vector probs(n);
      for (double& q : probs) q = rng.uniform();
      sngp_precision_update(p, phi, probs);
      for (std::size_t i = 0; i < n; ++i) {
        const double w = probs[i] * (1.0 - probs[i]);
        for (std::size_t r = 0; r < cfg.rff_dim; ++r)
          for (std::size_t c = 0; c < cfg.rff_dim; ++c) brute(r, c) += w * phi(i, r) * phi(i, c);
      }
    }
    for (std::size_t k = 0; k < brute.size(); ++k) {
      worst_prec = std::max(worst_prec, std::abs(brute.values()[k] - p.precision.values()[k]));
    }
    sngp_covariance_finalize(p);
    const std::size_t d = cfg.rff_dim;
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = 0; j < d; ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k < d; ++k) s += p.precision(i, k) * p.covariance(k, j);
        worst_inv = std::max(worst_inv, std::abs(s - (i == j ? 1.0 : 0.0)));
      }
    }
  }
  return {worst_prec <= 1e-10 && worst_inv <= 1e-8,
          fmt("5 random batch sequences: max |precision - brute force| %.2e (limit 1e-10), "
              "max |precision x covariance - I| %.2e (limit 1e-8)",
              worst_prec, worst_inv)};
}

Outcome flipout_expectation() {
  RngStream rng(31);
  const std::size_t d = 6, h = 12;
  BnnParams p;
  p.w1_mu = testing::random_matrix(h, d, rng);
  p.b1_mu = testing::random_vector(h, rng, 0.5);
  p.w2_mu = testing::random_vector(h, rng);
  p.b2_mu = 0.3;
  const double rho = inv_softplus(1e-3);
  p.w1_rho = Matrix(h, d, rho);
  p.b1_rho.assign(h, rho);
  p.w2_rho.assign(h, rho);
  p.b2_rho = rho;
  const Matrix x = testing::random_matrix(10, d, rng);
  const Vector mean_forward = dnn_forward(p.mean_network(), x);
  constexpr int kDraws = 10000;
  Vector sum(10, 0.0), sum_sq(10, 0.0);
  for (int k = 0; k < kDraws; ++k) {
    const Vector z = flipout_forward(p, x, rng);
    for (std::size_t i = 0; i < 10; ++i) {
      sum[i] += z[i];
      sum_sq[i] += z[i] * z[i];
    }
  }
  double worst_ratio = 0.0;
  for (std::size_t i = 0; i < 10; ++i) {
    const double mean = sum[i] / kDraws;
    const double var = (sum_sq[i] - kDraws * mean * mean) / (kDraws - 1);
    const double se = std::sqrt(std::max(var, 0.0) / kDraws);
    const double gap = std::abs(mean - mean_forward[i]);
    worst_ratio = std::max(worst_ratio, se > 0 ? gap / se : (gap == 0 ? 0.0 : INFINITY));
  }
  return {worst_ratio <= 3.0,
          fmt("sigma 1e-3, 10000 draws, 10 inputs: worst |mean - mu forward| = %.2f standard errors (limit 3)",
              worst_ratio)};
}

Outcome kl_oracle() {
  RngStream rng(41);
  double worst = 0.0;
  for (int k = 0; k < 50; ++k) {
    const double mu = 4.0 * rng.uniform() - 2.0;
    const double sigma = std::exp(4.0 * rng.uniform() - 3.0);  // ~0.05 .. 2.7
    const double prior = k < 25 ? 1.0 : 0.25 + 2.0 * rng.uniform();
    worst = std::max(worst, std::abs(kl_gaussian(mu, sigma, prior) - testing::kl_by_quadrature(mu, sigma, prior)));
  }
  // kl_total over a whole head against the per-parameter quadrature sum.
  HeadConfig cfg = testing::gradcheck_config();
  BnnParams p = BnnParams::zeros(cfg);
  double quad = 0.0;
  auto fill = [&](std::span<double> mu, std::span<double> rho) {
    for (std::size_t i = 0; i < mu.size(); ++i) {
      mu[i] = rng.normal();
      rho[i] = inv_softplus(0.1 + rng.uniform());
      quad += testing::kl_by_quadrature(mu[i], softplus(rho[i]), 1.0);
    }
  };
  fill(p.w1_mu.values(), p.w1_rho.values());
  fill(p.b1_mu, p.b1_rho);
  fill(p.w2_mu, p.w2_rho);
  fill(std::span<double>(&p.b2_mu, 1), std::span<double>(&p.b2_rho, 1));
  const double total_err = std::abs(kl_total(p, 1.0) - quad);
  return {worst <= 1e-6 && total_err <= 1e-6,
          fmt("50 (mu, sigma, prior) triples: max |closed form - quadrature| %.2e; kl_total over a 21-parameter "
              "head %.2e (limit 1e-6)",
              worst, total_err)};
}

Outcome synthetic_performance() {
  const auto t0 = Clock::now();
  const std::uint64_t seed = 7;
  const EmbeddingDataset ds = testing::make_two_gaussians(separable(seed));
  const SplitIndices splits = split_dataset(ds.n(), seed);
  const Split s = materialize(ds, splits);
  bool pass = true;
  std::string detail;
  for (auto kind : {HeadKind::Dnn, HeadKind::Bnn, HeadKind::Sngp}) {
    const auto t1 = Clock::now();
    TrainResult r = train(kind, ds, splits, paper_head(), desk_train(seed));
    const Evaluation ev = evaluate(r.model, s.x_test, s.y_test, derive_stream(seed, Stream::Predict));
    const double secs = seconds_since(t1);
    pass = pass && ev.report.accuracy >= 0.97 && ev.report.f1 >= 0.97 && r.history.epochs() <= 50;
    detail += fmt("%s acc %.4f f1 %.4f (%zu epochs, %.1f s); ", std::string(to_string(kind)).c_str(),
                  ev.report.accuracy, ev.report.f1, r.history.epochs(), secs);
  }
  const double total = seconds_since(t0);
  pass = pass && total < 120.0;
  detail += fmt("total %.1f s (limits 0.97, 50 epochs, 120 s)", total);
  return {pass, detail};
}

Outcome decile_pattern() {
  bool pass = true;
  std::string detail;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    testing::TwoGaussians g = separable(100 + seed);
    // Label noise lives in a sparse, wide wing of class 1, so the hard
    // rows are also the ones with little training support.
    g.noise_rate = 0.2;
    g.wing_fraction = 0.25;
    g.wing_offset = 1.5;
    g.wing_stddev = 2.5;
    const EmbeddingDataset ds = testing::make_two_gaussians(g);
    const SplitIndices splits = split_dataset(ds.n(), seed);
    const Split s = materialize(ds, splits);
    // At 1e-3 the BNN, starting from unit posterior deviations, sometimes
    // early-stops before it leaves chance level on this set.
    TrainConfig train_config = desk_train(seed);
    train_config.learning_rate = 3e-3;
    detail += fmt("seed %llu:", static_cast<unsigned long long>(seed));
    for (auto kind : {HeadKind::Bnn, HeadKind::Sngp}) {
      const TrainResult r = train(kind, ds, splits, paper_head(), train_config);
      const Evaluation ev = evaluate(r.model, s.x_test, s.y_test, derive_stream(seed, Stream::Predict));
      const double top = ev.report.top_decile_accuracy, bottom = ev.report.bottom_decile_accuracy;
      pass = pass && bottom >= top + 0.05;
      detail += fmt(" %s top %.3f bottom %.3f", std::string(to_string(kind)).c_str(), top, bottom);
    }
    detail += "; ";
  }
  detail += "(need bottom >= top + 0.05)";
  return {pass, detail};
}

Outcome latency_pattern() {
  // Widths of a base-size encoder output feeding the paper's heads.
  HeadConfig cfg = paper_head();
  cfg.input_dim = 1024;
  const std::size_t batch = 64;
  RngStream rng(51);
  const Matrix x = testing::random_matrix(batch, cfg.input_dim, rng);
  Model dnn = init_model(HeadKind::Dnn, cfg, rng);
  Model bnn = init_model(HeadKind::Bnn, cfg, rng);
  Model sngp = init_model(HeadKind::Sngp, cfg, rng);
  sngp_refit_covariance(std::get<SngpParams>(sngp.params), cfg, testing::random_matrix(256, cfg.input_dim, rng),
                        64);
  const std::size_t repeats = 15;
  const RngStream timing_rng(52);
  const LatencyStats ld = timing_benchmark(dnn, x, repeats, timing_rng);
  const LatencyStats lb = timing_benchmark(bnn, x, repeats, timing_rng);
  const LatencyStats ls = timing_benchmark(sngp, x, repeats, timing_rng);
  const double rb = lb.mean_ms / ld.mean_ms, rs = ls.mean_ms / ld.mean_ms;
  return {rb >= 5.0 && rs <= 3.0,
          fmt("batch %zu, d %zu, H %zu, D %zu: dnn %.3f ms, bnn(K=%zu) %.3f ms (%.2fx, need >= 5), "
              "sngp %.3f ms (%.2fx, need <= 3)",
              batch, cfg.input_dim, cfg.hidden, cfg.rff_dim, ld.mean_ms, cfg.k_samples, lb.mean_ms, rb, ls.mean_ms,
              rs)};
}

// Overlapping classes keep training probabilities away from 0 and 1. On a
// separable set p(1-p) vanishes on every training row, the Laplace
// precision never grows past the ridge, and all variances stay near the
// prior regardless of distance.
testing::TwoGaussians overlapping(std::uint64_t seed) {
  testing::TwoGaussians g = separable(seed);
  g.separation = 1.5;
  return g;
}

Outcome distance_awareness() {
  const std::uint64_t seed = 7;
  const EmbeddingDataset ds = testing::make_two_gaussians(overlapping(seed));
  const SplitIndices splits = split_dataset(ds.n(), seed);
  const Model sngp = train(HeadKind::Sngp, ds, splits, paper_head(), desk_train(seed)).model;
  const Model dnn = train(HeadKind::Dnn, ds, splits, paper_head(), desk_train(seed)).model;
  const Matrix x_train = gather_rows(ds.embeddings, splits.train);

  const std::size_t d = x_train.cols(), n = x_train.rows();
  Vector mean(d, 0.0), var(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c) mean[c] += x_train(i, c) / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c) var[c] += std::pow(x_train(i, c) - mean[c], 2) / static_cast<double>(n - 1);
  double train_std = 0.0;
  for (double v : var) train_std += v / static_cast<double>(d);
  train_std = std::sqrt(train_std);

  // Ten far points: the training mean plus 100 training standard
  // deviations along random unit directions.
  RngStream rng(61);
  Matrix far(10, d);
  for (std::size_t i = 0; i < 10; ++i) {
    Vector u = normal_vector(rng, d);
    const double len = norm2(u);
    for (std::size_t c = 0; c < d; ++c) far(i, c) = mean[c] + 100.0 * train_std * u[c] / len;
  }

  RngStream pr(1);
  const auto train_pred = predict_with_uncertainty(sngp, x_train, pr);
  double train_var = 0.0;
  for (const auto& p : train_pred) train_var += p.variance / static_cast<double>(n);
  const auto far_pred = predict_with_uncertainty(sngp, far, pr);
  double min_far = INFINITY;
  for (const auto& p : far_pred) min_far = std::min(min_far, p.variance);

  bool dnn_zero = true;
  for (const auto& p : predict_with_uncertainty(dnn, far, pr)) dnn_zero = dnn_zero && p.variance == 0.0;
  for (const auto& p : predict_with_uncertainty(dnn, x_train, pr)) dnn_zero = dnn_zero && p.variance == 0.0;

  const double ratio = min_far / train_var;
  return {ratio >= 5.0 && dnn_zero,
          fmt("mean train variance %.3e, smallest far-point variance %.3e (%.1fx, need >= 5); dnn variance %s", train_var,
              min_far, ratio, dnn_zero ? "identically 0" : "NONZERO")};
}

Outcome determinism() {
  testing::TempDir dir;
  const std::string data = (dir / "data.uqeb").string();
  write_embedding_file(data, testing::make_two_gaussians(separable(3)));
  const std::string config = (dir / "run.cfg").string();
  testing::write_bytes(config, "learning_rate = 1e-3\nhidden = 128\nrff_dim = 128\nmax_epochs = 8\n");

  bool pass = true;
  std::string detail;
  for (const std::string head : {"dnn", "bnn", "sngp"}) {
    std::string model_bytes[2], report_bytes[2];
    nlohmann::json history[2];
    for (int run = 0; run < 2; ++run) {
      const std::string model = (dir / (head + std::to_string(run) + ".model")).string();
      const std::string report = (dir / (head + std::to_string(run) + ".json")).string();
      std::ostringstream out, err;
      const int t = run_cli({"train", "--head", head, "--embeddings", data, "--config", config, "--seed", "11",
                             "--out", model},
                            out, err);
      const int e = run_cli({"eval", "--model", model, "--embeddings", data, "--seed", "11", "--report", report}, out,
                            err);
      if (t != 0 || e != 0) return {false, head + ": cli failed: " + err.str()};
      model_bytes[run] = testing::read_bytes(model);
      report_bytes[run] = testing::read_bytes(report);
      history[run] = nlohmann::json::parse(testing::read_bytes(model + ".history.json"));
      history[run].erase("seconds");  // wall clock
    }
    const bool same_model = model_bytes[0] == model_bytes[1];
    const bool same_report = report_bytes[0] == report_bytes[1];
    const bool same_history = history[0] == history[1];
    pass = pass && same_model && same_report && same_history;
    detail += fmt("%s model %s, report %s, history %s; ", head.c_str(), same_model ? "identical" : "DIFFERS",
                  same_report ? "identical" : "DIFFERS", same_history ? "identical" : "DIFFERS");
  }
  return {pass, detail};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient-oracle", gradient_oracle},
      {"spectral-bound", spectral_bound},
      {"laplace-oracle", laplace_oracle},
      {"flipout-expectation", flipout_expectation},
      {"kl-oracle", kl_oracle},
      {"synthetic-performance", synthetic_performance},
      {"decile-pattern", decile_pattern},
      {"latency-pattern", latency_pattern},
      {"distance-awareness", distance_awareness},
      {"determinism", determinism},
  };
  const std::vector<std::string> filters(argv + 1, argv + argc);
  int failures = 0;
  for (const auto& [name, run] : criteria) {
    if (!filters.empty() &&
        std::none_of(filters.begin(), filters.end(), [&](const std::string& f) { return name.find(f) != name.npos; }))
      continue;
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
  }
  return failures;
}
