#include <doctest.h>

#include <cstdlib>
#include <json.hpp>
#include <sstream>
#include <sys/wait.h>

#include "support/synthetic.hpp"
#include "support/temp_dir.hpp"
#include "uqh/cli.hpp"
#include "uqh/evaluation.hpp"
#include "uqh/model_io.hpp"

using namespace uqh;
using testing::read_bytes;
using testing::TempDir;
using testing::write_bytes;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

// Writes a small dataset plus a fast config and returns their paths.
struct Workspace {
  TempDir dir;
  std::string data = (dir / "data.uqeb").string();
  std::string config = (dir / "fast.cfg").string();

  Workspace() {
    testing::TwoGaussians gen;
    gen.n = 300;
    gen.dim = 6;
    write_embedding_file(data, testing::make_two_gaussians(gen));
    write_bytes(config, "learning_rate = 0.01\nhidden = 16\nrff_dim = 32\nmax_epochs = 6\nk_samples = 4\n");
  }
  std::string path(const std::string& name) const { return (dir / name).string(); }
};

}  // namespace

TEST_CASE("train, eval, predict and rank end to end") {
  Workspace ws;
  for (const std::string head : {"dnn", "bnn", "sngp"}) {
    CAPTURE(head);
    const std::string model = ws.path(head + ".model");
    const Run t = cli({"train", "--head", head, "--embeddings", ws.data, "--config", ws.config, "--seed", "17",
                       "--out", model});
    REQUIRE_MESSAGE(t.code == kExitOk, t.err);
    CHECK(t.out.find("epoch 1 train_loss") != std::string::npos);
    CHECK(std::filesystem::exists(model + ".history.json"));
    const auto history = nlohmann::json::parse(read_bytes(model + ".history.json"));
    CHECK(history.at("epochs").get<std::size_t>() == history.at("val_loss").size());
    CHECK(load_model(model).seed == 17);

    const std::string r1 = ws.path(head + "1.json"), r2 = ws.path(head + "2.json");
    const Run e1 = cli({"eval", "--model", model, "--embeddings", ws.data, "--seed", "17", "--report", r1});
    REQUIRE_MESSAGE(e1.code == kExitOk, e1.err);
    CHECK(e1.out.find("Top 10%") != std::string::npos);
    const Run e2 = cli({"eval", "--model", model, "--embeddings", ws.data, "--seed", "17", "--report", r2});
    REQUIRE(e2.code == kExitOk);
    CHECK(read_bytes(r1) == read_bytes(r2));
    const EvalReport rep = read_report(r1);
    // Six epochs are not enough for the variational head to shrink its
    // unit-variance initialization; its accuracy is covered elsewhere.
    if (head != "bnn") CHECK(rep.accuracy > 0.9);
    CHECK(rep.k_samples_used == (head == "bnn" ? 4u : 1u));

    const std::string preds = ws.path(head + ".jsonl");
    const Run p = cli({"predict", "--model", model, "--embeddings", ws.data, "--out", preds});
    REQUIRE_MESSAGE(p.code == kExitOk, p.err);
    std::istringstream lines(read_bytes(preds));
    std::vector<double> variances;
    for (std::string line; std::getline(lines, line);) {
      const auto j = nlohmann::json::parse(line);
      CHECK(j.at("index").get<std::size_t>() == variances.size());
      const double prob = j.at("prob_mean").get<double>();
      CHECK(prob >= 0.0);
      CHECK(prob <= 1.0);
      CHECK(j.at("label").get<int>() == (prob >= 0.5 ? 1 : 0));
      variances.push_back(j.at("variance").get<double>());
    }
    CHECK(variances.size() == 300);
    if (head == "dnn") {
      for (double v : variances) CHECK(v == 0.0);
    }

    // Rank rows must agree with the predict output ordering.
    const Run rk = cli({"rank", "--model", model, "--embeddings", ws.data, "--top", "4", "--bottom", "3"});
    REQUIRE_MESSAGE(rk.code == kExitOk, rk.err);
    std::istringstream rank_lines(rk.out);
    std::string line;
    std::getline(rank_lines, line);
    CHECK(line == "high uncertainty (top 4)");
    std::getline(rank_lines, line);  // column header
    std::vector<std::size_t> top;
    for (int k = 0; k < 4; ++k) {
      std::getline(rank_lines, line);
      top.push_back(std::stoul(line));
    }
    std::getline(rank_lines, line);
    CHECK(line == "low uncertainty (bottom 3)");
    std::getline(rank_lines, line);
    std::vector<std::size_t> bottom;
    for (int k = 0; k < 3; ++k) {
      std::getline(rank_lines, line);
      bottom.push_back(std::stoul(line));
    }
    for (std::size_t k = 1; k < top.size(); ++k) CHECK(variances[top[k - 1]] >= variances[top[k]]);
    for (std::size_t k = 1; k < bottom.size(); ++k) CHECK(variances[bottom[k - 1]] <= variances[bottom[k]]);
    const double max_v = *std::max_element(variances.begin(), variances.end());
    const double min_v = *std::min_element(variances.begin(), variances.end());
    CHECK(variances[top[0]] == max_v);
    CHECK(variances[bottom[0]] == min_v);
  }
}

TEST_CASE("eval refuses a seed that differs from training") {
  Workspace ws;
  const std::string model = ws.path("m");
  REQUIRE(cli({"train", "--head", "dnn", "--embeddings", ws.data, "--config", ws.config, "--seed", "3", "--out",
               model})
              .code == kExitOk);
  const Run bad = cli({"eval", "--model", model, "--embeddings", ws.data, "--seed", "4", "--report", ws.path("r")});
  CHECK(bad.code == kExitUsage);
  CHECK(bad.err.find("training seed 3") != std::string::npos);
  CHECK_FALSE(std::filesystem::exists(ws.path("r")));
  const Run forced = cli({"eval", "--model", model, "--embeddings", ws.data, "--seed", "4", "--report",
                          ws.path("r"), "--allow-seed-mismatch"});
  CHECK(forced.code == kExitOk);
  CHECK(forced.err.find("warning") != std::string::npos);
}

TEST_CASE("error exit codes") {
  Workspace ws;
  const Run missing = cli({"eval", "--model", ws.path("absent.model"), "--embeddings", ws.data, "--seed", "0",
                           "--report", ws.path("r")});
  CHECK(missing.code == kExitData);
  CHECK(missing.err.find("absent.model") != std::string::npos);

  CHECK(cli({"train", "--head", "gp", "--embeddings", ws.data, "--out", ws.path("m")}).code == kExitUsage);
  CHECK(cli({"train", "--embeddings", ws.data, "--out", ws.path("m")}).code == kExitUsage);
  CHECK(cli({}).code == kExitUsage);
  CHECK(cli({"frobnicate"}).code == kExitUsage);

  write_bytes(ws.path("bad.cfg"), "nonsense = 1\n");
  const Run cfg = cli({"train", "--head", "dnn", "--embeddings", ws.data, "--config", ws.path("bad.cfg"), "--out",
                       ws.path("m")});
  CHECK(cfg.code == kExitData);
  CHECK(cfg.err.find("bad.cfg:1") != std::string::npos);

  write_bytes(ws.path("garbage.uqeb"), "UQEB\x01");
  CHECK(cli({"train", "--head", "dnn", "--embeddings", ws.path("garbage.uqeb"), "--out", ws.path("m")}).code ==
        kExitData);

  // Width mismatch between model and data.
  REQUIRE(cli({"train", "--head", "dnn", "--embeddings", ws.data, "--config", ws.config, "--out", ws.path("m")})
              .code == kExitOk);
  testing::TwoGaussians wide;
  wide.n = 20;
  wide.dim = 9;
  write_embedding_file(ws.path("wide.uqeb"), testing::make_two_gaussians(wide));
  CHECK(cli({"predict", "--model", ws.path("m"), "--embeddings", ws.path("wide.uqeb"), "--out", ws.path("p")})
            .code == kExitData);
}

TEST_CASE("installed binary maps errors to exit codes") {
  const char* exe = std::getenv("UQH_CLI");
  REQUIRE(exe != nullptr);
  TempDir dir;
  const std::string missing = (dir / "nowhere.model").string();
  const std::string cmd = std::string(exe) + " predict --model " + missing + " --embeddings " + missing +
                          " --out " + (dir / "o").string() + " 2> " + (dir / "err").string();
  const int status = std::system(cmd.c_str());
  REQUIRE(WIFEXITED(status));
  CHECK(WEXITSTATUS(status) == kExitData);
  CHECK(read_bytes(dir / "err").find("nowhere.model") != std::string::npos);
  const int usage = std::system((std::string(exe) + " > /dev/null 2>&1").c_str());
  CHECK(WEXITSTATUS(usage) == kExitUsage);
}
