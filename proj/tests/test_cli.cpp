#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "vaetk/binary_io.hpp"
#include "vaetk/checkpoint.hpp"
#include "vaetk/cli.hpp"
#include "vaetk/datasets.hpp"
#include "vaetk/errors.hpp"

using namespace vaetk;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("vaetk_test_cli_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& f) const { return (path / f).string(); }
};

struct Outcome {
  int code;
  std::string out, err;
};

Outcome invoke(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

void write(const std::string& path, const std::string& text) { std::ofstream(path) << text; }

std::string small_config(const std::string& extra = "") {
  return "[data]\npath = data.vaed\n"
         "[model]\nlatent_dim = 2\nhidden = 8\n"
         "[objective]\ndivergence = kl\nlambda = 1\n"
         "[train]\nepochs = 3\nbatch_size = 16\nseed = 5\n" +
         extra + "[output]\ndir = out\n";
}

}  // namespace

TEST_CASE("gen writes deterministic datasets") {
  TempDir dir("gen");
  auto a = invoke({"gen", "spiral", "--n", "200", "--noise", "0.02", "--seed", "7", "--out", dir / "a.vaed"});
  auto b = invoke({"gen", "spiral", "--n", "200", "--noise", "0.02", "--seed", "7", "--out", dir / "b.vaed"});
  REQUIRE(a.code == cli::kOk);
  REQUIRE(b.code == cli::kOk);
  CHECK(io::read_file(dir / "a.vaed") == io::read_file(dir / "b.vaed"));
  CHECK(load_dataset(dir / "a.vaed") == gen_spiral(200, 0.02, 7));

  auto e = invoke({"gen", "ellipse", "--n", "20", "--side", "16", "--seed", "1", "--out", dir / "e.vaed"});
  REQUIRE(e.code == cli::kOk);
  const auto ds = load_dataset(dir / "e.vaed");
  CHECK(ds.sample_shape() == Shape{1, 16, 16});
  REQUIRE(ds.targets.has_value());
  CHECK((*ds.targets)[0] == ds.factors->at(0, 2));
}

TEST_CASE("argument errors exit with 2 and usage text") {
  auto r = invoke({"gen", "spiral"});
  CHECK(r.code == cli::kUsage);
  CHECK(r.err.find("--n") != std::string::npos);
  CHECK(invoke({}).code == cli::kUsage);
  CHECK(invoke({"frobnicate"}).code == cli::kUsage);
  CHECK(invoke({"gen", "torus", "--n", "5"}).code == cli::kUsage);
  CHECK(invoke({"gen", "ellipse", "--n", "5", "--side", "4", "--out", "/dev/null"}).code == cli::kUsage);
  CHECK(invoke({"--help"}).code == cli::kOk);
}

TEST_CASE("run config parsing") {
  const auto cfg = cli::parse_run_config(
      "# comment\n[data]\npath = d.vaed\n[model]\nkind = conv2d\nlatent_dim = 8\nconv_channels = 4, 6\n"
      "[objective]\ndivergence = mmd\nlambda = auto\nrecon = dssim\nmmd_bandwidths = 1,2\n"
      "[train]\nepochs = 7\nlearning_rate = 2e-3\n[output]\ndir = results\n",
      "/base");
  CHECK(cfg.data_path == "/base/d.vaed");
  CHECK(cfg.output_dir == "/base/results");
  CHECK(cfg.arch.kind == ArchKind::Conv2D);
  CHECK(cfg.arch.latent_dim == 8);
  CHECK(cfg.arch.conv_channels == std::vector<std::size_t>{4, 6});
  CHECK(cfg.train.objective.divergence == DivergenceKind::MMD);
  CHECK(cfg.train.objective.lambda_auto);
  CHECK(cfg.train.objective.recon == ReconKind::DSSIM);
  CHECK(cfg.train.objective.mmd_bandwidths == std::vector<double>{1.0, 2.0});
  CHECK(cfg.train.epochs == 7);
  CHECK(cfg.train.learning_rate == 2e-3);

  const auto abs = cli::parse_run_config("[data]\npath = /x/d.vaed\n", "/base");
  CHECK(abs.data_path == "/x/d.vaed");
  CHECK(abs.output_dir == "/base/run");
}

TEST_CASE("run config errors") {
  const char* bad[] = {
      "[data]\npath = d\nbogus = 1\n",          // unknown key
      "[weird]\nx = 1\n[data]\npath = d\n",     // unknown section
      "[data]\npath = d\npath = e\n",           // duplicate
      "path = d\n",                             // outside a section
      "[model]\nlatent_dim = 2\n",              // missing data path
      "[data]\npath = d\n[train]\nepochs = x\n",
      "[data]\npath = d\n[train]\nepochs = 0\n",
      "[data]\npath = d\n[objective]\nlambda = -\n",
      "[data]\npath = d\n[model]\nkind = rnn\n",
      "[data\npath = d\n",
      "[data]\npath\n",
  };
  for (const char* text : bad) {
    CAPTURE(text);
    CHECK_THROWS_AS(cli::parse_run_config(text), ConfigError);
  }
  TempDir dir("config_errors");
  write(dir / "run.cfg", "[data]\npath = d.vaed\n[train]\nmomentum = 0.9\n");
  auto r = invoke({"train", dir / "run.cfg"});
  CHECK(r.code == cli::kUsage);
  CHECK(r.err.find("train.momentum") != std::string::npos);
}

TEST_CASE("train writes metrics, checkpoint and summary, byte-identically on rerun") {
  TempDir dir("train");
  REQUIRE(invoke({"gen", "spiral", "--n", "64", "--seed", "3", "--out", dir / "data.vaed"}).code == 0);
  write(dir / "run.cfg", small_config());
  auto first = invoke({"train", dir / "run.cfg"});
  REQUIRE(first.code == cli::kOk);
  CHECK(first.out.find("[summary]") != std::string::npos);
  CHECK(first.out.find("epochs=3") != std::string::npos);
  const std::string metrics = io::read_file(dir / "out/metrics.csv");
  const std::string ckpt = io::read_file(dir / "out/checkpoint.vaec");
  CHECK(metrics.rfind("epoch,recon,divergence,lambda,total,active_dims\n0,", 0) == 0);
  CHECK(std::count(metrics.begin(), metrics.end(), '\n') == 4);
  CHECK(io::read_file(dir / "out/summary.txt") == first.out);
  CHECK(load_checkpoint(dir / "out/checkpoint.vaec").state.epochs_completed == 3);

  REQUIRE(invoke({"train", dir / "run.cfg"}).code == cli::kOk);
  CHECK(io::read_file(dir / "out/metrics.csv") == metrics);
  CHECK(io::read_file(dir / "out/checkpoint.vaec") == ckpt);

  ::setenv("VAE_SEED", "6", 1);
  auto seeded = invoke({"train", dir / "run.cfg"});
  ::unsetenv("VAE_SEED");
  REQUIRE(seeded.code == cli::kOk);
  CHECK(io::read_file(dir / "out/metrics.csv") != metrics);
}

TEST_CASE("train exit codes") {
  TempDir dir("train_codes");
  write(dir / "run.cfg", small_config());
  CHECK(invoke({"train", dir / "run.cfg"}).code == cli::kIo);  // dataset missing
  CHECK(invoke({"train", dir / "absent.cfg"}).code == cli::kIo);

  write(dir / "data.vaed", "not a dataset");
  CHECK(invoke({"train", dir / "run.cfg"}).code == cli::kIo);

  save_dataset(gen_spiral(32, 0.0, 1), dir / "data.vaed");
  write(dir / "run.cfg", small_config("learning_rate = 1e300\n"));
  auto r = invoke({"train", dir / "run.cfg"});
  CHECK(r.code == cli::kNumerical);
  CHECK(r.err.find("non-finite") != std::string::npos);
}

TEST_CASE("diagnose, analyze and sample on a trained checkpoint") {
  TempDir dir("pipeline");
  REQUIRE(invoke({"gen", "ellipse", "--n", "64", "--side", "8", "--seed", "2", "--out", dir / "data.vaed"}).code == 0);
  write(dir / "run.cfg", small_config());
  REQUIRE(invoke({"train", dir / "run.cfg"}).code == cli::kOk);
  const std::string ckpt = dir / "out/checkpoint.vaec";

  auto d = invoke({"diagnose", "--checkpoint", ckpt, "--data", dir / "data.vaed", "--out", dir / "kl.csv"});
  REQUIRE(d.code == cli::kOk);
  CHECK(d.out.find("collapsed=") != std::string::npos);
  const std::string kl = io::read_file(dir / "kl.csv");
  CHECK(kl.rfind("dim,kl,active\n0,", 0) == 0);
  CHECK(std::count(kl.begin(), kl.end(), '\n') == 3);

  auto a = invoke({"analyze", "--checkpoint", ckpt, "--data", dir / "data.vaed", "--out", dir / "glm.csv",
                   "--scatter", dir / "scatter.csv"});
  REQUIRE(a.code == cli::kOk);
  CHECK(io::read_file(dir / "glm.csv") == a.out);
  CHECK(a.out.find("summary,") != std::string::npos);
  CHECK(io::read_file(dir / "scatter.csv").rfind("dim,latent,target\n", 0) == 0);
  CHECK(invoke({"analyze", "--checkpoint", ckpt, "--data", dir / "data.vaed", "--link", "probit"}).code ==
        cli::kUsage);

  auto s = invoke({"sample", "--checkpoint", ckpt, "--count", "4", "--seed", "1", "--out", dir / "s.vaed"});
  REQUIRE(s.code == cli::kOk);
  const auto samples = load_dataset(dir / "s.vaed");
  CHECK(samples.samples.shape() == Shape{4, 1, 8, 8});

  CHECK(invoke({"diagnose", "--checkpoint", dir / "missing.vaec", "--data", dir / "data.vaed"}).code == cli::kIo);
  CHECK(invoke({"diagnose", "--checkpoint", ckpt}).code == cli::kUsage);
  // a dataset whose shape does not match the model
  save_dataset(gen_spiral(10, 0.0, 1), dir / "spiral.vaed");
  CHECK(invoke({"diagnose", "--checkpoint", ckpt, "--data", dir / "spiral.vaed"}).code == cli::kUsage);
}

TEST_CASE("analyze on a collapsed model finds no latent-target correlation") {
  TempDir dir("collapsed");
  REQUIRE(invoke({"gen", "ellipse", "--n", "1000", "--side", "8", "--seed", "4", "--out", dir / "data.vaed"}).code == 0);
  write(dir / "run.cfg",
        "[data]\npath = data.vaed\n[model]\nlatent_dim = 4\nhidden = 32\n"
        "[objective]\ndivergence = kl\nlambda = 100\n[train]\nepochs = 100\nbatch_size = 32\n");
  auto t = invoke({"train", dir / "run.cfg"});
  REQUIRE(t.code == cli::kOk);
  CHECK(t.out.find("collapsed=true") != std::string::npos);
  auto a = invoke({"analyze", "--checkpoint", dir / "run/checkpoint.vaec", "--data", dir / "data.vaed",
                   "--scatter", dir / "scatter.csv"});
  REQUIRE(a.code == cli::kOk);
  // rows "index,r,coefficient" for each latent dimension, then the summary row
  std::istringstream rows(a.out);
  std::string row;
  std::getline(rows, row);
  int dims = 0;
  while (std::getline(rows, row) && row.rfind("summary", 0) != 0) {
    const auto c1 = row.find(','), c2 = row.find(',', c1 + 1);
    CHECK(std::abs(std::stod(row.substr(c1 + 1, c2 - c1 - 1))) < 0.1);
    ++dims;
  }
  CHECK(dims == 4);
}

TEST_CASE("sampling a zero model gives identical constant outputs") {
  TempDir dir("sample");
  auto model = init_model(default_mlp_spec({3, 3}, 2), 0);
  for (auto& p : model.params) std::fill(p.value.data().begin(), p.value.data().end(), 0.0);
  model.param("dec.out.bias").value[4] = 0.25;
  save_checkpoint(model, {}, dir / "zero.vaec");
  auto r = invoke({"sample", "--checkpoint", dir / "zero.vaec", "--count", "16", "--csv", dir / "s.csv"});
  REQUIRE(r.code == cli::kOk);
  std::istringstream rows(io::read_file(dir / "s.csv"));
  std::string row, first;
  int n = 0;
  while (std::getline(rows, row)) {
    if (n++ == 0) first = row;
    CHECK(row == first);
  }
  CHECK(n == 16);
  CHECK(first == "0,0,0,0,0.25,0,0,0,0");
  CHECK(invoke({"sample", "--checkpoint", dir / "zero.vaec", "--count", "0"}).code == cli::kUsage);
}

TEST_CASE("sphere reports the shell ratio table") {
  auto r = invoke({"sphere", "--n", "100", "--eps-ratio", "0.001"});
  REQUIRE(r.code == cli::kOk);
  CHECK(r.out.find("100,0.001,0.09520") != std::string::npos);
  CHECK(r.out.find(",0.10000000000000001") != std::string::npos);

  TempDir dir("sphere");
  auto mc = invoke({"sphere", "--n", "1,10,100", "--eps-ratio", "0.01,0.001", "--mc-points", "5000",
                    "--mc-dim", "10", "--out", dir / "s.csv"});
  REQUIRE(mc.code == cli::kOk);
  CHECK(io::read_file(dir / "s.csv") == mc.out);
  CHECK(mc.out.find("ks_statistic,dkw_bound,within_dkw") != std::string::npos);
  CHECK(invoke({"sphere", "--n", "100", "--eps-ratio", "2"}).code == cli::kUsage);
}
