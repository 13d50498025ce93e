// End-to-end checks of the command-line surface: config handling, artifact
// layout, determinism of reruns. Shells out to the built binary.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "pifm/field_model.hpp"
#include "pifm/io.hpp"

using namespace pifm;
namespace fs = std::filesystem;

#ifndef PIFM_CLI_PATH
#define PIFM_CLI_PATH "./pifm"
#endif

namespace {

int run_cli(const std::string& args, const std::string& log) {
  const std::string cmd =
      std::string(PIFM_CLI_PATH) + " " + args + " >" + log + " 2>&1";
  return std::system(cmd.c_str());
}

std::string slurp(const std::string& path) {
  std::ifstream f(path);
  return std::string((std::istreambuf_iterator<char>(f)),
                     std::istreambuf_iterator<char>());
}

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

const char* kTinyConfig =
    "[data]\n"
    "source = gauss(0,0,0.25)\n"
    "target1 = gauss(3,0,0.25)\n"
    "target2 = gauss(0,3,0.25)\n"
    "[train]\n"
    "n = 2\n"
    "batch = 32\n"
    "steps = 0\n"
    "seed = 9\n"
    "[model]\n"
    "width = 8\n"
    "depth = 2\n";

}  // namespace

TEST_CASE("train: steps=0 checkpoint equals initialization, reruns identical") {
  const auto dir = fresh_dir("pifm_cli_train");
  const auto cfg_path = (dir / "t.cfg").string();
  std::ofstream(cfg_path) << kTinyConfig;

  REQUIRE(run_cli("train --config " + cfg_path + " --out " + (dir / "a").string(),
                  (dir / "a.log").string()) == 0);

  auto ck = load_checkpoint((dir / "a/model.ckpt").string());
  RngStream prng(9, "params");
  MlpConfig mcfg;
  mcfg.dim = 2;
  mcfg.n_heads = 2;
  mcfg.width = 8;
  mcfg.depth = 2;
  auto init = init_params(mcfg, prng);
  CHECK(ck.params.w[0].a == init.w[0].a);
  CHECK(ck.params.head_w[1].a == init.head_w[1].a);

  // identical rerun: identical loss CSV checksum
  REQUIRE(run_cli("train --config " + cfg_path + " --set train.steps=25 --out " +
                      (dir / "b").string(),
                  (dir / "b.log").string()) == 0);
  REQUIRE(run_cli("train --config " + cfg_path + " --set train.steps=25 --out " +
                      (dir / "c").string(),
                  (dir / "c.log").string()) == 0);
  CHECK(sha256_file((dir / "b/loss.csv").string()) ==
        sha256_file((dir / "c/loss.csv").string()));

  // manifest inventory matches the files on disk
  auto manifest = read_json((dir / "b/manifest.json").string());
  for (const auto& e : manifest["outputs"]) {
    const auto p = dir / "b" / e["path"].get<std::string>();
    CHECK(fs::exists(p));
    CHECK(e["sha256"] == sha256_file(p.string()));
  }
}

TEST_CASE("train: unknown config keys are listed, exit is nonzero") {
  const auto dir = fresh_dir("pifm_cli_badcfg");
  const auto cfg_path = (dir / "bad.cfg").string();
  std::ofstream(cfg_path) << kTinyConfig << "[train]\nstepz = 7\n";
  const int rc = run_cli("train --config " + cfg_path + " --out " +
                             (dir / "out").string(),
                         (dir / "log.txt").string());
  CHECK(rc != 0);
  const auto log = slurp((dir / "log.txt").string());
  CHECK(log.find("train.stepz") != std::string::npos);
}

TEST_CASE("generate: origin endpoint, all orders, svg layers") {
  const auto dir = fresh_dir("pifm_cli_gen");
  const auto cfg_path = (dir / "t.cfg").string();
  std::ofstream(cfg_path) << kTinyConfig;
  REQUIRE(run_cli("train --config " + cfg_path + " --out " + (dir / "m").string(),
                  (dir / "m.log").string()) == 0);
  const std::string ckpt = (dir / "m/model.ckpt").string();

  // tvec = origin: endpoint equals the (resampled) source exactly
  REQUIRE(run_cli("generate --checkpoint " + ckpt +
                      " --source 'gauss(0,0,0.25)' --tvec 0,0 --points 64 "
                      "--seed 4 --out " + (dir / "g0").string(),
                  (dir / "g0.log").string()) == 0);
  auto endpoint = read_cloud_csv((dir / "g0/endpoint_diagonal.csv").string());
  RngStream rng(4, "generate");
  auto source = sample_shape(ShapeSpec::gaussian_iso({0.0, 0.0}, 0.25), 64, rng);
  CHECK(endpoint.pts == source.pts);

  // --all-orders emits both axis orders and the diagonal
  REQUIRE(run_cli("generate --checkpoint " + ckpt +
                      " --source 'gauss(0,0,0.25)' --tvec 1,1 --points 32 "
                      "--steps 20 --all-orders --out " + (dir / "g1").string(),
                  (dir / "g1.log").string()) == 0);
  CHECK(fs::exists(dir / "g1/endpoint_order:1,2.csv"));
  CHECK(fs::exists(dir / "g1/endpoint_order:2,1.csv"));
  CHECK(fs::exists(dir / "g1/endpoint_diagonal.csv"));

  // one svg group per cloud layer (source + 3 endpoints)
  const auto svg = slurp((dir / "g1/endpoints.svg").string());
  std::size_t groups = 0, pos = 0;
  while ((pos = svg.find("<g id=\"layer-", pos)) != std::string::npos) {
    ++groups;
    pos += 1;
  }
  CHECK(groups == 4);

  // dimension mismatch is an error
  std::ofstream((dir / "bad.csv").string()) << "x1,x2,x3\n0,0,0\n";
  CHECK(run_cli("generate --checkpoint " + ckpt + " --source-csv " +
                    (dir / "bad.csv").string() + " --out " +
                    (dir / "g2").string(),
                (dir / "g2.log").string()) != 0);
}

TEST_CASE("barycenter command") {
  const auto dir = fresh_dir("pifm_cli_bary");
  // two point masses from CSV marginals: midpoint support
  std::ofstream((dir / "m0.csv").string()) << "x1,x2\n0,0\n";
  std::ofstream((dir / "m1.csv").string()) << "x1,x2\n2,0\n";
  REQUIRE(run_cli("barycenter --marginal csv:" + (dir / "m0.csv").string() +
                      " --marginal csv:" + (dir / "m1.csv").string() +
                      " --lambdas 0.5,0.5 --out " + (dir / "out").string(),
                  (dir / "log.txt").string()) == 0);
  auto support = read_cloud_csv((dir / "out/barycenter.csv").string());
  CHECK(support.point(0)[0] == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(support.point(0)[1] == doctest::Approx(0.0).epsilon(1e-9));

  auto timing = read_json((dir / "out/timing.json").string());
  CHECK(timing.contains("iterations"));
  CHECK(timing.contains("final_movement"));
  CHECK(timing["wall_time_ms"].get<double>() > 0.0);

  // weights outside the simplex are rejected with the domain explanation
  const int rc = run_cli("barycenter --marginal csv:" + (dir / "m0.csv").string() +
                             " --marginal csv:" + (dir / "m1.csv").string() +
                             " --lambdas 1.5,-0.5 --out " + (dir / "x").string(),
                         (dir / "neg.log").string());
  CHECK(rc != 0);
  CHECK(slurp((dir / "neg.log").string()).find("Gaussian") != std::string::npos);
}

TEST_CASE("eval command emits the metric schema") {
  const auto dir = fresh_dir("pifm_cli_eval");
  const auto cfg_path = (dir / "t.cfg").string();
  std::ofstream(cfg_path) << kTinyConfig;
  REQUIRE(run_cli("train --config " + cfg_path + " --set train.steps=10 --out " +
                      (dir / "m").string(),
                  (dir / "m.log").string()) == 0);

  REQUIRE(run_cli("eval --checkpoint " + (dir / "m/model.ckpt").string() +
                      " --scenario gaussian-oracle --seed 3"
                      " --set eval.points=48 --set eval.oracle_points=32"
                      " --set eval.steps=15 --out " + (dir / "e").string(),
                  (dir / "e.log").string()) == 0);
  auto metrics = read_json((dir / "e/metrics.json").string());
  for (const char* key :
       {"scenario", "seed", "gaps", "target_w2", "sampling_floor"})
    CHECK(metrics.contains(key));
  CHECK(metrics["scenario"] == "gaussian-oracle");
  CHECK(metrics["seed"] == 3);
  CHECK(metrics["barycenter_grid"].size() == 17);

  // unknown scenario name lists the available ones
  const int rc = run_cli("eval --checkpoint " + (dir / "m/model.ckpt").string() +
                             " --scenario nope --out " + (dir / "x").string(),
                         (dir / "bad.log").string());
  CHECK(rc != 0);
  CHECK(slurp((dir / "bad.log").string()).find("curly") != std::string::npos);
}
