#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include <json.hpp>

#include "rawicl/cli.hpp"

namespace fs = std::filesystem;

namespace {

struct Run {
  int code = 0;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "rawicl");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  Run r;
  r.code = rawicl::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string data(const std::string& name) { return std::string(RAWICL_TEST_DATA) + "/" + name; }

fs::path scratch_dir() {
  const fs::path dir = fs::temp_directory_path() / ("rawicl_cli_test_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  return dir;
}

std::string write(const fs::path& path, const std::string& text) {
  std::ofstream(path) << text;
  return path.string();
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST_CASE("help and usage errors") {
  CHECK(run({"--help"}).code == rawicl::kExitOk);
  CHECK(run({"verify", "--help"}).code == rawicl::kExitOk);
  CHECK(run({"frobnicate"}).code == rawicl::kExitConfig);
  CHECK(run({"verify", "--trials", "many"}).code == rawicl::kExitConfig);
}

TEST_CASE("compile") {
  const fs::path dir = scratch_dir();
  SUBCASE("malformed JSON is a config error") {
    const Run r = run({"compile", data("malformed.json"), "--out", (dir / "x.json").string()});
    CHECK(r.code == rawicl::kExitConfig);
    CHECK(r.err.find("config error") != std::string::npos);
  }
  SUBCASE("overlapping fuse is a compile error naming both ops") {
    const Run r = run({"compile", data("overlapping_fuse.json"), "--out", (dir / "x.json").string()});
    CHECK(r.code == rawicl::kExitCompile);
    CHECK(r.err.find("op 0 <-> op 1") != std::string::npos);
  }
  SUBCASE("missing --out") { CHECK(run({"compile", data("sgd_step_d2.json")}).code == rawicl::kExitConfig); }
  SUBCASE("one-step program, then verify the written parameters") {
    const std::string params = (dir / "sgd2.json").string();
    const Run r = run({"compile", data("sgd_step_d2.json"), "--out", params});
    REQUIRE(r.code == rawicl::kExitOk);
    CHECK(r.out.find("layers: 9") != std::string::npos);
    CHECK(r.out.find("hidden: 26") != std::string::npos);
    CHECK(nlohmann::json::parse(slurp(params)).contains("settings"));

    const Run v = run({"verify", "--program", "sgd_step", "--d", "2", "--trials", "100", "--params", params});
    CHECK(v.code == rawicl::kExitOk);
    CHECK(v.out.find("result=PASS") != std::string::npos);

    // break the write into the output row of the last layer
    nlohmann::json doc = nlohmann::json::parse(slurp(params));
    auto& row = doc["layers"].back()["mlp_out"][13];
    for (auto& v2 : row) v2 = v2.get<double>() * 1.5 + 0.01;
    const std::string broken = write(dir / "broken.json", doc.dump());
    const Run b = run({"verify", "--program", "sgd_step", "--d", "2", "--trials", "100", "--params", broken});
    CHECK(b.code == rawicl::kExitRuntime);
    CHECK(b.out.find("result=FAIL") != std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("verify flags override the config file") {
  const fs::path dir = scratch_dir();
  const std::string cfg = write(dir / "v.json", R"({"program":"sgd_step","d":3,"trials":50})");
  const Run a = run({"verify", "--config", cfg});
  CHECK(a.code == rawicl::kExitOk);
  CHECK(a.out.find("d=3 ") != std::string::npos);
  const Run b = run({"verify", "--config", cfg, "--d", "2", "--trials", "20"});
  CHECK(b.code == rawicl::kExitOk);
  CHECK(b.out.find("d=2 ") != std::string::npos);
  CHECK(b.out.find("trials=20 ") != std::string::npos);
  CHECK(b.err.find("settings:") != std::string::npos);
  CHECK(run({"verify", "--program", "quicksort"}).code == rawicl::kExitConfig);
  fs::remove_all(dir);
}

TEST_CASE("metrics") {
  const fs::path dir = scratch_dir();
  const std::string cfg = write(dir / "m.json", R"({"d":3,"tasks":64,"queries":4,
    "predictors":{"r":{"name":"ridge","lambda":0.5}},
    "sweeps":[{"metric":"spd","a1":"ols","a2":"ols","n_context":[1,2,5]},
              {"metric":"ilwd","a1":"r","a2":"r","n_context":[4]},
              {"metric":"spd","a1":"ols","a2":"r","n_context":[2]}]})");

  SUBCASE("same seed gives byte-identical output regardless of workers") {
    const std::string a = (dir / "a.csv").string(), b = (dir / "b.csv").string();
    REQUIRE(run({"metrics", "--config", cfg, "--seed", "5", "--workers", "1", "--out", a}).code == rawicl::kExitOk);
    REQUIRE(run({"metrics", "--config", cfg, "--seed", "5", "--workers", "3", "--out", b}).code == rawicl::kExitOk);
    CHECK(slurp(a) == slurp(b));
    CHECK(slurp(a).rfind("metric,a1,a2,context,value,stderr,raw,samples,normalized,seed\n", 0) == 0);
    const std::string c = (dir / "c.csv").string();
    REQUIRE(run({"metrics", "--config", cfg, "--seed", "6", "--out", c}).code == rawicl::kExitOk);
    CHECK(slurp(a) != slurp(c));
  }
  SUBCASE("self comparisons are zero") {
    const Run r = run({"metrics", "--config", cfg});
    REQUIRE(r.code == rawicl::kExitOk);
    std::istringstream lines(r.out);
    std::string line;
    std::getline(lines, line);
    int self = 0;
    while (std::getline(lines, line)) {
      std::vector<std::string> f;
      std::stringstream ss(line);
      for (std::string x; std::getline(ss, x, ',');) f.push_back(x);
      REQUIRE(f.size() == 10);
      if (f[1] == f[2]) {
        ++self;
        CHECK(std::stod(f[4]) == 0.0);
      } else {
        CHECK(std::stod(f[4]) > 0.0);
      }
    }
    CHECK(self == 4);
  }
  SUBCASE("unknown predictor") {
    const std::string bad = write(dir / "bad.json", R"({"sweeps":[{"metric":"spd","a1":"nope","a2":"ols"}]})");
    const Run r = run({"metrics", "--config", bad});
    CHECK(r.code == rawicl::kExitConfig);
    CHECK(r.err.find("nope") != std::string::npos);
  }
  SUBCASE("unknown metric") {
    const std::string bad = write(dir / "bad2.json", R"({"sweeps":[{"metric":"kl","a1":"ols","a2":"ols"}]})");
    CHECK(run({"metrics", "--config", bad}).code == rawicl::kExitConfig);
  }
  fs::remove_all(dir);
}

TEST_CASE("probe") {
  const fs::path dir = scratch_dir();
  const std::string cfg = write(dir / "p.json", R"({"layers":[0,9],"targets":["w_sgd"],"train":300,"validation":100,
    "steps":200,"eval_every":50,"mlp_width":8})");
  const std::string out = (dir / "p.csv").string();
  const Run r = run({"probe", "--config", cfg, "--out", out});
  REQUIRE(r.code == rawicl::kExitOk);
  const std::string csv = slurp(out);
  CHECK(csv.rfind("model,layer,target,n,head,val_mse,val_stderr,target_variance,normalized_error,attention\n", 0) == 0);
  CHECK(csv.find("\nmain,0,w_sgd,") != std::string::npos);
  CHECK(csv.find("\nmain,9,w_sgd,") != std::string::npos);
  CHECK(csv.find("\ncontrol,") != std::string::npos);

  const std::string bad = write(dir / "pb.json", R"({"layers":[99]})");
  CHECK(run({"probe", "--config", bad}).code == rawicl::kExitConfig);
  fs::remove_all(dir);
}
