// Apache License, Version 2.0, refer to LICENSE.txt
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "helpers.hpp"
#include "treehmm/params.hpp"

using namespace treehmm;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CliResult {
  int exit_code = -1;
  std::string output;  // stdout + stderr
};

CliResult run_cli(const std::string& args) {
  std::string cmd = std::string(TREEHMM_CLI_PATH) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  CliResult result;
  char buf[4096];
  while (size_t n = fread(buf, 1, sizeof(buf), pipe)) result.output.append(buf, n);
  int status = pclose(pipe);
  result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return result;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  REQUIRE(in.good());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

fs::path test_dir() {
  fs::path dir = fs::temp_directory_path() / "treehmm_cli_test";
  fs::create_directories(dir);
  return dir;
}

fs::path write_lines(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
  return p;
}

}  // namespace

TEST_CASE("cli train") {
  fs::path dir = test_dir();
  fs::path data = write_lines(dir / "train.trees", "(0 (1) (0))\n(1 (1))\n(0)\n");

  SUBCASE("single-state model is the empirical label multinomial") {
    fs::path out = dir / "train_c1";
    CliResult r = run_cli("train --data " + data.string() +
                          " --kind td --states 1 --alphabet 2 --degree 2 --smoothing 0"
                          " --out-dir " + out.string() + " --seed 3");
    REQUIRE(r.exit_code == 0);
    ModelParams m = load_model((out / "model.json").string());
    const auto& td = std::get<TdParams>(m);
    // 6 nodes, labels: 0,1,0,1,1,0 -> 3/6 each.
    CHECK(td.emission(0, 0) == doctest::Approx(0.5).epsilon(1e-9));
    CHECK(td.emission(0, 1) == doctest::Approx(0.5).epsilon(1e-9));

    json meta = json::parse(slurp(out / "metadata.json"));
    CHECK(meta["seed"] == 3);
    CHECK(meta["config"]["states"] == 1);
    CHECK(meta.contains("final_log_likelihood"));
  }
  SUBCASE("same seed gives byte-identical outputs") {
    fs::path out1 = dir / "det1";
    fs::path out2 = dir / "det2";
    std::string common = "train --data " + data.string() +
                         " --kind bu --states 2 --alphabet 2 --degree 2 --seed 11 --out-dir ";
    REQUIRE(run_cli(common + out1.string()).exit_code == 0);
    REQUIRE(run_cli(common + out2.string()).exit_code == 0);
    CHECK(slurp(out1 / "model.json") == slurp(out2 / "model.json"));
    CHECK(slurp(out1 / "trace.csv") == slurp(out2 / "trace.csv"));
  }
  SUBCASE("missing dataset names the path") {
    CliResult r = run_cli("train --data /nonexistent/x.trees --kind td --states 1"
                          " --alphabet 2 --degree 2 --out-dir " + (dir / "x").string());
    CHECK(r.exit_code == 1);
    CHECK(r.output.find("/nonexistent/x.trees") != std::string::npos);
  }
  SUBCASE("missing required flag is a usage error") {
    CliResult r = run_cli("train --data " + data.string() + " --states 1 --alphabet 2"
                          " --degree 2");
    CHECK(r.exit_code == 1);
    CHECK(r.output.find("--kind") != std::string::npos);
  }
  SUBCASE("config file supplies defaults, flags override") {
    fs::path cfg = write_lines(dir / "cfg.json",
                               R"({"kind":"td","states":1,"alphabet":2,"degree":2,)"
                               R"("smoothing":0.0,"seed":9})");
    fs::path out = dir / "cfg_out";
    CliResult r = run_cli("--config " + cfg.string() + " train --data " + data.string() +
                          " --out-dir " + out.string());
    REQUIRE(r.exit_code == 0);
    json meta = json::parse(slurp(out / "metadata.json"));
    CHECK(meta["seed"] == 9);
    CHECK(meta["config"]["kind"] == "td");
  }
}

TEST_CASE("cli score") {
  fs::path dir = test_dir();
  fs::path data = write_lines(dir / "score.trees", "(0 (1) (0))\n(1 (1))\n");

  SUBCASE("score on the training set matches the metadata likelihood") {
    fs::path out = dir / "score_train";
    REQUIRE(run_cli("train --data " + data.string() +
                    " --kind bu --states 2 --alphabet 2 --degree 2 --seed 5 --out-dir " +
                    out.string()).exit_code == 0);
    CliResult r = run_cli("score --model " + (out / "model.json").string() + " --data " +
                          data.string());
    REQUIRE(r.exit_code == 0);
    json meta = json::parse(slurp(out / "metadata.json"));
    // Footer is the last line of the report.
    std::string footer = r.output.substr(r.output.rfind('{'));
    json f = json::parse(footer);
    CHECK(std::abs(f["total_log_likelihood"].get<double>() -
                   meta["final_log_likelihood"].get<double>()) < 1e-9);
  }
  SUBCASE("empty dataset is a usage error") {
    fs::path out = dir / "score_empty_model";
    REQUIRE(run_cli("train --data " + data.string() +
                    " --kind td --states 1 --alphabet 2 --degree 2 --out-dir " +
                    out.string()).exit_code == 0);
    fs::path empty = write_lines(dir / "empty.trees", "# nothing\n");
    CliResult r = run_cli("score --model " + (out / "model.json").string() + " --data " +
                          empty.string());
    CHECK(r.exit_code == 1);
    CHECK(r.output.find("no trees") != std::string::npos);
  }
  SUBCASE("uniform single-state model prints perplexity M") {
    TdParams p = init_random_td(1, 4, 1);
    for (int m = 0; m < 4; ++m) p.emission(0, m) = 0.25;
    fs::path model = dir / "uniform.json";
    save_model(ModelParams(p), model.string());
    fs::path d4 = write_lines(dir / "d4.trees", "(0 (3) (2))\n(1)\n");
    CliResult r = run_cli("score --model " + model.string() + " --data " + d4.string());
    REQUIRE(r.exit_code == 0);
    json f = json::parse(r.output.substr(r.output.rfind('{')));
    CHECK(f["perplexity"].get<double>() == doctest::Approx(4.0).epsilon(1e-12));
  }
}

TEST_CASE("cli sample") {
  fs::path dir = test_dir();

  SUBCASE("one-hot model determines labels from skeleton depth") {
    TdParams p;
    p.state_count = 2;
    p.alphabet_size = 2;
    p.root_prior = {1.0, 0.0};
    p.transition = Matrix(2, 2, 0.0);
    p.transition(0, 1) = 1.0;
    p.transition(1, 0) = 1.0;
    p.emission = Matrix(2, 2, 0.0);
    p.emission(0, 0) = 1.0;
    p.emission(1, 1) = 1.0;
    fs::path model = dir / "onehot.json";
    save_model(ModelParams(p), model.string());
    fs::path skel = write_lines(dir / "skel.trees", "(0 (0 (0)) (0))\n");
    fs::path out = dir / "onehot_samples.trees";
    CliResult r = run_cli("sample --model " + model.string() + " --skeletons " +
                          skel.string() + " --out " + out.string() + " --seed 1");
    REQUIRE(r.exit_code == 0);
    CHECK(slurp(out) == "(0 (1 (0)) (1))\n");
  }
  SUBCASE("same seed gives identical files") {
    fs::path train_out = dir / "sample_model";
    fs::path data = write_lines(dir / "sample.trees", "(0 (1) (0))\n(1)\n");
    REQUIRE(run_cli("train --data " + data.string() +
                    " --kind bu --states 2 --alphabet 2 --degree 2 --out-dir " +
                    train_out.string()).exit_code == 0);
    std::string base = "sample --model " + (train_out / "model.json").string() +
                       " --gen-trees 20 --gen-max-nodes 8 --seed 42 --out ";
    fs::path o1 = dir / "s1.trees", o2 = dir / "s2.trees";
    REQUIRE(run_cli(base + o1.string()).exit_code == 0);
    REQUIRE(run_cli(base + o2.string()).exit_code == 0);
    CHECK(slurp(o1) == slurp(o2));
    // Output trees parse under the model dimensions.
    Dataset back = load_dataset(o1.string(), 2, 2);
    CHECK(back.trees.size() == 20);
  }
  SUBCASE("skeleton beyond the model degree is a usage error") {
    BuParams p = init_random_bu(2, 2, 1, 1);
    fs::path model = dir / "bu_l1.json";
    save_model(ModelParams(p), model.string());
    fs::path skel = write_lines(dir / "wide.trees", "(0 (0) (0))\n");
    CliResult r = run_cli("sample --model " + model.string() + " --skeletons " +
                          skel.string() + " --seed 1");
    CHECK(r.exit_code == 1);
  }
}

TEST_CASE("cli gibbs") {
  fs::path dir = test_dir();
  fs::path data = write_lines(dir / "gibbs.trees", "(0 (1) (0))\n(1 (0 (1)))\n(0)\n(1 (1))\n");

  SUBCASE("chains use distinct derived streams") {
    fs::path out = dir / "gibbs_two";
    CliResult r = run_cli("gibbs --data " + data.string() +
                          " --alphabet 2 --degree 2 --truncation 4 --sweeps 6 --burn-in 2"
                          " --thin 1 --chains 2 --seed 7 --out-dir " + out.string());
    REQUIRE(r.exit_code == 0);
    CHECK(slurp(out / "chain_0" / "diagnostics.csv") !=
          slurp(out / "chain_1" / "diagnostics.csv"));
    json meta = json::parse(slurp(out / "metadata.json"));
    CHECK(meta["complete"] == true);
    // 4 retained samples per chain.
    std::string samples = slurp(out / "chain_0" / "samples.jsonl");
    CHECK(std::count(samples.begin(), samples.end(), '\n') == 4);
  }
  SUBCASE("rerun reproduces outputs byte for byte") {
    std::string base = "gibbs --data " + data.string() +
                       " --alphabet 2 --degree 2 --truncation 3 --sweeps 5 --burn-in 1"
                       " --thin 2 --seed 3 --out-dir ";
    fs::path o1 = dir / "g1", o2 = dir / "g2";
    REQUIRE(run_cli(base + o1.string()).exit_code == 0);
    REQUIRE(run_cli(base + o2.string()).exit_code == 0);
    CHECK(slurp(o1 / "chain_0" / "samples.jsonl") == slurp(o2 / "chain_0" / "samples.jsonl"));
    CHECK(slurp(o1 / "chain_0" / "diagnostics.csv") ==
          slurp(o2 / "chain_0" / "diagnostics.csv"));
  }
  SUBCASE("sweeps <= burn_in is rejected") {
    CliResult r = run_cli("gibbs --data " + data.string() +
                          " --alphabet 2 --degree 2 --sweeps 5 --burn-in 5 --out-dir " +
                          (dir / "bad").string());
    CHECK(r.exit_code == 1);
  }
}

TEST_CASE("cli validate") {
  fs::path dir = test_dir();
  SUBCASE("valid dataset") {
    fs::path data = write_lines(dir / "ok.trees", "(0 (1) (0))\n# comment\n(1)\n");
    CliResult r = run_cli("validate --data " + data.string() + " --alphabet 2 --degree 2");
    CHECK(r.exit_code == 0);
    CHECK(r.output.find("trees: 2") != std::string::npos);
  }
  SUBCASE("invalid dataset reports the line") {
    fs::path data = write_lines(dir / "bad.trees", "(0)\n(7)\n");
    CliResult r = run_cli("validate --data " + data.string() + " --alphabet 2 --degree 2");
    CHECK(r.exit_code == 1);
    CHECK(r.output.find("line 2") != std::string::npos);
  }
}
