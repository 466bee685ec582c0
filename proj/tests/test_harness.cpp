#include <catch_amalgamated.hpp>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "miis/harness/cli.hpp"
#include "miis/harness/experiment.hpp"
#include "miis/models/bvn.hpp"

using namespace miis;
using namespace miis::harness;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("miis_test_harness_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

struct CliResult {
  int code;
  std::string out;
  std::string err;
};

CliResult cli(std::vector<std::string> args) {
  args.insert(args.begin(), "miis");
  std::vector<const char*> argv;
  for (const auto& a : args) {
    argv.push_back(a.c_str());
  }
  std::ostringstream out;
  std::ostringstream err;
  const int code = cli_main(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

json oracle_config() {
  return json::parse(R"({
    "experiment": "oracle",
    "M": 100,
    "burn_in": 10,
    "replications": 2,
    "base_seed": 11,
    "functionals": ["x", "x2"],
    "model": {},
    "methods": [
      {"label": "is", "sampler": "miis-simple", "N": 3, "estimators": ["mc", "miis", "cv"], "reference": true}
    ]
  })");
}

json bvn_config() {
  return json::parse(R"({
    "experiment": "bvn",
    "M": 400,
    "burn_in": 50,
    "replications": 4,
    "base_seed": 3,
    "functionals": ["mean", "variance", "covariance", "tail"],
    "model": {"rho": 0.9},
    "methods": [
      {"label": "mwg", "sampler": "mwg", "N": 6, "estimators": ["mc"], "reference": true},
      {"label": "gibbs", "sampler": "miis-gibbs", "N": 6, "estimators": ["mc", "rb", "cv"]},
      {"label": "anti", "sampler": "miis-gibbs", "N": 6, "variant": "antithetic", "estimators": ["cv"]},
      {"label": "exact", "sampler": "gibbs-exact", "estimators": ["mc", "rb", "cv"]},
      {"label": "rwm", "sampler": "rwm", "estimators": ["mc"]}
    ]
  })");
}

fs::path write_json(const fs::path& dir, const json& j) {
  const fs::path p = dir / "config.json";
  std::ofstream(p) << j.dump(2);
  return p;
}

}  // namespace

TEST_CASE("oracle smoke run finishes quickly with one row per functional") {
  const auto t0 = std::chrono::steady_clock::now();
  json j = oracle_config();
  j["methods"][0]["estimators"] = {"miis"};
  const ResultBundle b = run_experiment(parse_config(j), 1);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  CHECK(secs < 5.0);
  CHECK(b.failures().empty());
  REQUIRE(b.table.size() == 2);
  CHECK(b.table[0].functional == "x");
  CHECK(b.table[1].functional == "x2");
  CHECK(b.table[0].relative_mse == 1.0);
  CHECK(b.records.size() == 2);
  // analytic truth of the three-atom target
  CHECK(b.truth.at(0).at("x") == Catch::Approx(0.2 * -1.0 + 0.5 * 0.5 + 0.3 * 2.0));
}

TEST_CASE("every estimator of every method gets a row") {
  const ResultBundle b = run_experiment(parse_config(bvn_config()), 1);
  REQUIRE(b.failures().empty());
  // 4 functionals x (1 + 3 + 1 + 3 + 1) estimator rows
  CHECK(b.table.size() == 36);
  CHECK(b.table[0].method == "mwg:mc");
  CHECK(b.table[1].method == "gibbs:mc");
  for (const auto& r : b.table) {
    CHECK(std::isfinite(r.mse));
    if (r.method == "mwg:mc") {
      CHECK(r.relative_mse == 1.0);
      CHECK(r.time_adjusted_relative_mse == 1.0);
    }
  }
  CHECK(b.truth.at(0).at("covariance") == Catch::Approx(0.9));
}

TEST_CASE("tables are byte-identical across runs and thread counts") {
  const ExperimentConfig cfg = parse_config(bvn_config());
  const std::string a = table_csv(run_experiment(cfg, 1).table);
  const std::string b = table_csv(run_experiment(cfg, 1).table);
  const std::string c = table_csv(run_experiment(cfg, 3).table);
  CHECK(a == b);
  CHECK(a == c);
}

TEST_CASE("replication seeds are distinct and reproducible") {
  const ResultBundle b = run_experiment(parse_config(bvn_config()), 2);
  std::set<std::uint64_t> seeds;
  for (const auto& r : b.records) {
    CHECK(r.seed == replication_seed(3, r.method, r.replication));
    seeds.insert(r.seed);
  }
  CHECK(seeds.size() == b.records.size());
}

TEST_CASE("bundle json round-trips and summarize reproduces the table") {
  const fs::path dir = scratch("roundtrip");
  json j = bvn_config();
  j["output_dir"] = (dir / "out").string();
  const fs::path cfg = write_json(dir, j);
  const CliResult run = cli({"run", cfg.string(), "--threads", "2"});
  REQUIRE(run.code == 0);
  const std::string csv = slurp(dir / "out" / "mse_table.csv");
  CHECK(csv.rfind("functional,method,mse,relative_mse,time_adjusted_relative_mse,mean_iact,acceptance\n", 0) == 0);

  const CliResult sum = cli({"summarize", (dir / "out" / "bundle.json").string()});
  REQUIRE(sum.code == 0);
  CHECK(sum.out == csv);

  const ResultBundle b = bundle_from_json(json::parse(slurp(dir / "out" / "bundle.json")));
  CHECK(b.config_hash == config_hash(b.config));
  CHECK(b.records.size() == 20);
  for (const auto& r : b.records) {
    CHECK(r.wall_seconds >= 0.0);
  }
  CHECK(table_csv(b.table) == csv);

  const CliResult pretty = cli({"summarize", (dir / "out" / "bundle.json").string(), "--pretty"});
  CHECK(pretty.code == 0);
  CHECK(pretty.out.find("density_evals") != std::string::npos);
}

TEST_CASE("--seed and --output-dir override the config") {
  const fs::path dir = scratch("override");
  json j = oracle_config();
  j["output_dir"] = (dir / "a").string();
  const fs::path cfg = write_json(dir, j);
  REQUIRE(cli({"run", cfg.string()}).code == 0);
  REQUIRE(cli({"run", cfg.string(), "--output-dir", (dir / "b").string()}).code == 0);
  REQUIRE(cli({"run", cfg.string(), "--seed", "99", "--output-dir", (dir / "c").string()}).code == 0);
  CHECK(slurp(dir / "a" / "mse_table.csv") == slurp(dir / "b" / "mse_table.csv"));
  CHECK(slurp(dir / "a" / "mse_table.csv") != slurp(dir / "c" / "mse_table.csv"));
  const json echo = json::parse(slurp(dir / "c" / "bundle.json"));
  CHECK(echo["config"]["base_seed"] == 99);
}

TEST_CASE("missing rho exits 2 naming the field") {
  const fs::path dir = scratch("norho");
  json j = bvn_config();
  j["model"].erase("rho");
  const CliResult r = cli({"run", write_json(dir, j).string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("model.rho") != std::string::npos);
}

TEST_CASE("config errors carry a field path") {
  auto path_of = [](const json& j) {
    try {
      parse_config(j);
    } catch (const ConfigError& e) {
      return e.path();
    }
    return std::string("<accepted>");
  };
  json j = bvn_config();
  j["methods"][1]["particles"] = 3;
  CHECK(path_of(j) == "methods[1].particles");

  j = bvn_config();
  j["extra"] = true;
  CHECK(path_of(j) == "extra");

  j = bvn_config();
  j["methods"][0]["estimators"] = {"mc", "cv"};
  CHECK(path_of(j) == "methods[0].estimators[1]");

  j = bvn_config();
  j["methods"][1]["reference"] = true;
  CHECK(path_of(j) == "methods");

  j = bvn_config();
  j["methods"][2]["label"] = "mwg";
  CHECK(path_of(j) == "methods[2].label");

  j = bvn_config();
  j["model"]["rho"] = 1.0;
  CHECK(path_of(j) == "model.rho");

  j = bvn_config();
  j["M"] = -5;
  CHECK(path_of(j) == "M");

  j = bvn_config();
  j["methods"][1]["sampler"] = "gibbs-ish";
  CHECK(path_of(j) == "methods[1].sampler");

  j = oracle_config();
  j["pilot"] = {{"iterations", 500}};
  CHECK(path_of(j) == "pilot");

  j = bvn_config();
  CHECK(path_of(j) == "<accepted>");
}

TEST_CASE("experiment-level config problems are config errors") {
  json j = bvn_config();
  j["functionals"] = {"mean", "kurtosis"};
  CHECK_THROWS_AS(run_experiment(parse_config(j), 1), ConfigError);

  j = bvn_config();
  j["methods"][1]["cv_sets"] = {{"x1", {{{"g", "x1"}}}}};  // Gibbs entry without a block
  try {
    run_experiment(parse_config(j), 1);
    FAIL("accepted a Gibbs control variate without a block");
  } catch (const ConfigError& e) {
    CHECK(e.path() == "methods[1].cv_sets.x1[0].block");
  }

  j = oracle_config();
  j["methods"][0]["sampler"] = "rwm";
  j["methods"][0]["estimators"] = {"mc"};
  CHECK_THROWS_AS(run_experiment(parse_config(j), 1), ConfigError);

  j = oracle_config();
  j["methods"][0]["N"] = 2;
  CHECK_THROWS_AS(run_experiment(parse_config(j), 1), ConfigError);
  j["methods"][0]["allow_small_n"] = true;
  CHECK(run_experiment(parse_config(j), 1).failures().empty());
}

TEST_CASE("custom control-variate sets replace the defaults") {
  json j = bvn_config();
  j["functionals"] = {"mean"};
  j["methods"][1]["cv_sets"] = {{"x1", {{{"g", "x1"}, {"block", 0}}}}};
  const ResultBundle b = run_experiment(parse_config(j), 1);
  REQUIRE(b.failures().empty());
  for (const auto& r : b.records) {
    if (r.method == "gibbs") {
      CHECK(r.kappa.at("x1").size() == 1);
    }
    if (r.method == "exact") {
      CHECK(r.kappa.at("x1").size() == 2);
    }
  }
}

TEST_CASE("MMPP simulation experiment pools the truth over all estimates") {
  const json j = json::parse(R"({
    "experiment": "mmpp-sim",
    "M": 300,
    "burn_in": 20,
    "replications": 2,
    "base_seed": 5,
    "functionals": ["psi1", "psi2", "q12", "q21"],
    "model": {"psi": [10, 17], "q": [1, 1], "window": 10, "datasets": 2, "data_seed": 7},
    "pilot": {"iterations": 300, "shape": "full"},
    "methods": [
      {"label": "rwm", "sampler": "rwm", "estimators": ["mc"], "reference": true},
      {"label": "rw", "sampler": "miis-random-walk", "N": 4, "estimators": ["mc", "miis", "cv"]}
    ]
  })");
  json bad = j;
  bad["pilot"]["shape"] = "banded";
  CHECK_THROWS_WITH(parse_config(bad), Catch::Matchers::ContainsSubstring("pilot.shape"));
  const ExperimentConfig cfg = parse_config(j);
  CHECK(cfg.pilot_full);
  const ResultBundle b = run_experiment(cfg, 2);
  REQUIRE(b.failures().empty());
  REQUIRE(b.truth.size() == 2);
  CHECK(b.table.size() == 16);
  CHECK(b.records.size() == 8);
  double pooled = 0.0;
  for (const auto& r : b.records) {
    if (r.dataset == 0) {
      for (const auto& [est, v] : r.estimates.at("psi1")) {
        pooled += v;
      }
      CHECK(r.iact.size() == 4);
    }
  }
  CHECK(b.truth[0].at("psi1") == Catch::Approx(pooled / 8.0).epsilon(1e-12));
  CHECK(b.truth[0].at("psi1") != b.truth[1].at("psi1"));
  CHECK(table_csv(b.table) == table_csv(run_experiment(cfg, 1).table));
}

TEST_CASE("MMPP data experiment reads an event file") {
  const fs::path dir = scratch("mmppdata");
  const fs::path events = dir / "events.txt";
  REQUIRE(cli({"simulate-mmpp", "--psi", "10,17", "--q", "1,1", "--window", "10", "--seed", "4", "--out",
               events.string()})
              .code == 0);
  json j = json::parse(R"({
    "experiment": "mmpp-data",
    "M": 200,
    "replications": 2,
    "functionals": ["psi1", "q21"],
    "model": {"prior_means": [10, 17, 1, 1]},
    "pilot": {"covariance": [[0.05,0,0,0],[0,0.1,0,0],[0,0,0.5,0],[0,0,0,0.5]]},
    "init": "prior-draw",
    "methods": [
      {"label": "rwm", "sampler": "rwm", "estimators": ["mc"], "reference": true},
      {"label": "rw", "sampler": "miis-random-walk", "N": 3, "estimators": ["miis"]}
    ]
  })");
  j["model"]["events_file"] = events.string();
  const ResultBundle b = run_experiment(parse_config(j), 1);
  CHECK(b.failures().empty());
  CHECK(b.table.size() == 4);

  j["model"].erase("prior_means");
  try {
    parse_config(j);
    FAIL("accepted mmpp-data without prior means");
  } catch (const ConfigError& e) {
    CHECK(e.path() == "model.prior_means");
  }
}

TEST_CASE("simulate-mmpp is deterministic") {
  const fs::path dir = scratch("simulate");
  const std::vector<std::string> args{"simulate-mmpp", "--psi", "10,17", "--q", "1,1", "--window", "100", "--seed", "7",
                                      "--out"};
  auto with_out = [&args](const fs::path& p) {
    auto a = args;
    a.push_back(p.string());
    return a;
  };
  REQUIRE(cli(with_out(dir / "a.txt")).code == 0);
  REQUIRE(cli(with_out(dir / "b.txt")).code == 0);
  const std::string a = slurp(dir / "a.txt");
  CHECK(!a.empty());
  CHECK(a == slurp(dir / "b.txt"));
  CHECK(cli({"simulate-mmpp", "--psi", "17,10", "--q", "1,1", "--window", "100", "--seed", "7", "--out",
             (dir / "c.txt").string()})
            .code == 2);
}

TEST_CASE("oracle-check passes on a pristine build") {
  const CliResult r = cli({"oracle-check"});
  CHECK(r.code == 0);
  CHECK(r.out.find("FAIL") == std::string::npos);
}

TEST_CASE("command-line misuse exits 2") {
  CHECK(cli({}).code == 2);
  CHECK(cli({"frobnicate"}).code == 2);
  CHECK(cli({"run"}).code == 2);
  CHECK(cli({"run", "/nonexistent/config.json"}).code == 2);
  CHECK(cli({"summarize", "/nonexistent/bundle.json"}).code == 1);
}

TEST_CASE("thread count resolution order") {
  unsetenv("MIIS_THREADS");
  CHECK(resolve_threads(3, std::nullopt) == 3);
  CHECK(resolve_threads(3, 5) == 5);
  CHECK(resolve_threads(std::nullopt, std::nullopt) >= 1);
  setenv("MIIS_THREADS", "2", 1);
  CHECK(resolve_threads(3, 5) == 2);
  setenv("MIIS_THREADS", "zero", 1);
  CHECK_THROWS_AS(resolve_threads(3, 5), ConfigError);
  unsetenv("MIIS_THREADS");
}

TEST_CASE("a chain abort is recorded and the run exits 1") {
  // the start is so far out that its log-density is not finite
  const fs::path dir = scratch("abort");
  json k = bvn_config();
  k["functionals"] = {"mean"};
  k["init"] = {1e200, 1e200};
  k["methods"] = json::parse(R"([{"label": "rwm", "sampler": "rwm", "estimators": ["mc"], "reference": true}])");
  k["output_dir"] = (dir / "out").string();
  const CliResult r = cli({"run", write_json(dir, k).string()});
  CHECK(r.code == 1);
  CHECK(r.err.find("failed: rwm replication 0") != std::string::npos);
  const ResultBundle b = bundle_from_json(json::parse(slurp(dir / "out" / "bundle.json")));
  CHECK(b.failures().size() == 4);
  CHECK(b.table.empty());
  CHECK(b.table_error.has_value());
}
