#include "miis/harness/cli.hpp"

#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>

#include "miis/harness/experiment.hpp"
#include "miis/models/discrete_oracle.hpp"
#include "miis/models/mmpp.hpp"

namespace miis::harness {

namespace {

constexpr double kOracleTolerance = 1e-10;

int do_run(const std::string& path, std::optional<std::size_t> threads, std::optional<std::uint64_t> seed,
           std::optional<std::string> output_dir, std::ostream& out, std::ostream& err) {
  ExperimentConfig cfg = load_config(path);
  if (seed) {
    cfg.base_seed = *seed;
    cfg.source["base_seed"] = *seed;
  }
  if (output_dir) {
    cfg.output_dir = *output_dir;
    cfg.source["output_dir"] = *output_dir;
  }
  const std::size_t n = resolve_threads(cfg.threads, threads);
  const ResultBundle bundle = run_experiment(cfg, n);
  write_outputs(bundle, cfg.output_dir);
  out << table_pretty(bundle.table);
  out << "wrote " << cfg.output_dir << "/bundle.json and " << cfg.output_dir << "/mse_table.csv\n";
  const auto failures = bundle.failures();
  for (const auto& f : failures) {
    err << "failed: " << f << "\n";
  }
  if (bundle.table_error) {
    err << "no MSE table: " << *bundle.table_error << "\n";
  }
  return failures.empty() && !bundle.table_error ? 0 : 1;
}

int do_simulate(const std::vector<double>& psi, const std::vector<double>& q, double window, std::uint64_t seed,
                const std::string& path, std::ostream& out) {
  const mmpp::Params p = mmpp::two_state(psi[0], psi[1], q[0], q[1]);
  mmpp::validate(p);
  if (!(window > 0.0)) {
    throw ConfigError("--window", "must be positive");
  }
  RngStream rng(seed);
  const std::vector<double> times = mmpp::simulate(p, window, rng);
  std::ofstream file(path, std::ios::binary);
  if (!file) {
    throw Error("cannot open '" + path + "' for writing");
  }
  mmpp::write_events(file, times, window);
  if (!file) {
    throw Error("cannot write '" + path + "'");
  }
  out << "wrote " << times.size() << " events to " << path << "\n";
  return 0;
}

int do_summarize(const std::string& path, bool pretty, std::ostream& out, std::ostream& err) {
  std::ifstream in(path);
  if (!in) {
    throw Error("cannot open bundle '" + path + "'");
  }
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("bundle is not valid JSON: ") + e.what());
  }
  const ResultBundle bundle = bundle_from_json(j);
  const ExperimentConfig cfg = parse_config(bundle.config);
  const auto rows = compute_table(cfg, bundle.truth, bundle.records);
  if (!pretty) {
    out << table_csv(rows);
    return 0;
  }
  out << table_pretty(rows) << "\n";
  // per-method diagnostics, averaged over successful replications
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-20s  %6s  %6s  %10s  %10s  %14s  %10s\n", "method", "ok", "failed", "mean_iact",
                "acceptance", "density_evals", "wall_s");
  out << buf;
  for (const auto& m : cfg.methods) {
    std::size_t ok = 0;
    std::size_t failed = 0;
    double iact = 0.0;
    double acc = 0.0;
    double evals = 0.0;
    double wall = 0.0;
    for (const auto& r : bundle.records) {
      if (r.method != m.label) {
        continue;
      }
      if (r.failure) {
        ++failed;
        continue;
      }
      ++ok;
      double s = 0.0;
      for (double v : r.iact) {
        s += v;
      }
      iact += s / static_cast<double>(r.iact.size());
      acc += r.acceptance;
      evals += static_cast<double>(r.density_evaluations + r.exact_draws);
      wall += r.wall_seconds;
    }
    const double n = ok > 0 ? static_cast<double>(ok) : 1.0;
    std::snprintf(buf, sizeof buf, "%-20s  %6zu  %6zu  %10.3f  %10.3f  %14.0f  %10.3f\n", m.label.c_str(), ok, failed,
                  iact / n, acc / n, evals / n, wall / n);
    out << buf;
  }
  for (const auto& f : bundle.failures()) {
    err << "failed: " << f << "\n";
  }
  return 0;
}

int do_oracle_check(std::ostream& out) {
  bool all_ok = true;
  for (const auto& c : oracle::standard_cases()) {
    const oracle::OracleKernel k = oracle::discrete_oracle_kernel(c.target, c.proposal, c.n_particles);
    const double dev = oracle::stationarity_deviation(k, c.target);
    const bool ok = dev <= kOracleTolerance;
    all_ok = all_ok && ok;
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3e", dev);
    out << (ok ? "ok    " : "FAIL  ") << c.name << "  max deviation " << buf << "\n";
  }
  return all_ok ? 0 : 1;
}

}  // namespace

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Markov interacting importance samplers: experiments and checks", "miis"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::size_t> threads;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> output_dir;
  auto* run = app.add_subcommand("run", "run a JSON experiment config");
  run->add_option("config", config_path, "config file")->required();
  run->add_option("--threads", threads, "worker threads (MIIS_THREADS still wins)");
  run->add_option("--seed", seed, "override base_seed");
  run->add_option("--output-dir", output_dir, "override output_dir");

  std::vector<double> psi;
  std::vector<double> q;
  double window = 0.0;
  std::uint64_t sim_seed = 0;
  std::string sim_out;
  auto* sim = app.add_subcommand("simulate-mmpp", "simulate a two-state MMPP event-time file");
  sim->add_option("--psi", psi, "intensities psi1,psi2")->delimiter(',')->expected(2)->required();
  sim->add_option("--q", q, "switching rates q12,q21")->delimiter(',')->expected(2)->required();
  sim->add_option("--window", window, "observation window length")->required();
  sim->add_option("--seed", sim_seed, "random seed")->required();
  sim->add_option("--out", sim_out, "output file")->required();

  std::string bundle_path;
  bool pretty = false;
  auto* summarize = app.add_subcommand("summarize", "recompute the MSE table of a bundle.json");
  summarize->add_option("bundle", bundle_path, "bundle file")->required();
  summarize->add_flag("--pretty", pretty, "aligned table plus per-method diagnostics");

  auto* check = app.add_subcommand("oracle-check", "exact stationarity of the discrete-kernel cases");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*run) {
      return do_run(config_path, threads, seed, output_dir, out, err);
    }
    if (*sim) {
      return do_simulate(psi, q, window, sim_seed, sim_out, out);
    }
    if (*summarize) {
      return do_summarize(bundle_path, pretty, out, err);
    }
    if (*check) {
      return do_oracle_check(out);
    }
  } catch (const ConfigurationError& e) {
    err << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace miis::harness
