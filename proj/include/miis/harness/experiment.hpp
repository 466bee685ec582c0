#ifndef MIIS_HARNESS_EXPERIMENT_HPP
#define MIIS_HARNESS_EXPERIMENT_HPP

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "miis/harness/config.hpp"

namespace miis::harness {

/// One chain of one method on one dataset.
struct ReplicationRecord {
  std::string method;
  std::size_t dataset = 0;
  std::size_t replication = 0;
  std::uint64_t seed = 0;
  std::optional<std::string> failure;
  /// estimand -> estimator -> value
  std::map<std::string, std::map<std::string, double>> estimates;
  /// raw functional -> fitted control-variate coefficients
  std::map<std::string, std::vector<double>> kappa;
  std::vector<double> iact;  // per coordinate, NaN when undefined
  double acceptance = 0.0;
  std::uint64_t density_evaluations = 0;
  std::uint64_t exact_draws = 0;
  double wall_seconds = 0.0;
};

struct TableRow {
  std::string functional;
  std::string method;  // "<label>:<estimator>"
  double mse = 0.0;
  double relative_mse = 0.0;
  double time_adjusted_relative_mse = 0.0;
  double mean_iact = 0.0;
  double acceptance = 0.0;
};

struct ResultBundle {
  nlohmann::json config;
  std::string config_hash;
  std::size_t threads = 1;
  /// Per dataset: estimand -> true (analytic) or pooled value.
  std::vector<std::map<std::string, double>> truth;
  std::vector<ReplicationRecord> records;
  std::vector<TableRow> table;
  /// Why the table could not be built, when it is empty.
  std::optional<std::string> table_error;

  /// "<label> replication <r>" (plus dataset when there are several) for
  /// every failed chain.
  [[nodiscard]] std::vector<std::string> failures() const;
};

/// Runs every (dataset, method, replication) chain on `threads` workers and
/// aggregates the MSE table. Chain failures are recorded, not thrown;
/// ConfigError signals a config the experiment cannot honour.
ResultBundle run_experiment(const ExperimentConfig& cfg, std::size_t threads);

/// MSE table from stored per-replication estimates. Rows follow the config
/// order of functionals, then methods, then estimators. With several
/// datasets each column is averaged over the per-dataset tables.
std::vector<TableRow> compute_table(const ExperimentConfig& cfg,
                                    const std::vector<std::map<std::string, double>>& truth,
                                    const std::vector<ReplicationRecord>& records);

/// Pooled mean of every estimate of each estimand, per dataset.
std::vector<std::map<std::string, double>> pooled_truth(const ExperimentConfig& cfg,
                                                        const std::vector<ReplicationRecord>& records);

nlohmann::json to_json(const ResultBundle& bundle);
ResultBundle bundle_from_json(const nlohmann::json& j);

/// CSV with header functional,method,mse,relative_mse,
/// time_adjusted_relative_mse,mean_iact,acceptance; numbers as %.17g.
std::string table_csv(const std::vector<TableRow>& rows);
/// Aligned text for people.
std::string table_pretty(const std::vector<TableRow>& rows);

/// Writes bundle.json and mse_table.csv into `dir`, creating it.
void write_outputs(const ResultBundle& bundle, const std::string& dir);

/// MIIS_THREADS, then the command line, then the config, then the number
/// of hardware threads.
std::size_t resolve_threads(std::optional<std::size_t> from_config, std::optional<std::size_t> from_cli);

}  // namespace miis::harness

#endif  // MIIS_HARNESS_EXPERIMENT_HPP
