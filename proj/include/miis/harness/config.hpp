#ifndef MIIS_HARNESS_CONFIG_HPP
#define MIIS_HARNESS_CONFIG_HPP

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "miis/core.hpp"
#include "miis/samplers.hpp"

namespace miis::harness {

/// Malformed configuration. `path` names the offending field, e.g.
/// "methods[1].N".
class ConfigError : public ConfigurationError {
 public:
  ConfigError(std::string path, const std::string& what)
      : ConfigurationError(path + ": " + what), path_(std::move(path)) {}
  [[nodiscard]] const std::string& path() const { return path_; }

 private:
  std::string path_;
};

enum class ExperimentKind { bvn, mmpp_sim, mmpp_data, oracle };
const char* to_string(ExperimentKind k);

enum class EstimatorKind { mc, miis, rb, cv };
const char* to_string(EstimatorKind k);

struct CvEntry {
  std::string g;
  std::optional<std::size_t> block;  // nullopt: full CIS estimate
};

struct MethodConfig {
  std::string label;
  SamplerKind sampler = SamplerKind::mwg;
  std::size_t n_particles = 0;      // MIIS samplers
  std::size_t inner_repeats = 1;    // mwg and gibbs-exact
  std::string variant = "simple";   // miis-gibbs: simple | antithetic
  std::optional<double> rw_scale_factor;  // multiplies the pilot covariance
  std::vector<EstimatorKind> estimators;
  bool reference = false;
  /// Control-variate sets keyed by raw functional; empty uses the defaults.
  std::map<std::string, std::vector<CvEntry>> cv_sets;
  bool allow_small_n = false;
};

struct InitConfig {
  std::string mode = "default";  // default | origin | truth | prior-draw | vector
  std::vector<double> vector;
};

struct ExperimentConfig {
  ExperimentKind experiment = ExperimentKind::bvn;
  std::size_t M = 0;
  std::size_t burn_in = 0;
  std::size_t replications = 0;
  std::uint64_t base_seed = 0;
  std::optional<std::size_t> threads;
  std::optional<std::size_t> obm_batch;
  std::string output_dir = "results";
  std::string time_adjust = "cost";  // cost | wall
  InitConfig init;
  std::vector<std::string> functionals;
  std::vector<MethodConfig> methods;

  // bvn
  std::optional<double> rho;
  // mmpp
  std::array<double, 2> psi{};
  std::array<double, 2> q{};
  double window = 0.0;
  std::size_t datasets = 1;
  std::optional<std::uint64_t> data_seed;
  std::optional<std::array<double, 4>> prior_means;
  std::string events_file;
  std::size_t pilot_iterations = 4000;
  std::optional<Eigen::MatrixXd> pilot_covariance;
  bool pilot_full = false;  // pilot.shape "full" instead of "diagonal"
  std::size_t normalize_stride = 1;

  /// The JSON the config was read from, echoed into the bundle.
  nlohmann::json source;
};

/// Parses and validates a config. Unknown keys are errors.
ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::string& path);

/// FNV-1a of the canonical JSON dump, as 16 hex digits.
std::string config_hash(const nlohmann::json& j);

}  // namespace miis::harness

#endif  // MIIS_HARNESS_CONFIG_HPP
