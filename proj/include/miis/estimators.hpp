#ifndef MIIS_ESTIMATORS_HPP
#define MIIS_ESTIMATORS_HPP

#include <cstddef>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "miis/core.hpp"
#include "miis/samplers.hpp"

namespace miis {

inline constexpr std::size_t kAllBlocks = std::numeric_limits<std::size_t>::max();

/// (1/M) sum_t f(y(t)).
double mc_estimate(const ChainTrace& trace, const Functional& f);

/// Reuse-all-particles estimator: (1/M) sum_t E_CIS,t(f).
double miis_estimate(const ChainTrace& trace, const Functional& f);

/// Rao-Blackwellized estimator for one block, or the average over blocks
/// when `block == kAllBlocks`.
double rb_estimate(const ChainTrace& trace, const Functional& f, std::size_t block = kAllBlocks);

/// Overlapping batch means estimate of the covariance matrix of the column
/// means of `series` (M x p), using windows of length `batch_len`.
Eigen::MatrixXd obm_covariance(const Eigen::MatrixXd& series, std::size_t batch_len);

/// floor(sqrt(M)), at least 1.
std::size_t default_batch_length(std::size_t M);

/// One control variate: U_t(g) = g(y(t)) - E_t(g), where E_t is the full CIS
/// estimate (block == nullopt) or the block-s Rao-Blackwell estimate.
struct ControlVariate {
  Functional g;
  std::optional<std::size_t> block;
};
using ControlVariateSet = std::vector<ControlVariate>;

/// M x p matrix of U_t(g_j).
Eigen::MatrixXd control_variate_series(const ChainTrace& trace, const ControlVariateSet& cvs);

struct CvResult {
  double estimate = 0.0;
  Eigen::VectorXd kappa;
  double condition_number = 1.0;
  bool ridge_applied = false;
};

/// Control-variate estimator mc(f) - kappa' mean(U). kappa is fitted from
/// OBM covariances of (U, f(y)) unless `forced_kappa` is given.
CvResult cv_estimate(const ChainTrace& trace, const Functional& f, const ControlVariateSet& cvs,
                     std::size_t batch_len,
                     const std::optional<Eigen::VectorXd>& forced_kappa = std::nullopt);

inline constexpr double kIactFloor = 1e-3;

/// Integrated autocorrelation time with Geyer's initial positive sequence
/// truncation. Needs M >= 100 and a non-constant series.
double iact(std::span<const double> series);

struct MethodEstimates {
  std::string method;
  std::vector<double> estimates;  // one per replication
  double cost = 1.0;              // mean time or work per replication
};

struct MseRow {
  std::string method;
  double mse = 0.0;
  double relative_mse = 0.0;
  double time_adjusted_relative_mse = 0.0;
};

/// Per-method MSE against `truth`, relative to the `reference` method, and
/// its cost-adjusted variant relative * cost / cost_reference.
std::vector<MseRow> mse_table(const std::vector<MethodEstimates>& methods, double truth,
                              std::string_view reference);

struct FunctionalEstimates {
  double mc = 0.0;
  std::optional<double> miis;
  std::vector<double> rb_blocks;
  std::optional<double> rb;
  std::optional<double> cv;
  Eigen::VectorXd kappa;
};

struct ChainDiagnostics {
  std::vector<double> iact;  // per coordinate, NaN when undefined
  double acceptance = 0.0;
  std::uint64_t density_evaluations = 0;
  std::uint64_t exact_draws = 0;
};

struct EstimateReport {
  std::map<std::string, FunctionalEstimates> functionals;
  ChainDiagnostics diagnostics;
};

/// Every estimator the trace supports, for each functional. A functional
/// with an entry in `cv_sets` also gets its control-variate estimate.
EstimateReport estimate_report(const ChainTrace& trace, const std::vector<Functional>& functionals,
                               const std::map<std::string, ControlVariateSet>& cv_sets,
                               std::size_t batch_len);

/// f(y(t)) for every recorded state.
std::vector<double> functional_series(const ChainTrace& trace, const Functional& f);

}  // namespace miis

#endif  // MIIS_ESTIMATORS_HPP
