#ifndef MIIS_MODELS_DISCRETE_ORACLE_HPP
#define MIIS_MODELS_DISCRETE_ORACLE_HPP

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "miis/cis.hpp"
#include "miis/core.hpp"

namespace miis::oracle {

/// Finite target on a product grid. Each block is one scalar coordinate
/// taking values in `atoms[s]`; `probs` lists the grid cells with block 0
/// varying slowest.
struct DiscreteOracleTarget {
  std::vector<std::vector<double>> atoms;
  Eigen::VectorXd probs;

  [[nodiscard]] std::size_t blocks() const { return atoms.size(); }
  [[nodiscard]] std::size_t cells() const;
  /// Throws ConfigurationError unless probs are positive and sum to 1.
  void validate() const;
  /// Per-block atom indices of a cell.
  [[nodiscard]] std::vector<std::size_t> unpack(std::size_t cell) const;
  [[nodiscard]] std::size_t pack(const std::vector<std::size_t>& idx) const;
  /// Cell of a point whose coordinates are atoms; nullopt otherwise.
  [[nodiscard]] std::optional<std::size_t> cell_of(const Point& y) const;
  [[nodiscard]] Point point(std::size_t cell) const;
};

/// Proposal pmf over the atoms of block s, given the current cell (only
/// its off-block coordinates may be used).
using DiscreteProposal = std::function<Eigen::VectorXd(std::size_t block, std::size_t cell)>;

/// Target with one scalar block per coordinate, exact conditional draws,
/// and log m = -inf off the grid.
TargetDensity make_target(const DiscreteOracleTarget& target);

/// Proposal family for block s drawing atoms from `proposal`. The context
/// state, when present, supplies the conditioning cell.
ProposalFamily make_proposal(const DiscreteOracleTarget& target, const DiscreteProposal& proposal,
                             std::size_t block);

/// Exact transition matrix of simple-IS MIIS (one block) or MIIS within
/// Gibbs (several blocks) over states (cell, k_1..k_d). State index is
/// cell * N^d + sum_s k_s N^s.
struct OracleKernel {
  Eigen::MatrixXd P;
  std::size_t n_particles = 0;
  std::size_t blocks = 0;
};

inline constexpr std::size_t kMaxOracleAtoms = 5;
inline constexpr std::size_t kMaxOracleParticles = 3;

OracleKernel discrete_oracle_kernel(const DiscreteOracleTarget& target, const DiscreteProposal& proposal,
                                    std::size_t n_particles);

/// Left eigenvector of P for eigenvalue 1, normalized to sum 1.
Eigen::VectorXd stationary_distribution(const Eigen::MatrixXd& P);

/// max |stationary - N^{-d} pi| over all states.
double stationarity_deviation(const OracleKernel& kernel, const DiscreteOracleTarget& target);

struct OracleCase {
  std::string name;
  DiscreteOracleTarget target;
  DiscreteProposal proposal;
  std::size_t n_particles = 0;
};

/// Built-in stationarity cases: three atoms with N = 2 and 3, and two
/// blocks of three atoms with N = 3.
std::vector<OracleCase> standard_cases();

/// Three-atom target used by the oracle experiment.
DiscreteOracleTarget three_atom_target();
/// Skewed proposal pmf with bounded weights for the three-atom target.
DiscreteProposal three_atom_proposal();

}  // namespace miis::oracle

#endif  // MIIS_MODELS_DISCRETE_ORACLE_HPP
