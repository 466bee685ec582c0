#ifndef MIIS_SAMPLERS_HPP
#define MIIS_SAMPLERS_HPP

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "miis/cis.hpp"
#include "miis/core.hpp"

namespace miis {

enum class SamplerKind { miis_simple, miis_antithetic, miis_random_walk, miis_gibbs, gibbs_exact, mwg, rwm };

const char* to_string(SamplerKind kind);
SamplerKind sampler_kind_from_string(std::string_view name);
bool is_miis(SamplerKind kind);

/// Analytic E[f | y(-s)] for block s; returns nullopt when unknown for f.
using ConditionalExpectation =
    std::function<std::optional<double>(std::size_t, const Functional&, const Point&)>;

struct SamplerSpec {
  SamplerKind kind = SamplerKind::miis_simple;
  CisConfig cis;                                // miis-simple / antithetic / random-walk
  std::vector<CisConfig> block_cis;             // miis-gibbs, one per block
  std::vector<ProposalFamily> block_proposals;  // mwg, conditional proposals
  std::size_t inner_repeats = 1;                // mwg and gibbs-exact
  Eigen::MatrixXd rw_scale;                     // rwm proposal covariance
  ConditionalExpectation conditional_expectation;  // gibbs-exact Rao-Blackwell records
  /// Initial retained indices; defaults to particle 0 in every block.
  std::vector<std::size_t> initial_retained;

  void validate(const TargetDensity& target) const;
};

/// Per-iteration record of a chain after burn-in.
struct ChainTrace {
  SamplerKind kind = SamplerKind::miis_simple;
  std::vector<std::string> functional_names;
  Eigen::MatrixXd states;                         // M x dim
  std::vector<std::vector<std::size_t>> retained;  // selected index per block
  Eigen::MatrixXd cis_estimates;                  // M x F; empty unless full-target MIIS
  std::vector<Eigen::MatrixXd> rb_estimates;      // per block, M x F; Gibbs samplers
  std::vector<std::uint8_t> moved;                // y(t) != y(t-1) bitwise
  // Counters cover burn-in as well; they measure cost, not output.
  std::uint64_t density_evaluations = 0;
  std::uint64_t exact_draws = 0;
  std::uint64_t mh_proposals = 0;
  std::uint64_t mh_accepted = 0;

  [[nodiscard]] std::size_t iterations() const { return static_cast<std::size_t>(states.rows()); }
  [[nodiscard]] bool has_cis() const { return cis_estimates.size() > 0; }
  [[nodiscard]] bool has_rb() const { return !rb_estimates.empty(); }
  [[nodiscard]] std::optional<std::size_t> functional_index(std::string_view name) const;
  /// Metropolis acceptance for mwg; fraction of moves otherwise.
  [[nodiscard]] double acceptance_rate() const;
};

/// A chain could not continue; `iteration` counts from 0 including burn-in.
class ChainAbort : public Error {
 public:
  ChainAbort(std::size_t iteration, const std::string& what)
      : Error("chain aborted at iteration " + std::to_string(iteration) + ": " + what),
        iteration_(iteration) {}
  [[nodiscard]] std::size_t iteration() const { return iteration_; }

 private:
  std::size_t iteration_;
};

/// Full-target MIIS (simple, antithetic or random-walk). With the identity
/// kernel the redraw of Y from T is a no-op: y(t) is the selected particle.
ChainTrace miis_run(const SamplerSpec& spec, const TargetDensity& target,
                    const std::vector<Functional>& functionals, const Point& y0, std::size_t M,
                    std::size_t burn_in, const RngStream& rng);

/// MIIS within Gibbs: blocks are swept in order, block s conditioning on the
/// already updated blocks 0..s-1 and the stale blocks s+1..d-1.
ChainTrace miis_gibbs_run(const SamplerSpec& spec, const TargetDensity& target,
                          const std::vector<Functional>& functionals, const Point& y0,
                          std::size_t M, std::size_t burn_in, const RngStream& rng);

/// Exact Gibbs, Metropolis-within-Gibbs and random-walk Metropolis.
ChainTrace baseline_run(const SamplerSpec& spec, const TargetDensity& target,
                        const std::vector<Functional>& functionals, const Point& y0,
                        std::size_t M, std::size_t burn_in, const RngStream& rng);

/// Dispatches on spec.kind.
ChainTrace run_chain(const SamplerSpec& spec, const TargetDensity& target,
                     const std::vector<Functional>& functionals, const Point& y0, std::size_t M,
                     std::size_t burn_in, const RngStream& rng);

}  // namespace miis

#endif  // MIIS_SAMPLERS_HPP
