#ifndef MIIS_CIS_HPP
#define MIIS_CIS_HPP

#include <cstddef>
#include <functional>
#include <optional>

#include "miis/core.hpp"

namespace miis {

enum class CisVariant { simple, antithetic, random_walk };

const char* to_string(CisVariant v);

/// Configuration of one conditional importance sampler.
///
/// The Markov kernel that moves the retained particle is always the identity:
/// particle k is pinned to the previous state y.
struct CisConfig {
  std::size_t n_particles = 0;
  CisVariant variant = CisVariant::simple;
  ProposalFamily proposal;
  AuxiliaryKernel aux;
  /// Lifts the minimum-N requirements (N >= 3 simple and random-walk,
  /// N/2 >= 3 antithetic). Meant for exact-oracle tests with tiny N.
  bool allow_small_n = false;
  /// When set, every raw weight must satisfy log w_i <= bound + log(1 + 1e-9).
  std::optional<double> log_weight_bound;

  /// Throws ConfigurationError on an inconsistent configuration.
  void validate() const;
};

/// log w_i = log m(x) - log q_i(x | xi) + log eta(xi | x).
double cis_log_weight(const CisConfig& cfg, std::size_t i, const Point& x, double log_m_x,
                      const std::optional<Point>& xi, const ProposalContext& ctx);

/// Antithetic partner of `x`: coordinatewise Q^{-1}(1 - Q(x_j)), or the
/// proposal's mirror when it has one.
Point antithetic_partner(const ProposalFamily& proposal, const Point& x, const ProposalContext& ctx);

/// One conditional importance sampling step targeting the full density.
///
/// Particle `k` (0-based) is set to `y`; xi is drawn from cfg.aux and the
/// remaining particles according to the variant. `log_m_y`, if given, is
/// used in place of re-evaluating log m(y). Each particle draws from its own
/// substream rng.derive(i), so the result does not depend on evaluation
/// order.
ParticleSystem cis_step(const Point& y, std::size_t k, const CisConfig& cfg,
                        const TargetDensity& target, const RngStream& rng,
                        std::optional<double> log_m_y = std::nullopt);

/// sum_i W_i f(x_i).
double cis_estimate(const ParticleSystem& ps, const Functional& f);

/// CIS step for block `s` of `target`, conditioning on the off-block
/// coordinates of `y`. Particles live in block-s coordinates and are
/// weighted with log m_s(x_i(s) | y(-s)).
ParticleSystem cis_step_conditional(std::size_t s, const Point& y, std::size_t k_s,
                                    const CisConfig& cfg_s, const TargetDensity& target,
                                    const RngStream& rng);

/// sum_i W_{s,i} f(x_i(s), y(-s)) for a block particle system.
double cis_estimate_conditional(const ParticleSystem& ps, std::size_t s, const Point& y,
                                const TargetDensity& target, const Functional& f);

struct UnbiasednessResult {
  double mean = 0.0;
  double std_error = 0.0;
};

/// Draws (y, k) from N^{-1} pi using `exact_sampler`, runs cis_step and
/// averages cis_estimate over `replications` independent systems.
UnbiasednessResult unbiasedness_check(const CisConfig& cfg, const TargetDensity& target,
                                      const std::function<Point(RngStream&)>& exact_sampler,
                                      const Functional& f, std::size_t replications,
                                      const RngStream& rng);

// Substream tags below the particle index range.
inline constexpr std::uint64_t kAuxStreamTag = 0xA0000000'00000001ULL;
inline constexpr std::uint64_t kSelectStreamTag = 0xA0000000'00000002ULL;

}  // namespace miis

#endif  // MIIS_CIS_HPP
