#ifndef MIIS_CORE_HPP
#define MIIS_CORE_HPP

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "miis/rng.hpp"

namespace miis {

using Point = Eigen::VectorXd;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid sampler/target/proposal combination detected before sampling.
class ConfigurationError : public Error {
 public:
  using Error::Error;
};

/// Every weight of a particle system vanished, or the retained particle has
/// zero proposal density. Signals a support mismatch between target and
/// proposal.
class DegenerateError : public Error {
 public:
  using Error::Error;
};

/// A raw importance weight exceeded its declared bound.
class WeightBoundError : public Error {
 public:
  using Error::Error;
};

/// Half-open coordinate range [begin, begin + size) of one Gibbs block.
struct BlockRange {
  std::size_t begin = 0;
  std::size_t size = 0;
};

Point extract_block(const Point& y, const BlockRange& b);
/// Copy of `y` with block `b` replaced by `block_coords`.
Point with_block(const Point& y, const BlockRange& b, const Point& block_coords);

/// Unnormalized target m(x) = Z * pi(x), evaluated in the log domain.
///
/// log_m must return a finite value or -inf (never NaN) for finite input.
/// The block fields are optional; they are required only by the Gibbs-type
/// samplers.
struct TargetDensity {
  std::size_t dim = 0;
  std::function<double(const Point&)> log_m;

  std::vector<BlockRange> blocks;
  /// log m_s(x_s | y(-s)): block index, block coordinates, full state whose
  /// off-block coordinates are conditioned on.
  std::function<double(std::size_t, const Point&, const Point&)> log_m_conditional;
  /// Exact draw from pi_s(. | y(-s)); only analytic models provide it.
  std::function<Point(std::size_t, const Point&, RngStream&)> sample_conditional;

  [[nodiscard]] bool has_blocks() const { return !blocks.empty(); }
  /// Throws ConfigurationError unless the blocks partition 0..dim-1.
  void validate_blocks() const;
};

/// Covariance of a Gaussian random-walk increment, shared between a proposal
/// and an auxiliary kernel so the random-walk sampler can verify that
/// q(.|xi) and eta(.|y) have the same shape.
struct RandomWalkShape {
  Eigen::MatrixXd covariance;
  Eigen::MatrixXd cholesky;       // lower factor
  double log_normalizer = 0.0;    // -0.5 * (d log 2pi + log det)

  explicit RandomWalkShape(Eigen::MatrixXd cov);
  [[nodiscard]] double log_density(const Point& increment) const;
  [[nodiscard]] Point draw(RngStream& rng) const;
};

/// What a proposal may condition on besides the particle index.
struct ProposalContext {
  const Point* xi = nullptr;     // auxiliary point, null when there is none
  const Point* state = nullptr;  // full chain state, set for conditional (block) proposals
};

/// Importance proposal with marginals q_i(. | xi).
struct ProposalFamily {
  std::function<Point(std::size_t, const ProposalContext&, RngStream&)> sample;
  std::function<double(std::size_t, const Point&, const ProposalContext&)> log_q;
  /// Per-coordinate marginal cdf and its inverse; only the antithetic sampler
  /// needs them.
  std::function<double(std::size_t, double, const ProposalContext&)> cdf;
  std::function<double(std::size_t, double, const ProposalContext&)> inverse_cdf;
  /// Closed form of the coordinatewise Q^{-1}(1 - Q(x)). A proposal symmetric
  /// about its centre c can set this to 2c - x and skip the quantile calls.
  std::function<Point(const Point&, const ProposalContext&)> mirror;
  bool xi_dependent = false;
  std::shared_ptr<const RandomWalkShape> random_walk;

  [[nodiscard]] bool has_cdf() const { return static_cast<bool>(cdf) && static_cast<bool>(inverse_cdf); }
  [[nodiscard]] bool has_antithetic() const { return has_cdf() || static_cast<bool>(mirror); }
};

enum class AuxKind { none, random_walk };

/// Auxiliary kernel eta(xi | y). With kind == none the point xi is absent and
/// log_eta is identically zero.
struct AuxiliaryKernel {
  AuxKind kind = AuxKind::none;
  std::function<Point(const Point&, RngStream&)> sample;
  std::function<double(const Point&, const Point&)> log_eta;  // (xi, y)
  std::shared_ptr<const RandomWalkShape> random_walk;
};

/// eta(xi|y) = q(x|xi) = phi(x - xi) with phi the centred Gaussian `cov`.
struct RandomWalkPair {
  ProposalFamily proposal;
  AuxiliaryKernel aux;
};
RandomWalkPair make_random_walk(const Eigen::MatrixXd& cov);

/// Weighted particle approximation produced by one conditional importance
/// sampling step. Indices are 0-based.
struct ParticleSystem {
  std::vector<Point> particles;
  std::optional<Point> xi;
  Eigen::VectorXd log_target;  // log m (or log m_s) at each particle
  Eigen::VectorXd log_w;       // unnormalized log-weights
  Eigen::VectorXd weights;     // softmax(log_w)
  std::size_t retained = 0;
  std::size_t density_evaluations = 0;

  [[nodiscard]] std::size_t size() const { return particles.size(); }
};

struct ChainState {
  Point y;
  std::vector<std::size_t> k;  // one entry for full-target samplers, d for Gibbs
};

struct Functional {
  std::string name;
  std::function<double(const Point&)> f;
};

/// softmax(log_w) via log-sum-exp. Throws DegenerateError when every entry
/// is -inf.
Eigen::VectorXd normalize_log_weights(std::span<const double> log_w);
Eigen::VectorXd normalize_log_weights(const Eigen::VectorXd& log_w);

/// Inverse-cdf draw over the stored order of `weights`. Throws Error when the
/// weights do not sum to 1 within 1e-9.
std::size_t categorical_draw(const Eigen::VectorXd& weights, RngStream& rng);

}  // namespace miis

#endif  // MIIS_CORE_HPP
