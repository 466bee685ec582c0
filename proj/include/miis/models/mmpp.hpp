#ifndef MIIS_MODELS_MMPP_HPP
#define MIIS_MODELS_MMPP_HPP

#include <array>
#include <cstddef>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "miis/core.hpp"

namespace miis::mmpp {

/// Intensities psi (events per second) and generator Q of the hidden chain.
struct Params {
  Eigen::VectorXd psi;
  Eigen::MatrixXd Q;

  [[nodiscard]] std::size_t states() const { return static_cast<std::size_t>(psi.size()); }
};

/// Two-state parameters with off-diagonal rates q12 and q21.
Params two_state(double psi1, double psi2, double q12, double q21);

/// Throws ConfigurationError on a malformed generator, non-positive
/// intensities, or (unless allowed) intensities that are not strictly
/// increasing.
void validate(const Params& p, bool allow_nonincreasing_psi = false);

/// nu with nu Q = 0 and sum(nu) = 1.
Eigen::VectorXd stationary(const Eigen::MatrixXd& Q);

/// exp(A t) for 2x2 A with real eigenvalues, returned as exp(lambda_max t) * R
/// where R is the returned matrix and lambda_max goes to `log_scale` (added).
Eigen::Matrix2d expm2_scaled(const Eigen::Matrix2d& A, double t, double& log_scale);

/// Matrix exponential by scaling and squaring with a degree-6 Pade approximant.
Eigen::MatrixXd expm(const Eigen::MatrixXd& A);

struct LoglikOptions {
  /// Renormalize the forward vector after every `normalize_stride` factors.
  std::size_t normalize_stride = 1;
  bool allow_nonincreasing_psi = false;
};

/// log nu' e^{(Q-Psi)t_1} Psi ... Psi e^{(Q-Psi)t_{n+1}} 1 for event times
/// in [0, window].
double loglik(const Params& p, std::span<const double> times, double window,
              const LoglikOptions& opts = {});

/// Checks times are strictly increasing and inside [0, window].
void validate_times(std::span<const double> times, double window);

/// theta_tilde = (log psi1, log(psi2 - psi1), log q12, log q21).
using Tilde = std::array<double, 4>;
/// Natural parameters (psi1, psi2, q12, q21).
using Natural = std::array<double, 4>;

Tilde to_tilde(const Natural& theta);
Natural from_tilde(const Tilde& tilde);
/// log |d natural / d tilde| = sum of the tilde coordinates.
double log_jacobian(const Tilde& tilde);

/// Exponential priors on (psi1, psi2, q12, q21) with the given means.
double log_prior(const Natural& theta, const Natural& prior_means);

struct Model {
  Natural prior_means{};
  double window = 0.0;
  std::vector<double> times;
  LoglikOptions loglik_options;
  /// Replaces the likelihood when set (used to test the prior and Jacobian).
  std::function<double(const Natural&)> loglik_override;
};

/// Posterior density of theta_tilde: loglik + log prior + log Jacobian.
/// Returns -inf where the parameters leave the valid region.
double log_posterior(const Model& model, const Tilde& tilde);

/// Target of dimension 4 over theta_tilde.
TargetDensity make_target(const Model& model);

/// Posterior-mean functionals on the natural scale: psi1, psi2, q12, q21.
std::vector<Functional> natural_functionals();

/// Event times of one simulated path: the hidden chain starts from nu and
/// each constant-intensity segment receives a Poisson count of uniformly
/// placed events.
std::vector<double> simulate(const Params& p, double window, RngStream& rng);

/// Event-time file: optional header "window=<float>", then one time per line.
struct EventFile {
  std::vector<double> times;
  std::optional<double> window;
};
EventFile read_events(std::istream& in);
EventFile read_events_file(const std::string& path);
void write_events(std::ostream& out, std::span<const double> times, double window);

enum class PilotShape { diagonal, full };

/// Posterior covariance of theta_tilde from an adaptive random-walk warm
/// phase of `iterations` steps started at `init`. The full shape adapts on
/// the whole running covariance and keeps the correlations.
Eigen::MatrixXd pilot_covariance(const TargetDensity& target, const Point& init,
                                 std::size_t iterations, const RngStream& rng,
                                 PilotShape shape = PilotShape::diagonal);

}  // namespace miis::mmpp

#endif  // MIIS_MODELS_MMPP_HPP
