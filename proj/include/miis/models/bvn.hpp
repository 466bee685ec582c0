#ifndef MIIS_MODELS_BVN_HPP
#define MIIS_MODELS_BVN_HPP

#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "miis/core.hpp"
#include "miis/samplers.hpp"

namespace miis::bvn {

/// Throws ConfigurationError unless |rho| < 1.
void check_rho(double rho);

/// log N(x_s; rho * x_other, 1 - rho^2). The block index is accepted for
/// symmetry with the target interface; both blocks share the same form.
double log_conditional(std::size_t s, double x_s, double x_other, double rho);

/// -0.5 x' Sigma^{-1} x with unit variances and correlation rho (unnormalized).
double log_m(const Point& x, double rho);

/// Two scalar blocks {x1} and {x2} with analytic conditionals and exact
/// conditional draws.
TargetDensity make_target(double rho);

/// One exact draw from the bivariate normal.
Point exact_draw(double rho, RngStream& rng);

inline constexpr double kTailThreshold = -2.32;

/// Analytic value of a named estimand: mean, variance, covariance or tail.
double truth(std::string_view estimand, double rho);

/// Raw functionals x1, x2, x1sq, x2sq, x1x2, tail. Estimands are built from
/// their estimates with combine_estimand.
std::vector<Functional> raw_functionals();

/// Names of the raw functionals an estimand needs.
std::vector<std::string> estimand_inputs(std::string_view estimand);

/// mean = x1, variance = x1sq - x1^2, covariance = x1x2 - x1 x2, tail = tail.
double combine_estimand(std::string_view estimand, const std::map<std::string, double>& raw);

/// Student-t(dof) proposal for block s located at the conditional mean
/// rho * y(other) and scaled to the conditional variance 1 - rho^2. Provides
/// cdf and inverse cdf for antithetic sampling.
ProposalFamily conditional_proposal(std::size_t s, double rho, double dof = 5.0);

/// Bivariate Student-t(dof) independence proposal with the target's
/// covariance.
ProposalFamily joint_proposal(double rho, double dof = 5.0);

/// E[f | y(-s)] for the raw functionals.
ConditionalExpectation conditional_expectation(double rho);

}  // namespace miis::bvn

#endif  // MIIS_MODELS_BVN_HPP
