#include "miis/core.hpp"

#include <cmath>
#include <limits>
#include <numbers>

namespace miis {

double RngStream::normal() {
  // Box-Muller, one variate per call.
  const double u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Point extract_block(const Point& y, const BlockRange& b) {
  return y.segment(static_cast<Eigen::Index>(b.begin), static_cast<Eigen::Index>(b.size));
}

Point with_block(const Point& y, const BlockRange& b, const Point& block_coords) {
  Point out = y;
  out.segment(static_cast<Eigen::Index>(b.begin), static_cast<Eigen::Index>(b.size)) = block_coords;
  return out;
}

void TargetDensity::validate_blocks() const {
  if (blocks.empty()) {
    throw ConfigurationError("target has no block structure");
  }
  std::vector<int> covered(dim, 0);
  for (const auto& b : blocks) {
    if (b.size == 0 || b.begin + b.size > dim) {
      throw ConfigurationError("block range outside 0.." + std::to_string(dim));
    }
    for (std::size_t j = b.begin; j < b.begin + b.size; ++j) {
      ++covered[j];
    }
  }
  for (std::size_t j = 0; j < dim; ++j) {
    if (covered[j] != 1) {
      throw ConfigurationError("blocks do not partition coordinate " + std::to_string(j));
    }
  }
}

RandomWalkShape::RandomWalkShape(Eigen::MatrixXd cov) : covariance(std::move(cov)) {
  if (covariance.rows() != covariance.cols() || covariance.rows() == 0) {
    throw ConfigurationError("random-walk covariance must be square and non-empty");
  }
  Eigen::LLT<Eigen::MatrixXd> llt(covariance);
  if (llt.info() != Eigen::Success) {
    throw ConfigurationError("random-walk covariance is not positive definite");
  }
  cholesky = llt.matrixL();
  const double d = static_cast<double>(covariance.rows());
  const double log_det = 2.0 * cholesky.diagonal().array().log().sum();
  log_normalizer = -0.5 * (d * std::log(2.0 * std::numbers::pi) + log_det);
}

double RandomWalkShape::log_density(const Point& increment) const {
  const Eigen::VectorXd z = cholesky.triangularView<Eigen::Lower>().solve(increment);
  return log_normalizer - 0.5 * z.squaredNorm();
}

Point RandomWalkShape::draw(RngStream& rng) const {
  Eigen::VectorXd z(covariance.rows());
  for (Eigen::Index j = 0; j < z.size(); ++j) {
    z[j] = rng.normal();
  }
  return cholesky * z;
}

RandomWalkPair make_random_walk(const Eigen::MatrixXd& cov) {
  auto shape = std::make_shared<const RandomWalkShape>(cov);
  RandomWalkPair out;

  out.proposal.random_walk = shape;
  out.proposal.xi_dependent = true;
  out.proposal.sample = [shape](std::size_t, const ProposalContext& ctx, RngStream& rng) -> Point {
    return *ctx.xi + shape->draw(rng);
  };
  out.proposal.log_q = [shape](std::size_t, const Point& x, const ProposalContext& ctx) {
    return shape->log_density(x - *ctx.xi);
  };

  out.aux.kind = AuxKind::random_walk;
  out.aux.random_walk = shape;
  out.aux.sample = [shape](const Point& y, RngStream& rng) -> Point { return y + shape->draw(rng); };
  out.aux.log_eta = [shape](const Point& xi, const Point& y) { return shape->log_density(xi - y); };
  return out;
}

Eigen::VectorXd normalize_log_weights(std::span<const double> log_w) {
  if (log_w.empty()) {
    throw Error("normalize_log_weights: empty weight vector");
  }
  double max_lw = -std::numeric_limits<double>::infinity();
  for (double v : log_w) {
    if (std::isnan(v)) {
      throw DegenerateError("normalize_log_weights: NaN log-weight");
    }
    if (v == std::numeric_limits<double>::infinity()) {
      throw DegenerateError("normalize_log_weights: infinite log-weight");
    }
    max_lw = std::max(max_lw, v);
  }
  if (max_lw == -std::numeric_limits<double>::infinity()) {
    throw DegenerateError("degenerate weight vector");
  }
  Eigen::VectorXd w(static_cast<Eigen::Index>(log_w.size()));
  double total = 0.0;
  for (std::size_t i = 0; i < log_w.size(); ++i) {
    w[static_cast<Eigen::Index>(i)] = std::exp(log_w[i] - max_lw);
    total += w[static_cast<Eigen::Index>(i)];
  }
  return w / total;
}

Eigen::VectorXd normalize_log_weights(const Eigen::VectorXd& log_w) {
  return normalize_log_weights(std::span<const double>(log_w.data(), static_cast<std::size_t>(log_w.size())));
}

std::size_t categorical_draw(const Eigen::VectorXd& weights, RngStream& rng) {
  const Eigen::Index n = weights.size();
  if (n == 0) {
    throw Error("categorical_draw: empty weight vector");
  }
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!(weights[i] >= 0.0)) {
      throw Error("categorical_draw: negative or NaN weight");
    }
    total += weights[i];
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw Error("categorical_draw: weights sum to " + std::to_string(total) + ", not 1");
  }
  const double u = rng.uniform() * total;
  double acc = 0.0;
  Eigen::Index last_positive = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (weights[i] > 0.0) {
      last_positive = i;
    }
    acc += weights[i];
    if (u < acc && weights[i] > 0.0) {
      return static_cast<std::size_t>(i);
    }
  }
  // u landed in the rounding gap at the top end
  return static_cast<std::size_t>(last_positive);
}

}  // namespace miis
