#include "miis/models/bvn.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include <boost/math/distributions/students_t.hpp>

namespace miis::bvn {

namespace {

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double student_draw(double dof, RngStream& rng) {
  const double z = rng.normal();
  std::chi_squared_distribution<double> chi2(dof);
  return z / std::sqrt(chi2(rng) / dof);
}

double other(const Point& y, std::size_t s) { return y[s == 0 ? 1 : 0]; }

}  // namespace

void check_rho(double rho) {
  if (!(std::abs(rho) < 1.0)) {
    throw ConfigurationError("rho must lie strictly inside (-1, 1)");
  }
}

double log_conditional(std::size_t /*s*/, double x_s, double x_other, double rho) {
  const double var = 1.0 - rho * rho;
  const double d = x_s - rho * x_other;
  return -0.5 * (std::log(2.0 * std::numbers::pi * var) + d * d / var);
}

double log_m(const Point& x, double rho) {
  const double q = (x[0] * x[0] - 2.0 * rho * x[0] * x[1] + x[1] * x[1]) / (1.0 - rho * rho);
  return -0.5 * q;
}

TargetDensity make_target(double rho) {
  check_rho(rho);
  TargetDensity t;
  t.dim = 2;
  t.log_m = [rho](const Point& x) { return log_m(x, rho); };
  t.blocks = {BlockRange{0, 1}, BlockRange{1, 1}};
  t.log_m_conditional = [rho](std::size_t s, const Point& x_s, const Point& y) {
    return log_conditional(s, x_s[0], other(y, s), rho);
  };
  t.sample_conditional = [rho](std::size_t s, const Point& y, RngStream& rng) {
    Point x(1);
    x[0] = rho * other(y, s) + std::sqrt(1.0 - rho * rho) * rng.normal();
    return x;
  };
  return t;
}

Point exact_draw(double rho, RngStream& rng) {
  Point x(2);
  x[0] = rng.normal();
  x[1] = rho * x[0] + std::sqrt(1.0 - rho * rho) * rng.normal();
  return x;
}

double truth(std::string_view estimand, double rho) {
  if (estimand == "mean") {
    return 0.0;
  }
  if (estimand == "variance") {
    return 1.0;
  }
  if (estimand == "covariance") {
    return rho;
  }
  if (estimand == "tail") {
    return normal_cdf(kTailThreshold);
  }
  throw ConfigurationError("unknown bivariate normal estimand '" + std::string(estimand) + "'");
}

std::vector<Functional> raw_functionals() {
  return {
      {"x1", [](const Point& x) { return x[0]; }},
      {"x2", [](const Point& x) { return x[1]; }},
      {"x1sq", [](const Point& x) { return x[0] * x[0]; }},
      {"x2sq", [](const Point& x) { return x[1] * x[1]; }},
      {"x1x2", [](const Point& x) { return x[0] * x[1]; }},
      {"tail", [](const Point& x) { return x[0] < kTailThreshold ? 1.0 : 0.0; }},
  };
}

std::vector<std::string> estimand_inputs(std::string_view estimand) {
  if (estimand == "mean") {
    return {"x1"};
  }
  if (estimand == "variance") {
    return {"x1sq", "x1"};
  }
  if (estimand == "covariance") {
    return {"x1x2", "x1", "x2"};
  }
  if (estimand == "tail") {
    return {"tail"};
  }
  throw ConfigurationError("unknown bivariate normal estimand '" + std::string(estimand) + "'");
}

double combine_estimand(std::string_view estimand, const std::map<std::string, double>& raw) {
  auto get = [&raw](const char* name) {
    auto it = raw.find(name);
    if (it == raw.end()) {
      throw Error(std::string("missing raw estimate '") + name + "'");
    }
    return it->second;
  };
  if (estimand == "mean") {
    return get("x1");
  }
  if (estimand == "variance") {
    const double m = get("x1");
    return get("x1sq") - m * m;
  }
  if (estimand == "covariance") {
    return get("x1x2") - get("x1") * get("x2");
  }
  if (estimand == "tail") {
    return get("tail");
  }
  throw ConfigurationError("unknown bivariate normal estimand '" + std::string(estimand) + "'");
}

ProposalFamily conditional_proposal(std::size_t s, double rho, double dof) {
  check_rho(rho);
  if (!(dof > 2.0)) {
    throw ConfigurationError("Student-t proposal needs more than 2 degrees of freedom");
  }
  const double scale = std::sqrt((1.0 - rho * rho) * (dof - 2.0) / dof);
  const double log_const = std::lgamma(0.5 * (dof + 1.0)) - std::lgamma(0.5 * dof) -
                           0.5 * std::log(dof * std::numbers::pi) - std::log(scale);
  auto location = [s, rho](const ProposalContext& ctx) {
    if (ctx.state == nullptr) {
      throw Error("conditional proposal needs the chain state");
    }
    return rho * other(*ctx.state, s);
  };
  const boost::math::students_t_distribution<double> t(dof);

  ProposalFamily q;
  q.sample = [=](std::size_t, const ProposalContext& ctx, RngStream& rng) {
    Point x(1);
    x[0] = location(ctx) + scale * student_draw(dof, rng);
    return x;
  };
  q.log_q = [=](std::size_t, const Point& x, const ProposalContext& ctx) {
    const double z = (x[0] - location(ctx)) / scale;
    return log_const - 0.5 * (dof + 1.0) * std::log1p(z * z / dof);
  };
  q.cdf = [=](std::size_t, double v, const ProposalContext& ctx) {
    return boost::math::cdf(t, (v - location(ctx)) / scale);
  };
  q.inverse_cdf = [=](std::size_t, double u, const ProposalContext& ctx) {
    return location(ctx) + scale * boost::math::quantile(t, u);
  };
  q.mirror = [=](const Point& x, const ProposalContext& ctx) {
    Point out(1);
    out[0] = 2.0 * location(ctx) - x[0];
    return out;
  };
  return q;
}

ProposalFamily joint_proposal(double rho, double dof) {
  check_rho(rho);
  if (!(dof > 2.0)) {
    throw ConfigurationError("Student-t proposal needs more than 2 degrees of freedom");
  }
  Eigen::Matrix2d shape;
  shape << 1.0, rho, rho, 1.0;
  shape *= (dof - 2.0) / dof;
  const Eigen::Matrix2d chol = shape.llt().matrixL();
  const Eigen::Matrix2d inv = shape.inverse();
  const double log_const = std::lgamma(0.5 * (dof + 2.0)) - std::lgamma(0.5 * dof) -
                           std::log(dof * std::numbers::pi) - 0.5 * std::log(shape.determinant());
  ProposalFamily q;
  q.sample = [=](std::size_t, const ProposalContext&, RngStream& rng) {
    Eigen::Vector2d z(rng.normal(), rng.normal());
    std::chi_squared_distribution<double> chi2(dof);
    const double w = std::sqrt(chi2(rng) / dof);
    Point x = chol * z / w;
    return x;
  };
  q.log_q = [=](std::size_t, const Point& x, const ProposalContext&) {
    const Eigen::Vector2d v(x[0], x[1]);
    return log_const - 0.5 * (dof + 2.0) * std::log1p(v.dot(inv * v) / dof);
  };
  return q;
}

ConditionalExpectation conditional_expectation(double rho) {
  check_rho(rho);
  const double var = 1.0 - rho * rho;
  const double sd = std::sqrt(var);
  return [rho, var, sd](std::size_t s, const Functional& f, const Point& y) -> std::optional<double> {
    // block s is resampled given the other coordinate c
    const double c = other(y, s);
    const double own_mean = rho * c;
    const double own_sq = rho * rho * c * c + var;
    const std::string& n = f.name;
    const bool first = s == 0;
    if (n == "x1") {
      return first ? own_mean : y[0];
    }
    if (n == "x2") {
      return first ? y[1] : own_mean;
    }
    if (n == "x1sq") {
      return first ? own_sq : y[0] * y[0];
    }
    if (n == "x2sq") {
      return first ? y[1] * y[1] : own_sq;
    }
    if (n == "x1x2") {
      return own_mean * c;
    }
    if (n == "tail") {
      if (first) {
        return normal_cdf((kTailThreshold - own_mean) / sd);
      }
      return y[0] < kTailThreshold ? 1.0 : 0.0;
    }
    return std::nullopt;
  };
}

}  // namespace miis::bvn
