#include "miis/models/mmpp.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <random>
#include <sstream>

namespace miis::mmpp {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Forward recursion without input checks; `times` are already validated.
double forward_loglik(const Params& p, std::span<const double> times, double window,
                      std::size_t stride) {
  const std::size_t d = p.states();
  const Eigen::VectorXd nu = stationary(p.Q);
  double log_acc = 0.0;
  std::size_t since_norm = 0;

  if (d == 2) {
    Eigen::Matrix2d A = p.Q;
    A(0, 0) -= p.psi[0];
    A(1, 1) -= p.psi[1];
    Eigen::RowVector2d alpha(nu[0], nu[1]);
    double prev = 0.0;
    for (double t : times) {
      const Eigen::Matrix2d R = expm2_scaled(A, t - prev, log_acc);
      alpha = alpha * R;
      alpha[0] *= p.psi[0];
      alpha[1] *= p.psi[1];
      prev = t;
      if (++since_norm == stride) {
        const double s = alpha.sum();
        log_acc += std::log(s);
        alpha /= s;
        since_norm = 0;
      }
    }
    alpha = alpha * expm2_scaled(A, window - prev, log_acc);
    return log_acc + std::log(alpha.sum());
  }

  // shift by -min(psi): the spectral abscissa of Q - Psi is at most -min(psi)
  const double shift = -p.psi.minCoeff();
  Eigen::MatrixXd A = p.Q;
  A.diagonal() -= p.psi;
  A.diagonal().array() -= shift;
  Eigen::RowVectorXd alpha = nu.transpose();
  double prev = 0.0;
  for (double t : times) {
    alpha = alpha * expm(A * (t - prev));
    alpha = alpha.cwiseProduct(p.psi.transpose());
    prev = t;
    if (++since_norm == stride) {
      const double s = alpha.sum();
      log_acc += std::log(s);
      alpha /= s;
      since_norm = 0;
    }
  }
  alpha = alpha * expm(A * (window - prev));
  return log_acc + std::log(alpha.sum()) + shift * window;
}

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) {
    return {};
  }
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_double(std::string_view s, std::size_t line) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) {
    throw Error("event file line " + std::to_string(line) + ": cannot parse '" + std::string(s) + "'");
  }
  return v;
}

}  // namespace

Params two_state(double psi1, double psi2, double q12, double q21) {
  Params p;
  p.psi = Eigen::Vector2d(psi1, psi2);
  p.Q.resize(2, 2);
  p.Q << -q12, q12, q21, -q21;
  return p;
}

void validate(const Params& p, bool allow_nonincreasing_psi) {
  const auto d = p.psi.size();
  if (d < 1 || p.Q.rows() != d || p.Q.cols() != d) {
    throw ConfigurationError("generator and intensity dimensions disagree");
  }
  if (!p.psi.allFinite() || !p.Q.allFinite()) {
    throw ConfigurationError("MMPP parameters must be finite");
  }
  for (Eigen::Index i = 0; i < d; ++i) {
    if (!(p.psi[i] > 0.0)) {
      throw ConfigurationError("intensities must be positive");
    }
    if (i > 0 && !(p.psi[i] > p.psi[i - 1]) && !allow_nonincreasing_psi) {
      throw ConfigurationError("intensities must be strictly increasing");
    }
    double row = 0.0;
    double scale = 0.0;
    for (Eigen::Index j = 0; j < d; ++j) {
      if (i != j && !(p.Q(i, j) > 0.0)) {
        throw ConfigurationError("generator off-diagonal rates must be positive");
      }
      row += p.Q(i, j);
      scale += std::abs(p.Q(i, j));
    }
    if (std::abs(row) > 1e-9 * std::max(1.0, scale)) {
      throw ConfigurationError("generator rows must sum to zero");
    }
  }
}

Eigen::VectorXd stationary(const Eigen::MatrixXd& Q) {
  const auto d = Q.rows();
  if (d == 1) {
    return Eigen::VectorXd::Ones(1);
  }
  if (d == 2) {
    const double q12 = Q(0, 1);
    const double q21 = Q(1, 0);
    return Eigen::Vector2d(q21, q12) / (q12 + q21);
  }
  Eigen::MatrixXd M(d + 1, d);
  M.topRows(d) = Q.transpose();
  M.row(d).setOnes();
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(d + 1);
  rhs[d] = 1.0;
  return M.colPivHouseholderQr().solve(rhs);
}

Eigen::Matrix2d expm2_scaled(const Eigen::Matrix2d& A, double t, double& log_scale) {
  const double m = 0.5 * (A(0, 0) + A(1, 1));
  const double half = 0.5 * (A(0, 0) - A(1, 1));
  double disc = half * half + A(0, 1) * A(1, 0);
  if (disc < 0.0) {
    if (disc < -1e-12 * (half * half + std::abs(A(0, 1) * A(1, 0)))) {
      throw Error("expm2_scaled: complex eigenvalues");
    }
    disc = 0.0;
  }
  const double delta = std::sqrt(disc);
  log_scale += (m + delta) * t;
  const double x = 2.0 * delta * t;
  const double e = std::exp(-x);
  double c2;
  const double gap = 2.0 * delta / (std::abs(m + delta) + std::abs(m - delta));
  if (delta == 0.0 || (gap < 1e-8 && x < 1e-3)) {
    // (1 - e^{-x}) / (2 delta) = t (1 - x/2 + x^2/6 - x^3/24 + ...)
    c2 = t * (1.0 - x / 2.0 + x * x / 6.0 - x * x * x / 24.0);
  } else {
    c2 = -std::expm1(-x) / (2.0 * delta);
  }
  Eigen::Matrix2d B = A;
  B(0, 0) -= m;
  B(1, 1) -= m;
  Eigen::Matrix2d R = c2 * B;
  R(0, 0) += 0.5 * (1.0 + e);
  R(1, 1) += 0.5 * (1.0 + e);
  return R;
}

Eigen::MatrixXd expm(const Eigen::MatrixXd& A) {
  const auto d = A.rows();
  const double norm = A.cwiseAbs().rowwise().sum().maxCoeff();
  int s = 0;
  if (norm > 0.5) {
    s = static_cast<int>(std::ceil(std::log2(norm / 0.5)));
  }
  const Eigen::MatrixXd X = A / std::ldexp(1.0, s);
  constexpr int q = 6;
  double c = 1.0;
  Eigen::MatrixXd N = Eigen::MatrixXd::Identity(d, d);
  Eigen::MatrixXd D = Eigen::MatrixXd::Identity(d, d);
  Eigen::MatrixXd P = Eigen::MatrixXd::Identity(d, d);
  for (int k = 1; k <= q; ++k) {
    c *= static_cast<double>(q - k + 1) / static_cast<double>(k * (2 * q - k + 1));
    P = P * X;
    N += c * P;
    D += (k % 2 == 0 ? c : -c) * P;
  }
  Eigen::MatrixXd E = D.partialPivLu().solve(N);
  for (int i = 0; i < s; ++i) {
    E = E * E;
  }
  return E;
}

void validate_times(std::span<const double> times, double window) {
  if (!(window >= 0.0) || !std::isfinite(window)) {
    throw Error("observation window must be finite and nonnegative");
  }
  double prev = -1.0;
  for (std::size_t i = 0; i < times.size(); ++i) {
    const double t = times[i];
    if (!(t >= 0.0) || !(t <= window)) {
      throw Error("event time " + std::to_string(i) + " lies outside [0, window]");
    }
    if (!(t > prev)) {
      throw Error("event times must be strictly increasing (index " + std::to_string(i) + ")");
    }
    prev = t;
  }
}

double loglik(const Params& p, std::span<const double> times, double window, const LoglikOptions& opts) {
  validate(p, opts.allow_nonincreasing_psi);
  validate_times(times, window);
  if (opts.normalize_stride == 0) {
    throw ConfigurationError("normalize_stride must be at least 1");
  }
  return forward_loglik(p, times, window, opts.normalize_stride);
}

Tilde to_tilde(const Natural& theta) {
  return {std::log(theta[0]), std::log(theta[1] - theta[0]), std::log(theta[2]), std::log(theta[3])};
}

Natural from_tilde(const Tilde& tilde) {
  const double psi1 = std::exp(tilde[0]);
  return {psi1, psi1 + std::exp(tilde[1]), std::exp(tilde[2]), std::exp(tilde[3])};
}

double log_jacobian(const Tilde& tilde) { return tilde[0] + tilde[1] + tilde[2] + tilde[3]; }

double log_prior(const Natural& theta, const Natural& prior_means) {
  double lp = 0.0;
  for (std::size_t j = 0; j < 4; ++j) {
    if (!(theta[j] >= 0.0)) {
      return kNegInf;
    }
    lp += -std::log(prior_means[j]) - theta[j] / prior_means[j];
  }
  return lp;
}

double log_posterior(const Model& model, const Tilde& tilde) {
  for (double v : tilde) {
    if (!std::isfinite(v)) {
      return kNegInf;
    }
  }
  const Natural theta = from_tilde(tilde);
  for (double v : theta) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      return kNegInf;
    }
  }
  double ll;
  if (model.loglik_override) {
    ll = model.loglik_override(theta);
  } else {
    // psi2 > psi1 holds by construction; ties only arise from rounding
    Params p = two_state(theta[0], theta[1], theta[2], theta[3]);
    ll = forward_loglik(p, model.times, model.window, model.loglik_options.normalize_stride);
  }
  const double lp = ll + log_prior(theta, model.prior_means) + log_jacobian(tilde);
  return std::isnan(lp) ? kNegInf : lp;
}

TargetDensity make_target(const Model& model) {
  validate_times(model.times, model.window);
  for (double m : model.prior_means) {
    if (!(m > 0.0)) {
      throw ConfigurationError("prior means must be positive");
    }
  }
  if (model.loglik_options.normalize_stride == 0) {
    throw ConfigurationError("normalize_stride must be at least 1");
  }
  TargetDensity t;
  t.dim = 4;
  auto shared = std::make_shared<const Model>(model);
  t.log_m = [shared](const Point& x) {
    return log_posterior(*shared, Tilde{x[0], x[1], x[2], x[3]});
  };
  return t;
}

std::vector<Functional> natural_functionals() {
  return {
      {"psi1", [](const Point& x) { return std::exp(x[0]); }},
      {"psi2", [](const Point& x) { return std::exp(x[0]) + std::exp(x[1]); }},
      {"q12", [](const Point& x) { return std::exp(x[2]); }},
      {"q21", [](const Point& x) { return std::exp(x[3]); }},
  };
}

std::vector<double> simulate(const Params& p, double window, RngStream& rng) {
  validate(p, true);
  std::vector<double> times;
  if (!(window > 0.0)) {
    return times;
  }
  const Eigen::VectorXd nu = stationary(p.Q);
  auto pick = [&rng](const Eigen::VectorXd& probs) {
    const double u = rng.uniform() * probs.sum();
    double acc = 0.0;
    for (Eigen::Index i = 0; i < probs.size(); ++i) {
      acc += probs[i];
      if (u < acc) {
        return i;
      }
    }
    return probs.size() - 1;
  };
  Eigen::Index state = pick(nu);
  double t = 0.0;
  const auto d = p.Q.rows();
  while (t < window) {
    const double rate = -p.Q(state, state);
    const double hold = rate > 0.0 ? -std::log(rng.uniform()) / rate : std::numeric_limits<double>::infinity();
    const double end = std::min(t + hold, window);
    std::poisson_distribution<long> count_dist(p.psi[state] * (end - t));
    const long count = count_dist(rng);
    const std::size_t first = times.size();
    for (long c = 0; c < count; ++c) {
      times.push_back(t + (end - t) * rng.uniform());
    }
    std::sort(times.begin() + static_cast<std::ptrdiff_t>(first), times.end());
    t = end;
    if (t < window && d > 1) {
      Eigen::VectorXd jump = p.Q.row(state).transpose();
      jump[state] = 0.0;
      state = pick(jump);
    }
  }
  return times;
}

EventFile read_events(std::istream& in) {
  EventFile out;
  std::string raw;
  std::size_t line = 0;
  bool first = true;
  while (std::getline(in, raw)) {
    ++line;
    const std::string_view s = trim(raw);
    if (s.empty()) {
      continue;
    }
    if (first && s.substr(0, 7) == "window=") {
      out.window = parse_double(trim(s.substr(7)), line);
      first = false;
      continue;
    }
    first = false;
    out.times.push_back(parse_double(s, line));
  }
  const double w = out.window.value_or(out.times.empty() ? 0.0 : out.times.back());
  validate_times(out.times, w);
  return out;
}

EventFile read_events_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error("cannot open event file '" + path + "'");
  }
  return read_events(in);
}

void write_events(std::ostream& out, std::span<const double> times, double window) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "window=%.17g\n", window);
  out << buf;
  for (double t : times) {
    std::snprintf(buf, sizeof buf, "%.17g\n", t);
    out << buf;
  }
}

Eigen::MatrixXd pilot_covariance(const TargetDensity& target, const Point& init,
                                 std::size_t iterations, const RngStream& rng, PilotShape shape) {
  const auto d = static_cast<Eigen::Index>(target.dim);
  if (iterations < 200) {
    throw ConfigurationError("pilot phase needs at least 200 iterations");
  }
  Point y = init;
  double lm = target.log_m(y);
  if (!(lm > kNegInf)) {
    throw Error("pilot phase: initial point outside the support");
  }
  const bool full = shape == PilotShape::full;
  // proposal factor; diagonal until adaptation starts
  Eigen::MatrixXd step = Eigen::MatrixXd::Identity(d, d) * 1e-2;
  Eigen::VectorXd mean = y;
  Eigen::MatrixXd m2 = Eigen::MatrixXd::Zero(d, d);
  const double scale = 2.38 * 2.38 / static_cast<double>(d);
  const std::size_t warm = iterations / 4;
  std::size_t count = 0;
  Eigen::VectorXd out_mean = Eigen::VectorXd::Zero(d);
  Eigen::MatrixXd out_m2 = Eigen::MatrixXd::Zero(d, d);
  Eigen::VectorXd z(d);
  for (std::size_t t = 0; t < iterations; ++t) {
    RngStream it = rng.derive(t);
    for (Eigen::Index j = 0; j < d; ++j) {
      z[j] = it.normal();
    }
    const Point cand = y + step * z;
    const double lc = target.log_m(cand);
    if (lc > kNegInf && (lc >= lm || std::log(it.uniform()) < lc - lm)) {
      y = cand;
      lm = lc;
    }
    // running moments drive the adaptation
    const double n = static_cast<double>(t + 2);
    const Eigen::VectorXd delta = y - mean;
    mean += delta / n;
    m2.noalias() += delta * (y - mean).transpose();
    if (t >= 100) {
      if (full) {
        Eigen::MatrixXd c = scale * m2 / (n - 1.0);
        c = 0.5 * (c + c.transpose());
        c.diagonal().array() += 1e-10;
        Eigen::LLT<Eigen::MatrixXd> llt(c);
        if (llt.info() == Eigen::Success) {
          step = llt.matrixL();
        }
      } else {
        step = (scale * m2.diagonal() / (n - 1.0)).cwiseMax(1e-10).cwiseSqrt().asDiagonal();
      }
    }
    if (t >= warm) {
      ++count;
      const Eigen::VectorXd dd = y - out_mean;
      out_mean += dd / static_cast<double>(count);
      out_m2.noalias() += dd * (y - out_mean).transpose();
    }
  }
  Eigen::MatrixXd cov = out_m2 / static_cast<double>(count - 1);
  if (!full) {
    const Eigen::VectorXd var = cov.diagonal().cwiseMax(1e-10);
    return var.asDiagonal();
  }
  cov = 0.5 * (cov + cov.transpose());
  cov.diagonal().array() += 1e-10;
  if (Eigen::LLT<Eigen::MatrixXd>(cov).info() != Eigen::Success) {
    throw Error("pilot phase: sample covariance is not positive definite");
  }
  return cov;
}

}  // namespace miis::mmpp
