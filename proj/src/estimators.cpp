#include "miis/estimators.hpp"

#include <cmath>
#include <sstream>

namespace miis {

namespace {

std::size_t require_index(const ChainTrace& trace, const Functional& f) {
  auto j = trace.functional_index(f.name);
  if (!j) {
    throw Error("functional '" + f.name + "' has no per-iteration estimates in this trace");
  }
  return *j;
}

double column_mean(const Eigen::MatrixXd& m, std::size_t j) {
  return m.col(static_cast<Eigen::Index>(j)).mean();
}

}  // namespace

std::vector<double> functional_series(const ChainTrace& trace, const Functional& f) {
  std::vector<double> out(trace.iterations());
  Point y(trace.states.cols());
  for (std::size_t t = 0; t < out.size(); ++t) {
    y = trace.states.row(static_cast<Eigen::Index>(t)).transpose();
    out[t] = f.f(y);
  }
  return out;
}

double mc_estimate(const ChainTrace& trace, const Functional& f) {
  if (trace.iterations() == 0) {
    throw Error("mc_estimate: empty trace");
  }
  const std::vector<double> v = functional_series(trace, f);
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())).mean();
}

double miis_estimate(const ChainTrace& trace, const Functional& f) {
  if (!trace.has_cis()) {
    throw Error("miis_estimate: trace has no per-iteration CIS estimates");
  }
  return column_mean(trace.cis_estimates, require_index(trace, f));
}

double rb_estimate(const ChainTrace& trace, const Functional& f, std::size_t block) {
  if (!trace.has_rb()) {
    throw Error("rb_estimate: trace has no per-block Rao-Blackwell estimates");
  }
  const std::size_t j = require_index(trace, f);
  if (block != kAllBlocks) {
    if (block >= trace.rb_estimates.size()) {
      throw Error("rb_estimate: block index out of range");
    }
    return column_mean(trace.rb_estimates[block], j);
  }
  double total = 0.0;
  for (const auto& rb : trace.rb_estimates) {
    total += column_mean(rb, j);
  }
  return total / static_cast<double>(trace.rb_estimates.size());
}

std::size_t default_batch_length(std::size_t M) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(M)))));
}

Eigen::MatrixXd obm_covariance(const Eigen::MatrixXd& series, std::size_t batch_len) {
  const auto M = static_cast<std::size_t>(series.rows());
  const Eigen::Index p = series.cols();
  if (batch_len < 1 || batch_len >= M) {
    throw Error("obm_covariance: batch length must satisfy 1 <= b < M");
  }
  const Eigen::RowVectorXd grand = series.colwise().mean();
  Eigen::RowVectorXd window = series.topRows(static_cast<Eigen::Index>(batch_len)).colwise().sum();
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(p, p);
  const double b = static_cast<double>(batch_len);
  for (std::size_t j = 0; j + batch_len <= M; ++j) {
    if (j > 0) {
      window += series.row(static_cast<Eigen::Index>(j + batch_len - 1)) -
                series.row(static_cast<Eigen::Index>(j - 1));
    }
    const Eigen::RowVectorXd dev = window / b - grand;
    acc.noalias() += dev.transpose() * dev;
  }
  const double n = static_cast<double>(M);
  // long-run covariance, then divided by M for the covariance of the mean
  const double scale = (n * b) / ((n - b) * (n - b + 1.0)) / n;
  Eigen::MatrixXd out = acc * scale;
  return 0.5 * (out + out.transpose());
}

Eigen::MatrixXd control_variate_series(const ChainTrace& trace, const ControlVariateSet& cvs) {
  const auto M = static_cast<Eigen::Index>(trace.iterations());
  Eigen::MatrixXd U(M, static_cast<Eigen::Index>(cvs.size()));
  for (std::size_t j = 0; j < cvs.size(); ++j) {
    const ControlVariate& cv = cvs[j];
    const std::size_t idx = require_index(trace, cv.g);
    const Eigen::MatrixXd* estimates;
    if (cv.block) {
      if (!trace.has_rb() || *cv.block >= trace.rb_estimates.size()) {
        throw Error("control variate '" + cv.g.name + "' refers to block " + std::to_string(*cv.block) +
                    " without Rao-Blackwell records");
      }
      estimates = &trace.rb_estimates[*cv.block];
    } else {
      if (!trace.has_cis()) {
        throw Error("control variate '" + cv.g.name + "' needs full-target CIS records");
      }
      estimates = &trace.cis_estimates;
    }
    const std::vector<double> g = functional_series(trace, cv.g);
    for (Eigen::Index t = 0; t < M; ++t) {
      U(t, static_cast<Eigen::Index>(j)) = g[static_cast<std::size_t>(t)] - (*estimates)(t, static_cast<Eigen::Index>(idx));
    }
  }
  if (!U.allFinite()) {
    throw Error("control variate series contains non-finite values");
  }
  return U;
}

CvResult cv_estimate(const ChainTrace& trace, const Functional& f, const ControlVariateSet& cvs,
                     std::size_t batch_len, const std::optional<Eigen::VectorXd>& forced_kappa) {
  const Eigen::MatrixXd U = control_variate_series(trace, cvs);
  const Eigen::Index p = U.cols();
  const std::vector<double> fs = functional_series(trace, f);
  const double mc = Eigen::Map<const Eigen::VectorXd>(fs.data(), static_cast<Eigen::Index>(fs.size())).mean();

  CvResult out;
  if (forced_kappa) {
    if (forced_kappa->size() != p) {
      throw Error("cv_estimate: forced kappa has the wrong length");
    }
    out.kappa = *forced_kappa;
  } else {
    Eigen::MatrixXd Z(U.rows(), p + 1);
    Z.leftCols(p) = U;
    Z.col(p) = Eigen::Map<const Eigen::VectorXd>(fs.data(), static_cast<Eigen::Index>(fs.size()));
    const Eigen::MatrixXd sigma = obm_covariance(Z, batch_len);
    Eigen::MatrixXd suu = sigma.topLeftCorner(p, p);
    const Eigen::VectorXd suf = sigma.topRightCorner(p, 1);

    auto condition = [](const Eigen::MatrixXd& m) {
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
      const double hi = es.eigenvalues().maxCoeff();
      const double lo = es.eigenvalues().minCoeff();
      if (!(hi > 0.0)) {
        return std::numeric_limits<double>::infinity();
      }
      return lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity();
    };
    out.condition_number = condition(suu);
    if (out.condition_number > 1e12) {
      const double ridge = 1e-8 * suu.trace() / static_cast<double>(p);
      suu.diagonal().array() += ridge;
      out.ridge_applied = true;
      const double repaired = condition(suu);
      if (!(repaired <= 1e12)) {
        std::ostringstream msg;
        msg << "cv_estimate: control-variate covariance is singular (condition number "
            << out.condition_number << ", " << repaired << " after ridge)";
        throw Error(msg.str());
      }
    }
    out.kappa = suu.ldlt().solve(suf);
  }
  const Eigen::VectorXd mean_u = U.colwise().mean().transpose();
  out.estimate = mc - out.kappa.dot(mean_u);
  return out;
}

double iact(std::span<const double> series) {
  const std::size_t M = series.size();
  if (M < 100) {
    throw Error("iact: need at least 100 samples");
  }
  double mean = 0.0;
  for (double v : series) {
    mean += v;
  }
  mean /= static_cast<double>(M);
  std::vector<double> c(M);
  for (std::size_t t = 0; t < M; ++t) {
    c[t] = series[t] - mean;
  }
  auto autocov = [&c, M](std::size_t lag) {
    double acc = 0.0;
    for (std::size_t t = 0; t + lag < M; ++t) {
      acc += c[t] * c[t + lag];
    }
    return acc / static_cast<double>(M);
  };
  const double gamma0 = autocov(0);
  if (!(gamma0 > 0.0)) {
    throw Error("iact: degenerate chain (zero variance)");
  }
  // Geyer: sum pairs gamma(2m) + gamma(2m+1) while they stay positive
  double sum_pairs = 0.0;
  for (std::size_t m = 0; 2 * m + 1 < M; ++m) {
    const double pair = (m == 0 ? gamma0 : autocov(2 * m)) + autocov(2 * m + 1);
    if (pair <= 0.0) {
      break;
    }
    sum_pairs += pair;
  }
  const double tau = (-gamma0 + 2.0 * sum_pairs) / gamma0;
  return std::max(tau, kIactFloor);
}

std::vector<MseRow> mse_table(const std::vector<MethodEstimates>& methods, double truth,
                              std::string_view reference) {
  const MethodEstimates* ref = nullptr;
  for (const auto& m : methods) {
    if (m.estimates.size() < 2) {
      throw Error("mse_table: method '" + m.method + "' has fewer than two replications");
    }
    if (m.method == reference) {
      ref = &m;
    }
  }
  if (ref == nullptr) {
    throw Error("mse_table: reference method '" + std::string(reference) + "' is missing");
  }
  auto mse_of = [truth](const MethodEstimates& m) {
    double acc = 0.0;
    for (double e : m.estimates) {
      acc += (e - truth) * (e - truth);
    }
    return acc / static_cast<double>(m.estimates.size());
  };
  const double ref_mse = mse_of(*ref);
  std::vector<MseRow> rows;
  rows.reserve(methods.size());
  for (const auto& m : methods) {
    MseRow row;
    row.method = m.method;
    row.mse = mse_of(m);
    row.relative_mse = row.mse / ref_mse;
    row.time_adjusted_relative_mse = row.relative_mse * (m.cost / ref->cost);
    rows.push_back(row);
  }
  return rows;
}

EstimateReport estimate_report(const ChainTrace& trace, const std::vector<Functional>& functionals,
                               const std::map<std::string, ControlVariateSet>& cv_sets,
                               std::size_t batch_len) {
  EstimateReport report;
  for (const auto& f : functionals) {
    FunctionalEstimates fe;
    fe.mc = mc_estimate(trace, f);
    const bool tracked = trace.functional_index(f.name).has_value();
    if (trace.has_cis() && tracked) {
      fe.miis = miis_estimate(trace, f);
    }
    if (trace.has_rb() && tracked) {
      for (std::size_t s = 0; s < trace.rb_estimates.size(); ++s) {
        fe.rb_blocks.push_back(rb_estimate(trace, f, s));
      }
      fe.rb = rb_estimate(trace, f, kAllBlocks);
    }
    if (auto it = cv_sets.find(f.name); it != cv_sets.end()) {
      const CvResult cv = cv_estimate(trace, f, it->second, batch_len);
      fe.cv = cv.estimate;
      fe.kappa = cv.kappa;
    }
    report.functionals.emplace(f.name, std::move(fe));
  }
  const auto dim = static_cast<std::size_t>(trace.states.cols());
  for (std::size_t j = 0; j < dim; ++j) {
    const Eigen::VectorXd col = trace.states.col(static_cast<Eigen::Index>(j));
    try {
      report.diagnostics.iact.push_back(
          iact(std::span<const double>(col.data(), static_cast<std::size_t>(col.size()))));
    } catch (const Error&) {
      report.diagnostics.iact.push_back(std::numeric_limits<double>::quiet_NaN());
    }
  }
  report.diagnostics.acceptance = trace.acceptance_rate();
  report.diagnostics.density_evaluations = trace.density_evaluations;
  report.diagnostics.exact_draws = trace.exact_draws;
  return report;
}

}  // namespace miis
