#include <catch_amalgamated.hpp>

#include <cmath>

#include "miis/estimators.hpp"

using namespace miis;
using Catch::Approx;

namespace {

Functional coord(std::size_t j, const char* name) {
  return {name, [j](const Point& x) { return x[static_cast<Eigen::Index>(j)]; }};
}

// Trace with random states and random per-iteration / per-block records.
ChainTrace random_trace(std::size_t M, std::uint64_t seed) {
  RngStream rng(seed);
  ChainTrace tr;
  tr.kind = SamplerKind::miis_gibbs;
  tr.functional_names = {"x1", "x2"};
  tr.states.resize(static_cast<Eigen::Index>(M), 2);
  tr.cis_estimates.resize(static_cast<Eigen::Index>(M), 2);
  tr.rb_estimates.assign(2, Eigen::MatrixXd(static_cast<Eigen::Index>(M), 2));
  for (Eigen::Index t = 0; t < static_cast<Eigen::Index>(M); ++t) {
    for (Eigen::Index j = 0; j < 2; ++j) {
      tr.states(t, j) = rng.normal();
      tr.cis_estimates(t, j) = 0.5 * tr.states(t, j) + 0.1 * rng.normal();
      tr.rb_estimates[0](t, j) = rng.normal();
      tr.rb_estimates[1](t, j) = rng.normal();
    }
  }
  tr.retained.assign(M, {0});
  tr.moved.assign(M, 1);
  return tr;
}

std::vector<double> ar1(std::size_t M, double phi, std::uint64_t seed) {
  RngStream rng(seed);
  std::vector<double> x(M);
  double v = rng.normal() / std::sqrt(1.0 - phi * phi);
  for (auto& e : x) {
    v = phi * v + rng.normal();
    e = v;
  }
  return x;
}

}  // namespace

TEST_CASE("mc estimate is the average of f over the states") {
  ChainTrace tr = random_trace(50, 1);
  const Functional f = coord(0, "x1");
  double naive = 0.0;
  for (Eigen::Index t = 0; t < 50; ++t) {
    naive += tr.states(t, 0);
  }
  REQUIRE(mc_estimate(tr, f) == Approx(naive / 50.0).margin(1e-15));
  const Functional c{"c", [](const Point&) { return -2.5; }};
  REQUIRE(mc_estimate(tr, c) == Approx(-2.5).margin(1e-15));

  tr.states.rowwise() = Eigen::RowVector2d(0.75, 3.0);
  REQUIRE(mc_estimate(tr, f) == 0.75);
}

TEST_CASE("miis and rao-blackwell estimates average the stored records") {
  const ChainTrace tr = random_trace(40, 2);
  const Functional f = coord(1, "x2");
  REQUIRE(miis_estimate(tr, f) == Approx(tr.cis_estimates.col(1).mean()).margin(1e-15));
  const double b0 = rb_estimate(tr, f, 0);
  const double b1 = rb_estimate(tr, f, 1);
  REQUIRE(b0 == Approx(tr.rb_estimates[0].col(1).mean()).margin(1e-15));
  REQUIRE(std::abs(rb_estimate(tr, f) - 0.5 * (b0 + b1)) <= 1e-12);
  REQUIRE_THROWS_AS(rb_estimate(tr, f, 2), Error);

  const Functional unknown{"z", [](const Point&) { return 0.0; }};
  REQUIRE_THROWS_AS(miis_estimate(tr, unknown), Error);

  ChainTrace plain = tr;
  plain.cis_estimates.resize(0, 0);
  plain.rb_estimates.clear();
  REQUIRE_THROWS_AS(miis_estimate(plain, f), Error);
  REQUIRE_THROWS_AS(rb_estimate(plain, f), Error);
}

TEST_CASE("rao-blackwell average is translation equivariant") {
  ChainTrace tr = random_trace(30, 3);
  const Functional f = coord(0, "x1");
  const double base = rb_estimate(tr, f);
  for (auto& rb : tr.rb_estimates) {
    rb.col(0).array() += 4.0;
  }
  REQUIRE(std::abs(rb_estimate(tr, f) - (base + 4.0)) <= 1e-12);
}

TEST_CASE("obm covariance of a constant series vanishes") {
  const Eigen::MatrixXd s = Eigen::MatrixXd::Constant(200, 2, 3.5);
  REQUIRE(obm_covariance(s, 14).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("obm covariance of iid normals is close to 1/M") {
  const std::size_t M = 100000;
  RngStream rng(4);
  Eigen::MatrixXd s(static_cast<Eigen::Index>(M), 1);
  for (Eigen::Index t = 0; t < s.rows(); ++t) {
    s(t, 0) = rng.normal();
  }
  const double v = obm_covariance(s, default_batch_length(M))(0, 0);
  REQUIRE(std::abs(v * static_cast<double>(M) - 1.0) <= 0.2);
}

TEST_CASE("obm covariance is symmetric positive semidefinite and sees perfect anticorrelation") {
  RngStream rng(5);
  Eigen::MatrixXd s(500, 3);
  for (Eigen::Index t = 0; t < 500; ++t) {
    s(t, 0) = rng.normal();
    s(t, 1) = -s(t, 0);
    s(t, 2) = rng.normal() + 0.3 * s(t, 0);
  }
  const Eigen::MatrixXd c = obm_covariance(s, 22);
  REQUIRE((c - c.transpose()).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE(std::abs(c(0, 1) + c(0, 0)) <= 1e-12 * std::abs(c(0, 0)) + 1e-300);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(c);
  REQUIRE(es.eigenvalues().minCoeff() >= -1e-10);
  REQUIRE_THROWS_AS(obm_covariance(s, 500), Error);
  REQUIRE_THROWS_AS(obm_covariance(s, 0), Error);
}

TEST_CASE("obm covariance matches a direct batch-mean loop") {
  RngStream rng(6);
  const int M = 60;
  const int b = 7;
  Eigen::MatrixXd s(M, 2);
  for (int t = 0; t < M; ++t) {
    s(t, 0) = rng.normal();
    s(t, 1) = rng.uniform();
  }
  const Eigen::RowVector2d grand = s.colwise().mean();
  Eigen::Matrix2d acc = Eigen::Matrix2d::Zero();
  for (int j = 0; j + b <= M; ++j) {
    Eigen::RowVector2d bm = Eigen::RowVector2d::Zero();
    for (int i = j; i < j + b; ++i) {
      bm += s.row(i);
    }
    bm /= b;
    acc += (bm - grand).transpose() * (bm - grand);
  }
  const Eigen::Matrix2d expected = acc * (double(M) * b / ((M - b) * (M - b + 1.0))) / M;
  REQUIRE((obm_covariance(s, b) - expected).cwiseAbs().maxCoeff() <= 1e-15);
}

TEST_CASE("iact of iid noise is one and of an AR(1) chain is (1 + phi) / (1 - phi)") {
  const std::vector<double> iid = ar1(100000, 0.0, 7);
  REQUIRE(std::abs(iact(iid) - 1.0) <= 0.1);
  const std::vector<double> x = ar1(1000000, 0.9, 8);
  REQUIRE(std::abs(iact(x) / 19.0 - 1.0) <= 0.1);
}

TEST_CASE("iact rejects short and constant series") {
  const std::vector<double> constant(500, 1.0);
  REQUIRE_THROWS_WITH(iact(constant), Catch::Matchers::ContainsSubstring("degenerate chain"));
  const std::vector<double> short_series(50, 0.0);
  REQUIRE_THROWS_AS(iact(short_series), Error);
  // strongly alternating series are floored, never negative
  std::vector<double> alt(1000);
  for (std::size_t i = 0; i < alt.size(); ++i) {
    alt[i] = i % 2 == 0 ? 1.0 : -1.0;
  }
  REQUIRE(iact(alt) >= kIactFloor);
}

TEST_CASE("control variates reduce to mc and miis for forced coefficients") {
  const ChainTrace tr = random_trace(400, 9);
  const Functional f = coord(0, "x1");
  const ControlVariateSet self{{f, std::nullopt}};
  const std::size_t b = default_batch_length(400);
  const CvResult zero = cv_estimate(tr, f, self, b, Eigen::VectorXd::Zero(1));
  REQUIRE(zero.estimate == mc_estimate(tr, f));
  const CvResult one = cv_estimate(tr, f, self, b, Eigen::VectorXd::Ones(1));
  REQUIRE(std::abs(one.estimate - miis_estimate(tr, f)) <= 1e-12);
  REQUIRE_THROWS_AS(cv_estimate(tr, f, self, b, Eigen::VectorXd::Ones(2)), Error);
}

TEST_CASE("fitted control-variate coefficient solves the obm normal equations") {
  const ChainTrace tr = random_trace(400, 10);
  const Functional f = coord(0, "x1");
  const ControlVariateSet cvs{{f, std::nullopt}, {coord(1, "x2"), std::size_t{0}}};
  const std::size_t b = 20;
  const CvResult r = cv_estimate(tr, f, cvs, b);
  const Eigen::MatrixXd U = control_variate_series(tr, cvs);
  Eigen::MatrixXd Z(400, 3);
  Z.leftCols(2) = U;
  Z.col(2) = tr.states.col(0);
  const Eigen::MatrixXd S = obm_covariance(Z, b);
  const Eigen::Vector2d kappa = S.topLeftCorner(2, 2).inverse() * S.topRightCorner(2, 1);
  REQUIRE((r.kappa - kappa).cwiseAbs().maxCoeff() <= 1e-9);
  REQUIRE(!r.ridge_applied);
  const double expected = mc_estimate(tr, f) - kappa.dot(U.colwise().mean().transpose());
  REQUIRE(std::abs(r.estimate - expected) <= 1e-12);
}

TEST_CASE("collinear control variates get a ridge and all-zero ones fail") {
  ChainTrace tr = random_trace(300, 11);
  const Functional f = coord(0, "x1");
  const ControlVariateSet twice{{f, std::nullopt}, {f, std::nullopt}};
  const CvResult r = cv_estimate(tr, f, twice, 17);
  REQUIRE(r.ridge_applied);
  REQUIRE(r.condition_number > 1e12);
  REQUIRE(std::isfinite(r.estimate));

  tr.cis_estimates.col(0) = tr.states.col(0);  // U identically zero
  REQUIRE_THROWS_WITH(cv_estimate(tr, f, {{f, std::nullopt}}, 17),
                      Catch::Matchers::ContainsSubstring("condition number"));
}

TEST_CASE("mse table ratios") {
  std::vector<MethodEstimates> same{{"ref", {1.0, 2.0, 3.0}, 2.0}, {"other", {1.0, 2.0, 3.0}, 2.0}};
  for (const auto& row : mse_table(same, 2.0, "ref")) {
    REQUIRE(row.relative_mse == 1.0);
    REQUIRE(row.time_adjusted_relative_mse == 1.0);
  }
  std::vector<MethodEstimates> exact{{"ref", {1.0, 2.0, 3.0}, 1.0}, {"perfect", {2.0, 2.0, 2.0}, 5.0}};
  REQUIRE(mse_table(exact, 2.0, "ref")[1].relative_mse == 0.0);

  // hand computation: ref errors (1, -1, 2) -> mse 2; alt errors (0.5, 0.5, -0.5) -> mse 0.25
  std::vector<MethodEstimates> fixture{{"ref", {3.0, 1.0, 4.0}, 2.0}, {"alt", {2.5, 2.5, 1.5}, 3.0}};
  const auto rows = mse_table(fixture, 2.0, "ref");
  REQUIRE(rows[0].mse == Approx(2.0));
  REQUIRE(rows[1].mse == Approx(0.25));
  REQUIRE(rows[1].relative_mse == Approx(0.125));
  REQUIRE(rows[1].time_adjusted_relative_mse == Approx(0.1875));

  REQUIRE_THROWS_AS(mse_table(fixture, 2.0, "missing"), Error);
  std::vector<MethodEstimates> one_rep{{"ref", {1.0}, 1.0}};
  REQUIRE_THROWS_AS(mse_table(one_rep, 0.0, "ref"), Error);
}

TEST_CASE("estimate report collects every available estimator") {
  const ChainTrace tr = random_trace(300, 12);
  const std::vector<Functional> fs{coord(0, "x1"), coord(1, "x2")};
  std::map<std::string, ControlVariateSet> cvs;
  cvs["x1"] = {{fs[0], std::size_t{0}}};
  const EstimateReport rep = estimate_report(tr, fs, cvs, 17);
  const auto& x1 = rep.functionals.at("x1");
  REQUIRE(x1.miis.has_value());
  REQUIRE(x1.rb.has_value());
  REQUIRE(x1.rb_blocks.size() == 2);
  REQUIRE(x1.cv.has_value());
  REQUIRE(!rep.functionals.at("x2").cv.has_value());
  REQUIRE(rep.diagnostics.iact.size() == 2);
  REQUIRE(rep.diagnostics.acceptance == 1.0);
}
