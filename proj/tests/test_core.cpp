#include <catch_amalgamated.hpp>

#include <cmath>
#include <set>

#include "miis/core.hpp"

using namespace miis;
using Catch::Approx;

TEST_CASE("rng streams are reproducible and derived streams are independent of consumption order") {
  RngStream a(42);
  RngStream b(42);
  for (int i = 0; i < 100; ++i) {
    REQUIRE(a() == b());
  }
  const RngStream parent(7);
  RngStream c1 = parent.derive(3);
  RngStream other = parent.derive(4);
  for (int i = 0; i < 10; ++i) {
    other();
  }
  RngStream c2 = parent.derive(3);
  REQUIRE(c1() == c2());
  REQUIRE(parent.derive(3).key() != parent.derive(4).key());
}

TEST_CASE("uniform draws stay in the open unit interval and normals have unit variance") {
  RngStream rng(1);
  double sum = 0.0;
  double sum_sq = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    REQUIRE(u > 0.0);
    REQUIRE(u < 1.0);
    const double z = rng.normal();
    sum += z;
    sum_sq += z * z;
  }
  REQUIRE(std::abs(sum / n) < 4.0 / std::sqrt(n));
  REQUIRE(std::abs(sum_sq / n - 1.0) < 4.0 * std::sqrt(2.0 / n));
}

TEST_CASE("replication seeds are distinct and reproducible") {
  std::set<std::uint64_t> seen;
  for (std::uint64_t r = 0; r < 1000; ++r) {
    seen.insert(replication_seed(5, "mwg", r));
    seen.insert(replication_seed(5, "miis", r));
  }
  REQUIRE(seen.size() == 2000);
  REQUIRE(replication_seed(5, "mwg", 3) == replication_seed(5, "mwg", 3));
  REQUIRE(replication_seed(5, "mwg", 3) != replication_seed(6, "mwg", 3));
}

TEST_CASE("normalize_log_weights reproduces direct normalization") {
  const std::vector<double> lw{std::log(1.0), std::log(2.0), std::log(3.0)};
  const Eigen::VectorXd w = normalize_log_weights(lw);
  REQUIRE(w[0] == Approx(1.0 / 6.0).margin(1e-15));
  REQUIRE(w[1] == Approx(2.0 / 6.0).margin(1e-15));
  REQUIRE(w[2] == Approx(3.0 / 6.0).margin(1e-15));

  for (double c : {-1e6, -3.5, 0.0, 700.0, 1e6}) {
    const Eigen::VectorXd u = normalize_log_weights(Eigen::VectorXd::Constant(4, c));
    for (int i = 0; i < 4; ++i) {
      REQUIRE(u[i] == Approx(0.25).margin(1e-15));
    }
  }
}

TEST_CASE("normalize_log_weights handles a large spread without overflow") {
  const Eigen::VectorXd w = normalize_log_weights(Eigen::Vector2d(0.0, -1000.0));
  // extended precision reference: e^-1000 / (1 + e^-1000)
  const long double tiny = std::exp(-1000.0L);
  const long double ref1 = tiny / (1.0L + tiny);
  REQUIRE(w.allFinite());
  REQUIRE(w[0] == 1.0);
  REQUIRE(std::abs(static_cast<long double>(w[1]) - ref1) <= 1e-300L);
}

TEST_CASE("normalized weights are shift invariant and idempotent") {
  RngStream rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    Eigen::VectorXd lw(7);
    for (int i = 0; i < 7; ++i) {
      lw[i] = 10.0 * rng.normal();
    }
    const Eigen::VectorXd w = normalize_log_weights(lw);
    REQUIRE(std::abs(w.sum() - 1.0) <= 1e-12);
    REQUIRE(w.minCoeff() >= 0.0);
    REQUIRE(w.maxCoeff() <= 1.0);
    const Eigen::VectorXd shifted = normalize_log_weights((lw.array() + 123.25).matrix());
    REQUIRE((shifted - w).cwiseAbs().maxCoeff() <= 1e-12);
    const Eigen::VectorXd again = normalize_log_weights(w.array().log().matrix());
    REQUIRE((again - w).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("normalize_log_weights rejects an all minus-infinity vector") {
  const double ninf = -std::numeric_limits<double>::infinity();
  REQUIRE_THROWS_AS(normalize_log_weights(Eigen::Vector3d(ninf, ninf, ninf)), DegenerateError);
  REQUIRE_THROWS_WITH(normalize_log_weights(Eigen::Vector2d(ninf, ninf)),
                      Catch::Matchers::ContainsSubstring("degenerate weight vector"));
  const Eigen::VectorXd w = normalize_log_weights(Eigen::Vector3d(ninf, 0.0, ninf));
  REQUIRE(w[1] == 1.0);
}

TEST_CASE("categorical_draw follows the weights") {
  RngStream rng(11);
  const Eigen::Vector3d point_mass(0.0, 1.0, 0.0);
  for (int i = 0; i < 1000; ++i) {
    REQUIRE(categorical_draw(point_mass, rng) == 1);
  }

  auto check_frequencies = [&rng](const Eigen::VectorXd& w) {
    const int n = 100000;
    std::vector<int> counts(static_cast<std::size_t>(w.size()), 0);
    for (int i = 0; i < n; ++i) {
      ++counts[categorical_draw(w, rng)];
    }
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      const double p = w[i];
      const double se = std::sqrt(p * (1.0 - p) / n);
      REQUIRE(std::abs(counts[static_cast<std::size_t>(i)] / static_cast<double>(n) - p) <= 4.0 * se);
    }
  };
  check_frequencies(Eigen::Vector4d::Constant(0.25));
  check_frequencies(Eigen::Vector3d(1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0));
}

TEST_CASE("categorical_draw rejects unnormalized weights and is deterministic") {
  RngStream rng(2);
  REQUIRE_THROWS_AS(categorical_draw(Eigen::Vector2d(0.5, 0.6), rng), Error);
  RngStream a(9);
  RngStream b(9);
  const Eigen::Vector3d w(0.2, 0.3, 0.5);
  for (int i = 0; i < 100; ++i) {
    REQUIRE(categorical_draw(w, a) == categorical_draw(w, b));
  }
}

TEST_CASE("random-walk auxiliary density is symmetric and shared with the proposal") {
  Eigen::Matrix2d cov;
  cov << 1.0, 0.3, 0.3, 2.0;
  const RandomWalkPair pair = make_random_walk(cov);
  REQUIRE(pair.proposal.random_walk == pair.aux.random_walk);
  REQUIRE(pair.aux.kind == AuxKind::random_walk);
  RngStream rng(4);
  for (int i = 0; i < 20; ++i) {
    const Point a = Eigen::Vector2d(rng.normal(), rng.normal());
    const Point b = Eigen::Vector2d(rng.normal(), rng.normal());
    REQUIRE(std::abs(pair.aux.log_eta(a, b) - pair.aux.log_eta(b, a)) <= 1e-12);
    ProposalContext ctx;
    ctx.xi = &a;
    REQUIRE(std::abs(pair.proposal.log_q(0, b, ctx) - pair.aux.log_eta(b, a)) <= 1e-12);
  }
  // Gaussian log density at zero increment
  const double expected = -0.5 * (2.0 * std::log(2.0 * M_PI) + std::log(cov.determinant()));
  REQUIRE(pair.aux.random_walk->log_density(Eigen::Vector2d::Zero()) == Approx(expected).margin(1e-12));
}

TEST_CASE("block helpers validate partitions") {
  TargetDensity t;
  t.dim = 3;
  t.log_m = [](const Point&) { return 0.0; };
  t.blocks = {{0, 1}, {1, 2}};
  REQUIRE_NOTHROW(t.validate_blocks());
  t.blocks = {{0, 2}, {1, 2}};
  REQUIRE_THROWS_AS(t.validate_blocks(), ConfigurationError);
  t.blocks = {{0, 1}, {2, 1}};
  REQUIRE_THROWS_AS(t.validate_blocks(), ConfigurationError);

  const Point y = Eigen::Vector3d(1.0, 2.0, 3.0);
  const Point x = extract_block(y, {1, 2});
  REQUIRE(x.size() == 2);
  REQUIRE(x[1] == 3.0);
  const Point z = with_block(y, {0, 1}, Eigen::VectorXd::Constant(1, -1.0));
  REQUIRE(z[0] == -1.0);
  REQUIRE(z[2] == 3.0);
}
