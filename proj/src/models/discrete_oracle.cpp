#include "miis/models/discrete_oracle.hpp"

#include <cmath>
#include <limits>

namespace miis::oracle {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

std::optional<std::size_t> atom_index(const std::vector<double>& atoms, double v) {
  for (std::size_t j = 0; j < atoms.size(); ++j) {
    if (atoms[j] == v) {
      return j;
    }
  }
  return std::nullopt;
}

std::size_t ipow(std::size_t base, std::size_t exp) {
  std::size_t r = 1;
  for (std::size_t i = 0; i < exp; ++i) {
    r *= base;
  }
  return r;
}

// Transition matrix of the block-s CIS update with selection.
Eigen::MatrixXd block_kernel(const DiscreteOracleTarget& target, const TargetDensity& density,
                             const DiscreteProposal& proposal, std::size_t s, std::size_t N) {
  const std::size_t d = target.blocks();
  const std::size_t kstates = ipow(N, d);
  const std::size_t n_states = target.cells() * kstates;
  const std::size_t n_atoms = target.atoms[s].size();
  const std::size_t stride = ipow(N, s);

  CisConfig cfg;
  cfg.n_particles = N;
  cfg.variant = CisVariant::simple;
  cfg.proposal = make_proposal(target, proposal, s);
  cfg.allow_small_n = true;
  cfg.validate();

  Eigen::MatrixXd P = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n_states), static_cast<Eigen::Index>(n_states));
  const std::size_t configs = ipow(n_atoms, N - 1);
  std::vector<Point> particles(N, Point(1));
  Eigen::VectorXd log_w(static_cast<Eigen::Index>(N));

  for (std::size_t cell = 0; cell < target.cells(); ++cell) {
    const Point y = target.point(cell);
    const Eigen::VectorXd pmf = proposal(s, cell);
    ProposalContext ctx;
    ctx.state = &y;
    std::vector<std::size_t> idx = target.unpack(cell);
    for (std::size_t kv = 0; kv < kstates; ++kv) {
      const std::size_t k = (kv / stride) % N;
      const std::size_t from = cell * kstates + kv;
      for (std::size_t c = 0; c < configs; ++c) {
        double prob = 1.0;
        std::size_t code = c;
        for (std::size_t i = 0; i < N; ++i) {
          if (i == k) {
            particles[i][0] = y[static_cast<Eigen::Index>(s)];
            continue;
          }
          const std::size_t a = code % n_atoms;
          code /= n_atoms;
          particles[i][0] = target.atoms[s][a];
          prob *= pmf[static_cast<Eigen::Index>(a)];
        }
        for (std::size_t i = 0; i < N; ++i) {
          const double lm = density.log_m_conditional(s, particles[i], y);
          log_w[static_cast<Eigen::Index>(i)] = cis_log_weight(cfg, i, particles[i], lm, std::nullopt, ctx);
        }
        const Eigen::VectorXd W = normalize_log_weights(log_w);
        for (std::size_t j = 0; j < N; ++j) {
          idx[s] = *atom_index(target.atoms[s], particles[j][0]);
          const std::size_t new_cell = target.pack(idx);
          const std::size_t new_kv = kv - k * stride + j * stride;
          P(static_cast<Eigen::Index>(from), static_cast<Eigen::Index>(new_cell * kstates + new_kv)) +=
              prob * W[static_cast<Eigen::Index>(j)];
        }
        idx = target.unpack(cell);
      }
    }
  }
  return P;
}

}  // namespace

std::size_t DiscreteOracleTarget::cells() const {
  std::size_t n = 1;
  for (const auto& a : atoms) {
    n *= a.size();
  }
  return n;
}

void DiscreteOracleTarget::validate() const {
  if (atoms.empty()) {
    throw ConfigurationError("discrete target needs at least one block");
  }
  for (const auto& a : atoms) {
    if (a.empty()) {
      throw ConfigurationError("every block needs at least one atom");
    }
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (!std::isfinite(a[i]) || atom_index(a, a[i]) != i) {
        throw ConfigurationError("atoms must be finite and distinct");
      }
    }
  }
  if (static_cast<std::size_t>(probs.size()) != cells()) {
    throw ConfigurationError("probability table size does not match the atom grid");
  }
  if (!(probs.minCoeff() > 0.0) || std::abs(probs.sum() - 1.0) > 1e-12) {
    throw ConfigurationError("target probabilities must be positive and sum to 1");
  }
}

std::vector<std::size_t> DiscreteOracleTarget::unpack(std::size_t cell) const {
  std::vector<std::size_t> idx(atoms.size());
  for (std::size_t s = atoms.size(); s-- > 0;) {
    idx[s] = cell % atoms[s].size();
    cell /= atoms[s].size();
  }
  return idx;
}

std::size_t DiscreteOracleTarget::pack(const std::vector<std::size_t>& idx) const {
  std::size_t cell = 0;
  for (std::size_t s = 0; s < atoms.size(); ++s) {
    cell = cell * atoms[s].size() + idx[s];
  }
  return cell;
}

std::optional<std::size_t> DiscreteOracleTarget::cell_of(const Point& y) const {
  if (static_cast<std::size_t>(y.size()) != atoms.size()) {
    return std::nullopt;
  }
  std::vector<std::size_t> idx(atoms.size());
  for (std::size_t s = 0; s < atoms.size(); ++s) {
    auto a = atom_index(atoms[s], y[static_cast<Eigen::Index>(s)]);
    if (!a) {
      return std::nullopt;
    }
    idx[s] = *a;
  }
  return pack(idx);
}

Point DiscreteOracleTarget::point(std::size_t cell) const {
  const auto idx = unpack(cell);
  Point y(static_cast<Eigen::Index>(atoms.size()));
  for (std::size_t s = 0; s < atoms.size(); ++s) {
    y[static_cast<Eigen::Index>(s)] = atoms[s][idx[s]];
  }
  return y;
}

TargetDensity make_target(const DiscreteOracleTarget& target) {
  target.validate();
  auto shared = std::make_shared<const DiscreteOracleTarget>(target);
  TargetDensity t;
  t.dim = target.blocks();
  t.log_m = [shared](const Point& y) {
    auto cell = shared->cell_of(y);
    return cell ? std::log(shared->probs[static_cast<Eigen::Index>(*cell)]) : kNegInf;
  };
  for (std::size_t s = 0; s < target.blocks(); ++s) {
    t.blocks.push_back(BlockRange{s, 1});
  }
  t.log_m_conditional = [log_m = t.log_m](std::size_t s, const Point& x_s, const Point& y) {
    return log_m(with_block(y, BlockRange{s, 1}, x_s));
  };
  t.sample_conditional = [shared](std::size_t s, const Point& y, RngStream& rng) {
    auto cell = shared->cell_of(y);
    if (!cell) {
      throw Error("state is not on the atom grid");
    }
    auto idx = shared->unpack(*cell);
    Eigen::VectorXd w(static_cast<Eigen::Index>(shared->atoms[s].size()));
    for (std::size_t a = 0; a < shared->atoms[s].size(); ++a) {
      idx[s] = a;
      w[static_cast<Eigen::Index>(a)] = shared->probs[static_cast<Eigen::Index>(shared->pack(idx))];
    }
    w /= w.sum();
    Point x(1);
    x[0] = shared->atoms[s][categorical_draw(w, rng)];
    return x;
  };
  return t;
}

ProposalFamily make_proposal(const DiscreteOracleTarget& target, const DiscreteProposal& proposal,
                             std::size_t block) {
  auto shared = std::make_shared<const DiscreteOracleTarget>(target);
  auto cell_from = [shared](const ProposalContext& ctx) -> std::size_t {
    if (ctx.state == nullptr) {
      return 0;
    }
    auto cell = shared->cell_of(*ctx.state);
    if (!cell) {
      throw Error("conditioning state is not on the atom grid");
    }
    return *cell;
  };
  ProposalFamily q;
  q.sample = [shared, proposal, block, cell_from](std::size_t, const ProposalContext& ctx, RngStream& rng) {
    const Eigen::VectorXd pmf = proposal(block, cell_from(ctx));
    Point x(1);
    x[0] = shared->atoms[block][categorical_draw(pmf, rng)];
    return x;
  };
  q.log_q = [shared, proposal, block, cell_from](std::size_t, const Point& x, const ProposalContext& ctx) {
    auto a = atom_index(shared->atoms[block], x[0]);
    if (!a) {
      return kNegInf;
    }
    return std::log(proposal(block, cell_from(ctx))[static_cast<Eigen::Index>(*a)]);
  };
  return q;
}

OracleKernel discrete_oracle_kernel(const DiscreteOracleTarget& target, const DiscreteProposal& proposal,
                                    std::size_t n_particles) {
  target.validate();
  if (n_particles < 2 || n_particles > kMaxOracleParticles) {
    throw ConfigurationError("oracle kernel supports 2 <= N <= " + std::to_string(kMaxOracleParticles) +
                             " (combinatorial size cap)");
  }
  for (const auto& a : target.atoms) {
    if (a.size() > kMaxOracleAtoms) {
      throw ConfigurationError("oracle kernel supports at most " + std::to_string(kMaxOracleAtoms) +
                               " atoms per block (combinatorial size cap)");
    }
  }
  for (std::size_t s = 0; s < target.blocks(); ++s) {
    for (std::size_t cell = 0; cell < target.cells(); ++cell) {
      const Eigen::VectorXd pmf = proposal(s, cell);
      if (static_cast<std::size_t>(pmf.size()) != target.atoms[s].size() || std::abs(pmf.sum() - 1.0) > 1e-12 ||
          pmf.minCoeff() < 0.0) {
        throw ConfigurationError("proposal pmf for block " + std::to_string(s) + " is not a distribution");
      }
      if (!(pmf.minCoeff() > 0.0)) {
        throw DegenerateError("support mismatch: proposal gives zero mass to an atom with positive target mass");
      }
    }
  }
  const TargetDensity density = make_target(target);
  OracleKernel out;
  out.n_particles = n_particles;
  out.blocks = target.blocks();
  out.P = block_kernel(target, density, proposal, 0, n_particles);
  for (std::size_t s = 1; s < target.blocks(); ++s) {
    out.P = out.P * block_kernel(target, density, proposal, s, n_particles);
  }
  return out;
}

Eigen::VectorXd stationary_distribution(const Eigen::MatrixXd& P) {
  const Eigen::Index n = P.rows();
  Eigen::MatrixXd A(n + 1, n);
  A.topRows(n) = P.transpose() - Eigen::MatrixXd::Identity(n, n);
  A.row(n).setOnes();
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n + 1);
  rhs[n] = 1.0;
  return A.colPivHouseholderQr().solve(rhs);
}

double stationarity_deviation(const OracleKernel& kernel, const DiscreteOracleTarget& target) {
  const Eigen::VectorXd stat = stationary_distribution(kernel.P);
  const std::size_t kstates = ipow(kernel.n_particles, kernel.blocks);
  double worst = 0.0;
  for (Eigen::Index i = 0; i < stat.size(); ++i) {
    const std::size_t cell = static_cast<std::size_t>(i) / kstates;
    const double expected = target.probs[static_cast<Eigen::Index>(cell)] / static_cast<double>(kstates);
    worst = std::max(worst, std::abs(stat[i] - expected));
  }
  return worst;
}

DiscreteOracleTarget three_atom_target() {
  DiscreteOracleTarget t;
  t.atoms = {{-1.0, 0.5, 2.0}};
  t.probs = Eigen::Vector3d(0.2, 0.5, 0.3);
  return t;
}

DiscreteProposal three_atom_proposal() {
  return [](std::size_t, std::size_t) -> Eigen::VectorXd { return Eigen::Vector3d(0.6, 0.3, 0.1); };
}

std::vector<OracleCase> standard_cases() {
  std::vector<OracleCase> cases;
  const DiscreteOracleTarget three = three_atom_target();
  const DiscreteProposal exact = [p = three.probs](std::size_t, std::size_t) -> Eigen::VectorXd { return p; };
  cases.push_back({"three atoms, N=2, proposal equal to target", three, exact, 2});
  cases.push_back({"three atoms, N=2, skewed proposal", three, three_atom_proposal(), 2});
  cases.push_back({"three atoms, N=3, skewed proposal", three, three_atom_proposal(), 3});

  DiscreteOracleTarget grid;
  grid.atoms = {{-1.0, 0.0, 1.5}, {0.0, 1.0, 3.0}};
  Eigen::VectorXd p(9);
  p << 0.05, 0.10, 0.15, 0.20, 0.02, 0.08, 0.12, 0.18, 0.10;
  grid.probs = p;
  // proposal for one block leans on the other block's atom index
  const DiscreteProposal conditional = [grid](std::size_t s, std::size_t cell) -> Eigen::VectorXd {
    const auto idx = grid.unpack(cell);
    const double tilt = 1.0 + static_cast<double>(idx[1 - s]);
    Eigen::Vector3d w(1.0, tilt, tilt * tilt);
    return w / w.sum();
  };
  cases.push_back({"two blocks of three atoms, N=3, Gibbs", grid, conditional, 3});
  return cases;
}

}  // namespace miis::oracle
