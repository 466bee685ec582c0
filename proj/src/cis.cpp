#include "miis/cis.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace miis {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

using BlockLogDensity = std::function<double(const Point&)>;

ParticleSystem run_cis(const Point& y, std::size_t k, const CisConfig& cfg,
                       const BlockLogDensity& log_density, const Point* state,
                       const RngStream& rng, std::optional<double> retained_log_m) {
  cfg.validate();
  const std::size_t n = cfg.n_particles;
  if (k >= n) {
    throw Error("cis_step: retained index " + std::to_string(k) + " outside 0.." +
                std::to_string(n - 1));
  }

  ParticleSystem ps;
  ps.retained = k;
  ps.particles.resize(n);

  if (cfg.aux.kind != AuxKind::none) {
    RngStream aux_rng = rng.derive(kAuxStreamTag);
    ps.xi = cfg.aux.sample(y, aux_rng);
  }
  ProposalContext ctx;
  ctx.xi = ps.xi ? &*ps.xi : nullptr;
  ctx.state = state;

  ps.particles[k] = y;
  if (cfg.variant == CisVariant::antithetic) {
    const std::size_t half = n / 2;
    const std::size_t pinned_pair = k % half;
    for (std::size_t p = 0; p < half; ++p) {
      if (p == pinned_pair) {
        const std::size_t partner = k < half ? k + half : k - half;
        ps.particles[partner] = antithetic_partner(cfg.proposal, y, ctx);
        continue;
      }
      RngStream particle_rng = rng.derive(p);
      ps.particles[p] = cfg.proposal.sample(p, ctx, particle_rng);
      ps.particles[p + half] = antithetic_partner(cfg.proposal, ps.particles[p], ctx);
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      if (i == k) {
        continue;
      }
      RngStream particle_rng = rng.derive(i);
      ps.particles[i] = cfg.proposal.sample(i, ctx, particle_rng);
    }
  }

  ps.log_target.resize(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    double lm;
    if (i == k && retained_log_m) {
      lm = *retained_log_m;
    } else {
      lm = log_density(ps.particles[i]);
      ++ps.density_evaluations;
    }
    if (std::isnan(lm)) {
      throw DegenerateError("target log-density is NaN at particle " + std::to_string(i));
    }
    ps.log_target[static_cast<Eigen::Index>(i)] = lm;
  }
  if (ps.log_target[static_cast<Eigen::Index>(k)] == kNegInf) {
    throw Error("cis_step: retained point lies outside the target support");
  }

  ps.log_w.resize(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    if (cfg.variant == CisVariant::random_walk) {
      // q and eta share phi, so log q(x|xi) and log eta(xi|x) cancel
      ps.log_w[ii] = ps.log_target[ii];
      continue;
    }
    const double lw = cis_log_weight(cfg, i, ps.particles[i], ps.log_target[ii], ps.xi, ctx);
    if (i == k && !std::isfinite(lw)) {
      throw DegenerateError("degenerate particle system: proposal density vanishes at the retained particle");
    }
    ps.log_w[ii] = lw;
  }

  if (cfg.log_weight_bound) {
    const double limit = *cfg.log_weight_bound + std::log1p(1e-9);
    for (Eigen::Index i = 0; i < ps.log_w.size(); ++i) {
      if (ps.log_w[i] > limit) {
        throw WeightBoundError("raw weight of particle " + std::to_string(i) + " is exp(" +
                               std::to_string(ps.log_w[i]) + "), above the declared bound exp(" +
                               std::to_string(*cfg.log_weight_bound) + ")");
      }
    }
  }

  try {
    ps.weights = normalize_log_weights(ps.log_w);
  } catch (const DegenerateError& e) {
    throw DegenerateError(std::string("degenerate particle system: ") + e.what());
  }
  return ps;
}

}  // namespace

const char* to_string(CisVariant v) {
  switch (v) {
    case CisVariant::simple:
      return "simple";
    case CisVariant::antithetic:
      return "antithetic";
    case CisVariant::random_walk:
      return "random-walk";
  }
  return "?";
}

void CisConfig::validate() const {
  if (n_particles == 0) {
    throw ConfigurationError("CIS needs at least one particle");
  }
  if (!proposal.sample || !proposal.log_q) {
    throw ConfigurationError("CIS proposal must provide sample and log_q");
  }
  if (aux.kind != AuxKind::none && (!aux.sample || !aux.log_eta)) {
    throw ConfigurationError("auxiliary kernel must provide sample and log_eta");
  }
  switch (variant) {
    case CisVariant::simple:
      if (n_particles < 3 && !allow_small_n) {
        throw ConfigurationError("simple importance sampling needs N >= 3 for uniform ergodicity");
      }
      break;
    case CisVariant::antithetic:
      if (n_particles % 2 != 0) {
        throw ConfigurationError("antithetic sampling needs an even number of particles");
      }
      if (n_particles / 2 < 3 && !allow_small_n) {
        throw ConfigurationError("antithetic sampling needs N/2 >= 3 for uniform ergodicity");
      }
      if (!proposal.has_antithetic()) {
        throw ConfigurationError("antithetic sampling needs a proposal with cdf and inverse_cdf (or a mirror)");
      }
      break;
    case CisVariant::random_walk:
      if (aux.kind != AuxKind::random_walk) {
        throw ConfigurationError("random-walk sampling needs a random-walk auxiliary kernel");
      }
      if (!proposal.random_walk || proposal.random_walk != aux.random_walk) {
        throw ConfigurationError("random-walk sampling needs q(.|xi) and eta(.|y) built from the same phi");
      }
      if (n_particles < 3 && !allow_small_n) {
        throw ConfigurationError("random-walk importance sampling needs N >= 3");
      }
      break;
  }
}

double cis_log_weight(const CisConfig& cfg, std::size_t i, const Point& x, double log_m_x,
                      const std::optional<Point>& xi, const ProposalContext& ctx) {
  if (log_m_x == kNegInf) {
    return kNegInf;
  }
  const double lq = cfg.proposal.log_q(i, x, ctx);
  if (lq == kNegInf) {
    // m > 0 where q = 0: the weight is unbounded
    return std::numeric_limits<double>::infinity();
  }
  double lw = log_m_x - lq;
  if (cfg.aux.kind != AuxKind::none) {
    lw += cfg.aux.log_eta(*xi, x);
  }
  return lw;
}

Point antithetic_partner(const ProposalFamily& proposal, const Point& x, const ProposalContext& ctx) {
  if (proposal.mirror) {
    return proposal.mirror(x, ctx);
  }
  Point out(x.size());
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    const auto jj = static_cast<std::size_t>(j);
    out[j] = proposal.inverse_cdf(jj, 1.0 - proposal.cdf(jj, x[j], ctx), ctx);
  }
  return out;
}

ParticleSystem cis_step(const Point& y, std::size_t k, const CisConfig& cfg,
                        const TargetDensity& target, const RngStream& rng,
                        std::optional<double> log_m_y) {
  if (static_cast<std::size_t>(y.size()) != target.dim) {
    throw Error("cis_step: state dimension does not match the target");
  }
  return run_cis(y, k, cfg, target.log_m, nullptr, rng, log_m_y);
}

double cis_estimate(const ParticleSystem& ps, const Functional& f) {
  double total = 0.0;
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const double w = ps.weights[static_cast<Eigen::Index>(i)];
    if (w == 0.0) {
      continue;
    }
    const double v = f.f(ps.particles[i]);
    if (!std::isfinite(v)) {
      if (w > 1e-300) {
        throw Error("cis_estimate: functional '" + f.name + "' is not finite at particle " +
                    std::to_string(i));
      }
      continue;
    }
    total += w * v;
  }
  return total;
}

ParticleSystem cis_step_conditional(std::size_t s, const Point& y, std::size_t k_s,
                                    const CisConfig& cfg_s, const TargetDensity& target,
                                    const RngStream& rng) {
  if (!target.has_blocks() || !target.log_m_conditional) {
    throw ConfigurationError("conditional CIS needs a target with block structure and log_m_conditional");
  }
  if (s >= target.blocks.size()) {
    throw ConfigurationError("block index " + std::to_string(s) + " out of range");
  }
  const Point y_block = extract_block(y, target.blocks[s]);
  auto log_density = [&target, s, &y](const Point& x_s) { return target.log_m_conditional(s, x_s, y); };
  return run_cis(y_block, k_s, cfg_s, log_density, &y, rng, std::nullopt);
}

double cis_estimate_conditional(const ParticleSystem& ps, std::size_t s, const Point& y,
                                const TargetDensity& target, const Functional& f) {
  const BlockRange& b = target.blocks.at(s);
  double total = 0.0;
  Point full = y;
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const double w = ps.weights[static_cast<Eigen::Index>(i)];
    if (w == 0.0) {
      continue;
    }
    full.segment(static_cast<Eigen::Index>(b.begin), static_cast<Eigen::Index>(b.size)) = ps.particles[i];
    const double v = f.f(full);
    if (!std::isfinite(v)) {
      if (w > 1e-300) {
        throw Error("cis_estimate: functional '" + f.name + "' is not finite at particle " +
                    std::to_string(i));
      }
      continue;
    }
    total += w * v;
  }
  return total;
}

UnbiasednessResult unbiasedness_check(const CisConfig& cfg, const TargetDensity& target,
                                      const std::function<Point(RngStream&)>& exact_sampler,
                                      const Functional& f, std::size_t replications,
                                      const RngStream& rng) {
  if (replications < 2) {
    throw Error("unbiasedness_check needs at least two replications");
  }
  double sum = 0.0;
  double sum_sq = 0.0;
  for (std::size_t r = 0; r < replications; ++r) {
    RngStream rep = rng.derive(r);
    RngStream init = rep.derive(kAuxStreamTag ^ 0xFF);
    const Point y = exact_sampler(init);
    const auto k = static_cast<std::size_t>(init.uniform() * static_cast<double>(cfg.n_particles));
    const ParticleSystem ps = cis_step(y, std::min(k, cfg.n_particles - 1), cfg, target, rep);
    const double e = cis_estimate(ps, f);
    sum += e;
    sum_sq += e * e;
  }
  const double n = static_cast<double>(replications);
  const double mean = sum / n;
  const double var = std::max(0.0, (sum_sq - n * mean * mean) / (n - 1.0));
  return {mean, std::sqrt(var / n)};
}

}  // namespace miis
