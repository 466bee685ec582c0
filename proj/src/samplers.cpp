#include "miis/samplers.hpp"

#include <cmath>
#include <cstring>
#include <limits>

namespace miis {

namespace {

bool bitwise_equal(const Point& a, const Point& b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), static_cast<std::size_t>(a.size()) * sizeof(double)) == 0;
}

bool metropolis_accept(double log_ratio, RngStream& rng) {
  if (std::isnan(log_ratio) || log_ratio == -std::numeric_limits<double>::infinity()) {
    return false;
  }
  return log_ratio >= 0.0 || std::log(rng.uniform()) < log_ratio;
}

ChainTrace make_trace(SamplerKind kind, const TargetDensity& target,
                      const std::vector<Functional>& functionals, std::size_t M) {
  ChainTrace trace;
  trace.kind = kind;
  for (const auto& f : functionals) {
    trace.functional_names.push_back(f.name);
  }
  trace.states.resize(static_cast<Eigen::Index>(M), static_cast<Eigen::Index>(target.dim));
  trace.retained.resize(M);
  trace.moved.resize(M, 0);
  return trace;
}

double initial_log_m(const TargetDensity& target, const Point& y0) {
  if (static_cast<std::size_t>(y0.size()) != target.dim) {
    throw Error("initial state has dimension " + std::to_string(y0.size()) + ", target has " +
                std::to_string(target.dim));
  }
  const double lm = target.log_m(y0);
  if (!(lm > -std::numeric_limits<double>::infinity())) {
    throw Error("initial state lies outside the target support");
  }
  return lm;
}

std::size_t initial_index(const SamplerSpec& spec, std::size_t block) {
  return spec.initial_retained.empty() ? 0 : spec.initial_retained.at(block);
}

ChainTrace rwm_run(const SamplerSpec& spec, const TargetDensity& target,
                   const std::vector<Functional>& functionals, const Point& y0, std::size_t M,
                   std::size_t burn_in, const RngStream& rng) {
  const RandomWalkShape shape(spec.rw_scale);
  ChainTrace trace = make_trace(spec.kind, target, functionals, M);
  Point y = y0;
  double log_m_y = initial_log_m(target, y0);
  ++trace.density_evaluations;

  for (std::size_t t = 0; t < burn_in + M; ++t) {
    const RngStream it = rng.derive(t);
    RngStream step = it.derive(0);
    RngStream accept_rng = it.derive(1);
    const Point proposal = y + shape.draw(step);
    const double lm = target.log_m(proposal);
    ++trace.density_evaluations;
    ++trace.mh_proposals;
    const bool accepted = metropolis_accept(lm - log_m_y, accept_rng);
    if (accepted) {
      y = proposal;
      log_m_y = lm;
      ++trace.mh_accepted;
    }
    if (t >= burn_in) {
      const auto r = static_cast<Eigen::Index>(t - burn_in);
      trace.states.row(r) = y.transpose();
      trace.retained[t - burn_in] = {accepted ? 1u : 0u};
      trace.moved[t - burn_in] = accepted ? 1 : 0;
    }
  }
  return trace;
}

ChainTrace mwg_run(const SamplerSpec& spec, const TargetDensity& target,
                   const std::vector<Functional>& functionals, const Point& y0, std::size_t M,
                   std::size_t burn_in, const RngStream& rng) {
  ChainTrace trace = make_trace(spec.kind, target, functionals, M);
  Point y = y0;
  double log_m_y = initial_log_m(target, y0);
  ++trace.density_evaluations;
  const std::size_t d = target.blocks.size();

  for (std::size_t t = 0; t < burn_in + M; ++t) {
    const RngStream it = rng.derive(t);
    const Point y_prev = y;
    for (std::size_t s = 0; s < d; ++s) {
      const BlockRange& b = target.blocks[s];
      const ProposalFamily& q = spec.block_proposals[s];
      const RngStream block_rng = it.derive(s);
      for (std::size_t r = 0; r < spec.inner_repeats; ++r) {
        const RngStream step = block_rng.derive(r);
        RngStream draw_rng = step.derive(0);
        RngStream accept_rng = step.derive(1);
        ProposalContext ctx;
        ctx.state = &y;
        const Point current = extract_block(y, b);
        const Point candidate = q.sample(0, ctx, draw_rng);
        const Point y_candidate = with_block(y, b, candidate);
        const double lm = target.log_m(y_candidate);
        ++trace.density_evaluations;
        ++trace.mh_proposals;
        // joint log m differs from log m_s(.|y(-s)) by a constant in block s
        const double log_ratio = lm - log_m_y + q.log_q(0, current, ctx) - q.log_q(0, candidate, ctx);
        if (metropolis_accept(log_ratio, accept_rng)) {
          y = y_candidate;
          log_m_y = lm;
          ++trace.mh_accepted;
        }
      }
    }
    if (t >= burn_in) {
      const std::size_t r = t - burn_in;
      trace.states.row(static_cast<Eigen::Index>(r)) = y.transpose();
      trace.retained[r] = std::vector<std::size_t>(d, 0);
      trace.moved[r] = bitwise_equal(y, y_prev) ? 0 : 1;
    }
  }
  return trace;
}

ChainTrace gibbs_exact_run(const SamplerSpec& spec, const TargetDensity& target,
                           const std::vector<Functional>& functionals, const Point& y0,
                           std::size_t M, std::size_t burn_in, const RngStream& rng) {
  ChainTrace trace = make_trace(spec.kind, target, functionals, M);
  initial_log_m(target, y0);
  const std::size_t d = target.blocks.size();
  const bool record_rb = static_cast<bool>(spec.conditional_expectation);
  if (record_rb) {
    trace.rb_estimates.assign(d, Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(M),
                                                           static_cast<Eigen::Index>(functionals.size()),
                                                           std::numeric_limits<double>::quiet_NaN()));
  }
  Point y = y0;
  for (std::size_t t = 0; t < burn_in + M; ++t) {
    const RngStream it = rng.derive(t);
    const Point y_prev = y;
    for (std::size_t s = 0; s < d; ++s) {
      const BlockRange& b = target.blocks[s];
      if (record_rb && t >= burn_in) {
        for (std::size_t j = 0; j < functionals.size(); ++j) {
          if (auto v = spec.conditional_expectation(s, functionals[j], y)) {
            trace.rb_estimates[s](static_cast<Eigen::Index>(t - burn_in), static_cast<Eigen::Index>(j)) = *v;
          }
        }
      }
      const RngStream block_rng = it.derive(s);
      for (std::size_t r = 0; r < spec.inner_repeats; ++r) {
        RngStream draw_rng = block_rng.derive(r);
        const Point x = target.sample_conditional(s, y, draw_rng);
        y.segment(static_cast<Eigen::Index>(b.begin), static_cast<Eigen::Index>(b.size)) = x;
        ++trace.exact_draws;
      }
    }
    if (t >= burn_in) {
      const std::size_t r = t - burn_in;
      trace.states.row(static_cast<Eigen::Index>(r)) = y.transpose();
      trace.retained[r] = std::vector<std::size_t>(d, 0);
      trace.moved[r] = bitwise_equal(y, y_prev) ? 0 : 1;
    }
  }
  return trace;
}

}  // namespace

const char* to_string(SamplerKind kind) {
  switch (kind) {
    case SamplerKind::miis_simple:
      return "miis-simple";
    case SamplerKind::miis_antithetic:
      return "miis-antithetic";
    case SamplerKind::miis_random_walk:
      return "miis-random-walk";
    case SamplerKind::miis_gibbs:
      return "miis-gibbs";
    case SamplerKind::gibbs_exact:
      return "gibbs-exact";
    case SamplerKind::mwg:
      return "mwg";
    case SamplerKind::rwm:
      return "rwm";
  }
  return "?";
}

SamplerKind sampler_kind_from_string(std::string_view name) {
  for (auto kind : {SamplerKind::miis_simple, SamplerKind::miis_antithetic, SamplerKind::miis_random_walk,
                    SamplerKind::miis_gibbs, SamplerKind::gibbs_exact, SamplerKind::mwg, SamplerKind::rwm}) {
    if (name == to_string(kind)) {
      return kind;
    }
  }
  throw ConfigurationError("unknown sampler kind '" + std::string(name) + "'");
}

bool is_miis(SamplerKind kind) {
  return kind == SamplerKind::miis_simple || kind == SamplerKind::miis_antithetic ||
         kind == SamplerKind::miis_random_walk || kind == SamplerKind::miis_gibbs;
}

std::optional<std::size_t> ChainTrace::functional_index(std::string_view name) const {
  for (std::size_t j = 0; j < functional_names.size(); ++j) {
    if (functional_names[j] == name) {
      return j;
    }
  }
  return std::nullopt;
}

double ChainTrace::acceptance_rate() const {
  if (kind == SamplerKind::mwg && mh_proposals > 0) {
    return static_cast<double>(mh_accepted) / static_cast<double>(mh_proposals);
  }
  if (moved.empty()) {
    return 0.0;
  }
  std::size_t count = 0;
  for (auto m : moved) {
    count += m;
  }
  return static_cast<double>(count) / static_cast<double>(moved.size());
}

void SamplerSpec::validate(const TargetDensity& target) const {
  if (!target.log_m) {
    throw ConfigurationError("target must provide log_m");
  }
  auto check_retained = [this](std::size_t blocks, std::size_t n) {
    if (initial_retained.empty()) {
      return;
    }
    if (initial_retained.size() != blocks) {
      throw ConfigurationError("initial_retained needs one index per block");
    }
    for (auto k : initial_retained) {
      if (k >= n) {
        throw ConfigurationError("initial retained index out of range");
      }
    }
  };
  switch (kind) {
    case SamplerKind::miis_simple:
    case SamplerKind::miis_antithetic:
    case SamplerKind::miis_random_walk: {
      const CisVariant expected = kind == SamplerKind::miis_simple       ? CisVariant::simple
                                  : kind == SamplerKind::miis_antithetic ? CisVariant::antithetic
                                                                         : CisVariant::random_walk;
      if (cis.variant != expected) {
        throw ConfigurationError(std::string(to_string(kind)) + " needs a '" + to_string(expected) +
                                 "' CIS configuration");
      }
      cis.validate();
      check_retained(1, cis.n_particles);
      break;
    }
    case SamplerKind::miis_gibbs:
      target.validate_blocks();
      if (!target.log_m_conditional) {
        throw ConfigurationError("miis-gibbs needs log_m_conditional on the target");
      }
      if (block_cis.size() != target.blocks.size()) {
        throw ConfigurationError("miis-gibbs needs one CIS configuration per block");
      }
      for (const auto& c : block_cis) {
        c.validate();
      }
      if (!initial_retained.empty()) {
        if (initial_retained.size() != target.blocks.size()) {
          throw ConfigurationError("initial_retained needs one index per block");
        }
        for (std::size_t s = 0; s < block_cis.size(); ++s) {
          if (initial_retained[s] >= block_cis[s].n_particles) {
            throw ConfigurationError("initial retained index out of range");
          }
        }
      }
      break;
    case SamplerKind::gibbs_exact:
      target.validate_blocks();
      if (!target.sample_conditional) {
        throw ConfigurationError("gibbs-exact needs analytic conditional samplers on the target");
      }
      if (inner_repeats < 1) {
        throw ConfigurationError("inner_repeats must be at least 1");
      }
      break;
    case SamplerKind::mwg:
      target.validate_blocks();
      if (block_proposals.size() != target.blocks.size()) {
        throw ConfigurationError("mwg needs one conditional proposal per block");
      }
      for (const auto& q : block_proposals) {
        if (!q.sample || !q.log_q) {
          throw ConfigurationError("mwg proposals must provide sample and log_q");
        }
      }
      if (inner_repeats < 1) {
        throw ConfigurationError("inner_repeats must be at least 1");
      }
      break;
    case SamplerKind::rwm:
      if (rw_scale.rows() != static_cast<Eigen::Index>(target.dim) ||
          rw_scale.cols() != static_cast<Eigen::Index>(target.dim)) {
        throw ConfigurationError("rwm needs a dim x dim proposal covariance");
      }
      break;
  }
}

ChainTrace miis_run(const SamplerSpec& spec, const TargetDensity& target,
                    const std::vector<Functional>& functionals, const Point& y0, std::size_t M,
                    std::size_t burn_in, const RngStream& rng) {
  if (spec.kind != SamplerKind::miis_simple && spec.kind != SamplerKind::miis_antithetic &&
      spec.kind != SamplerKind::miis_random_walk) {
    throw ConfigurationError(std::string("miis_run cannot drive ") + to_string(spec.kind));
  }
  spec.validate(target);
  ChainTrace trace = make_trace(spec.kind, target, functionals, M);
  trace.cis_estimates.resize(static_cast<Eigen::Index>(M), static_cast<Eigen::Index>(functionals.size()));

  Point y = y0;
  double log_m_y = initial_log_m(target, y0);
  ++trace.density_evaluations;
  std::size_t k = initial_index(spec, 0);

  for (std::size_t t = 0; t < burn_in + M; ++t) {
    const RngStream block_rng = rng.derive(t).derive(0);
    ParticleSystem ps;
    std::size_t next;
    try {
      ps = cis_step(y, k, spec.cis, target, block_rng, log_m_y);
      RngStream select_rng = block_rng.derive(kSelectStreamTag);
      next = categorical_draw(ps.weights, select_rng);
    } catch (const Error& e) {
      throw ChainAbort(t, e.what());
    }
    trace.density_evaluations += ps.density_evaluations;
    const bool moved = !bitwise_equal(ps.particles[next], y);
    y = ps.particles[next];
    log_m_y = ps.log_target[static_cast<Eigen::Index>(next)];
    k = next;
    if (t >= burn_in) {
      const std::size_t r = t - burn_in;
      const auto rr = static_cast<Eigen::Index>(r);
      trace.states.row(rr) = y.transpose();
      trace.retained[r] = {k};
      trace.moved[r] = moved ? 1 : 0;
      for (std::size_t j = 0; j < functionals.size(); ++j) {
        trace.cis_estimates(rr, static_cast<Eigen::Index>(j)) = cis_estimate(ps, functionals[j]);
      }
    }
  }
  return trace;
}

ChainTrace miis_gibbs_run(const SamplerSpec& spec, const TargetDensity& target,
                          const std::vector<Functional>& functionals, const Point& y0,
                          std::size_t M, std::size_t burn_in, const RngStream& rng) {
  if (spec.kind != SamplerKind::miis_gibbs) {
    throw ConfigurationError(std::string("miis_gibbs_run cannot drive ") + to_string(spec.kind));
  }
  spec.validate(target);
  initial_log_m(target, y0);
  const std::size_t d = target.blocks.size();
  ChainTrace trace = make_trace(spec.kind, target, functionals, M);
  trace.rb_estimates.assign(
      d, Eigen::MatrixXd(static_cast<Eigen::Index>(M), static_cast<Eigen::Index>(functionals.size())));

  Point y = y0;
  std::vector<std::size_t> k(d);
  for (std::size_t s = 0; s < d; ++s) {
    k[s] = initial_index(spec, s);
  }

  for (std::size_t t = 0; t < burn_in + M; ++t) {
    const RngStream it = rng.derive(t);
    const Point y_prev = y;
    for (std::size_t s = 0; s < d; ++s) {
      const RngStream block_rng = it.derive(s);
      ParticleSystem ps;
      try {
        ps = cis_step_conditional(s, y, k[s], spec.block_cis[s], target, block_rng);
        RngStream select_rng = block_rng.derive(kSelectStreamTag);
        k[s] = categorical_draw(ps.weights, select_rng);
      } catch (const Error& e) {
        throw ChainAbort(t, "block " + std::to_string(s) + ": " + e.what());
      }
      trace.density_evaluations += ps.density_evaluations;
      if (t >= burn_in) {
        const auto rr = static_cast<Eigen::Index>(t - burn_in);
        for (std::size_t j = 0; j < functionals.size(); ++j) {
          trace.rb_estimates[s](rr, static_cast<Eigen::Index>(j)) =
              cis_estimate_conditional(ps, s, y, target, functionals[j]);
        }
      }
      const BlockRange& b = target.blocks[s];
      y.segment(static_cast<Eigen::Index>(b.begin), static_cast<Eigen::Index>(b.size)) = ps.particles[k[s]];
    }
    if (t >= burn_in) {
      const std::size_t r = t - burn_in;
      trace.states.row(static_cast<Eigen::Index>(r)) = y.transpose();
      trace.retained[r] = k;
      trace.moved[r] = bitwise_equal(y, y_prev) ? 0 : 1;
    }
  }
  return trace;
}

ChainTrace baseline_run(const SamplerSpec& spec, const TargetDensity& target,
                        const std::vector<Functional>& functionals, const Point& y0,
                        std::size_t M, std::size_t burn_in, const RngStream& rng) {
  spec.validate(target);
  switch (spec.kind) {
    case SamplerKind::rwm:
      return rwm_run(spec, target, functionals, y0, M, burn_in, rng);
    case SamplerKind::mwg:
      return mwg_run(spec, target, functionals, y0, M, burn_in, rng);
    case SamplerKind::gibbs_exact:
      return gibbs_exact_run(spec, target, functionals, y0, M, burn_in, rng);
    default:
      throw ConfigurationError(std::string("baseline_run cannot drive ") + to_string(spec.kind));
  }
}

ChainTrace run_chain(const SamplerSpec& spec, const TargetDensity& target,
                     const std::vector<Functional>& functionals, const Point& y0, std::size_t M,
                     std::size_t burn_in, const RngStream& rng) {
  switch (spec.kind) {
    case SamplerKind::miis_simple:
    case SamplerKind::miis_antithetic:
    case SamplerKind::miis_random_walk:
      return miis_run(spec, target, functionals, y0, M, burn_in, rng);
    case SamplerKind::miis_gibbs:
      return miis_gibbs_run(spec, target, functionals, y0, M, burn_in, rng);
    default:
      return baseline_run(spec, target, functionals, y0, M, burn_in, rng);
  }
}

}  // namespace miis
