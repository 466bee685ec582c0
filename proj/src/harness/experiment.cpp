#include "miis/harness/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <thread>

#include "miis/estimators.hpp"
#include "miis/models/bvn.hpp"
#include "miis/models/discrete_oracle.hpp"
#include "miis/models/mmpp.hpp"
#include "miis/rng.hpp"

namespace miis::harness {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr std::uint64_t kInitStreamTag = 0xB0000000'00000001ULL;
constexpr std::uint64_t kPilotSeedSalt = 0x70696c6f74ULL;

std::string method_path(std::size_t i) { return "methods[" + std::to_string(i) + "]"; }

bool is_gibbs_type(SamplerKind k) { return k == SamplerKind::miis_gibbs || k == SamplerKind::gibbs_exact; }

// What one estimand needs from the raw functionals.
struct Estimand {
  std::string name;
  std::vector<std::string> inputs;
};

struct MethodPlan {
  SamplerSpec spec;
  std::map<std::string, ControlVariateSet> cv_sets;
};

struct DatasetPlan {
  TargetDensity target;
  std::vector<MethodPlan> methods;
  Point init;
  std::function<Point(RngStream&)> init_draw;  // per-replication start, prior-draw only
};

struct Plan {
  std::vector<Functional> raw;
  std::vector<Estimand> estimands;
  std::vector<DatasetPlan> datasets;
  std::vector<std::map<std::string, double>> truth;  // empty maps: pooled later
};

const Functional& find_raw(const std::vector<Functional>& raw, const std::string& name, const std::string& path) {
  for (const auto& f : raw) {
    if (f.name == name) {
      return f;
    }
  }
  std::string known;
  for (const auto& f : raw) {
    known += (known.empty() ? "" : ", ") + f.name;
  }
  throw ConfigError(path, "unknown functional '" + name + "' (known: " + known + ")");
}

std::vector<Estimand> resolve_estimands(const ExperimentConfig& cfg, const std::vector<Functional>& raw) {
  std::vector<Estimand> out;
  std::set<std::string> seen;
  for (std::size_t i = 0; i < cfg.functionals.size(); ++i) {
    const std::string& name = cfg.functionals[i];
    const std::string path = "functionals[" + std::to_string(i) + "]";
    if (!seen.insert(name).second) {
      throw ConfigError(path, "duplicate functional '" + name + "'");
    }
    Estimand e{name, {}};
    if (cfg.experiment == ExperimentKind::bvn) {
      if (name != "mean" && name != "variance" && name != "covariance" && name != "tail") {
        throw ConfigError(path, "unknown functional '" + name + "' (mean, variance, covariance, tail)");
      }
      e.inputs = bvn::estimand_inputs(name);
    } else {
      find_raw(raw, name, path);
      e.inputs = {name};
    }
    out.push_back(std::move(e));
  }
  return out;
}

double combine(const ExperimentConfig& cfg, const Estimand& e, const std::map<std::string, double>& raw) {
  if (cfg.experiment == ExperimentKind::bvn) {
    return bvn::combine_estimand(e.name, raw);
  }
  return raw.at(e.name);
}

// Default control variates for raw functional `f`, as (g, block) pairs over
// the two BVN blocks. Full-target samplers drop the block.
std::vector<CvEntry> default_cv(const ExperimentConfig& cfg, const std::string& f, bool gibbs) {
  std::vector<CvEntry> out;
  auto add = [&out, gibbs](const std::string& g, std::size_t block) {
    CvEntry c{g, gibbs ? std::optional<std::size_t>(block) : std::nullopt};
    for (const auto& prev : out) {
      if (prev.g == c.g && prev.block == c.block) {
        return;
      }
    }
    out.push_back(c);
  };
  switch (cfg.experiment) {
    case ExperimentKind::bvn:
      if (f == "x1" || f == "x2") {
        add("x1", 0);
        add("x2", 1);
      } else if (f == "x1sq" || f == "x2sq") {
        add("x1sq", 0);
        add("x2sq", 1);
        add("x1", 0);
        add("x2", 1);
      } else if (f == "x1x2") {
        add("x1x2", 0);
        add("x1x2", 1);
        add("x1", 0);
        add("x2", 1);
        add("x1sq", 0);
        add("x2sq", 1);
      } else {
        add(f, 0);
        add("x1", 0);
        add("x2", 1);
      }
      break;
    case ExperimentKind::mmpp_sim:
    case ExperimentKind::mmpp_data:
      for (const char* g : {"psi1", "psi2", "q12", "q21"}) {
        add(g, 0);
      }
      break;
    case ExperimentKind::oracle:
      add(f, 0);
      if (f != "x") {
        add("x", 0);
      }
      break;
  }
  return out;
}

std::map<std::string, ControlVariateSet> build_cv_sets(const ExperimentConfig& cfg, std::size_t mi,
                                                       const std::vector<Functional>& raw,
                                                       const std::vector<Estimand>& estimands,
                                                       std::size_t n_blocks) {
  const MethodConfig& m = cfg.methods[mi];
  std::map<std::string, ControlVariateSet> out;
  if (std::find(m.estimators.begin(), m.estimators.end(), EstimatorKind::cv) == m.estimators.end()) {
    return out;
  }
  const bool gibbs = is_gibbs_type(m.sampler);
  const std::string base = method_path(mi) + ".cv_sets";
  for (const auto& [key, entries] : m.cv_sets) {
    find_raw(raw, key, base + "." + key);
    for (std::size_t j = 0; j < entries.size(); ++j) {
      const std::string path = base + "." + key + "[" + std::to_string(j) + "]";
      find_raw(raw, entries[j].g, path + ".g");
      if (gibbs && !entries[j].block) {
        throw ConfigError(path + ".block", "Gibbs-type samplers need a block index");
      }
      if (!gibbs && entries[j].block) {
        throw ConfigError(path + ".block", "full-target samplers take no block index");
      }
      if (entries[j].block && *entries[j].block >= n_blocks) {
        throw ConfigError(path + ".block", "block index out of range");
      }
    }
  }
  for (const auto& e : estimands) {
    for (const auto& r : e.inputs) {
      if (out.count(r)) {
        continue;
      }
      auto it = m.cv_sets.find(r);
      const std::vector<CvEntry> entries = it != m.cv_sets.end() ? it->second : default_cv(cfg, r, gibbs);
      ControlVariateSet set;
      for (const auto& c : entries) {
        set.push_back({find_raw(raw, c.g, base), c.block});
      }
      out.emplace(r, std::move(set));
    }
  }
  return out;
}

double scale_factor(const MethodConfig& m, std::size_t dim) {
  return m.rw_scale_factor.value_or(2.38 * 2.38 / static_cast<double>(dim));
}

// Proposal ingredients an experiment offers to the samplers.
struct Ingredients {
  std::optional<ProposalFamily> independence;                 // miis-simple / antithetic
  std::vector<ProposalFamily> conditional;                    // per block, miis-gibbs and mwg
  std::optional<Eigen::MatrixXd> rw_shape;                    // rwm and miis-random-walk
  ConditionalExpectation conditional_expectation;             // gibbs-exact
};

SamplerSpec build_spec(const MethodConfig& m, std::size_t mi, const TargetDensity& target,
                       const Ingredients& ing) {
  SamplerSpec spec;
  spec.kind = m.sampler;
  spec.inner_repeats = m.inner_repeats;
  const std::string path = method_path(mi);
  auto unavailable = [&]() {
    return ConfigError(path + ".sampler",
                       std::string("sampler ") + to_string(m.sampler) + " is not available for this experiment");
  };
  switch (m.sampler) {
    case SamplerKind::miis_simple:
    case SamplerKind::miis_antithetic:
      if (!ing.independence) {
        throw unavailable();
      }
      spec.cis.n_particles = m.n_particles;
      spec.cis.variant = m.sampler == SamplerKind::miis_simple ? CisVariant::simple : CisVariant::antithetic;
      spec.cis.proposal = *ing.independence;
      spec.cis.allow_small_n = m.allow_small_n;
      break;
    case SamplerKind::miis_random_walk: {
      if (!ing.rw_shape) {
        throw unavailable();
      }
      const RandomWalkPair pair = make_random_walk(scale_factor(m, target.dim) * *ing.rw_shape);
      spec.cis.n_particles = m.n_particles;
      spec.cis.variant = CisVariant::random_walk;
      spec.cis.proposal = pair.proposal;
      spec.cis.aux = pair.aux;
      spec.cis.allow_small_n = m.allow_small_n;
      break;
    }
    case SamplerKind::miis_gibbs:
      if (ing.conditional.empty()) {
        throw unavailable();
      }
      for (const auto& q : ing.conditional) {
        CisConfig c;
        c.n_particles = m.n_particles;
        c.variant = m.variant == "antithetic" ? CisVariant::antithetic : CisVariant::simple;
        c.proposal = q;
        c.allow_small_n = m.allow_small_n;
        spec.block_cis.push_back(c);
      }
      break;
    case SamplerKind::gibbs_exact:
      if (!target.sample_conditional) {
        throw unavailable();
      }
      spec.conditional_expectation = ing.conditional_expectation;
      break;
    case SamplerKind::mwg:
      if (ing.conditional.empty()) {
        throw unavailable();
      }
      spec.block_proposals = ing.conditional;
      break;
    case SamplerKind::rwm:
      if (!ing.rw_shape) {
        throw unavailable();
      }
      spec.rw_scale = scale_factor(m, target.dim) * *ing.rw_shape;
      break;
  }
  try {
    spec.validate(target);
  } catch (const ConfigError&) {
    throw;
  } catch (const ConfigurationError& e) {
    throw ConfigError(path, e.what());
  }
  return spec;
}

Point vector_init(const ExperimentConfig& cfg, std::size_t dim) {
  if (cfg.init.vector.size() != dim) {
    throw ConfigError("init", "expected " + std::to_string(dim) + " coordinates");
  }
  return Eigen::Map<const Eigen::VectorXd>(cfg.init.vector.data(), static_cast<Eigen::Index>(dim));
}

void bad_init(const ExperimentConfig& cfg) {
  throw ConfigError("init", "'" + cfg.init.mode + "' is not available for experiment " + to_string(cfg.experiment));
}

void plan_bvn(const ExperimentConfig& cfg, Plan& plan) {
  const double rho = *cfg.rho;
  plan.raw = bvn::raw_functionals();
  plan.estimands = resolve_estimands(cfg, plan.raw);
  DatasetPlan ds;
  ds.target = bvn::make_target(rho);
  const std::string& mode = cfg.init.mode;
  if (mode == "default" || mode == "origin" || mode == "truth") {
    ds.init = Point::Zero(2);
  } else if (mode == "vector") {
    ds.init = vector_init(cfg, 2);
  } else {
    bad_init(cfg);
  }
  Ingredients ing;
  ing.independence = bvn::joint_proposal(rho);
  ing.conditional = {bvn::conditional_proposal(0, rho), bvn::conditional_proposal(1, rho)};
  Eigen::Matrix2d sigma;
  sigma << 1.0, rho, rho, 1.0;
  ing.rw_shape = Eigen::MatrixXd(sigma);
  ing.conditional_expectation = bvn::conditional_expectation(rho);
  for (std::size_t i = 0; i < cfg.methods.size(); ++i) {
    ds.methods.push_back({build_spec(cfg.methods[i], i, ds.target, ing),
                          build_cv_sets(cfg, i, plan.raw, plan.estimands, 2)});
  }
  std::map<std::string, double> truth;
  for (const auto& e : plan.estimands) {
    truth[e.name] = bvn::truth(e.name, rho);
  }
  plan.datasets.push_back(std::move(ds));
  plan.truth.push_back(std::move(truth));
}

void plan_oracle(const ExperimentConfig& cfg, Plan& plan) {
  const oracle::DiscreteOracleTarget grid = oracle::three_atom_target();
  plan.raw = {{"x", [](const Point& y) { return y[0]; }}, {"x2", [](const Point& y) { return y[0] * y[0]; }}};
  plan.estimands = resolve_estimands(cfg, plan.raw);
  DatasetPlan ds;
  ds.target = oracle::make_target(grid);
  Eigen::Index mode_cell = 0;
  grid.probs.maxCoeff(&mode_cell);
  if (cfg.init.mode == "default" || cfg.init.mode == "origin") {
    ds.init = grid.point(static_cast<std::size_t>(mode_cell));
  } else if (cfg.init.mode == "vector") {
    ds.init = vector_init(cfg, 1);
    if (!grid.cell_of(ds.init)) {
      throw ConfigError("init", "the oracle chain must start on an atom");
    }
  } else {
    bad_init(cfg);
  }
  Ingredients ing;
  const ProposalFamily q = oracle::make_proposal(grid, oracle::three_atom_proposal(), 0);
  ing.independence = q;
  ing.conditional = {q};
  auto shared = std::make_shared<const oracle::DiscreteOracleTarget>(grid);
  ing.conditional_expectation = [shared](std::size_t s, const Functional& f,
                                         const Point& y) -> std::optional<double> {
    auto cell = shared->cell_of(y);
    if (!cell) {
      return std::nullopt;
    }
    auto idx = shared->unpack(*cell);
    double mass = 0.0;
    double total = 0.0;
    Point z = y;
    for (std::size_t a = 0; a < shared->atoms[s].size(); ++a) {
      idx[s] = a;
      const double p = shared->probs[static_cast<Eigen::Index>(shared->pack(idx))];
      z[static_cast<Eigen::Index>(s)] = shared->atoms[s][a];
      mass += p;
      total += p * f.f(z);
    }
    return total / mass;
  };
  for (std::size_t i = 0; i < cfg.methods.size(); ++i) {
    ds.methods.push_back({build_spec(cfg.methods[i], i, ds.target, ing),
                          build_cv_sets(cfg, i, plan.raw, plan.estimands, 1)});
  }
  std::map<std::string, double> truth;
  for (const auto& e : plan.estimands) {
    const Functional& f = find_raw(plan.raw, e.name, "functionals");
    double v = 0.0;
    for (std::size_t c = 0; c < grid.cells(); ++c) {
      v += grid.probs[static_cast<Eigen::Index>(c)] * f.f(grid.point(c));
    }
    truth[e.name] = v;
  }
  plan.datasets.push_back(std::move(ds));
  plan.truth.push_back(std::move(truth));
}

void plan_mmpp(const ExperimentConfig& cfg, Plan& plan) {
  plan.raw = mmpp::natural_functionals();
  plan.estimands = resolve_estimands(cfg, plan.raw);
  const bool simulated = cfg.experiment == ExperimentKind::mmpp_sim;
  const mmpp::Natural true_params{cfg.psi[0], cfg.psi[1], cfg.q[0], cfg.q[1]};

  std::vector<std::vector<double>> data;
  double window = cfg.window;
  if (simulated) {
    const mmpp::Params p = mmpp::two_state(cfg.psi[0], cfg.psi[1], cfg.q[0], cfg.q[1]);
    const RngStream data_rng(cfg.data_seed.value_or(cfg.base_seed));
    for (std::size_t d = 0; d < cfg.datasets; ++d) {
      RngStream r = data_rng.derive(d);
      data.push_back(mmpp::simulate(p, window, r));
    }
  } else {
    mmpp::EventFile ef;
    try {
      ef = mmpp::read_events_file(cfg.events_file);
    } catch (const Error& e) {
      throw ConfigError("model.events_file", e.what());
    }
    if (window <= 0.0) {
      if (!ef.window) {
        throw ConfigError("model.window", "required when the event file has no window header");
      }
      window = *ef.window;
    }
    try {
      mmpp::validate_times(ef.times, window);
    } catch (const Error& e) {
      throw ConfigError("model.events_file", e.what());
    }
    data.push_back(std::move(ef.times));
  }
  const mmpp::Natural prior_means = cfg.prior_means.value_or(true_params);

  // deterministic start on the natural scale, used for the pilot as well
  mmpp::Natural start{};
  const std::string& mode = cfg.init.mode;
  if (mode == "vector") {
    const Point v = vector_init(cfg, 4);
    start = {v[0], v[1], v[2], v[3]};
    if (!(start[0] > 0.0 && start[1] > start[0] && start[2] > 0.0 && start[3] > 0.0)) {
      throw ConfigError("init", "expected psi1 > 0, psi2 > psi1 and positive rates");
    }
  } else if (simulated && (mode == "default" || mode == "truth")) {
    start = true_params;
  } else if (mode == "prior-draw" || (!simulated && mode == "default")) {
    start = prior_means;
    if (!(start[1] > start[0])) {
      throw ConfigError("init", "prior means do not order psi1 < psi2; give an explicit init vector");
    }
  } else {
    bad_init(cfg);
  }
  const mmpp::Tilde start_tilde = mmpp::to_tilde(start);
  const Point start_point = Eigen::Map<const Eigen::Vector4d>(start_tilde.data());

  bool needs_pilot = false;
  for (const auto& m : cfg.methods) {
    needs_pilot = needs_pilot || m.sampler == SamplerKind::rwm || m.sampler == SamplerKind::miis_random_walk;
  }

  for (std::size_t d = 0; d < data.size(); ++d) {
    mmpp::Model model;
    model.prior_means = prior_means;
    model.window = window;
    model.times = data[d];
    model.loglik_options.normalize_stride = cfg.normalize_stride;
    DatasetPlan ds;
    ds.target = mmpp::make_target(model);
    if (!std::isfinite(ds.target.log_m(start_point))) {
      throw ConfigError("init", "the starting point has zero posterior density");
    }
    ds.init = start_point;
    if (mode == "prior-draw") {
      ds.init_draw = [prior_means](RngStream& rng) {
        for (;;) {
          mmpp::Natural th{};
          for (std::size_t j = 0; j < 4; ++j) {
            th[j] = -prior_means[j] * std::log(rng.uniform());
          }
          if (th[1] > th[0]) {
            const mmpp::Tilde t = mmpp::to_tilde(th);
            return Point(Eigen::Map<const Eigen::Vector4d>(t.data()));
          }
        }
      };
    }
    Ingredients ing;
    if (needs_pilot) {
      if (cfg.pilot_covariance) {
        ing.rw_shape = *cfg.pilot_covariance;
      } else {
        const RngStream pilot_rng = RngStream(cfg.base_seed ^ kPilotSeedSalt).derive(d);
        ing.rw_shape = mmpp::pilot_covariance(ds.target, start_point, cfg.pilot_iterations, pilot_rng,
                                               cfg.pilot_full ? mmpp::PilotShape::full : mmpp::PilotShape::diagonal);
      }
    }
    for (std::size_t i = 0; i < cfg.methods.size(); ++i) {
      ds.methods.push_back({build_spec(cfg.methods[i], i, ds.target, ing),
                            build_cv_sets(cfg, i, plan.raw, plan.estimands, 1)});
    }
    plan.datasets.push_back(std::move(ds));
    plan.truth.emplace_back();
  }
}

Plan make_plan(const ExperimentConfig& cfg) {
  Plan plan;
  switch (cfg.experiment) {
    case ExperimentKind::bvn:
      plan_bvn(cfg, plan);
      break;
    case ExperimentKind::oracle:
      plan_oracle(cfg, plan);
      break;
    case ExperimentKind::mmpp_sim:
    case ExperimentKind::mmpp_data:
      plan_mmpp(cfg, plan);
      break;
  }
  return plan;
}

double estimator_value(const FunctionalEstimates& fe, EstimatorKind k, const std::string& name) {
  std::optional<double> v;
  switch (k) {
    case EstimatorKind::mc:
      v = fe.mc;
      break;
    case EstimatorKind::miis:
      v = fe.miis;
      break;
    case EstimatorKind::rb:
      v = fe.rb;
      break;
    case EstimatorKind::cv:
      v = fe.cv;
      break;
  }
  if (!v) {
    throw Error(std::string("estimator '") + to_string(k) + "' is unavailable for '" + name + "'");
  }
  return *v;
}

void run_task(const ExperimentConfig& cfg, const Plan& plan, ReplicationRecord& rec) {
  const DatasetPlan& ds = plan.datasets[rec.dataset];
  std::size_t mi = 0;
  while (cfg.methods[mi].label != rec.method) {
    ++mi;
  }
  const MethodConfig& m = cfg.methods[mi];
  const MethodPlan& mp = ds.methods[mi];
  const RngStream rng(rec.seed);
  Point y0 = ds.init;
  if (ds.init_draw) {
    RngStream init_rng = rng.derive(kInitStreamTag);
    y0 = ds.init_draw(init_rng);
  }
  const auto start = std::chrono::steady_clock::now();
  const ChainTrace trace = run_chain(mp.spec, ds.target, plan.raw, y0, cfg.M, cfg.burn_in, rng);
  const std::size_t batch = cfg.obm_batch.value_or(default_batch_length(cfg.M));
  const EstimateReport report = estimate_report(trace, plan.raw, mp.cv_sets, batch);
  rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  for (const auto& e : plan.estimands) {
    for (EstimatorKind k : m.estimators) {
      std::map<std::string, double> raw;
      for (const auto& r : e.inputs) {
        raw[r] = estimator_value(report.functionals.at(r), k, r);
      }
      rec.estimates[e.name][to_string(k)] = combine(cfg, e, raw);
    }
  }
  for (const auto& [name, fe] : report.functionals) {
    if (fe.kappa.size() > 0) {
      rec.kappa[name] = std::vector<double>(fe.kappa.data(), fe.kappa.data() + fe.kappa.size());
    }
  }
  rec.iact = report.diagnostics.iact;
  rec.acceptance = report.diagnostics.acceptance;
  rec.density_evaluations = report.diagnostics.density_evaluations;
  rec.exact_draws = report.diagnostics.exact_draws;
}

double nan_mean(const std::vector<double>& v) {
  double s = 0.0;
  std::size_t n = 0;
  for (double x : v) {
    if (!std::isnan(x)) {
      s += x;
      ++n;
    }
  }
  return n == 0 ? kNaN : s / static_cast<double>(n);
}

double json_number(const nlohmann::json& j) { return j.is_null() ? kNaN : j.get<double>(); }

}  // namespace

std::vector<std::string> ResultBundle::failures() const {
  std::size_t datasets = 0;
  for (const auto& r : records) {
    datasets = std::max(datasets, r.dataset + 1);
  }
  std::vector<std::string> out;
  for (const auto& r : records) {
    if (r.failure) {
      std::string s = r.method + " replication " + std::to_string(r.replication);
      if (datasets > 1) {
        s += " dataset " + std::to_string(r.dataset);
      }
      out.push_back(s + ": " + *r.failure);
    }
  }
  return out;
}

std::vector<std::map<std::string, double>> pooled_truth(const ExperimentConfig& cfg,
                                                        const std::vector<ReplicationRecord>& records) {
  std::size_t datasets = 0;
  for (const auto& r : records) {
    datasets = std::max(datasets, r.dataset + 1);
  }
  std::vector<std::map<std::string, double>> out(datasets);
  std::vector<std::map<std::string, std::size_t>> counts(datasets);
  for (const auto& r : records) {
    if (r.failure) {
      continue;
    }
    for (const auto& f : cfg.functionals) {
      auto it = r.estimates.find(f);
      if (it == r.estimates.end()) {
        continue;
      }
      for (const auto& [est, v] : it->second) {
        out[r.dataset][f] += v;
        ++counts[r.dataset][f];
      }
    }
  }
  for (std::size_t d = 0; d < datasets; ++d) {
    for (auto& [f, v] : out[d]) {
      v /= static_cast<double>(counts[d][f]);
    }
  }
  return out;
}

std::vector<TableRow> compute_table(const ExperimentConfig& cfg,
                                    const std::vector<std::map<std::string, double>>& truth,
                                    const std::vector<ReplicationRecord>& records) {
  const std::size_t datasets = truth.size();
  if (datasets == 0) {
    throw Error("compute_table: no truth values");
  }
  std::string reference;
  for (const auto& m : cfg.methods) {
    if (m.reference) {
      reference = m.label + ":" + to_string(m.estimators.front());
    }
  }

  struct Acc {
    double mse = 0.0, rel = 0.0, adj = 0.0;
  };
  std::vector<TableRow> rows;
  for (const auto& f : cfg.functionals) {
    std::map<std::string, Acc> acc;
    for (std::size_t d = 0; d < datasets; ++d) {
      auto tv = truth[d].find(f);
      if (tv == truth[d].end()) {
        throw Error("compute_table: no truth for '" + f + "'");
      }
      std::vector<MethodEstimates> methods;
      for (const auto& m : cfg.methods) {
        for (EstimatorKind k : m.estimators) {
          MethodEstimates me;
          me.method = m.label + ":" + to_string(k);
          double cost = 0.0;
          for (const auto& r : records) {
            if (r.dataset != d || r.method != m.label || r.failure) {
              continue;
            }
            me.estimates.push_back(r.estimates.at(f).at(to_string(k)));
            cost += cfg.time_adjust == "wall" ? r.wall_seconds
                                              : static_cast<double>(r.density_evaluations + r.exact_draws);
          }
          me.cost = me.estimates.empty() ? kNaN : cost / static_cast<double>(me.estimates.size());
          methods.push_back(std::move(me));
        }
      }
      for (const auto& row : mse_table(methods, tv->second, reference)) {
        Acc& a = acc[row.method];
        a.mse += row.mse;
        a.rel += row.relative_mse;
        a.adj += row.time_adjusted_relative_mse;
      }
    }
    const auto nd = static_cast<double>(datasets);
    for (const auto& m : cfg.methods) {
      std::vector<double> iacts;
      std::vector<double> accs;
      for (const auto& r : records) {
        if (r.method == m.label && !r.failure) {
          iacts.push_back(nan_mean(r.iact));
          accs.push_back(r.acceptance);
        }
      }
      for (EstimatorKind k : m.estimators) {
        const std::string name = m.label + ":" + to_string(k);
        const Acc& a = acc.at(name);
        rows.push_back({f, name, a.mse / nd, a.rel / nd, a.adj / nd, nan_mean(iacts), nan_mean(accs)});
      }
    }
  }
  return rows;
}

ResultBundle run_experiment(const ExperimentConfig& cfg, std::size_t threads) {
  const Plan plan = make_plan(cfg);
  ResultBundle bundle;
  bundle.config = cfg.source;
  bundle.config_hash = config_hash(cfg.source);
  bundle.threads = std::max<std::size_t>(1, threads);

  const std::size_t R = cfg.replications;
  for (std::size_t d = 0; d < plan.datasets.size(); ++d) {
    for (const auto& m : cfg.methods) {
      for (std::size_t r = 0; r < R; ++r) {
        ReplicationRecord rec;
        rec.method = m.label;
        rec.dataset = d;
        rec.replication = r;
        rec.seed = replication_seed(cfg.base_seed, m.label, d * R + r);
        bundle.records.push_back(std::move(rec));
      }
    }
  }

  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (std::size_t i = next++; i < bundle.records.size(); i = next++) {
      ReplicationRecord& rec = bundle.records[i];
      try {
        run_task(cfg, plan, rec);
      } catch (const std::exception& e) {
        rec.failure = e.what();
        rec.estimates.clear();
      }
    }
  };
  const std::size_t n_workers = std::min(bundle.threads, bundle.records.size());
  if (n_workers <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < n_workers; ++w) {
      pool.emplace_back(worker);
    }
  }

  bundle.truth = plan.truth;
  if (bundle.truth.front().empty()) {
    bundle.truth = pooled_truth(cfg, bundle.records);
  }
  try {
    bundle.table = compute_table(cfg, bundle.truth, bundle.records);
  } catch (const std::exception& e) {
    bundle.table_error = e.what();
  }
  return bundle;
}

nlohmann::json to_json(const ResultBundle& b) {
  using nlohmann::json;
  json j;
  j["config"] = b.config;
  j["config_hash"] = b.config_hash;
  j["threads"] = b.threads;
  j["truth"] = b.truth;
  json recs = json::array();
  for (const auto& r : b.records) {
    json x;
    x["method"] = r.method;
    x["dataset"] = r.dataset;
    x["replication"] = r.replication;
    x["seed"] = r.seed;
    x["failure"] = r.failure ? json(*r.failure) : json(nullptr);
    x["estimates"] = r.estimates;
    x["kappa"] = r.kappa;
    x["iact"] = r.iact;
    x["acceptance"] = r.acceptance;
    x["density_evaluations"] = r.density_evaluations;
    x["exact_draws"] = r.exact_draws;
    x["wall_seconds"] = r.wall_seconds;
    recs.push_back(std::move(x));
  }
  j["records"] = std::move(recs);
  j["failures"] = b.failures();
  json rows = json::array();
  for (const auto& t : b.table) {
    rows.push_back({{"functional", t.functional},
                    {"method", t.method},
                    {"mse", t.mse},
                    {"relative_mse", t.relative_mse},
                    {"time_adjusted_relative_mse", t.time_adjusted_relative_mse},
                    {"mean_iact", t.mean_iact},
                    {"acceptance", t.acceptance}});
  }
  j["table"] = std::move(rows);
  j["table_error"] = b.table_error ? json(*b.table_error) : json(nullptr);
  return j;
}

ResultBundle bundle_from_json(const nlohmann::json& j) {
  ResultBundle b;
  try {
    b.config = j.at("config");
    b.config_hash = j.at("config_hash").get<std::string>();
    b.threads = j.at("threads").get<std::size_t>();
    for (const auto& t : j.at("truth")) {
      std::map<std::string, double> m;
      for (auto it = t.begin(); it != t.end(); ++it) {
        m[it.key()] = json_number(it.value());
      }
      b.truth.push_back(std::move(m));
    }
    for (const auto& x : j.at("records")) {
      ReplicationRecord r;
      r.method = x.at("method").get<std::string>();
      r.dataset = x.at("dataset").get<std::size_t>();
      r.replication = x.at("replication").get<std::size_t>();
      r.seed = x.at("seed").get<std::uint64_t>();
      if (!x.at("failure").is_null()) {
        r.failure = x.at("failure").get<std::string>();
      }
      for (auto f = x.at("estimates").begin(); f != x.at("estimates").end(); ++f) {
        for (auto e = f.value().begin(); e != f.value().end(); ++e) {
          r.estimates[f.key()][e.key()] = json_number(e.value());
        }
      }
      for (auto k = x.at("kappa").begin(); k != x.at("kappa").end(); ++k) {
        for (const auto& v : k.value()) {
          r.kappa[k.key()].push_back(json_number(v));
        }
      }
      for (const auto& v : x.at("iact")) {
        r.iact.push_back(json_number(v));
      }
      r.acceptance = json_number(x.at("acceptance"));
      r.density_evaluations = x.at("density_evaluations").get<std::uint64_t>();
      r.exact_draws = x.at("exact_draws").get<std::uint64_t>();
      r.wall_seconds = json_number(x.at("wall_seconds"));
      b.records.push_back(std::move(r));
    }
    for (const auto& t : j.at("table")) {
      b.table.push_back({t.at("functional").get<std::string>(), t.at("method").get<std::string>(),
                         json_number(t.at("mse")), json_number(t.at("relative_mse")),
                         json_number(t.at("time_adjusted_relative_mse")), json_number(t.at("mean_iact")),
                         json_number(t.at("acceptance"))});
    }
    if (j.contains("table_error") && !j.at("table_error").is_null()) {
      b.table_error = j.at("table_error").get<std::string>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("malformed bundle: ") + e.what());
  }
  if (config_hash(b.config) != b.config_hash) {
    throw Error("bundle config hash does not match its config");
  }
  return b;
}

std::string table_csv(const std::vector<TableRow>& rows) {
  std::string out = "functional,method,mse,relative_mse,time_adjusted_relative_mse,mean_iact,acceptance\n";
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, ",%.17g", v);
    out += buf;
  };
  for (const auto& r : rows) {
    out += r.functional + "," + r.method;
    num(r.mse);
    num(r.relative_mse);
    num(r.time_adjusted_relative_mse);
    num(r.mean_iact);
    num(r.acceptance);
    out += "\n";
  }
  return out;
}

std::string table_pretty(const std::vector<TableRow>& rows) {
  std::size_t wf = 10;
  std::size_t wm = 6;
  for (const auto& r : rows) {
    wf = std::max(wf, r.functional.size());
    wm = std::max(wm, r.method.size());
  }
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-*s  %-*s  %12s  %12s  %12s  %10s  %10s\n", static_cast<int>(wf), "functional",
                static_cast<int>(wm), "method", "mse", "rel_mse", "time_adj", "mean_iact", "acceptance");
  out += buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-*s  %-*s  %12.4g  %12.4g  %12.4g  %10.3f  %10.3f\n", static_cast<int>(wf),
                  r.functional.c_str(), static_cast<int>(wm), r.method.c_str(), r.mse, r.relative_mse,
                  r.time_adjusted_relative_mse, r.mean_iact, r.acceptance);
    out += buf;
  }
  return out;
}

void write_outputs(const ResultBundle& bundle, const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) {
    throw Error("cannot create output directory '" + dir + "': " + ec.message());
  }
  auto write = [&dir](const std::string& name, const std::string& text) {
    const fs::path p = fs::path(dir) / name;
    std::ofstream out(p, std::ios::binary);
    out << text;
    if (!out) {
      throw Error("cannot write '" + p.string() + "'");
    }
  };
  write("bundle.json", to_json(bundle).dump(2) + "\n");
  write("mse_table.csv", table_csv(bundle.table));
}

std::size_t resolve_threads(std::optional<std::size_t> from_config, std::optional<std::size_t> from_cli) {
  if (const char* env = std::getenv("MIIS_THREADS"); env != nullptr && *env != '\0') {
    char* end = nullptr;
    const unsigned long v = std::strtoul(env, &end, 10);
    if (*end != '\0' || v == 0) {
      throw ConfigError("MIIS_THREADS", "expected a positive integer, got '" + std::string(env) + "'");
    }
    return v;
  }
  if (from_cli) {
    return *from_cli;
  }
  if (from_config) {
    return *from_config;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

}  // namespace miis::harness
