#include "miis/harness/config.hpp"

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "miis/rng.hpp"

namespace miis::harness {

namespace {

using nlohmann::json;

// JSON object view that remembers its path and which keys were read.
class Node {
 public:
  Node(const json& j, std::string path) : j_(j), path_(std::move(path)) {}

  [[nodiscard]] const std::string& path() const { return path_; }
  [[nodiscard]] const json& raw() const { return j_; }

  void require_object() const {
    if (!j_.is_object()) {
      throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
    }
  }

  [[nodiscard]] bool has(const std::string& key) const { return j_.contains(key); }

  [[nodiscard]] Node child(const std::string& key) const {
    seen_.insert(key);
    if (!j_.contains(key)) {
      throw ConfigError(join(key), "required field is missing");
    }
    return {j_.at(key), join(key)};
  }

  [[nodiscard]] Node at(std::size_t i) const { return {j_.at(i), path_ + "[" + std::to_string(i) + "]"}; }

  [[nodiscard]] std::string str() const {
    if (!j_.is_string()) {
      throw ConfigError(path_, "expected a string");
    }
    return j_.get<std::string>();
  }

  [[nodiscard]] double number() const {
    if (!j_.is_number()) {
      throw ConfigError(path_, "expected a number");
    }
    return j_.get<double>();
  }

  [[nodiscard]] std::uint64_t uint() const {
    if (!j_.is_number_integer() || (j_.is_number_integer() && !j_.is_number_unsigned() && j_.get<std::int64_t>() < 0)) {
      throw ConfigError(path_, "expected a nonnegative integer");
    }
    return j_.get<std::uint64_t>();
  }

  [[nodiscard]] bool boolean() const {
    if (!j_.is_boolean()) {
      throw ConfigError(path_, "expected true or false");
    }
    return j_.get<bool>();
  }

  [[nodiscard]] std::size_t size() const {
    if (!j_.is_array()) {
      throw ConfigError(path_, "expected an array");
    }
    return j_.size();
  }

  [[nodiscard]] std::vector<double> numbers() const {
    std::vector<double> out(size());
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] = at(i).number();
    }
    return out;
  }

  template <typename T>
  std::optional<T> optional(const std::string& key, T (Node::*get)() const) const {
    if (!has(key)) {
      seen_.insert(key);
      return std::nullopt;
    }
    return (child(key).*get)();
  }

  /// Every key present must have been read.
  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) {
        throw ConfigError(join(it.key()), "unknown field");
      }
    }
  }

 private:
  [[nodiscard]] std::string join(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json& j_;
  std::string path_;
  mutable std::set<std::string> seen_;
};

EstimatorKind estimator_from(const Node& n) {
  const std::string s = n.str();
  if (s == "mc") {
    return EstimatorKind::mc;
  }
  if (s == "miis") {
    return EstimatorKind::miis;
  }
  if (s == "rb") {
    return EstimatorKind::rb;
  }
  if (s == "cv") {
    return EstimatorKind::cv;
  }
  throw ConfigError(n.path(), "unknown estimator '" + s + "' (mc, miis, rb, cv)");
}

std::size_t positive(const Node& n) {
  const auto v = n.uint();
  if (v == 0) {
    throw ConfigError(n.path(), "must be at least 1");
  }
  return static_cast<std::size_t>(v);
}

bool has_records(SamplerKind k, EstimatorKind e) {
  switch (e) {
    case EstimatorKind::mc:
      return true;
    case EstimatorKind::miis:
      return k == SamplerKind::miis_simple || k == SamplerKind::miis_antithetic || k == SamplerKind::miis_random_walk;
    case EstimatorKind::rb:
      return k == SamplerKind::miis_gibbs || k == SamplerKind::gibbs_exact;
    case EstimatorKind::cv:
      return k != SamplerKind::mwg && k != SamplerKind::rwm;
  }
  return false;
}

MethodConfig parse_method(const Node& n) {
  n.require_object();
  MethodConfig m;
  m.label = n.child("label").str();
  if (m.label.empty() || m.label.find(':') != std::string::npos || m.label.find(',') != std::string::npos) {
    throw ConfigError(n.path() + ".label", "labels must be non-empty without ':' or ','");
  }
  const Node sampler = n.child("sampler");
  try {
    m.sampler = sampler_kind_from_string(sampler.str());
  } catch (const ConfigurationError& e) {
    throw ConfigError(sampler.path(), e.what());
  }
  if (n.has("N")) {
    m.n_particles = positive(n.child("N"));
  } else {
    n.optional("N", &Node::uint);
  }
  if (is_miis(m.sampler) && m.n_particles == 0) {
    throw ConfigError(n.path() + ".N", "required for MIIS samplers");
  }
  if (n.has("inner_repeats")) {
    m.inner_repeats = positive(n.child("inner_repeats"));
  } else {
    n.optional("inner_repeats", &Node::uint);
  }
  if (!n.has("inner_repeats") && m.n_particles > 0 &&
      (m.sampler == SamplerKind::mwg || m.sampler == SamplerKind::gibbs_exact)) {
    // N on a baseline means "match the work of N particles per block"
    m.inner_repeats = m.n_particles;
  }
  if (auto v = n.optional("variant", &Node::str)) {
    if (*v != "simple" && *v != "antithetic") {
      throw ConfigError(n.path() + ".variant", "expected 'simple' or 'antithetic'");
    }
    if (m.sampler != SamplerKind::miis_gibbs) {
      throw ConfigError(n.path() + ".variant", "only miis-gibbs takes a variant; use sampler miis-antithetic otherwise");
    }
    m.variant = *v;
  }
  if (auto v = n.optional("rw_scale_factor", &Node::number)) {
    if (!(*v > 0.0)) {
      throw ConfigError(n.path() + ".rw_scale_factor", "must be positive");
    }
    m.rw_scale_factor = *v;
  }
  m.reference = n.optional("reference", &Node::boolean).value_or(false);
  m.allow_small_n = n.optional("allow_small_n", &Node::boolean).value_or(false);

  const Node est = n.child("estimators");
  for (std::size_t i = 0; i < est.size(); ++i) {
    const EstimatorKind e = estimator_from(est.at(i));
    if (!has_records(m.sampler, e)) {
      throw ConfigError(est.at(i).path(), std::string("sampler ") + to_string(m.sampler) +
                                              " does not record what estimator '" + to_string(e) + "' needs");
    }
    for (auto prev : m.estimators) {
      if (prev == e) {
        throw ConfigError(est.at(i).path(), "duplicate estimator");
      }
    }
    m.estimators.push_back(e);
  }
  if (m.estimators.empty()) {
    throw ConfigError(est.path(), "at least one estimator is required");
  }

  if (n.has("cv_sets")) {
    const Node sets = n.child("cv_sets");
    sets.require_object();
    for (auto it = sets.raw().begin(); it != sets.raw().end(); ++it) {
      const Node list = sets.child(it.key());
      std::vector<CvEntry> entries;
      for (std::size_t i = 0; i < list.size(); ++i) {
        const Node e = list.at(i);
        e.require_object();
        CvEntry c;
        c.g = e.child("g").str();
        if (auto b = e.optional("block", &Node::uint)) {
          c.block = static_cast<std::size_t>(*b);
        }
        e.finish();
        entries.push_back(c);
      }
      m.cv_sets[it.key()] = entries;
    }
    sets.finish();
  } else {
    n.optional("cv_sets", &Node::str);
  }
  n.finish();
  return m;
}

}  // namespace

const char* to_string(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::bvn:
      return "bvn";
    case ExperimentKind::mmpp_sim:
      return "mmpp-sim";
    case ExperimentKind::mmpp_data:
      return "mmpp-data";
    case ExperimentKind::oracle:
      return "oracle";
  }
  return "?";
}

const char* to_string(EstimatorKind k) {
  switch (k) {
    case EstimatorKind::mc:
      return "mc";
    case EstimatorKind::miis:
      return "miis";
    case EstimatorKind::rb:
      return "rb";
    case EstimatorKind::cv:
      return "cv";
  }
  return "?";
}

ExperimentConfig parse_config(const nlohmann::json& j) {
  const Node root(j, "");
  root.require_object();
  ExperimentConfig c;
  c.source = j;

  const Node exp = root.child("experiment");
  const std::string kind = exp.str();
  if (kind == "bvn") {
    c.experiment = ExperimentKind::bvn;
  } else if (kind == "mmpp-sim") {
    c.experiment = ExperimentKind::mmpp_sim;
  } else if (kind == "mmpp-data") {
    c.experiment = ExperimentKind::mmpp_data;
  } else if (kind == "oracle") {
    c.experiment = ExperimentKind::oracle;
  } else {
    throw ConfigError(exp.path(), "unknown experiment '" + kind + "' (bvn, mmpp-sim, mmpp-data, oracle)");
  }

  c.M = positive(root.child("M"));
  c.burn_in = static_cast<std::size_t>(root.optional("burn_in", &Node::uint).value_or(0));
  c.replications = positive(root.child("replications"));
  c.base_seed = root.optional("base_seed", &Node::uint).value_or(0);
  if (root.has("threads")) {
    c.threads = positive(root.child("threads"));
  } else {
    root.optional("threads", &Node::uint);
  }
  if (root.has("obm_batch")) {
    c.obm_batch = positive(root.child("obm_batch"));
    if (*c.obm_batch >= c.M) {
      throw ConfigError("obm_batch", "must be smaller than M");
    }
  } else {
    root.optional("obm_batch", &Node::uint);
  }
  c.output_dir = root.optional("output_dir", &Node::str).value_or("results");
  c.time_adjust = root.optional("time_adjust", &Node::str).value_or("cost");
  if (c.time_adjust != "cost" && c.time_adjust != "wall") {
    throw ConfigError("time_adjust", "expected 'cost' or 'wall'");
  }

  if (root.has("init")) {
    const Node init = root.child("init");
    if (init.raw().is_string()) {
      c.init.mode = init.str();
      if (c.init.mode != "origin" && c.init.mode != "truth" && c.init.mode != "prior-draw") {
        throw ConfigError(init.path(), "expected 'origin', 'truth', 'prior-draw' or a vector of numbers");
      }
    } else {
      c.init.mode = "vector";
      c.init.vector = init.numbers();
    }
  } else {
    root.optional("init", &Node::str);
  }

  const Node fs = root.child("functionals");
  for (std::size_t i = 0; i < fs.size(); ++i) {
    c.functionals.push_back(fs.at(i).str());
  }
  if (c.functionals.empty()) {
    throw ConfigError("functionals", "at least one functional is required");
  }

  // the oracle has nothing to configure
  static const json kNoModel = json::object();
  const Node model = c.experiment == ExperimentKind::oracle && !root.has("model") ? Node(kNoModel, "model")
                                                                                  : root.child("model");
  model.require_object();
  switch (c.experiment) {
    case ExperimentKind::bvn: {
      const Node rho = model.child("rho");
      c.rho = rho.number();
      if (!(std::abs(*c.rho) < 1.0)) {
        throw ConfigError(rho.path(), "must lie strictly inside (-1, 1)");
      }
      break;
    }
    case ExperimentKind::mmpp_sim:
    case ExperimentKind::mmpp_data: {
      if (c.experiment == ExperimentKind::mmpp_sim) {
        const Node psi = model.child("psi");
        const auto pv = psi.numbers();
        if (pv.size() != 2 || !(pv[0] > 0.0) || !(pv[1] > pv[0])) {
          throw ConfigError(psi.path(), "expected two intensities 0 < psi1 < psi2");
        }
        c.psi = {pv[0], pv[1]};
        const Node q = model.child("q");
        const auto qv = q.numbers();
        if (qv.size() != 2 || !(qv[0] > 0.0) || !(qv[1] > 0.0)) {
          throw ConfigError(q.path(), "expected two positive rates q12, q21");
        }
        c.q = {qv[0], qv[1]};
        const Node w = model.child("window");
        c.window = w.number();
        if (!(c.window > 0.0)) {
          throw ConfigError(w.path(), "must be positive");
        }
        if (model.has("datasets")) {
          c.datasets = positive(model.child("datasets"));
        } else {
          model.optional("datasets", &Node::uint);
        }
        c.data_seed = model.optional("data_seed", &Node::uint);
      } else {
        c.events_file = model.child("events_file").str();
        if (auto w = model.optional("window", &Node::number)) {
          c.window = *w;
        }
      }
      if (model.has("prior_means")) {
        const Node pm = model.child("prior_means");
        const auto v = pm.numbers();
        if (v.size() != 4 || !(v[0] > 0.0 && v[1] > 0.0 && v[2] > 0.0 && v[3] > 0.0)) {
          throw ConfigError(pm.path(), "expected four positive means (psi1, psi2, q12, q21)");
        }
        c.prior_means = std::array<double, 4>{v[0], v[1], v[2], v[3]};
      } else if (c.experiment == ExperimentKind::mmpp_data) {
        static_cast<void>(model.child("prior_means"));  // throws: required here
      } else {
        model.optional("prior_means", &Node::str);
      }
      if (model.has("normalize_stride")) {
        c.normalize_stride = positive(model.child("normalize_stride"));
      } else {
        model.optional("normalize_stride", &Node::uint);
      }
      break;
    }
    case ExperimentKind::oracle:
      break;
  }
  model.finish();

  if (root.has("pilot")) {
    const Node pilot = root.child("pilot");
    pilot.require_object();
    if (c.experiment != ExperimentKind::mmpp_sim && c.experiment != ExperimentKind::mmpp_data) {
      throw ConfigError(pilot.path(), "only MMPP experiments use a pilot phase");
    }
    if (pilot.has("iterations")) {
      c.pilot_iterations = positive(pilot.child("iterations"));
      if (c.pilot_iterations < 200) {
        throw ConfigError(pilot.path() + ".iterations", "must be at least 200");
      }
    } else {
      pilot.optional("iterations", &Node::uint);
    }
    auto read_matrix = [](const Node& m) {
      Eigen::MatrixXd out(4, 4);
      if (m.size() != 4) {
        throw ConfigError(m.path(), "expected a 4x4 matrix");
      }
      for (std::size_t i = 0; i < 4; ++i) {
        const auto row = m.at(i).numbers();
        if (row.size() != 4) {
          throw ConfigError(m.at(i).path(), "expected 4 entries");
        }
        for (std::size_t k = 0; k < 4; ++k) {
          out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = row[k];
        }
      }
      if (!out.isApprox(out.transpose()) || out.llt().info() != Eigen::Success) {
        throw ConfigError(m.path(), "must be symmetric positive definite");
      }
      return out;
    };
    if (auto v = pilot.optional("shape", &Node::str)) {
      if (*v != "diagonal" && *v != "full") {
        throw ConfigError(pilot.path() + ".shape", "expected 'diagonal' or 'full'");
      }
      c.pilot_full = *v == "full";
    }
    if (pilot.has("covariance")) {
      c.pilot_covariance = read_matrix(pilot.child("covariance"));
    } else {
      pilot.optional("covariance", &Node::str);
    }
    if (pilot.has("file")) {
      const Node f = pilot.child("file");
      std::ifstream in(f.str());
      if (!in) {
        throw ConfigError(f.path(), "cannot open '" + f.str() + "'");
      }
      json m;
      try {
        in >> m;
      } catch (const json::exception& e) {
        throw ConfigError(f.path(), std::string("invalid JSON: ") + e.what());
      }
      c.pilot_covariance = read_matrix(Node(m, f.path()));
    } else {
      pilot.optional("file", &Node::str);
    }
    pilot.finish();
  } else {
    root.optional("pilot", &Node::str);
  }

  const Node methods = root.child("methods");
  std::set<std::string> labels;
  std::size_t references = 0;
  for (std::size_t i = 0; i < methods.size(); ++i) {
    MethodConfig m = parse_method(methods.at(i));
    if (!labels.insert(m.label).second) {
      throw ConfigError(methods.at(i).path() + ".label", "duplicate label '" + m.label + "'");
    }
    references += m.reference ? 1 : 0;
    c.methods.push_back(std::move(m));
  }
  if (c.methods.empty()) {
    throw ConfigError("methods", "at least one method is required");
  }
  if (references != 1) {
    throw ConfigError("methods", "exactly one method must set \"reference\": true");
  }
  if (c.replications < 2) {
    throw ConfigError("replications", "MSE tables need at least 2 replications");
  }
  root.finish();
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("<file>", "cannot open config '" + path + "'");
  }
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("<file>", std::string("invalid JSON: ") + e.what());
  }
  // data files are named relative to the config file
  const std::filesystem::path base = std::filesystem::path(path).parent_path();
  auto anchor = [&base](nlohmann::json& v) {
    if (v.is_string() && std::filesystem::path(v.get<std::string>()).is_relative()) {
      v = (base / v.get<std::string>()).lexically_normal().string();
    }
  };
  if (j.is_object()) {
    if (j.contains("model") && j["model"].is_object() && j["model"].contains("events_file")) {
      anchor(j["model"]["events_file"]);
    }
    if (j.contains("pilot") && j["pilot"].is_object() && j["pilot"].contains("file")) {
      anchor(j["pilot"]["file"]);
    }
  }
  return parse_config(j);
}

std::string config_hash(const nlohmann::json& j) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, fnv1a64(j.dump()));
  return buf;
}

}  // namespace miis::harness
