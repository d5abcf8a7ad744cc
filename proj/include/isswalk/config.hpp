#pragma once

// Experiment configuration: a JSON tree merged over built-in defaults, then
// dotted-path overrides. Unknown keys are errors so typos do not pass silently.

#include <filesystem>
#include <string>
#include <vector>

#include "isswalk/chain.hpp"
#include "isswalk/fit.hpp"
#include "isswalk/io.hpp"

namespace isswalk {

inline Json default_config() {
  const GaitSeed s;
  const IssOptions iss;
  return Json::parse(R"({
  "model": "biped",
  "out_dir": "",
  "gait": {"artifact": "", "seed": {}},
  "controller": {
    "kind": "fblin_state",
    "epsilon": 7.0,
    "kp": [3000, 3000, 3000, 300, 300, 30],
    "kd": [60, 60, 60, 6, 6, 0.6],
    "torque_limit": 0.0
  },
  "disturbance": {
    "continuous": "none",
    "constant": [],
    "bound": 0.0,
    "hold": 0.05,
    "amplitude": 0.0,
    "frequency": 1.0,
    "impact_bound": 0.0,
    "clock_scale": 1.0,
    "clock_offset": 0.0,
    "mass_scale": [],
    "seed": 1
  },
  "rollout": {"rtol": 1e-9, "atol": 1e-11, "sample_dt": 0.01, "max_dwell": 3.0},
  "simulate": {"steps": 10, "perturbation": 0.0, "perturbation_seed": 1},
  "fixed_point": {"tol": 1e-8, "max_iter": 50, "fd_step": 1e-6, "perturbation": 0.0},
  "eigen": {"fd_step": 1e-6},
  "iss": {},
  "pd_bench": {"clock_scales": [0.95, 0.975, 1.0, 1.025, 1.05], "steps": 50, "bins": 30},
  "chain": {
    "links": 5, "mass": 0.5, "length": 0.2,
    "offsets": [0.6, 0.3, 0.3, 0.3, 0.3],
    "kp": 3000.0, "kd": 30.0,
    "kp_grid": [100, 300, 1000, 3000], "kd_grid": [5, 10, 30, 100],
    "ray_scales": [0.25, 0.5, 1, 2],
    "t_end": 5.0, "epsilon": 10.0, "starts": [1, 2, 3], "start_amplitude": 0.5
  },
  "lyap": {
    "target": "output",
    "epsilons": [1, 2, 5],
    "steps": 4,
    "bound": 1e-6,
    "perturbation": 0.1,
    "rate_fraction": 0.45,
    "kappa_scale": 1.0,
    "samples": 10000
  }
})")
      .patch(Json::array({
          {{"op", "replace"}, {"path", "/gait/seed"}, {"value", seed_json(s)}},
          {{"op", "replace"},
           {"path", "/iss"},
           {"value",
            {{"magnitudes", iss.magnitudes},
             {"n_steps", iss.n_steps},
             {"n_seeds", iss.n_seeds},
             {"hold", iss.hold},
             {"impact_ratio", iss.impact_ratio},
             {"perturbation", iss.perturbation},
             {"n_perturbations", iss.n_perturbations},
             {"decay_steps", iss.decay_steps},
             {"fit_from", iss.fit_from},
             {"tail_fraction", iss.tail_fraction},
             {"bootstrap", iss.bootstrap},
             {"seed", iss.seed}}}},
      }));
}

namespace config_detail {

inline std::string line_col(const std::string& text, size_t byte) {
  size_t line = 1, col = 1;
  for (size_t i = 0; i + 1 < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return std::to_string(line) + ":" + std::to_string(col);
}

inline const char* kind_of(const Json& j) {
  if (j.is_number()) return "number";
  if (j.is_string()) return "string";
  if (j.is_boolean()) return "boolean";
  if (j.is_array()) return "array";
  if (j.is_object()) return "object";
  return "null";
}

inline bool same_kind(const Json& a, const Json& b) {
  return std::string(kind_of(a)) == kind_of(b);
}

/// Merges `patch` over `base`, refusing keys the defaults do not define.
inline void merge(Json& base, const Json& patch, const std::string& where) {
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string key = where.empty() ? it.key() : where + "." + it.key();
    if (!base.contains(it.key())) throw ConfigError("unknown key " + key);
    Json& dst = base[it.key()];
    if (dst.is_object()) {
      if (!it->is_object()) throw ConfigError(key + ": expected object, got " + kind_of(*it));
      merge(dst, *it, key);
    } else {
      if (!same_kind(dst, *it))
        throw ConfigError(key + ": expected " + kind_of(dst) + ", got " + kind_of(*it));
      dst = *it;
    }
  }
}

}  // namespace config_detail

/// Parses JSON text; syntax errors carry origin:line:col.
inline Json parse_config_text(const std::string& text, const std::string& origin) {
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    std::string msg = e.what();
    const auto p = msg.find("syntax error");
    if (p != std::string::npos) msg = msg.substr(p);
    throw ConfigError(origin + ":" + config_detail::line_col(text, e.byte) + ": " + msg);
  }
}

/// Applies "a.b.c=value". The value is read as JSON when it parses, else as a string.
inline void apply_override(Json& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string path = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  Json value;
  try {
    value = Json::parse(text);
  } catch (const nlohmann::json::parse_error&) {
    value = text;
  }
  Json patch = value;
  size_t end = path.size();
  while (true) {
    const auto dot = path.rfind('.', end - 1);
    const std::string key = path.substr(dot == std::string::npos ? 0 : dot + 1,
                                        end - (dot == std::string::npos ? 0 : dot + 1));
    if (key.empty()) throw ConfigError("override path '" + path + "' has an empty segment");
    patch = Json{{key, patch}};
    if (dot == std::string::npos) break;
    end = dot;
  }
  config_detail::merge(cfg, patch, "");
}

struct PdBenchOptions {
  std::vector<double> clock_scales;
  int steps = 50;
  int bins = 30;
};

struct LyapOptions {
  std::string target = "output";  // output | strict
  std::vector<double> epsilons;
  int steps = 4;
  double bound = 1e-6;
  double perturbation = 0.1;  // radial offset of the trace start from x*
  double rate_fraction = 0.45;
  double kappa_scale = 1.0;
  int samples = 10000;
};

struct ChainBenchOptions {
  ChainParams params;
  double kp = 3000, kd = 30;
  std::vector<double> kp_grid, kd_grid;
  std::vector<double> ray_scales;
  ChainRunOptions run;
  std::vector<std::uint64_t> starts;
  double start_amplitude = 0.5;
};

struct ExperimentConfig {
  Json tree;
  std::filesystem::path base_dir = ".";
  std::string model = "biped";
  std::string out_dir;
  std::string gait_artifact;
  GaitSeed seed;
  ControllerConfig controller;
  DisturbanceSpec disturbance;
  RolloutOptions rollout;
  int steps = 10;
  double perturbation = 0.0;
  std::uint64_t perturbation_seed = 1;
  double fp_tol = 1e-8, fp_fd_step = 1e-6, fp_perturbation = 0.0;
  int fp_max_iter = 50;
  double eigen_fd_step = 1e-6;
  IssOptions iss;
  PdBenchOptions pd_bench;
  ChainBenchOptions chain;
  LyapOptions lyap;
};

namespace config_detail {

inline ContinuousKind continuous_kind(const std::string& s) {
  if (s == "none") return ContinuousKind::kNone;
  if (s == "constant") return ContinuousKind::kConstant;
  if (s == "uniform") return ContinuousKind::kUniformRandom;
  if (s == "sinusoid") return ContinuousKind::kSinusoid;
  throw ConfigError("disturbance.continuous: unknown kind '" + s + "'");
}

template <class T>
T get(const Json& j, const char* key, const std::string& where) {
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

inline Vec get_vec(const Json& j, const char* key, const std::string& where) {
  const auto v = get<std::vector<double>>(j, key, where);
  return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace config_detail

/// Converts the merged tree into typed options and checks ranges.
inline ExperimentConfig typed_config(const Json& t) {
  using config_detail::get;
  using config_detail::get_vec;
  ExperimentConfig c;
  c.tree = t;
  c.model = get<std::string>(t, "model", "");
  if (c.model != "biped" && c.model != "chain") throw ConfigError("model: expected biped or chain");
  c.out_dir = get<std::string>(t, "out_dir", "");
  const Json& g = t.at("gait");
  c.gait_artifact = get<std::string>(g, "artifact", "gait");
  try {
    c.seed = json_seed(g.at("seed"));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("gait.seed: ") + e.what());
  }
  if (!(c.seed.v_d > 0) || !(c.seed.step_length > 0) || !(c.seed.phase_margin >= 0))
    throw ConfigError("gait.seed: v_d and step_length must be > 0, phase_margin >= 0");

  const Json& k = t.at("controller");
  c.controller.kind = controller_kind_from_string(get<std::string>(k, "kind", "controller"));
  c.controller.epsilon = get<double>(k, "epsilon", "controller");
  c.controller.gains.kp = get_vec(k, "kp", "controller");
  c.controller.gains.kd = get_vec(k, "kd", "controller");
  c.controller.torque_limit = get<double>(k, "torque_limit", "controller");
  if (!(c.controller.epsilon > 0)) throw ConfigError("controller.epsilon must be > 0");

  const Json& d = t.at("disturbance");
  DisturbanceSpec& ds = c.disturbance;
  ds.continuous = config_detail::continuous_kind(get<std::string>(d, "continuous", "disturbance"));
  ds.constant = get_vec(d, "constant", "disturbance");
  ds.bound = get<double>(d, "bound", "disturbance");
  ds.hold = get<double>(d, "hold", "disturbance");
  ds.amplitude = get<double>(d, "amplitude", "disturbance");
  ds.frequency = get<double>(d, "frequency", "disturbance");
  ds.impact_bound = get<double>(d, "impact_bound", "disturbance");
  ds.clock_scale = get<double>(d, "clock_scale", "disturbance");
  ds.clock_offset = get<double>(d, "clock_offset", "disturbance");
  ds.mass_scale = get<std::vector<double>>(d, "mass_scale", "disturbance");
  ds.seed = get<std::uint64_t>(d, "seed", "disturbance");
  ds.validate();

  const Json& r = t.at("rollout");
  c.rollout.ode.rtol = get<double>(r, "rtol", "rollout");
  c.rollout.ode.atol = get<double>(r, "atol", "rollout");
  c.rollout.sample_dt = get<double>(r, "sample_dt", "rollout");
  c.rollout.max_dwell = get<double>(r, "max_dwell", "rollout");
  if (!(c.rollout.ode.rtol > 0) || !(c.rollout.ode.atol > 0) || c.rollout.sample_dt < 0)
    throw ConfigError("rollout: tolerances must be > 0 and sample_dt >= 0");

  const Json& s = t.at("simulate");
  c.steps = get<int>(s, "steps", "simulate");
  c.perturbation = get<double>(s, "perturbation", "simulate");
  c.perturbation_seed = get<std::uint64_t>(s, "perturbation_seed", "simulate");
  if (c.steps < 0) throw ConfigError("simulate.steps must be >= 0");

  const Json& f = t.at("fixed_point");
  c.fp_tol = get<double>(f, "tol", "fixed_point");
  c.fp_max_iter = get<int>(f, "max_iter", "fixed_point");
  c.fp_fd_step = get<double>(f, "fd_step", "fixed_point");
  c.fp_perturbation = get<double>(f, "perturbation", "fixed_point");
  c.eigen_fd_step = get<double>(t.at("eigen"), "fd_step", "eigen");

  const Json& i = t.at("iss");
  IssOptions& o = c.iss;
  o.magnitudes = get<std::vector<double>>(i, "magnitudes", "iss");
  o.n_steps = get<int>(i, "n_steps", "iss");
  o.n_seeds = get<int>(i, "n_seeds", "iss");
  o.hold = get<double>(i, "hold", "iss");
  o.impact_ratio = get<double>(i, "impact_ratio", "iss");
  o.perturbation = get<double>(i, "perturbation", "iss");
  o.n_perturbations = get<int>(i, "n_perturbations", "iss");
  o.decay_steps = get<int>(i, "decay_steps", "iss");
  o.fit_from = get<int>(i, "fit_from", "iss");
  o.tail_fraction = get<double>(i, "tail_fraction", "iss");
  o.bootstrap = get<int>(i, "bootstrap", "iss");
  o.seed = get<std::uint64_t>(i, "seed", "iss");
  if (o.magnitudes.empty()) throw ConfigError("iss.magnitudes must be nonempty");
  if (o.n_seeds < 1) throw ConfigError("iss.n_seeds must be >= 1");

  const Json& p = t.at("pd_bench");
  c.pd_bench.clock_scales = get<std::vector<double>>(p, "clock_scales", "pd_bench");
  c.pd_bench.steps = get<int>(p, "steps", "pd_bench");
  c.pd_bench.bins = get<int>(p, "bins", "pd_bench");
  if (c.pd_bench.clock_scales.empty()) throw ConfigError("pd_bench.clock_scales must be nonempty");
  if (c.pd_bench.bins < 1) throw ConfigError("pd_bench.bins must be >= 1");

  const Json& ch = t.at("chain");
  ChainBenchOptions& cb = c.chain;
  cb.params.links = get<int>(ch, "links", "chain");
  cb.params.mass = get<double>(ch, "mass", "chain");
  cb.params.length = get<double>(ch, "length", "chain");
  cb.params.com = 0.5 * cb.params.length;
  cb.params.offsets = get<std::vector<double>>(ch, "offsets", "chain");
  cb.kp = get<double>(ch, "kp", "chain");
  cb.kd = get<double>(ch, "kd", "chain");
  cb.kp_grid = get<std::vector<double>>(ch, "kp_grid", "chain");
  cb.kd_grid = get<std::vector<double>>(ch, "kd_grid", "chain");
  cb.ray_scales = get<std::vector<double>>(ch, "ray_scales", "chain");
  cb.run.t_end = get<double>(ch, "t_end", "chain");
  cb.run.epsilon = get<double>(ch, "epsilon", "chain");
  cb.starts = get<std::vector<std::uint64_t>>(ch, "starts", "chain");
  cb.start_amplitude = get<double>(ch, "start_amplitude", "chain");
  if (static_cast<int>(cb.params.offsets.size()) != cb.params.links)
    throw ConfigError("chain.offsets needs one entry per link");
  if (cb.starts.empty()) throw ConfigError("chain.starts must be nonempty");
  if (cb.kp_grid.empty() || cb.kd_grid.empty()) throw ConfigError("chain grids must be nonempty");
  for (double r : cb.ray_scales)
    if (!(r > 0)) throw ConfigError("chain.ray_scales entries must be > 0");

  const Json& l = t.at("lyap");
  c.lyap.target = get<std::string>(l, "target", "lyap");
  c.lyap.epsilons = get<std::vector<double>>(l, "epsilons", "lyap");
  c.lyap.steps = get<int>(l, "steps", "lyap");
  c.lyap.bound = get<double>(l, "bound", "lyap");
  c.lyap.perturbation = get<double>(l, "perturbation", "lyap");
  c.lyap.rate_fraction = get<double>(l, "rate_fraction", "lyap");
  c.lyap.kappa_scale = get<double>(l, "kappa_scale", "lyap");
  c.lyap.samples = get<int>(l, "samples", "lyap");
  if (c.lyap.target != "output" && c.lyap.target != "strict")
    throw ConfigError("lyap.target: expected output or strict");
  if (!(c.lyap.rate_fraction > 0 && c.lyap.rate_fraction < 0.5))
    throw ConfigError("lyap.rate_fraction must lie in (0, 0.5)");
  return c;
}

/// Loads a config file (or the defaults when `path` is empty) and applies overrides.
inline ExperimentConfig load_config(const std::string& path,
                                    const std::vector<std::string>& overrides = {}) {
  Json tree = default_config();
  std::filesystem::path base = ".";
  if (!path.empty()) {
    if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path);
    const Json user = parse_config_text(read_file(path), path);
    if (!user.is_object()) throw ConfigError(path + ": top level must be an object");
    try {
      config_detail::merge(tree, user, "");
    } catch (const ConfigError& e) {
      throw ConfigError(path + ": " + e.message());
    }
    base = std::filesystem::path(path).parent_path();
  }
  for (const auto& o : overrides) apply_override(tree, o);
  ExperimentConfig c = typed_config(tree);
  c.base_dir = base;
  if (!c.gait_artifact.empty()) {
    std::filesystem::path p = c.gait_artifact;
    if (p.is_relative()) p = base / p;
    if (!std::filesystem::exists(p)) throw ConfigError("gait.artifact not found: " + p.string());
    c.gait_artifact = p.string();
  }
  return c;
}

}  // namespace isswalk
