#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "isswalk/dynamics.hpp"

namespace isswalk {

enum class ContinuousKind { kNone, kConstant, kUniformRandom, kSinusoid };

struct DisturbanceSpec {
  ContinuousKind continuous = ContinuousKind::kNone;
  Vec constant;              // kConstant, one entry per actuator
  double bound = 0.0;        // kUniformRandom, per-component magnitude in N*m
  double hold = 0.05;        // kUniformRandom, seconds
  double amplitude = 0.0;    // kSinusoid
  double frequency = 1.0;    // kSinusoid, Hz
  double impact_bound = 0.0; // bound on the post-impact velocity perturbation
  double clock_scale = 1.0;
  double clock_offset = 0.0;
  std::vector<double> mass_scale;  // empty: plant equals the nominal model
  std::uint64_t seed = 1;

  void validate() const {
    if (bound < 0 || impact_bound < 0 || amplitude < 0)
      throw ConfigError("disturbance bounds must be >= 0");
    if (!(hold > 0)) throw ConfigError("disturbance hold must be > 0");
    if (!(clock_scale > 0)) throw ConfigError("clock_scale must be > 0");
    for (double s : mass_scale)
      if (!(s > 0)) throw ConfigError("mass_scale entries must be > 0");
  }

  bool has_mass_scale() const {
    for (double s : mass_scale)
      if (s != 1.0) return true;
    return false;
  }

  /// Infinity-norm bound of the continuous channel.
  double continuous_bound() const {
    switch (continuous) {
      case ContinuousKind::kNone: return 0.0;
      case ContinuousKind::kConstant: return constant.size() ? constant.cwiseAbs().maxCoeff() : 0.0;
      case ContinuousKind::kUniformRandom: return bound;
      case ContinuousKind::kSinusoid: return amplitude;
    }
    return 0.0;
  }
};

/// Per-rollout sampler state. Continuous and impact channels draw from
/// separate engines so one channel never shifts the other's sequence.
struct DisturbanceState {
  explicit DisturbanceState(std::uint64_t seed = 1)
      : continuous_rng(seed), impact_rng(seed ^ 0x9e3779b97f4a7c15ull) {}

  std::mt19937_64 continuous_rng;
  std::mt19937_64 impact_rng;
  std::vector<Vec> held;
};

/// Disturbance torque at absolute time t; |d_i| <= bound for every component.
inline Vec sample_continuous(const DisturbanceSpec& spec, double t, int m, DisturbanceState& st) {
  switch (spec.continuous) {
    case ContinuousKind::kNone: return Vec::Zero(m);
    case ContinuousKind::kConstant:
      if (spec.constant.size() != m) throw DimensionMismatch("constant disturbance size");
      return spec.constant;
    case ContinuousKind::kSinusoid: {
      Vec d(m);
      for (int i = 0; i < m; ++i)
        d[i] = spec.amplitude * std::sin(2 * M_PI * spec.frequency * t + 2 * M_PI * i / m);
      return d;
    }
    case ContinuousKind::kUniformRandom: {
      const auto k = static_cast<size_t>(std::max(0.0, std::floor(t / spec.hold + 1e-12)));
      std::uniform_real_distribution<double> u(-spec.bound, spec.bound);
      while (st.held.size() <= k) {
        Vec d(m);
        for (int i = 0; i < m; ++i) d[i] = u(st.continuous_rng);
        st.held.push_back(d);
      }
      return st.held[k];
    }
  }
  return Vec::Zero(m);
}

/// Next time after t where the continuous signal may jump.
inline double next_breakpoint(const DisturbanceSpec& spec, double t) {
  if (spec.continuous != ContinuousKind::kUniformRandom) return std::numeric_limits<double>::infinity();
  return (std::floor(t / spec.hold + 1e-12) + 1.0) * spec.hold;
}

struct ImpactPerturbation {
  Vec qdot;
  double magnitude = 0.0;
};

/// Adds a random velocity perturbation, projected back onto the constraint
/// null space and capped at the bound.
inline ImpactPerturbation perturb_impact(const DisturbanceSpec& spec, const RobotModel& model,
                                         const State& x_plus, const ConstraintSet& cs,
                                         DisturbanceState& st) {
  ImpactPerturbation out{x_plus.qdot, 0.0};
  if (!(spec.impact_bound > 0)) return out;
  const int n = model.n();
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Vec dir(n);
  for (int i = 0; i < n; ++i) dir[i] = normal(st.impact_rng);
  const double r = spec.impact_bound * std::pow(unit(st.impact_rng), 1.0 / n);
  const Vec delta = r * dir / dir.norm();
  Vec moved = impact_map(model, x_plus.q, x_plus.qdot + delta, cs).qdot_plus;
  Vec dp = moved - x_plus.qdot;
  const double norm = dp.norm();
  if (norm > spec.impact_bound) dp *= spec.impact_bound / norm;
  out.qdot = x_plus.qdot + dp;
  out.magnitude = dp.norm();
  return out;
}

}  // namespace isswalk
