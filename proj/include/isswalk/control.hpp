#pragma once

#include <map>
#include <string>

#include "isswalk/outputs.hpp"

namespace isswalk {

enum class ControllerKind { kFblinState, kFblinTime, kPdState, kPdTime };

inline const char* to_string(ControllerKind k) {
  switch (k) {
    case ControllerKind::kFblinState: return "fblin_state";
    case ControllerKind::kFblinTime: return "fblin_time";
    case ControllerKind::kPdState: return "pd_state";
    case ControllerKind::kPdTime: return "pd_time";
  }
  return "?";
}

inline ControllerKind controller_kind_from_string(const std::string& s) {
  if (s == "fblin_state") return ControllerKind::kFblinState;
  if (s == "fblin_time") return ControllerKind::kFblinTime;
  if (s == "pd_state") return ControllerKind::kPdState;
  if (s == "pd_time") return ControllerKind::kPdTime;
  throw ConfigError("unknown controller kind '" + s + "'");
}

inline bool is_time_based(ControllerKind k) {
  return k == ControllerKind::kFblinTime || k == ControllerKind::kPdTime;
}
inline bool is_pd(ControllerKind k) {
  return k == ControllerKind::kPdState || k == ControllerKind::kPdTime;
}

/// Diagonal PD gains, one entry per model actuator.
struct PdGains {
  Vec kp;
  Vec kd;
};

struct ControllerConfig {
  ControllerKind kind = ControllerKind::kFblinState;
  double epsilon = 10.0;
  PdGains gains;
  std::map<std::string, PdGains> domain_gains;  // per-domain overrides
  double torque_limit = 0.0;                    // 0 disables the clamp

  const PdGains& gains_for(const std::string& domain) const {
    auto it = domain_gains.find(domain);
    return it == domain_gains.end() ? gains : it->second;
  }

  void validate(int m) const {
    if (!(epsilon > 0)) throw ConfigError("controller epsilon must be > 0");
    auto check = [&](const PdGains& g, const std::string& where) {
      if (!is_pd(kind)) return;
      if (g.kp.size() != m || g.kd.size() != m)
        throw ConfigError("PD gains" + where + " need " + std::to_string(m) + " entries");
      for (int i = 0; i < m; ++i) {
        if (g.kp[i] < 0 || g.kd[i] < 0) throw ConfigError("PD gains must be >= 0");
        if (g.kp[i] == 0 && g.kd[i] == 0)
          throw ConfigError("PD gains" + where + " vanish on actuator " + std::to_string(i));
      }
    };
    check(gains, "");
    for (const auto& [name, g] : domain_gains) check(g, " for domain " + name);
  }
};

/// Feedback linearization on the active actuators of one domain. Returns the
/// full actuator vector with passive entries zero.
inline Vec fblin(const OutputSpec& spec, const State& x, const ConstrainedTerms& t,
                 double epsilon, const PhaseInput& phase = {}) {
  const LieDerivatives L = lie_derivatives(spec, x, t, phase);
  const int k1 = spec.k1(), k2 = spec.k2();
  Vec rhs(k1 + k2);
  rhs << L.Lf_y1 + epsilon * L.eta.y1,
      L.Lf2_y2 + 2 * epsilon * L.eta.y2dot + epsilon * epsilon * L.eta.y2;
  const Vec ua = -L.A_dec.partialPivLu().solve(rhs);
  return spec.expand_inputs(ua, static_cast<int>(t.g_acc.cols()));
}

inline Vec fblin(const RobotModel& model, const OutputSpec& spec, const State& x,
                 const ConstraintSet& cs, double epsilon, const PhaseInput& phase = {}) {
  return fblin(spec, x, constrained_terms(model, x.q, x.qdot, cs), epsilon, phase);
}

/// Desired state for the PD laws. State-based: phase and its rate from the
/// measured state. Time-based: the controller clock.
struct PdReference {
  Vec q_d;
  Vec qdot_d;
  std::uint32_t flags = kFlagNone;
};

inline PdReference pd_reference(const RobotModel& model, const OutputSpec& spec,
                                const ConstraintSet& cs, const State& x, const PhaseInput& phase,
                                Vec* warm) {
  const Vec contact = constraint_positions(model, x.q, cs);
  const Vec q_warm = warm && warm->size() == x.q.size() ? *warm : x.q;
  IkResult ik;
  if (phase.time) {
    ik = phzd_reconstruct(model, spec, cs, contact, Vec::Zero(spec.k1()), *phase.time, phase,
                          q_warm);
  } else {
    const Vec y1 = spec.c1 * x.qdot - spec.c1_offset;
    ik = phzd_reconstruct(model, spec, cs, contact, y1, phase_state(spec, x.q), phase, q_warm);
  }
  if (warm) *warm = ik.q;
  return PdReference{ik.q, ik.qdot, ik.flags};
}

/// u = B^T(-Kp (q - q_d) - Kd (qdot - qdot_d)) restricted to the active
/// actuators. Model free: no D or H.
inline Vec pd_law(const RobotModel& model, const OutputSpec& spec, const PdGains& g,
                  const State& x, const PdReference& ref) {
  const Mat& B = model.actuation_matrix();
  const Vec ep = B.transpose() * (x.q - ref.q_d);
  const Vec ev = B.transpose() * (x.qdot - ref.qdot_d);
  Vec u = -(g.kp.cwiseProduct(ep) + g.kd.cwiseProduct(ev));
  Vec mask = Vec::Zero(model.m());
  for (int a : spec.active_actuators) mask[a] = 1.0;
  return u.cwiseProduct(mask);
}

inline Vec pd(const RobotModel& model, const OutputSpec& spec, const ConstraintSet& cs,
              const ControllerConfig& cfg, const State& x, const PhaseInput& phase, Vec* warm,
              std::uint32_t* flags = nullptr) {
  const PdReference ref = pd_reference(model, spec, cs, x, phase, warm);
  if (flags) *flags |= ref.flags;
  return pd_law(model, spec, cfg.gains_for(spec.domain), x, ref);
}

inline Vec saturate(const Vec& u, double limit, std::uint32_t* flags = nullptr) {
  if (!(limit > 0)) return u;
  Vec out = u.cwiseMax(-limit).cwiseMin(limit);
  if (flags && (out - u).cwiseAbs().maxCoeff() > 0) *flags |= kTorqueSaturated;
  return out;
}

/// d = u_applied - u_IO with u_IO the state-based linearizing law; d3 is the
/// phase-mismatch part u_IO^t - u_IO, zero unless a time phase is supplied.
struct Deviation {
  Vec d;
  Vec d2;
  Vec d3;
  Vec u_io;
};

inline Deviation deviation(const OutputSpec& spec, const State& x, const ConstrainedTerms& t,
                           double epsilon, const Vec& u_applied,
                           const std::optional<PhaseInput>& time_phase = std::nullopt) {
  Deviation dv;
  dv.u_io = fblin(spec, x, t, epsilon);
  dv.d = u_applied - dv.u_io;
  if (time_phase && time_phase->time) {
    const Vec u_t = fblin(spec, x, t, epsilon, *time_phase);
    dv.d3 = u_t - dv.u_io;
    dv.d2 = u_applied - u_t;
  } else {
    dv.d3 = Vec::Zero(dv.d.size());
    dv.d2 = dv.d;
  }
  return dv;
}

}  // namespace isswalk
