#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "isswalk/control.hpp"
#include "isswalk/disturbance.hpp"
#include "isswalk/integrator.hpp"

namespace isswalk {

enum class GuardKind { kFrameHeight, kNormalForce };

struct GuardSpec {
  GuardKind kind = GuardKind::kFrameHeight;
  int frame = 0;
};

struct Domain {
  std::string name;
  ConstraintSet cs;
  OutputSpec spec;
  GuardSpec guard;
};

enum class ResetKind { kIdentityLiftoff, kImpactRelabel };

/// Leg swap as coordinate transpositions, then a shift of one coordinate by
/// the pre-swap x position of a frame (so the new stance foot sits at x = 0).
struct Relabel {
  std::vector<std::pair<int, int>> swap;
  int translate_frame = -1;
  int translate_coord = 0;
};

struct Edge {
  ResetKind kind = ResetKind::kIdentityLiftoff;
  int source = 0;
  int target = 0;
  Relabel relabel;
};

/// Directed cycle of domains. `edges[v]` leaves domain v.
struct HybridSystem {
  std::vector<Domain> domains;
  std::vector<Edge> edges;

  int index(const std::string& name) const {
    for (size_t i = 0; i < domains.size(); ++i)
      if (domains[i].name == name) return static_cast<int>(i);
    throw ConfigError("unknown domain '" + name + "'");
  }

  void validate(const RobotModel& model) const {
    if (domains.empty() || edges.size() != domains.size())
      throw ConfigError("hybrid system needs exactly one outgoing edge per domain");
    for (size_t v = 0; v < domains.size(); ++v) {
      const Edge& e = edges[v];
      if (e.source != static_cast<int>(v) || e.target < 0 ||
          e.target >= static_cast<int>(domains.size()))
        throw ConfigError("edge " + std::to_string(v) + " is not an outgoing edge of its domain");
      domains[v].spec.validate(model);
    }
  }
};

inline State apply_relabel(const RobotModel& model, const Relabel& r, const State& x) {
  State out = x;
  double shift = 0.0;
  if (r.translate_frame >= 0) {
    const ContactFrame& f = model.frames()[r.translate_frame];
    shift = model.point_position(x.q, model.kinematics(x.q), f.link, f.offset).x();
  }
  for (const auto& [a, b] : r.swap) {
    std::swap(out.q[a], out.q[b]);
    std::swap(out.qdot[a], out.qdot[b]);
  }
  out.q[r.translate_coord] -= shift;
  return out;
}

inline double frame_height(const RobotModel& model, const Vec& q, int frame) {
  const ContactFrame& f = model.frames()[frame];
  return model.point_position(q, model.kinematics(q), f.link, f.offset).y();
}

/// Vertical constraint force on `frame` given precomputed terms and input.
inline double normal_force(const ConstrainedTerms& t, int frame, const Vec& u) {
  const int r = t.cj.row_of(frame, kDirZ);
  if (r < 0) throw ConfigError("normal-force guard frame is not constrained in z");
  return t.lambda0[r] + t.lambda_u.row(r).dot(u);
}

/// Swing-foot height in single support, trailing-foot normal force in double
/// support. The transition fires when the value crosses zero from above.
inline double guard_value(const HybridSystem& hs, int v, const RobotModel& model, const State& x,
                          const Vec& u) {
  const Domain& d = hs.domains[v];
  if (d.guard.kind == GuardKind::kFrameHeight) return frame_height(model, x.q, d.guard.frame);
  return normal_force(constrained_terms(model, x.q, x.qdot, d.cs), d.guard.frame, u);
}

struct RolloutOptions {
  OdeOptions ode;
  double max_dwell = 3.0;
  double t_min = 1e-3;         // refractory time before guard checks
  double sample_dt = 0.0;      // 0 records only domain endpoints
  double guard_tol = 1e-14;
};

struct Sample {
  int step = 0;
  int vertex = 0;
  double t = 0;      // absolute
  double t_dom = 0;  // since domain entry
  double tau = 0;
  double guard = 0;
  Vec q, qdot, u, d, d3, y1, y2, y2dot, y2ddot;
  std::uint32_t flags = kFlagNone;

  Vec eta2() const {
    Vec e(y2.size() + y2dot.size());
    e << y2, y2dot;
    return e;
  }
};

struct StepRecord {
  int index = 0;  // domain traversal counter
  int vertex = 0;
  double t_start = 0;
  double dwell = 0;
  State x_start;
  State x_guard;
  Vec impulse;        // impulse of the reset that started this traversal
  double d_e = 0;     // impact perturbation magnitude applied at entry
  double d_max = 0;   // largest sampled |deviation|_inf in this traversal
  double eta2_max = 0;
  double guard_end = 0;
  std::uint32_t flags = kFlagNone;
};

struct ExecutionTrace {
  State x0;
  std::vector<StepRecord> steps;
  std::vector<Sample> samples;
  std::string failure;  // empty when all requested steps completed
  int cycles_completed = 0;

  /// Guard states at the end of every traversal of `vertex`.
  std::vector<State> section_states(int vertex) const {
    std::vector<State> out;
    for (const auto& s : steps)
      if (s.vertex == vertex) out.push_back(s.x_guard);
    return out;
  }
};

inline double inf_norm(const Vec& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

/// One rollout: plant, controller, disturbance sampler and caches. Not
/// shareable across threads; construct one per rollout.
class ClosedLoop {
 public:
  ClosedLoop(const HybridSystem& hs, const RobotModel& model, ControllerConfig cfg,
             DisturbanceSpec dist = {}, RolloutOptions opt = {})
      : hs_(hs),
        model_(model),
        cfg_(std::move(cfg)),
        dist_(std::move(dist)),
        opt_(opt),
        dstate_(dist_.seed) {
    cfg_.validate(model.m());
    dist_.validate();
    if (dist_.has_mass_scale()) plant_storage_ = model.mass_scaled(dist_.mass_scale);
  }

  const RobotModel& plant() const { return plant_storage_ ? *plant_storage_ : model_; }
  const RobotModel& model() const { return model_; }
  const HybridSystem& system() const { return hs_; }
  const ControllerConfig& config() const { return cfg_; }
  const DisturbanceSpec& disturbance() const { return dist_; }
  RolloutOptions& options() { return opt_; }

  PhaseInput controller_clock(int v, double t_dom) const {
    PhaseInput p;
    if (is_time_based(cfg_.kind))
      p.time = hs_.domains[v].spec.phase.time_origin + dist_.clock_scale * t_dom + dist_.clock_offset;
    return p;
  }

  /// Controller command (full actuator vector) before disturbances.
  Vec control(int v, double t_dom, const State& x, const ConstrainedTerms& plant_terms,
              std::uint32_t* flags = nullptr) {
    const Domain& d = hs_.domains[v];
    const PhaseInput phase = controller_clock(v, t_dom);
    Vec u;
    if (is_pd(cfg_.kind)) {
      u = pd(model_, d.spec, d.cs, cfg_, x, phase, &ik_warm_[v], flags);
    } else if (plant_storage_) {
      u = fblin(model_, d.spec, x, d.cs, cfg_.epsilon, phase);
    } else {
      u = fblin(d.spec, x, plant_terms, cfg_.epsilon, phase);
    }
    return saturate(u, cfg_.torque_limit, flags);
  }

  Vec injected(int v, double t_abs) {
    // Held noise is read at the start of the current step: steps end on
    // breakpoints, and a stage landing there must still see the old value.
    const double t_read =
        dist_.continuous == ContinuousKind::kUniformRandom && step_start_ ? *step_start_ : t_abs;
    Vec d = sample_continuous(dist_, t_read, model_.m(), dstate_);
    Vec mask = Vec::Zero(model_.m());
    for (int a : hs_.domains[v].spec.active_actuators) mask[a] = 1.0;
    return d.cwiseProduct(mask);
  }

  /// Applied input and plant terms at one state.
  struct Eval {
    ConstrainedTerms terms;
    Vec u;
    std::uint32_t flags = kFlagNone;
  };

  Eval evaluate(int v, double t_abs, double t_dom, const State& x) {
    Eval e;
    e.terms = constrained_terms(plant(), x.q, x.qdot, hs_.domains[v].cs);
    e.u = control(v, t_dom, x, e.terms, &e.flags) + injected(v, t_abs);
    return e;
  }

  Vec rhs(int v, double t_abs, double t_dom, const Vec& y) {
    const State x = State::from_stacked(y);
    const Eval e = evaluate(v, t_abs, t_dom, x);
    const int n = plant().n();
    Vec out(2 * n);
    out << x.qdot, e.terms.f_acc + e.terms.g_acc * e.u;
    return out;
  }

  double guard(int v, double t_abs, double t_dom, const State& x) {
    const Domain& d = hs_.domains[v];
    if (d.guard.kind == GuardKind::kFrameHeight) return frame_height(plant(), x.q, d.guard.frame);
    const Eval e = evaluate(v, t_abs, t_dom, x);
    return normal_force(e.terms, d.guard.frame, e.u);
  }

  Vec project(int v, const Vec& y) const {
    State x = State::from_stacked(y);
    x.qdot = impact_map(plant(), x.q, x.qdot, hs_.domains[v].cs).qdot_plus;
    return x.stacked();
  }

  Sample make_sample(int v, int step, double t_abs, double t_dom, const State& x) {
    const Domain& d = hs_.domains[v];
    Sample s;
    s.step = step;
    s.vertex = v;
    s.t = t_abs;
    s.t_dom = t_dom;
    s.q = x.q;
    s.qdot = x.qdot;
    const Eval e = evaluate(v, t_abs, t_dom, x);
    s.flags = e.flags;
    s.u = e.u;
    std::optional<PhaseInput> tp;
    if (is_time_based(cfg_.kind)) tp = controller_clock(v, t_dom);
    const Deviation dv = deviation(d.spec, x, e.terms, cfg_.epsilon, e.u, tp);
    s.d = dv.d;
    s.d3 = dv.d3;
    const LieDerivatives L = lie_derivatives(d.spec, x, e.terms, {}, false);
    s.tau = L.eta.tau;
    s.flags |= L.eta.flags;
    s.y1 = L.eta.y1;
    s.y2 = L.eta.y2;
    s.y2dot = L.eta.y2dot;
    s.y2ddot = L.Lf2_y2 + L.LgLf_y2 * d.spec.select_inputs(e.u.transpose()).transpose();
    s.guard = d.guard.kind == GuardKind::kFrameHeight
                  ? frame_height(plant(), x.q, d.guard.frame)
                  : normal_force(e.terms, d.guard.frame, e.u);
    for (const auto& c : d.cs.entries) {
      if (d.guard.kind == GuardKind::kNormalForce && c.frame == d.guard.frame) continue;
      const int r = e.terms.cj.row_of(c.frame, kDirZ);
      if (r >= 0 && normal_force(e.terms, c.frame, e.u) < 0) s.flags |= kStanceForceNegative;
    }
    return s;
  }

  struct DomainResult {
    State x_guard;
    double dwell = 0;
    double guard_end = 0;
    std::uint32_t flags = kFlagNone;
    double d_max = 0;
    double eta2_max = 0;
  };

  /// Integrates domain v from x0 until its guard fires.
  DomainResult step_integrate(int v, const State& x0, double t0_abs, int step,
                              std::vector<Sample>* samples = nullptr) {
    const OdeOptions& o = opt_.ode;
    auto f = [&](double td, const Vec& y) { return rhs(v, t0_abs + td, td, y); };
    DomainResult res;
    double t = 0;
    Vec y = x0.stacked();
    Vec k1 = f(0.0, y);
    double h = o.h_init;
    bool armed = false;
    const bool sampling = samples && opt_.sample_dt > 0;
    double next_sample = sampling ? std::ceil(t0_abs / opt_.sample_dt - 1e-9) * opt_.sample_dt : 0;
    auto record = [&](double td, const Vec& ys) {
      Sample s = make_sample(v, step, t0_abs + td, td, State::from_stacked(ys));
      res.flags |= s.flags;
      res.d_max = std::max(res.d_max, inf_norm(s.d));
      res.eta2_max = std::max(res.eta2_max, s.eta2().norm());
      samples->push_back(std::move(s));
    };
    auto record_until = [&](const DormandPrince::Attempt& a, double t_end) {
      if (!sampling) return;
      while (next_sample - t0_abs <= t_end + 1e-15) {
        const double td = next_sample - t0_abs;
        const double theta = a.h > 0 ? std::clamp((td - a.t0) / a.h, 0.0, 1.0) : 0.0;
        record(td, DormandPrince::dense(a, theta));
        next_sample += opt_.sample_dt;
      }
    };
    if (sampling && std::abs(next_sample - t0_abs) < 1e-12) {
      record(0.0, y);
      next_sample += opt_.sample_dt;
    }
    while (true) {
      if (t > opt_.max_dwell)
        throw NoImpact("domain " + hs_.domains[v].name + " exceeded max dwell " +
                       std::to_string(opt_.max_dwell) + " s");
      h = std::min(h, o.h_max);
      const double bp = next_breakpoint(dist_, t0_abs + t) - t0_abs;
      const double h_free = h;
      const bool clipped = bp > t + 1e-12 && t + h > bp;
      if (clipped) h = bp - t;
      step_start_ = t0_abs + t;
      DormandPrince::Attempt a = DormandPrince::attempt(f, t, y, k1, h, o);
      step_start_.reset();
      if (!(a.error <= 1.0)) {
        h = std::min(0.5 * h, DormandPrince::next_step(h, a.error));
        if (h < o.h_min)
          throw IntegrationBlowup("step size underflow in domain " + hs_.domains[v].name);
        continue;
      }
      const Vec y1 = project(v, a.y1);
      if (!y1.allFinite() || y1.cwiseAbs().maxCoeff() > 1e6)
        throw IntegrationBlowup("state exceeded 1e6 in domain " + hs_.domains[v].name);
      const double t1 = t + h;
      const bool check = t1 >= opt_.t_min;
      const double g1 = check ? guard(v, t0_abs + t1, t1, State::from_stacked(y1)) : 0.0;
      if (check && armed && g1 <= 0.0) {
        // Illinois false position, re-stepping from the last accepted point.
        double lo = 0.0, hi = h, tc = h;
        double glo = guard(v, t0_abs + t, t, State::from_stacked(y)), ghi = g1;
        Vec yc = y1;
        double gc = g1;
        int side = 0;
        for (int it = 0; it < 100 && std::abs(gc) > opt_.guard_tol; ++it) {
          double mid = (glo > 0 && ghi < glo) ? hi - ghi * (hi - lo) / (ghi - glo) : 0.5 * (lo + hi);
          if (!(mid > lo && mid < hi)) mid = 0.5 * (lo + hi);
          step_start_ = t0_abs + t;
          yc = project(v, DormandPrince::attempt(f, t, y, k1, mid, o, false).y1);
          step_start_.reset();
          gc = guard(v, t0_abs + t + mid, t + mid, State::from_stacked(yc));
          tc = mid;
          if (gc > 0) {
            lo = mid;
            glo = gc;
            if (side == 1) ghi *= 0.5;
            side = 1;
          } else {
            hi = mid;
            ghi = gc;
            if (side == -1) glo *= 0.5;
            side = -1;
          }
          if (hi - lo < 1e-15) break;
        }
        res.dwell = t + tc;
        record_until(a, res.dwell - 1e-12);
        res.x_guard = State::from_stacked(yc);
        res.guard_end = gc;
        if (sampling) record(res.dwell, yc);
        return res;
      }
      if (check && g1 > 0.0) armed = true;
      record_until(a, t1);
      t = t1;
      y = y1;
      k1 = f(t, y);
      // A step shortened to land on a breakpoint says nothing about the next one.
      h = clipped ? std::max(h_free, DormandPrince::next_step(h, a.error))
                  : DormandPrince::next_step(h, a.error);
    }
  }

  struct ResetResult {
    State x;
    Vec impulse;
    double d_e = 0;
    std::uint32_t flags = kFlagNone;
  };

  ResetResult reset(int v, const State& x_guard) {
    const Edge& e = hs_.edges[v];
    ResetResult r{x_guard, Vec::Zero(0), 0.0, kFlagNone};
    if (e.kind == ResetKind::kIdentityLiftoff) return r;
    const Domain& target = hs_.domains[e.target];
    const ImpactResult im = impact_map(plant(), x_guard.q, x_guard.qdot, target.cs);
    r.impulse = im.impulse;
    r.flags |= im.flags;
    r.x = apply_relabel(plant(), e.relabel, State{x_guard.q, im.qdot_plus});
    if (dist_.impact_bound > 0) {
      const ImpactPerturbation p = perturb_impact(dist_, plant(), r.x, target.cs, dstate_);
      r.x.qdot = p.qdot;
      r.d_e = p.magnitude;
    }
    return r;
  }

  /// Runs n_steps full cycles. With `on_guard` the first action is the reset
  /// leaving `start_vertex`; otherwise integration starts inside it.
  ExecutionTrace execute(int start_vertex, const State& x0, bool on_guard, int n_steps,
                         bool keep_samples = false) {
    ExecutionTrace tr;
    tr.x0 = x0;
    const int nd = static_cast<int>(hs_.domains.size());
    int v = start_vertex;
    State x = x0;
    double t_abs = 0;
    int neg_impulse_run = 0;
    const int traversals = n_steps * nd;
    for (int k = 0; k < traversals; ++k) {
      StepRecord rec;
      rec.index = k;
      try {
        if (on_guard || k > 0) {
          const int from = v;
          const ResetResult r = reset(v, x);
          rec.impulse = r.impulse;
          rec.d_e = r.d_e;
          rec.flags |= r.flags;
          x = r.x;
          v = hs_.edges[v].target;
          if (hs_.edges[from].kind == ResetKind::kImpactRelabel)
            neg_impulse_run = (r.flags & kNegativeNormalImpulse) ? neg_impulse_run + 1 : 0;
          if (neg_impulse_run > 1) {
            tr.failure = "NegativeNormalImpulse";
            break;
          }
        }
        rec.vertex = v;
        rec.t_start = t_abs;
        rec.x_start = x;
        const DomainResult dr =
            step_integrate(v, x, t_abs, k, keep_samples ? &tr.samples : nullptr);
        rec.dwell = dr.dwell;
        rec.x_guard = dr.x_guard;
        rec.guard_end = dr.guard_end;
        rec.flags |= dr.flags;
        rec.d_max = dr.d_max;
        rec.eta2_max = dr.eta2_max;
        x = dr.x_guard;
        t_abs += dr.dwell;
        tr.steps.push_back(rec);
      } catch (const Error& err) {
        tr.failure = err.name();
        break;
      }
      if ((k + 1) % nd == 0) tr.cycles_completed = (k + 1) / nd;
    }
    return tr;
  }

 private:
  const HybridSystem& hs_;
  const RobotModel& model_;
  ControllerConfig cfg_;
  DisturbanceSpec dist_;
  RolloutOptions opt_;
  DisturbanceState dstate_;
  std::optional<double> step_start_;
  std::optional<RobotModel> plant_storage_;
  Vec ik_warm_[4];
};

/// Max of sampled continuous deviation and impact perturbation magnitudes.
inline double d_norm_max(const ExecutionTrace& tr) {
  double m = 0;
  for (const auto& s : tr.samples) m = std::max(m, inf_norm(s.d));
  for (const auto& st : tr.steps) m = std::max({m, st.d_e, st.d_max});
  return m;
}

}  // namespace isswalk
