#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "isswalk/dynamics.hpp"
#include "isswalk/integrator.hpp"

namespace isswalk {

/// Serial chain pinned at the origin, every joint actuated. The joint
/// offsets make q = 0 a curled posture that gravity pulls on, so a PD
/// regulator to q = 0 keeps a small steady error and a nonzero deviation.
struct ChainParams {
  int links = 5;
  double mass = 0.5, length = 0.2, com = 0.1;
  std::vector<double> offsets = {0.6, 0.3, 0.3, 0.3, 0.3};
  double gravity = 9.81;
};

inline RobotModel make_chain_model(const ChainParams& p = {}) {
  if (p.links < 1) throw InvalidModel("chain needs at least one link");
  if (static_cast<int>(p.offsets.size()) != p.links)
    throw InvalidModel("chain offsets need one entry per link");
  std::vector<Link> links;
  std::vector<int> act;
  for (int i = 0; i < p.links; ++i) {
    links.push_back(Link{"link" + std::to_string(i), i - 1, i == 0 ? 0.0 : p.length, p.offsets[i],
                         p.mass, p.mass * p.length * p.length / 12.0, p.length, p.com});
    act.push_back(i);
  }
  return RobotModel(links, BaseKind::kPinned, act, {{"tip", p.links - 1, p.length}}, p.gravity);
}

struct ChainSample {
  double t = 0;
  Vec q, qdot, u, d;
};

struct ChainTrace {
  std::vector<ChainSample> samples;
  double steady_error = 0;  // max |q_i| over the final second
  double d_max = 0;         // max |d|_inf over all samples
  double d_min_tail = 0;    // min |d|_inf over the final second
  double d_max_tail = 0;    // max |d|_inf over the final second
};

struct ChainRunOptions {
  double t_end = 5.0;
  double sample_dt = 1e-3;
  double epsilon = 10.0;  // gain of the linearizing law the deviation is measured against
  OdeOptions ode{};
};

inline Vec chain_pd(double kp, double kd, const Vec& q, const Vec& qdot) {
  return -kp * q - kd * qdot;
}

/// Regulates the chain to q_d = 0 with u = -kp q - kd qdot and records
/// d = u - u_IO, u_IO = D(-2 eps qdot - eps^2 q) + H.
inline ChainTrace simulate_chain_pd(const RobotModel& model, double kp, double kd, const Vec& q0,
                                    const Vec& qdot0, const ChainRunOptions& o = {}) {
  if (model.m() != model.n()) throw Underactuated("chain regulation needs every joint actuated");
  const int n = model.n();
  auto f = [&](double, const Vec& y) {
    const Vec q = y.head(n), qd = y.tail(n);
    Vec out(2 * n);
    out << qd, mass_matrix(model, q).llt().solve(chain_pd(kp, kd, q, qd) - bias_vector(model, q, qd));
    return out;
  };
  ChainTrace tr;
  auto record = [&](double t, const Vec& y) {
    ChainSample s;
    s.t = t;
    s.q = y.head(n);
    s.qdot = y.tail(n);
    s.u = chain_pd(kp, kd, s.q, s.qdot);
    const Vec u_io = mass_matrix(model, s.q) * (-2 * o.epsilon * s.qdot - o.epsilon * o.epsilon * s.q) +
                     bias_vector(model, s.q, s.qdot);
    s.d = s.u - u_io;
    tr.samples.push_back(std::move(s));
  };
  Vec y(2 * n);
  y << q0, qdot0;
  double t = 0, h = o.ode.h_init, next = 0;
  Vec k1 = f(t, y);
  record(0, y);
  next = o.sample_dt;
  while (t < o.t_end - 1e-12) {
    h = std::min({h, o.ode.h_max, o.t_end - t});
    const auto a = DormandPrince::attempt(f, t, y, k1, h, o.ode);
    if (!(a.error <= 1.0)) {
      h = std::min(0.5 * h, DormandPrince::next_step(h, a.error));
      if (h < o.ode.h_min) throw IntegrationBlowup("chain step size underflow");
      continue;
    }
    while (next <= t + h + 1e-12 && next <= o.t_end + 1e-12) {
      record(next, DormandPrince::dense(a, (next - t) / h));
      next += o.sample_dt;
    }
    t += h;
    y = a.y1;
    k1 = a.k7;
    if (!y.allFinite()) throw IntegrationBlowup("chain state is not finite");
    h = DormandPrince::next_step(h, a.error);
  }
  tr.d_min_tail = std::numeric_limits<double>::infinity();
  for (const auto& s : tr.samples) {
    const double dn = s.d.cwiseAbs().maxCoeff();
    tr.d_max = std::max(tr.d_max, dn);
    if (s.t >= o.t_end - 1.0 - 1e-12) {
      tr.steady_error = std::max(tr.steady_error, s.q.cwiseAbs().maxCoeff());
      tr.d_min_tail = std::min(tr.d_min_tail, dn);
      tr.d_max_tail = std::max(tr.d_max_tail, dn);
    }
  }
  return tr;
}

inline Vec random_chain_start(int n, std::uint64_t seed, double amplitude = 0.5) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-amplitude, amplitude);
  Vec q(n);
  for (auto& c : q) c = u(rng);
  return q;
}

struct ChainGainResult {
  double kp = 0, kd = 0;
  double worst_steady_error = 0;
  std::vector<std::vector<double>> table;  // [kp index][kd index] -> worst steady error
};

/// Uniform gains from a grid, scored by the worst steady error over starts.
inline ChainGainResult tune_chain_gains(const RobotModel& model, const std::vector<double>& kps,
                                        const std::vector<double>& kds,
                                        const std::vector<Vec>& starts,
                                        const ChainRunOptions& o = {}) {
  ChainGainResult best;
  best.worst_steady_error = std::numeric_limits<double>::infinity();
  for (double kp : kps) {
    best.table.emplace_back();
    for (double kd : kds) {
      double worst = 0;
      for (const auto& q0 : starts) {
        try {
          worst = std::max(worst, simulate_chain_pd(model, kp, kd, q0, Vec::Zero(q0.size()), o).steady_error);
        } catch (const IntegrationBlowup&) {
          worst = std::numeric_limits<double>::infinity();
        }
      }
      best.table.back().push_back(worst);
      if (worst < best.worst_steady_error) best = ChainGainResult{kp, kd, worst, best.table};
    }
  }
  return best;
}

struct GainRayPoint {
  double scale = 1, kp = 0, kd = 0;
  double d_max_tail = 0;  // worst over starts
  double steady_error = 0;
};

struct GainRay {
  std::vector<GainRayPoint> points;  // ascending scale
  bool decreasing = false;           // steady-state |d| strictly falls as the gains grow
};

/// Scales (kp, kd) together and records the steady-state deviation. This is
/// the empirical stand-in for "any deviation bound is reachable with large
/// enough gains": only the trend along the ray is checked.
inline GainRay gain_ray(const RobotModel& model, double kp, double kd, std::vector<double> scales,
                        const std::vector<Vec>& starts, const ChainRunOptions& o = {}) {
  std::sort(scales.begin(), scales.end());
  GainRay ray;
  for (double s : scales) {
    GainRayPoint p{s, s * kp, s * kd, 0, 0};
    for (const auto& q0 : starts) {
      const ChainTrace tr = simulate_chain_pd(model, p.kp, p.kd, q0, Vec::Zero(q0.size()), o);
      p.d_max_tail = std::max(p.d_max_tail, tr.d_max_tail);
      p.steady_error = std::max(p.steady_error, tr.steady_error);
    }
    ray.points.push_back(p);
  }
  ray.decreasing = !ray.points.empty();
  for (size_t i = 1; i < ray.points.size(); ++i)
    if (!(ray.points[i].d_max_tail < ray.points[i - 1].d_max_tail)) ray.decreasing = false;
  return ray;
}

// ---------------------------------------------------------------------------
// Strict Lyapunov certificate for PD regulation.

/// Model bounds over a set of configurations:
///   |C(q, v)| <= c_c |v|, |G(q)| <= c_c, |D(q)| <= c_d, |Ddot - C| <= c_m |v|.
/// The velocity-linear terms use sqrt(sum_i |M(q, e_i)|^2), which bounds
/// |M(q, v)| / |v| by Cauchy-Schwarz.
struct PdModelBounds {
  double c_c = 0, c_d = 0, c_m = 0;
};

inline PdModelBounds probe_pd_bounds(const RobotModel& model, const std::vector<Vec>& qs) {
  PdModelBounds b;
  const int n = model.n();
  for (const auto& q : qs) {
    double sc = 0, sm = 0;
    for (int i = 0; i < n; ++i) {
      const Vec e = Vec::Unit(n, i);
      const Mat C = coriolis_matrix(model, q, e);
      sc += std::pow(C.operatorNorm(), 2);
      sm += std::pow((mass_matrix_dot(model, q, e) - C).operatorNorm(), 2);
    }
    b.c_c = std::max({b.c_c, std::sqrt(sc), gravity_vector(model, q).norm()});
    b.c_m = std::max(b.c_m, std::sqrt(sm));
    Eigen::SelfAdjointEigenSolver<Mat> es(mass_matrix(model, q), Eigen::EigenvaluesOnly);
    b.c_d = std::max(b.c_d, es.eigenvalues().maxCoeff());
  }
  return b;
}

struct StrictLyapunovOptions {
  int positivity_samples = 10000;
  double e_range = 0.5;     // box half-width for sampled errors
  double edot_range = 2.0;  // box half-width for sampled error rates
  double kappa_q = 0.0;     // bound on |q_d|, |qdot_d|, |qddot_d|; zero for regulation
  std::uint64_t seed = 1;
};

struct StrictLyapunovReport {
  double kappa0 = 0, kappa0_bound = 0;
  double kp = 0, kd = 0;
  PdModelBounds bounds;
  double kappa_q = 0;
  int positivity_checked = 0;
  int positivity_failures = 0;
  double min_v_ratio = 0;  // min V / (|e|^2 + |edot|^2) over the sampled states
  int samples = 0;
  int outside = 0;  // trajectory samples outside the residual set
  int violations_outside = 0;
  double max_vdot_outside = -std::numeric_limits<double>::infinity();
  bool bound_ok = false, positive = false, decreasing = false, pass = false;
};

inline double pd_kappa(double kappa0, const Vec& e) { return kappa0 / (1 + e.norm()); }

inline double strict_v(const Mat& D, double kp, double kappa0, const Vec& e, const Vec& edot) {
  return 0.5 * kp * e.squaredNorm() + 0.5 * edot.dot(D * edot) + pd_kappa(kappa0, e) * e.dot(D * edot);
}

/// Right side of the closing inequality on dV/dt; the residual set is where it is >= 0.
inline double strict_vdot_bound(const StrictLyapunovReport& r, double e_norm, double edot_norm) {
  const double k0 = r.kappa0, kq = r.kappa_q, cc = r.bounds.c_c, cd = r.bounds.c_d, cm = r.bounds.c_m;
  const double kappa = k0 / (1 + e_norm);
  return -kappa * r.kp * e_norm * e_norm -
         (r.kd - cc * kq - kappa * cd - k0 * cm) * edot_norm * edot_norm +
         (k0 * cc * kq * kq + cc + cd * kq + k0 * (cm + cc) * kq + k0 * r.kd) * edot_norm +
         k0 * (cc + cd * kq);
}

/// Checks V = 1/2 e'Kp e + 1/2 edot'D edot + kappa(e) e'D edot for uniform PD
/// gains: the kappa0 bound, positivity on sampled states (each also at the
/// rate edot = -kappa e that minimizes V), and dV/dt < 0 along the trace
/// wherever the closing inequality is negative.
inline StrictLyapunovReport strict_lyapunov_pd_check(const RobotModel& model, const ChainTrace& tr,
                                                     double kp, double kd, double kappa0,
                                                     const StrictLyapunovOptions& o = {}) {
  if (model.m() != model.n())
    throw Underactuated("strict Lyapunov check needs every coordinate actuated");
  const int n = model.n();
  StrictLyapunovReport r;
  r.kappa0 = kappa0;
  r.kp = kp;
  r.kd = kd;
  r.kappa_q = o.kappa_q;

  std::mt19937_64 rng(o.seed);
  std::uniform_real_distribution<double> ue(-o.e_range, o.e_range), uv(-o.edot_range, o.edot_range);
  std::vector<Vec> es, eds;
  for (int i = 0; i < o.positivity_samples; ++i) {
    Vec e(n), ed(n);
    for (auto& c : e) c = ue(rng);
    for (auto& c : ed) c = uv(rng);
    es.push_back(e);
    eds.push_back(ed);
  }
  std::vector<Vec> qs = es;
  for (size_t i = 0; i < tr.samples.size(); i += 50) qs.push_back(tr.samples[i].q);
  r.bounds = probe_pd_bounds(model, qs);
  // |Kp| |D| under a square root over |D|.
  r.kappa0_bound = std::sqrt(kp * r.bounds.c_d) / r.bounds.c_d;
  r.bound_ok = kappa0 <= r.kappa0_bound * (1 + 1e-12);

  r.min_v_ratio = std::numeric_limits<double>::infinity();
  for (int i = 0; i < o.positivity_samples; ++i) {
    const Mat D = mass_matrix(model, es[i]);  // regulation: q = e
    const Vec worst = -pd_kappa(kappa0, es[i]) * es[i];
    for (const Vec& ed : {eds[i], worst}) {
      const double v = strict_v(D, kp, kappa0, es[i], ed);
      const double s = es[i].squaredNorm() + ed.squaredNorm();
      ++r.positivity_checked;
      r.min_v_ratio = std::min(r.min_v_ratio, v / s);
      if (!(v > 0)) ++r.positivity_failures;
    }
  }
  r.positive = r.positivity_failures == 0;

  for (const auto& s : tr.samples) {
    const Vec& e = s.q;
    const Vec& ed = s.qdot;
    const Mat D = mass_matrix(model, s.q);
    const Mat Dd = mass_matrix_dot(model, s.q, s.qdot);
    const Vec edd = D.llt().solve(s.u - bias_vector(model, s.q, s.qdot));
    const double en = e.norm(), k = pd_kappa(kappa0, e);
    const double kdot = en > 0 ? -kappa0 * e.dot(ed) / (en * (1 + en) * (1 + en)) : 0.0;
    const double vdot = kp * e.dot(ed) + ed.dot(D * edd) + 0.5 * ed.dot(Dd * ed) +
                        kdot * e.dot(D * ed) + k * (ed.dot(D * ed) + e.dot(Dd * ed) + e.dot(D * edd));
    ++r.samples;
    if (strict_vdot_bound(r, en, ed.norm()) < 0) {
      ++r.outside;
      r.max_vdot_outside = std::max(r.max_vdot_outside, vdot);
      if (!(vdot < 0)) ++r.violations_outside;
    }
  }
  r.decreasing = r.violations_outside == 0;
  r.pass = r.bound_ok && r.positive && r.decreasing;
  return r;
}

}  // namespace isswalk
