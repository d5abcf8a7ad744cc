#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "isswalk/biped.hpp"

namespace isswalk {

/// Posture and timing knobs for the biped gait. `foot_vx_impact` and `t_ds`
/// are initial guesses; the fit adjusts them so the impact preserves the hip
/// velocity and the trailing-foot load vanishes exactly at the end of double
/// support.
struct GaitSeed {
  double v_d = 0.4;
  double step_length = 0.4;
  double hip_height = 0.72;
  double torso_pitch = 0.0;
  double hip_x_impact = 0.24;  // hip ahead of the stance foot at touchdown
  double land_speed = 0.3;     // downward swing-foot speed at touchdown
  double clearance = 0.05;     // swing-foot height at mid swing
  double foot_vx_impact = 0.75;  // initial guess, solved by the design
  double t_ds = 0.2;             // initial guess, solved by the design
  // The Bezier window extends this fraction of each dwell before entry and
  // after exit, so guards fire strictly inside (0, 1).
  double phase_margin = 0.1;
};

struct GaitArtifact {
  GaitSeed seed;
  double v_d = 0;
  Mat alpha_ds, alpha_ss;
  double t_ds = 0, t_ss = 0;
  double p_plus_ds = 0, p_plus_ss = 0;
  double duration_ds = 0, duration_ss = 0;
  double time_origin_ds = 0, time_origin_ss = 0;
  double foot_vx_impact = 0.25;
  Vec chart_ds, chart_ss;
  State x_star;  // on the single-support guard, just before touchdown
  double invariance_residual = 0;
  double periodicity_residual = 0;
  double design_residual = 0;
  double spectral_radius = 0;
  double epsilon = 0;  // controller gain the fixed point was refined with
};

/// Writes the gait into the domain output specs.
inline void apply_gait(HybridSystem& hs, const GaitArtifact& g) {
  Domain& ds = hs.domains[hs.index("ds")];
  Domain& ss = hs.domains[hs.index("ss")];
  for (Domain* d : {&ds, &ss}) {
    d->spec.c1_offset = Vec::Constant(1, g.v_d);
    d->spec.phase.v_d = g.v_d;
  }
  ds.spec.alpha = g.alpha_ds;
  ds.spec.phase.p_plus = g.p_plus_ds;
  ds.spec.phase.duration = g.duration_ds;
  ds.spec.phase.time_origin = g.time_origin_ds;
  ds.spec.chart_state = g.chart_ds;
  ss.spec.alpha = g.alpha_ss;
  ss.spec.phase.p_plus = g.p_plus_ss;
  ss.spec.phase.duration = g.duration_ss;
  ss.spec.phase.time_origin = g.time_origin_ss;
  ss.spec.chart_state = g.chart_ss;
}

namespace gait_detail {

inline BipedParams leg_params(const RobotModel& model) {
  BipedParams p;
  p.thigh_length = model.links()[1].length;
  p.shank_length = model.links()[2].length;
  return p;
}

/// Configuration with both feet placed (swing foot anywhere).
inline Vec place(const RobotModel& model, double hx, double hz, double pitch, double sx,
                 double sz, double spitch, bool* ok = nullptr) {
  using namespace biped;
  const BipedParams p = leg_params(model);
  const LegAngles st = leg_ik(p, pitch, hx, hz, 0.0, 0.0, 0.0);
  const LegAngles sw = leg_ik(p, pitch, hx, hz, sx, sz, spitch);
  if (ok) *ok = st.reachable && sw.reachable;
  Vec q(kN);
  q << hx, hz, pitch, st.hip, st.knee, st.ankle, sw.hip, sw.knee, sw.ankle;
  return q;
}

/// Rows: stance foot (3), swing foot (3), hip x, hip z, torso pitch.
inline Mat kinematic_rows(const RobotModel& model, const Vec& q, const Vec& qdot) {
  using namespace biped;
  ConstraintSet both;
  both.entries = {{model.frame_index("stance_foot"), kDirAll},
                  {model.frame_index("swing_foot"), kDirAll}};
  const auto cj = constraint_jacobian(model, q, qdot, both);
  Mat A(kN, kN);
  A << cj.J, unit(kX), unit(kZ), unit(kPitch);
  return A;
}

inline Mat kinematic_rows_dot(const RobotModel& model, const Vec& q, const Vec& qdot) {
  ConstraintSet both;
  both.entries = {{model.frame_index("stance_foot"), kDirAll},
                  {model.frame_index("swing_foot"), kDirAll}};
  const auto cj = constraint_jacobian(model, q, qdot, both);
  Mat A = Mat::Zero(biped::kN, biped::kN);
  A.topRows(6) = cj.Jdot;
  return A;
}

/// Bezier basis rows (value, d/ds, d^2/ds^2) at s for degree 5.
inline Mat bezier_basis(double s) {
  Mat B(3, 6);
  for (int k = 0; k < 6; ++k) {
    Eigen::RowVectorXd e = Eigen::RowVectorXd::Zero(6);
    e[k] = 1.0;
    const BezierValue b = bezier_eval(e, s);
    B(0, k) = b.value;
    B(1, k) = b.d1;
    B(2, k) = b.d2;
  }
  return B;
}

/// min |B a - y|^2 subject to C a = c.
inline Eigen::RowVectorXd constrained_fit(const Mat& C, const Vec& c, const Mat& B, const Vec& y) {
  const int n = static_cast<int>(C.cols()), k = static_cast<int>(C.rows());
  Mat K = Mat::Zero(n + k, n + k);
  Vec r(n + k);
  K.topLeftCorner(n, n) = B.rows() ? Mat(B.transpose() * B) : Mat::Zero(n, n);
  K.topRightCorner(n, k) = C.transpose();
  K.bottomLeftCorner(k, n) = C;
  r << (B.rows() ? Vec(B.transpose() * y) : Vec::Zero(n)), c;
  return K.fullPivLu().solve(r).head(n).transpose();
}

}  // namespace gait_detail

/// Design residuals and diagnostics for one choice of the two free knobs.
struct GaitDesign {
  GaitArtifact gait;
  Vec residual;             // [hip velocity jump, trailing load at end of ds / weight]
  double min_swing_height = 0;  // over the open swing interval, normalised by s(1-s)
  double min_trailing_load = 0; // over [0, 0.9] of double support
  double min_leading_impulse = 0;
  double min_trailing_impulse = 0;
  bool feasible = true;
};

inline GaitDesign design_gait(const RobotModel& model, const HybridSystem& hs_template,
                              const GaitSeed& seed, double foot_vx, double t_ds,
                              double epsilon = 10.0, bool diagnostics = true) {
  using namespace biped;
  using gait_detail::kinematic_rows;
  using gait_detail::kinematic_rows_dot;
  using gait_detail::place;
  GaitDesign out;
  GaitArtifact& g = out.gait;
  g.seed = seed;
  g.v_d = seed.v_d;
  g.t_ds = t_ds;
  g.foot_vx_impact = foot_vx;
  const double L = seed.step_length, z0 = seed.hip_height, th0 = seed.torso_pitch;
  const double v = seed.v_d;
  const double x_imp = seed.hip_x_impact;
  const double x_ds0 = x_imp - L;
  const double x_e = x_ds0 + v * t_ds;
  g.t_ss = (x_imp - x_e) / v;
  if (!(g.t_ss > 0.05) || !(t_ds > 0.01)) out.feasible = false;
  bool ok = true, ok2 = true;

  // Touchdown state.
  const Vec q_m = place(model, x_imp, z0, th0, L, 0.0, 0.0, &ok);
  Vec b(kN);
  b << 0, 0, 0, foot_vx, -seed.land_speed, 0, v, 0, 0;
  const Vec qd_m = kinematic_rows(model, q_m, Vec::Zero(kN)).partialPivLu().solve(b);
  g.x_star = State{q_m, qd_m};

  // Impact and relabel.
  HybridSystem hs = hs_template;
  const Domain& ds_dom = hs.domains[hs.index("ds")];
  const ImpactResult im = impact_map(model, q_m, qd_m, ds_dom.cs);
  const State x_plus = apply_relabel(model, hs.edges[hs.index("ss")].relabel, State{q_m, im.qdot_plus});
  const double taudot_plus = x_plus.qdot[kX] / v;
  out.min_leading_impulse = std::numeric_limits<double>::infinity();
  out.min_trailing_impulse = std::numeric_limits<double>::infinity();
  for (size_t r = 0; r < im.cj.rows.size(); ++r) {
    if (im.cj.rows[r].dir != kDirZ) continue;
    const bool lead = im.cj.rows[r].frame == model.frame_index("swing_foot");
    double& slot = lead ? out.min_leading_impulse : out.min_trailing_impulse;
    slot = std::min(slot, im.impulse[static_cast<Eigen::Index>(r)]);
  }

  // Phase windows.
  const double m = seed.phase_margin;
  const double T = g.t_ss;
  g.duration_ds = t_ds * (1 + 2 * m);
  g.duration_ss = T * (1 + 2 * m);
  g.time_origin_ds = m * t_ds;
  g.time_origin_ss = m * T;
  g.p_plus_ds = x_ds0 - v * g.time_origin_ds;
  g.p_plus_ss = x_e - v * g.time_origin_ss;
  const double s_a = m / (1 + 2 * m), s_b = (1 + m) / (1 + 2 * m);
  const Mat Ba = gait_detail::bezier_basis(s_a), Bb = gait_detail::bezier_basis(s_b);

  // Double support: pose outputs leave with the post-impact rates and come to
  // rest at the nominal posture, with zero curvature at both ends.
  g.alpha_ds = Mat::Zero(2, 6);
  {
    Mat C(6, 6);
    C << Ba, Bb;
    const double rate[2] = {x_plus.qdot[kZ] / taudot_plus, x_plus.qdot[kPitch] / taudot_plus};
    const double rest[2] = {z0, th0};
    for (int i = 0; i < 2; ++i) {
      Vec c(6);
      c << rest[i], g.duration_ds * rate[i], 0, rest[i], 0, 0;
      g.alpha_ds.row(i) = C.fullPivLu().solve(c).transpose();
    }
  }

  // End of double support = start of single support.
  const Vec q_e = place(model, x_e, z0, th0, -L, 0.0, 0.0, &ok2);
  ok = ok && ok2;
  Vec be(kN);
  be << 0, 0, 0, 0, 0, 0, v, 0, 0;
  const Vec qd_e = kinematic_rows(model, q_e, Vec::Zero(kN)).partialPivLu().solve(be);

  const Domain& ss_dom = hs.domains[hs.index("ss")];
  const Mat Csw = ss_dom.spec.c2.bottomRows(3);
  const Vec y0 = Csw * q_e, yd0 = Csw * qd_e;
  const Vec y5 = Csw * q_m, yd5 = Csw * qd_m;
  // Swing rows match liftoff and touchdown to first order; the remaining
  // freedom fits a smooth foot path that rises to the clearance height at mid
  // swing, with the hip moving uniformly.
  const int n_fit = 9;
  Mat Y(n_fit, 3);
  Mat Bm(n_fit, 6);
  for (int j = 0; j < n_fit; ++j) {
    const double f = (j + 1.0) / (n_fit + 1.0);
    const double hx = x_e + v * T * f;
    const double fx = -L + 2 * L * f * f * (3 - 2 * f);
    const double fz = 16 * seed.clearance * f * f * (1 - f) * (1 - f);
    const Vec qf = place(model, hx, z0, th0, fx, fz, 0.0, &ok2);
    ok = ok && ok2;
    Y.row(j) = (Csw * qf).transpose();
    Bm.row(j) = gait_detail::bezier_basis(s_a + f * (s_b - s_a)).row(0);
  }
  g.alpha_ss = Mat::Zero(5, 6);
  g.alpha_ss.row(0).setConstant(z0);
  g.alpha_ss.row(1).setConstant(th0);
  {
    Mat C(4, 6);
    C << Ba.topRows(2), Bb.topRows(2);
    for (int i = 0; i < 3; ++i) {
      Vec c(4);
      c << y0[i], g.duration_ss * yd0[i], y5[i], g.duration_ss * yd5[i];
      g.alpha_ss.row(2 + i) = gait_detail::constrained_fit(C, c, Bm, Y.col(i));
    }
  }
  const double x_mid = x_e + 0.5 * v * T;
  const Vec q_mid = place(model, x_mid, z0, th0, 0.0, seed.clearance, 0.0, &ok2);
  if (!ok) out.feasible = false;

  apply_gait(hs, g);

  // Chart points at mid domain.
  {
    const Domain& d = hs.domains[hs.index("ds")];
    Vec contact(6);
    contact << 0, 0, M_PI / 2, -L, 0, M_PI / 2;
    const IkResult r = phzd_reconstruct(model, d.spec, d.cs, contact, Vec::Zero(1),
                                        g.time_origin_ds + 0.5 * t_ds, PhaseInput{}, q_e);
    g.chart_ds = State{r.q, r.qdot}.stacked();
  }
  {
    const Domain& d = hs.domains[hs.index("ss")];
    Vec contact(3);
    contact << 0, 0, M_PI / 2;
    const IkResult r = phzd_reconstruct(model, d.spec, d.cs, contact, Vec::Zero(1),
                                        g.time_origin_ss + 0.5 * T, PhaseInput{}, q_mid);
    g.chart_ss = State{r.q, r.qdot}.stacked();
  }
  apply_gait(hs, g);

  // Trailing load at the end of double support under the nominal input.
  const int sw = model.frame_index("swing_foot");
  auto trailing_load = [&](const State& x) {
    const Domain& d = hs.domains[hs.index("ds")];
    const ConstrainedTerms t = constrained_terms(model, x.q, x.qdot, d.cs);
    const Vec u = fblin(d.spec, x, t, epsilon);
    return normal_force(t, sw, u);
  };
  const double weight = model.total_mass() * model.gravity();
  const double end_load = trailing_load(State{q_e, qd_e}) / weight;
  out.residual.resize(2);
  out.residual << (x_plus.qdot[kX] - v) / v, end_load;

  // Invariance of the pose outputs through the impact.
  g.invariance_residual = output_errors(hs.domains[hs.index("ds")].spec, x_plus).eta2().norm();
  g.design_residual = out.residual.norm();

  if (diagnostics) {
    const Domain& d = hs.domains[hs.index("ds")];
    Vec contact(6);
    contact << 0, 0, M_PI / 2, -L, 0, M_PI / 2;
    out.min_trailing_load = std::numeric_limits<double>::infinity();
    Vec warm = x_plus.q;
    for (int i = 0; i <= 18; ++i) {
      const double tau = g.time_origin_ds + t_ds * i / 20.0;
      const IkResult r =
          phzd_reconstruct(model, d.spec, d.cs, contact, Vec::Zero(1), tau, PhaseInput{}, warm);
      warm = r.q;
      out.min_trailing_load = std::min(out.min_trailing_load, trailing_load(State{r.q, r.qdot}) / weight);
    }
    const Domain& s = hs.domains[hs.index("ss")];
    Vec c3(3);
    c3 << 0, 0, M_PI / 2;
    out.min_swing_height = std::numeric_limits<double>::infinity();
    warm = q_e;
    for (int i = 1; i < 50; ++i) {
      const double sfrac = i / 50.0;
      const IkResult r =
          phzd_reconstruct(model, s.spec, s.cs, c3, Vec::Zero(1), g.time_origin_ss + sfrac * T,
                           PhaseInput{}, warm);
      warm = r.q;
      const double h = frame_height(model, r.q, sw);
      out.min_swing_height = std::min(out.min_swing_height, h / (sfrac * (1 - sfrac)));
    }
    if (!(out.min_trailing_load > 0 && out.min_swing_height > 0 && out.min_leading_impulse > 0 &&
          out.min_trailing_impulse > 0))
      out.feasible = false;
  }
  return out;
}

/// Solves the two design residuals for (foot_vx_impact, t_ds) by damped
/// Gauss-Newton with a forward-difference Jacobian.
inline GaitDesign solve_gait_design(const RobotModel& model, const HybridSystem& hs_template,
                                    const GaitSeed& seed, double tol = 1e-12, int max_iter = 40) {
  Vec k(2);
  k << seed.foot_vx_impact, seed.t_ds;
  auto eval = [&](const Vec& kk) {
    return design_gait(model, hs_template, seed, kk[0], kk[1], 10.0, false).residual;
  };
  Vec r = eval(k);
  for (int it = 0; it < max_iter && r.norm() > tol; ++it) {
    Mat J(2, 2);
    for (int j = 0; j < 2; ++j) {
      Vec kp = k;
      const double h = 1e-7 * std::max(1.0, std::abs(k[j]));
      kp[j] += h;
      J.col(j) = (eval(kp) - r) / h;
    }
    const Vec step = J.fullPivLu().solve(-r);
    double a = 1.0;
    bool moved = false;
    for (int ls = 0; ls < 20; ++ls, a *= 0.5) {
      const Vec trial = k + a * step;
      if (!(trial[1] > 0.01)) continue;
      try {
        const Vec rt = eval(trial);
        if (rt.norm() < r.norm()) {
          k = trial;
          r = rt;
          moved = true;
          break;
        }
      } catch (const Error&) {
      }
    }
    if (!moved) break;
  }
  if (!(r.norm() <= 1e-8)) throw FitFailed("gait design residual " + std::to_string(r.norm()));
  return design_gait(model, hs_template, seed, k[0], k[1]);
}

}  // namespace isswalk
