#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "isswalk/model.hpp"

namespace isswalk {

// ---------------------------------------------------------------------------
// Unconstrained terms: D(q), H(q, qdot) = C qdot + G.

inline Mat mass_matrix(const RobotModel& model, const Vec& q) {
  model.check_q(q);
  const int n = model.n();
  const auto k = model.kinematics(q);
  Mat D = Mat::Zero(n, n);
  Mat J(2, n);
  for (size_t i = 0; i < model.links().size(); ++i) {
    const Link& l = model.links()[i];
    model.point_jacobian(k, static_cast<int>(i), l.com_offset, J);
    D.noalias() += l.mass * J.transpose() * J;
    for (int a : model.angle_coords(static_cast<int>(i)))
      for (int b : model.angle_coords(static_cast<int>(i))) D(a, b) += l.inertia;
  }
  return D;
}

inline Vec gravity_vector(const RobotModel& model, const Vec& q) {
  model.check_q(q);
  const auto k = model.kinematics(q);
  Vec G = Vec::Zero(model.n());
  Mat J(2, model.n());
  for (size_t i = 0; i < model.links().size(); ++i) {
    const Link& l = model.links()[i];
    model.point_jacobian(k, static_cast<int>(i), l.com_offset, J);
    G += l.mass * model.gravity() * J.row(1).transpose();
  }
  return G;
}

/// H(q, qdot) = C(q, qdot) qdot + G(q), assembled link by link from the COM
/// bias accelerations.
inline Vec bias_vector(const RobotModel& model, const Vec& q, const Vec& qdot) {
  model.check_q(q);
  model.check_q(qdot);
  const auto k = model.kinematics(q, qdot);
  Vec H = Vec::Zero(model.n());
  Mat J(2, model.n());
  for (size_t i = 0; i < model.links().size(); ++i) {
    const Link& l = model.links()[i];
    model.point_jacobian(k, static_cast<int>(i), l.com_offset, J);
    Vec2 a = model.point_bias_acceleration(k, static_cast<int>(i), l.com_offset);
    a.y() += model.gravity();
    H.noalias() += l.mass * J.transpose() * a;
  }
  return H;
}

/// dD/dq_c for every coordinate c.
inline std::vector<Mat> mass_matrix_partials(const RobotModel& model, const Vec& q) {
  model.check_q(q);
  const int n = model.n();
  const auto k = model.kinematics(q);
  std::vector<Mat> dD(n, Mat::Zero(n, n));
  Mat J(2, n), dJ(2, n);
  for (size_t i = 0; i < model.links().size(); ++i) {
    const Link& l = model.links()[i];
    model.point_jacobian(k, static_cast<int>(i), l.com_offset, J);
    for (int c = 0; c < n; ++c) {
      model.point_jacobian_partial(k, static_cast<int>(i), l.com_offset, c, dJ);
      const Mat T = l.mass * dJ.transpose() * J;
      dD[c] += T + T.transpose();
    }
  }
  return dD;
}

inline Mat mass_matrix_dot(const RobotModel& model, const Vec& q, const Vec& qdot) {
  const int n = model.n();
  const auto k = model.kinematics(q, qdot);
  Mat Dd = Mat::Zero(n, n);
  Mat J(2, n), Jd(2, n);
  for (size_t i = 0; i < model.links().size(); ++i) {
    const Link& l = model.links()[i];
    model.point_jacobian(k, static_cast<int>(i), l.com_offset, J);
    model.point_jacobian_dot(k, static_cast<int>(i), l.com_offset, Jd);
    const Mat T = l.mass * Jd.transpose() * J;
    Dd += T + T.transpose();
  }
  return Dd;
}

/// Coriolis matrix from Christoffel symbols of the first kind.
inline Mat coriolis_matrix(const RobotModel& model, const Vec& q, const Vec& qdot) {
  const int n = model.n();
  const auto dD = mass_matrix_partials(model, q);
  Mat C = Mat::Zero(n, n);
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b) {
      double s = 0;
      for (int c = 0; c < n; ++c)
        s += 0.5 * (dD[c](a, b) + dD[b](a, c) - dD[a](b, c)) * qdot[c];
      C(a, b) = s;
    }
  return C;
}

inline double kinetic_energy(const RobotModel& model, const Vec& q, const Vec& qdot) {
  return 0.5 * qdot.dot(mass_matrix(model, q) * qdot);
}

inline double potential_energy(const RobotModel& model, const Vec& q) {
  const auto k = model.kinematics(q);
  double U = 0;
  for (size_t i = 0; i < model.links().size(); ++i) {
    const Link& l = model.links()[i];
    U += l.mass * model.gravity() *
         model.point_position(q, k, static_cast<int>(i), l.com_offset).y();
  }
  return U;
}

// ---------------------------------------------------------------------------
// Holonomic contact constraints.

enum ConstraintDir : unsigned { kDirX = 1u, kDirZ = 2u, kDirPitch = 4u, kDirAll = 7u };

struct ConstraintEntry {
  int frame = 0;
  unsigned dirs = kDirAll;
};

struct ConstraintSet {
  std::vector<ConstraintEntry> entries;

  bool empty() const { return entries.empty(); }
};

struct ConstraintRow {
  int frame;
  ConstraintDir dir;
};

struct ConstraintJacobian {
  Mat J;
  Mat Jdot;
  std::vector<ConstraintRow> rows;

  /// Row index of (frame, dir), or -1 when pruned or absent.
  int row_of(int frame, ConstraintDir dir) const {
    for (size_t r = 0; r < rows.size(); ++r)
      if (rows[r].frame == frame && rows[r].dir == dir) return static_cast<int>(r);
    return -1;
  }
};

/// Positions of the constrained quantities (x, z, absolute pitch) in the same
/// row layout as `constraint_jacobian` before pruning.
inline Vec constraint_positions(const RobotModel& model, const Vec& q, const ConstraintSet& cs) {
  const auto k = model.kinematics(q);
  std::vector<double> out;
  for (const auto& e : cs.entries) {
    const ContactFrame& f = model.frames()[e.frame];
    const Vec2 p = model.point_position(q, k, f.link, f.offset);
    if (e.dirs & kDirX) out.push_back(p.x());
    if (e.dirs & kDirZ) out.push_back(p.y());
    if (e.dirs & kDirPitch) out.push_back(k.phi[f.link]);
  }
  return Eigen::Map<Vec>(out.data(), static_cast<Eigen::Index>(out.size()));
}

/// J_h and Jdot_h. Rows that vanish identically (a frame pinned by the base
/// itself) are pruned.
inline ConstraintJacobian constraint_jacobian(const RobotModel& model, const Vec& q,
                                              const Vec& qdot, const ConstraintSet& cs) {
  model.check_q(q);
  const int n = model.n();
  const auto k = model.kinematics(q, qdot);
  std::vector<Eigen::RowVectorXd> rows, drows;
  ConstraintJacobian out;
  Mat Jp(2, n), Jpd(2, n);
  for (const auto& e : cs.entries) {
    const ContactFrame& f = model.frames()[e.frame];
    model.point_jacobian(k, f.link, f.offset, Jp);
    model.point_jacobian_dot(k, f.link, f.offset, Jpd);
    auto push = [&](const Eigen::RowVectorXd& r, const Eigen::RowVectorXd& dr, ConstraintDir d) {
      if (r.cwiseAbs().maxCoeff() < 1e-14) return;
      rows.push_back(r);
      drows.push_back(dr);
      out.rows.push_back({e.frame, d});
    };
    if (e.dirs & kDirX) push(Jp.row(0), Jpd.row(0), kDirX);
    if (e.dirs & kDirZ) push(Jp.row(1), Jpd.row(1), kDirZ);
    if (e.dirs & kDirPitch)
      push(model.angular_jacobian(f.link), Eigen::RowVectorXd::Zero(n), kDirPitch);
  }
  out.J.resize(static_cast<Eigen::Index>(rows.size()), n);
  out.Jdot.resize(static_cast<Eigen::Index>(rows.size()), n);
  for (size_t r = 0; r < rows.size(); ++r) {
    out.J.row(static_cast<Eigen::Index>(r)) = rows[r];
    out.Jdot.row(static_cast<Eigen::Index>(r)) = drows[r];
  }
  return out;
}

inline double spd_condition(const Mat& M) {
  if (M.rows() == 0) return 1.0;
  Eigen::SelfAdjointEigenSolver<Mat> es(M, Eigen::EigenvaluesOnly);
  const double lo = es.eigenvalues().minCoeff();
  const double hi = es.eigenvalues().maxCoeff();
  if (!(lo > 0)) return std::numeric_limits<double>::infinity();
  return hi / lo;
}

/// Everything the constrained equations of motion need at one state. The
/// constraint force is affine in the input: lambda = lambda0 + lambda_u * u,
/// and so is the acceleration: qddot = f_acc + g_acc * u.
struct ConstrainedTerms {
  Mat D;
  Vec H;
  ConstraintJacobian cj;
  Vec lambda0;
  Mat lambda_u;
  Vec f_acc;
  Mat g_acc;
  double block_condition = 1.0;
};

inline ConstrainedTerms constrained_terms(const RobotModel& model, const Vec& q, const Vec& qdot,
                                          const ConstraintSet& cs) {
  ConstrainedTerms t;
  t.D = mass_matrix(model, q);
  t.H = bias_vector(model, q, qdot);
  t.cj = constraint_jacobian(model, q, qdot, cs);
  const Mat& B = model.actuation_matrix();
  Eigen::LLT<Mat> llt(t.D);
  const Vec DinvH = llt.solve(t.H);
  const Mat DinvB = llt.solve(B);
  const int nh = static_cast<int>(t.cj.J.rows());
  if (nh == 0) {
    t.lambda0 = Vec::Zero(0);
    t.lambda_u = Mat::Zero(0, model.m());
    t.f_acc = -DinvH;
    t.g_acc = DinvB;
    return t;
  }
  const Mat DinvJt = llt.solve(t.cj.J.transpose());
  const Mat S = t.cj.J * DinvJt;
  t.block_condition = spd_condition(S);
  if (!(t.block_condition <= 1e12))
    throw SingularConstraintBlock("cond(J D^-1 J^T) = " + std::to_string(t.block_condition));
  Eigen::LLT<Mat> sl(S);
  // lambda = S^-1 (J D^-1 (H - B u) - Jdot qdot)
  t.lambda0 = sl.solve(t.cj.J * DinvH - t.cj.Jdot * qdot);
  t.lambda_u = -sl.solve(t.cj.J * DinvB);
  t.f_acc = -DinvH + DinvJt * t.lambda0;
  t.g_acc = DinvB + DinvJt * t.lambda_u;
  return t;
}

inline Vec constraint_forces(const RobotModel& model, const State& x, const Vec& u,
                             const ConstraintSet& cs) {
  const auto t = constrained_terms(model, x.q, x.qdot, cs);
  return t.lambda0 + t.lambda_u * u;
}

struct ControlAffineField {
  Vec f;
  Mat g;
};

/// State-space form xdot = f(x) + g(x) u under the active constraints.
inline ControlAffineField constrained_vector_field(const RobotModel& model, const State& x,
                                                   const ConstraintSet& cs) {
  const auto t = constrained_terms(model, x.q, x.qdot, cs);
  const int n = model.n();
  ControlAffineField out;
  out.f.resize(2 * n);
  out.f << x.qdot, t.f_acc;
  out.g = Mat::Zero(2 * n, model.m());
  out.g.bottomRows(n) = t.g_acc;
  return out;
}

inline Vec constrained_acceleration(const RobotModel& model, const State& x, const Vec& u,
                                    const ConstraintSet& cs) {
  const auto t = constrained_terms(model, x.q, x.qdot, cs);
  return t.f_acc + t.g_acc * u;
}

struct ImpactResult {
  Vec qdot_plus;
  Vec impulse;
  ConstraintJacobian cj;
  std::uint32_t flags = kFlagNone;
};

/// Plastic impact: D (qdot+ - qdot-) = J^T dLambda with J qdot+ = 0. This is
/// also the D-weighted projection used for velocity drift control.
inline ImpactResult impact_map(const RobotModel& model, const Vec& q, const Vec& qdot_minus,
                               const ConstraintSet& cs_new) {
  ImpactResult r;
  const Mat D = mass_matrix(model, q);
  r.cj = constraint_jacobian(model, q, qdot_minus, cs_new);
  const int nh = static_cast<int>(r.cj.J.rows());
  if (nh == 0) {
    r.qdot_plus = qdot_minus;
    r.impulse = Vec::Zero(0);
    return r;
  }
  Eigen::LLT<Mat> llt(D);
  const Mat DinvJt = llt.solve(r.cj.J.transpose());
  const Mat S = r.cj.J * DinvJt;
  const double cond = spd_condition(S);
  if (!(cond <= 1e12)) throw SingularConstraintBlock("impact block cond = " + std::to_string(cond));
  r.impulse = -Eigen::LLT<Mat>(S).solve(r.cj.J * qdot_minus);
  r.qdot_plus = qdot_minus + DinvJt * r.impulse;
  for (size_t i = 0; i < r.cj.rows.size(); ++i)
    if (r.cj.rows[i].dir == kDirZ && r.impulse[static_cast<Eigen::Index>(i)] < -1e-9)
      r.flags |= kNegativeNormalImpulse;
  return r;
}

/// Extreme eigenvalues of D over a set of configurations.
struct MassBounds {
  double lower = std::numeric_limits<double>::infinity();
  double upper = 0.0;
};

inline MassBounds probe_mass_bounds(const RobotModel& model, const std::vector<Vec>& qs) {
  MassBounds b;
  for (const auto& q : qs) {
    Eigen::SelfAdjointEigenSolver<Mat> es(mass_matrix(model, q), Eigen::EigenvaluesOnly);
    b.lower = std::min(b.lower, es.eigenvalues().minCoeff());
    b.upper = std::max(b.upper, es.eigenvalues().maxCoeff());
  }
  return b;
}

}  // namespace isswalk
