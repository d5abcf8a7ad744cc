#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "isswalk/dynamics.hpp"

namespace isswalk {

// ---------------------------------------------------------------------------
// Bezier polynomials in the Bernstein basis.

struct BezierValue {
  double value = 0;
  double d1 = 0;
  double d2 = 0;
  bool clamped = false;
};

inline double binomial(int n, int k) {
  double r = 1;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

inline double bernstein(int n, int k, double s) {
  return binomial(n, k) * std::pow(s, k) * std::pow(1.0 - s, n - k);
}

/// Derivatives are with respect to s. Outside [0, 1] the polynomial is
/// continued linearly from the nearest endpoint with its slope frozen.
inline BezierValue bezier_eval(const Eigen::Ref<const Eigen::RowVectorXd>& alpha, double s) {
  const int n = static_cast<int>(alpha.size()) - 1;
  BezierValue out;
  if (s < 0.0 || s > 1.0) {
    const double e = s < 0.0 ? 0.0 : 1.0;
    BezierValue end = bezier_eval(alpha, e);
    out.value = end.value + end.d1 * (s - e);
    out.d1 = end.d1;
    out.d2 = 0.0;
    out.clamped = true;
    return out;
  }
  // de Casteljau-free direct sums; degree is small.
  for (int k = 0; k <= n; ++k) out.value += alpha[k] * bernstein(n, k, s);
  for (int k = 0; k < n; ++k) out.d1 += n * (alpha[k + 1] - alpha[k]) * bernstein(n - 1, k, s);
  for (int k = 0; k + 1 < n; ++k)
    out.d2 += n * (n - 1) * (alpha[k + 2] - 2 * alpha[k + 1] + alpha[k]) * bernstein(n - 2, k, s);
  return out;
}

// ---------------------------------------------------------------------------
// Output specification for one domain.

/// Phase progress. tau is measured in seconds: for the state-based phase
/// tau = (c_p^T q - p_plus) / v_d, for the time-based phase
/// tau = time_origin + t since domain entry. The Bezier argument is
/// s = tau / duration.
struct PhaseSpec {
  Vec coeffs;
  double v_d = 1.0;
  double p_plus = 0.0;
  double duration = 1.0;
  double time_origin = 0.0;
};

struct OutputSpec {
  std::string domain;
  Mat c1;         // k1 x n, velocity outputs act on qdot
  Vec c1_offset;  // k1, subtracted (desired velocity)
  Mat c2;         // k2 x n, pose outputs act on q
  Mat alpha;      // k2 x (degree + 1)
  PhaseSpec phase;
  std::vector<int> active_actuators;  // columns of the model actuation matrix
  Vec chart_state;                    // 2n, reference point for the zero-coordinate chart

  int k1() const { return static_cast<int>(c1.rows()); }
  int k2() const { return static_cast<int>(c2.rows()); }
  int m_active() const { return static_cast<int>(active_actuators.size()); }

  void validate(const RobotModel& model) const {
    const int n = model.n();
    if (c1.cols() != n || c2.cols() != n || phase.coeffs.size() != n)
      throw DimensionMismatch("output forms must have " + std::to_string(n) + " columns");
    if (c1_offset.size() != k1()) throw DimensionMismatch("c1_offset size");
    if (alpha.rows() != k2()) throw DimensionMismatch("alpha needs one row per pose output");
    if (alpha.cols() < 4) throw InvalidModel("Bezier degree must be >= 3");
    if (k1() + k2() != m_active())
      throw InvalidModel("k1 + k2 must equal the number of active actuators in domain " + domain);
    for (int a : active_actuators)
      if (a < 0 || a >= model.m()) throw InvalidModel("active actuator index out of range");
    if (!(phase.v_d > 0) || !(phase.duration > 0)) throw InvalidModel("phase v_d and duration must be > 0");
  }

  /// Active columns of a matrix with one column per model actuator.
  Mat select_inputs(const Mat& full) const {
    Mat out(full.rows(), m_active());
    for (int j = 0; j < m_active(); ++j) out.col(j) = full.col(active_actuators[j]);
    return out;
  }
  /// Scatter an active-input vector into the full actuator vector.
  Vec expand_inputs(const Vec& u_active, int m_full) const {
    Vec u = Vec::Zero(m_full);
    for (int j = 0; j < m_active(); ++j) u[active_actuators[j]] = u_active[j];
    return u;
  }
};

/// Controller-side phase input. `time` is absent for state-based evaluation.
struct PhaseInput {
  std::optional<double> time;
  double rate = 1.0;  // dtau/dt the controller assumes for the time-based phase
};

inline double phase_state(const OutputSpec& spec, const Vec& q) {
  return (spec.phase.coeffs.dot(q) - spec.phase.p_plus) / spec.phase.v_d;
}

inline double phase_rate(const OutputSpec& spec, const Vec& qdot) {
  return spec.phase.coeffs.dot(qdot) / spec.phase.v_d;
}

/// Desired pose outputs and their tau derivatives.
struct Desired {
  Vec yd, dyd, ddyd;  // d/dtau, d^2/dtau^2
  bool clamped = false;
};

inline Desired desired_outputs(const OutputSpec& spec, double tau) {
  const int k2 = spec.k2();
  Desired d{Vec(k2), Vec(k2), Vec(k2), false};
  const double T = spec.phase.duration;
  const double s = tau / T;
  for (int i = 0; i < k2; ++i) {
    const BezierValue b = bezier_eval(spec.alpha.row(i), s);
    d.yd[i] = b.value;
    d.dyd[i] = b.d1 / T;
    d.ddyd[i] = b.d2 / (T * T);
    d.clamped = d.clamped || b.clamped;
  }
  return d;
}

struct TransverseState {
  Vec y1, y2, y2dot;
  double tau = 0;
  std::uint32_t flags = kFlagNone;

  Vec eta2() const {
    Vec e(y2.size() + y2dot.size());
    e << y2, y2dot;
    return e;
  }
  Vec eta() const {
    Vec e(y1.size() + y2.size() + y2dot.size());
    e << y1, y2, y2dot;
    return e;
  }
};

inline std::uint32_t phase_flags(const OutputSpec& spec, double tau) {
  const double s = tau / spec.phase.duration;
  std::uint32_t f = kFlagNone;
  if (s < 0.0 || s > 1.0) f |= kPhaseClamped;
  if (s < -0.1 || s > 1.1) f |= kPhaseOutOfRange;
  return f;
}

/// eta = (y1, y2, y2dot). State-based when `phase.time` is empty.
inline TransverseState output_errors(const OutputSpec& spec, const State& x,
                                     const PhaseInput& phase = {}) {
  TransverseState e;
  e.y1 = spec.c1 * x.qdot - spec.c1_offset;
  if (phase.time) {
    e.tau = *phase.time;
    const Desired d = desired_outputs(spec, e.tau);
    e.y2 = spec.c2 * x.q - d.yd;
    e.y2dot = spec.c2 * x.qdot - d.dyd * phase.rate;
  } else {
    e.tau = phase_state(spec, x.q);
    const Desired d = desired_outputs(spec, e.tau);
    e.y2 = spec.c2 * x.q - d.yd;
    e.y2dot = spec.c2 * x.qdot - d.dyd * phase_rate(spec, x.qdot);
  }
  e.flags = phase_flags(spec, e.tau);
  return e;
}

/// Lie derivatives of the outputs along the constrained field.
struct LieDerivatives {
  Vec Lf_y1;
  Mat Lg_y1;
  Vec Lf_y2;
  Vec Lf2_y2;
  Mat LgLf_y2;
  Mat A_dec;
  double condition = 1.0;
  TransverseState eta;
};

inline double matrix_condition(const Mat& A) {
  if (A.size() == 0) return 1.0;
  Eigen::JacobiSVD<Mat> svd(A);
  const auto& s = svd.singularValues();
  const double lo = s[s.size() - 1];
  return lo > 0 ? s[0] / lo : std::numeric_limits<double>::infinity();
}

/// Uses precomputed constrained terms so callers that also need the
/// constraint forces evaluate the dynamics once.
inline LieDerivatives lie_derivatives(const OutputSpec& spec, const State& x,
                                      const ConstrainedTerms& t, const PhaseInput& phase = {},
                                      bool check_condition = true) {
  LieDerivatives L;
  L.eta = output_errors(spec, x, phase);
  const Mat g = spec.select_inputs(t.g_acc);
  L.Lf_y1 = spec.c1 * t.f_acc;
  L.Lg_y1 = spec.c1 * g;
  L.Lf_y2 = L.eta.y2dot;
  if (phase.time) {
    const Desired d = desired_outputs(spec, *phase.time);
    L.Lf2_y2 = spec.c2 * t.f_acc - d.ddyd * phase.rate * phase.rate;
    L.LgLf_y2 = spec.c2 * g;
  } else {
    const double tau = phase_state(spec, x.q);
    const double taudot = phase_rate(spec, x.qdot);
    const Desired d = desired_outputs(spec, tau);
    const Mat Cy = spec.c2 - d.dyd * spec.phase.coeffs.transpose() / spec.phase.v_d;
    L.Lf2_y2 = Cy * t.f_acc - d.ddyd * taudot * taudot;
    L.LgLf_y2 = Cy * g;
  }
  L.A_dec.resize(spec.k1() + spec.k2(), spec.m_active());
  L.A_dec << L.Lg_y1, L.LgLf_y2;
  if (check_condition) {
    L.condition = matrix_condition(L.A_dec);
    if (!(L.condition <= 1e10))
      throw DecouplingSingular("cond(A_dec) = " + std::to_string(L.condition) + " in domain " +
                               spec.domain);
  }
  return L;
}

inline LieDerivatives lie_derivatives(const RobotModel& model, const OutputSpec& spec,
                                      const State& x, const ConstraintSet& cs,
                                      const PhaseInput& phase = {}) {
  return lie_derivatives(spec, x, constrained_terms(model, x.q, x.qdot, cs), phase);
}

// ---------------------------------------------------------------------------
// Zero coordinates and reconstruction.

/// Jacobian of the state-based eta with respect to x = (q, qdot).
inline Mat eta_jacobian(const OutputSpec& spec, const State& x) {
  const int n = static_cast<int>(x.q.size());
  const int k1 = spec.k1(), k2 = spec.k2();
  const double tau = phase_state(spec, x.q);
  const double taudot = phase_rate(spec, x.qdot);
  const Desired d = desired_outputs(spec, tau);
  const Eigen::RowVectorXd cp = spec.phase.coeffs.transpose() / spec.phase.v_d;
  const Mat Cy = spec.c2 - d.dyd * cp;
  Mat J = Mat::Zero(k1 + 2 * k2, 2 * n);
  J.block(0, n, k1, n) = spec.c1;
  J.block(k1, 0, k2, n) = Cy;
  J.block(k1 + k2, 0, k2, n) = -d.ddyd * taudot * cp;
  J.block(k1 + k2, n, k2, n) = Cy;
  return J;
}

/// Orthonormal complement of the output Jacobian rows at the chart point.
inline Mat zero_chart_basis(const OutputSpec& spec, int n) {
  if (spec.chart_state.size() != 2 * n)
    throw ChartSingular("output spec for domain " + spec.domain + " has no chart state");
  const State xc = State::from_stacked(spec.chart_state);
  const Mat Je = eta_jacobian(spec, xc);
  Eigen::HouseholderQR<Mat> qr(Je.transpose());
  const Mat Q = qr.householderQ() * Mat::Identity(2 * n, 2 * n);
  return Q.rightCols(2 * n - Je.rows());
}

struct ZeroChart {
  Mat Z;   // 2n x dim(z)
  Vec x0;  // chart origin
};

inline ZeroChart make_zero_chart(const OutputSpec& spec, int n) {
  return ZeroChart{zero_chart_basis(spec, n), spec.chart_state};
}

inline Vec zero_coords(const ZeroChart& chart, const OutputSpec& spec, const State& x) {
  const Vec xs = x.stacked();
  const Mat Jphi = [&] {
    Mat J(chart.Z.rows(), chart.Z.rows());
    J << eta_jacobian(spec, x), chart.Z.transpose();
    return J;
  }();
  Eigen::JacobiSVD<Mat> svd(Jphi);
  const auto& s = svd.singularValues();
  if (!(s[s.size() - 1] > 1e-9 * s[0]))
    throw ChartSingular("Jacobian of (eta, z) is rank deficient in domain " + spec.domain);
  return chart.Z.transpose() * (xs - chart.x0);
}

struct IkResult {
  Vec q;
  Vec qdot;
  double residual = 0;
  int iterations = 0;
  std::uint32_t flags = kFlagNone;
};

/// Damped Gauss-Newton on r(v) = 0. Iterates past the acceptance tolerance
/// until the residual stops shrinking so the answer is smooth in its inputs.
template <typename Residual, typename Jacobian>
inline IkResult damped_newton(Vec v, Residual&& r, Jacobian&& jac, double lambda = 1e-6,
                              double tol = 1e-10, int max_iter = 100) {
  IkResult out;
  Vec res = r(v);
  double norm = res.norm();
  Vec best = v;
  double best_norm = norm;
  int it = 0;
  for (; it < max_iter && norm > 1e-14; ++it) {
    const Mat J = jac(v);
    const Mat JJt = J * J.transpose() + lambda * lambda * Mat::Identity(J.rows(), J.rows());
    const Vec step = J.transpose() * JJt.ldlt().solve(res);
    Vec cand = v - step;
    Vec cres = r(cand);
    double cnorm = cres.norm();
    double a = 1.0;
    while (!(cnorm < norm) && a > 1e-4) {
      a *= 0.5;
      cand = v - a * step;
      cres = r(cand);
      cnorm = cres.norm();
    }
    if (!(cnorm < norm)) break;
    const bool stalled = norm <= tol && cnorm > 0.25 * norm;
    v = cand;
    res = cres;
    norm = cnorm;
    if (norm < best_norm) {
      best_norm = norm;
      best = v;
    }
    if (stalled) {
      ++it;
      break;
    }
  }
  out.q = best;
  out.residual = best_norm;
  out.iterations = it;
  if (!(best_norm <= tol)) out.flags |= kIkDiverged;
  return out;
}

/// Inverse of (eta, z) = Phi(x) in the frozen chart.
inline IkResult phzd_reconstruct_full(const OutputSpec& spec, const ZeroChart& chart,
                                      const Vec& eta_target, const Vec& z_target,
                                      const Vec& x_warm) {
  const int n2 = static_cast<int>(chart.Z.rows());
  const int n = n2 / 2;
  auto r = [&](const Vec& xs) {
    const State x = State::from_stacked(xs);
    Vec out(n2);
    out << output_errors(spec, x).eta() - eta_target, chart.Z.transpose() * (xs - chart.x0) - z_target;
    return out;
  };
  auto jac = [&](const Vec& xs) {
    Mat J(n2, n2);
    J << eta_jacobian(spec, State::from_stacked(xs)), chart.Z.transpose();
    return J;
  };
  IkResult res = damped_newton(x_warm, r, jac);
  const Vec xs = res.q;
  res.q = xs.head(n);
  res.qdot = xs.tail(n);
  return res;
}

/// Configuration and velocity on the zero-output surface at a given phase.
/// The contact frames are held at `contact_target` (positions in the layout of
/// `constraint_positions`). For a state-based phase the velocity satisfies
/// ydot2 = 0 with the phase rate implied by y1_target; for a time-based phase
/// the desired outputs advance at `phase.rate`.
inline IkResult phzd_reconstruct(const RobotModel& model, const OutputSpec& spec,
                                 const ConstraintSet& cs, const Vec& contact_target,
                                 const Vec& y1_target, double tau, const PhaseInput& phase,
                                 const Vec& q_warm) {
  const Desired d = desired_outputs(spec, tau);
  const double p_target = spec.phase.p_plus + spec.phase.v_d * tau;
  auto r = [&](const Vec& q) {
    const Vec h = constraint_positions(model, q, cs);
    Vec out(h.size() + spec.k2() + 1);
    out << h - contact_target, spec.c2 * q - d.yd, spec.phase.coeffs.dot(q) - p_target;
    return out;
  };
  auto jac = [&](const Vec& q) {
    const auto cj = constraint_jacobian(model, q, Vec::Zero(q.size()), cs);
    Mat J(cj.J.rows() + spec.k2() + 1, q.size());
    J << cj.J, spec.c2, spec.phase.coeffs.transpose();
    return J;
  };
  IkResult res = damped_newton(q_warm, r, jac);
  const Vec& q = res.q;
  const auto cj = constraint_jacobian(model, q, Vec::Zero(q.size()), cs);
  const int nh = static_cast<int>(cj.J.rows());
  const int k1 = spec.k1(), k2 = spec.k2();
  Mat A(nh + k2 + k1, q.size());
  Vec b(nh + k2 + k1);
  if (phase.time) {
    A << cj.J, spec.c2, spec.c1;
    b << Vec::Zero(nh), d.dyd * phase.rate, spec.c1_offset + y1_target;
  } else {
    A << cj.J, spec.c2 - d.dyd * spec.phase.coeffs.transpose() / spec.phase.v_d, spec.c1;
    b << Vec::Zero(nh), Vec::Zero(k2), spec.c1_offset + y1_target;
  }
  res.qdot = A.completeOrthogonalDecomposition().solve(b);
  res.flags |= d.clamped ? kPhaseClamped : 0u;
  return res;
}

}  // namespace isswalk
