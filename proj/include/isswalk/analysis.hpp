#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>

#include "isswalk/hybrid.hpp"

namespace isswalk {

// ---------------------------------------------------------------------------
// Return map on the section that precedes the impact edge.

/// Vertex whose guard defines the Poincare section (source of the impact edge).
inline int section_vertex(const HybridSystem& hs) {
  for (const auto& e : hs.edges)
    if (e.kind == ResetKind::kImpactRelabel) return e.source;
  throw ConfigError("hybrid system has no impact edge");
}

/// One return: reset, every domain flow in turn, back to the section guard.
inline State poincare(const HybridSystem& hs, const RobotModel& model,
                      const ControllerConfig& cfg, const DisturbanceSpec& dist,
                      const State& x_guard, const RolloutOptions& opt = {}) {
  ClosedLoop cl(hs, model, cfg, dist, opt);
  const ExecutionTrace tr = cl.execute(section_vertex(hs), x_guard, true, 1);
  if (!tr.failure.empty() || tr.steps.empty()) throw MapUndefined("return map: " + tr.failure);
  return tr.steps.back().x_guard;
}

/// Section chart: the full state minus the configuration coordinate with the
/// largest guard gradient, which is recovered from guard = 0.
struct GuardChart {
  int eliminated = -1;
  int n = 0;
  int frame = -1;

  Vec reduce(const State& x) const {
    const Vec s = x.stacked();
    Vec out(2 * n - 1);
    out << s.head(eliminated), s.tail(2 * n - eliminated - 1);
    return out;
  }

  /// Inverse of reduce; `ref` supplies the starting value of the eliminated coordinate.
  State lift(const RobotModel& model, const Vec& xi, const State& ref) const {
    Vec s(2 * n);
    s << xi.head(eliminated), ref.q[eliminated], xi.tail(2 * n - eliminated - 1);
    State x = State::from_stacked(s);
    for (int it = 0; it < 50; ++it) {
      const double g = frame_height(model, x.q, frame);
      if (std::abs(g) < 1e-14) break;
      x.q[eliminated] -= g / height_gradient(model, x.q)[eliminated];
    }
    return x;
  }

  Vec height_gradient(const RobotModel& model, const Vec& q) const {
    const ContactFrame& f = model.frames()[frame];
    Mat J = Mat::Zero(2, model.n());
    model.point_jacobian(model.kinematics(q), f.link, f.offset, J);
    return J.row(1).transpose();
  }
};

inline GuardChart make_guard_chart(const HybridSystem& hs, const RobotModel& model,
                                   const State& x_ref) {
  const Domain& d = hs.domains[section_vertex(hs)];
  if (d.guard.kind != GuardKind::kFrameHeight)
    throw ConfigError("section chart needs a height guard");
  GuardChart c;
  c.n = model.n();
  c.frame = d.guard.frame;
  c.height_gradient(model, x_ref.q).cwiseAbs().maxCoeff(&c.eliminated);
  return c;
}

struct FixedPointResult {
  State x;
  double residual = 0;  // |P(x) - x|, full state
  int iterations = 0;
  bool converged = false;
};

/// Newton on P(x) - x in the section chart, forward-difference Jacobian,
/// backtracking on the residual norm.
inline FixedPointResult find_fixed_point(const HybridSystem& hs, const RobotModel& model,
                                         const ControllerConfig& cfg, const State& x_init,
                                         double tol = 1e-8, int max_iter = 50,
                                         double fd_step = 1e-6,
                                         const RolloutOptions& opt = {}) {
  const GuardChart chart = make_guard_chart(hs, model, x_init);
  const DisturbanceSpec none;
  State ref = x_init;
  auto F = [&](const Vec& xi) {
    const State x = chart.lift(model, xi, ref);
    return Vec(chart.reduce(poincare(hs, model, cfg, none, x, opt)) - xi);
  };
  Vec xi = chart.reduce(chart.lift(model, chart.reduce(x_init), ref));
  Vec r = F(xi);
  FixedPointResult best;
  best.x = chart.lift(model, xi, ref);
  best.residual = r.norm();
  int it = 0;
  for (; it < max_iter && r.norm() > tol; ++it) {
    const int k = static_cast<int>(xi.size());
    Mat J(k, k);
    for (int j = 0; j < k; ++j) {
      Vec xp = xi;
      xp[j] += fd_step;
      J.col(j) = (F(xp) - r) / fd_step;
    }
    const Vec step = J.fullPivLu().solve(-r);
    double a = 1.0;
    bool moved = false;
    for (int ls = 0; ls < 12; ++ls, a *= 0.5) {
      try {
        const Vec trial = xi + a * step;
        const Vec rt = F(trial);
        if (rt.norm() < r.norm()) {
          xi = trial;
          r = rt;
          moved = true;
          break;
        }
      } catch (const MapUndefined&) {
      }
    }
    if (!moved) break;
    ref = chart.lift(model, xi, ref);
    best.x = ref;
    best.residual = r.norm();
  }
  best.iterations = it;
  // Report the residual in full coordinates.
  best.residual = (poincare(hs, model, cfg, none, best.x, opt).stacked() - best.x.stacked()).norm();
  best.converged = best.residual <= tol;
  if (!best.converged)
    throw NewtonDiverged("fixed point residual " + std::to_string(best.residual) + " after " +
                         std::to_string(it) + " iterations");
  return best;
}

struct LinearizedPoincare {
  Mat jacobian;  // section chart, (2n-1) x (2n-1)
  Eigen::VectorXcd eigenvalues;
  double spectral_radius = 0;
};

/// Central-difference Jacobian of the return map in the section chart.
inline LinearizedPoincare linearized_poincare(const HybridSystem& hs, const RobotModel& model,
                                              const ControllerConfig& cfg, const State& x_star,
                                              double step = 1e-6,
                                              const RolloutOptions& opt = {}) {
  const GuardChart chart = make_guard_chart(hs, model, x_star);
  const DisturbanceSpec none;
  const Vec xi0 = chart.reduce(x_star);
  const int k = static_cast<int>(xi0.size());
  LinearizedPoincare out;
  out.jacobian.resize(k, k);
  try {
    for (int j = 0; j < k; ++j) {
      Vec xp = xi0, xm = xi0;
      xp[j] += step;
      xm[j] -= step;
      const Vec fp = chart.reduce(poincare(hs, model, cfg, none, chart.lift(model, xp, x_star), opt));
      const Vec fm = chart.reduce(poincare(hs, model, cfg, none, chart.lift(model, xm, x_star), opt));
      out.jacobian.col(j) = (fp - fm) / (2 * step);
    }
  } catch (const MapUndefined& e) {
    throw JacobianIncomplete(std::string("return map probe failed: ") + e.what());
  }
  Eigen::EigenSolver<Mat> es(out.jacobian, false);
  out.eigenvalues = es.eigenvalues();
  out.spectral_radius = out.eigenvalues.cwiseAbs().maxCoeff();
  return out;
}

// ---------------------------------------------------------------------------
// Output-error Lyapunov certificate.

/// Closed-loop output-error matrix [[0, I], [-eps^2 I, -2 eps I]].
inline Mat output_error_matrix(int k2, double epsilon) {
  Mat A = Mat::Zero(2 * k2, 2 * k2);
  A.topRightCorner(k2, k2).setIdentity();
  A.bottomLeftCorner(k2, k2) = -epsilon * epsilon * Mat::Identity(k2, k2);
  A.bottomRightCorner(k2, k2) = -2 * epsilon * Mat::Identity(k2, k2);
  return A;
}

/// Solves A^T P + P A = -Q through the Kronecker form.
inline Mat lyapunov_solve(const Mat& A, const Mat& Q) {
  const int n = static_cast<int>(A.rows());
  if (A.cols() != n || Q.rows() != n || Q.cols() != n)
    throw DimensionMismatch("lyapunov_solve needs square A and Q of equal size");
  Eigen::EigenSolver<Mat> es(A, false);
  if (es.eigenvalues().real().maxCoeff() >= 0) throw NotHurwitz("A has an eigenvalue with Re >= 0");
  const Mat I = Mat::Identity(n, n);
  Mat K = Mat::Zero(n * n, n * n);
  // vec(A^T P) = (I kron A^T) vec(P), vec(P A) = (A^T kron I) vec(P)
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      K.block(i * n, j * n, n, n) += I(i, j) * A.transpose();
      K.block(i * n, j * n, n, n) += A(j, i) * I;
    }
  const Vec q = Eigen::Map<const Vec>(Q.data(), n * n);
  const Vec p = K.partialPivLu().solve(-q);
  Mat P = Eigen::Map<const Mat>(p.data(), n, n);
  return 0.5 * (P + P.transpose());
}

inline double lyapunov_residual(const Mat& A, const Mat& P, const Mat& Q) {
  return (A.transpose() * P + P * A + Q).norm();
}

struct IssLyapunovDomain {
  std::string name;
  Mat P;
  double lambda_min = 0, lambda_max = 0;
  double b2_norm = 0;      // sup |LgLf y2|, induced inf->2 over active actuators
  double ball_radius = 0;  // outside: dV/dt <= -gamma1 V must hold
  int samples = 0;
  int outside = 0;
  int violations_outside = 0;
  int violations_inside = 0;
  double max_spacing = 0;
};

struct IssLyapunovReport {
  double gamma1 = 0, gamma2 = 0;
  double d_inf = 0;
  std::vector<IssLyapunovDomain> domains;
  int violations_outside = 0;
  bool pass = false;
};

/// Replays V = eta2' P eta2 along a sampled trace, with dV/dt from the
/// recorded output accelerations.
inline IssLyapunovReport iss_lyapunov_check(const ExecutionTrace& tr, const HybridSystem& hs,
                                            const RobotModel& model, double epsilon,
                                            double gamma1, double gamma2, double tol = 1e-8) {
  IssLyapunovReport rep;
  rep.gamma1 = gamma1;
  rep.gamma2 = gamma2;
  for (const auto& s : tr.samples) rep.d_inf = std::max(rep.d_inf, inf_norm(s.d));
  for (size_t v = 0; v < hs.domains.size(); ++v) {
    const Domain& dom = hs.domains[v];
    IssLyapunovDomain r;
    r.name = dom.name;
    const int k2 = dom.spec.k2();
    const Mat A = output_error_matrix(k2, epsilon);
    const Mat Q = Mat::Identity(2 * k2, 2 * k2);
    r.P = lyapunov_solve(A, Q);
    Eigen::SelfAdjointEigenSolver<Mat> es(r.P);
    r.lambda_min = es.eigenvalues().minCoeff();
    r.lambda_max = es.eigenvalues().maxCoeff();
    Eigen::SelfAdjointEigenSolver<Mat> pre(Q - (gamma1 + gamma2) * r.P);
    if (pre.eigenvalues().minCoeff() < -1e-12)
      throw ConfigError("(gamma1 + gamma2) P is not dominated by Q in domain " + dom.name);
    const double sqrt_m = std::sqrt(static_cast<double>(dom.spec.m_active()));
    double prev_t = std::numeric_limits<double>::quiet_NaN();
    int prev_step = -1;
    for (const auto& s : tr.samples) {
      if (s.vertex != static_cast<int>(v)) continue;
      const ConstrainedTerms t = constrained_terms(model, s.q, s.qdot, dom.cs);
      const LieDerivatives L = lie_derivatives(dom.spec, State{s.q, s.qdot}, t, {}, false);
      const Mat& B2 = L.LgLf_y2;  // already restricted to the active inputs
      r.b2_norm = std::max(r.b2_norm, B2.operatorNorm() * sqrt_m);
      if (s.step == prev_step) r.max_spacing = std::max(r.max_spacing, s.t - prev_t);
      prev_step = s.step;
      prev_t = s.t;
    }
    if (r.max_spacing > 1e-3 + 1e-12)
      throw InsufficientSampling("sample spacing " + std::to_string(r.max_spacing) + " s in " +
                                 dom.name);
    r.ball_radius = 2 * r.lambda_max / (gamma2 * r.lambda_min) * r.b2_norm * rep.d_inf;
    for (const auto& s : tr.samples) {
      if (s.vertex != static_cast<int>(v)) continue;
      Vec eta(2 * k2), etadot(2 * k2);
      eta << s.y2, s.y2dot;
      etadot << s.y2dot, s.y2ddot;
      const double V = eta.dot(r.P * eta);
      const double Vdot = 2 * eta.dot(r.P * etadot);
      const bool bad = Vdot > -gamma1 * V + tol * std::max(1.0, V);
      ++r.samples;
      if (eta.norm() > r.ball_radius) {
        ++r.outside;
        if (bad) ++r.violations_outside;
      } else if (bad) {
        ++r.violations_inside;
      }
    }
    rep.violations_outside += r.violations_outside;
    rep.domains.push_back(r);
  }
  rep.pass = rep.violations_outside == 0;
  return rep;
}

// ---------------------------------------------------------------------------
// Empirical e-ISS of the orbit.

struct IssOptions {
  std::vector<double> magnitudes = {0.0, 0.005, 0.01, 0.02, 0.05};
  int n_steps = 20;
  int n_seeds = 20;
  double hold = 0.05;
  double impact_ratio = 0.0;  // impact perturbation bound per unit torque bound
  double perturbation = 1e-3;
  int n_perturbations = 8;
  int decay_steps = 10;
  int fit_from = 2;
  double tail_fraction = 0.4;
  int bootstrap = 2000;
  std::uint64_t seed = 1;
};

struct GainSample {
  double magnitude = 0;
  std::uint64_t seed = 0;
  double d_max = 0;
  double ultimate = 0;
  int steps = 0;
  bool failed = false;
  std::string failure;
  std::vector<double> errors;  // |P^i(x0) - x*|, i = 0..steps
};

struct GainRow {
  double magnitude = 0;
  double mean = 0, ci_lo = 0, ci_hi = 0;
  double iota = 0;  // max ultimate bound over seeds
  double d_max = 0;
  int failures = 0;
};

struct IssReport {
  double spectral_radius = std::numeric_limits<double>::quiet_NaN();
  double N_p = 0, xi_p = 0, r2 = 0;
  std::vector<std::vector<double>> decay;  // zero-disturbance errors per perturbation
  std::vector<GainSample> samples;
  std::vector<GainRow> rows;
  double delta_fail = std::numeric_limits<double>::infinity();
  bool monotone = false;
  bool floor_ok = false;
  bool definition_ok = false;
  bool pass = false;
};

struct DecayFit {
  double slope = 0, r2 = 0;
  std::vector<double> intercepts;
};

/// Common slope with one intercept per series; R^2 is computed on the
/// per-series demeaned data.
inline DecayFit fit_common_slope(const std::vector<std::vector<double>>& logs, int from, int to) {
  double sxy = 0, sxx = 0;
  std::vector<double> mx, my;
  for (const auto& l : logs) {
    double ax = 0, ay = 0;
    int c = 0;
    for (int i = from; i <= to; ++i, ++c) {
      ax += i;
      ay += l[i];
    }
    mx.push_back(ax / c);
    my.push_back(ay / c);
  }
  for (size_t s = 0; s < logs.size(); ++s)
    for (int i = from; i <= to; ++i) {
      sxy += (i - mx[s]) * (logs[s][i] - my[s]);
      sxx += (i - mx[s]) * (i - mx[s]);
    }
  DecayFit f;
  f.slope = sxy / sxx;
  double ss_res = 0, ss_tot = 0;
  for (size_t s = 0; s < logs.size(); ++s) {
    f.intercepts.push_back(my[s] - f.slope * mx[s]);
    for (int i = from; i <= to; ++i) {
      const double pred = f.intercepts.back() + f.slope * i;
      ss_res += (logs[s][i] - pred) * (logs[s][i] - pred);
      ss_tot += (logs[s][i] - my[s]) * (logs[s][i] - my[s]);
    }
  }
  f.r2 = ss_tot > 0 ? 1 - ss_res / ss_tot : 0;
  return f;
}

/// Random section point at distance ~r from x* (chart coordinates).
inline State radial_perturbation(const GuardChart& chart, const RobotModel& model,
                                 const State& x_star, double r, std::mt19937_64& rng) {
  std::normal_distribution<double> n01(0, 1);
  Vec xi = chart.reduce(x_star);
  Vec dir(xi.size());
  for (auto& c : dir) c = n01(rng);
  return chart.lift(model, xi + r * dir / dir.norm(), x_star);
}

inline std::vector<double> section_errors(const ExecutionTrace& tr, int vertex, const State& x0,
                                          const State& x_star) {
  std::vector<double> e = {(x0.stacked() - x_star.stacked()).norm()};
  for (const auto& s : tr.section_states(vertex))
    e.push_back((s.stacked() - x_star.stacked()).norm());
  return e;
}

inline IssReport estimate_iss_gain(const HybridSystem& hs, const RobotModel& model,
                                   const ControllerConfig& cfg, const State& x_star,
                                   const IssOptions& o, const RolloutOptions& ropt = {}) {
  IssReport rep;
  const int sec = section_vertex(hs);
  const GuardChart chart = make_guard_chart(hs, model, x_star);
  std::mt19937_64 rng(o.seed);

  // (a) zero-disturbance geometric decay
  std::vector<std::vector<double>> logs;
  for (int p = 0; p < o.n_perturbations; ++p) {
    const State x0 = radial_perturbation(chart, model, x_star, o.perturbation, rng);
    ClosedLoop cl(hs, model, cfg, {}, ropt);
    const ExecutionTrace tr = cl.execute(sec, x0, true, o.decay_steps);
    if (!tr.failure.empty()) throw GaitUnstable("unperturbed decay run failed: " + tr.failure);
    const std::vector<double> e = section_errors(tr, sec, x0, x_star);
    rep.decay.push_back(e);
    std::vector<double> l;
    for (double v : e) l.push_back(std::log(std::max(v, 1e-300)));
    logs.push_back(l);
  }
  const DecayFit fit = fit_common_slope(logs, o.fit_from, o.decay_steps);
  rep.xi_p = std::exp(fit.slope);
  rep.r2 = fit.r2;
  if (!(rep.xi_p < 1)) throw GaitUnstable("fitted decay ratio " + std::to_string(rep.xi_p));

  // (b) gain curve
  std::vector<double> mags = o.magnitudes;
  std::sort(mags.begin(), mags.end());
  for (double mag : mags) {
    GainRow row;
    row.magnitude = mag;
    std::vector<double> ult;
    for (int k = 0; k < o.n_seeds; ++k) {
      GainSample g;
      g.magnitude = mag;
      g.seed = o.seed * 1000003ull + static_cast<std::uint64_t>(k);
      std::mt19937_64 prng(g.seed);
      const State x0 = radial_perturbation(chart, model, x_star, o.perturbation, prng);
      DisturbanceSpec ds;
      ds.seed = g.seed;
      if (mag > 0) {
        ds.continuous = ContinuousKind::kUniformRandom;
        ds.bound = mag;
        ds.hold = o.hold;
        ds.impact_bound = o.impact_ratio * mag;
      }
      ClosedLoop cl(hs, model, cfg, ds, ropt);
      const ExecutionTrace tr = cl.execute(sec, x0, true, o.n_steps);
      g.failed = !tr.failure.empty();
      g.failure = tr.failure;
      g.errors = section_errors(tr, sec, x0, x_star);
      g.steps = static_cast<int>(g.errors.size()) - 1;
      g.d_max = ds.continuous_bound();
      for (const auto& st : tr.steps) g.d_max = std::max(g.d_max, st.d_e);
      if (ds.continuous == ContinuousKind::kNone) g.d_max = 0;
      const int tail0 = static_cast<int>(std::floor((1 - o.tail_fraction) * g.steps)) + 1;
      for (int i = std::max(tail0, 1); i <= g.steps; ++i) g.ultimate = std::max(g.ultimate, g.errors[i]);
      if (g.failed) {
        ++row.failures;
        rep.delta_fail = std::min(rep.delta_fail, mag);
      } else {
        ult.push_back(g.ultimate);
        row.iota = std::max(row.iota, g.ultimate);
      }
      row.d_max = std::max(row.d_max, g.d_max);
      rep.samples.push_back(std::move(g));
    }
    if (!ult.empty()) {
      row.mean = std::accumulate(ult.begin(), ult.end(), 0.0) / ult.size();
      std::mt19937_64 brng(o.seed + 7);
      std::uniform_int_distribution<size_t> pick(0, ult.size() - 1);
      std::vector<double> means(o.bootstrap);
      for (int b = 0; b < o.bootstrap; ++b) {
        double s = 0;
        for (size_t j = 0; j < ult.size(); ++j) s += ult[pick(brng)];
        means[b] = s / ult.size();
      }
      std::sort(means.begin(), means.end());
      row.ci_lo = means[static_cast<size_t>(0.025 * (o.bootstrap - 1))];
      row.ci_hi = means[static_cast<size_t>(0.975 * (o.bootstrap - 1))];
    }
    rep.rows.push_back(row);
  }

  // Overshoot constant over every undisturbed run, decay set and zero row alike.
  auto overshoot = [&](const std::vector<double>& e) {
    for (size_t i = 0; i < e.size(); ++i)
      rep.N_p = std::max(rep.N_p, e[i] / (std::pow(rep.xi_p, static_cast<double>(i)) * e[0]));
  };
  for (const auto& e : rep.decay) overshoot(e);
  for (const auto& g : rep.samples)
    if (g.magnitude == 0.0 && !g.failed) overshoot(g.errors);

  // Monotone within the bootstrap intervals: no row is confidently below its predecessor.
  rep.monotone = true;
  for (size_t i = 1; i < rep.rows.size(); ++i)
    if (rep.rows[i].magnitude < rep.delta_fail && rep.rows[i].ci_hi < rep.rows[i - 1].ci_lo)
      rep.monotone = false;
  rep.floor_ok = !rep.rows.empty() && rep.rows.front().magnitude == 0.0 &&
                 rep.rows.front().iota <= 1e-4;

  // Replay the ISS inequality on the two smallest magnitudes.
  rep.definition_ok = true;
  for (size_t r = 0; r < std::min<size_t>(2, rep.rows.size()); ++r) {
    for (const auto& g : rep.samples) {
      if (g.magnitude != rep.rows[r].magnitude) continue;
      if (g.failed) {
        rep.definition_ok = false;
        continue;
      }
      for (size_t i = 0; i < g.errors.size(); ++i) {
        const double bound = rep.N_p * std::pow(rep.xi_p, static_cast<double>(i)) * g.errors[0] +
                             rep.rows[r].iota;
        if (g.errors[i] > bound * (1 + 1e-9)) rep.definition_ok = false;
      }
    }
  }
  rep.pass = rep.xi_p > 0 && rep.xi_p < 1 && rep.r2 >= 0.99 && rep.monotone && rep.floor_ok &&
             rep.definition_ok;
  return rep;
}

}  // namespace isswalk
