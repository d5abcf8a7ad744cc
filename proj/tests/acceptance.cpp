// Acceptance suite: one PASS/FAIL line per criterion, each timed against its
// budget. Exit status is nonzero when any criterion fails.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <iostream>
#include <sstream>

#include <unsupported/Eigen/MatrixFunctions>

#include "isswalk/bench.hpp"
#include "isswalk/chain.hpp"
#include "isswalk/config.hpp"
#include "isswalk/fit.hpp"

using namespace isswalk;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

/// Shared biped fixture: the gait is fitted once and reused.
struct Walker {
  RobotModel model = make_biped_model();
  GaitSeed seed;
  double epsilon = 7.0;
  GaitFitResult fit;
  HybridSystem hs;

  Walker() {
    fit = gait_fit(model, seed, epsilon);
    hs = make_biped_system(model, seed.v_d);
    apply_gait(hs, fit.gait);
  }
  ControllerConfig fblin_cfg(ControllerKind k = ControllerKind::kFblinState) const {
    ControllerConfig c;
    c.kind = k;
    c.epsilon = epsilon;
    return c;
  }
};

Walker& walker() {
  static Walker w;
  return w;
}

std::mt19937_64& rng() {
  static std::mt19937_64 r(20261017);
  return r;
}

Vec uniform_vec(int n, double a) {
  std::uniform_real_distribution<double> u(-a, a);
  Vec v(n);
  for (auto& c : v) c = u(rng());
  return v;
}

/// Adaptive Dormand-Prince to a fixed end time.
Vec integrate(const DormandPrince::Rhs& f, Vec y, double t_end, double rtol) {
  OdeOptions o;
  o.rtol = rtol;
  o.atol = rtol * 1e-2;
  double t = 0, h = 1e-3;
  Vec k1 = f(t, y);
  while (t < t_end - 1e-15) {
    h = std::min(h, t_end - t);
    const auto a = DormandPrince::attempt(f, t, y, k1, h, o);
    if (a.error <= 1.0) {
      t += h;
      y = a.y1;
      k1 = a.k7;
    }
    h = DormandPrince::next_step(h, a.error);
  }
  return y;
}

// ---------------------------------------------------------------------------

Outcome check_dynamics_correctness() {
  const RobotModel model = make_biped_model();
  const int n = model.n();
  const ConstraintSet& ds_cs = walker().hs.domains[walker().hs.index("ds")].cs;
  const State& xs = walker().fit.gait.x_star;
  double sym = 0, min_eig = INFINITY, oracle = 0, skew = 0, energy = 0, kkt = 0, jdot = 0;
  double impact_gain = -INFINITY, impact_vel = 0;
  for (int s = 0; s < 100; ++s) {
    const Vec q = uniform_vec(n, 0.8), qd = uniform_vec(n, 1.5);
    const Mat D = mass_matrix(model, q);
    sym = std::max(sym, (D - D.transpose()).norm() / D.norm());
    Eigen::SelfAdjointEigenSolver<Mat> es(D);
    min_eig = std::min(min_eig, es.eigenvalues().minCoeff());

    // Oracle: D = sum m J_c' J_c + I J_w' J_w from finite-differenced COM and link angles.
    Mat Do = Mat::Zero(n, n);
    const double h = 1e-6;
    for (size_t i = 0; i < model.links().size(); ++i) {
      const Link& l = model.links()[i];
      Mat Jc(2, n);
      Eigen::RowVectorXd Jw(n);
      for (int j = 0; j < n; ++j) {
        Vec qp = q, qm = q;
        qp[j] += h;
        qm[j] -= h;
        const auto kp = model.kinematics(qp), km = model.kinematics(qm);
        Jc.col(j) = (model.point_position(qp, kp, static_cast<int>(i), l.com_offset) -
                     model.point_position(qm, km, static_cast<int>(i), l.com_offset)) /
                    (2 * h);
        Jw[j] = (kp.phi[i] - km.phi[i]) / (2 * h);
      }
      Do += l.mass * Jc.transpose() * Jc + l.inertia * Jw.transpose() * Jw;
    }
    oracle = std::max(oracle, (Do - D).norm() / D.norm());

    const Mat N = mass_matrix_dot(model, q, qd) - 2 * coriolis_matrix(model, q, qd);
    skew = std::max(skew, (N + N.transpose()).norm());

    // Energy balance under a constant random torque, work integrated alongside.
    const Vec u = uniform_vec(model.m(), 2.0);
    const Mat& B = model.actuation_matrix();
    auto f = [&](double, const Vec& y) {
      const Vec qq = y.head(n), vv = y.segment(n, n);
      Vec out(2 * n + 1);
      out << vv, mass_matrix(model, qq).llt().solve(B * u - bias_vector(model, qq, vv)),
          vv.dot(B * u);
      return out;
    };
    Vec y0(2 * n + 1);
    y0 << q, qd, 0.0;
    const Vec y1 = integrate(f, y0, 0.2, 1e-11);
    const double E0 = kinetic_energy(model, q, qd) + potential_energy(model, q);
    const double E1 = kinetic_energy(model, y1.head(n), y1.segment(n, n)) +
                      potential_energy(model, y1.head(n));
    energy = std::max(energy, std::abs(E1 - E0 - y1[2 * n]) /
                                  std::max(1.0, std::abs(E0) + kinetic_energy(model, q, qd)));

    // Constraint force against a direct KKT solve, near the double-support posture.
    const Vec qc = xs.q + uniform_vec(n, 0.05), qdc = uniform_vec(n, 1.0);
    const ConstrainedTerms t = constrained_terms(model, qc, qdc, ds_cs);
    const int nh = static_cast<int>(t.cj.J.rows());
    Mat K = Mat::Zero(n + nh, n + nh);
    K.topLeftCorner(n, n) = t.D;
    K.topRightCorner(n, nh) = -t.cj.J.transpose();
    K.bottomLeftCorner(nh, n) = t.cj.J;
    Vec rhs(n + nh);
    rhs << B * u - t.H, -t.cj.Jdot * qdc;
    const Vec sol = K.fullPivLu().solve(rhs);
    const Vec lam = t.lambda0 + t.lambda_u * u;
    kkt = std::max(kkt, (sol.tail(nh) - lam).norm() / std::max(1.0, lam.norm()));
    const Mat Jp = constraint_jacobian(model, qc + h * qdc, qdc, ds_cs).J;
    const Mat Jm = constraint_jacobian(model, qc - h * qdc, qdc, ds_cs).J;
    jdot = std::max(jdot, ((Jp - Jm) / (2 * h) - t.cj.Jdot).norm());

    // Plastic impact into double support.
    const ImpactResult im = impact_map(model, qc, qdc, ds_cs);
    impact_gain = std::max(impact_gain, kinetic_energy(model, qc, im.qdot_plus) -
                                            kinetic_energy(model, qc, qdc));
    impact_vel = std::max(impact_vel, (im.cj.J * im.qdot_plus).norm());
  }
  const bool pass = sym <= 1e-14 && min_eig > 0 && oracle <= 1e-6 && skew <= 1e-10 &&
                    energy <= 1e-6 && kkt <= 1e-9 && jdot <= 1e-5 && impact_gain <= 1e-12 &&
                    impact_vel <= 1e-10;
  return {pass, "sym " + num(sym) + ", min eig(D) " + num(min_eig) + ", D vs oracle " + num(oracle) +
                    ", skew " + num(skew) + ", energy " + num(energy) + ", KKT " + num(kkt) +
                    ", Jdot " + num(jdot) + ", impact dKE " + num(impact_gain) + ", |J q+| " +
                    num(impact_vel)};
}

/// Closed form of A'P + PA = -I for one [[0, 1], [-e^2, -2e]] block.
Mat lyapunov_oracle(int k2, double e) {
  const double b = 1 / (2 * e * e), c = (1 + 2 * b) / (4 * e), a = 2 * e * b + e * e * c;
  Mat P(2 * k2, 2 * k2);
  const Mat I = Mat::Identity(k2, k2);
  P << a * I, b * I, b * I, c * I;
  return P;
}

Outcome check_output_lyapunov() {
  double res = 0, oracle = 0;
  for (double e : {1.0, 2.0, 5.0})
    for (int k2 : {2, 5}) {
      const Mat A = output_error_matrix(k2, e), Q = Mat::Identity(2 * k2, 2 * k2);
      const Mat P = lyapunov_solve(A, Q);
      res = std::max(res, lyapunov_residual(A, P, Q));
      oracle = std::max(oracle, (P - lyapunov_oracle(k2, e)).norm());
    }
  Walker& w = walker();
  DisturbanceSpec ds;
  ds.continuous = ContinuousKind::kUniformRandom;
  ds.bound = 1e-6;
  ds.seed = 3;
  RolloutOptions ro;
  ro.sample_dt = 1e-3;
  std::mt19937_64 prng(1);
  const GuardChart chart = make_guard_chart(w.hs, w.model, w.fit.gait.x_star);
  const State x0 = radial_perturbation(chart, w.model, w.fit.gait.x_star, 0.1, prng);
  ClosedLoop cl(w.hs, w.model, w.fblin_cfg(), ds, ro);
  const ExecutionTrace tr = cl.execute(section_vertex(w.hs), x0, true, 4, true);
  const double lmax = lyapunov_oracle(1, w.epsilon).eigenvalues().real().maxCoeff();
  const double gamma = 0.45 / lmax;
  const IssLyapunovReport rep = iss_lyapunov_check(tr, w.hs, w.model, w.epsilon, gamma, gamma);
  int outside = 0, samples = 0;
  for (const auto& d : rep.domains) {
    outside += d.outside;
    samples += d.samples;
  }
  const bool pass = res <= 1e-10 && oracle <= 1e-10 && tr.cycles_completed == 4 && outside > 0 &&
                    rep.violations_outside == 0;
  return {pass, "max residual " + num(res) + ", |P - closed form| " + num(oracle) + "; trace |d| " +
                    num(rep.d_inf) + ", " + std::to_string(outside) + "/" +
                    std::to_string(samples) + " samples outside the ball, " +
                    std::to_string(rep.violations_outside) + " violations"};
}

Outcome check_output_decay() {
  Walker& w = walker();
  const double e = w.epsilon, rate = 0.9 * e;
  // C = sup_t |exp(A2 t)|_2 e^{0.9 e t}; the blocks are identical, so k2 = 1 suffices.
  const Mat A = output_error_matrix(1, e);
  double C = 0;
  for (double t = 0; t <= 40.0 / e; t += 1e-3 / e) {
    const Mat E = (A * t).exp();
    C = std::max(C, E.operatorNorm() * std::exp(rate * t));
  }
  RolloutOptions ro;
  ro.sample_dt = 2e-3;
  const GuardChart chart = make_guard_chart(w.hs, w.model, w.fit.gait.x_star);
  const double floor = 1e-8;  // integration noise on eta2
  double fitted = 0;
  int failed = 0, checked = 0;
  for (int s = 0; s < 20; ++s) {
    std::mt19937_64 prng(100 + s);
    const State x0 = radial_perturbation(chart, w.model, w.fit.gait.x_star, 0.02, prng);
    ClosedLoop cl(w.hs, w.model, w.fblin_cfg(), {}, ro);
    const ExecutionTrace tr = cl.execute(section_vertex(w.hs), x0, true, 2, true);
    if (!tr.failure.empty()) ++failed;
    int step = -1;
    double t0 = 0, n0 = 0;
    for (const auto& smp : tr.samples) {
      const double nrm = smp.eta2().norm();
      if (smp.step != step) {
        step = smp.step;
        t0 = smp.t;
        n0 = nrm;
        continue;
      }
      const double envelope = std::exp(-rate * (smp.t - t0)) * n0;
      if (nrm > floor) fitted = std::max(fitted, nrm / envelope);
      ++checked;
    }
  }
  const bool pass = failed == 0 && checked > 0 && fitted <= C * (1 + 1e-6);
  return {pass, "fitted C " + num(fitted) + " <= analytic " + num(C) + " over " +
                    std::to_string(checked) + " samples, 20 starts, " + std::to_string(failed) +
                    " failed runs"};
}

Outcome check_orbit_stability() {
  Walker& w = walker();
  const GaitArtifact& g = w.fit.gait;
  const ControllerConfig cfg = w.fblin_cfg();
  const State px = poincare(w.hs, w.model, cfg, {}, g.x_star);
  const double per = (px.stacked() - g.x_star.stacked()).norm();
  const LinearizedPoincare lp2 = linearized_poincare(w.hs, w.model, cfg, g.x_star, 1e-5);
  ClosedLoop cl(w.hs, w.model, cfg);
  const ExecutionTrace tr = cl.execute(section_vertex(w.hs), g.x_star, true, 100);
  double drift = 0;
  for (const auto& s : tr.section_states(section_vertex(w.hs)))
    drift = std::max(drift, (s.stacked() - g.x_star.stacked()).norm());
  const bool pass = w.fit.design.feasible && g.invariance_residual <= 1e-6 && per <= 1e-8 &&
                    g.spectral_radius < 1 && std::abs(lp2.spectral_radius - g.spectral_radius) < 1e-3 &&
                    tr.cycles_completed == 100 && drift <= 1e-4;
  return {pass, "invariance " + num(g.invariance_residual) + ", |P(x*) - x*| " + num(per) +
                    ", rho " + num(g.spectral_radius) + " (step 1e-5: " + num(lp2.spectral_radius) +
                    "), 100-step drift " + num(drift)};
}

Outcome check_iss_gain() {
  Walker& w = walker();
  const IssOptions o;
  const IssReport rep = estimate_iss_gain(w.hs, w.model, w.fblin_cfg(), w.fit.gait.x_star, o);
  const bool pass = rep.pass && o.magnitudes.size() >= 5 && o.n_seeds >= 20 &&
                    std::abs(rep.xi_p - w.fit.gait.spectral_radius) < 0.05;
  std::string curve;
  for (const auto& r : rep.rows) curve += " " + num(r.magnitude) + ":" + num(r.mean);
  return {pass, "xi_p " + num(rep.xi_p) + " (rho " + num(w.fit.gait.spectral_radius) + "), R2 " +
                    num(rep.r2) + ", monotone " + std::to_string(rep.monotone) + ", floor " +
                    num(rep.rows.front().iota) + ", inequality " +
                    std::to_string(rep.definition_ok) + ", curve" + curve};
}

Outcome check_chain_pd() {
  const RobotModel model = make_chain_model();
  std::vector<Vec> tune_starts = {random_chain_start(5, 1), random_chain_start(5, 2)};
  const ChainGainResult g = tune_chain_gains(model, {1000, 3000}, {10, 30}, tune_starts);
  double worst = 0, dmax = 0, dmin = INFINITY;
  for (std::uint64_t s : {1, 2, 3}) {
    const ChainTrace tr = simulate_chain_pd(model, g.kp, g.kd, random_chain_start(5, s), Vec::Zero(5));
    worst = std::max(worst, tr.steady_error);
    dmax = std::max(dmax, tr.d_max);
    dmin = std::min(dmin, tr.d_min_tail);
  }
  const bool pass = worst < 0.01 && std::isfinite(dmax) && dmin > 0;
  return {pass, "gains kp " + num(g.kp) + " kd " + num(g.kd) + ", steady error " + num(worst) +
                    ", |d| in [" + num(dmin) + ", " + num(dmax) + "] N m"};
}

Outcome check_strict_lyapunov() {
  const RobotModel model = make_chain_model();
  const double kp = 3000, kd = 30;
  const ChainTrace tr = simulate_chain_pd(model, kp, kd, random_chain_start(5, 1), Vec::Zero(5));
  const double bound = strict_lyapunov_pd_check(model, tr, kp, kd, 0.0).kappa0_bound;
  const StrictLyapunovReport at = strict_lyapunov_pd_check(model, tr, kp, kd, bound);
  const StrictLyapunovReport over = strict_lyapunov_pd_check(model, tr, kp, kd, 10 * bound);
  const bool pass = at.pass && at.positivity_checked >= 10000 && at.outside > 0 &&
                    over.positivity_failures > 0;
  return {pass, "kappa0 bound " + num(bound) + ": " + std::to_string(at.positivity_failures) +
                    " positivity failures, " + std::to_string(at.violations_outside) + "/" +
                    std::to_string(at.outside) + " dV/dt violations; at 10x: " +
                    std::to_string(over.positivity_failures) + " positivity failures"};
}

/// Gains, clock and tolerances come from the tuned walking config.
const ExperimentConfig& pd_walk() {
  static const ExperimentConfig c =
      load_config(std::string(ISSWALK_SOURCE_DIR) + "/configs/pd_walk.json");
  return c;
}

Outcome check_clock_channel() {
  Walker& w = walker();
  const ExperimentConfig& c = pd_walk();
  ClockSweepOptions so;
  so.steps = c.pd_bench.steps;
  const std::vector<double>& scales = c.pd_bench.clock_scales;
  const ClockSweep sw =
      clock_scale_sweep(w.hs, w.model, c.controller, w.fit.gait.x_star, scales, so, c.rollout);
  const auto [lo, hi] = std::minmax_element(scales.begin(), scales.end());
  std::string bounds;
  for (const auto& r : sw.runs) bounds += " " + num(r.clock_scale) + ":" + num(r.bound);
  // d3 on the nominal orbit: linearizing law on the time clock, tight tolerances.
  RolloutOptions ro;
  ro.ode.rtol = 1e-11;
  ro.ode.atol = 1e-13;
  ro.sample_dt = 0.01;
  ClosedLoop cl(w.hs, w.model, w.fblin_cfg(ControllerKind::kFblinTime), {}, ro);
  const ExecutionTrace tr = cl.execute(section_vertex(w.hs), w.fit.gait.x_star, true, 10, true);
  const double d3 = d3_max(tr);
  const bool pass = sw.complete && sw.monotone && so.steps >= 50 && *lo <= 0.95 && *hi >= 1.05 &&
                    tr.cycles_completed == 10 && d3 <= 1e-8;
  return {pass, std::to_string(so.steps) + " steps each, bound vs clock scale" + bounds + ", nominal d3 " + num(d3)};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome check_deviation_histogram() {
  const fs::path root = fs::temp_directory_path() / "isswalk_acceptance";
  fs::remove_all(root);
  const std::string cfg = std::string(ISSWALK_SOURCE_DIR) + "/configs/pd_walk.json";
  std::vector<std::string> csv, svg;
  for (int run = 0; run < 2; ++run) {
    const fs::path dir = root / ("run" + std::to_string(run));
    const std::string sim = std::string(ISSWALK_CLI) + " simulate -c " + cfg + " -o " +
                            dir.string() +
                            " --set disturbance.continuous=uniform --set disturbance.bound=0.005"
                            " --set disturbance.seed=7 > /dev/null";
    const std::string plot = std::string(ISSWALK_CLI) + " plot --kind histogram --in " +
                             (dir / "trace.csv").string() + " -o " + dir.string() + " > /dev/null";
    if (std::system(sim.c_str()) != 0 || std::system(plot.c_str()) != 0)
      return {false, "CLI run " + std::to_string(run) + " failed"};
    csv.push_back(slurp(dir / "trace.csv"));
    svg.push_back(slurp(dir / "histogram.svg"));
  }
  // Recompute the histogram input from the CSV alone.
  std::istringstream in(csv[0]);
  std::string line;
  std::getline(in, line);
  int col = 0, idx = -1;
  {
    std::istringstream h(line);
    std::string cell;
    while (std::getline(h, cell, ',')) {
      if (cell == "d_inf") idx = col;
      ++col;
    }
  }
  double dmax = 0;
  int rows = 0;
  bool finite = true;
  std::set<int> steps;
  while (std::getline(in, line)) {
    std::istringstream r(line);
    std::string cell;
    for (int c = 0; std::getline(r, cell, ','); ++c) {
      if (c == 1) steps.insert(std::stoi(cell));
      if (c == idx) {
        const double v = std::stod(cell);
        finite = finite && std::isfinite(v);
        dmax = std::max(dmax, v);
      }
    }
    ++rows;
  }
  const bool identical = csv[0] == csv[1] && svg[0] == svg[1];
  const bool pass = identical && idx >= 0 && finite && dmax > 0 && dmax < 1e4 &&
                    static_cast<int>(steps.size()) == 100 && !svg[0].empty();
  return {pass, std::to_string(steps.size() / 2) + " steps, " + std::to_string(rows) +
                    " samples, max |d| " + num(dmax) + " N m, byte-identical CSV+SVG " +
                    (identical ? "yes" : "no")};
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    double budget_s;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria = {
      {1, "dynamics correctness", 10, check_dynamics_correctness},
      {2, "output-error Lyapunov certificate", 30, check_output_lyapunov},
      {3, "exponential output decay", 60, check_output_decay},
      {4, "orbit existence and stability", 120, check_orbit_stability},
      {5, "e-ISS of the orbit", 300, check_iss_gain},
      {6, "PD robustness on the 5-link chain", 30, check_chain_pd},
      {7, "strict Lyapunov function for PD", 30, check_strict_lyapunov},
      {8, "clock-scale channel", 120, check_clock_channel},
      {9, "deviation histogram and CLI determinism", 60, check_deviation_histogram},
  };
  // The gait fit is shared; its cost is reported separately.
  const auto f0 = std::chrono::steady_clock::now();
  walker();
  const double fit_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - f0).count();
  std::cout << "gait fit: " << num(fit_s) << " s\n";
  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool pass = o.pass && s <= c.budget_s;
    if (!pass) ++failed;
    std::cout << (pass ? "PASS" : "FAIL") << " criterion " << c.id << " (" << c.name << ", "
              << num(s) << " s of " << num(c.budget_s) << "): " << o.detail << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
