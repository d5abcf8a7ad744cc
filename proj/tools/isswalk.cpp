// Experiment driver. Exit codes: 0 all verdicts PASS, 2 an analysis FAIL or a
// numerical failure, 1 usage or configuration error.

#include <cstdlib>
#include <iostream>
#include <memory>

#include "CLI11.hpp"

#include "isswalk/bench.hpp"
#include "isswalk/config.hpp"
#include "isswalk/plot.hpp"

using namespace isswalk;

namespace {

constexpr int kExitPass = 0;
constexpr int kExitUsage = 1;
constexpr int kExitFail = 2;

using Row = std::vector<std::string>;

std::string b2s(bool b) { return b ? "1" : "0"; }

/// Collects named checks; the verdict is the conjunction.
struct Checks {
  std::vector<Row> rows;
  bool pass = true;

  void add(const std::string& name, double value, const std::string& relation, double limit,
           bool ok) {
    rows.push_back({name, fmt_num(value), relation, fmt_num(limit), b2s(ok)});
    pass = pass && ok;
  }
  void write(OutputSet& out, const std::string& name) const {
    out.write_csv(name, {"check", "value", "relation", "limit", "pass"}, rows);
  }
};

struct Biped {
  RobotModel model = make_biped_model();
  HybridSystem hs;
  GaitArtifact gait;
  GaitFitResult fit;
  bool fitted = false;
};

std::unique_ptr<Biped> load_biped(const ExperimentConfig& c) {
  auto b = std::make_unique<Biped>();
  if (c.gait_artifact.empty()) {
    b->fit = gait_fit(b->model, c.seed, c.controller.epsilon);
    b->gait = b->fit.gait;
    b->fitted = true;
  } else {
    b->gait = json_gait(parse_config_text(read_file(c.gait_artifact), c.gait_artifact));
  }
  b->hs = make_biped_system(b->model, b->gait.v_d);
  apply_gait(b->hs, b->gait);
  b->hs.validate(b->model);
  return b;
}

State perturbed_start(const Biped& b, double r, std::uint64_t seed) {
  if (!(r > 0)) return b.gait.x_star;
  std::mt19937_64 rng(seed);
  const GuardChart chart = make_guard_chart(b.hs, b.model, b.gait.x_star);
  return radial_perturbation(chart, b.model, b.gait.x_star, r, rng);
}

std::vector<std::string> trace_header(int n, int m) {
  std::vector<std::string> h = {"step", "domain", "t", "t_dom", "tau"};
  for (int i = 0; i < n; ++i) h.push_back("q" + std::to_string(i));
  for (int i = 0; i < n; ++i) h.push_back("qd" + std::to_string(i));
  for (int i = 0; i < m; ++i) h.push_back("u" + std::to_string(i));
  for (const char* c : {"d_inf", "d3_inf", "y1_inf", "eta2_norm", "guard", "flags"}) h.push_back(c);
  return h;
}

std::vector<Row> trace_rows(const ExecutionTrace& tr, const HybridSystem& hs) {
  std::vector<Row> rows;
  for (const auto& s : tr.samples) {
    Row r = {std::to_string(s.step), hs.domains[s.vertex].name, fmt_num(s.t), fmt_num(s.t_dom),
             fmt_num(s.tau)};
    for (double v : s.q) r.push_back(fmt_num(v));
    for (double v : s.qdot) r.push_back(fmt_num(v));
    for (double v : s.u) r.push_back(fmt_num(v));
    r.push_back(fmt_num(inf_norm(s.d)));
    r.push_back(fmt_num(inf_norm(s.d3)));
    r.push_back(fmt_num(inf_norm(s.y1)));
    r.push_back(fmt_num(s.eta2().norm()));
    r.push_back(fmt_num(s.guard));
    r.push_back(std::to_string(s.flags));
    rows.push_back(std::move(r));
  }
  return rows;
}

void write_steps(OutputSet& out, const std::string& name, const ExecutionTrace& tr,
                 const HybridSystem& hs, const State& x_star) {
  const int sec = section_vertex(hs);
  std::vector<Row> rows;
  for (const auto& st : tr.steps) {
    const double err =
        st.vertex == sec ? (st.x_guard.stacked() - x_star.stacked()).norm() : std::nan("");
    rows.push_back({std::to_string(st.index), hs.domains[st.vertex].name, fmt_num(st.t_start),
                    fmt_num(st.dwell), fmt_num(st.d_e), fmt_num(st.d_max), fmt_num(st.eta2_max),
                    fmt_num(st.guard_end), fmt_num(err), std::to_string(st.flags)});
  }
  out.write_csv(name,
                {"index", "domain", "t_start", "dwell", "d_e", "d_max", "eta2_max", "guard_end",
                 "section_error", "flags"},
                rows);
}

void write_trace(OutputSet& out, const std::string& name, const ExecutionTrace& tr,
                 const Biped& b) {
  out.write(name, csv_text(trace_header(b.model.n(), b.model.m()), trace_rows(tr, b.hs)));
}

int finish(OutputSet& out, const std::string& sub, bool pass) {
  out.write_manifest(sub, pass ? "PASS" : "FAIL");
  std::cout << sub << ": " << (pass ? "PASS" : "FAIL") << " (" << out.dir().string() << ")\n";
  return pass ? kExitPass : kExitFail;
}

// ---------------------------------------------------------------------------

int cmd_simulate(const ExperimentConfig& c, OutputSet& out) {
  auto b = load_biped(c);
  const State x0 = perturbed_start(*b, c.perturbation, c.perturbation_seed);
  ClosedLoop cl(b->hs, b->model, c.controller, c.disturbance, c.rollout);
  const ExecutionTrace tr = cl.execute(section_vertex(b->hs), x0, true, c.steps, true);
  write_trace(out, "trace.csv", tr, *b);
  write_steps(out, "steps.csv", tr, b->hs, b->gait.x_star);
  Checks ch;
  ch.add("cycles_completed", tr.cycles_completed, ">=", c.steps, tr.cycles_completed >= c.steps);
  ch.add("d_max", d_norm_max(tr), "<", INFINITY, std::isfinite(d_norm_max(tr)));
  ch.write(out, "summary.csv");
  if (!tr.failure.empty()) std::cerr << "simulate: stopped with " << tr.failure << "\n";
  const Csv csv = read_csv(out.dir() / "trace.csv");
  out.write("trace.svg", render_plot(csv, PlotKind::kTrace));
  out.write("phase_portrait.svg", render_plot(csv, PlotKind::kPhasePortrait));
  out.write("histogram.svg", render_plot(csv, PlotKind::kHistogram, c.pd_bench.bins));
  return finish(out, "simulate", ch.pass);
}

int cmd_gait_fit(const ExperimentConfig& c, OutputSet& out) {
  RobotModel model = make_biped_model();
  const GaitFitResult f = gait_fit(model, c.seed, c.controller.epsilon);
  out.write_json("gait.json", gait_json(f.gait));
  Checks ch;
  ch.add("invariance_residual", f.gait.invariance_residual, "<=", 1e-6,
         f.gait.invariance_residual <= 1e-6);
  ch.add("periodicity_residual", f.gait.periodicity_residual, "<=", c.fp_tol,
         f.gait.periodicity_residual <= c.fp_tol);
  ch.add("spectral_radius", f.gait.spectral_radius, "<", 1.0, f.gait.spectral_radius < 1.0);
  ch.add("newton_iterations", f.newton_iterations, "<=", c.fp_max_iter,
         f.newton_iterations <= c.fp_max_iter);
  ch.write(out, "gait_fit.csv");
  return finish(out, "gait-fit", ch.pass);
}

int cmd_fixed_point(const ExperimentConfig& c, OutputSet& out) {
  auto b = load_biped(c);
  ControllerConfig cfg = c.controller;
  const State x0 = perturbed_start(*b, c.fp_perturbation, c.perturbation_seed);
  const FixedPointResult fp =
      find_fixed_point(b->hs, b->model, cfg, x0, c.fp_tol, c.fp_max_iter, c.fp_fd_step, c.rollout);
  std::vector<Row> rows;
  for (Eigen::Index i = 0; i < fp.x.q.size(); ++i)
    rows.push_back({"q" + std::to_string(i), fmt_num(fp.x.q[i]), fmt_num(b->gait.x_star.q[i])});
  for (Eigen::Index i = 0; i < fp.x.qdot.size(); ++i)
    rows.push_back(
        {"qd" + std::to_string(i), fmt_num(fp.x.qdot[i]), fmt_num(b->gait.x_star.qdot[i])});
  out.write_csv("fixed_point_state.csv", {"coordinate", "x", "x_artifact"}, rows);
  Checks ch;
  ch.add("residual", fp.residual, "<=", c.fp_tol, fp.residual <= c.fp_tol);
  ch.add("iterations", fp.iterations, "<=", c.fp_max_iter, fp.iterations <= c.fp_max_iter);
  ch.add("distance_to_artifact", (fp.x.stacked() - b->gait.x_star.stacked()).norm(), "<", INFINITY,
         true);
  ch.write(out, "fixed_point.csv");
  return finish(out, "fixed-point", ch.pass);
}

int cmd_eigen(const ExperimentConfig& c, OutputSet& out) {
  auto b = load_biped(c);
  const LinearizedPoincare lp =
      linearized_poincare(b->hs, b->model, c.controller, b->gait.x_star, c.eigen_fd_step, c.rollout);
  std::vector<Row> rows;
  for (Eigen::Index i = 0; i < lp.eigenvalues.size(); ++i)
    rows.push_back({std::to_string(i), fmt_num(lp.eigenvalues[i].real()),
                    fmt_num(lp.eigenvalues[i].imag()), fmt_num(std::abs(lp.eigenvalues[i]))});
  std::sort(rows.begin(), rows.end(),
            [](const Row& a, const Row& b) { return std::stod(a[3]) > std::stod(b[3]); });
  for (size_t i = 0; i < rows.size(); ++i) rows[i][0] = std::to_string(i);
  out.write_csv("eigen.csv", {"index", "re", "im", "abs"}, rows);
  Checks ch;
  ch.add("spectral_radius", lp.spectral_radius, "<", 1.0, lp.spectral_radius < 1.0);
  ch.write(out, "eigen_summary.csv");
  return finish(out, "eigen", ch.pass);
}

int cmd_iss_sweep(const ExperimentConfig& c, OutputSet& out) {
  auto b = load_biped(c);
  const IssReport rep =
      estimate_iss_gain(b->hs, b->model, c.controller, b->gait.x_star, c.iss, c.rollout);
  std::vector<Row> rows;
  for (const auto& r : rep.rows)
    rows.push_back({fmt_num(r.magnitude), fmt_num(r.mean), fmt_num(r.ci_lo), fmt_num(r.ci_hi),
                    fmt_num(r.iota), fmt_num(r.d_max), std::to_string(r.failures)});
  out.write_csv("gain_curve.csv",
                {"magnitude", "mean", "ci_lo", "ci_hi", "iota", "d_max", "failures"}, rows);
  rows.clear();
  for (const auto& g : rep.samples)
    for (size_t i = 0; i < g.errors.size(); ++i)
      rows.push_back({fmt_num(g.magnitude), std::to_string(g.seed), std::to_string(i),
                      fmt_num(g.errors[i]), b2s(g.failed), g.failure.empty() ? "-" : g.failure});
  out.write_csv("gain_samples.csv", {"magnitude", "seed", "step", "error", "failed", "failure"},
                rows);
  rows.clear();
  for (size_t p = 0; p < rep.decay.size(); ++p)
    for (size_t i = 0; i < rep.decay[p].size(); ++i)
      rows.push_back({std::to_string(p), std::to_string(i), fmt_num(rep.decay[p][i])});
  out.write_csv("decay.csv", {"perturbation", "step", "error"}, rows);
  Checks ch;
  ch.add("xi_p", rep.xi_p, "in(0,1)", 1.0, rep.xi_p > 0 && rep.xi_p < 1);
  ch.add("r2", rep.r2, ">=", 0.99, rep.r2 >= 0.99);
  ch.add("monotone", rep.monotone, "==", 1, rep.monotone);
  ch.add("floor", rep.rows.empty() ? NAN : rep.rows.front().iota, "<=", 1e-4, rep.floor_ok);
  ch.add("iss_inequality", rep.definition_ok, "==", 1, rep.definition_ok);
  ch.add("overshoot_N_p", rep.N_p, "<", INFINITY, std::isfinite(rep.N_p));
  ch.add("delta_fail", rep.delta_fail, ">", 0, rep.delta_fail > 0);
  ch.write(out, "iss_summary.csv");
  Json j;
  j["schema_version"] = kSchemaVersion;
  j["xi_p"] = rep.xi_p;
  j["r2"] = rep.r2;
  j["N_p"] = rep.N_p;
  j["delta_fail"] = std::isfinite(rep.delta_fail) ? Json(rep.delta_fail) : Json("inf");
  j["monotone"] = rep.monotone;
  j["floor_ok"] = rep.floor_ok;
  j["inequality_ok"] = rep.definition_ok;
  j["pass"] = rep.pass;
  out.write_json("iss_report.json", j);
  out.write("gain_curve.svg", render_plot(read_csv(out.dir() / "gain_curve.csv"), PlotKind::kGainCurve));
  return finish(out, "iss-sweep", ch.pass && rep.pass);
}

int chain_bench(const ExperimentConfig& c, OutputSet& out, bool tune) {
  const ChainBenchOptions& o = c.chain;
  RobotModel model = make_chain_model(o.params);
  std::vector<Vec> starts;
  for (auto s : o.starts) starts.push_back(random_chain_start(model.n(), s, o.start_amplitude));
  double kp = o.kp, kd = o.kd;
  if (tune) {
    const ChainGainResult g = tune_chain_gains(model, o.kp_grid, o.kd_grid, starts, o.run);
    std::vector<Row> rows;
    for (size_t i = 0; i < o.kp_grid.size(); ++i)
      for (size_t k = 0; k < o.kd_grid.size(); ++k)
        rows.push_back({fmt_num(o.kp_grid[i]), fmt_num(o.kd_grid[k]), fmt_num(g.table[i][k])});
    out.write_csv("chain_grid.csv", {"kp", "kd", "worst_steady_error"}, rows);
    kp = g.kp;
    kd = g.kd;
  }
  std::vector<Row> rows;
  Checks ch;
  double worst = 0, dmax = 0, dmin_tail = INFINITY;
  for (size_t i = 0; i < starts.size(); ++i) {
    const ChainTrace tr = simulate_chain_pd(model, kp, kd, starts[i], Vec::Zero(model.n()), o.run);
    rows.push_back({std::to_string(o.starts[i]), fmt_num(kp), fmt_num(kd),
                    fmt_num(tr.steady_error), fmt_num(tr.d_max), fmt_num(tr.d_min_tail)});
    worst = std::max(worst, tr.steady_error);
    dmax = std::max(dmax, tr.d_max);
    dmin_tail = std::min(dmin_tail, tr.d_min_tail);
    if (i == 0) {
      std::vector<std::string> h = {"step", "t"};
      for (int j = 0; j < model.n(); ++j) h.push_back("q" + std::to_string(j));
      for (int j = 0; j < model.n(); ++j) h.push_back("qd" + std::to_string(j));
      h.push_back("d_inf");
      std::vector<Row> tr_rows;
      for (size_t k = 0; k < tr.samples.size(); k += 10) {
        const auto& s = tr.samples[k];
        Row r = {"0", fmt_num(s.t)};
        for (double v : s.q) r.push_back(fmt_num(v));
        for (double v : s.qdot) r.push_back(fmt_num(v));
        r.push_back(fmt_num(inf_norm(s.d)));
        tr_rows.push_back(std::move(r));
      }
      out.write_csv("chain_trace.csv", h, tr_rows);
    }
  }
  out.write_csv("chain_runs.csv", {"start_seed", "kp", "kd", "steady_error", "d_max", "d_min_tail"},
                rows);
  ch.add("steady_error", worst, "<", 0.01, worst < 0.01);
  ch.add("d_max", dmax, "<", INFINITY, std::isfinite(dmax));
  ch.add("d_min_tail", dmin_tail, ">", 0, dmin_tail > 0);
  if (!o.ray_scales.empty()) {
    // Steady-state |d| along (s kp, s kd); first start only.
    const GainRay ray = gain_ray(model, kp, kd, o.ray_scales, {starts.front()}, o.run);
    std::vector<Row> ray_rows;
    for (const auto& p : ray.points)
      ray_rows.push_back({fmt_num(p.scale), fmt_num(p.kp), fmt_num(p.kd), fmt_num(p.d_max_tail),
                          fmt_num(p.steady_error)});
    out.write_csv("chain_ray.csv", {"scale", "kp", "kd", "d_max_tail", "steady_error"}, ray_rows);
    ch.add("ray_d_decreasing", ray.decreasing ? 1 : 0, "==", 1, ray.decreasing);
  }
  ch.write(out, "pd_bench.csv");
  const Csv csv = read_csv(out.dir() / "chain_trace.csv");
  out.write("chain_trace.svg", render_plot(csv, PlotKind::kTrace));
  out.write("histogram.svg", render_plot(csv, PlotKind::kHistogram, c.pd_bench.bins));
  return finish(out, "pd-bench", ch.pass);
}

int cmd_pd_bench(const ExperimentConfig& c, OutputSet& out, bool tune) {
  if (c.model == "chain") return chain_bench(c, out, tune);
  if (!is_pd(c.controller.kind) || !is_time_based(c.controller.kind))
    throw ConfigError("pd-bench on the biped needs controller.kind = pd_time");
  auto b = load_biped(c);
  ClockSweepOptions so;
  so.steps = c.pd_bench.steps;
  so.keep_traces = true;
  const ClockSweep sw = clock_scale_sweep(b->hs, b->model, c.controller, b->gait.x_star,
                                          c.pd_bench.clock_scales, so, c.rollout, c.disturbance);
  std::vector<Row> rows;
  size_t nominal = 0;
  for (size_t i = 0; i < sw.runs.size(); ++i) {
    const ClockRun& r = sw.runs[i];
    rows.push_back({fmt_num(r.clock_scale), std::to_string(r.cycles),
                    r.failure.empty() ? "-" : r.failure, fmt_num(r.bound), fmt_num(r.d_max),
                    fmt_num(r.d3_max), fmt_num(r.eta2_max)});
    if (std::abs(r.clock_scale - 1) < std::abs(sw.runs[nominal].clock_scale - 1)) nominal = i;
  }
  out.write_csv("pd_walk.csv",
                {"clock_scale", "cycles", "failure", "guard_error_bound", "d_max_tail",
                 "d3_max_tail", "eta2_max"},
                rows);
  write_trace(out, "pd_trace.csv", sw.runs[nominal].trace, *b);
  write_steps(out, "pd_steps.csv", sw.runs[nominal].trace, b->hs, b->gait.x_star);
  Checks ch;
  double dmax = 0;
  for (const auto& r : sw.runs) dmax = std::max(dmax, d_norm_max(r.trace));
  ch.add("complete", sw.complete, "==", 1, sw.complete);
  ch.add("bound_monotone_in_clock_error", sw.monotone, "==", 1,
         sw.monotone || sw.runs.size() == 1);
  ch.add("d_max", dmax, "<", INFINITY, std::isfinite(dmax));
  ch.write(out, "pd_bench.csv");
  const Csv csv = read_csv(out.dir() / "pd_trace.csv");
  out.write("histogram.svg", render_plot(csv, PlotKind::kHistogram, c.pd_bench.bins));
  out.write("phase_portrait.svg", render_plot(csv, PlotKind::kPhasePortrait));
  return finish(out, "pd-bench", ch.pass);
}

int cmd_lyap_check(const ExperimentConfig& c, OutputSet& out) {
  Checks ch;
  if (c.lyap.target == "strict") {
    const ChainBenchOptions& o = c.chain;
    RobotModel model = make_chain_model(o.params);
    const Vec q0 = random_chain_start(model.n(), o.starts.front(), o.start_amplitude);
    const ChainTrace tr = simulate_chain_pd(model, o.kp, o.kd, q0, Vec::Zero(model.n()), o.run);
    StrictLyapunovOptions so;
    so.positivity_samples = c.lyap.samples;
    const double bound = strict_lyapunov_pd_check(model, tr, o.kp, o.kd, 0.0, so).kappa0_bound;
    const StrictLyapunovReport r =
        strict_lyapunov_pd_check(model, tr, o.kp, o.kd, c.lyap.kappa_scale * bound, so);
    out.write_csv("strict_lyapunov.csv",
                  {"kappa0", "kappa0_bound", "c_c", "c_d", "c_m", "positivity_checked",
                   "positivity_failures", "min_v_ratio", "samples", "outside", "violations_outside",
                   "max_vdot_outside"},
                  {{fmt_num(r.kappa0), fmt_num(r.kappa0_bound), fmt_num(r.bounds.c_c),
                    fmt_num(r.bounds.c_d), fmt_num(r.bounds.c_m),
                    std::to_string(r.positivity_checked), std::to_string(r.positivity_failures),
                    fmt_num(r.min_v_ratio), std::to_string(r.samples), std::to_string(r.outside),
                    std::to_string(r.violations_outside), fmt_num(r.max_vdot_outside)}});
    ch.add("kappa0", r.kappa0, "<=", r.kappa0_bound, r.bound_ok);
    ch.add("positivity_failures", r.positivity_failures, "==", 0, r.positive);
    ch.add("violations_outside", r.violations_outside, "==", 0, r.decreasing);
    ch.write(out, "lyap_summary.csv");
    return finish(out, "lyap-check", ch.pass);
  }

  std::vector<Row> rows;
  for (double eps : c.lyap.epsilons) {
    for (int k2 : {1, 2, 5}) {
      const Mat A = output_error_matrix(k2, eps);
      const Mat Q = Mat::Identity(2 * k2, 2 * k2);
      const Mat P = lyapunov_solve(A, Q);
      const double res = lyapunov_residual(A, P, Q);
      Eigen::SelfAdjointEigenSolver<Mat> es(P);
      rows.push_back({fmt_num(eps), std::to_string(k2), fmt_num(res),
                      fmt_num(es.eigenvalues().minCoeff()), fmt_num(es.eigenvalues().maxCoeff())});
      ch.add("residual_eps" + fmt_num(eps) + "_k" + std::to_string(k2), res, "<=", 1e-10,
             res <= 1e-10);
    }
  }
  out.write_csv("lyap_certificate.csv", {"epsilon", "k2", "residual", "lambda_min", "lambda_max"},
                rows);

  auto b = load_biped(c);
  DisturbanceSpec ds = c.disturbance;
  if (ds.continuous == ContinuousKind::kNone && c.lyap.bound > 0) {
    ds.continuous = ContinuousKind::kUniformRandom;
    ds.bound = c.lyap.bound;
  }
  RolloutOptions ro = c.rollout;
  ro.sample_dt = std::min(ro.sample_dt > 0 ? ro.sample_dt : 1e-3, 1e-3);
  ControllerConfig cfg = c.controller;
  cfg.kind = ControllerKind::kFblinState;
  ClosedLoop cl(b->hs, b->model, cfg, ds, ro);
  const State x0 = perturbed_start(*b, c.lyap.perturbation, c.perturbation_seed);
  const ExecutionTrace tr = cl.execute(section_vertex(b->hs), x0, true, c.lyap.steps, true);
  ch.add("trace_cycles", tr.cycles_completed, ">=", c.lyap.steps, tr.cycles_completed >= c.lyap.steps);
  const Mat P = lyapunov_solve(output_error_matrix(1, cfg.epsilon), Mat::Identity(2, 2));
  const double gamma = c.lyap.rate_fraction / P.eigenvalues().real().maxCoeff();
  const IssLyapunovReport rep = iss_lyapunov_check(tr, b->hs, b->model, cfg.epsilon, gamma, gamma);
  rows.clear();
  for (const auto& d : rep.domains)
    rows.push_back({d.name, fmt_num(d.lambda_min), fmt_num(d.lambda_max), fmt_num(d.b2_norm),
                    fmt_num(d.ball_radius), std::to_string(d.samples), std::to_string(d.outside),
                    std::to_string(d.violations_outside), std::to_string(d.violations_inside)});
  out.write_csv("lyap_trace.csv",
                {"domain", "lambda_min", "lambda_max", "b2_norm", "ball_radius", "samples",
                 "outside", "violations_outside", "violations_inside"},
                rows);
  ch.add("d_inf", rep.d_inf, "<", INFINITY, std::isfinite(rep.d_inf));
  int outside = 0;
  for (const auto& d : rep.domains) outside += d.outside;
  ch.add("samples_outside_ball", outside, ">", 0, outside > 0);
  ch.add("violations_outside", rep.violations_outside, "==", 0, rep.pass);
  ch.write(out, "lyap_summary.csv");
  return finish(out, "lyap-check", ch.pass);
}

std::filesystem::path resolve_out(const std::string& flag, const ExperimentConfig* c) {
  if (!flag.empty()) return flag;
  if (c && !c->out_dir.empty()) return c->out_dir;
  if (const char* env = std::getenv("HZD_OUT_DIR"); env && *env) return env;
  return "out";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hybrid walking: gait fitting, return-map analysis and disturbance sweeps"};
  app.require_subcommand(1);
  std::string config_path, out_flag;
  std::vector<std::string> sets;
  auto common = [&](CLI::App* s) {
    s->add_option("-c,--config", config_path, "JSON experiment config");
    s->add_option("--set", sets, "override a config key: dotted.path=value")->take_all();
    s->add_option("-o,--out", out_flag, "output directory (default: $HZD_OUT_DIR, then ./out)");
  };
  int steps = -1;
  bool tune = false;
  auto* sim = app.add_subcommand("simulate", "roll out the closed loop from the gait fixed point");
  common(sim);
  sim->add_option("--steps", steps, "number of steps (one step = one ds + ss cycle)");
  auto* fit = app.add_subcommand("gait-fit", "design a gait and refine its fixed point");
  common(fit);
  auto* fxp = app.add_subcommand("fixed-point", "Newton on the return map");
  common(fxp);
  auto* eig = app.add_subcommand("eigen", "linearized return map and its spectrum");
  common(eig);
  auto* iss = app.add_subcommand("iss-sweep", "disturbance gain curve and decay fit");
  common(iss);
  auto* pdb = app.add_subcommand("pd-bench", "PD regulation (chain) or clock-scale walking (biped)");
  common(pdb);
  pdb->add_flag("--tune", tune, "chain: pick kp, kd from the configured grid first");
  auto* lyap = app.add_subcommand("lyap-check", "output-error or strict Lyapunov certificate");
  common(lyap);
  std::string kind, in_path, name;
  int bins = 30;
  auto* plot = app.add_subcommand("plot", "render a CSV as SVG");
  plot->add_option("--kind", kind, "trace | gain_curve | phase_portrait | histogram")->required();
  plot->add_option("--in", in_path, "input CSV")->required();
  plot->add_option("-o,--out", out_flag, "output directory (default: $HZD_OUT_DIR, then ./out)");
  plot->add_option("--name", name, "output file name (default: <kind>.svg)");
  plot->add_option("--bins", bins, "histogram bins");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitPass : kExitUsage;
  }

  try {
    if (plot->parsed()) {
      const PlotKind k = plot_kind_from_string(kind);
      if (!std::filesystem::exists(in_path)) throw ConfigError("input not found: " + in_path);
      if (bins < 1) throw ConfigError("--bins must be >= 1");
      const Csv csv = read_csv(in_path);
      const std::string svg = render_plot(csv, k, bins);
      OutputSet out(resolve_out(out_flag, nullptr));
      out.write(name.empty() ? kind + ".svg" : name, svg);
      return finish(out, "plot", true);
    }

    CLI::App* sub = app.get_subcommands().front();
    ExperimentConfig c = load_config(config_path, sets);
    if (steps >= 0) c.steps = steps;
    OutputSet out(resolve_out(out_flag, &c));
    out.write_json("config.json", c.tree);
    const std::string s = sub->get_name();
    if (s == "simulate") return cmd_simulate(c, out);
    if (s == "gait-fit") return cmd_gait_fit(c, out);
    if (s == "fixed-point") return cmd_fixed_point(c, out);
    if (s == "eigen") return cmd_eigen(c, out);
    if (s == "iss-sweep") return cmd_iss_sweep(c, out);
    if (s == "pd-bench") return cmd_pd_bench(c, out, tune);
    if (s == "lyap-check") return cmd_lyap_check(c, out);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const SchemaMismatch& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    std::cerr << "FAIL: " << e.name() << ": " << e.message() << "\n";
    return kExitFail;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
