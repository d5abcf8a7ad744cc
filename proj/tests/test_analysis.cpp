#include <gtest/gtest.h>

#include <random>

#include "isswalk/bench.hpp"
#include "isswalk/chain.hpp"
#include "isswalk/fit.hpp"
#include "isswalk/io.hpp"

using namespace isswalk;

namespace {

// One fitted gait for the whole file; fitting takes about a second.
struct Fitted {
  RobotModel model = make_biped_model();
  GaitSeed seed;
  GaitFitResult fit;
  HybridSystem hs;
  ControllerConfig cfg;
  Fitted() {
    fit = gait_fit(model, seed, 7.0);
    hs = make_biped_system(model, seed.v_d);
    apply_gait(hs, fit.gait);
    cfg.epsilon = 7.0;
  }
};

const Fitted& fitted() {
  static Fitted f;
  return f;
}

}  // namespace

TEST(Lyapunov, RandomHurwitzMatrices) {
  std::mt19937_64 r(5);
  std::normal_distribution<double> n01;
  for (int trial = 0; trial < 5; ++trial) {
    Mat A(4, 4);
    for (int i = 0; i < 16; ++i) A.data()[i] = n01(r);
    Eigen::EigenSolver<Mat> es(A, false);
    A -= (es.eigenvalues().real().maxCoeff() + 0.5) * Mat::Identity(4, 4);
    const Mat Q = Mat::Identity(4, 4);
    const Mat P = lyapunov_solve(A, Q);
    EXPECT_LT(lyapunov_residual(A, P, Q), 1e-10);
    EXPECT_GT(Eigen::SelfAdjointEigenSolver<Mat>(P).eigenvalues().minCoeff(), 0);
  }
}

TEST(Lyapunov, RejectsUnstableMatrix) {
  EXPECT_THROW(lyapunov_solve(Mat::Identity(2, 2), Mat::Identity(2, 2)), NotHurwitz);
  EXPECT_THROW(lyapunov_solve(-Mat::Identity(2, 2), Mat::Identity(3, 3)), DimensionMismatch);
}

TEST(Lyapunov, OutputErrorMatrixSpectrum) {
  const Mat A = output_error_matrix(3, 4.0);
  Eigen::EigenSolver<Mat> es(A, false);
  // Repeated pole at -epsilon.
  for (int i = 0; i < 6; ++i) EXPECT_NEAR(es.eigenvalues()[i].real(), -4.0, 1e-6);
}

TEST(Gait, FitIsFeasibleAndStable) {
  const auto& f = fitted();
  EXPECT_TRUE(f.fit.design.feasible);
  EXPECT_LT(f.fit.gait.spectral_radius, 1.0);
  EXPECT_LT(f.fit.gait.invariance_residual, 1e-6);
}

TEST(Gait, GuardChartRoundTrip) {
  const auto& f = fitted();
  const State& xs = f.fit.gait.x_star;
  const GuardChart chart = make_guard_chart(f.hs, f.model, xs);
  const State back = chart.lift(f.model, chart.reduce(xs), xs);
  EXPECT_LT((back.stacked() - xs.stacked()).norm(), 1e-12);
}

TEST(Gait, FixedPointNewtonRecoversOrbit) {
  const auto& f = fitted();
  const State& xs = f.fit.gait.x_star;
  std::mt19937_64 r(2);
  const GuardChart chart = make_guard_chart(f.hs, f.model, xs);
  const State x0 = radial_perturbation(chart, f.model, xs, 1e-3, r);
  const FixedPointResult fp = find_fixed_point(f.hs, f.model, f.cfg, x0);
  EXPECT_TRUE(fp.converged);
  EXPECT_LT(fp.residual, 1e-8);
  EXPECT_LT((fp.x.stacked() - xs.stacked()).norm(), 1e-6);
}

TEST(Gait, SectionVertexIsSingleSupport) {
  const auto& f = fitted();
  EXPECT_EQ(section_vertex(f.hs), f.hs.index("ss"));
}

TEST(Hybrid, DisturbedRolloutIsDeterministic) {
  const auto& f = fitted();
  DisturbanceSpec d;
  d.continuous = ContinuousKind::kUniformRandom;
  d.bound = 0.01;
  d.seed = 4;
  RolloutOptions ro;
  ro.sample_dt = 0.01;
  ClosedLoop a(f.hs, f.model, f.cfg, d, ro), b(f.hs, f.model, f.cfg, d, ro);
  const auto ta = a.execute(section_vertex(f.hs), f.fit.gait.x_star, true, 2, true);
  const auto tb = b.execute(section_vertex(f.hs), f.fit.gait.x_star, true, 2, true);
  ASSERT_EQ(ta.samples.size(), tb.samples.size());
  EXPECT_EQ(ta.steps.back().x_guard.stacked(), tb.steps.back().x_guard.stacked());
  EXPECT_GT(d_norm_max(ta), 0);
  EXPECT_LE(d_norm_max(ta), 0.01 + 1e-12);
}

TEST(Bench, ClockSweepNeedsTimeBasedController) {
  const auto& f = fitted();
  EXPECT_THROW(clock_scale_sweep(f.hs, f.model, f.cfg, f.fit.gait.x_star, {1.0}), ConfigError);
  ControllerConfig t = f.cfg;
  t.kind = ControllerKind::kFblinTime;
  EXPECT_THROW(clock_scale_sweep(f.hs, f.model, t, f.fit.gait.x_star, {}), ConfigError);
}

TEST(Chain, PdRegulationAndStrictCertificate) {
  const RobotModel m = make_chain_model();
  ChainRunOptions o;
  o.t_end = 3.0;
  const ChainTrace tr = simulate_chain_pd(m, 3000, 30, random_chain_start(5, 1), Vec::Zero(5), o);
  EXPECT_LT(tr.steady_error, 0.01);
  EXPECT_GT(tr.d_min_tail, 0);
  const double bound = strict_lyapunov_pd_check(m, tr, 3000, 30, 0).kappa0_bound;
  EXPECT_GT(bound, 0);
  EXPECT_TRUE(strict_lyapunov_pd_check(m, tr, 3000, 30, bound).pass);
  EXPECT_GT(strict_lyapunov_pd_check(m, tr, 3000, 30, 10 * bound).positivity_failures, 0);
}

TEST(Chain, UnderactuatedModelRejected) {
  EXPECT_THROW(simulate_chain_pd(fitted().model, 1, 1, Vec::Zero(9), Vec::Zero(9)), Underactuated);
}

TEST(Chain, SteadyDeviationFallsAlongGainRay) {
  const RobotModel m = make_chain_model();
  ChainRunOptions o;
  o.t_end = 3.0;
  const GainRay ray = gain_ray(m, 3000, 30, {2, 0.5, 1}, {random_chain_start(5, 2)}, o);
  ASSERT_EQ(ray.points.size(), 3u);
  EXPECT_EQ(ray.points.front().scale, 0.5);
  EXPECT_TRUE(ray.decreasing);
  // Steady error, and with it the tail deviation, scales like 1/kp.
  EXPECT_NEAR(ray.points[0].d_max_tail / ray.points[2].d_max_tail, 4.0, 0.4);
}

TEST(Gait, RefitReproducesShippedArtifact) {
  const GaitArtifact stored =
      json_gait(Json::parse(read_file(std::string(ISSWALK_SOURCE_DIR) + "/configs/gait.json")));
  const GaitArtifact& g = fitted().fit.gait;
  EXPECT_LT((g.x_star.stacked() - stored.x_star.stacked()).norm(), 1e-6);
  EXPECT_LT((g.alpha_ss - stored.alpha_ss).norm(), 1e-6);
  EXPECT_LT((g.alpha_ds - stored.alpha_ds).norm(), 1e-6);
  EXPECT_NEAR(g.spectral_radius, stored.spectral_radius, 1e-6);
  EXPECT_LT(std::abs(g.invariance_residual - stored.invariance_residual), 1e-6);
}

namespace {

/// Samples along a short undisturbed linearizing run, both domains.
std::vector<Sample> fblin_samples() {
  const auto& f = fitted();
  RolloutOptions ro;
  ro.sample_dt = 0.05;
  std::mt19937_64 r(8);
  const GuardChart chart = make_guard_chart(f.hs, f.model, f.fit.gait.x_star);
  const State x0 = radial_perturbation(chart, f.model, f.fit.gait.x_star, 0.02, r);
  ClosedLoop cl(f.hs, f.model, f.cfg, {}, ro);
  return cl.execute(section_vertex(f.hs), x0, true, 1, true).samples;
}

}  // namespace

TEST(Control, LinearizingLawImposesOutputDynamics) {
  const auto& f = fitted();
  const double e = f.cfg.epsilon;
  int checked = 0;
  for (const Sample& s : fblin_samples()) {
    const Domain& dom = f.hs.domains[s.vertex];
    const State x{s.q, s.qdot};
    const ConstrainedTerms t = constrained_terms(f.model, x.q, x.qdot, dom.cs);
    const Vec u = fblin(dom.spec, x, t, e);
    const LieDerivatives L = lie_derivatives(dom.spec, x, t);
    Vec ua(dom.spec.m_active());
    for (int j = 0; j < ua.size(); ++j) ua[j] = u[dom.spec.active_actuators[j]];
    const Vec r1 = L.Lf_y1 + L.Lg_y1 * ua + e * L.eta.y1;
    const Vec r2 = L.Lf2_y2 + L.LgLf_y2 * ua + 2 * e * L.eta.y2dot + e * e * L.eta.y2;
    const double scale = std::max(1.0, L.Lf2_y2.norm());
    EXPECT_LT(r1.norm() / scale, 1e-8);
    EXPECT_LT(r2.norm() / scale, 1e-8);
    ++checked;
  }
  EXPECT_GT(checked, 5);
}

TEST(Control, OutputErrorLinearizationMatchesA2) {
  const auto& f = fitted();
  const double e = f.cfg.epsilon;
  std::mt19937_64 r(3);
  std::normal_distribution<double> n01;
  const auto samples = fblin_samples();
  for (size_t k = 0; k < samples.size(); k += 4) {
    const Sample& s = samples[k];
    const Domain& dom = f.hs.domains[s.vertex];
    // x -> (eta2, d/dt eta2) under the linearizing law.
    auto field = [&](const State& x) {
      const ConstrainedTerms t = constrained_terms(f.model, x.q, x.qdot, dom.cs);
      const Vec u = fblin(dom.spec, x, t, e);
      const LieDerivatives L = lie_derivatives(dom.spec, x, t);
      Vec ua(dom.spec.m_active());
      for (int j = 0; j < ua.size(); ++j) ua[j] = u[dom.spec.active_actuators[j]];
      Vec rate(2 * dom.spec.k2());
      rate << L.eta.y2dot, L.Lf2_y2 + L.LgLf_y2 * ua;
      return std::make_pair(L.eta.eta2(), rate);
    };
    Vec v(2 * s.q.size());
    for (auto& c : v) c = n01(r);
    const double h = 1e-6;
    const Vec xs = State{s.q, s.qdot}.stacked();
    const auto p = field(State::from_stacked(xs + h * v)), m = field(State::from_stacked(xs - h * v));
    const Vec d_eta = (p.first - m.first) / (2 * h), d_rate = (p.second - m.second) / (2 * h);
    const Mat A2 = output_error_matrix(dom.spec.k2(), e);
    EXPECT_LT((d_rate - A2 * d_eta).norm(), 1e-5 * std::max(1.0, d_rate.norm()));
  }
}

TEST(Control, ZeroPdGainsGiveZeroTorque) {
  const auto& f = fitted();
  const Domain& dom = f.hs.domains[f.hs.index("ss")];
  PdGains g;
  g.kp = Vec::Zero(f.model.m());
  g.kd = Vec::Zero(f.model.m());
  const State x{f.fit.gait.x_star.q.array() + 0.1, f.fit.gait.x_star.qdot.array() - 0.3};
  const PdReference ref{f.fit.gait.x_star.q, f.fit.gait.x_star.qdot};
  EXPECT_EQ(pd_law(f.model, dom.spec, g, x, ref), Vec::Zero(f.model.m()));
}

TEST(Hybrid, ReturnMapComposesLikeExecution) {
  const auto& f = fitted();
  std::mt19937_64 r(6);
  const GuardChart chart = make_guard_chart(f.hs, f.model, f.fit.gait.x_star);
  const State x0 = radial_perturbation(chart, f.model, f.fit.gait.x_star, 1e-2, r);
  const State pp = poincare(f.hs, f.model, f.cfg, {}, poincare(f.hs, f.model, f.cfg, {}, x0));
  ClosedLoop cl(f.hs, f.model, f.cfg);
  const auto secs = cl.execute(section_vertex(f.hs), x0, true, 2).section_states(section_vertex(f.hs));
  ASSERT_FALSE(secs.empty());
  EXPECT_LT((pp.stacked() - secs.back().stacked()).norm(), 1e-9);
}

TEST(Control, OutputBoundScalesAtMostLinearlyInDisturbance) {
  const auto& f = fitted();
  RolloutOptions ro;
  ro.sample_dt = 0.005;
  std::vector<double> mags = {0.002, 0.004, 0.008, 0.016, 0.032}, bounds;
  for (double m : mags) {
    DisturbanceSpec d;
    d.continuous = ContinuousKind::kUniformRandom;
    d.bound = m;
    d.seed = 21;
    ClosedLoop cl(f.hs, f.model, f.cfg, d, ro);
    const auto tr = cl.execute(section_vertex(f.hs), f.fit.gait.x_star, true, 3, true);
    ASSERT_TRUE(tr.failure.empty()) << tr.failure;
    double b = 0;
    for (const auto& s : tr.samples)
      if (s.step >= 2) b = std::max(b, s.eta2().norm());
    bounds.push_back(b);
  }
  for (size_t i = 1; i < mags.size(); ++i) {
    EXPECT_GT(bounds[i], 0);
    EXPECT_LE(bounds[i] / bounds[0], 1.1 * mags[i] / mags[0]) << mags[i];
  }
}
