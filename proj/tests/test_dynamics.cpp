#include <gtest/gtest.h>

#include <random>

#include "isswalk/biped.hpp"
#include "isswalk/chain.hpp"
#include "isswalk/control.hpp"
#include "isswalk/disturbance.hpp"
#include "isswalk/outputs.hpp"

using namespace isswalk;

namespace {

Vec random_vec(std::mt19937_64& r, int n, double a) {
  std::uniform_real_distribution<double> u(-a, a);
  Vec v(n);
  for (auto& c : v) c = u(r);
  return v;
}

}  // namespace

TEST(Bezier, DerivativesMatchFiniteDifferences) {
  Eigen::RowVectorXd a(6);
  a << 0.1, -0.4, 0.7, 0.2, -0.3, 0.5;
  const double h = 1e-6;
  for (double s : {0.1, 0.37, 0.5, 0.92}) {
    const auto v = bezier_eval(a, s);
    const auto p = bezier_eval(a, s + h), m = bezier_eval(a, s - h);
    EXPECT_NEAR(v.d1, (p.value - m.value) / (2 * h), 1e-7);
    EXPECT_NEAR(v.d2, (p.d1 - m.d1) / (2 * h), 1e-6);
    EXPECT_FALSE(v.clamped);
  }
  EXPECT_DOUBLE_EQ(bezier_eval(a, 0).value, a[0]);
  EXPECT_DOUBLE_EQ(bezier_eval(a, 1).value, a[5]);
}

TEST(Bezier, LinearContinuationOutsideUnitInterval) {
  Eigen::RowVectorXd a(4);
  a << 0, 1, -1, 2;
  const auto end = bezier_eval(a, 1.0);
  const auto v = bezier_eval(a, 1.2);
  EXPECT_TRUE(v.clamped);
  EXPECT_NEAR(v.value, end.value + 0.2 * end.d1, 1e-14);
  EXPECT_EQ(v.d2, 0.0);
}

TEST(Integrator, ExponentialDecayToTolerance) {
  DormandPrince::Rhs f = [](double, const Vec& y) { return Vec(-2.0 * y); };
  OdeOptions o;
  o.rtol = 1e-10;
  o.atol = 1e-12;
  Vec y = Vec::Ones(1);
  double t = 0, h = 1e-3;
  Vec k1 = f(t, y);
  while (t < 1.0 - 1e-15) {
    h = std::min(h, 1.0 - t);
    const auto a = DormandPrince::attempt(f, t, y, k1, h, o);
    if (a.error <= 1) {
      t += h;
      y = a.y1;
      k1 = a.k7;
    }
    h = DormandPrince::next_step(h, a.error);
  }
  EXPECT_NEAR(y[0], std::exp(-2.0), 1e-9);
}

TEST(Dynamics, SingleLinkPendulumClosedForm) {
  ChainParams p;
  p.links = 1;
  p.offsets = {0.0};
  const RobotModel m = make_chain_model(p);
  Vec q(1), qd(1);
  q << 0.3;
  qd << 1.1;
  const double I = p.mass * p.length * p.length / 12 + p.mass * p.com * p.com;
  EXPECT_NEAR(mass_matrix(m, q)(0, 0), I, 1e-14);
  // Hanging link: V = -m g c cos(q).
  EXPECT_NEAR(gravity_vector(m, q)[0], p.mass * p.gravity * p.com * std::sin(0.3), 1e-12);
  EXPECT_NEAR(kinetic_energy(m, q, qd), 0.5 * I * 1.21, 1e-14);
}

TEST(Dynamics, MassMatrixPartialsMatchFiniteDifferences) {
  const RobotModel m = make_biped_model();
  std::mt19937_64 r(4);
  const Vec q = random_vec(r, m.n(), 0.6);
  const auto dD = mass_matrix_partials(m, q);
  const double h = 1e-6;
  for (int j = 0; j < m.n(); ++j) {
    Vec qp = q, qm = q;
    qp[j] += h;
    qm[j] -= h;
    EXPECT_LT(((mass_matrix(m, qp) - mass_matrix(m, qm)) / (2 * h) - dD[j]).norm(), 1e-6) << j;
  }
}

TEST(Dynamics, ImpactIsIdempotent) {
  const RobotModel m = make_biped_model();
  const HybridSystem hs = make_biped_system(m, 0.5);
  const ConstraintSet& cs = hs.domains[hs.index("ds")].cs;
  std::mt19937_64 r(9);
  const Vec q = random_vec(r, m.n(), 0.4), qd = random_vec(r, m.n(), 1.0);
  const ImpactResult once = impact_map(m, q, qd, cs);
  const ImpactResult twice = impact_map(m, q, once.qdot_plus, cs);
  EXPECT_LT((twice.qdot_plus - once.qdot_plus).norm(), 1e-10);
  EXPECT_LT(twice.impulse.norm(), 1e-9);
}

TEST(Dynamics, WrongDimensionThrows) {
  const RobotModel m = make_biped_model();
  EXPECT_THROW(mass_matrix(m, Vec::Zero(3)), DimensionMismatch);
}

TEST(Chain, InvalidParametersThrow) {
  ChainParams p;
  p.offsets = {0.1};
  EXPECT_THROW(make_chain_model(p), InvalidModel);
}

TEST(Disturbance, UniformIsBoundedHeldAndSeeded) {
  DisturbanceSpec s;
  s.continuous = ContinuousKind::kUniformRandom;
  s.bound = 0.3;
  s.hold = 0.1;
  s.seed = 11;
  DisturbanceState a(s.seed), b(s.seed);
  for (double t = 0; t < 2; t += 0.013) {
    const Vec da = sample_continuous(s, t, 6, a);
    EXPECT_LE(da.cwiseAbs().maxCoeff(), 0.3);
    EXPECT_EQ(da, sample_continuous(s, t, 6, b));
  }
  DisturbanceState c(s.seed);
  EXPECT_EQ(sample_continuous(s, 0.01, 6, c), sample_continuous(s, 0.09, 6, c));
  EXPECT_NEAR(next_breakpoint(s, 0.25), 0.3, 1e-12);
}

TEST(Disturbance, ValidateRejectsNegativeBounds) {
  DisturbanceSpec s;
  s.bound = -1;
  EXPECT_THROW(s.validate(), ConfigError);
  s.bound = 0;
  s.clock_scale = 0;
  EXPECT_THROW(s.validate(), ConfigError);
}

TEST(Control, SaturationClipsAndFlags) {
  Vec u(3);
  u << 5, -7, 1;
  std::uint32_t flags = 0;
  const Vec s = saturate(u, 4, &flags);
  EXPECT_EQ(s, Vec((Vec(3) << 4, -4, 1).finished()));
  EXPECT_TRUE(flags & kTorqueSaturated);
  flags = 0;
  saturate(u, 0, &flags);
  EXPECT_EQ(flags, 0u);
}

TEST(Control, KindStringsRoundTrip) {
  for (auto k : {ControllerKind::kFblinState, ControllerKind::kFblinTime, ControllerKind::kPdState,
                 ControllerKind::kPdTime})
    EXPECT_EQ(controller_kind_from_string(to_string(k)), k);
  EXPECT_THROW(controller_kind_from_string("bogus"), ConfigError);
  EXPECT_TRUE(is_time_based(ControllerKind::kPdTime));
  EXPECT_FALSE(is_time_based(ControllerKind::kFblinState));
}
