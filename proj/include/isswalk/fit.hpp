#pragma once

#include "isswalk/analysis.hpp"
#include "isswalk/gait.hpp"

namespace isswalk {

struct GaitFitResult {
  GaitArtifact gait;
  GaitDesign design;
  LinearizedPoincare linearization;
  int newton_iterations = 0;
};

/// Designs the gait, refines the guard state to a fixed point of the closed
/// loop return map, and linearizes there.
inline GaitFitResult gait_fit(const RobotModel& model, const GaitSeed& seed, double epsilon,
                              const RolloutOptions& opt = {}) {
  const HybridSystem hs_template = make_biped_system(model, seed.v_d);
  GaitFitResult out;
  out.design = solve_gait_design(model, hs_template, seed);
  if (!out.design.feasible) throw FitFailed("designed gait violates a contact or clearance check");
  out.gait = out.design.gait;
  out.gait.epsilon = epsilon;
  HybridSystem hs = hs_template;
  apply_gait(hs, out.gait);
  ControllerConfig cfg;
  cfg.epsilon = epsilon;
  FixedPointResult fp;
  try {
    fp = find_fixed_point(hs, model, cfg, out.gait.x_star, 1e-8, 50, 1e-6, opt);
  } catch (const Error& e) {
    throw FitFailed(std::string("fixed point: ") + e.what());
  }
  out.gait.x_star = fp.x;
  out.gait.periodicity_residual = fp.residual;
  out.newton_iterations = fp.iterations;
  out.linearization = linearized_poincare(hs, model, cfg, fp.x, 1e-6, opt);
  out.gait.spectral_radius = out.linearization.spectral_radius;
  return out;
}

}  // namespace isswalk
