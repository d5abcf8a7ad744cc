#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "isswalk/hybrid.hpp"

namespace isswalk {

/// Planar seven-link walker: torso on a floating hip, thigh, shank and flat
/// foot per leg. Coordinates (x, z, pitch, hip_st, knee_st, ankle_st, hip_sw,
/// knee_sw, ankle_sw); all six joints are actuated.
struct BipedParams {
  double torso_mass = 4.0, torso_length = 0.5, torso_com = 0.2;
  double thigh_mass = 1.5, thigh_length = 0.4, thigh_com = 0.17;
  double shank_mass = 1.0, shank_length = 0.4, shank_com = 0.17;
  double foot_mass = 0.3, foot_length = 0.15, foot_com = 0.05;
  double gravity = 9.81;
};

namespace biped {
enum Coord { kX = 0, kZ, kPitch, kHipSt, kKneeSt, kAnkleSt, kHipSw, kKneeSw, kAnkleSw };
enum Actuator { kUHipSt = 0, kUKneeSt, kUAnkleSt, kUHipSw, kUKneeSw, kUAnkleSw };
inline constexpr int kN = 9;
}  // namespace biped

inline Link rod(std::string name, int parent, double attach, double offset, double mass,
                double length, double com) {
  return Link{std::move(name), parent, attach, offset, mass, mass * length * length / 12.0,
              length, com};
}

inline RobotModel make_biped_model(const BipedParams& p = {}) {
  std::vector<Link> links;
  links.push_back(rod("torso", -1, 0.0, M_PI, p.torso_mass, p.torso_length, p.torso_com));
  for (int leg = 0; leg < 2; ++leg) {
    const std::string tag = leg == 0 ? "_st" : "_sw";
    const int base = static_cast<int>(links.size());
    links.push_back(rod("thigh" + tag, 0, 0.0, -M_PI, p.thigh_mass, p.thigh_length, p.thigh_com));
    links.push_back(rod("shank" + tag, base, p.thigh_length, 0.0, p.shank_mass, p.shank_length,
                        p.shank_com));
    links.push_back(rod("foot" + tag, base + 1, p.shank_length, M_PI / 2, p.foot_mass,
                        p.foot_length, p.foot_com));
  }
  std::vector<ContactFrame> frames = {{"stance_foot", 3, 0.0}, {"swing_foot", 6, 0.0}};
  return RobotModel(links, BaseKind::kFloating, {3, 4, 5, 6, 7, 8}, frames, p.gravity);
}

/// Linear forms used by the walking outputs.
namespace biped {
inline Eigen::RowVectorXd unit(int i) {
  Eigen::RowVectorXd r = Eigen::RowVectorXd::Zero(kN);
  r[i] = 1.0;
  return r;
}
inline Eigen::RowVectorXd swing_thigh() { return unit(kPitch) + unit(kHipSw); }
inline Eigen::RowVectorXd swing_foot_pitch() {
  return unit(kPitch) + unit(kHipSw) + unit(kKneeSw) + unit(kAnkleSw);
}
}  // namespace biped

/// Double support (vertex 0) and single support (vertex 1) for the biped.
/// Bezier coefficients and phase constants are filled in by the gait design.
inline HybridSystem make_biped_system(const RobotModel& model, double v_d) {
  using namespace biped;
  const int st = model.frame_index("stance_foot");
  const int sw = model.frame_index("swing_foot");
  HybridSystem hs;

  Domain ds;
  ds.name = "ds";
  ds.cs.entries = {{st, kDirAll}, {sw, kDirAll}};
  ds.spec.domain = "ds";
  ds.spec.c1 = unit(kX);
  ds.spec.c1_offset = Vec::Constant(1, v_d);
  ds.spec.c2.resize(2, kN);
  ds.spec.c2 << unit(kZ), unit(kPitch);
  ds.spec.alpha = Mat::Zero(2, 6);
  ds.spec.phase.coeffs = unit(kX).transpose();
  ds.spec.phase.v_d = v_d;
  ds.spec.active_actuators = {kUHipSt, kUKneeSt, kUKneeSw};
  ds.guard = {GuardKind::kNormalForce, sw};

  Domain ss;
  ss.name = "ss";
  ss.cs.entries = {{st, kDirAll}};
  ss.spec.domain = "ss";
  ss.spec.c1 = unit(kX);
  ss.spec.c1_offset = Vec::Constant(1, v_d);
  ss.spec.c2.resize(5, kN);
  ss.spec.c2 << unit(kZ), unit(kPitch), swing_thigh(), unit(kKneeSw), swing_foot_pitch();
  ss.spec.alpha = Mat::Zero(5, 6);
  ss.spec.phase.coeffs = unit(kX).transpose();
  ss.spec.phase.v_d = v_d;
  ss.spec.active_actuators = {kUHipSt, kUKneeSt, kUAnkleSt, kUHipSw, kUKneeSw, kUAnkleSw};
  ss.guard = {GuardKind::kFrameHeight, sw};

  hs.domains = {ds, ss};
  Edge liftoff;
  liftoff.kind = ResetKind::kIdentityLiftoff;
  liftoff.source = 0;
  liftoff.target = 1;
  Edge impact;
  impact.kind = ResetKind::kImpactRelabel;
  impact.source = 1;
  impact.target = 0;
  impact.relabel.swap = {{kHipSt, kHipSw}, {kKneeSt, kKneeSw}, {kAnkleSt, kAnkleSw}};
  impact.relabel.translate_frame = sw;
  impact.relabel.translate_coord = kX;
  hs.edges = {liftoff, impact};
  return hs;
}

/// Closed-form leg placement: joint angles (hip, knee, ankle) that put the
/// ankle of a leg hanging from hip (hx, hz) with torso pitch at (ax, az) with
/// absolute foot pitch `foot_pitch`. Knee bends backward (negative angle).
struct LegAngles {
  double hip = 0, knee = 0, ankle = 0;
  bool reachable = true;
};

inline LegAngles leg_ik(const BipedParams& p, double pitch, double hx, double hz, double ax,
                        double az, double foot_pitch) {
  const double l1 = p.thigh_length, l2 = p.shank_length;
  const double dx = ax - hx, dz = az - hz;
  const double r2 = dx * dx + dz * dz;
  double c = (r2 - l1 * l1 - l2 * l2) / (2 * l1 * l2);
  LegAngles out;
  if (c > 1.0 || c < -1.0) {
    out.reachable = false;
    c = std::clamp(c, -1.0, 1.0);
  }
  out.knee = -std::acos(c);
  const double psi = std::atan2(dx, -dz);
  const double phi1 = psi - std::atan2(l2 * std::sin(out.knee), l1 + l2 * std::cos(out.knee));
  out.hip = phi1 - pitch;
  out.ankle = foot_pitch - phi1 - out.knee;
  return out;
}

}  // namespace isswalk
