#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "isswalk/types.hpp"

namespace isswalk {

/// One rigid link of a planar tree. The absolute angle of a link is the
/// parent's absolute angle plus its joint coordinate plus `angle_offset`.
/// Angles are measured counter-clockwise from the downward vertical, so a
/// link at angle phi points along (sin phi, -cos phi).
struct Link {
  std::string name;
  int parent = -1;          // -1 for the root link
  double attach = 0.0;      // distance along the parent where this link starts
  double angle_offset = 0.0;
  double mass = 1.0;
  double inertia = 0.0;     // about the COM
  double length = 1.0;
  double com_offset = 0.5;  // along the link from its proximal end
};

/// A named point fixed on a link, `offset` metres from its proximal end.
struct ContactFrame {
  std::string name;
  int link = 0;
  double offset = 0.0;
};

enum class BaseKind { kPinned, kFloating };

inline Vec2 link_dir(double phi) { return Vec2(std::sin(phi), -std::cos(phi)); }
inline Vec2 link_dir_perp(double phi) { return Vec2(std::cos(phi), std::sin(phi)); }

/// Absolute link angles and rates for one state, reused by every kinematic
/// query on that state.
struct LinkKinematics {
  std::vector<double> phi;
  std::vector<double> phidot;
};

/// Planar rigid-body tree. Coordinates: for a floating base q = (x, z, pitch,
/// joints...) where (x, z) is the proximal point of the root link; for a
/// pinned base the root joint sits at the origin and q starts with its angle.
class RobotModel {
 public:
  RobotModel() = default;

  RobotModel(std::vector<Link> links, BaseKind base,
             std::vector<int> actuated_coords,
             std::vector<ContactFrame> frames, double gravity)
      : links_(std::move(links)),
        base_(base),
        actuated_(std::move(actuated_coords)),
        frames_(std::move(frames)),
        gravity_(gravity) {
    validate_and_index();
  }

  int n() const { return n_; }
  int m() const { return static_cast<int>(actuated_.size()); }
  BaseKind base() const { return base_; }
  int base_translation_dofs() const { return base_ == BaseKind::kFloating ? 2 : 0; }
  double gravity() const { return gravity_; }
  const std::vector<Link>& links() const { return links_; }
  const std::vector<ContactFrame>& frames() const { return frames_; }
  const std::vector<int>& actuated_coords() const { return actuated_; }
  const Mat& actuation_matrix() const { return B_; }

  /// Coordinate index of the joint that drives link i.
  int coord_of_link(int i) const { return link_coord_[i]; }
  /// Coordinates whose sum (plus offsets) gives the absolute angle of link i.
  const std::vector<int>& angle_coords(int i) const { return angle_coords_[i]; }

  int frame_index(const std::string& name) const {
    for (size_t i = 0; i < frames_.size(); ++i)
      if (frames_[i].name == name) return static_cast<int>(i);
    throw InvalidModel("unknown contact frame '" + name + "'");
  }

  double total_mass() const {
    double m = 0;
    for (const auto& l : links_) m += l.mass;
    return m;
  }

  /// Copy with each link mass (and inertia) multiplied by `scale[i]`.
  RobotModel mass_scaled(const std::vector<double>& scale) const {
    if (scale.size() != links_.size())
      throw DimensionMismatch("mass_scale needs one entry per link");
    RobotModel out = *this;
    for (size_t i = 0; i < links_.size(); ++i) {
      out.links_[i].mass *= scale[i];
      out.links_[i].inertia *= scale[i];
    }
    return out;
  }

  void check_q(const Vec& q) const {
    if (q.size() != n_)
      throw DimensionMismatch("expected q of size " + std::to_string(n_) +
                              ", got " + std::to_string(q.size()));
  }

  LinkKinematics kinematics(const Vec& q, const Vec& qdot) const {
    LinkKinematics k;
    k.phi.resize(links_.size());
    k.phidot.resize(links_.size());
    for (size_t i = 0; i < links_.size(); ++i) {
      const int c = link_coord_[i];
      const int p = links_[i].parent;
      const double base_phi = p < 0 ? 0.0 : k.phi[p];
      const double base_rate = p < 0 ? 0.0 : k.phidot[p];
      k.phi[i] = base_phi + q[c] + links_[i].angle_offset;
      k.phidot[i] = base_rate + (qdot.size() ? qdot[c] : 0.0);
    }
    return k;
  }
  LinkKinematics kinematics(const Vec& q) const { return kinematics(q, Vec()); }

  /// Position of a point on `link` at distance `s` from its proximal end.
  Vec2 point_position(const Vec& q, const LinkKinematics& k, int link, double s) const {
    Vec2 p = root_position(q);
    for_each_segment(link, s, [&](int j, double len) { p += len * link_dir(k.phi[j]); });
    return p;
  }

  /// Velocity Jacobian (2 x n) of a point on `link`.
  void point_jacobian(const LinkKinematics& k, int link, double s, Eigen::Ref<Mat> J) const {
    J.setZero();
    if (base_ == BaseKind::kFloating) {
      J(0, 0) = 1.0;
      J(1, 1) = 1.0;
    }
    for_each_segment(link, s, [&](int j, double len) {
      const Vec2 d = len * link_dir_perp(k.phi[j]);
      for (int c : angle_coords_[j]) J.col(c) += d;
    });
  }

  /// Jdot * qdot for a point, i.e. the velocity-product part of its acceleration.
  Vec2 point_bias_acceleration(const LinkKinematics& k, int link, double s) const {
    Vec2 a = Vec2::Zero();
    for_each_segment(link, s, [&](int j, double len) {
      a -= len * k.phidot[j] * k.phidot[j] * link_dir(k.phi[j]);
    });
    return a;
  }

  /// Time derivative of the point Jacobian along qdot.
  void point_jacobian_dot(const LinkKinematics& k, int link, double s, Eigen::Ref<Mat> Jd) const {
    Jd.setZero();
    for_each_segment(link, s, [&](int j, double len) {
      const Vec2 d = -len * k.phidot[j] * link_dir(k.phi[j]);
      for (int c : angle_coords_[j]) Jd.col(c) += d;
    });
  }

  /// Partial derivative of the point Jacobian with respect to q[coord].
  void point_jacobian_partial(const LinkKinematics& k, int link, double s, int coord,
                              Eigen::Ref<Mat> dJ) const {
    dJ.setZero();
    for_each_segment(link, s, [&](int j, double len) {
      if (!depends_on(j, coord)) return;
      const Vec2 d = -len * link_dir(k.phi[j]);
      for (int c : angle_coords_[j]) dJ.col(c) += d;
    });
  }

  /// Row vector mapping qdot to the angular rate of `link`.
  Eigen::RowVectorXd angular_jacobian(int link) const {
    Eigen::RowVectorXd w = Eigen::RowVectorXd::Zero(n_);
    for (int c : angle_coords_[link]) w[c] = 1.0;
    return w;
  }

  double link_angle(const LinkKinematics& k, int link) const { return k.phi[link]; }

  bool depends_on(int link, int coord) const {
    for (int c : angle_coords_[link])
      if (c == coord) return true;
    return false;
  }

 private:
  Vec2 root_position(const Vec& q) const {
    return base_ == BaseKind::kFloating ? Vec2(q[0], q[1]) : Vec2::Zero();
  }

  // Visits (ancestor link, segment length) pairs from the root to the point.
  template <typename F>
  void for_each_segment(int link, double s, F&& f) const {
    const auto& chain = chains_[link];
    for (size_t a = 0; a + 1 < chain.size(); ++a) {
      const double len = links_[chain[a + 1]].attach;
      if (len != 0.0) f(chain[a], len);
    }
    if (s != 0.0) f(link, s);
  }

  void validate_and_index() {
    if (links_.empty()) throw InvalidModel("model has no links");
    const int base_dofs = base_ == BaseKind::kFloating ? 3 : 1;
    n_ = base_dofs + static_cast<int>(links_.size()) - 1;
    link_coord_.resize(links_.size());
    angle_coords_.resize(links_.size());
    chains_.resize(links_.size());
    for (size_t i = 0; i < links_.size(); ++i) {
      const Link& l = links_[i];
      if (!(l.mass > 0)) throw InvalidModel("link '" + l.name + "' mass must be > 0");
      if (!(l.inertia >= 0)) throw InvalidModel("link '" + l.name + "' inertia must be >= 0");
      if (!(l.length > 0)) throw InvalidModel("link '" + l.name + "' length must be > 0");
      if (i == 0 && l.parent != -1) throw InvalidModel("first link must be the root");
      if (i > 0 && (l.parent < 0 || l.parent >= static_cast<int>(i)))
        throw InvalidModel("link '" + l.name + "' parent must precede it");
      link_coord_[i] = i == 0 ? base_dofs - 1 : base_dofs + static_cast<int>(i) - 1;
      if (l.parent >= 0) {
        angle_coords_[i] = angle_coords_[l.parent];
        chains_[i] = chains_[l.parent];
      }
      angle_coords_[i].push_back(link_coord_[i]);
      chains_[i].push_back(static_cast<int>(i));
    }
    for (const auto& f : frames_)
      if (f.link < 0 || f.link >= static_cast<int>(links_.size()))
        throw InvalidModel("contact frame '" + f.name + "' has invalid link");
    B_ = Mat::Zero(n_, m());
    for (int j = 0; j < m(); ++j) {
      const int c = actuated_[j];
      if (c < 0 || c >= n_) throw InvalidModel("actuated coordinate out of range");
      B_(c, j) = 1.0;
    }
    Eigen::FullPivLU<Mat> lu(B_);
    if (m() > 0 && lu.rank() != m())
      throw InvalidModel("actuation matrix must have full column rank");
  }

  std::vector<Link> links_;
  BaseKind base_ = BaseKind::kPinned;
  std::vector<int> actuated_;
  std::vector<ContactFrame> frames_;
  double gravity_ = 9.81;
  int n_ = 0;
  Mat B_;
  std::vector<int> link_coord_;
  std::vector<std::vector<int>> angle_coords_;
  std::vector<std::vector<int>> chains_;
};

}  // namespace isswalk
