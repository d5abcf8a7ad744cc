#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace isswalk {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Vec2 = Eigen::Vector2d;

/// Base class for the named numerical failures. `name()` is the stable
/// identifier printed by the CLI and written into traces.
class Error : public std::runtime_error {
 public:
  Error(std::string name, const std::string& what)
      : std::runtime_error(name + ": " + what), name_(std::move(name)), message_(what) {}
  const std::string& name() const { return name_; }
  const std::string& message() const { return message_; }

 private:
  std::string name_;
  std::string message_;
};

#define ISSWALK_ERROR(Type)                                   \
  class Type : public Error {                                 \
   public:                                                    \
    explicit Type(const std::string& what) : Error(#Type, what) {} \
  };

ISSWALK_ERROR(DimensionMismatch)
ISSWALK_ERROR(InvalidModel)
ISSWALK_ERROR(SingularConstraintBlock)
ISSWALK_ERROR(DecouplingSingular)
ISSWALK_ERROR(ChartSingular)
ISSWALK_ERROR(NoImpact)
ISSWALK_ERROR(IntegrationBlowup)
ISSWALK_ERROR(MapUndefined)
ISSWALK_ERROR(JacobianIncomplete)
ISSWALK_ERROR(NewtonDiverged)
ISSWALK_ERROR(FitFailed)
ISSWALK_ERROR(NotHurwitz)
ISSWALK_ERROR(InsufficientSampling)
ISSWALK_ERROR(GaitUnstable)
ISSWALK_ERROR(Underactuated)
ISSWALK_ERROR(SchemaMismatch)
ISSWALK_ERROR(ConfigError)

#undef ISSWALK_ERROR

/// Non-fatal conditions accumulated alongside results.
enum Flag : std::uint32_t {
  kFlagNone = 0,
  kPhaseOutOfRange = 1u << 0,
  kIkDiverged = 1u << 1,
  kNegativeNormalImpulse = 1u << 2,
  kPhaseClamped = 1u << 3,
  kTorqueSaturated = 1u << 4,
  kStanceForceNegative = 1u << 5,
};

inline std::string flag_names(std::uint32_t flags) {
  static const std::pair<Flag, const char*> kNames[] = {
      {kPhaseOutOfRange, "PhaseOutOfRange"},
      {kIkDiverged, "IkDiverged"},
      {kNegativeNormalImpulse, "NegativeNormalImpulse"},
      {kPhaseClamped, "PhaseClamped"},
      {kTorqueSaturated, "TorqueSaturated"},
      {kStanceForceNegative, "StanceForceNegative"},
  };
  std::string out;
  for (const auto& [f, n] : kNames) {
    if (flags & f) {
      if (!out.empty()) out += '|';
      out += n;
    }
  }
  return out;
}

struct State {
  Vec q;
  Vec qdot;

  Vec stacked() const {
    Vec x(q.size() + qdot.size());
    x << q, qdot;
    return x;
  }
  static State from_stacked(const Vec& x) {
    const Eigen::Index n = x.size() / 2;
    return State{x.head(n), x.tail(n)};
  }
};

inline bool all_finite(const Vec& v) { return v.allFinite(); }

}  // namespace isswalk
