#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>

#include "isswalk/types.hpp"

namespace isswalk {

struct OdeOptions {
  double rtol = 1e-9;
  double atol = 1e-11;
  double h_init = 1e-3;
  double h_min = 1e-12;
  double h_max = 0.02;
};

/// Dormand-Prince 5(4) with the standard fourth-order continuous extension.
class DormandPrince {
 public:
  using Rhs = std::function<Vec(double, const Vec&)>;

  struct Attempt {
    Vec y1;
    Vec k7;
    double error = 0;  // scaled RMS norm, accept when <= 1
    std::array<Vec, 7> k;
    double t0 = 0, h = 0;
    Vec y0;
  };

  /// One trial step from (t, y) whose derivative is k1.
  static Attempt attempt(const Rhs& f, double t, const Vec& y, const Vec& k1, double h,
                         const OdeOptions& opt, bool want_error = true) {
    static constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
    static constexpr double a21 = 1.0 / 5;
    static constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
    static constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
    static constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                            a54 = -212.0 / 729;
    static constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                            a64 = 49.0 / 176, a65 = -5103.0 / 18656;
    static constexpr double a71 = 35.0 / 384, a73 = 500.0 / 1113, a74 = 125.0 / 192,
                            a75 = -2187.0 / 6784, a76 = 11.0 / 84;
    static constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                            e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;
    Attempt a;
    a.t0 = t;
    a.h = h;
    a.y0 = y;
    auto& k = a.k;
    k[0] = k1;
    k[1] = f(t + c2 * h, y + h * a21 * k[0]);
    k[2] = f(t + c3 * h, y + h * (a31 * k[0] + a32 * k[1]));
    k[3] = f(t + c4 * h, y + h * (a41 * k[0] + a42 * k[1] + a43 * k[2]));
    k[4] = f(t + c5 * h, y + h * (a51 * k[0] + a52 * k[1] + a53 * k[2] + a54 * k[3]));
    k[5] = f(t + h, y + h * (a61 * k[0] + a62 * k[1] + a63 * k[2] + a64 * k[3] + a65 * k[4]));
    a.y1 = y + h * (a71 * k[0] + a73 * k[2] + a74 * k[3] + a75 * k[4] + a76 * k[5]);
    if (!want_error) return a;
    k[6] = f(t + h, a.y1);
    a.k7 = k[6];
    const Vec err = h * (e1 * k[0] + e3 * k[2] + e4 * k[3] + e5 * k[4] + e6 * k[5] + e7 * k[6]);
    const Vec scale =
        (opt.atol + opt.rtol * y.cwiseAbs().cwiseMax(a.y1.cwiseAbs()).array()).matrix();
    a.error = std::sqrt((err.array() / scale.array()).square().mean());
    if (!std::isfinite(a.error)) a.error = std::numeric_limits<double>::infinity();
    return a;
  }

  /// Continuous extension on an accepted attempt, theta in [0, 1].
  static Vec dense(const Attempt& a, double theta) {
    static constexpr double d1 = -12715105075.0 / 11282082432.0,
                            d3 = 87487479700.0 / 32700410799.0,
                            d4 = -10690763975.0 / 1880347072.0,
                            d5 = 701980252875.0 / 199316789632.0,
                            d6 = -1453857185.0 / 822651844.0, d7 = 69997945.0 / 29380423.0;
    const auto& k = a.k;
    const Vec r2 = a.y1 - a.y0;
    const Vec r3 = a.h * k[0] - r2;
    const Vec r4 = r2 - a.h * k[6] - r3;
    const Vec r5 = a.h * (d1 * k[0] + d3 * k[2] + d4 * k[3] + d5 * k[4] + d6 * k[5] + d7 * k[6]);
    const double s = 1.0 - theta;
    return a.y0 + theta * (r2 + s * (r3 + theta * (r4 + s * r5)));
  }

  static double next_step(double h, double error) {
    const double fac = error > 0 ? 0.9 * std::pow(error, -0.2) : 5.0;
    return h * std::clamp(fac, 0.2, 5.0);
  }
};

}  // namespace isswalk
