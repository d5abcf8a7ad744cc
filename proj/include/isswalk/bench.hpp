#pragma once

// Clock-scale sweep for time-based walking: each run starts on the guard
// state x0 and is scored by its distance to the nominal-clock run's final
// section state.

#include <cmath>
#include <string>
#include <vector>

#include "isswalk/analysis.hpp"

namespace isswalk {

struct ClockRun {
  double clock_scale = 1.0;
  int cycles = 0;
  std::string failure;
  double bound = 0;     // max section distance to the reference over the tail
  double d_max = 0;     // max |d|_inf over the tail samples
  double d3_max = 0;    // max |d3|_inf over the tail samples
  double eta2_max = 0;  // max |eta2| over the whole run
  ExecutionTrace trace;
};

struct ClockSweep {
  std::vector<ClockRun> runs;  // in the order given
  State reference;
  bool complete = false;
  bool monotone = false;
};

struct ClockSweepOptions {
  int steps = 50;
  double tail_fraction = 0.4;
  bool keep_traces = false;
};

/// One run per clock scale. The scale closest to 1 runs first and supplies
/// the reference; the bound must grow with |scale - 1|.
inline ClockSweep clock_scale_sweep(const HybridSystem& hs, const RobotModel& model,
                                    const ControllerConfig& cfg, const State& x0,
                                    const std::vector<double>& scales,
                                    const ClockSweepOptions& o = {},
                                    const RolloutOptions& ropt = {},
                                    const DisturbanceSpec& base = {}) {
  if (scales.empty()) throw ConfigError("clock sweep needs at least one scale");
  if (!is_time_based(cfg.kind)) throw ConfigError("clock sweep needs a time-based controller");
  const int sec = section_vertex(hs);
  std::vector<size_t> order(scales.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return std::abs(scales[a] - 1) + 1e-9 < std::abs(scales[b] - 1);
  });

  ClockSweep out;
  out.runs.resize(scales.size());
  out.complete = true;
  bool have_ref = false;
  for (size_t idx : order) {
    ClockRun& r = out.runs[idx];
    r.clock_scale = scales[idx];
    DisturbanceSpec ds = base;
    ds.clock_scale = scales[idx];
    ClosedLoop cl(hs, model, cfg, ds, ropt);
    ExecutionTrace tr = cl.execute(sec, x0, true, o.steps, true);
    r.cycles = tr.cycles_completed;
    r.failure = tr.failure;
    if (!tr.failure.empty() || r.cycles < o.steps) out.complete = false;
    const std::vector<State> secs = tr.section_states(sec);
    if (!have_ref && !secs.empty()) {
      out.reference = secs.back();
      have_ref = true;
    }
    const int tail_step = static_cast<int>(std::floor((1 - o.tail_fraction) * tr.steps.size()));
    const size_t tail_sec = static_cast<size_t>(std::floor((1 - o.tail_fraction) * secs.size()));
    for (size_t k = tail_sec; k < secs.size(); ++k)
      r.bound = std::max(r.bound, (secs[k].stacked() - out.reference.stacked()).norm());
    for (const auto& s : tr.samples) {
      r.eta2_max = std::max(r.eta2_max, s.eta2().norm());
      if (s.step < tail_step) continue;
      r.d_max = std::max(r.d_max, inf_norm(s.d));
      r.d3_max = std::max(r.d3_max, inf_norm(s.d3));
    }
    if (o.keep_traces) r.trace = std::move(tr);
  }
  out.monotone = out.complete;
  for (size_t a : order)
    for (size_t b : order)
      if (std::abs(scales[a] - 1) + 1e-9 < std::abs(scales[b] - 1) &&
          !(out.runs[a].bound < out.runs[b].bound))
        out.monotone = false;
  return out;
}

/// Largest phase-mismatch deviation |d3|_inf along a trace.
inline double d3_max(const ExecutionTrace& tr) {
  double m = 0;
  for (const auto& s : tr.samples) m = std::max(m, inf_norm(s.d3));
  return m;
}

}  // namespace isswalk
