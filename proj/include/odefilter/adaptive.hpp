#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "odefilter/engine.hpp"

namespace odefilter {

/// Accept/reject controller for the adaptive-time filter. Step sizes scale
/// by sqrt(tolerance/err) because the embedded Euler solver is order 1.
struct StepController {
  double tolerance = 0.1;
  double h_current = 0.0;
  double h_min = 0.0;
  double h_max = 0.0;
  double safety = 0.9;
  double grow_cap = 5.0;
  double shrink_cap = 0.2;

  static constexpr double kErrFloor = 1e-12;
};

enum class StepDecision { Accept, Reject };

/// First-order local truncation error estimate from the delta nodes:
/// (h/2) * max_k |mean delta_k(t+h) - mean delta_k(t)|.
inline double estimate_local_error(std::span<const double> prev_delta_means,
                                   std::span<const double> new_delta_means, double h) {
  double worst = 0.0;
  for (std::size_t k = 0; k < prev_delta_means.size(); ++k) {
    double d = std::fabs(new_delta_means[k] - prev_delta_means[k]);
    if (d > worst) worst = d;
  }
  return 0.5 * h * worst;
}

struct StepProposal {
  StepDecision decision;
  double h_next;
};

/// Accept iff err <= tolerance. Either way the next step size is
/// h * clamp(safety * sqrt(tolerance / err), shrink_cap, grow_cap), clamped
/// into [h_min, h_max]. A rejection that would need h below h_min throws.
inline StepProposal propose_step(const StepController& ctrl, double err) {
  StepDecision decision = err <= ctrl.tolerance ? StepDecision::Accept : StepDecision::Reject;
  double ratio = ctrl.safety * std::sqrt(ctrl.tolerance / std::max(err, StepController::kErrFloor));
  ratio = std::clamp(ratio, ctrl.shrink_cap, ctrl.grow_cap);
  double target = ctrl.h_current * ratio;
  if (decision == StepDecision::Reject && target < ctrl.h_min)
    throw StepUnderflowError("rejected step needs h below h_min (h=" + fmt_double(target) +
                             ", h_min=" + fmt_double(ctrl.h_min) + ")");
  double h_next = std::clamp(target, ctrl.h_min, ctrl.h_max);
  return {decision, h_next};
}

namespace detail {

inline void weighted_column_means(const std::vector<double>& logw,
                                  const std::vector<double>& values, int cols,
                                  std::vector<double>& out) {
  std::vector<double> w;
  double total = linear_weights(logw, w);
  out.assign(static_cast<std::size_t>(cols), 0.0);
  if (total <= 0.0) return;
  const int n = static_cast<int>(logw.size());
  for (int c = 0; c < cols; ++c) {
    double acc = 0.0;
    for (int p = 0; p < n; ++p) {
      double wp = w[static_cast<std::size_t>(p)];
      if (wp == 0.0) continue;  // dead particles may hold NaN deltas
      acc += wp * values[static_cast<std::size_t>(p) * cols + c];
    }
    out[static_cast<std::size_t>(c)] = acc / total;
  }
}

/// Report grid t_start + k * report_interval, ending exactly at t_end.
inline std::vector<double> report_grid(double t_start, double t_end, double interval) {
  std::vector<double> grid;
  grid.push_back(t_start);
  if (t_end > t_start) {
    long k_max = static_cast<long>(std::floor((t_end - t_start) / interval + kTimeTolerance));
    for (long k = 1; k <= k_max; ++k) grid.push_back(t_start + static_cast<double>(k) * interval);
    if (grid.back() < t_end - kTimeTolerance) grid.push_back(t_end);
  }
  return grid;
}

}  // namespace detail

/// Adaptive-time particle filtering. Between forced times (report grid plus
/// evidence times) the controller tentatively advances a copy of the
/// ensemble, estimates the local error from the delta-node means, and
/// commits or discards the attempt. Weighting and resampling happen at
/// evidence times; summaries are recorded at report times. Every forced
/// time is hit exactly.
inline RunResult run_adaptive(const OdeModel& m, const DbnGraph& g, const InferenceConfig& cfg,
                              std::span<const EvidenceStream> evidence) {
  const double interval = cfg.report_interval > 0.0 ? cfg.report_interval : m.natural_step;
  auto reports = detail::report_grid(cfg.t_start, cfg.t_end, interval);
  auto events = event_times(evidence, cfg.t_start, cfg.t_end);

  struct Forced {
    double t;
    bool report = false;
    bool evidence = false;
  };
  std::vector<Forced> forced;
  {
    std::size_t ri = 0, ei = 0;
    while (ri < reports.size() || ei < events.size()) {
      Forced f{0.0};
      if (ri < reports.size() && ei < events.size() && times_equal(reports[ri], events[ei])) {
        f = {reports[ri], true, true};
        ++ri, ++ei;
      } else if (ei == events.size() || (ri < reports.size() && reports[ri] < events[ei])) {
        f = {reports[ri], true, false};
        ++ri;
      } else {
        f = {events[ei], false, true};
        ++ei;
      }
      forced.push_back(f);
    }
  }

  StepController ctrl;
  ctrl.tolerance = cfg.tolerance > 0.0 ? cfg.tolerance : 0.1;
  ctrl.h_max = interval;
  ctrl.h_min = 1e-6 * interval;
  ctrl.h_current = std::clamp(m.natural_step, ctrl.h_min, ctrl.h_max);

  RunResult res;
  ParticleEnsemble ens = init_ensemble(m, g, cfg);

  std::uint64_t attempt_id = 0;
  std::uint64_t resample_id = 0;

  auto arrive = [&](const Forced& f) {
    if (f.evidence) {
      auto obs = detail::observations_at(m, evidence, ens.time);
      if (!obs.empty()) {
        weigh(ens, m, obs, cfg.threads);
        auto master = RngStream::from(cfg.seed, kPhaseResample, resample_id++);
        resample_systematic(ens, master);
      }
    }
    if (f.report) res.summaries.push_back(summarize(ens));
  };

  std::vector<double> deltas_start, deltas_end;
  std::vector<double> mean_start, mean_end;

  try {
    arrive(forced.front());
    for (std::size_t fi = 1; fi < forced.size(); ++fi) {
      const Forced& next = forced[fi];
      while (true) {
        double gap = next.t - ens.time;
        if (gap <= kTimeTolerance) break;
        double h_att = std::min(ctrl.h_current, gap);
        bool lands = h_att + kTimeTolerance >= gap;
        if (lands) h_att = gap;

        auto snap = ens.snapshot();
        step(ens, m, g, h_att, cfg.seed, ++attempt_id, cfg.threads, &deltas_start);
        eval_deltas(ens, g, deltas_end, cfg.threads);
        detail::weighted_column_means(ens.log_weights(), deltas_start, ens.n_states(), mean_start);
        detail::weighted_column_means(ens.log_weights(), deltas_end, ens.n_states(), mean_end);
        double err = estimate_local_error(mean_start, mean_end, h_att);

        auto prop = propose_step(ctrl, err);
        if (prop.decision == StepDecision::Accept) {
          double t_from = snap.time;
          ens.time = lands ? next.t : snap.time + h_att;
          ctrl.h_current = prop.h_next;
          res.steps.push_back({t_from, h_att, err});
          ++res.accepted;
        } else {
          ens.restore(snap);
          ctrl.h_current = prop.h_next;
          ++res.rejected;
        }
      }
      ens.time = next.t;
      arrive(next);
    }
  } catch (const AllWeightsDegenerateError& e) {
    res.aborted = true;
    res.abort_reason = e.what();
  } catch (const StepUnderflowError& e) {
    res.aborted = true;
    res.abort_reason = e.what();
  }
  return res;
}

}  // namespace odefilter
