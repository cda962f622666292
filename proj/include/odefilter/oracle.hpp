#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "odefilter/compiler.hpp"
#include "odefilter/engine.hpp"
#include "odefilter/model.hpp"

namespace odefilter {

/// Deterministic trajectory sampled at the requested times; one row of
/// state values per time.
struct ReferenceTrajectory {
  std::vector<double> times;
  std::vector<std::vector<double>> values;

  int find_time(double t) const {
    for (std::size_t i = 0; i < times.size(); ++i)
      if (times_equal(times[i], t)) return static_cast<int>(i);
    return -1;
  }
};

namespace detail {

/// Fill the parameter and input slots of a binding row for time t.
inline void bind_externals(const OdeModel& m, const SlotLayout& layout,
                           std::span<const double> params, double t, std::vector<double>& row) {
  for (int j = 0; j < layout.n_params; ++j)
    row[static_cast<std::size_t>(layout.param_slot(j))] = params[static_cast<std::size_t>(j)];
  for (int i = 0; i < layout.n_inputs; ++i) {
    auto v = m.inputs[static_cast<std::size_t>(i)].intended.value_at(t);
    if (!v)
      throw Error("input '" + m.inputs[static_cast<std::size_t>(i)].name +
                  "' has no intended value at t=" + fmt_double(t));
    row[static_cast<std::size_t>(layout.input_slot(i))] = *v;
  }
}

}  // namespace detail

/// Plain forward Euler on the deterministic skeleton: exactly the update
/// the compiled DBN embeds, so a zero-noise filter run must match it
/// bit for bit. Times are t0 + k*h.
inline ReferenceTrajectory euler_reference(const OdeModel& m, const DbnGraph& g,
                                           std::span<const double> params,
                                           std::span<const double> x0, double h, int n_steps,
                                           double t0 = 0.0) {
  const int S = g.layout.n_states;
  std::vector<double> row(static_cast<std::size_t>(g.layout.width()), 0.0);
  for (int k = 0; k < S; ++k) row[static_cast<std::size_t>(k)] = x0[static_cast<std::size_t>(k)];

  ReferenceTrajectory traj;
  traj.times.push_back(t0);
  traj.values.emplace_back(x0.begin(), x0.end());

  std::vector<double> delta(static_cast<std::size_t>(S));
  for (int i = 1; i <= n_steps; ++i) {
    detail::bind_externals(m, g.layout, params, traj.times.back(), row);
    for (int k = 0; k < S; ++k)
      delta[static_cast<std::size_t>(k)] = g.deltas[static_cast<std::size_t>(k)].eval(row);
    for (int k = 0; k < S; ++k) {
      double next = row[static_cast<std::size_t>(k)] + h * delta[static_cast<std::size_t>(k)];
      row[static_cast<std::size_t>(k)] = next;
      if (!std::isfinite(next))
        throw NonFiniteError("euler reference left the finite range at step " + std::to_string(i));
    }
    traj.times.push_back(t0 + static_cast<double>(i) * h);
    traj.values.emplace_back(row.begin(), row.begin() + S);
  }
  return traj;
}

/// Classical 4th-order Runge-Kutta, sub-stepping at h_ref between the
/// requested sample times. x0 is the state at times[0].
inline ReferenceTrajectory rk4_reference(const OdeModel& m, const DbnGraph& g,
                                         std::span<const double> params,
                                         std::span<const double> x0, std::span<const double> times,
                                         double h_ref) {
  const int S = g.layout.n_states;
  const int W = g.layout.width();
  std::vector<double> x(x0.begin(), x0.end());
  std::vector<double> row(static_cast<std::size_t>(W), 0.0);
  std::vector<double> k1(S), k2(S), k3(S), k4(S), xt(S);

  auto deriv = [&](const std::vector<double>& state, double t, std::vector<double>& out) {
    for (int k = 0; k < S; ++k) row[static_cast<std::size_t>(k)] = state[static_cast<std::size_t>(k)];
    detail::bind_externals(m, g.layout, params, t, row);
    for (int k = 0; k < S; ++k)
      out[static_cast<std::size_t>(k)] = g.deltas[static_cast<std::size_t>(k)].eval(row);
  };

  ReferenceTrajectory traj;
  traj.times.push_back(times[0]);
  traj.values.emplace_back(x.begin(), x.end());

  for (std::size_t ti = 1; ti < times.size(); ++ti) {
    double t = times[ti - 1];
    double span_len = times[ti] - t;
    int n_sub = std::max(1, static_cast<int>(std::ceil(span_len / h_ref - kTimeTolerance)));
    double h = span_len / n_sub;
    for (int s = 0; s < n_sub; ++s) {
      deriv(x, t, k1);
      for (int k = 0; k < S; ++k) xt[static_cast<std::size_t>(k)] = x[static_cast<std::size_t>(k)] + 0.5 * h * k1[static_cast<std::size_t>(k)];
      deriv(xt, t + 0.5 * h, k2);
      for (int k = 0; k < S; ++k) xt[static_cast<std::size_t>(k)] = x[static_cast<std::size_t>(k)] + 0.5 * h * k2[static_cast<std::size_t>(k)];
      deriv(xt, t + 0.5 * h, k3);
      for (int k = 0; k < S; ++k) xt[static_cast<std::size_t>(k)] = x[static_cast<std::size_t>(k)] + h * k3[static_cast<std::size_t>(k)];
      deriv(xt, t + h, k4);
      for (int k = 0; k < S; ++k) {
        x[static_cast<std::size_t>(k)] +=
            h / 6.0 *
            (k1[static_cast<std::size_t>(k)] + 2.0 * k2[static_cast<std::size_t>(k)] +
             2.0 * k3[static_cast<std::size_t>(k)] + k4[static_cast<std::size_t>(k)]);
        if (!std::isfinite(x[static_cast<std::size_t>(k)]))
          throw NonFiniteError("rk4 reference left the finite range near t=" + fmt_double(t));
      }
      t += h;
    }
    traj.times.push_back(times[ti]);
    traj.values.emplace_back(x.begin(), x.end());
  }
  return traj;
}

struct Metrics {
  double rmse = 0.0;
  double mae = 0.0;
};

/// RMSE and MAE of the predicted means of one state against the reference,
/// over the shared times at or after run_in_end.
inline Metrics compute_metrics(std::span<const StepSummary> predicted,
                               const ReferenceTrajectory& reference, int state_index,
                               double run_in_end) {
  double sq = 0.0, ab = 0.0;
  int n = 0;
  for (const auto& s : predicted) {
    if (s.time < run_in_end - kTimeTolerance) continue;
    int ri = reference.find_time(s.time);
    if (ri < 0) continue;
    double err = s.mean[static_cast<std::size_t>(state_index)] -
                 reference.values[static_cast<std::size_t>(ri)][static_cast<std::size_t>(state_index)];
    sq += err * err;
    ab += std::fabs(err);
    ++n;
  }
  if (n == 0) throw NoOverlapError("no shared times between prediction and reference after run-in");
  return {std::sqrt(sq / n), ab / n};
}

}  // namespace odefilter
