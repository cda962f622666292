#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "odefilter/compiler.hpp"
#include "odefilter/dist.hpp"
#include "odefilter/evidence.hpp"
#include "odefilter/model.hpp"
#include "odefilter/util.hpp"

namespace odefilter {

/// RNG stream phases. Every random draw in a run is keyed by
/// (seed, phase, slot, event), so results never depend on worker count.
enum RngPhase : std::uint64_t {
  kPhaseInit = 0x1001,
  kPhaseTransition = 0x2002,
  kPhaseResample = 0x3003,
};

/// Weighted joint samples of (state vector, parameter vector, true inputs),
/// stored one contiguous row per particle in slot-layout order so a row is
/// directly usable as the binding vector for bound expressions.
class ParticleEnsemble {
 public:
  ParticleEnsemble() = default;
  ParticleEnsemble(int n, const SlotLayout& layout)
      : n_(n),
        n_states_(layout.n_states),
        n_params_(layout.n_params),
        n_inputs_(layout.n_inputs),
        width_(layout.width()),
        vars_(static_cast<std::size_t>(n) * static_cast<std::size_t>(layout.width()), 0.0),
        log_weights_(static_cast<std::size_t>(n), 0.0) {}

  double time = 0.0;

  int size() const { return n_; }
  int n_states() const { return n_states_; }
  int n_params() const { return n_params_; }
  int n_inputs() const { return n_inputs_; }
  int width() const { return width_; }

  std::span<double> row(int p) {
    return {vars_.data() + static_cast<std::size_t>(p) * width_, static_cast<std::size_t>(width_)};
  }
  std::span<const double> row(int p) const {
    return {vars_.data() + static_cast<std::size_t>(p) * width_, static_cast<std::size_t>(width_)};
  }
  double& state(int p, int k) { return vars_[static_cast<std::size_t>(p) * width_ + k]; }
  double state(int p, int k) const { return vars_[static_cast<std::size_t>(p) * width_ + k]; }
  double& param(int p, int j) { return vars_[static_cast<std::size_t>(p) * width_ + n_states_ + j]; }
  double param(int p, int j) const {
    return vars_[static_cast<std::size_t>(p) * width_ + n_states_ + j];
  }
  double& input(int p, int i) {
    return vars_[static_cast<std::size_t>(p) * width_ + n_states_ + n_params_ + i];
  }
  double& log_weight(int p) { return log_weights_[static_cast<std::size_t>(p)]; }
  double log_weight(int p) const { return log_weights_[static_cast<std::size_t>(p)]; }
  std::vector<double>& log_weights() { return log_weights_; }
  const std::vector<double>& log_weights() const { return log_weights_; }

  struct Snapshot {
    std::vector<double> vars, log_weights;
    double time;
  };
  Snapshot snapshot() const { return {vars_, log_weights_, time}; }
  void restore(const Snapshot& s) {
    vars_ = s.vars;
    log_weights_ = s.log_weights;
    time = s.time;
  }

  void gather(std::span<const int> indices) {
    std::vector<double> next(vars_.size());
    for (int i = 0; i < n_; ++i)
      std::memcpy(next.data() + static_cast<std::size_t>(i) * width_,
                  vars_.data() + static_cast<std::size_t>(indices[static_cast<std::size_t>(i)]) * width_,
                  sizeof(double) * static_cast<std::size_t>(width_));
    vars_.swap(next);
  }

 private:
  int n_ = 0, n_states_ = 0, n_params_ = 0, n_inputs_ = 0, width_ = 0;
  std::vector<double> vars_;
  std::vector<double> log_weights_;
};

/// Per-report-time weighted moments of every state and parameter node.
struct StepSummary {
  double time = 0.0;
  std::vector<double> mean;    // states then parameters
  std::vector<double> stddev;  // same order
  double ess = 0.0;
};

struct InferenceConfig {
  enum class Mode { Fixed, Adaptive };

  Mode mode = Mode::Fixed;
  double fixed_step = 0.0;        // Fixed; 0 means the model's natural step
  double report_interval = 0.0;   // Adaptive
  double tolerance = 0.0;         // Adaptive
  int n_particles = 1;
  double t_start = 0.0;
  double t_end = 0.0;
  std::uint64_t seed = 0;
  double run_in_end = 0.0;        // metrics start here
  int threads = 1;
  bool ess_triggered_resampling = false;  // default: resample at every step
  double ess_threshold = 0.5;             // fraction of N when triggered
};

struct CommittedStep {
  double t_from = 0.0;
  double h = 0.0;
  double err = 0.0;  // estimated local error (0 for fixed-step runs)
};

struct RunResult {
  std::vector<StepSummary> summaries;
  long accepted = 0;
  long rejected = 0;
  std::vector<CommittedStep> steps;
  bool aborted = false;
  std::string abort_reason;
};

/// Draw the initial ensemble: parameters from their priors, states from
/// Gaussian(initial_mean, initial_sigma), true inputs pinned to the
/// intended value at t_start, uniform weights.
inline ParticleEnsemble init_ensemble(const OdeModel& m, const DbnGraph& g,
                                      const InferenceConfig& cfg) {
  ParticleEnsemble ens(cfg.n_particles, g.layout);
  ens.time = cfg.t_start;

  std::vector<double> input0(m.inputs.size());
  for (std::size_t i = 0; i < m.inputs.size(); ++i) {
    auto v = m.inputs[i].intended.value_at(cfg.t_start);
    if (!v)
      throw Error("input '" + m.inputs[i].name + "' has no intended value at t_start; its series must cover the inference interval");
    input0[i] = *v;
  }

  const int n_params = static_cast<int>(m.params.size());
  const int n_states = static_cast<int>(m.states.size());
  parallel_for(cfg.n_particles, cfg.threads, [&](int lo, int hi) {
    for (int p = lo; p < hi; ++p) {
      auto rng = RngStream::from(cfg.seed, kPhaseInit, static_cast<std::uint64_t>(p), 0);
      for (int j = 0; j < n_params; ++j) ens.param(p, j) = sample(m.params[j].prior, rng);
      for (int k = 0; k < n_states; ++k) {
        double s = m.states[k].initial_sigma;
        ens.state(p, k) = s == 0.0 ? m.states[k].initial_mean
                                   : m.states[k].initial_mean + s * rng.gaussian();
      }
      for (std::size_t i = 0; i < input0.size(); ++i) ens.input(p, static_cast<int>(i)) = input0[i];
    }
  });
  return ens;
}

/// One DBN transition: per particle, random-walk the parameters, redraw the
/// true inputs around the intended values at the slice start, evaluate the
/// delta nodes, then apply the Euler update state += h * delta. Weights are
/// untouched; a particle whose state leaves the finite range gets weight
/// -inf and is culled at the next resample.
///
/// `attempt_id` keys the random draws; callers give every attempt
/// (including rejected adaptive attempts) a fresh id.
inline void step(ParticleEnsemble& ens, const OdeModel& m, const DbnGraph& g, double h,
                 std::uint64_t seed, std::uint64_t attempt_id, int threads = 1,
                 std::vector<double>* deltas_out = nullptr) {
  const int n = ens.size();
  const int S = ens.n_states();
  const int P = ens.n_params();
  const int I = ens.n_inputs();

  std::vector<double> intended(static_cast<std::size_t>(I));
  for (int i = 0; i < I; ++i) {
    auto v = m.inputs[static_cast<std::size_t>(i)].intended.value_at(ens.time);
    if (!v)
      throw Error("input '" + m.inputs[static_cast<std::size_t>(i)].name +
                  "' has no intended value at t=" + fmt_double(ens.time));
    intended[static_cast<std::size_t>(i)] = *v;
  }

  if (deltas_out) deltas_out->resize(static_cast<std::size_t>(n) * static_cast<std::size_t>(S));

  parallel_for(n, threads, [&](int lo, int hi) {
    std::vector<double> delta(static_cast<std::size_t>(S));
    for (int p = lo; p < hi; ++p) {
      auto rng = RngStream::from(seed, kPhaseTransition, static_cast<std::uint64_t>(p), attempt_id);
      auto r = ens.row(p);
      for (int j = 0; j < P; ++j) {
        double st = m.params[static_cast<std::size_t>(j)].transition_sigma;
        if (st != 0.0) r[static_cast<std::size_t>(S + j)] += st * rng.gaussian();
      }
      for (int i = 0; i < I; ++i) {
        double si = m.inputs[static_cast<std::size_t>(i)].input_sigma;
        double base = intended[static_cast<std::size_t>(i)];
        r[static_cast<std::size_t>(S + P + i)] = si == 0.0 ? base : base + si * rng.gaussian();
      }
      for (int k = 0; k < S; ++k) delta[static_cast<std::size_t>(k)] = g.deltas[static_cast<std::size_t>(k)].eval(r);
      bool finite = true;
      for (int k = 0; k < S; ++k) {
        double next = r[static_cast<std::size_t>(k)] + h * delta[static_cast<std::size_t>(k)];
        r[static_cast<std::size_t>(k)] = next;
        finite = finite && std::isfinite(next);
      }
      if (!finite) ens.log_weight(p) = -std::numeric_limits<double>::infinity();
      if (deltas_out)
        std::memcpy(deltas_out->data() + static_cast<std::size_t>(p) * S, delta.data(),
                    sizeof(double) * static_cast<std::size_t>(S));
    }
  });
  ens.time += h;
}

/// Evaluate the delta nodes on the current rows without advancing anything.
inline void eval_deltas(const ParticleEnsemble& ens, const DbnGraph& g, std::vector<double>& out,
                        int threads = 1) {
  const int n = ens.size();
  const int S = ens.n_states();
  out.resize(static_cast<std::size_t>(n) * static_cast<std::size_t>(S));
  parallel_for(n, threads, [&](int lo, int hi) {
    for (int p = lo; p < hi; ++p) {
      auto r = ens.row(p);
      for (int k = 0; k < S; ++k)
        out[static_cast<std::size_t>(p) * S + static_cast<std::size_t>(k)] =
            g.deltas[static_cast<std::size_t>(k)].eval(r);
    }
  });
}

/// An observation available at the current slice.
struct ObsValue {
  int obs_index = 0;  // into model.observations
  double value = 0.0;
};

/// Evidence weighting: log_weight += log N(observed; true state, obs_sigma)
/// per observation. Dead particles (-inf) stay dead.
inline void weigh(ParticleEnsemble& ens, const OdeModel& m, std::span<const ObsValue> obs,
                  int threads = 1) {
  if (obs.empty()) return;
  struct Target {
    int state_idx;
    double sigma;
    double value;
  };
  std::vector<Target> targets;
  targets.reserve(obs.size());
  for (const auto& o : obs) {
    const auto& spec = m.observations[static_cast<std::size_t>(o.obs_index)];
    targets.push_back({m.state_index(spec.observed_state), spec.obs_sigma, o.value});
  }
  parallel_for(ens.size(), threads, [&](int lo, int hi) {
    for (int p = lo; p < hi; ++p) {
      double& lw = ens.log_weight(p);
      if (lw == -std::numeric_limits<double>::infinity()) continue;
      for (const auto& t : targets) lw += gaussian_log_pdf(t.value, ens.state(p, t.state_idx), t.sigma);
    }
  });
}

namespace detail {

/// Linear weights by max-log subtraction. Returns total; all-degenerate
/// ensembles give total 0.
inline double linear_weights(const std::vector<double>& logw, std::vector<double>& w) {
  double max_lw = -std::numeric_limits<double>::infinity();
  for (double lw : logw)
    if (lw > max_lw) max_lw = lw;
  w.resize(logw.size());
  if (max_lw == -std::numeric_limits<double>::infinity()) {
    std::fill(w.begin(), w.end(), 0.0);
    return 0.0;
  }
  double total = 0.0;
  for (std::size_t i = 0; i < logw.size(); ++i) {
    w[i] = std::exp(logw[i] - max_lw);
    total += w[i];
  }
  return total;
}

}  // namespace detail

/// Effective sample size (sum w)^2 / sum w^2 of the current weights.
inline double effective_sample_size(const ParticleEnsemble& ens) {
  std::vector<double> w;
  double total = detail::linear_weights(ens.log_weights(), w);
  if (total <= 0.0) return 0.0;
  double sq = 0.0;
  for (double x : w) sq += x * x;
  return total * total / sq;
}

/// Systematic resampling: N evenly spaced positions with one uniform
/// offset. Copy counts stay within floor/ceil of N*w_j; afterwards all
/// weights are equal. Throws AllWeightsDegenerateError when every particle
/// is dead.
inline void resample_systematic(ParticleEnsemble& ens, RngStream& master) {
  const int n = ens.size();
  std::vector<double> w;
  double total = detail::linear_weights(ens.log_weights(), w);
  if (total <= 0.0) throw AllWeightsDegenerateError();

  std::vector<double> cum(w.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    acc += w[i];
    cum[i] = acc;
  }
  double step_len = total / n;
  double u = master.uniform01();  // in (0,1)

  std::vector<int> idx(static_cast<std::size_t>(n));
  int j = 0;
  for (int i = 0; i < n; ++i) {
    double pos = (u + i) * step_len;
    while (j < n - 1 && pos > cum[static_cast<std::size_t>(j)]) ++j;
    idx[static_cast<std::size_t>(i)] = j;
  }
  ens.gather(idx);
  std::fill(ens.log_weights().begin(), ens.log_weights().end(), 0.0);
}

/// Weighted mean and standard deviation per state and parameter plus the
/// ESS. Means are accumulated around the first particle's value, so an
/// ensemble of identical particles summarizes to that value exactly.
inline StepSummary summarize(const ParticleEnsemble& ens) {
  const int S = ens.n_states();
  const int P = ens.n_params();
  const int cols = S + P;
  StepSummary s;
  s.time = ens.time;
  s.mean.assign(static_cast<std::size_t>(cols), std::numeric_limits<double>::quiet_NaN());
  s.stddev.assign(static_cast<std::size_t>(cols), std::numeric_limits<double>::quiet_NaN());

  std::vector<double> w;
  double total = detail::linear_weights(ens.log_weights(), w);
  if (total <= 0.0) {
    s.ess = 0.0;
    return s;
  }
  double sq = 0.0;
  for (double x : w) sq += x * x;
  s.ess = total * total / sq;

  // Anchor on the first live particle; dead particles may carry NaN states
  // and must not touch the accumulators even with weight zero.
  int anchor_p = 0;
  while (anchor_p < ens.size() && w[static_cast<std::size_t>(anchor_p)] == 0.0) ++anchor_p;

  for (int c = 0; c < cols; ++c) {
    double anchor = ens.row(anchor_p)[static_cast<std::size_t>(c)];
    double dev = 0.0;
    for (int p = 0; p < ens.size(); ++p) {
      double wp = w[static_cast<std::size_t>(p)];
      if (wp == 0.0) continue;
      dev += wp * (ens.row(p)[static_cast<std::size_t>(c)] - anchor);
    }
    double mean = anchor + dev / total;
    double var = 0.0;
    for (int p = 0; p < ens.size(); ++p) {
      double wp = w[static_cast<std::size_t>(p)];
      if (wp == 0.0) continue;
      double d = ens.row(p)[static_cast<std::size_t>(c)] - mean;
      var += wp * d * d;
    }
    s.mean[static_cast<std::size_t>(c)] = mean;
    s.stddev[static_cast<std::size_t>(c)] = std::sqrt(var / total);
  }
  return s;
}

namespace detail {

/// Step times for a fixed-step run: the uniform grid from t_start, plus a
/// shortened final step onto t_end if needed, plus every event time (the
/// grid step is shortened to land on them exactly).
inline std::vector<double> fixed_schedule(double t_start, double t_end, double h,
                                          std::span<const double> events) {
  std::vector<double> grid;
  grid.push_back(t_start);
  if (t_end > t_start) {
    long k_max = static_cast<long>(std::floor((t_end - t_start) / h + kTimeTolerance));
    for (long k = 1; k <= k_max; ++k) grid.push_back(t_start + static_cast<double>(k) * h);
    if (grid.back() < t_end - kTimeTolerance) grid.push_back(t_end);
  }
  // merge events, keeping the grid representative when both coincide
  std::vector<double> out;
  out.reserve(grid.size() + events.size());
  std::size_t gi = 0, ei = 0;
  while (gi < grid.size() || ei < events.size()) {
    bool take_grid;
    if (gi == grid.size()) take_grid = false;
    else if (ei == events.size()) take_grid = true;
    else if (times_equal(grid[gi], events[ei])) {
      ++ei;
      take_grid = true;
    } else
      take_grid = grid[gi] < events[ei];
    double t = take_grid ? grid[gi++] : events[ei++];
    if (out.empty() || !times_equal(out.back(), t)) out.push_back(t);
  }
  return out;
}

/// Evidence lookup for one scheduled time.
inline std::vector<ObsValue> observations_at(const OdeModel& m,
                                             std::span<const EvidenceStream> evidence, double t) {
  std::vector<ObsValue> out;
  for (const auto& s : evidence) {
    for (std::size_t o = 0; o < m.observations.size(); ++o) {
      if (m.observations[o].observed_state != s.target) continue;
      if (auto v = s.value_at(t)) out.push_back({static_cast<int>(o), *v});
    }
  }
  return out;
}

}  // namespace detail

/// Fixed-step particle filtering: at every scheduled time, weigh any
/// evidence, resample, summarize, and record. Deterministic for a fixed
/// (model, config, evidence, seed) regardless of thread count.
inline RunResult run_fixed(const OdeModel& m, const DbnGraph& g, const InferenceConfig& cfg,
                           std::span<const EvidenceStream> evidence) {
  double h = cfg.fixed_step > 0.0 ? cfg.fixed_step : m.natural_step;
  auto events = event_times(evidence, cfg.t_start, cfg.t_end);
  auto schedule = detail::fixed_schedule(cfg.t_start, cfg.t_end, h, events);

  RunResult res;
  ParticleEnsemble ens = init_ensemble(m, g, cfg);

  auto record_point = [&](std::uint64_t step_idx) {
    auto obs = detail::observations_at(m, evidence, ens.time);
    weigh(ens, m, obs, cfg.threads);
    bool do_resample = true;
    if (cfg.ess_triggered_resampling)
      do_resample = effective_sample_size(ens) <
                    cfg.ess_threshold * static_cast<double>(cfg.n_particles);
    if (do_resample) {
      auto master = RngStream::from(cfg.seed, kPhaseResample, step_idx);
      resample_systematic(ens, master);
    }
    res.summaries.push_back(summarize(ens));
  };

  try {
    record_point(0);
    for (std::size_t i = 1; i < schedule.size(); ++i) {
      double hi = schedule[i] - schedule[i - 1];
      step(ens, m, g, hi, cfg.seed, i, cfg.threads);
      ens.time = schedule[i];  // land exactly on the scheduled time
      res.steps.push_back({schedule[i - 1], hi, 0.0});
      ++res.accepted;
      record_point(i);
    }
  } catch (const AllWeightsDegenerateError& e) {
    res.aborted = true;
    res.abort_reason = e.what();
  }
  return res;
}

}  // namespace odefilter
