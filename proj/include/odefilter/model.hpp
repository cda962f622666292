#pragma once

#include <cctype>
#include <set>
#include <string>
#include <vector>

#include "odefilter/dist.hpp"
#include "odefilter/evidence.hpp"
#include "odefilter/expr.hpp"

namespace odefilter {

/// One state variable with its rate equation dname/dt = rhs.
struct StateVar {
  std::string name;
  ExprPtr rhs;
  double initial_mean = 0.0;
  double initial_sigma = 0.0;
};

/// A model parameter: prior for the first slice, Gaussian random walk with
/// transition_sigma between slices. sigma = 0 pins the value.
struct ParameterSpec {
  std::string name;
  DistributionSpec prior;
  double transition_sigma = 0.0;
};

/// External input: the intended (observed) series plus the spread of the
/// true input around it.
struct InputSpec {
  std::string name;
  EvidenceStream intended;
  double input_sigma = 0.0;
};

struct ObservationSpec {
  std::string observed_state;
  double obs_sigma = 0.0;
};

/// A complete ODE model ready for compilation.
struct OdeModel {
  std::string name;
  std::vector<StateVar> states;
  std::vector<ParameterSpec> params;
  std::vector<InputSpec> inputs;
  std::vector<ObservationSpec> observations;
  double natural_step = 0.0;

  int state_index(const std::string& n) const {
    for (std::size_t i = 0; i < states.size(); ++i)
      if (states[i].name == n) return static_cast<int>(i);
    return -1;
  }
  int param_index(const std::string& n) const {
    for (std::size_t i = 0; i < params.size(); ++i)
      if (params[i].name == n) return static_cast<int>(i);
    return -1;
  }
  int input_index(const std::string& n) const {
    for (std::size_t i = 0; i < inputs.size(); ++i)
      if (inputs[i].name == n) return static_cast<int>(i);
    return -1;
  }
};

struct Diagnostic {
  std::string location;
  std::string message;
};

namespace detail {

inline bool valid_identifier(const std::string& s) {
  if (s.empty()) return false;
  if (!ident_start(s[0])) return false;
  for (char c : s)
    if (!ident_char(c)) return false;
  return true;
}

}  // namespace detail

/// Check every model invariant. Empty result means the model is ready to
/// compile; each entry carries a location and message.
inline std::vector<Diagnostic> validate_model(const OdeModel& m) {
  std::vector<Diagnostic> diags;
  auto add = [&](std::string loc, std::string msg) {
    diags.push_back({std::move(loc), std::move(msg)});
  };

  if (!(m.natural_step > 0.0)) add("model", "natural_step must be > 0");
  if (m.states.empty()) add("model", "model declares no state variables");

  std::set<std::string> names;
  auto declare = [&](const std::string& loc, const std::string& n) {
    if (!detail::valid_identifier(n)) add(loc, "invalid identifier '" + n + "'");
    if (!names.insert(n).second) add(loc, "duplicate name '" + n + "'");
  };
  for (const auto& s : m.states) declare("state " + s.name, s.name);
  for (const auto& p : m.params) declare("param " + p.name, p.name);
  for (const auto& in : m.inputs) declare("input " + in.name, in.name);

  for (const auto& s : m.states) {
    if (s.initial_sigma < 0.0) add("state " + s.name, "NegativeSigma: initial sigma < 0");
    if (!s.rhs) {
      add("state " + s.name, "missing rate equation d" + s.name + "/dt");
      continue;
    }
    for (const auto& sym : free_symbols(s.rhs))
      if (!names.count(sym))
        add("d" + s.name + "/dt", "UnboundSymbol: '" + sym + "' is not a declared state, "
                                  "parameter or input");
  }

  for (const auto& p : m.params) {
    if (!p.prior.valid()) add("param " + p.name, "invalid prior (check sigma >= 0 and lo < hi)");
    if (p.transition_sigma < 0.0) add("param " + p.name, "NegativeSigma: transition sigma < 0");
  }

  for (const auto& in : m.inputs) {
    if (in.input_sigma < 0.0) add("input " + in.name, "NegativeSigma: input sigma < 0");
    if (in.intended.mode == EvidenceMode::Continuous && in.intended.points.empty())
      add("input " + in.name, "continuous intended series has no points");
  }

  for (const auto& o : m.observations) {
    if (m.state_index(o.observed_state) < 0)
      add("observe " + o.observed_state,
          "observed variable '" + o.observed_state + "' is not a state");
    if (!(o.obs_sigma > 0.0)) add("observe " + o.observed_state, "NegativeSigma: obs sigma must be > 0");
  }

  return diags;
}

}  // namespace odefilter
