#pragma once

#include <algorithm>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "odefilter/model.hpp"

namespace odefilter {

enum class NodeKind { State, Delta, Parameter, TrueInput, IntendedInput, Observed };

inline const char* node_kind_name(NodeKind k) {
  switch (k) {
    case NodeKind::State: return "state";
    case NodeKind::Delta: return "delta";
    case NodeKind::Parameter: return "parameter";
    case NodeKind::TrueInput: return "true-input";
    case NodeKind::IntendedInput: return "intended-input";
    case NodeKind::Observed: return "observed";
  }
  return "?";
}

struct DbnNode {
  int id = -1;
  NodeKind kind = NodeKind::State;
  std::string name;   // display name, e.g. "X", "dX", "a", "TOC1_true"
  int ref = -1;       // index into the model's states/params/inputs/observations
};

struct Arc {
  int from = -1;
  int to = -1;
};

/// Two-slice dynamic Bayesian network compiled from an ODE model.
/// intra_arcs connect nodes within a slice; inter_arcs connect slice i to
/// slice i+1. The slot layout and bound delta programs are carried along so
/// the engine and the reference integrators evaluate identical code.
struct DbnGraph {
  std::vector<DbnNode> nodes;
  std::vector<Arc> intra_arcs;
  std::vector<Arc> inter_arcs;

  SlotLayout layout;
  std::vector<BoundExpr> deltas;  // one per state, in state order

  int node_by_name(const std::string& n) const {
    for (const auto& nd : nodes)
      if (nd.name == n) return nd.id;
    return -1;
  }
  int delta_of_state(int state_ref) const {
    for (const auto& nd : nodes)
      if (nd.kind == NodeKind::Delta && nd.ref == state_ref) return nd.id;
    return -1;
  }
  std::vector<int> intra_parents(int id) const {
    std::vector<int> out;
    for (const auto& a : intra_arcs)
      if (a.to == id) out.push_back(a.from);
    std::sort(out.begin(), out.end());
    return out;
  }
  std::vector<int> inter_parents(int id) const {
    std::vector<int> out;
    for (const auto& a : inter_arcs)
      if (a.to == id) out.push_back(a.from);
    std::sort(out.begin(), out.end());
    return out;
  }
  int count(NodeKind k) const {
    int n = 0;
    for (const auto& nd : nodes) n += nd.kind == k;
    return n;
  }
};

namespace detail {

inline void check_intra_acyclic(const DbnGraph& g) {
  // Kahn's algorithm over the intra-slice subgraph.
  std::vector<int> indeg(g.nodes.size(), 0);
  for (const auto& a : g.intra_arcs) ++indeg[static_cast<std::size_t>(a.to)];
  std::vector<int> queue;
  for (std::size_t i = 0; i < indeg.size(); ++i)
    if (indeg[i] == 0) queue.push_back(static_cast<int>(i));
  std::size_t seen = 0;
  while (!queue.empty()) {
    int n = queue.back();
    queue.pop_back();
    ++seen;
    for (const auto& a : g.intra_arcs)
      if (a.from == n && --indeg[static_cast<std::size_t>(a.to)] == 0) queue.push_back(a.to);
  }
  if (seen != g.nodes.size())
    throw CyclicIntraSliceError("intra-slice dependency cycle in compiled graph");
}

}  // namespace detail

/// Compile a validated model into its DBN. One sub-net per equation: a
/// deterministic delta node holding the RHS, whose intra-slice parents are
/// the nodes of its free symbols; Euler inter-slice arcs {state, delta} ->
/// state; a self-arc per parameter; observed nodes hanging off their true
/// state; true-input nodes hanging off their intended series.
inline DbnGraph compile(const OdeModel& m) {
  {
    auto diags = validate_model(m);
    if (!diags.empty()) {
      std::string msg = "cannot compile an invalid model:";
      for (const auto& d : diags) msg += "\n  " + d.location + ": " + d.message;
      throw Error(msg);
    }
  }

  DbnGraph g;
  auto add_node = [&](NodeKind k, std::string name, int ref) {
    int id = static_cast<int>(g.nodes.size());
    g.nodes.push_back({id, k, std::move(name), ref});
    return id;
  };

  std::map<std::string, int> symbol_node;  // model symbol -> slice node id

  for (std::size_t i = 0; i < m.states.size(); ++i)
    symbol_node[m.states[i].name] = add_node(NodeKind::State, m.states[i].name, static_cast<int>(i));
  std::vector<int> delta_ids;
  for (std::size_t i = 0; i < m.states.size(); ++i)
    delta_ids.push_back(add_node(NodeKind::Delta, "d" + m.states[i].name, static_cast<int>(i)));
  for (std::size_t j = 0; j < m.params.size(); ++j)
    symbol_node[m.params[j].name] =
        add_node(NodeKind::Parameter, m.params[j].name, static_cast<int>(j));
  for (std::size_t k = 0; k < m.inputs.size(); ++k) {
    int true_id = add_node(NodeKind::TrueInput, m.inputs[k].name + "_true", static_cast<int>(k));
    int intended_id =
        add_node(NodeKind::IntendedInput, m.inputs[k].name + "_intended", static_cast<int>(k));
    symbol_node[m.inputs[k].name] = true_id;  // equations read the true input
    g.intra_arcs.push_back({intended_id, true_id});
  }
  for (std::size_t o = 0; o < m.observations.size(); ++o) {
    int obs_id = add_node(NodeKind::Observed, m.observations[o].observed_state + "_obs",
                          static_cast<int>(o));
    g.intra_arcs.push_back({symbol_node[m.observations[o].observed_state], obs_id});
  }

  // Delta nodes: intra-slice parents are exactly the RHS free symbols.
  for (std::size_t i = 0; i < m.states.size(); ++i)
    for (const auto& sym : free_symbols(m.states[i].rhs))
      g.intra_arcs.push_back({symbol_node.at(sym), delta_ids[i]});

  // Euler update: state_{i+1} depends on state_i and delta_i.
  for (std::size_t i = 0; i < m.states.size(); ++i) {
    int state_id = symbol_node.at(m.states[i].name);
    g.inter_arcs.push_back({state_id, state_id});
    g.inter_arcs.push_back({delta_ids[i], state_id});
  }
  // Parameters persist: conditionally dependent on their previous value.
  for (const auto& p : m.params) {
    int id = symbol_node.at(p.name);
    g.inter_arcs.push_back({id, id});
  }

  detail::check_intra_acyclic(g);

  g.layout.n_states = static_cast<int>(m.states.size());
  g.layout.n_params = static_cast<int>(m.params.size());
  g.layout.n_inputs = static_cast<int>(m.inputs.size());
  for (std::size_t i = 0; i < m.states.size(); ++i)
    g.layout.slot_of[m.states[i].name] = static_cast<int>(i);
  for (std::size_t j = 0; j < m.params.size(); ++j)
    g.layout.slot_of[m.params[j].name] = g.layout.param_slot(static_cast<int>(j));
  for (std::size_t k = 0; k < m.inputs.size(); ++k)
    g.layout.slot_of[m.inputs[k].name] = g.layout.input_slot(static_cast<int>(k));
  for (const auto& s : m.states) g.deltas.push_back(BoundExpr::bind(*s.rhs, g.layout));

  return g;
}

namespace detail {

inline int kind_rank(NodeKind k) {
  switch (k) {
    case NodeKind::State: return 0;
    case NodeKind::Delta: return 1;
    case NodeKind::Parameter: return 2;
    case NodeKind::TrueInput: return 3;
    case NodeKind::IntendedInput: return 4;
    case NodeKind::Observed: return 5;
  }
  return 6;
}

}  // namespace detail

/// Deterministic DOT rendering of the graph unrolled over two slices.
/// Stable node order: states, deltas, parameters, inputs, observed, each
/// sorted by name; identical graphs produce byte-identical text.
inline std::string export_dot(const DbnGraph& g) {
  std::vector<const DbnNode*> order;
  order.reserve(g.nodes.size());
  for (const auto& n : g.nodes) order.push_back(&n);
  std::sort(order.begin(), order.end(), [](const DbnNode* a, const DbnNode* b) {
    int ra = detail::kind_rank(a->kind), rb = detail::kind_rank(b->kind);
    return ra != rb ? ra < rb : a->name < b->name;
  });

  auto shape = [](NodeKind k) {
    switch (k) {
      case NodeKind::Delta: return "box";
      case NodeKind::Observed: return "doublecircle";
      case NodeKind::Parameter: return "diamond";
      default: return "ellipse";
    }
  };

  std::ostringstream out;
  out << "digraph dbn {\n  rankdir=LR;\n";
  for (int slice = 0; slice < 2; ++slice) {
    out << "  subgraph cluster_t" << slice << " {\n";
    out << "    label=\"slice t" << (slice == 0 ? "" : "+1") << "\";\n";
    for (const auto* n : order)
      out << "    t" << slice << "_" << n->name << " [label=\"" << n->name << "\", shape="
          << shape(n->kind) << "];\n";
    out << "  }\n";
  }
  auto name_of = [&](int id) { return g.nodes[static_cast<std::size_t>(id)].name; };
  auto arc_key = [&](const Arc& a) { return name_of(a.from) + "\x01" + name_of(a.to); };
  auto sorted = [&](std::vector<Arc> arcs) {
    std::sort(arcs.begin(), arcs.end(),
              [&](const Arc& x, const Arc& y) { return arc_key(x) < arc_key(y); });
    return arcs;
  };
  for (int slice = 0; slice < 2; ++slice)
    for (const auto& a : sorted(g.intra_arcs))
      out << "  t" << slice << "_" << name_of(a.from) << " -> t" << slice << "_" << name_of(a.to)
          << ";\n";
  for (const auto& a : sorted(g.inter_arcs))
    out << "  t0_" << name_of(a.from) << " -> t1_" << name_of(a.to)
        << (a.from == a.to ? " [style=dashed];\n" : ";\n");
  out << "}\n";
  return out.str();
}

/// One-line node census, e.g. "10 nodes (3 state, 3 delta, 3 parameter,
/// 1 observed)". Zero-count kinds are omitted.
inline std::string node_report(const DbnGraph& g) {
  std::ostringstream out;
  out << g.nodes.size() << " nodes (";
  bool first = true;
  for (NodeKind k : {NodeKind::State, NodeKind::Delta, NodeKind::Parameter, NodeKind::TrueInput,
                     NodeKind::IntendedInput, NodeKind::Observed}) {
    int c = g.count(k);
    if (c == 0) continue;
    if (!first) out << ", ";
    out << c << ' ' << node_kind_name(k);
    first = false;
  }
  out << ")";
  return out.str();
}

}  // namespace odefilter
