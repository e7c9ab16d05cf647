// Boolean circuit netlists (unbounded fan-in AND/OR, NOT) and their direct
// evaluator.
//
// JSON schema:
//   { "inputs": ["x1", ...],
//     "gates":  [ {"id": "g1", "kind": "AND"|"OR"|"NOT", "args": ["x1", ...]} ],
//     "outputs": ["g1", ...] }
// Operands may name inputs or gates. Gates may be listed in any order; the
// loader sorts them topologically and rejects cycles. An AND with no
// operands is 1, an OR with no operands is 0. Outputs may name inputs.
#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "prngformer/errors.hpp"

namespace prngformer {

enum class GateKind { AND, OR, NOT };

struct Gate {
  std::string id;
  GateKind kind = GateKind::AND;
  std::vector<std::string> args;
};

struct CircuitNetlist {
  std::vector<std::string> inputs;
  std::vector<Gate> gates;  // topologically ordered after validate()
  std::vector<std::string> outputs;

  // Checks names and arity, then reorders gates topologically.
  void validate() {
    std::set<std::string> names;
    for (const auto& in : inputs)
      if (!names.insert(in).second) throw CompileError("duplicate signal name '" + in + "'");
    std::map<std::string, std::size_t> gate_index;
    for (std::size_t g = 0; g < gates.size(); ++g) {
      if (!names.insert(gates[g].id).second) throw CompileError("duplicate signal name '" + gates[g].id + "'");
      gate_index[gates[g].id] = g;
      if (gates[g].kind == GateKind::NOT && gates[g].args.size() != 1)
        throw CompileError("NOT gate '" + gates[g].id + "' needs exactly one operand");
    }
    for (const auto& g : gates)
      for (const auto& a : g.args)
        if (!names.count(a)) throw CompileError("gate '" + g.id + "' reads unknown signal '" + a + "'");
    for (const auto& o : outputs)
      if (!names.count(o)) throw CompileError("output names unknown signal '" + o + "'");
    if (outputs.empty()) throw CompileError("netlist has no outputs");

    // Depth-first topological sort with cycle detection.
    std::vector<int> mark(gates.size(), 0);
    std::vector<Gate> order;
    std::vector<std::pair<std::size_t, std::size_t>> stack;
    for (std::size_t root = 0; root < gates.size(); ++root) {
      if (mark[root]) continue;
      stack.push_back({root, 0});
      mark[root] = 1;
      while (!stack.empty()) {
        auto& [g, next] = stack.back();
        if (next < gates[g].args.size()) {
          const auto it = gate_index.find(gates[g].args[next++]);
          if (it == gate_index.end()) continue;
          if (mark[it->second] == 1) throw CompileError("netlist is cyclic through gate '" + it->first + "'");
          if (mark[it->second] == 0) {
            mark[it->second] = 1;
            stack.push_back({it->second, 0});
          }
        } else {
          mark[g] = 2;
          order.push_back(gates[g]);
          stack.pop_back();
        }
      }
    }
    gates = std::move(order);
  }

  // Longest input-to-output gate count.
  std::size_t depth() const {
    std::map<std::string, std::size_t> d;
    std::size_t best = 0;
    for (const auto& g : gates) {
      std::size_t v = 0;
      for (const auto& a : g.args) {
        auto it = d.find(a);
        if (it != d.end()) v = std::max(v, it->second);
      }
      d[g.id] = v + 1;
      best = std::max(best, v + 1);
    }
    return best;
  }
};

inline const char* to_string(GateKind k) { return k == GateKind::AND ? "AND" : k == GateKind::OR ? "OR" : "NOT"; }

inline CircuitNetlist netlist_from_json(const nlohmann::json& j) {
  CircuitNetlist c;
  try {
    c.inputs = j.at("inputs").get<std::vector<std::string>>();
    for (const auto& jg : j.at("gates")) {
      Gate g;
      g.id = jg.at("id").get<std::string>();
      const auto kind = jg.at("kind").get<std::string>();
      if (kind == "AND") g.kind = GateKind::AND;
      else if (kind == "OR") g.kind = GateKind::OR;
      else if (kind == "NOT") g.kind = GateKind::NOT;
      else throw CompileError("gate '" + g.id + "' has unknown kind '" + kind + "'");
      g.args = jg.value("args", std::vector<std::string>{});
      c.gates.push_back(std::move(g));
    }
    c.outputs = j.at("outputs").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw CompileError(std::string("netlist: ") + e.what());
  }
  c.validate();
  return c;
}

inline nlohmann::json netlist_to_json(const CircuitNetlist& c) {
  nlohmann::json gates = nlohmann::json::array();
  for (const auto& g : c.gates) gates.push_back({{"id", g.id}, {"kind", to_string(g.kind)}, {"args", g.args}});
  return {{"inputs", c.inputs}, {"gates", gates}, {"outputs", c.outputs}};
}

inline std::vector<bool> eval_circuit(const CircuitNetlist& c, const std::map<std::string, bool>& assignment) {
  std::map<std::string, bool> v;
  for (const auto& in : c.inputs) {
    auto it = assignment.find(in);
    if (it == assignment.end()) throw DomainError("assignment is missing input '" + in + "'");
    v[in] = it->second;
  }
  for (const auto& g : c.gates) {
    bool r = g.kind == GateKind::AND;
    if (g.kind == GateKind::NOT) {
      r = !v.at(g.args[0]);
    } else {
      for (const auto& a : g.args) r = g.kind == GateKind::AND ? (r && v.at(a)) : (r || v.at(a));
    }
    v[g.id] = r;
  }
  std::vector<bool> out;
  for (const auto& o : c.outputs) out.push_back(v.at(o));
  return out;
}

// Input bits given in the order of c.inputs.
inline std::vector<bool> eval_circuit(const CircuitNetlist& c, const std::vector<bool>& bits) {
  if (bits.size() != c.inputs.size())
    throw DomainError("assignment has " + std::to_string(bits.size()) + " bits for " +
                      std::to_string(c.inputs.size()) + " inputs");
  std::map<std::string, bool> a;
  for (std::size_t i = 0; i < bits.size(); ++i) a[c.inputs[i]] = bits[i];
  return eval_circuit(c, a);
}

// Random layered netlist: `levels` levels of AND/OR gates with fan-in in
// [0, max_fanin] over earlier signals, NOT gates sprinkled in, depth <= levels
// counting only AND/OR. Used to build test corpora.
inline CircuitNetlist random_netlist(std::mt19937_64& rng, std::size_t num_inputs, std::size_t num_gates,
                                     std::size_t levels, std::size_t max_fanin, std::size_t num_outputs) {
  CircuitNetlist c;
  for (std::size_t i = 0; i < num_inputs; ++i) c.inputs.push_back("x" + std::to_string(i));
  std::vector<std::string> pool = c.inputs;
  const std::size_t per_level = std::max<std::size_t>(1, num_gates / std::max<std::size_t>(levels, 1));
  std::size_t made = 0;
  for (std::size_t lv = 0; lv < levels && made < num_gates; ++lv) {
    std::vector<std::string> fresh;
    for (std::size_t k = 0; k < per_level && made < num_gates; ++k, ++made) {
      Gate g;
      g.id = "g" + std::to_string(made);
      const auto roll = rng() % 5;
      if (roll == 0) {
        g.kind = GateKind::NOT;
        g.args.push_back(pool[rng() % pool.size()]);
      } else {
        g.kind = roll % 2 ? GateKind::AND : GateKind::OR;
        const std::size_t fan = 1 + rng() % max_fanin;
        for (std::size_t f = 0; f < fan; ++f) g.args.push_back(pool[rng() % pool.size()]);
      }
      fresh.push_back(g.id);
      c.gates.push_back(std::move(g));
    }
    pool.insert(pool.end(), fresh.begin(), fresh.end());
  }
  for (std::size_t o = 0; o < num_outputs; ++o) {
    // Prefer gates so outputs exercise the whole depth.
    const std::size_t span = c.gates.empty() ? pool.size() : c.gates.size();
    c.outputs.push_back(c.gates.empty() ? pool[rng() % span] : c.gates[c.gates.size() - 1 - rng() % std::min<std::size_t>(span, 8)].id);
  }
  c.validate();
  return c;
}

}  // namespace prngformer
