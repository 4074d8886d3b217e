#pragma once

#include <functional>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "trilab/graphs.hpp"

namespace trilab {

/// Automaton states are fixed-width bit strings, kept readable as '0'/'1'
/// text at this scale.
using Bits = std::string;

/// Canonical capped multiset of states: sorted (state, multiplicity) pairs.
struct StateMultiset {
  std::vector<std::pair<Bits, std::uint64_t>> items;  // sorted by state

  void add(const Bits& s, std::uint64_t cap) {
    auto it = std::lower_bound(items.begin(), items.end(), s,
                               [](const auto& p, const Bits& v) { return p.first < v; });
    if (it != items.end() && it->first == s) {
      if (it->second < cap) ++it->second;
    } else {
      items.insert(it, {s, 1});
    }
  }

  bool empty() const { return items.empty(); }

  std::string key() const {
    std::string k;
    for (const auto& [s, c] : items) k += s + "*" + std::to_string(c) + ";";
    return k;
  }

  friend bool operator==(const StateMultiset& a, const StateMultiset& b) {
    return a.items == b.items;
  }
  friend bool operator<(const StateMultiset& a, const StateMultiset& b) {
    return a.items < b.items;
  }
};

/// A counting past-global distributed automaton. At every synchronous round
/// each vertex applies delta to its state, the capped multiset of all prefix
/// states, and the capped multiset of earlier suffix states (strictly
/// earlier, or including the vertex itself for the primed variant). Output
/// at a suffix vertex is the first out_len bits of its round-out_round
/// state.
struct CpgAutomaton {
  enum class Variant { StrictPast, IncludeSelf };

  int m_total = 1;
  std::uint64_t cap_k = 1;
  int out_round = 0;
  int out_len = 1;
  Variant variant = Variant::StrictPast;
  std::map<Token, Bits> init;  // over Sigma and BOS
  using DeltaFn = std::function<Bits(const Bits&, const StateMultiset&, const StateMultiset&)>;
  DeltaFn delta;

  /// Transition table for serializable machines; keys are
  /// (state, msetA.key(), msetB.key()).
  using Table = std::map<std::tuple<Bits, std::string, std::string>, Bits>;
  std::shared_ptr<Table> table;      // set for tabular machines
  std::string kind = "tabular";      // serialization descriptor tag

  void validate() const {
    if (m_total < 1 || out_len < 1 || out_len > m_total || out_round < 0 || cap_k < 1)
      throw std::invalid_argument("automaton: invalid parameters");
  }

  Bits initial_state(Token t) const {
    auto it = init.find(t);
    if (it == init.end()) throw std::invalid_argument("no initial state for token");
    if (static_cast<int>(it->second.size()) != m_total)
      throw std::invalid_argument("initial state has wrong width");
    return it->second;
  }

  Bits step(const Bits& state, const StateMultiset& pre, const StateMultiset& past) const {
    const Bits out = delta(state, pre, past);
    if (static_cast<int>(out.size()) != m_total)
      throw std::runtime_error("delta returned a state of wrong width");
    return out;
  }

  static CpgAutomaton tabular(int m_total, std::uint64_t cap_k, int out_round, int out_len,
                              Variant variant, std::map<Token, Bits> init, Table table_in) {
    CpgAutomaton a;
    a.m_total = m_total;
    a.cap_k = cap_k;
    a.out_round = out_round;
    a.out_len = out_len;
    a.variant = variant;
    a.init = std::move(init);
    a.table = std::make_shared<Table>(std::move(table_in));
    a.kind = "tabular";
    auto tbl = a.table;
    a.delta = [tbl](const Bits& s, const StateMultiset& pre, const StateMultiset& past) -> Bits {
      auto it = tbl->find({s, pre.key(), past.key()});
      if (it == tbl->end())
        throw std::runtime_error("tabular automaton: no transition for (" + s + ", " +
                                 pre.key() + ", " + past.key() + ")");
      return it->second;
    };
    a.validate();
    return a;
  }
};

/// States of every vertex after the automaton's output round.
inline std::vector<Bits> run(const CpgAutomaton& a, const TwoSortedGraph& g) {
  a.validate();
  const int n = g.size();
  const int w = g.bos_index();
  std::vector<Bits> states(static_cast<std::size_t>(n));
  for (int v = 1; v <= n; ++v) states[v - 1] = a.initial_state(g.label(v));
  for (int round = 0; round < a.out_round; ++round) {
    StateMultiset pre;
    for (int v = 1; v < w; ++v) pre.add(states[v - 1], a.cap_k);
    std::vector<Bits> next(static_cast<std::size_t>(n));
    StateMultiset past;  // grows as we walk the suffix
    for (int v = 1; v <= n; ++v) {
      if (v < w) {
        next[v - 1] = a.step(states[v - 1], pre, StateMultiset{});
      } else {
        if (a.variant == CpgAutomaton::Variant::IncludeSelf) {
          StateMultiset with_self = past;
          with_self.add(states[v - 1], a.cap_k);
          next[v - 1] = a.step(states[v - 1], pre, with_self);
          past = std::move(with_self);
        } else {
          next[v - 1] = a.step(states[v - 1], pre, past);
          past.add(states[v - 1], a.cap_k);
        }
      }
    }
    states = std::move(next);
  }
  return states;
}

/// Output at a suffix vertex: the out_len-bit prefix of its final state.
inline Bits output(const CpgAutomaton& a, const TwoSortedGraph& g, int v) {
  if (!g.in_suffix(v)) throw std::invalid_argument("outputs are defined at suffix vertices");
  const auto states = run(a, g);
  return states[static_cast<std::size_t>(v - 1)].substr(0, static_cast<std::size_t>(a.out_len));
}

/// Appends one extra round that applies f to the first out_len bits of each
/// state (ignoring the multisets), yielding output length new_b. The wrapped
/// state carries a round counter so the extra transition fires exactly once.
inline CpgAutomaton compose_postmap(const CpgAutomaton& a,
                                    std::function<Bits(const Bits&)> f, int new_b) {
  a.validate();
  if (new_b < 1) throw std::invalid_argument("compose_postmap: new_b >= 1 required");
  const int payload = std::max(a.m_total, new_b);
  int counter_bits = 1;
  while ((1 << counter_bits) < a.out_round + 2) ++counter_bits;

  CpgAutomaton out;
  out.m_total = payload + counter_bits;
  out.cap_k = a.cap_k;
  out.out_round = a.out_round + 1;
  out.out_len = new_b;
  out.variant = a.variant;
  out.kind = "postmapped:" + a.kind;

  auto encode_counter = [counter_bits](int t) {
    Bits b(static_cast<std::size_t>(counter_bits), '0');
    for (int i = 0; i < counter_bits; ++i)
      if ((t >> i) & 1) b[static_cast<std::size_t>(counter_bits - 1 - i)] = '1';
    return b;
  };
  auto pad_payload = [payload](Bits b) {
    b.resize(static_cast<std::size_t>(payload), '0');
    return b;
  };
  for (const auto& [tok, st] : a.init) out.init[tok] = pad_payload(st) + encode_counter(0);

  const int inner_m = a.m_total;
  const int inner_rounds = a.out_round;
  const int inner_b = a.out_len;
  const auto inner_delta = a.delta;
  out.delta = [=](const Bits& s, const StateMultiset& pre, const StateMultiset& past) -> Bits {
    const Bits payload_bits = s.substr(0, static_cast<std::size_t>(payload));
    int t = 0;
    for (int i = 0; i < counter_bits; ++i)
      t = t * 2 + (s[static_cast<std::size_t>(payload + i)] == '1');
    if (t < inner_rounds) {
      auto strip = [&](const StateMultiset& m) {
        StateMultiset stripped;
        for (const auto& [st, c] : m.items)
          stripped.items.push_back({st.substr(0, static_cast<std::size_t>(inner_m)), c});
        std::sort(stripped.items.begin(), stripped.items.end());
        return stripped;
      };
      const Bits next =
          inner_delta(payload_bits.substr(0, static_cast<std::size_t>(inner_m)), strip(pre),
                      strip(past));
      return pad_payload(next) + encode_counter(t + 1);
    }
    if (t == inner_rounds) {
      const Bits mapped = f(payload_bits.substr(0, static_cast<std::size_t>(inner_b)));
      if (static_cast<int>(mapped.size()) != new_b)
        throw std::runtime_error("postmap returned wrong width");
      return pad_payload(mapped) + encode_counter(t + 1);
    }
    return s;  // frozen after the output round
  };
  out.validate();
  return out;
}

}  // namespace trilab
