#include <catch2/catch_amalgamated.hpp>

#include <map>

#include "trilab/automaton.hpp"
#include "trilab/rng.hpp"

using namespace trilab;

namespace {

const Vocab ab({"a", "b"});

// Intensional machine whose state is the capped count of prefix a-states.
CpgAutomaton count_a_machine(std::uint64_t k) {
  CpgAutomaton a;
  a.m_total = 2;
  a.cap_k = k;
  a.out_round = 1;
  a.out_len = 2;
  a.kind = "count-a";
  a.init = {{kBos, "00"}, {0, "01"}, {1, "00"}};
  a.delta = [](const Bits&, const StateMultiset& pre, const StateMultiset&) -> Bits {
    std::uint64_t count = 0;
    for (const auto& [s, c] : pre.items)
      if (s == "01") count += c;
    if (count == 0) return "00";
    if (count == 1) return "01";
    return "10";
  };
  return a;
}

// Reference run: recomputes every multiset from scratch per vertex, walking
// vertices in reverse, to confirm rounds are true barriers.
std::vector<Bits> reference_run(const CpgAutomaton& a, const TwoSortedGraph& g) {
  const int n = g.size(), w = g.bos_index();
  std::vector<Bits> states(static_cast<std::size_t>(n));
  for (int v = 1; v <= n; ++v) states[v - 1] = a.initial_state(g.label(v));
  for (int round = 0; round < a.out_round; ++round) {
    std::vector<Bits> next(static_cast<std::size_t>(n));
    for (int v = n; v >= 1; --v) {
      StateMultiset pre, past;
      for (int u = 1; u < w; ++u) pre.add(states[u - 1], a.cap_k);
      const int hi = a.variant == CpgAutomaton::Variant::IncludeSelf ? v : v - 1;
      for (int u = w; u <= hi && u <= n; ++u)
        if (v >= w) past.add(states[u - 1], a.cap_k);
      next[v - 1] = a.step(states[v - 1], pre, past);
    }
    states = std::move(next);
  }
  return states;
}

}  // namespace

TEST_CASE("projection delta keeps the initial states") {
  CpgAutomaton a;
  a.m_total = 2;
  a.cap_k = 1;
  a.out_round = 3;
  a.out_len = 2;
  a.init = {{kBos, "11"}, {0, "01"}, {1, "10"}};
  a.delta = [](const Bits& s, const StateMultiset&, const StateMultiset&) { return s; };
  const auto g = TwoSortedGraph::make(ab, {"a"}, {"b"});
  const auto states = run(a, g);
  CHECK(states[0] == "01");
  CHECK(states[1] == "11");
  CHECK(states[2] == "10");
}

TEST_CASE("round zero output is the truncated initial state") {
  CpgAutomaton a;
  a.m_total = 3;
  a.cap_k = 1;
  a.out_round = 0;
  a.out_len = 2;
  a.init = {{kBos, "101"}, {0, "011"}, {1, "000"}};
  a.delta = [](const Bits& s, const StateMultiset&, const StateMultiset&) { return s; };
  const auto g = TwoSortedGraph::make(ab, {}, {"a"});
  CHECK(output(a, g, 1) == "10");
  CHECK(output(a, g, 2) == "01");
  CHECK_THROWS_AS(output(a, g, 0), std::invalid_argument);
}

TEST_CASE("count-a machine saturates at the cap") {
  const auto a = count_a_machine(2);
  const auto g = TwoSortedGraph::make(ab, {"a", "a", "a"}, {"b"});
  const auto states = run(a, g);
  CHECK(states[4] == "10");  // the suffix b-vertex sees >= 2 prefix a's
  const auto one = TwoSortedGraph::make(ab, {"a", "b"}, {"b"});
  CHECK(run(a, one)[3] == "01");
  const auto none = TwoSortedGraph::make(ab, {"b"}, {"b"});
  CHECK(run(a, none)[2] == "00");
}

TEST_CASE("output lengths") {
  const auto a = count_a_machine(2);
  const auto g = TwoSortedGraph::make(ab, {"a"}, {"b"});
  CHECK(output(a, g, 3) == "01");  // b = m_total: the full state
  auto one_bit = a;
  one_bit.out_len = 1;
  CHECK(output(one_bit, g, 3) == "0");
}

TEST_CASE("the BOS vertex's past multiset is always empty") {
  CpgAutomaton probe;
  probe.m_total = 1;
  probe.cap_k = 2;
  probe.out_round = 1;
  probe.out_len = 1;
  probe.init = {{kBos, "0"}, {0, "0"}, {1, "0"}};
  probe.delta = [](const Bits&, const StateMultiset&, const StateMultiset& past) -> Bits {
    return past.empty() ? "1" : "0";
  };
  for (const auto& g : enumerate_graphs(ab, 5)) {
    const auto states = run(probe, g);
    CHECK(states[static_cast<std::size_t>(g.bos_index() - 1)] == "1");
    // prefix vertices also have empty past multisets
    for (int v = 1; v < g.bos_index(); ++v) CHECK(states[static_cast<std::size_t>(v - 1)] == "1");
  }
  probe.variant = CpgAutomaton::Variant::IncludeSelf;
  // with self included the BOS vertex sees itself
  const auto g = TwoSortedGraph::make(ab, {"a"}, {});
  CHECK(run(probe, g)[1] == "0");
}

TEST_CASE("synchrony: evaluation order cannot matter") {
  SplitMix64 seeder(404);
  for (int trial = 0; trial < 5; ++trial) {
    const std::uint64_t seed = seeder.next();
    CpgAutomaton a;
    a.m_total = 2;
    a.cap_k = 1;
    a.out_round = 3;
    a.out_len = 2;
    a.init = {{kBos, "11"}, {0, "01"}, {1, "10"}};
    a.delta = [seed](const Bits& s, const StateMultiset& pre, const StateMultiset& past) -> Bits {
      std::uint64_t h = mix64(seed);
      for (char c : s) h = hash_combine(h, static_cast<std::uint64_t>(c));
      for (char c : pre.key()) h = hash_combine(h, static_cast<std::uint64_t>(c));
      for (char c : past.key()) h = hash_combine(h, static_cast<std::uint64_t>(c) + 7);
      Bits out = "00";
      out[0] = (h & 1) ? '1' : '0';
      out[1] = (h & 2) ? '1' : '0';
      return out;
    };
    for (const auto& g : enumerate_graphs(ab, 4)) CHECK(run(a, g) == reference_run(a, g));
  }
}

TEST_CASE("determinism enforced by memoized replay") {
  auto a = count_a_machine(2);
  auto inner = a.delta;
  auto memo = std::make_shared<std::map<std::tuple<Bits, std::string, std::string>, Bits>>();
  a.delta = [inner, memo](const Bits& s, const StateMultiset& pre,
                          const StateMultiset& past) -> Bits {
    const Bits out = inner(s, pre, past);
    auto [it, fresh] = memo->try_emplace({s, pre.key(), past.key()}, out);
    REQUIRE(it->second == out);
    return out;
  };
  for (const auto& g : enumerate_graphs(ab, 4)) {
    (void)run(a, g);
    (void)run(a, g);
  }
}

TEST_CASE("tabular machines reject unknown transitions") {
  CpgAutomaton::Table table;
  // single state "0" that maps to itself only when both multisets are empty
  table[{"0", "", ""}] = "0";
  auto a = CpgAutomaton::tabular(1, 1, 1, 1, CpgAutomaton::Variant::StrictPast,
                                 {{kBos, "0"}, {0, "0"}, {1, "0"}}, std::move(table));
  const auto lone = TwoSortedGraph::make(ab, {}, {});
  CHECK(output(a, lone, 1) == "0");
  const auto bigger = TwoSortedGraph::make(ab, {"a"}, {});
  CHECK_THROWS_AS(run(a, bigger), std::runtime_error);
}

TEST_CASE("cap soundness: raising the cap beyond what delta inspects is invisible") {
  // the count-a machine with cap 2 only distinguishes multiplicities < 2
  // fully; delta reads counts only up to 2, so any cap >= 2 acts the same
  const auto base = count_a_machine(2);
  for (std::uint64_t cap : {3ull, 5ull, 17ull}) {
    auto wider = base;
    wider.cap_k = cap;
    wider.delta = [](const Bits&, const StateMultiset& pre, const StateMultiset&) -> Bits {
      std::uint64_t count = 0;
      for (const auto& [s, c] : pre.items)
        if (s == "01") count += std::min<std::uint64_t>(c, 2);
      if (count == 0) return "00";
      if (count == 1) return "01";
      return "10";
    };
    for (const auto& g : enumerate_graphs(ab, 5)) CHECK(run(wider, g) == run(base, g));
  }
}

TEST_CASE("compose_postmap") {
  const auto base = count_a_machine(2);
  SECTION("identity keeps outputs and bumps the round") {
    const auto wrapped = compose_postmap(base, [](const Bits& b) { return b; }, 2);
    CHECK(wrapped.out_round == base.out_round + 1);
    for (const auto& g : enumerate_graphs(ab, 4))
      for (int v = g.bos_index(); v <= g.size(); ++v)
        CHECK(output(wrapped, g, v) == output(base, g, v));
  }
  SECTION("complement negates a one-bit verdict") {
    auto one_bit = base;
    one_bit.out_len = 1;
    const auto wrapped = compose_postmap(
        one_bit, [](const Bits& b) { return Bits(1, b[0] == '0' ? '1' : '0'); }, 1);
    for (const auto& g : enumerate_graphs(ab, 4))
      for (int v = g.bos_index(); v <= g.size(); ++v)
        CHECK(output(wrapped, g, v) != output(one_bit, g, v));
  }
  SECTION("postmaps can widen the output") {
    const auto wrapped = compose_postmap(
        base, [](const Bits& b) { return b + b + "1"; }, 5);
    const auto g = TwoSortedGraph::make(ab, {"a"}, {"b"});
    CHECK(output(wrapped, g, 3) == output(base, g, 3) + output(base, g, 3) + "1");
  }
}
