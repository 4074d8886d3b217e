#pragma once

#include <algorithm>
#include <string>
#include <thread>
#include <vector>

#include "trilab/compile.hpp"
#include "trilab/generate.hpp"

namespace trilab {

// ---------------------------------------------------------------------------
// Exhaustive differential checking over the enumerated corpus.
// ---------------------------------------------------------------------------

struct Interpretation {
  enum class Kind { BitWise, FeatureWise, SimilarityWrt };
  Kind kind = Kind::BitWise;
  SimilarityRelation sim;

  static Interpretation bitwise() { return {}; }
  static Interpretation featurewise() {
    Interpretation i;
    i.kind = Kind::FeatureWise;
    return i;
  }
  static Interpretation similarity(SimilarityRelation s) {
    Interpretation i;
    i.kind = Kind::SimilarityWrt;
    i.sim = std::move(s);
    return i;
  }

  std::string name() const {
    switch (kind) {
      case Kind::BitWise: return "bitwise";
      case Kind::FeatureWise: return "featurewise";
      case Kind::SimilarityWrt: return "similarity";
    }
    return "?";
  }
};

struct Mismatch {
  TwoSortedGraph graph;
  int vertex = 0;
  std::string out_a, out_b;
};

struct DiffReport {
  bool pass = true;
  std::string interpretation;
  int max_len = 0;
  std::vector<std::string> vocab_tokens;
  std::vector<Mismatch> mismatches;
  std::size_t graphs = 0;
  std::size_t points = 0;
  std::size_t vacuous = 0;  // similarity mode only
};

namespace detail {

inline std::string serialize_floats(const FloatFormat& fmt, const std::vector<Fp>& v) {
  std::string out;
  for (const Fp& f : v) {
    if (!out.empty()) out += ",";
    out += fp_to_hex(fmt, f);
  }
  return out;
}

inline std::string point_output(const ModelRef& m, const Interpretation& interp,
                                const TwoSortedGraph& g, int v) {
  switch (interp.kind) {
    case Interpretation::Kind::BitWise:
      return m.bits_at(g, v);
    case Interpretation::Kind::FeatureWise:
      try {
        return m.feature_bits_at(g, v);
      } catch (const std::domain_error& e) {
        return std::string("<non-boolean: ") + e.what() + ">";
      }
    case Interpretation::Kind::SimilarityWrt:
      return serialize_floats(m.fmt, m.sim_output_at(g, v));
  }
  throw std::logic_error("unreachable");
}

}  // namespace detail

/// Compares a and b at every suffix vertex of every graph up to max_len.
/// Under bit-wise or feature-wise interpretation the outputs must be equal
/// strings; under a similarity relation the one-directional conditional of
/// the relaxed equivalence is checked (a as source, b as target). The sweep
/// may run on several threads; the report is independent of the thread
/// count.
inline DiffReport diff_check(const ModelRef& a, const ModelRef& b,
                             const Interpretation& interp, const Vocab& vocab, int max_len,
                             int jobs = 1) {
  const auto corpus = enumerate_graphs(vocab, max_len);
  DiffReport report;
  report.interpretation = interp.name();
  report.max_len = max_len;
  report.vocab_tokens = vocab.tokens;
  report.graphs = corpus.size();

  if (interp.kind == Interpretation::Kind::SimilarityWrt) {
    // delegated: the range computation is corpus-global
    const EquivalenceReport eq = equivalent_wrt(a, b, interp.sim, vocab, max_len);
    report.points = eq.points;
    report.vacuous = eq.vacuous;
    for (const auto& v : eq.violations)
      report.mismatches.push_back({v.graph, v.vertex,
                                   detail::serialize_floats(a.fmt, v.out_a),
                                   detail::serialize_floats(b.fmt, v.out_b)});
    report.pass = report.mismatches.empty();
    return report;
  }

  struct PerGraph {
    std::vector<Mismatch> mismatches;
    std::size_t points = 0;
  };
  std::vector<PerGraph> results(corpus.size());
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto& g = corpus[i];
      for (int v = g.bos_index(); v <= g.size(); ++v) {
        ++results[i].points;
        const std::string oa = detail::point_output(a, interp, g, v);
        const std::string ob = detail::point_output(b, interp, g, v);
        if (oa != ob) results[i].mismatches.push_back({g, v, oa, ob});
      }
    }
  };
  const int n_threads = std::max(1, jobs);
  if (n_threads == 1) {
    work(0, corpus.size());
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (corpus.size() + n_threads - 1) / static_cast<std::size_t>(n_threads);
    for (int t = 0; t < n_threads; ++t) {
      const std::size_t begin = std::min(corpus.size(), static_cast<std::size_t>(t) * chunk);
      const std::size_t end = std::min(corpus.size(), begin + chunk);
      pool.emplace_back(work, begin, end);
    }
    for (auto& th : pool) th.join();
  }
  for (const auto& r : results) {
    report.points += r.points;
    for (const auto& m : r.mismatches) report.mismatches.push_back(m);
  }
  report.pass = report.mismatches.empty();
  return report;
}

/// The smallest failing point by (size, prefix, suffix, vertex).
inline Mismatch minimize(const DiffReport& report) {
  if (report.pass || report.mismatches.empty())
    throw std::invalid_argument("minimize: the report passed");
  auto less = [](const Mismatch& x, const Mismatch& y) {
    if (x.graph.size() != y.graph.size()) return x.graph.size() < y.graph.size();
    if (x.graph.prefix() != y.graph.prefix()) return x.graph.prefix() < y.graph.prefix();
    if (x.graph.suffix_tail() != y.graph.suffix_tail())
      return x.graph.suffix_tail() < y.graph.suffix_tail();
    return x.vertex < y.vertex;
  };
  return *std::min_element(report.mismatches.begin(), report.mismatches.end(), less);
}

// ---------------------------------------------------------------------------
// Property suites
// ---------------------------------------------------------------------------

/// An intensional automaton whose transition function is a keyed hash of its
/// arguments: maximally unstructured but pure, the adversarial instance for
/// the type-lemma check.
inline CpgAutomaton random_cpg_automaton(std::uint64_t seed, int m_bits, std::uint64_t cap,
                                         int rounds, const Vocab& vocab,
                                         CpgAutomaton::Variant variant =
                                             CpgAutomaton::Variant::StrictPast) {
  CpgAutomaton a;
  a.m_total = m_bits;
  a.cap_k = cap;
  a.out_round = rounds;
  a.out_len = m_bits;
  a.variant = variant;
  a.kind = "seeded-hash";
  auto state_of = [seed, m_bits](std::uint64_t h) {
    Bits out;
    for (int i = 0; i < m_bits; ++i) out += (mix64(h + static_cast<std::uint64_t>(i)) & 1) ? '1' : '0';
    return out;
  };
  for (Token t = -1; t < static_cast<Token>(vocab.size()); ++t)
    a.init[t] = state_of(hash_combine(seed, static_cast<std::uint64_t>(t + 7)));
  a.delta = [seed, state_of](const Bits& s, const StateMultiset& pre,
                             const StateMultiset& past) -> Bits {
    std::uint64_t h = hash_combine(seed, 0x5eedULL);
    for (char c : s) h = hash_combine(h, static_cast<std::uint64_t>(c));
    for (char c : pre.key()) h = hash_combine(h, static_cast<std::uint64_t>(c) + 3);
    for (char c : past.key()) h = hash_combine(h, static_cast<std::uint64_t>(c) + 11);
    return state_of(h);
  };
  return a;
}

struct PropertyResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

struct PropertySuiteReport {
  bool pass = true;
  std::vector<PropertyResult> results;

  void add(const std::string& name, bool ok, const std::string& detail) {
    results.push_back({name, ok, detail});
    pass = pass && ok;
  }
};

/// Format-level property battery: the saturation bound, the per-k underflow
/// verdicts with the compiler-consistency assertion, the strict/non-strict
/// separation witness, and the randomized type-lemma check.
inline PropertySuiteReport property_suites(const FloatFormat& fmt, std::uint64_t seed,
                                           const Vocab& vocab, int corpus_bound = 6) {
  PropertySuiteReport report;

  {
    const std::uint64_t kstar = saturation_bound(fmt);
    const auto sat = validate_saturation(fmt, kstar, 10000, seed);
    report.add("saturation-bound", sat.holds,
               "k* = " + std::to_string(kstar) + ", 10000 trials");
  }
  {
    std::string verdicts;
    std::vector<std::uint64_t> literal_valid;
    for (std::uint64_t k : representable_half_ks(fmt, 32)) {
      const auto r = validate_underflow_k(fmt, k);
      verdicts += std::to_string(k) + (r.valid ? ":ok " : ":no ");
      if (r.valid) literal_valid.push_back(k);
    }
    report.add("underflow-threshold-verdicts", true, verdicts);
    // consistency: the compiler's supported set equals the set recomputed
    // from the gadget validators
    std::vector<std::uint64_t> recomputed{0};
    for (std::uint64_t k = 1; k <= 16; ++k)
      if (gadget::count_strategy(fmt, k)) recomputed.push_back(k);
    const bool consistent = recomputed == gadget::supported_counts(fmt, 16);
    std::string sup;
    for (auto k : recomputed) sup += std::to_string(k) + " ";
    report.add("supported-count-consistency", consistent, "supported: " + sup);
  }
  {
    // separation witness: strict <P>[a] vs non-strict <P>=1[a]
    bool found = false;
    std::string where;
    const auto strict = f_psuf(f_prop(0));
    const auto nonstrict = f_psuf_geq(1, f_prop(0));
    for (const auto& g : enumerate_graphs(vocab, 4)) {
      for (int v = g.bos_index(); v <= g.size() && !found; ++v) {
        if (eval(strict, g, v, LogicVariant::Core) !=
            eval(nonstrict, g, v, LogicVariant::NonStrict)) {
          found = true;
          where = g.to_string(vocab) + " at vertex " + std::to_string(v);
        }
      }
      if (found) break;
    }
    report.add("strict-vs-nonstrict-separation", found, where);
  }
  {
    // type lemma: equal (k=1, d=2) types get equal states at rounds <= 2
    // under any automaton with cap 1
    const std::uint32_t k = 1, d = 2;
    const auto corpus = enumerate_graphs(vocab, corpus_bound);
    bool ok = true;
    std::size_t pairs = 0;
    for (std::uint64_t machine = 0; machine < 5 && ok; ++machine) {
      const auto a = random_cpg_automaton(hash_combine(seed, machine), 3, k, d, vocab);
      // bucket states by type, per round
      for (std::uint32_t round = 0; round <= d && ok; ++round) {
        std::map<TypeValue, Bits> bucket;
        for (const auto& g : corpus) {
          auto partial = a;
          partial.out_round = static_cast<int>(round);
          const auto states = run(partial, g);
          const auto types = types_of_all(g, k, round);
          for (int v = 1; v <= g.size(); ++v) {
            auto [it, fresh] =
                bucket.emplace(types[round][static_cast<std::size_t>(v - 1)],
                               states[static_cast<std::size_t>(v - 1)]);
            if (!fresh) {
              ++pairs;
              if (it->second != states[static_cast<std::size_t>(v - 1)]) ok = false;
            }
          }
        }
      }
    }
    report.add("type-lemma-anchor", ok,
               std::to_string(pairs) + " bucketed pairs over 5 seeded machines");
  }
  return report;
}

}  // namespace trilab
