#pragma once

#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "trilab/automaton.hpp"
#include "trilab/logic.hpp"
#include "trilab/rng.hpp"
#include "trilab/similarity.hpp"
#include "trilab/transformer.hpp"

namespace trilab {

// ---------------------------------------------------------------------------
// A uniform view of the three model kinds. Transformers output float rows;
// tuples and automata output bit strings that reinterpret as float rows by
// splitting into cells of p+q+1 bits.
// ---------------------------------------------------------------------------

struct ModelRef {
  enum class Kind { Transformer, Tuple, Automaton };
  Kind kind = Kind::Transformer;
  const Transformer* transformer = nullptr;
  const FormulaTuple* tuple = nullptr;
  const CpgAutomaton* automaton = nullptr;
  FloatFormat fmt{1, 1};

  static ModelRef of(const Transformer& t) {
    ModelRef m;
    m.kind = Kind::Transformer;
    m.transformer = &t;
    m.fmt = t.cfg.fmt;
    return m;
  }
  static ModelRef of(const FormulaTuple& t, const FloatFormat& fmt) {
    ModelRef m;
    m.kind = Kind::Tuple;
    m.tuple = &t;
    m.fmt = fmt;
    return m;
  }
  static ModelRef of(const CpgAutomaton& a, const FloatFormat& fmt) {
    ModelRef m;
    m.kind = Kind::Automaton;
    m.automaton = &a;
    m.fmt = fmt;
    return m;
  }

  /// Raw bit-string output at a suffix vertex (bit-wise interpretation for
  /// transformers).
  std::string bits_at(const TwoSortedGraph& g, int v) const {
    switch (kind) {
      case Kind::Transformer: {
        const Matrix out = run(*transformer, g);
        return interpret_bitwise(fmt, out.row(v - g.bos_index()));
      }
      case Kind::Tuple:
        return eval_tuple(*tuple, g, v);
      case Kind::Automaton:
        return output(*automaton, g, v);
    }
    throw std::logic_error("unreachable");
  }

  /// Feature-level bit string (one bit per coordinate for transformers).
  std::string feature_bits_at(const TwoSortedGraph& g, int v) const {
    if (kind == Kind::Transformer) {
      const Matrix out = run(*transformer, g);
      return interpret_featurewise(fmt, out.row(v - g.bos_index()));
    }
    return bits_at(g, v);
  }

  /// Output as a float vector: transformers natively, the others by cell
  /// reinterpretation.
  std::vector<Fp> floats_at(const TwoSortedGraph& g, int v) const {
    if (kind == Kind::Transformer) {
      const Matrix out = run(*transformer, g);
      const auto row = out.row(v - g.bos_index());
      return std::vector<Fp>(row.begin(), row.end());
    }
    const std::string bits = bits_at(g, v);
    const int cell = fmt.total_bits();
    if (bits.size() % static_cast<std::size_t>(cell) != 0)
      throw std::invalid_argument("output is not a whole number of float cells");
    std::vector<Fp> floats;
    for (std::size_t i = 0; i + static_cast<std::size_t>(cell) <= bits.size(); i += static_cast<std::size_t>(cell)) {
      std::uint64_t pattern = 0;
      for (int j = 0; j < cell; ++j) pattern = pattern * 2 + (bits[i + static_cast<std::size_t>(j)] == '1');
      floats.push_back(Fp::from_bits(fmt, pattern));
    }
    return floats;
  }

  /// Output under the final-softmax reading: softmax for transformers, bare
  /// float reinterpretation for tuples and automata (their translations
  /// already bake the softmax in).
  std::vector<Fp> sim_output_at(const TwoSortedGraph& g, int v) const {
    if (kind == Kind::Transformer) {
      const Matrix out = run(*transformer, g);
      return softmax_row(fmt, out.row(v - g.bos_index()));
    }
    return floats_at(g, v);
  }

  int float_width() const {
    switch (kind) {
      case Kind::Transformer: return transformer->cfg.d_out;
      case Kind::Tuple: {
        const int cell = fmt.total_bits();
        return static_cast<int>(tuple->formulas.size()) / cell;
      }
      case Kind::Automaton: return automaton->out_len / fmt.total_bits();
    }
    return 0;
  }
};

// ---------------------------------------------------------------------------
// Autoregressive generation
// ---------------------------------------------------------------------------

struct SelectPolicy {
  enum class Kind { ArgmaxLowIndex, SeededSample };
  Kind kind = Kind::ArgmaxLowIndex;
  std::uint64_t seed = 0;

  static SelectPolicy argmax() { return {}; }
  static SelectPolicy sample(std::uint64_t seed) {
    SelectPolicy p;
    p.kind = Kind::SeededSample;
    p.seed = seed;
    return p;
  }
};

struct GenerationStep {
  int suffix_len = 1;         // |G_s| before this step's token was appended
  std::vector<Fp> dist;       // over Sigma then EOS
  int choice = 0;             // index into the distribution; size(Sigma) = EOS
};

struct GenerationTrace {
  enum class Termination { Eos, MaxSteps };
  std::vector<GenerationStep> steps;
  Termination reason = Termination::MaxSteps;

  std::vector<std::string> tokens(const Vocab& vocab) const {
    std::vector<std::string> out;
    for (const auto& s : steps)
      out.push_back(s.choice == static_cast<int>(vocab.size()) ? kEosName
                                                               : vocab.name(s.choice));
    return out;
  }
};

/// The next-token distribution: softmax of the last suffix position's output
/// row, for any of the three model kinds.
inline std::vector<Fp> step_distribution(const ModelRef& model, const Vocab& vocab,
                                         const TwoSortedGraph& g) {
  if (model.float_width() != static_cast<int>(vocab.size()) + 1)
    throw std::invalid_argument("model output width does not match Sigma plus EOS");
  const std::vector<Fp> logits = model.floats_at(g, g.size());
  return softmax_row(model.fmt, logits);
}

namespace detail {

inline int select_argmax(const FloatFormat&, const std::vector<Fp>& dist) {
  FpValueLess less;
  std::optional<int> best;
  for (std::size_t i = 0; i < dist.size(); ++i) {
    if (dist[i].is_nan()) continue;
    if (!best || less(dist[static_cast<std::size_t>(*best)], dist[i]))
      best = static_cast<int>(i);
  }
  return best.value_or(0);
}

inline int select_from(const FloatFormat& fmt, const std::vector<Fp>& dist,
                       SelectPolicy::Kind kind, SplitMix64& rng) {
  if (kind == SelectPolicy::Kind::ArgmaxLowIndex) return select_argmax(fmt, dist);
  Rational total(0);
  std::vector<Rational> weights;
  for (const Fp& v : dist) {
    Rational w(0);
    if (v.is_finite() && !v.negative() && !v.is_zero()) w = v.value(fmt);
    weights.push_back(w);
    total += w;
  }
  if (total == 0) return select_argmax(fmt, dist);
  const Rational u = Rational(BigInt(rng.next()), BigInt(1) << 64) * total;
  Rational acc(0);
  for (std::size_t i = 0; i < weights.size(); ++i) {
    acc += weights[i];
    if (u < acc) return static_cast<int>(i);
  }
  return static_cast<int>(weights.size()) - 1;
}

}  // namespace detail

/// The four-step loop: evaluate, softmax at the last position, select,
/// append; stops at EOS or after max_steps tokens.
inline GenerationTrace generate(const ModelRef& model, const Vocab& vocab,
                                const std::vector<Token>& prefix, const SelectPolicy& policy,
                                int max_steps) {
  if (max_steps < 1) throw std::invalid_argument("max_steps >= 1 required");
  GenerationTrace trace;
  SplitMix64 rng(policy.seed);
  TwoSortedGraph g(prefix, {});
  for (int t = 1; t <= max_steps; ++t) {
    const std::vector<Fp> dist = step_distribution(model, vocab, g);
    const int choice = detail::select_from(model.fmt, dist, policy.kind, rng);
    trace.steps.push_back({g.suffix_len(), dist, choice});
    if (choice == static_cast<int>(vocab.size())) {
      trace.reason = GenerationTrace::Termination::Eos;
      return trace;
    }
    g = g.with_appended(choice);
  }
  trace.reason = GenerationTrace::Termination::MaxSteps;
  return trace;
}

// ---------------------------------------------------------------------------
// Similarity equivalence checking
// ---------------------------------------------------------------------------

struct EquivalenceViolation {
  TwoSortedGraph graph;
  int vertex = 0;
  std::vector<Fp> out_a, out_b;
};

struct EquivalenceReport {
  bool equivalent = true;
  std::vector<EquivalenceViolation> violations;
  std::size_t points = 0;
  std::size_t vacuous = 0;    // points where nothing in the range is related
  std::size_t range_size = 0; // of the checked direction's target
};

/// The conditional check at every corpus point: whenever some output in b's
/// corpus range is related to a's output, b must produce such an output
/// there. The range is approximated by b's outputs over the same corpus.
inline EquivalenceReport equivalent_wrt(const ModelRef& a, const ModelRef& b,
                                        const SimilarityRelation& sim, const Vocab& vocab,
                                        int corpus_bound, bool symmetric = false) {
  const auto corpus = enumerate_graphs(vocab, corpus_bound);
  auto one_direction = [&](const ModelRef& x, const ModelRef& y, EquivalenceReport& rep) {
    std::vector<std::vector<Fp>> range;
    std::set<std::string> seen;
    auto key_of = [&](const std::vector<Fp>& v) {
      std::string k;
      for (const Fp& f : v) k += fp_to_hex(y.fmt, f) + ",";
      return k;
    };
    for (const auto& g : corpus)
      for (int v = g.bos_index(); v <= g.size(); ++v) {
        const auto out = y.sim_output_at(g, v);
        if (seen.insert(key_of(out)).second) range.push_back(out);
      }
    rep.range_size = range.size();
    for (const auto& g : corpus) {
      for (int v = g.bos_index(); v <= g.size(); ++v) {
        ++rep.points;
        const auto va = x.sim_output_at(g, v);
        bool possible = false;
        for (const auto& u : range)
          if (sim.related(x.fmt, va, u)) {
            possible = true;
            break;
          }
        if (!possible) {
          ++rep.vacuous;
          continue;
        }
        const auto vb = y.sim_output_at(g, v);
        if (!sim.related(x.fmt, va, vb)) {
          rep.equivalent = false;
          rep.violations.push_back({g, v, va, vb});
        }
      }
    }
  };
  EquivalenceReport rep;
  one_direction(a, b, rep);
  if (symmetric) one_direction(b, a, rep);
  return rep;
}

}  // namespace trilab
