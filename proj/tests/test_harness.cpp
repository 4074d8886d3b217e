#include <catch2/catch_amalgamated.hpp>

#include "support.hpp"
#include "trilab/harness.hpp"

using namespace trilab;

namespace {
const FloatFormat f33(3, 3);
const Vocab ab({"a", "b"});
}  // namespace

TEST_CASE("diff_check: a model against itself passes") {
  testing::RandomModelSpec spec;
  const Transformer t = testing::random_transformer(spec, ab, 3);
  const auto report =
      diff_check(ModelRef::of(t), ModelRef::of(t), Interpretation::bitwise(), ab, 4);
  CHECK(report.pass);
  CHECK(report.points > 0);
  CHECK(report.mismatches.empty());
}

TEST_CASE("diff_check: transformer vs its automaton image") {
  testing::RandomModelSpec spec;
  spec.h = 2;
  const Transformer t = testing::random_transformer(spec, ab, 4);
  const auto a = transformer_to_automaton(t);
  const auto report =
      diff_check(ModelRef::of(t), ModelRef::of(a, f33), Interpretation::bitwise(), ab, 4);
  CHECK(report.pass);
}

TEST_CASE("diff_check: corrupted weight yields a minimal witness") {
  FormulaTuple t;
  t.formulas = {parse_formula(ab, "<P>[a]")};
  auto compiled = logic_to_transformer(t, f33, ab);
  // sabotage: flip the existence head's value scale so the gadget misfires
  for (auto& layer : compiled.model.dec)
    for (auto& head : layer.masked_attn.heads)
      for (auto& v : head.wv.data)
        if (v == encode_real(f33, f33.max_fin_value())) v = Fp::zero();
  const auto report = diff_check(ModelRef::of(t, f33), ModelRef::of(compiled.model),
                                 Interpretation::featurewise(), ab, 5);
  REQUIRE_FALSE(report.pass);
  const Mismatch smallest = minimize(report);
  CHECK(smallest.graph.size() <= 3);  // a short witness exists and is found
  // the minimal witness is no larger than any other mismatch
  for (const auto& m : report.mismatches) CHECK(smallest.graph.size() <= m.graph.size());
}

TEST_CASE("diff_check: corrupted counting gadget yields a near-k witness") {
  FormulaTuple t;
  t.formulas = {parse_formula(ab, "<G>=2[a]")};
  auto compiled = logic_to_transformer(t, f33, ab);
  for (auto& layer : compiled.model.enc)
    for (auto& head : layer.self_attn.heads)
      for (auto& v : head.wv.data)
        if (!v.is_zero() && v != encode_real(f33, f33.max_fin_value())) v = Fp::zero();
  for (auto& layer : compiled.model.dec)
    for (auto& head : layer.cross_attn.heads)
      for (auto& v : head.wv.data)
        if (!v.is_zero() && v != encode_real(f33, f33.max_fin_value())) v = Fp::zero();
  const auto report = diff_check(ModelRef::of(t, f33), ModelRef::of(compiled.model),
                                 Interpretation::featurewise(), ab, 5);
  REQUIRE_FALSE(report.pass);
  // the sabotage makes the model report "at least 2" whenever at least one
  // prefix vertex satisfies, so the smallest witness has a one-a prefix
  const Mismatch smallest = minimize(report);
  CHECK(smallest.graph.prefix_len() >= 1);
  CHECK(smallest.graph.size() <= 3);
}

TEST_CASE("minimize on a passing report throws") {
  testing::RandomModelSpec spec;
  const Transformer t = testing::random_transformer(spec, ab, 5);
  const auto report =
      diff_check(ModelRef::of(t), ModelRef::of(t), Interpretation::bitwise(), ab, 3);
  CHECK_THROWS_AS(minimize(report), std::invalid_argument);
}

TEST_CASE("parallel and serial sweeps agree") {
  testing::RandomModelSpec spec;
  spec.h = 2;
  const Transformer t = testing::random_transformer(spec, ab, 6);
  const auto a = transformer_to_automaton(t);
  const auto serial =
      diff_check(ModelRef::of(t), ModelRef::of(a, f33), Interpretation::bitwise(), ab, 4, 1);
  const auto parallel =
      diff_check(ModelRef::of(t), ModelRef::of(a, f33), Interpretation::bitwise(), ab, 4, 4);
  CHECK(serial.pass == parallel.pass);
  CHECK(serial.points == parallel.points);
  REQUIRE(serial.mismatches.size() == parallel.mismatches.size());
  for (std::size_t i = 0; i < serial.mismatches.size(); ++i) {
    CHECK(serial.mismatches[i].graph == parallel.mismatches[i].graph);
    CHECK(serial.mismatches[i].vertex == parallel.mismatches[i].vertex);
  }
}

TEST_CASE("similarity interpretation inside diff_check") {
  FormulaTuple small;
  small.formulas = {parse_formula(ab, "a")};
  const auto compiled = logic_to_transformer(small, f33, ab);
  const auto sa = transformer_softmax_to_automaton(compiled.model, SimilarityRelation::exact());
  const auto report =
      diff_check(ModelRef::of(compiled.model), ModelRef::of(sa, f33),
                 Interpretation::similarity(SimilarityRelation::exact()), ab, 4);
  CHECK(report.pass);
}

TEST_CASE("property suites") {
  const auto report = property_suites(f33, 2026, ab, 5);
  for (const auto& r : report.results) {
    CAPTURE(r.name, r.detail);
    CHECK(r.pass);
  }
  CHECK(report.pass);
  REQUIRE(report.results.size() == 5);
  CHECK(report.results[0].name == "saturation-bound");
  CHECK(report.results[4].name == "type-lemma-anchor");
}

TEST_CASE("random automata are deterministic") {
  const auto a = random_cpg_automaton(7, 3, 1, 2, ab);
  const auto g = TwoSortedGraph::make(ab, {"a", "b"}, {"b"});
  CHECK(run(a, g) == run(a, g));
  const auto b = random_cpg_automaton(7, 3, 1, 2, ab);
  CHECK(run(a, g) == run(b, g));
  const auto c = random_cpg_automaton(8, 3, 1, 2, ab);
  CHECK(run(a, g) != run(c, g));
}
