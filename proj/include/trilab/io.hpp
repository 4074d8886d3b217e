#pragma once

#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "trilab/compile.hpp"
#include "trilab/generate.hpp"
#include "trilab/harness.hpp"

namespace trilab::io {

using nlohmann::json;

// Model and data files are UTF-8 JSON; floats are bare hex bit patterns
// ("0x1c") with "nan", "+inf", "-inf" for the specials. The format lives in
// the file header.

// -- vocab --------------------------------------------------------------------

inline json vocab_to_json(const Vocab& v) { return json{{"tokens", v.tokens}}; }

inline Vocab vocab_from_json(const json& j) {
  return Vocab(j.at("tokens").get<std::vector<std::string>>());
}

// -- graphs -------------------------------------------------------------------

inline json graph_to_json(const TwoSortedGraph& g, const Vocab& vocab) {
  std::vector<std::string> prefix, suffix;
  for (Token t : g.prefix()) prefix.push_back(vocab.name(t));
  for (Token t : g.suffix_tail()) suffix.push_back(vocab.name(t));
  return json{{"prefix", prefix}, {"suffix", suffix}};
}

inline TwoSortedGraph graph_from_json(const json& j, const Vocab& vocab) {
  return TwoSortedGraph::make(vocab, j.at("prefix").get<std::vector<std::string>>(),
                              j.at("suffix").get<std::vector<std::string>>());
}

// -- floats and matrices -------------------------------------------------------

inline json fp_to_json(const FloatFormat& fmt, const Fp& v) { return fp_to_hex(fmt, v); }
inline Fp fp_from_json(const FloatFormat& fmt, const json& j) {
  return fp_from_hex(fmt, j.get<std::string>());
}

inline json matrix_to_json(const FloatFormat& fmt, const Matrix& m) {
  json rows = json::array();
  for (int i = 0; i < m.rows; ++i) {
    json row = json::array();
    for (int j = 0; j < m.cols; ++j) row.push_back(fp_to_hex(fmt, m.at(i, j)));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Matrix matrix_from_json(const FloatFormat& fmt, const json& j) {
  Matrix m(static_cast<int>(j.size()), j.empty() ? 0 : static_cast<int>(j.at(0).size()));
  for (int i = 0; i < m.rows; ++i)
    for (int c = 0; c < m.cols; ++c) m.at(i, c) = fp_from_json(fmt, j.at(i).at(c));
  return m;
}

inline json vec_to_json(const FloatFormat& fmt, const std::vector<Fp>& v) {
  json out = json::array();
  for (const Fp& x : v) out.push_back(fp_to_hex(fmt, x));
  return out;
}

inline std::vector<Fp> vec_from_json(const FloatFormat& fmt, const json& j) {
  std::vector<Fp> out;
  for (const auto& x : j) out.push_back(fp_from_json(fmt, x));
  return out;
}

// -- transformers ----------------------------------------------------------------

inline json transformer_to_json(const Transformer& t) {
  const FloatFormat& fmt = t.cfg.fmt;
  json j;
  j["type"] = "transformer";
  j["p"] = fmt.p;
  j["q"] = fmt.q;
  j["d"] = t.cfg.d;
  j["d_k"] = t.cfg.d_k;
  j["d_v"] = t.cfg.d_v;
  j["d_ff"] = t.cfg.d_ff;
  j["d_out"] = t.cfg.d_out;
  j["h"] = t.cfg.h;
  j["L1"] = t.cfg.L1;
  j["L2"] = t.cfg.L2;
  j["mask_mode"] = t.cfg.mask == MaskMode::Strict ? "strict" : "non-strict";
  j["ln_mode"] = t.cfg.ln == LnMode::None ? "none" : (t.cfg.ln == LnMode::Pre ? "pre" : "post");
  json emb = json::object();
  for (const auto& [tok, vec] : t.embedding)
    emb[tok == kBos ? kBosName : "t" + std::to_string(tok)] = vec_to_json(fmt, vec);
  j["embedding"] = std::move(emb);
  auto attn_json = [&](const AttnBlock& b) {
    json heads = json::array();
    for (const auto& hw : b.heads)
      heads.push_back(json{{"wq", matrix_to_json(fmt, hw.wq)},
                           {"wk", matrix_to_json(fmt, hw.wk)},
                           {"wv", matrix_to_json(fmt, hw.wv)}});
    return json{{"heads", std::move(heads)}, {"wo", matrix_to_json(fmt, b.wo)}};
  };
  auto mlp_json = [&](const MlpWeights& m) {
    return json{{"w1", matrix_to_json(fmt, m.w1)},
                {"b1", vec_to_json(fmt, m.b1)},
                {"w2", matrix_to_json(fmt, m.w2)},
                {"b2", vec_to_json(fmt, m.b2)}};
  };
  auto ln_json = [&](const LnParams& p) {
    return json{{"gamma", fp_to_hex(fmt, p.gamma)},
                {"beta", fp_to_hex(fmt, p.beta)},
                {"eps", fp_to_hex(fmt, p.eps)}};
  };
  json enc = json::array();
  for (const auto& layer : t.enc) {
    json l{{"self_attn", attn_json(layer.self_attn)}, {"mlp", mlp_json(layer.mlp)}};
    if (t.cfg.ln != LnMode::None) {
      l["ln_attn"] = ln_json(layer.ln_attn);
      l["ln_mlp"] = ln_json(layer.ln_mlp);
    }
    enc.push_back(std::move(l));
  }
  j["encoder"] = std::move(enc);
  json dec = json::array();
  for (const auto& layer : t.dec) {
    json l{{"masked_attn", attn_json(layer.masked_attn)},
           {"cross_attn", attn_json(layer.cross_attn)},
           {"mlp", mlp_json(layer.mlp)}};
    if (t.cfg.ln != LnMode::None) {
      l["ln_masked"] = ln_json(layer.ln_masked);
      l["ln_cross"] = ln_json(layer.ln_cross);
      l["ln_mlp"] = ln_json(layer.ln_mlp);
    }
    dec.push_back(std::move(l));
  }
  j["decoder"] = std::move(dec);
  j["w_out"] = matrix_to_json(fmt, t.w_out);
  j["b_out"] = vec_to_json(fmt, t.b_out);
  return j;
}

inline Transformer transformer_from_json(const json& j) {
  Transformer t;
  const FloatFormat fmt(j.at("p").get<int>(), j.at("q").get<int>());
  t.cfg.fmt = fmt;
  t.cfg.d = j.at("d").get<int>();
  t.cfg.d_k = j.at("d_k").get<int>();
  t.cfg.d_v = j.at("d_v").get<int>();
  t.cfg.d_ff = j.at("d_ff").get<int>();
  t.cfg.d_out = j.at("d_out").get<int>();
  t.cfg.h = j.at("h").get<int>();
  t.cfg.L1 = j.at("L1").get<int>();
  t.cfg.L2 = j.at("L2").get<int>();
  t.cfg.mask = j.at("mask_mode").get<std::string>() == "strict" ? MaskMode::Strict
                                                                : MaskMode::NonStrict;
  const std::string ln = j.at("ln_mode").get<std::string>();
  t.cfg.ln = ln == "none" ? LnMode::None : (ln == "pre" ? LnMode::Pre : LnMode::Post);
  for (const auto& [key, value] : j.at("embedding").items()) {
    const Token tok = key == kBosName ? kBos : std::stoi(key.substr(1));
    t.embedding.emplace_back(tok, vec_from_json(fmt, value));
  }
  std::sort(t.embedding.begin(), t.embedding.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  auto attn_from = [&](const json& b) {
    AttnBlock block;
    for (const auto& hw : b.at("heads"))
      block.heads.push_back(HeadWeights{matrix_from_json(fmt, hw.at("wq")),
                                        matrix_from_json(fmt, hw.at("wk")),
                                        matrix_from_json(fmt, hw.at("wv"))});
    block.wo = matrix_from_json(fmt, b.at("wo"));
    return block;
  };
  auto mlp_from = [&](const json& m) {
    return MlpWeights{matrix_from_json(fmt, m.at("w1")), vec_from_json(fmt, m.at("b1")),
                      matrix_from_json(fmt, m.at("w2")), vec_from_json(fmt, m.at("b2"))};
  };
  auto ln_from = [&](const json& l, const char* key) {
    LnParams p{Fp::zero(), Fp::zero(), Fp::zero()};
    if (l.contains(key)) {
      p.gamma = fp_from_json(fmt, l.at(key).at("gamma"));
      p.beta = fp_from_json(fmt, l.at(key).at("beta"));
      p.eps = fp_from_json(fmt, l.at(key).at("eps"));
    }
    return p;
  };
  for (const auto& l : j.at("encoder")) {
    EncoderLayerWeights el;
    el.self_attn = attn_from(l.at("self_attn"));
    el.mlp = mlp_from(l.at("mlp"));
    el.ln_attn = ln_from(l, "ln_attn");
    el.ln_mlp = ln_from(l, "ln_mlp");
    t.enc.push_back(std::move(el));
  }
  for (const auto& l : j.at("decoder")) {
    DecoderLayerWeights dl;
    dl.masked_attn = attn_from(l.at("masked_attn"));
    dl.cross_attn = attn_from(l.at("cross_attn"));
    dl.mlp = mlp_from(l.at("mlp"));
    dl.ln_masked = ln_from(l, "ln_masked");
    dl.ln_cross = ln_from(l, "ln_cross");
    dl.ln_mlp = ln_from(l, "ln_mlp");
    t.dec.push_back(std::move(dl));
  }
  t.w_out = matrix_from_json(fmt, j.at("w_out"));
  t.b_out = vec_from_json(fmt, j.at("b_out"));
  return t;
}

// -- similarity relations --------------------------------------------------------

inline json similarity_to_json(const FloatFormat& fmt, const SimilarityRelation& s) {
  switch (s.kind) {
    case SimilarityRelation::Kind::Exact: return json{{"kind", "exact"}};
    case SimilarityRelation::Kind::Full: return json{{"kind", "full"}};
    case SimilarityRelation::Kind::Empty: return json{{"kind", "empty"}};
    case SimilarityRelation::Kind::Eps:
      return json{{"kind", "eps"}, {"eps", fp_to_hex(fmt, s.eps)}};
    case SimilarityRelation::Kind::Pairs: {
      json pairs = json::array();
      for (const auto& [a, b] : s.pairs)
        pairs.push_back(json::array({vec_to_json(fmt, a), vec_to_json(fmt, b)}));
      return json{{"kind", "pairs"}, {"pairs", std::move(pairs)}};
    }
  }
  throw std::logic_error("unreachable");
}

inline SimilarityRelation similarity_from_json(const FloatFormat& fmt, const json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "exact") return SimilarityRelation::exact();
  if (kind == "full") return SimilarityRelation::full();
  if (kind == "empty") return SimilarityRelation::empty();
  if (kind == "eps") return SimilarityRelation::eps_close(fp_from_json(fmt, j.at("eps")));
  if (kind == "pairs") {
    std::vector<std::pair<std::vector<Fp>, std::vector<Fp>>> pairs;
    for (const auto& p : j.at("pairs"))
      pairs.emplace_back(vec_from_json(fmt, p.at(0)), vec_from_json(fmt, p.at(1)));
    return SimilarityRelation::explicit_pairs(std::move(pairs));
  }
  throw std::invalid_argument("unknown similarity kind: " + kind);
}

// -- automata ----------------------------------------------------------------------

inline json multiset_key_to_json(const std::string& key) { return key; }

inline json tabular_automaton_to_json(const CpgAutomaton& a, const Vocab& vocab) {
  if (!a.table) throw std::invalid_argument("only tabular automata serialize directly");
  json j;
  j["type"] = "automaton";
  j["kind"] = "tabular";
  j["m_total"] = a.m_total;
  j["k"] = a.cap_k;
  j["n"] = a.out_round;
  j["b"] = a.out_len;
  j["variant"] =
      a.variant == CpgAutomaton::Variant::StrictPast ? "strict-past" : "include-self";
  json pi = json::object();
  for (const auto& [tok, bits] : a.init) pi[vocab.name(tok)] = bits;
  j["pi"] = std::move(pi);
  json delta = json::array();
  for (const auto& [key, next] : *a.table) {
    const auto& [state, mA, mB] = key;
    delta.push_back(json::array({state, mA, mB, next}));
  }
  j["delta"] = std::move(delta);
  return j;
}

/// Descriptor for an automaton produced by a compiler, so it can be rebuilt
/// deterministically at load time.
inline json compiled_automaton_json(const std::string& kind, json payload) {
  payload["type"] = "automaton";
  payload["kind"] = kind;
  return payload;
}

inline CpgAutomaton automaton_from_json(const json& j, const Vocab& vocab) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "tabular") {
    CpgAutomaton::Table table;
    for (const auto& row : j.at("delta"))
      table[{row.at(0).get<std::string>(), row.at(1).get<std::string>(),
             row.at(2).get<std::string>()}] = row.at(3).get<std::string>();
    std::map<Token, Bits> init;
    for (const auto& [name, bits] : j.at("pi").items())
      init[vocab.id(name)] = bits.get<std::string>();
    return CpgAutomaton::tabular(
        j.at("m_total").get<int>(), j.at("k").get<std::uint64_t>(), j.at("n").get<int>(),
        j.at("b").get<int>(),
        j.at("variant").get<std::string>() == "include-self"
            ? CpgAutomaton::Variant::IncludeSelf
            : CpgAutomaton::Variant::StrictPast,
        std::move(init), std::move(table));
  }
  if (kind == "compiled-from-transformer") {
    const Transformer t = transformer_from_json(j.at("transformer"));
    return transformer_to_automaton(t);
  }
  if (kind == "softmax-automaton") {
    const Transformer t = transformer_from_json(j.at("transformer"));
    const SimilarityRelation sim = similarity_from_json(t.cfg.fmt, j.at("similarity"));
    return transformer_softmax_to_automaton(t, sim);
  }
  if (kind == "compiled-from-logic") {
    const FloatFormat fmt(j.at("p").get<int>(), j.at("q").get<int>());
    FormulaTuple tuple;
    tuple.variant = j.at("variant").get<std::string>() == "non-strict"
                        ? LogicVariant::NonStrict
                        : LogicVariant::Core;
    for (const auto& f : j.at("formulas"))
      tuple.formulas.push_back(parse_formula(vocab, f.get<std::string>(), tuple.variant));
    return logic_to_automaton(tuple, fmt, vocab);
  }
  throw std::invalid_argument("unknown automaton kind: " + kind);
}

// -- tuples ------------------------------------------------------------------------

inline json tuple_to_json(const FormulaTuple& t, const Vocab& vocab) {
  json formulas = json::array();
  for (const auto& f : t.formulas) formulas.push_back(render(f, vocab));
  return json{{"type", "tuple"},
              {"variant", t.variant == LogicVariant::Core ? "core" : "non-strict"},
              {"formulas", std::move(formulas)}};
}

inline FormulaTuple tuple_from_json(const json& j, const Vocab& vocab) {
  FormulaTuple t;
  t.variant = j.at("variant").get<std::string>() == "non-strict" ? LogicVariant::NonStrict
                                                                 : LogicVariant::Core;
  for (const auto& f : j.at("formulas"))
    t.formulas.push_back(parse_formula(vocab, f.get<std::string>(), t.variant));
  if (t.formulas.empty()) throw std::invalid_argument("tuple has no formulas");
  return t;
}

// -- traces, reports, plans, certificates ---------------------------------------------

inline json trace_to_json(const FloatFormat& fmt, const GenerationTrace& trace,
                          const Vocab& vocab) {
  json steps = json::array();
  for (const auto& s : trace.steps) {
    steps.push_back(json{{"n_t", s.suffix_len},
                         {"p_t", vec_to_json(fmt, s.dist)},
                         {"y_t", s.choice == static_cast<int>(vocab.size())
                                     ? kEosName
                                     : vocab.name(s.choice)}});
  }
  return steps;
}

inline json diff_report_to_json(const DiffReport& r, const Vocab& vocab) {
  json mismatches = json::array();
  for (const auto& m : r.mismatches) {
    mismatches.push_back(json{{"graph", graph_to_json(m.graph, vocab)},
                              {"vertex", m.vertex},
                              {"a", m.out_a},
                              {"b", m.out_b}});
  }
  return json{{"pass", r.pass},
              {"interpretation", r.interpretation},
              {"corpus", json{{"vocab", r.vocab_tokens}, {"max_len", r.max_len}}},
              {"mismatches", std::move(mismatches)},
              {"stats", json{{"graphs", r.graphs},
                             {"points", r.points},
                             {"vacuous", r.vacuous},
                             {"mismatch_count", r.mismatches.size()}}}};
}

inline json plan_to_json(const CompilePlan& p) {
  json columns = json::object();
  for (const auto& [key, col] : p.columns) columns[key] = col;
  json strategies = json::array();
  for (const auto& [k, name] : p.strategies)
    strategies.push_back(json{{"count", k}, {"strategy", name}});
  return json{{"columns", std::move(columns)},
              {"encoder_stages", p.encoder_stages},
              {"decoder_stages", p.decoder_stages},
              {"strategies", std::move(strategies)},
              {"supported_counts", p.supported},
              {"width", p.width}};
}

inline json certificate_to_json(const TypeCoverageCertificate& c, const Vocab& vocab) {
  json realized = json::array();
  for (const auto& [t, state] : c.realized)
    realized.push_back(json{{"type", t.to_string(vocab)}, {"state", state}});
  return json{{"k", c.k},
              {"depth", c.depth},
              {"corpus_bound", c.corpus_bound},
              {"realized_suffix_types", std::move(realized)},
              {"universe_size", c.universe.total_types()}};
}

inline json property_report_to_json(const PropertySuiteReport& r) {
  json results = json::array();
  for (const auto& p : r.results)
    results.push_back(json{{"name", p.name}, {"pass", p.pass}, {"detail", p.detail}});
  return json{{"pass", r.pass}, {"properties", std::move(results)}};
}

// -- files -------------------------------------------------------------------------

inline json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  json j;
  in >> j;
  return j;
}

inline void save_json(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump(1) << "\n";
}

inline std::string load_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void save_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

}  // namespace trilab::io
