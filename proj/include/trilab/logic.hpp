#pragma once

#include <algorithm>
#include <map>
#include <memory>
#include <set>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "trilab/graphs.hpp"

namespace trilab {

// ---------------------------------------------------------------------------
// Formulas
//
// Core grammar:        bot | p | !F | (F & F) | <G>=k[F] | <P>[F]
// Non-strict variant:  bot | p | !F | (F & F) | <G>=k[F] | <P>=k[F]
//
// <G>=k counts vertices of the prefix satisfying F (at least k of them).
// <P> is the strict past diamond over the suffix: some suffix vertex
// strictly before the current one satisfies F. The non-strict <P>=k counts
// suffix vertices up to AND INCLUDING the current one. Internally a strict
// counting node also exists (used when rendering modal types); it renders
// into pure core syntax.
// ---------------------------------------------------------------------------

enum class Conn { Bot, Prop, Not, And, GPre, PSuf, PSufGeq };
enum class LogicVariant { Core, NonStrict };

struct Formula;
using FormulaPtr = std::shared_ptr<const Formula>;

struct Formula {
  Conn kind = Conn::Bot;
  Token prop = 0;          // Prop
  std::uint32_t count = 0; // GPre / PSufGeq
  FormulaPtr lhs, rhs;     // children (Not/GPre/PSuf*/And use lhs; And also rhs)
};

inline FormulaPtr f_bot() {
  static const FormulaPtr b = std::make_shared<Formula>();
  return b;
}
inline FormulaPtr f_prop(Token t) {
  auto f = std::make_shared<Formula>();
  f->kind = Conn::Prop;
  f->prop = t;
  return f;
}
inline FormulaPtr f_not(FormulaPtr a) {
  auto f = std::make_shared<Formula>();
  f->kind = Conn::Not;
  f->lhs = std::move(a);
  return f;
}
inline FormulaPtr f_and(FormulaPtr a, FormulaPtr b) {
  auto f = std::make_shared<Formula>();
  f->kind = Conn::And;
  f->lhs = std::move(a);
  f->rhs = std::move(b);
  return f;
}
inline FormulaPtr f_gpre(std::uint32_t k, FormulaPtr a) {
  auto f = std::make_shared<Formula>();
  f->kind = Conn::GPre;
  f->count = k;
  f->lhs = std::move(a);
  return f;
}
inline FormulaPtr f_psuf(FormulaPtr a) {
  auto f = std::make_shared<Formula>();
  f->kind = Conn::PSuf;
  f->lhs = std::move(a);
  return f;
}
inline FormulaPtr f_psuf_geq(std::uint32_t k, FormulaPtr a) {
  if (k < 1) throw std::invalid_argument("<P>=k requires k >= 1");
  auto f = std::make_shared<Formula>();
  f->kind = Conn::PSufGeq;
  f->count = k;
  f->lhs = std::move(a);
  return f;
}
inline FormulaPtr f_top() { return f_not(f_bot()); }

inline bool equal(const FormulaPtr& a, const FormulaPtr& b) {
  if (a == b) return true;
  if (!a || !b) return false;
  if (a->kind != b->kind || a->prop != b->prop || a->count != b->count) return false;
  return equal(a->lhs, b->lhs) && equal(a->rhs, b->rhs);
}

struct FormulaTuple {
  std::vector<FormulaPtr> formulas;
  LogicVariant variant = LogicVariant::Core;
};

// -- rendering ---------------------------------------------------------------

inline std::string render(const FormulaPtr& f, const Vocab& vocab) {
  switch (f->kind) {
    case Conn::Bot: return "bot";
    case Conn::Prop: return vocab.name(f->prop);
    case Conn::Not: return "!" + render(f->lhs, vocab);
    case Conn::And: return "(" + render(f->lhs, vocab) + " & " + render(f->rhs, vocab) + ")";
    case Conn::GPre:
      return "<G>=" + std::to_string(f->count) + "[" + render(f->lhs, vocab) + "]";
    case Conn::PSuf: return "<P>[" + render(f->lhs, vocab) + "]";
    case Conn::PSufGeq:
      return "<P>=" + std::to_string(f->count) + "[" + render(f->lhs, vocab) + "]";
  }
  throw std::logic_error("unreachable");
}

// -- parsing -----------------------------------------------------------------

struct ParseError : std::runtime_error {
  std::size_t position;
  ParseError(std::size_t pos, const std::string& msg)
      : std::runtime_error("parse error at " + std::to_string(pos) + ": " + msg),
        position(pos) {}
};

namespace detail {

class FormulaParser {
 public:
  FormulaParser(const Vocab& vocab, std::string_view text, LogicVariant variant)
      : vocab_(vocab), text_(text), variant_(variant) {}

  FormulaPtr parse() {
    FormulaPtr f = formula();
    skip_ws();
    if (pos_ != text_.size()) fail("trailing input");
    return f;
  }

 private:
  const Vocab& vocab_;
  std::string_view text_;
  LogicVariant variant_;
  std::size_t pos_ = 0;

  [[noreturn]] void fail(const std::string& msg) { throw ParseError(pos_, msg); }

  void skip_ws() {
    while (pos_ < text_.size() && (text_[pos_] == ' ' || text_[pos_] == '\t')) ++pos_;
  }
  bool eat(char c) {
    skip_ws();
    if (pos_ < text_.size() && text_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }
  void expect(char c) {
    if (!eat(c)) fail(std::string("expected '") + c + "'");
  }

  std::uint32_t integer() {
    skip_ws();
    if (pos_ >= text_.size() || !isdigit(static_cast<unsigned char>(text_[pos_])))
      fail("expected a count");
    std::uint64_t n = 0;
    while (pos_ < text_.size() && isdigit(static_cast<unsigned char>(text_[pos_]))) {
      n = n * 10 + static_cast<std::uint64_t>(text_[pos_] - '0');
      if (n > 1'000'000) fail("count too large");
      ++pos_;
    }
    return static_cast<std::uint32_t>(n);
  }

  FormulaPtr formula() {
    skip_ws();
    if (pos_ >= text_.size()) fail("unexpected end of input");
    const char c = text_[pos_];
    if (c == '!') {
      ++pos_;
      return f_not(formula());
    }
    if (c == '(') {
      ++pos_;
      FormulaPtr a = formula();
      expect('&');
      FormulaPtr b = formula();
      expect(')');
      return f_and(std::move(a), std::move(b));
    }
    if (c == '<') {
      ++pos_;
      skip_ws();
      if (pos_ >= text_.size()) fail("unterminated modality");
      const char m = text_[pos_];
      ++pos_;
      expect('>');
      if (m == 'G') {
        expect('=');
        const std::uint32_t k = integer();
        expect('[');
        FormulaPtr a = formula();
        expect(']');
        return f_gpre(k, std::move(a));
      }
      if (m == 'P') {
        skip_ws();
        if (pos_ < text_.size() && text_[pos_] == '=') {
          ++pos_;
          if (variant_ != LogicVariant::NonStrict)
            fail("<P>=k belongs to the non-strict variant");
          const std::uint32_t k = integer();
          if (k < 1) fail("<P>=k requires k >= 1");
          expect('[');
          FormulaPtr a = formula();
          expect(']');
          return f_psuf_geq(k, std::move(a));
        }
        if (variant_ != LogicVariant::Core) fail("<P>[...] belongs to the core variant");
        expect('[');
        FormulaPtr a = formula();
        expect(']');
        return f_psuf(std::move(a));
      }
      fail("unknown modality");
    }
    // identifier: bot or a token name
    if (!isalnum(static_cast<unsigned char>(c)) && c != '_') fail("unexpected character");
    std::size_t start = pos_;
    while (pos_ < text_.size() &&
           (isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_'))
      ++pos_;
    const std::string ident(text_.substr(start, pos_ - start));
    if (ident == "bot") return f_bot();
    try {
      return f_prop(vocab_.id(ident));
    } catch (const std::invalid_argument&) {
      pos_ = start;
      fail("unknown token '" + ident + "'");
    }
  }
};

}  // namespace detail

inline FormulaPtr parse_formula(const Vocab& vocab, std::string_view text,
                                LogicVariant variant = LogicVariant::Core) {
  return detail::FormulaParser(vocab, text, variant).parse();
}

/// One formula per non-empty line.
inline FormulaTuple parse_tuple(const Vocab& vocab, const std::string& text,
                                LogicVariant variant = LogicVariant::Core) {
  FormulaTuple tuple;
  tuple.variant = variant;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    std::string line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    bool blank = line.find_first_not_of(" \t") == std::string::npos;
    if (!blank && line[line.find_first_not_of(" \t")] != '#')
      tuple.formulas.push_back(parse_formula(vocab, line, variant));
    if (end == text.size()) break;
    start = end + 1;
  }
  if (tuple.formulas.empty()) throw std::invalid_argument("tuple file contains no formulas");
  return tuple;
}

// -- evaluation ---------------------------------------------------------------

namespace detail {

/// Truth values of f at every vertex of g, with sharing-aware memoisation.
inline const std::vector<bool>& eval_all(const FormulaPtr& f, const TwoSortedGraph& g,
                                         LogicVariant variant,
                                         std::map<const Formula*, std::vector<bool>>& memo) {
  auto it = memo.find(f.get());
  if (it != memo.end()) return it->second;
  const int n = g.size();
  const int w = g.bos_index();
  std::vector<bool> out(static_cast<std::size_t>(n), false);
  switch (f->kind) {
    case Conn::Bot:
      break;
    case Conn::Prop:
      for (int v = 1; v <= n; ++v) out[v - 1] = g.label(v) == f->prop;
      break;
    case Conn::Not: {
      const auto& a = eval_all(f->lhs, g, variant, memo);
      for (int v = 0; v < n; ++v) out[v] = !a[v];
      break;
    }
    case Conn::And: {
      const auto& a = eval_all(f->lhs, g, variant, memo);
      const auto& b = eval_all(f->rhs, g, variant, memo);
      for (int v = 0; v < n; ++v) out[v] = a[v] && b[v];
      break;
    }
    case Conn::GPre: {
      const auto& a = eval_all(f->lhs, g, variant, memo);
      std::uint32_t cnt = 0;
      for (int v = 1; v < w; ++v)
        if (a[v - 1]) ++cnt;
      const bool val = cnt >= f->count;
      std::fill(out.begin(), out.end(), val);
      break;
    }
    case Conn::PSuf: {
      // strictly earlier suffix vertex satisfies the body
      const auto& a = eval_all(f->lhs, g, variant, memo);
      bool seen = false;
      for (int v = w; v <= n; ++v) {
        out[v - 1] = seen;
        seen = seen || a[v - 1];
      }
      break;
    }
    case Conn::PSufGeq: {
      const auto& a = eval_all(f->lhs, g, variant, memo);
      std::uint32_t cnt = 0;
      for (int v = w; v <= n; ++v) {
        if (variant == LogicVariant::NonStrict) {
          if (a[v - 1]) ++cnt;
          out[v - 1] = cnt >= f->count;
        } else {
          out[v - 1] = cnt >= f->count;
          if (a[v - 1]) ++cnt;
        }
      }
      break;
    }
  }
  return memo.emplace(f.get(), std::move(out)).first->second;
}

}  // namespace detail

inline bool eval(const FormulaPtr& f, const TwoSortedGraph& g, int v,
                 LogicVariant variant = LogicVariant::Core) {
  if (v < 1 || v > g.size()) throw std::out_of_range("vertex index");
  std::map<const Formula*, std::vector<bool>> memo;
  return detail::eval_all(f, g, variant, memo)[static_cast<std::size_t>(v - 1)];
}

/// Output of a tuple at a suffix vertex, as a string of '0'/'1'.
inline std::string eval_tuple(const FormulaTuple& tuple, const TwoSortedGraph& g, int v) {
  if (!g.in_suffix(v)) throw std::invalid_argument("tuple outputs are defined at suffix vertices");
  std::map<const Formula*, std::vector<bool>> memo;
  std::string bits;
  bits.reserve(tuple.formulas.size());
  for (const auto& f : tuple.formulas)
    bits += detail::eval_all(f, g, tuple.variant, memo)[static_cast<std::size_t>(v - 1)] ? '1'
                                                                                         : '0';
  return bits;
}

// -- modal depth and width ----------------------------------------------------

inline std::uint32_t modal_depth(const FormulaPtr& f) {
  switch (f->kind) {
    case Conn::Bot:
    case Conn::Prop: return 0;
    case Conn::Not: return modal_depth(f->lhs);
    case Conn::And: return std::max(modal_depth(f->lhs), modal_depth(f->rhs));
    case Conn::GPre:
    case Conn::PSuf:
    case Conn::PSufGeq: return modal_depth(f->lhs) + 1;
  }
  throw std::logic_error("unreachable");
}

inline std::uint32_t width(const FormulaPtr& f) {
  switch (f->kind) {
    case Conn::Bot:
    case Conn::Prop: return 0;
    case Conn::Not: return width(f->lhs);
    case Conn::And: return std::max(width(f->lhs), width(f->rhs));
    case Conn::GPre:
    case Conn::PSufGeq: return std::max(width(f->lhs), f->count);
    case Conn::PSuf: return std::max(width(f->lhs), 1u);
  }
  throw std::logic_error("unreachable");
}

// ---------------------------------------------------------------------------
// Modal types: the canonical value characterising a pointed graph up to a
// given counting width k and modal depth d. Depth 0 is the vertex's token
// profile; depth d+1 adds, for every depth-d type, its capped count among
// the prefix vertices and among the strictly earlier suffix vertices.
// Counts are stored sparsely (absent = 0) in the range 1..k, where k means
// "at least k".
// ---------------------------------------------------------------------------

struct TypeValue {
  Token label = kBos;
  std::uint32_t k = 1;
  std::uint32_t depth = 0;
  std::vector<std::pair<TypeValue, std::uint32_t>> pre;  // sorted by type
  std::vector<std::pair<TypeValue, std::uint32_t>> suf;  // strict past, sorted

  friend bool operator==(const TypeValue& a, const TypeValue& b) {
    return a.label == b.label && a.k == b.k && a.depth == b.depth && a.pre == b.pre &&
           a.suf == b.suf;
  }
  friend bool operator<(const TypeValue& a, const TypeValue& b) {
    if (a.label != b.label) return a.label < b.label;
    if (a.k != b.k) return a.k < b.k;
    if (a.depth != b.depth) return a.depth < b.depth;
    if (a.pre != b.pre) return a.pre < b.pre;
    return a.suf < b.suf;
  }

  std::string to_string(const Vocab& vocab) const {
    std::string s = vocab.name(label);
    if (depth == 0) return s;
    s += "{";
    bool first = true;
    for (const auto& [t, c] : pre) {
      if (!first) s += ",";
      first = false;
      s += "G" + std::string(c >= k ? ">=" : "=") + std::to_string(c) + ":" + t.to_string(vocab);
    }
    for (const auto& [t, c] : suf) {
      if (!first) s += ",";
      first = false;
      s += "P" + std::string(c >= k ? ">=" : "=") + std::to_string(c) + ":" + t.to_string(vocab);
    }
    s += "}";
    return s;
  }
};

/// Types of every vertex of g for depths 0..d (width k).
/// Result[t][v-1] is the depth-t type of vertex v.
inline std::vector<std::vector<TypeValue>> types_of_all(const TwoSortedGraph& g,
                                                        std::uint32_t k, std::uint32_t d) {
  if (k < 1) throw std::invalid_argument("type width k >= 1 required");
  const int n = g.size();
  const int w = g.bos_index();
  std::vector<std::vector<TypeValue>> rounds;
  rounds.reserve(d + 1);
  std::vector<TypeValue> cur(static_cast<std::size_t>(n));
  for (int v = 1; v <= n; ++v) {
    cur[v - 1].label = g.label(v);
    cur[v - 1].k = k;
    cur[v - 1].depth = 0;
  }
  rounds.push_back(cur);
  for (std::uint32_t t = 1; t <= d; ++t) {
    const auto& prev = rounds.back();
    // capped counts of types among prefix vertices (shared by every vertex)
    std::map<TypeValue, std::uint32_t> pre_counts;
    for (int v = 1; v < w; ++v) {
      auto& c = pre_counts[prev[v - 1]];
      if (c < k) ++c;
    }
    std::vector<std::pair<TypeValue, std::uint32_t>> pre_sorted(pre_counts.begin(),
                                                                pre_counts.end());
    std::vector<TypeValue> next(static_cast<std::size_t>(n));
    std::map<TypeValue, std::uint32_t> running;  // strict-past suffix counts
    for (int v = 1; v <= n; ++v) {
      TypeValue& tv = next[v - 1];
      tv.label = g.label(v);
      tv.k = k;
      tv.depth = t;
      tv.pre = pre_sorted;
      if (v >= w) {
        tv.suf.assign(running.begin(), running.end());
        auto& c = running[prev[v - 1]];
        if (c < k) ++c;
      }
    }
    rounds.push_back(std::move(next));
  }
  return rounds;
}

inline TypeValue type_of(const TwoSortedGraph& g, int v, std::uint32_t k, std::uint32_t d) {
  if (v < 1 || v > g.size()) throw std::out_of_range("vertex index");
  return types_of_all(g, k, d)[d][static_cast<std::size_t>(v - 1)];
}

/// The realized types of a graph corpus, per depth; the rendering context.
struct TypeUniverse {
  std::uint32_t k = 1;
  std::uint32_t depth = 0;
  std::vector<std::set<TypeValue>> realized;  // index = depth

  static TypeUniverse build(const std::vector<TwoSortedGraph>& corpus, std::uint32_t k,
                            std::uint32_t depth) {
    TypeUniverse u;
    u.k = k;
    u.depth = depth;
    u.realized.resize(depth + 1);
    for (const auto& g : corpus) {
      const auto rounds = types_of_all(g, k, depth);
      for (std::uint32_t d = 0; d <= depth; ++d)
        for (const auto& t : rounds[d]) u.realized[d].insert(t);
    }
    return u;
  }

  std::size_t total_types() const {
    std::size_t n = 0;
    for (const auto& s : realized) n += s.size();
    return n;
  }

  /// Does the universe contain every type realized anywhere in g, at every
  /// depth up to its bound? This is the coverage condition under which the
  /// rendered formulas are guaranteed correct on g.
  bool covers(const TwoSortedGraph& g) const {
    const auto rounds = types_of_all(g, k, depth);
    for (std::uint32_t d = 0; d <= depth; ++d)
      for (const auto& t : rounds[d])
        if (!realized[d].count(t)) return false;
    return true;
  }
};

namespace detail {

/// "at least j suffix vertices strictly before satisfy f":
/// j = 1 -> <P>[f];  j+1 -> <P>[(f & geq_j)].
inline FormulaPtr psuf_count_geq(std::uint32_t j, const FormulaPtr& f) {
  FormulaPtr acc = f_psuf(f);
  for (std::uint32_t i = 1; i < j; ++i) acc = f_psuf(f_and(f, acc));
  return acc;
}

inline FormulaPtr conj(std::vector<FormulaPtr> parts) {
  if (parts.empty()) return f_top();
  FormulaPtr acc = parts[0];
  for (std::size_t i = 1; i < parts.size(); ++i) acc = f_and(std::move(acc), parts[i]);
  return acc;
}

}  // namespace detail

/// Renders a type as a core-variant formula that is true at exactly the
/// pointed graphs with this type — guaranteed for graphs whose realized
/// types the universe covers. The universe supplies the "count = 0" clauses
/// for realized sibling types.
inline FormulaPtr render_type_formula(const TypeValue& t, const TypeUniverse& universe,
                                      const Vocab& vocab,
                                      std::map<TypeValue, FormulaPtr>* memo = nullptr) {
  std::map<TypeValue, FormulaPtr> local;
  std::map<TypeValue, FormulaPtr>& cache = memo ? *memo : local;
  if (auto it = cache.find(t); it != cache.end()) return it->second;

  std::vector<FormulaPtr> parts;
  // token profile: the conjunction of literals over Sigma and BOS
  for (Token tok = 0; tok < static_cast<Token>(vocab.size()); ++tok)
    parts.push_back(t.label == tok ? f_prop(tok) : f_not(f_prop(tok)));
  parts.push_back(t.label == kBos ? f_prop(kBos) : f_not(f_prop(kBos)));

  if (t.depth > 0) {
    const auto& siblings = universe.realized.at(t.depth - 1);
    auto count_clause = [&](const TypeValue& tau, std::uint32_t c, bool prefix_side) {
      const FormulaPtr r = render_type_formula(tau, universe, vocab, &cache);
      auto at_least = [&](std::uint32_t j) {
        return prefix_side ? f_gpre(j, r) : detail::psuf_count_geq(j, r);
      };
      if (c >= t.k) {
        parts.push_back(at_least(t.k));
      } else if (c == 0) {
        parts.push_back(f_not(at_least(1)));
      } else {
        parts.push_back(at_least(c));
        parts.push_back(f_not(at_least(c + 1)));
      }
    };
    auto lookup = [](const std::vector<std::pair<TypeValue, std::uint32_t>>& m,
                     const TypeValue& tau) -> std::uint32_t {
      for (const auto& [x, c] : m)
        if (x == tau) return c;
      return 0;
    };
    for (const auto& tau : siblings) count_clause(tau, lookup(t.pre, tau), true);
    for (const auto& tau : siblings) count_clause(tau, lookup(t.suf, tau), false);
  }
  FormulaPtr out = detail::conj(std::move(parts));
  cache.emplace(t, out);
  return out;
}

}  // namespace trilab
