#pragma once

#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "trilab/automaton.hpp"
#include "trilab/floats.hpp"
#include "trilab/graphs.hpp"
#include "trilab/logic.hpp"
#include "trilab/similarity.hpp"
#include "trilab/transformer.hpp"

namespace trilab {

// ---------------------------------------------------------------------------
// Counting-gadget analysis.
//
// A counting attention head scores satisfying key vertices with the largest
// finite float F and the rest with 0, so after softmax the satisfying ones
// carry weight A_l = round(1 / round(1+...+1, l times)) and the rest carry
// exp(-F) = 0. The head's output column is then a fold of l equal products.
// Everything such a gadget can ever produce is a function of l that becomes
// constant once the float sums saturate, so the full behaviour is a finite
// table; a count threshold k is supported exactly when that table separates
// l >= k, either через underflow of the value product (primary) or by a
// monotone threshold on the indicator signal (fallback).
// ---------------------------------------------------------------------------

namespace gadget {

struct Tables {
  FloatFormat fmt{1, 1};
  Fp one, big, minpos, pow2;  // 1, maxFin, smallest positive, largest 2^j
  std::vector<Fp> ones_sum;   // ones_sum[l] = increasing-order sum of l ones
  std::vector<Fp> weight;     // weight[l] = fp_div(1, ones_sum[l]), l >= 1
  std::size_t table_len = 0;  // all signals constant at and beyond this index
  bool exp_kills_big = false; // fp_exp(-maxFin) == 0
  bool exists_sound = false;  // round(weight[u] * big) > 0 for all u >= 1
  std::vector<Fp> exists_sig;     // fold of l copies of round(weight[l]*big)
  std::vector<Fp> indicator_sig;  // fold of l copies of weight[l]
  std::vector<Fp> exists_domain;  // all values a strict-exists column can take
  int scale_stages = 0;           // zero-test scaling rounds (from minpos)

  /// fold of `count` copies of t (increasing order trivially: equal values)
  static Fp fold_copies(const FloatFormat& fmt, const Fp& t, std::size_t count) {
    Fp acc = Fp::zero();
    for (std::size_t i = 0; i < count; ++i) {
      const Fp next = fp_add(fmt, acc, t);
      if (next == acc) return acc;
      acc = next;
    }
    return acc;
  }
};

inline const Tables& tables_for(const FloatFormat& fmt) {
  static std::mutex mx;
  static std::map<std::pair<int, int>, std::unique_ptr<Tables>> memo;
  std::lock_guard lock(mx);
  auto& slot = memo[{fmt.p, fmt.q}];
  if (slot) return *slot;

  auto t = std::make_unique<Tables>();
  t->fmt = fmt;
  t->one = fp_one(fmt);
  t->big = encode_real(fmt, fmt.max_fin_value());
  t->minpos = encode_real(fmt, fmt.min_pos_value());
  {
    const std::int64_t shift = fmt.emax() - fmt.bias();
    Rational p2(1);
    for (std::int64_t i = 0; i < shift; ++i) p2 *= 2;
    t->pow2 = encode_real(fmt, p2);
  }
  // sum of ones until saturation
  t->ones_sum.push_back(Fp::zero());
  std::size_t sat = 0;
  for (std::size_t l = 1;; ++l) {
    const Fp next = fp_add(fmt, t->ones_sum.back(), t->one);
    if (next == t->ones_sum.back()) {
      sat = l - 1;
      break;
    }
    t->ones_sum.push_back(next);
    if (l > 100000) throw std::runtime_error("sum of ones failed to saturate");
  }
  const std::size_t L = sat + 4;
  while (t->ones_sum.size() <= L) t->ones_sum.push_back(t->ones_sum.back());
  t->weight.assign(L + 1, Fp::zero());
  for (std::size_t l = 1; l <= L; ++l) t->weight[l] = fp_div(fmt, t->one, t->ones_sum[l]);

  t->exp_kills_big = fp_exp(fmt, t->big.negated()).is_zero();

  t->exists_sound = true;
  for (std::size_t u = 1; u <= L; ++u) {
    const Fp term = fp_mul(fmt, t->weight[u], t->big);
    if (term.is_zero() || term.negative() || !term.is_finite()) t->exists_sound = false;
  }

  auto build_signal = [&](auto term_of) {
    std::vector<Fp> sig{Fp::zero()};
    for (std::size_t l = 1; l <= L; ++l) sig.push_back(Tables::fold_copies(fmt, term_of(l), l));
    // extend until stable under one more copy of the saturated term
    for (;;) {
      const Fp term = term_of(sig.size() - 1 > L ? L : sig.size() - 1);
      const Fp next = fp_add(fmt, sig.back(), term);
      if (next == sig.back()) break;
      sig.push_back(next);
      if (sig.size() > 100000) throw std::runtime_error("gadget signal failed to saturate");
    }
    return sig;
  };
  t->exists_sig =
      build_signal([&](std::size_t l) { return fp_mul(fmt, t->weight[std::min(l, L)], t->big); });
  t->indicator_sig = build_signal([&](std::size_t l) { return t->weight[std::min(l, L)]; });
  t->table_len = std::max(t->exists_sig.size(), t->indicator_sig.size());

  // every value a strict-exists column can take: fold of l copies of
  // round(weight[u] * big) for any row with u unmasked predecessors
  {
    std::set<std::string> seen;
    for (std::size_t u = 1; u <= L; ++u) {
      const Fp term = fp_mul(fmt, t->weight[u], t->big);
      Fp acc = Fp::zero();
      for (std::size_t l = 1; l <= L + 2; ++l) {
        const Fp next = fp_add(fmt, acc, term);
        if (next == acc) break;
        acc = next;
        if (seen.insert(fp_to_hex(fmt, acc)).second) t->exists_domain.push_back(acc);
      }
    }
  }

  // zero-test scaling: double multiplication by the largest power of two per
  // stage until the smallest positive value reaches 1 (clamping only helps)
  {
    Rational v = fmt.min_pos_value();
    const Rational p2 = t->pow2.value(fmt);
    int stages = 0;
    while (v < 1) {
      v *= p2 * p2;
      ++stages;
      if (stages > 64) throw std::runtime_error("zero-test scaling does not converge");
    }
    t->scale_stages = stages;
  }

  const Tables& ref = *t;
  slot = std::move(t);
  return ref;
}

struct CountStrategy {
  enum class Kind { Trivial, Underflow, Threshold };
  Kind kind = Kind::Trivial;
  Fp value_scale;     // Underflow: the multiplier round(k/2 * minpos)
  Fp theta;           // Threshold: split point on the indicator signal
  bool direction_up = true;  // true: signal > theta  <=>  l >= k
};

/// The per-l output column of a counting head whose value entries are m.
inline std::vector<Fp> counting_signal(const FloatFormat& fmt, const Fp& m) {
  const Tables& t = tables_for(fmt);
  std::vector<Fp> sig{Fp::zero()};
  const std::size_t L = t.table_len + 2;
  for (std::size_t l = 1; l <= L; ++l) {
    const Fp term = fp_mul(fmt, t.weight[std::min(l, t.weight.size() - 1)], m);
    sig.push_back(Tables::fold_copies(fmt, term, l));
  }
  return sig;
}

inline std::optional<CountStrategy> count_strategy(const FloatFormat& fmt, std::uint64_t k) {
  if (k == 0) {
    CountStrategy s;
    s.kind = CountStrategy::Kind::Trivial;
    return s;
  }
  const Tables& t = tables_for(fmt);
  // primary: underflow of weight * (k/2 * minpos)
  if (t.exp_kills_big && t.exists_sound) {
    const Fp m = fp_mul(fmt, encode_real(fmt, Rational(BigInt(k), 2)), t.minpos);
    const auto sig = counting_signal(fmt, m);
    bool ok = true;
    for (std::size_t l = 0; l < sig.size(); ++l) {
      // the gadget's verdict is (out1 == 0) && (out2 != 0), and out2 != 0 iff l >= 1
      const bool target = sig[l].is_zero() && l >= 1;
      if (target != (l >= k)) {
        ok = false;
        break;
      }
    }
    if (ok) {
      CountStrategy s;
      s.kind = CountStrategy::Kind::Underflow;
      s.value_scale = m;
      return s;
    }
  }
  // fallback: monotone threshold on the indicator signal
  {
    const auto& sig = t.indicator_sig;
    FpValueLess less;
    auto extremes = [&](bool upper_side) {
      std::optional<Fp> mn, mx;
      for (std::size_t l = 0; l < sig.size(); ++l) {
        const bool in_side = upper_side ? (l >= k) : (l < k);
        if (!in_side) continue;
        if (!mn || less(sig[l], *mn)) mn = sig[l];
        if (!mx || less(*mx, sig[l])) mx = sig[l];
      }
      return std::pair(mn, mx);
    };
    const auto [lo_min, lo_max] = extremes(false);
    const auto [hi_min, hi_max] = extremes(true);
    if (lo_max && hi_min && less(*lo_max, *hi_min)) {
      CountStrategy s;
      s.kind = CountStrategy::Kind::Threshold;
      s.theta = *lo_max;
      s.direction_up = true;
      return s;
    }
    if (hi_max && lo_min && less(*hi_max, *lo_min)) {
      CountStrategy s;
      s.kind = CountStrategy::Kind::Threshold;
      s.theta = *hi_max;
      s.direction_up = false;
      return s;
    }
  }
  return std::nullopt;
}

inline std::vector<std::uint64_t> supported_counts(const FloatFormat& fmt,
                                                   std::uint64_t kmax = 16) {
  std::vector<std::uint64_t> out{0};
  for (std::uint64_t k = 1; k <= kmax; ++k)
    if (count_strategy(fmt, k)) out.push_back(k);
  return out;
}

}  // namespace gadget

struct UnsupportedCount : std::runtime_error {
  std::uint64_t k;
  FloatFormat fmt;
  std::vector<std::uint64_t> supported;
  UnsupportedCount(std::uint64_t k_, const FloatFormat& f, std::vector<std::uint64_t> sup)
      : std::runtime_error([&] {
          std::ostringstream os;
          os << "count " << k_ << " is not compilable in " << f.name() << "; supported counts:";
          for (auto s : sup) os << " " << s;
          return os.str();
        }()),
        k(k_),
        fmt(f),
        supported(std::move(sup)) {}
};

struct UnsupportedVariant : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Logic -> transformer
// ---------------------------------------------------------------------------

struct CompilePlan {
  std::vector<std::pair<std::string, int>> columns;       // formula text -> column
  std::vector<std::string> encoder_stages, decoder_stages;
  std::vector<std::pair<std::uint32_t, std::string>> strategies;  // k -> strategy name
  std::vector<std::uint64_t> supported;                   // validated counts (k <= 16)
  int scratch0 = 0;
  int width = 0;
};

struct CompiledLogic {
  Transformer model;
  CompilePlan plan;
};

namespace detail {

/// Assembles one MLP from named hidden units and per-column output terms.
class MlpBuilder {
 public:
  explicit MlpBuilder(int d) : d_(d) {}

  int hidden(std::vector<std::pair<int, Fp>> ins, Fp bias = Fp::zero()) {
    hidden_.push_back({std::move(ins), bias});
    return static_cast<int>(hidden_.size()) - 1;
  }
  void output(int col, int hidden_idx, Fp w) { outs_.push_back({col, hidden_idx, w}); }
  void output_bias(int col, Fp b) { biases_.emplace_back(col, b); }

  /// Reads a nonnegative column and subtracts it from itself.
  void clear_column(int col) {
    const int h = hidden({{col, one_}});
    output(col, h, one_.negated());
  }

  bool empty() const { return hidden_.empty() && biases_.empty(); }
  int hidden_count() const { return static_cast<int>(hidden_.size()); }

  MlpWeights build(int d_ff) const {
    if (d_ff < std::max(1, hidden_count()))
      throw std::logic_error("MlpBuilder: d_ff too small");
    MlpWeights w;
    w.w1 = Matrix(d_, d_ff);
    w.b1.assign(static_cast<std::size_t>(d_ff), Fp::zero());
    w.w2 = Matrix(d_ff, d_);
    w.b2.assign(static_cast<std::size_t>(d_), Fp::zero());
    for (std::size_t hix = 0; hix < hidden_.size(); ++hix) {
      for (const auto& [col, coef] : hidden_[hix].ins) {
        if (!w.w1.at(col, static_cast<int>(hix)).is_zero())
          throw std::logic_error("MlpBuilder: duplicate input column in one hidden unit");
        w.w1.at(col, static_cast<int>(hix)) = coef;
      }
      w.b1[hix] = hidden_[hix].bias;
    }
    for (const auto& [col, hix, coef] : outs_) {
      if (!w.w2.at(hix, col).is_zero())
        throw std::logic_error("MlpBuilder: duplicate output term");
      w.w2.at(hix, col) = coef;
    }
    for (const auto& [col, b] : biases_) w.b2[static_cast<std::size_t>(col)] = b;
    return w;
  }

  void set_one(const Fp& one) { one_ = one; }

 private:
  struct Hidden {
    std::vector<std::pair<int, Fp>> ins;
    Fp bias;
  };
  int d_;
  Fp one_;
  std::vector<Hidden> hidden_;
  std::vector<std::tuple<int, int, Fp>> outs_;
  std::vector<std::pair<int, Fp>> biases_;
};

inline std::string formula_key(const FormulaPtr& f) {
  switch (f->kind) {
    case Conn::Bot: return "F";
    case Conn::Prop: return "p" + std::to_string(f->prop);
    case Conn::Not: return "!(" + formula_key(f->lhs) + ")";
    case Conn::And: return "&(" + formula_key(f->lhs) + "," + formula_key(f->rhs) + ")";
    case Conn::GPre: return "G" + std::to_string(f->count) + "(" + formula_key(f->lhs) + ")";
    case Conn::PSuf: return "P(" + formula_key(f->lhs) + ")";
    case Conn::PSufGeq:
      return "P" + std::to_string(f->count) + "(" + formula_key(f->lhs) + ")";
  }
  throw std::logic_error("unreachable");
}

}  // namespace detail

class LogicCompiler {
 public:
  LogicCompiler(const FloatFormat& fmt, const Vocab& vocab, LogicVariant variant)
      : fmt_(fmt), vocab_(vocab), variant_(variant), tables_(gadget::tables_for(fmt)) {}

  CompiledLogic compile(const FormulaTuple& tuple, int extra_columns = 0) {
    if (tuple.variant != variant_)
      throw UnsupportedVariant("tuple variant does not match the compiler variant");
    collect(tuple);
    allocate_columns(extra_columns);
    build_model_shell();
    for (const auto& key : topo_order_) emit_node(nodes_.at(key));
    finalize_head(tuple);
    validate_gadgets();
    plan_.supported = gadget::supported_counts(fmt_);
    plan_.width = d_;
    CompiledLogic out{std::move(model_), std::move(plan_)};
    return out;
  }

  // Exposed for the softmax-aware variant, which appends machinery before
  // the head is finalized.
  const FloatFormat& fmt() const { return fmt_; }

 private:
  struct Node {
    FormulaPtr f;
    std::string key;
    int col = -1;
  };

  FloatFormat fmt_;
  Vocab vocab_;
  LogicVariant variant_;
  const gadget::Tables& tables_;

  std::map<std::string, Node> nodes_;
  std::vector<std::string> topo_order_;  // children before parents
  std::map<std::string, int> columns_;
  int d_ = 0;
  int scratch_[4] = {0, 0, 0, 0};
  int extra0_ = 0;  // first extra column (softmax variant machinery)
  int true_col_ = 0, false_col_ = 0;
  Transformer model_;
  CompilePlan plan_;
  int max_hidden_ = 1;
  std::vector<std::pair<std::uint32_t, gadget::CountStrategy>> used_strategies_;

  void collect_rec(const FormulaPtr& f) {
    const std::string key = detail::formula_key(f);
    if (nodes_.count(key)) return;
    if (f->lhs) collect_rec(f->lhs);
    if (f->rhs) collect_rec(f->rhs);
    nodes_[key] = Node{f, key, -1};
    topo_order_.push_back(key);
  }

  void collect(const FormulaTuple& tuple) {
    for (const auto& f : tuple.formulas) collect_rec(f);
  }

  void allocate_columns(int extra_columns) {
    int next = 0;
    auto give = [&](const std::string& key) {
      if (!columns_.count(key)) columns_[key] = next++;
    };
    give("FALSE");
    give("TRUE");
    for (Token t = 0; t < static_cast<Token>(vocab_.size()); ++t) give("p" + std::to_string(t));
    give("p" + std::to_string(kBos));
    for (const auto& key : topo_order_) give(key);
    for (int i = 0; i < 4; ++i) scratch_[i] = next++;
    extra0_ = next;
    next += extra_columns;
    d_ = next;
    false_col_ = columns_.at("FALSE");
    true_col_ = columns_.at("TRUE");
    for (auto& [key, node] : nodes_) node.col = columns_.at(key);
    for (const auto& [key, col] : columns_) plan_.columns.emplace_back(key, col);
    plan_.scratch0 = scratch_[0];
  }

  void build_model_shell() {
    model_ = Transformer{};
    model_.cfg.fmt = fmt_;
    model_.cfg.d = d_;
    model_.cfg.d_k = 1;
    model_.cfg.d_v = 1;
    model_.cfg.d_out = 1;  // fixed up in finalize_head
    model_.cfg.h = 2;
    model_.cfg.mask = variant_ == LogicVariant::Core ? MaskMode::Strict : MaskMode::NonStrict;
    model_.cfg.ln = LnMode::None;
    for (Token t = -1; t < static_cast<Token>(vocab_.size()); ++t) {
      std::vector<Fp> vec(static_cast<std::size_t>(d_), Fp::zero());
      vec[static_cast<std::size_t>(true_col_)] = tables_.one;
      vec[static_cast<std::size_t>(columns_.at("p" + std::to_string(t)))] = tables_.one;
      model_.embedding.emplace_back(t, std::move(vec));
    }
  }

  // -- layer fabrication -----------------------------------------------------

  AttnBlock zero_attn() const {
    AttnBlock block;
    for (int i = 0; i < 2; ++i) {
      HeadWeights hw;
      hw.wq = Matrix(d_, 1);
      hw.wk = Matrix(d_, 1);
      hw.wv = Matrix(d_, 1);
      block.heads.push_back(std::move(hw));
    }
    block.wo = Matrix(2, d_);
    return block;
  }

  detail::MlpBuilder builder() const {
    detail::MlpBuilder b(d_);
    b.set_one(tables_.one);
    return b;
  }

  void push_encoder(AttnBlock attn, const detail::MlpBuilder& mlp, const std::string& why) {
    EncoderLayerWeights el;
    el.self_attn = std::move(attn);
    max_hidden_ = std::max(max_hidden_, mlp.hidden_count());
    el.mlp = mlp.build(std::max(1, mlp.hidden_count()));
    pending_enc_.push_back(std::move(el));
    plan_.encoder_stages.push_back(why);
  }

  void push_decoder(AttnBlock masked, AttnBlock cross, const detail::MlpBuilder& mlp,
                    const std::string& why) {
    DecoderLayerWeights dl;
    dl.masked_attn = std::move(masked);
    dl.cross_attn = std::move(cross);
    max_hidden_ = std::max(max_hidden_, mlp.hidden_count());
    dl.mlp = mlp.build(std::max(1, mlp.hidden_count()));
    pending_dec_.push_back(std::move(dl));
    plan_.decoder_stages.push_back(why);
  }

  std::vector<EncoderLayerWeights> pending_enc_;
  std::vector<DecoderLayerWeights> pending_dec_;

  /// Counting head: scores F at satisfying keys, value column scaled by m.
  HeadWeights counting_head(int phi_col, const Fp& value_scale) const {
    HeadWeights hw;
    hw.wq = Matrix(d_, 1);
    hw.wq.at(true_col_, 0) = tables_.big;
    hw.wk = Matrix(d_, 1);
    hw.wk.at(phi_col, 0) = tables_.one;
    hw.wv = Matrix(d_, 1);
    hw.wv.at(phi_col, 0) = value_scale;
    return hw;
  }

  /// Existence head: zero scores, value column scaled by maxFin.
  HeadWeights exists_head(int phi_col) const {
    HeadWeights hw;
    hw.wq = Matrix(d_, 1);
    hw.wk = Matrix(d_, 1);
    hw.wv = Matrix(d_, 1);
    hw.wv.at(phi_col, 0) = tables_.big;
    return hw;
  }

  AttnBlock two_head_block(HeadWeights h0, HeadWeights h1, int col0, int col1) const {
    AttnBlock block;
    block.heads.push_back(std::move(h0));
    block.heads.push_back(std::move(h1));
    block.wo = Matrix(2, d_);
    block.wo.at(0, col0) = tables_.one;
    block.wo.at(1, col1) = tables_.one;
    return block;
  }

  /// Scale both scratch signals by pow2 twice and move them to the other
  /// scratch pair (clearing the sources).
  detail::MlpBuilder scale_stage_mlp(int src0, int src1, int dst0, int dst1) const {
    auto mlp = builder();
    const int ha = mlp.hidden({{src0, tables_.pow2}});
    const int hb = mlp.hidden({{src1, tables_.pow2}});
    mlp.output(dst0, ha, tables_.pow2);
    mlp.output(dst1, hb, tables_.pow2);
    mlp.clear_column(src0);
    mlp.clear_column(src1);
    return mlp;
  }

  /// Emit the scale pipeline plus combine layer shared by all gadgets.
  /// combine(target_mlp, u0_col, u1_col) fills the final-layer MLP.
  template <typename Stack, typename Combine>
  void emit_pipeline(Stack&& push_layer, AttnBlock attn_layer, Combine&& combine,
                     const std::string& tag) {
    int cur0 = scratch_[0], cur1 = scratch_[1];
    int alt0 = scratch_[2], alt1 = scratch_[3];
    // first layer: the attention plus the first scale stage (or combine)
    if (tables_.scale_stages == 0) {
      auto mlp = builder();
      combine(mlp, cur0, cur1);
      push_layer(std::move(attn_layer), mlp, tag);
      return;
    }
    push_layer(std::move(attn_layer), scale_stage_mlp(cur0, cur1, alt0, alt1), tag + "/scale1");
    std::swap(cur0, alt0);
    std::swap(cur1, alt1);
    for (int s = 1; s < tables_.scale_stages; ++s) {
      push_layer(zero_attn_layer(), scale_stage_mlp(cur0, cur1, alt0, alt1),
                 tag + "/scale" + std::to_string(s + 1));
      std::swap(cur0, alt0);
      std::swap(cur1, alt1);
    }
    auto mlp = builder();
    combine(mlp, cur0, cur1);
    push_layer(zero_attn_layer(), mlp, tag + "/combine");
  }

  AttnBlock zero_attn_layer() const { return zero_attn(); }

  // -- node emission -----------------------------------------------------------

  void emit_node(const Node& node) {
    switch (node.f->kind) {
      case Conn::Bot:
      case Conn::Prop:
        return;  // loaded by the embedding (FALSE column stays zero)
      case Conn::Not:
      case Conn::And:
        emit_boolean(node);
        return;
      case Conn::GPre:
        emit_gpre(node);
        return;
      case Conn::PSuf:
        emit_psuf_exists(node);
        return;
      case Conn::PSufGeq:
        emit_psuf_geq(node);
        return;
    }
  }

  void emit_boolean(const Node& node) {
    auto make = [&] {
      auto mlp = builder();
      if (node.f->kind == Conn::Not) {
        const int a = nodes_.at(detail::formula_key(node.f->lhs)).col;
        const int h = mlp.hidden({{a, tables_.one.negated()}}, tables_.one);
        mlp.output(node.col, h, tables_.one);
      } else {
        const int a = nodes_.at(detail::formula_key(node.f->lhs)).col;
        const int b = nodes_.at(detail::formula_key(node.f->rhs)).col;
        const int h = a == b ? mlp.hidden({{a, tables_.one}})  // x & x = x
                             : mlp.hidden({{a, tables_.one}, {b, tables_.one}},
                                          tables_.one.negated());
        mlp.output(node.col, h, tables_.one);
      }
      return mlp;
    };
    push_encoder(zero_attn(), make(), "bool " + node.key);
    push_decoder(zero_attn(), zero_attn(), make(), "bool " + node.key);
  }

  void note_strategy(std::uint32_t k, const gadget::CountStrategy& s) {
    const char* name = s.kind == gadget::CountStrategy::Kind::Trivial ? "trivial"
                       : s.kind == gadget::CountStrategy::Kind::Underflow ? "underflow"
                                                                          : "threshold";
    plan_.strategies.emplace_back(k, name);
    used_strategies_.emplace_back(k, s);
  }

  void emit_gpre(const Node& node) {
    const std::uint32_t k = node.f->count;
    const auto strategy = gadget::count_strategy(fmt_, k);
    if (!strategy) throw UnsupportedCount(k, fmt_, gadget::supported_counts(fmt_));
    note_strategy(k, *strategy);
    if (strategy->kind == gadget::CountStrategy::Kind::Trivial) {
      auto make = [&] {
        auto mlp = builder();
        mlp.output_bias(node.col, tables_.one);
        return mlp;
      };
      push_encoder(zero_attn(), make(), "const-true " + node.key);
      push_decoder(zero_attn(), zero_attn(), make(), "const-true " + node.key);
      return;
    }
    const int phi = nodes_.at(detail::formula_key(node.f->lhs)).col;
    emit_counting_gadget(node, phi, *strategy, GadgetPlacement::EncoderSelf,
                         "G" + std::to_string(k) + " enc " + node.key);
    emit_counting_gadget(node, phi, *strategy, GadgetPlacement::DecoderCross,
                         "G" + std::to_string(k) + " dec " + node.key);
  }

  void emit_psuf_geq(const Node& node) {
    if (variant_ != LogicVariant::NonStrict)
      throw UnsupportedVariant("counting past modality requires the non-strict variant");
    const std::uint32_t k = node.f->count;
    const auto strategy = gadget::count_strategy(fmt_, k);
    if (!strategy) throw UnsupportedCount(k, fmt_, gadget::supported_counts(fmt_));
    note_strategy(k, *strategy);
    const int phi = nodes_.at(detail::formula_key(node.f->lhs)).col;
    emit_counting_gadget(node, phi, *strategy, GadgetPlacement::DecoderMasked,
                         "P" + std::to_string(k) + " dec " + node.key);
  }

  enum class GadgetPlacement { EncoderSelf, DecoderCross, DecoderMasked };

  void emit_counting_gadget(const Node& node, int phi, const gadget::CountStrategy& strategy,
                            GadgetPlacement place, const std::string& tag) {
    AttnBlock attn = [&] {
      if (strategy.kind == gadget::CountStrategy::Kind::Underflow)
        return two_head_block(counting_head(phi, strategy.value_scale), exists_head(phi),
                              scratch_[0], scratch_[1]);
      // threshold: indicator-valued counting head only
      return two_head_block(counting_head(phi, tables_.one), zero_attn().heads[0], scratch_[0],
                            scratch_[1]);
    }();

    auto push_layer = [&](AttnBlock a, const detail::MlpBuilder& mlp, const std::string& why) {
      switch (place) {
        case GadgetPlacement::EncoderSelf:
          push_encoder(std::move(a), mlp, why);
          break;
        case GadgetPlacement::DecoderCross:
          push_decoder(zero_attn(), std::move(a), mlp, why);
          break;
        case GadgetPlacement::DecoderMasked:
          push_decoder(std::move(a), zero_attn(), mlp, why);
          break;
      }
    };

    if (strategy.kind == gadget::CountStrategy::Kind::Underflow) {
      auto combine = [&](detail::MlpBuilder& mlp, int u0, int u1) {
        const int h1 = mlp.hidden({{u0, tables_.one.negated()}}, tables_.one);
        const int h2 = mlp.hidden({{u1, tables_.one.negated()}}, tables_.one);
        mlp.output(node.col, h1, tables_.one);
        mlp.output(node.col, h2, tables_.one.negated());
        mlp.clear_column(u0);
        mlp.clear_column(u1);
      };
      emit_pipeline(push_layer, std::move(attn), combine, tag);
      return;
    }

    // threshold: first shift the signal by theta, then zero-test it
    {
      auto mlp = builder();
      const int h = mlp.hidden({{scratch_[0], tables_.one}}, strategy.theta.negated());
      mlp.output(scratch_[2], h, tables_.one);
      mlp.clear_column(scratch_[0]);
      push_layer(std::move(attn), mlp, tag + "/shift");
    }
    // move the shifted signal back to scratch 0 position for the pipeline
    {
      auto mlp = builder();
      const int h = mlp.hidden({{scratch_[2], tables_.one}});
      mlp.output(scratch_[0], h, tables_.one);
      mlp.clear_column(scratch_[2]);
      push_layer(zero_attn_layer(), mlp, tag + "/move");
    }
    const bool up = strategy.direction_up;
    auto combine = [&](detail::MlpBuilder& mlp, int u0, int u1) {
      const int h = mlp.hidden({{u0, tables_.one.negated()}}, tables_.one);  // [u0 == 0]
      if (up) {
        mlp.output_bias(node.col, tables_.one);
        mlp.output(node.col, h, tables_.one.negated());  // 1 - [s <= theta]
      } else {
        mlp.output(node.col, h, tables_.one);  // [s <= theta]
      }
      mlp.clear_column(u0);
      mlp.clear_column(u1);
    };
    emit_pipeline(push_layer, zero_attn_layer(), combine, tag);
  }

  void emit_psuf_exists(const Node& node) {
    if (variant_ != LogicVariant::Core)
      throw UnsupportedVariant("the strict past modality requires the core variant");
    if (!tables_.exists_sound)
      throw UnsupportedVariant("existence gadget is unsound in this format");
    const int phi = nodes_.at(detail::formula_key(node.f->lhs)).col;
    AttnBlock attn =
        two_head_block(exists_head(phi), zero_attn().heads[0], scratch_[1], scratch_[0]);
    auto push_layer = [&](AttnBlock a, const detail::MlpBuilder& mlp, const std::string& why) {
      push_decoder(std::move(a), zero_attn(), mlp, why);
    };
    auto combine = [&](detail::MlpBuilder& mlp, int u0, int u1) {
      const int h = mlp.hidden({{u1, tables_.one.negated()}}, tables_.one);  // [u1 == 0]
      mlp.output_bias(node.col, tables_.one);
      mlp.output(node.col, h, tables_.one.negated());
      mlp.clear_column(u0);
      mlp.clear_column(u1);
    };
    emit_pipeline(push_layer, std::move(attn), combine, "P " + node.key);
  }

  // -- finalization ------------------------------------------------------------

  void finalize_head(const FormulaTuple& tuple) {
    const int m = static_cast<int>(tuple.formulas.size());
    model_.cfg.d_out = m;
    model_.w_out = Matrix(d_, m);
    for (int i = 0; i < m; ++i) {
      const int col = nodes_.at(detail::formula_key(tuple.formulas[static_cast<std::size_t>(i)])).col;
      model_.w_out.at(col, i) = tables_.one;
    }
    model_.b_out.assign(static_cast<std::size_t>(m), Fp::zero());
    attach_layers();
  }

  void attach_layers() {
    const int d_ff = std::max(1, max_hidden_);
    model_.cfg.d_ff = d_ff;
    auto repad = [&](MlpWeights& m) {
      MlpWeights widened;
      widened.w1 = Matrix(d_, d_ff);
      for (int i = 0; i < m.w1.rows; ++i)
        for (int j = 0; j < m.w1.cols; ++j) widened.w1.at(i, j) = m.w1.at(i, j);
      widened.b1.assign(static_cast<std::size_t>(d_ff), Fp::zero());
      for (std::size_t j = 0; j < m.b1.size(); ++j) widened.b1[j] = m.b1[j];
      widened.w2 = Matrix(d_ff, d_);
      for (int i = 0; i < m.w2.rows; ++i)
        for (int j = 0; j < m.w2.cols; ++j) widened.w2.at(i, j) = m.w2.at(i, j);
      widened.b2 = m.b2;
      m = std::move(widened);
    };
    for (auto& el : pending_enc_) repad(el.mlp);
    for (auto& dl : pending_dec_) repad(dl.mlp);
    model_.enc = std::move(pending_enc_);
    model_.dec = std::move(pending_dec_);
    model_.cfg.L1 = static_cast<int>(model_.enc.size());
    model_.cfg.L2 = static_cast<int>(model_.dec.size());
  }

  // -- exhaustive gadget validation over the declared signal domains -----------

  /// Runs the emitted scale+combine MLP cascade on a synthetic row and
  /// checks the Boolean outcome for every table entry.
  void validate_gadgets() {
    for (const auto& [k, strategy] : used_strategies_) {
      if (strategy.kind == gadget::CountStrategy::Kind::Trivial) continue;
      if (strategy.kind == gadget::CountStrategy::Kind::Underflow) {
        const auto sig = gadget::counting_signal(fmt_, strategy.value_scale);
        for (std::size_t l = 0; l < sig.size(); ++l) {
          const Fp s1 = tables_.exists_sig[std::min(l, tables_.exists_sig.size() - 1)];
          const bool got = simulate_underflow_outcome(sig[l], s1);
          if (got != (l >= k))
            throw std::logic_error("underflow gadget failed its domain validation");
        }
        // strict-exists domain values must always register as nonzero
        for (const Fp& v : tables_.exists_domain)
          if (!simulate_nonzero(v))
            throw std::logic_error("existence gadget failed its domain validation");
      } else {
        const auto& sig = tables_.indicator_sig;
        for (std::size_t l = 0; l < sig.size(); ++l) {
          const bool got = simulate_threshold_outcome(sig[l], strategy);
          if (got != (l >= k))
            throw std::logic_error("threshold gadget failed its domain validation");
        }
      }
    }
  }

  /// The zero-test pipeline on one value: scale stages then [u == 0].
  bool simulate_is_zero(Fp v) const {
    for (int s = 0; s < tables_.scale_stages; ++s) {
      v = fp_mul(fmt_, relu(fp_mul(fmt_, v, tables_.pow2)), tables_.pow2);
    }
    const Fp h = relu(fp_sub(fmt_, tables_.one, v));
    if (h == tables_.one) return true;
    if (h.is_zero()) return false;
    throw std::logic_error("zero test produced a non-Boolean intermediate");
  }

  bool simulate_nonzero(const Fp& v) const { return !simulate_is_zero(v); }

  bool simulate_underflow_outcome(const Fp& s0, const Fp& s1) const {
    return simulate_is_zero(s0) && !simulate_is_zero(s1);
  }

  bool simulate_threshold_outcome(const Fp& s0, const gadget::CountStrategy& strategy) const {
    const Fp shifted = relu(fp_sub(fmt_, s0, strategy.theta));
    const bool above = !simulate_is_zero(shifted);
    return strategy.direction_up ? above : !above;
  }
};

inline CompiledLogic logic_to_transformer(const FormulaTuple& tuple, const FloatFormat& fmt,
                                          const Vocab& vocab) {
  LogicCompiler compiler(fmt, vocab, tuple.variant);
  return compiler.compile(tuple);
}

// ---------------------------------------------------------------------------
// Transformer -> automaton
// ---------------------------------------------------------------------------

namespace detail {

struct SublayerPhase {
  enum class Kind { EncAttn, EncMlp, DecMasked, DecCross, DecMlp, OutHead } kind;
  int layer = 0;
};

inline std::vector<SublayerPhase> sublayer_schedule(const TransformerConfig& cfg) {
  std::vector<SublayerPhase> out;
  for (int i = 0; i < cfg.L1; ++i) {
    out.push_back({SublayerPhase::Kind::EncAttn, i});
    out.push_back({SublayerPhase::Kind::EncMlp, i});
  }
  for (int i = 0; i < cfg.L2; ++i) {
    out.push_back({SublayerPhase::Kind::DecMasked, i});
    out.push_back({SublayerPhase::Kind::DecCross, i});
    out.push_back({SublayerPhase::Kind::DecMlp, i});
  }
  out.push_back({SublayerPhase::Kind::OutHead, 0});
  return out;
}

/// Feature-vector codec between rows of Fp and the state bit string.
struct StateCodec {
  FloatFormat fmt;
  int width;       // number of float cells (max of d and d_out)
  int phase_bits;
  int phases;

  int feature_bits() const { return width * fmt.total_bits(); }
  int total_bits() const { return feature_bits() + 1 + phase_bits; }

  Bits encode(const std::vector<Fp>& row, bool bos, int phase) const {
    Bits out;
    out.reserve(static_cast<std::size_t>(total_bits()));
    const int cell = fmt.total_bits();
    for (int i = 0; i < width; ++i) {
      const Fp v = i < static_cast<int>(row.size()) ? row[static_cast<std::size_t>(i)] : Fp::zero();
      const std::uint64_t bits = v.bits(fmt);
      for (int b = cell - 1; b >= 0; --b) out += ((bits >> b) & 1) ? '1' : '0';
    }
    out += bos ? '1' : '0';
    for (int b = phase_bits - 1; b >= 0; --b) out += ((phase >> b) & 1) ? '1' : '0';
    return out;
  }

  std::vector<Fp> decode_row(const Bits& s, int count) const {
    const int cell = fmt.total_bits();
    std::vector<Fp> row;
    row.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
      std::uint64_t bits = 0;
      for (int b = 0; b < cell; ++b)
        bits = bits * 2 + (s[static_cast<std::size_t>(i * cell + b)] == '1');
      row.push_back(Fp::from_bits(fmt, bits));
    }
    return row;
  }

  bool decode_bos(const Bits& s) const {
    return s[static_cast<std::size_t>(feature_bits())] == '1';
  }
  int decode_phase(const Bits& s) const {
    int phase = 0;
    for (int b = 0; b < phase_bits; ++b)
      phase = phase * 2 + (s[static_cast<std::size_t>(feature_bits() + 1 + b)] == '1');
    return phase;
  }
};

/// One attention row recomputed from a capped multiset of (feature row,
/// multiplicity) entries. Saturation of increasing-order sums makes the
/// capped multiset carry all the information the true row computation uses.
inline std::vector<Fp> attention_row_multiset(
    const FloatFormat& fmt, const std::vector<Fp>& y_row,
    const std::vector<std::pair<std::vector<Fp>, std::uint64_t>>& entries,
    const AttnBlock& block, int d_v) {
  const int d = static_cast<int>(y_row.size());
  std::vector<Fp> concat;
  for (const auto& head : block.heads) {
    if (entries.empty()) {
      for (int c = 0; c < d_v; ++c) concat.push_back(Fp::zero());
      continue;
    }
    const int d_k = head.wq.cols;
    std::vector<Fp> q(static_cast<std::size_t>(d_k));
    for (int c = 0; c < d_k; ++c) {
      FpMultiset prods;
      for (int i = 0; i < d; ++i)
        prods.add(fp_mul(fmt, y_row[static_cast<std::size_t>(i)], head.wq.at(i, c)));
      q[static_cast<std::size_t>(c)] = sum_increasing(fmt, prods);
    }
    const Fp scale = fp_sqrt(fmt, encode_int(fmt, d_k));
    bool nan_row = false;
    std::vector<Fp> scores, values_flat;
    for (const auto& [feat, mult] : entries) {
      std::vector<Fp> kk(static_cast<std::size_t>(d_k));
      for (int c = 0; c < d_k; ++c) {
        FpMultiset prods;
        for (int i = 0; i < d; ++i)
          prods.add(fp_mul(fmt, feat[static_cast<std::size_t>(i)], head.wk.at(i, c)));
        kk[static_cast<std::size_t>(c)] = sum_increasing(fmt, prods);
      }
      FpMultiset dotp;
      for (int c = 0; c < d_k; ++c) dotp.add(fp_mul(fmt, q[static_cast<std::size_t>(c)], kk[static_cast<std::size_t>(c)]));
      const Fp s = fp_div(fmt, sum_increasing(fmt, dotp), scale);
      if (s.is_nan()) nan_row = true;
      scores.push_back(s);
    }
    if (nan_row) {
      for (int c = 0; c < d_v; ++c) concat.push_back(Fp::nan());
      continue;
    }
    FpValueLess less;
    Fp mx = scores[0];
    for (const Fp& s : scores)
      if (less(mx, s)) mx = s;
    std::vector<Fp> weights(entries.size(), Fp::zero());
    if (mx != Fp::neg_inf()) {
      FpMultiset denom;
      std::vector<Fp> nums(entries.size());
      bool nan_num = false;
      for (std::size_t e = 0; e < entries.size(); ++e) {
        nums[e] = fp_exp(fmt, fp_sub(fmt, scores[e], mx));
        if (nums[e].is_nan()) nan_num = true;
        denom.add(nums[e], entries[e].second);
      }
      if (nan_num) {
        for (int c = 0; c < d_v; ++c) concat.push_back(Fp::nan());
        continue;
      }
      const Fp den = sum_increasing(fmt, denom);
      for (std::size_t e = 0; e < entries.size(); ++e) weights[e] = fp_div(fmt, nums[e], den);
    }
    // value projection per entry, then the weighted fold per column
    std::vector<std::vector<Fp>> vals(entries.size());
    for (std::size_t e = 0; e < entries.size(); ++e) {
      vals[e].resize(static_cast<std::size_t>(d_v));
      for (int c = 0; c < d_v; ++c) {
        FpMultiset prods;
        for (int i = 0; i < d; ++i)
          prods.add(fp_mul(fmt, entries[e].first[static_cast<std::size_t>(i)],
                           head.wv.at(i, c)));
        vals[e][static_cast<std::size_t>(c)] = sum_increasing(fmt, prods);
      }
    }
    for (int c = 0; c < d_v; ++c) {
      FpMultiset prods;
      for (std::size_t e = 0; e < entries.size(); ++e)
        prods.add(fp_mul(fmt, weights[e], vals[e][static_cast<std::size_t>(c)]),
                  entries[e].second);
      concat.push_back(sum_increasing(fmt, prods));
    }
  }
  // multiply the concatenated head outputs by Wo
  std::vector<Fp> out(static_cast<std::size_t>(d));
  for (int j = 0; j < d; ++j) {
    FpMultiset prods;
    for (std::size_t i = 0; i < concat.size(); ++i)
      prods.add(fp_mul(fmt, concat[i], block.wo.at(static_cast<int>(i), j)));
    out[static_cast<std::size_t>(j)] = sum_increasing(fmt, prods);
  }
  return out;
}

}  // namespace detail

/// Equivalent distributed automaton: one transition per attention sublayer,
/// MLP, and output head (2*L1 + 3*L2 + 1 rounds). States carry the feature
/// row's bit patterns, a BOS flag, and the sublayer phase; the cap is the
/// format's validated saturation bound, beyond which larger multiplicities
/// cannot change any increasing-order sum.
inline CpgAutomaton transformer_to_automaton(const Transformer& t) {
  t.cfg.validate();
  const FloatFormat fmt = t.cfg.fmt;
  const auto schedule = detail::sublayer_schedule(t.cfg);
  const int phases = static_cast<int>(schedule.size());

  detail::StateCodec codec;
  codec.fmt = fmt;
  codec.width = std::max(t.cfg.d, t.cfg.d_out);
  codec.phases = phases;
  codec.phase_bits = 1;
  while ((1 << codec.phase_bits) < phases + 1) ++codec.phase_bits;

  auto model = std::make_shared<Transformer>(t);

  CpgAutomaton a;
  a.m_total = codec.total_bits();
  a.cap_k = saturation_bound(fmt);
  a.out_round = phases;  // = 2*L1 + 3*L2 + 1
  a.out_len = t.cfg.d_out * fmt.total_bits();
  a.variant = t.cfg.mask == MaskMode::Strict ? CpgAutomaton::Variant::StrictPast
                                             : CpgAutomaton::Variant::IncludeSelf;
  a.kind = "compiled-from-transformer";
  for (const auto& [tok, vec] : model->embedding)
    a.init[tok] = codec.encode(vec, tok == kBos, 0);

  a.delta = [model, codec, schedule, fmt](const Bits& state, const StateMultiset& pre,
                                          const StateMultiset& past) -> Bits {
    const int phase = codec.decode_phase(state);
    if (phase >= static_cast<int>(schedule.size())) return state;  // frozen
    const bool bos = codec.decode_bos(state);
    const bool suffix = bos || !past.empty();
    const auto& step = schedule[static_cast<std::size_t>(phase)];
    using K = detail::SublayerPhase::Kind;
    const bool enc_phase = step.kind == K::EncAttn || step.kind == K::EncMlp;
    if (enc_phase == suffix) {  // the other stream only advances its phase
      std::vector<Fp> row = codec.decode_row(state, codec.width);
      return codec.encode(row, bos, phase + 1);
    }
    const int d = model->cfg.d;
    std::vector<Fp> row = codec.decode_row(state, d);
    auto decode_entries = [&](const StateMultiset& mset) {
      std::vector<std::pair<std::vector<Fp>, std::uint64_t>> entries;
      entries.reserve(mset.items.size());
      for (const auto& [s, c] : mset.items)
        entries.emplace_back(codec.decode_row(s, d), c);
      return entries;
    };
    const LnMode ln = model->cfg.ln;
    auto apply_ln = [&](const std::vector<Fp>& r, const LnParams& p) {
      return layer_norm_row(fmt, r, p);
    };
    auto residual = [&](const std::vector<Fp>& f, const std::vector<Fp>& base) {
      std::vector<Fp> out(base.size());
      for (std::size_t i = 0; i < base.size(); ++i) out[i] = fp_add(fmt, f[i], base[i]);
      return out;
    };
    auto attn_sublayer = [&](const AttnBlock& block, const LnParams& p,
                             std::vector<std::pair<std::vector<Fp>, std::uint64_t>> entries) {
      std::vector<Fp> q_row = row;
      if (ln == LnMode::Pre) {
        q_row = apply_ln(row, p);
        for (auto& [feat, c] : entries) feat = apply_ln(feat, p);
      }
      std::vector<Fp> attn =
          detail::attention_row_multiset(fmt, q_row, entries, block, model->cfg.d_v);
      std::vector<Fp> summed = residual(attn, row);
      if (ln == LnMode::Post) summed = apply_ln(summed, p);
      return summed;
    };

    std::vector<Fp> next;
    switch (step.kind) {
      case K::EncAttn: {
        const auto& layer = model->enc[static_cast<std::size_t>(step.layer)];
        next = attn_sublayer(layer.self_attn, layer.ln_attn, decode_entries(pre));
        break;
      }
      case K::DecMasked: {
        const auto& layer = model->dec[static_cast<std::size_t>(step.layer)];
        next = attn_sublayer(layer.masked_attn, layer.ln_masked, decode_entries(past));
        break;
      }
      case K::DecCross: {
        const auto& layer = model->dec[static_cast<std::size_t>(step.layer)];
        next = attn_sublayer(layer.cross_attn, layer.ln_cross, decode_entries(pre));
        break;
      }
      case K::EncMlp:
      case K::DecMlp: {
        const MlpWeights& mlp = step.kind == K::EncMlp
                                    ? model->enc[static_cast<std::size_t>(step.layer)].mlp
                                    : model->dec[static_cast<std::size_t>(step.layer)].mlp;
        const LnParams& p = step.kind == K::EncMlp
                                ? model->enc[static_cast<std::size_t>(step.layer)].ln_mlp
                                : model->dec[static_cast<std::size_t>(step.layer)].ln_mlp;
        std::vector<Fp> in = ln == LnMode::Pre ? apply_ln(row, p) : row;
        std::vector<Fp> out = residual(mlp_apply(fmt, in, mlp), row);
        if (ln == LnMode::Post) out = apply_ln(out, p);
        next = std::move(out);
        break;
      }
      case K::OutHead: {
        next.assign(static_cast<std::size_t>(model->cfg.d_out), Fp::zero());
        for (int c = 0; c < model->cfg.d_out; ++c) {
          FpMultiset prods;
          for (int i = 0; i < d; ++i)
            prods.add(fp_mul(fmt, row[static_cast<std::size_t>(i)], model->w_out.at(i, c)));
          next[static_cast<std::size_t>(c)] =
              fp_add(fmt, sum_increasing(fmt, prods), model->b_out[static_cast<std::size_t>(c)]);
        }
        break;
      }
    }
    return codec.encode(next, bos, phase + 1);
  };
  a.validate();
  return a;
}

/// Softmax-aware variant: the automaton additionally maps its final bits
/// through softmax and emits a related output (canonical pick), so that
/// wherever a related output exists at all, the automaton produces one.
inline CpgAutomaton transformer_softmax_to_automaton(const Transformer& t,
                                                     const SimilarityRelation& sim) {
  const CpgAutomaton base = transformer_to_automaton(t);
  const FloatFormat fmt = t.cfg.fmt;
  const int d_out = t.cfg.d_out;
  const int cell = fmt.total_bits();
  detail::StateCodec codec;
  codec.fmt = fmt;
  codec.width = d_out;
  codec.phase_bits = 1;
  codec.phases = 1;
  auto f = [fmt, d_out, cell, sim, codec](const Bits& b) -> Bits {
    std::vector<Fp> floats;
    for (int i = 0; i < d_out; ++i) {
      std::uint64_t bits = 0;
      for (int j = 0; j < cell; ++j)
        bits = bits * 2 + (b[static_cast<std::size_t>(i * cell + j)] == '1');
      floats.push_back(Fp::from_bits(fmt, bits));
    }
    const std::vector<Fp> soft = softmax_row(fmt, floats);
    const auto picked = sim.pick_related(fmt, soft);
    const std::vector<Fp>& out = picked ? *picked : soft;
    Bits encoded;
    for (const Fp& v : out) {
      const std::uint64_t bits = v.bits(fmt);
      for (int j = cell - 1; j >= 0; --j) encoded += ((bits >> j) & 1) ? '1' : '0';
    }
    return encoded;
  };
  return compose_postmap(base, f, d_out * cell);
}

// ---------------------------------------------------------------------------
// Automaton -> logic (corpus-grounded types)
// ---------------------------------------------------------------------------

struct TypeCoverageCertificate {
  std::uint32_t k = 1;
  std::uint32_t depth = 0;
  int corpus_bound = 0;
  TypeUniverse universe;
  std::vector<std::pair<TypeValue, Bits>> realized;  // suffix-point type -> state

  /// A pointed graph is covered when every type it realizes (any vertex,
  /// any depth up to the bound) appears in the universe and the point's own
  /// type was seen at a suffix point during construction.
  bool covers_point(const TwoSortedGraph& g, int v) const {
    if (!universe.covers(g)) return false;
    const TypeValue t = type_of(g, v, k, depth);
    for (const auto& [tau, state] : realized)
      if (tau == t) return true;
    return false;
  }
};

struct AutomatonLogic {
  FormulaTuple tuple;
  TypeCoverageCertificate certificate;
};

/// Builds, for every output bit, the disjunction of rendered type formulas
/// of the suffix points that reach a state with that bit set. Exact on every
/// graph whose realized types the certificate covers.
inline AutomatonLogic automaton_to_logic(const CpgAutomaton& a, const Vocab& vocab,
                                         int corpus_bound, std::size_t type_budget = 4096) {
  a.validate();
  if (corpus_bound < 1) throw std::invalid_argument("corpus bound must be >= 1");
  const auto corpus = enumerate_graphs(vocab, corpus_bound);
  if (corpus.empty()) throw std::runtime_error("corpus produced zero graphs");
  const std::uint32_t k = static_cast<std::uint32_t>(a.cap_k);
  const std::uint32_t n = static_cast<std::uint32_t>(a.out_round);

  TypeCoverageCertificate cert;
  cert.k = k;
  cert.depth = n;
  cert.corpus_bound = corpus_bound;
  cert.universe = TypeUniverse::build(corpus, k, n);
  if (cert.universe.total_types() > type_budget)
    throw std::runtime_error("type budget exceeded: " +
                             std::to_string(cert.universe.total_types()));

  std::map<TypeValue, Bits> buckets;
  for (const auto& g : corpus) {
    const auto states = run(a, g);
    const auto types = types_of_all(g, k, n);
    for (int v = g.bos_index(); v <= g.size(); ++v) {
      const TypeValue& t = types[n][static_cast<std::size_t>(v - 1)];
      const Bits out = states[static_cast<std::size_t>(v - 1)].substr(
          0, static_cast<std::size_t>(a.out_len));
      auto [it, fresh] = buckets.emplace(t, out);
      if (!fresh && it->second != out)
        throw std::logic_error("equal types reached different states");
    }
  }
  cert.realized.assign(buckets.begin(), buckets.end());

  std::map<TypeValue, FormulaPtr> memo;
  AutomatonLogic out;
  out.tuple.variant = LogicVariant::Core;
  for (int bit = 0; bit < a.out_len; ++bit) {
    FormulaPtr disj;
    for (const auto& [t, state] : buckets) {
      if (state[static_cast<std::size_t>(bit)] != '1') continue;
      const FormulaPtr r = render_type_formula(t, cert.universe, vocab, &memo);
      disj = disj ? f_not(f_and(f_not(disj), f_not(r))) : r;  // or
    }
    out.tuple.formulas.push_back(disj ? disj : f_bot());
  }
  out.certificate = std::move(cert);
  return out;
}

// ---------------------------------------------------------------------------
// Compositions (logic -> automaton, automaton -> transformer)
// ---------------------------------------------------------------------------

/// Logic to automaton: compile to a transformer, translate to an automaton,
/// then append one round collapsing each float cell to the bit it encodes.
inline CpgAutomaton logic_to_automaton(const FormulaTuple& tuple, const FloatFormat& fmt,
                                       const Vocab& vocab) {
  const CompiledLogic compiled = logic_to_transformer(tuple, fmt, vocab);
  const CpgAutomaton base = transformer_to_automaton(compiled.model);
  const int cell = fmt.total_bits();
  const int m = static_cast<int>(tuple.formulas.size());
  const Bits one_pattern = [&] {
    Bits b;
    const std::uint64_t bits = fp_one(fmt).bits(fmt);
    for (int j = cell - 1; j >= 0; --j) b += ((bits >> j) & 1) ? '1' : '0';
    return b;
  }();
  auto collapse = [cell, m, one_pattern](const Bits& b) -> Bits {
    Bits out;
    for (int i = 0; i < m; ++i)
      out += b.substr(static_cast<std::size_t>(i * cell), static_cast<std::size_t>(cell)) ==
                     one_pattern
                 ? '1'
                 : '0';
    return out;
  };
  CpgAutomaton wrapped = compose_postmap(base, collapse, m);
  wrapped.kind = "compiled-from-logic";
  return wrapped;
}

struct AutomatonTransformer {
  Transformer model;
  TypeCoverageCertificate certificate;
  CompilePlan plan;
};

inline AutomatonTransformer automaton_to_transformer(const CpgAutomaton& a,
                                                     const FloatFormat& fmt, const Vocab& vocab,
                                                     int corpus_bound) {
  AutomatonLogic logic = automaton_to_logic(a, vocab, corpus_bound);
  CompiledLogic compiled = logic_to_transformer(logic.tuple, fmt, vocab);
  return AutomatonTransformer{std::move(compiled.model), std::move(logic.certificate),
                              std::move(compiled.plan)};
}

// ---------------------------------------------------------------------------
// Softmax-aware logic translations
// ---------------------------------------------------------------------------

struct SoftmaxDiagnostics {
  /// Source outputs whose similarity image is empty (or unreachable):
  /// permitted by the equivalence definition, recorded for the caller.
  std::vector<std::vector<Fp>> no_related_output;
};

/// Automaton to tuple under a similarity relation: the base translation
/// postcomposed with a Boolean map sending each realized output pattern to
/// a related one.
inline AutomatonLogic automaton_to_logic_softmax(const CpgAutomaton& a,
                                                 const SimilarityRelation& sim,
                                                 const Vocab& vocab, int corpus_bound,
                                                 const FloatFormat& fmt,
                                                 SoftmaxDiagnostics* diags = nullptr) {
  AutomatonLogic base = automaton_to_logic(a, vocab, corpus_bound);
  const int cell = fmt.total_bits();
  if (a.out_len % cell != 0)
    throw std::invalid_argument("output length is not a whole number of float cells");
  const int d_out = a.out_len / cell;

  // realized output patterns on the corpus
  std::set<Bits> patterns;
  for (const auto& [t, state] : base.certificate.realized) patterns.insert(state);

  auto decode_vec = [&](const Bits& b) {
    std::vector<Fp> floats;
    for (int i = 0; i < d_out; ++i) {
      std::uint64_t bits = 0;
      for (int j = 0; j < cell; ++j)
        bits = bits * 2 + (b[static_cast<std::size_t>(i * cell + j)] == '1');
      floats.push_back(Fp::from_bits(fmt, bits));
    }
    return floats;
  };
  auto encode_vec = [&](const std::vector<Fp>& v) {
    Bits b;
    for (const Fp& x : v) {
      const std::uint64_t bits = x.bits(fmt);
      for (int j = cell - 1; j >= 0; --j) b += ((bits >> j) & 1) ? '1' : '0';
    }
    return b;
  };

  std::map<Bits, Bits> mapping;
  for (const Bits& p : patterns) {
    const auto v = decode_vec(p);
    const auto picked = sim.pick_related(fmt, v);
    if (picked) {
      mapping[p] = encode_vec(*picked);
    } else {
      mapping[p] = p;
      if (diags) diags->no_related_output.push_back(v);
    }
  }

  // chi_j = OR over patterns P with mapping(P)[j] = 1 of AND_i psi_i^(P_i)
  AutomatonLogic out;
  out.certificate = base.certificate;
  out.tuple.variant = LogicVariant::Core;
  const auto& psi = base.tuple.formulas;
  auto indicator = [&](const Bits& p) {
    FormulaPtr acc;
    for (std::size_t i = 0; i < psi.size(); ++i) {
      FormulaPtr lit = p[i] == '1' ? psi[i] : f_not(psi[i]);
      acc = acc ? f_and(acc, lit) : lit;
    }
    return acc ? acc : f_top();
  };
  for (int j = 0; j < a.out_len; ++j) {
    FormulaPtr disj;
    for (const auto& [p, mapped] : mapping) {
      if (mapped[static_cast<std::size_t>(j)] != '1') continue;
      const FormulaPtr ind = indicator(p);
      disj = disj ? f_not(f_and(f_not(disj), f_not(ind))) : ind;
    }
    out.tuple.formulas.push_back(disj ? disj : f_bot());
  }
  return out;
}

/// Tuple to transformer-with-softmax: compiles the tuple, then looks up, per
/// realized output pattern, a pre-image of a softmax output related to the
/// pattern's float reading, and emits that pre-image through the final head
/// so the trailing softmax lands in the related class.
struct SoftmaxTransformer {
  Transformer model;  // run(...) then softmax_row per row gives the output
  CompilePlan plan;
  SoftmaxDiagnostics diagnostics;
};

inline SoftmaxTransformer logic_to_transformer_softmax(const FormulaTuple& tuple,
                                                       const SimilarityRelation& sim,
                                                       const FloatFormat& fmt,
                                                       const Vocab& vocab, int corpus_bound) {
  const int cell = fmt.total_bits();
  const int m = static_cast<int>(tuple.formulas.size());
  if (m % cell != 0)
    throw std::invalid_argument("tuple length is not a whole number of float cells");
  const int d_out = m / cell;

  // realized bit patterns of the tuple over the corpus
  const auto corpus = enumerate_graphs(vocab, corpus_bound);
  std::set<std::string> patterns;
  for (const auto& g : corpus)
    for (int v = g.bos_index(); v <= g.size(); ++v) patterns.insert(eval_tuple(tuple, g, v));

  // softmax range over NaN-free finite inputs, keyed by output, first
  // pre-image in bit-pattern order
  std::map<std::string, std::vector<Fp>> range;  // serialized output -> preimage y
  std::vector<std::vector<Fp>> range_outputs;
  {
    // iterate y in bit-pattern-lexicographic order
    std::vector<Fp> by_pattern;
    for (std::uint64_t bits = 0; bits < (std::uint64_t{1} << fmt.total_bits()); ++bits) {
      const Fp v = Fp::from_bits(fmt, bits);
      if (v.is_finite() && v.bits(fmt) == bits) by_pattern.push_back(v);
    }
    std::vector<std::size_t> odo(static_cast<std::size_t>(d_out), 0);
    for (;;) {
      std::vector<Fp> y;
      for (int i = 0; i < d_out; ++i) y.push_back(by_pattern[odo[static_cast<std::size_t>(i)]]);
      const std::vector<Fp> s = softmax_row(fmt, y);
      std::string key;
      for (const Fp& v : s) key += fp_to_hex(fmt, v) + ",";
      if (!range.count(key)) {
        range.emplace(key, y);
        range_outputs.push_back(s);
      }
      int i = d_out - 1;
      while (i >= 0 && ++odo[static_cast<std::size_t>(i)] == by_pattern.size()) {
        odo[static_cast<std::size_t>(i)] = 0;
        --i;
      }
      if (i < 0) break;
    }
  }

  SoftmaxDiagnostics diags;
  std::map<std::string, std::vector<Fp>> preimage_for_pattern;
  for (const std::string& p : patterns) {
    std::vector<Fp> vf;
    for (int i = 0; i < d_out; ++i) {
      std::uint64_t bits = 0;
      for (int j = 0; j < cell; ++j) bits = bits * 2 + (p[static_cast<std::size_t>(i * cell + j)] == '1');
      vf.push_back(Fp::from_bits(fmt, bits));
    }
    // find a related element of the softmax range (canonical order)
    std::optional<std::vector<Fp>> pre;
    for (const auto& out : range_outputs) {
      if (sim.related(fmt, vf, out)) {
        std::string key;
        for (const Fp& v : out) key += fp_to_hex(fmt, v) + ",";
        pre = range.at(key);
        break;
      }
    }
    if (!pre) {
      diags.no_related_output.push_back(vf);
      pre = vf;  // vacuous point: nothing in our range is related
    }
    preimage_for_pattern[p] = *pre;
  }

  // compile with extra columns: m literal negations + per-pattern AND trees
  const int n_patterns = static_cast<int>(preimage_for_pattern.size());
  const int tree_cols_per_pattern = std::max(0, m - 1);
  const int extra = m + n_patterns * tree_cols_per_pattern;
  LogicCompiler compiler(fmt, vocab, tuple.variant);
  CompiledLogic compiled = compiler.compile(tuple, extra);

  // locate the formula columns and the extra block
  const int extra0 = compiled.plan.scratch0 + 4;
  std::vector<int> bit_cols(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) {
    const std::string key = detail::formula_key(tuple.formulas[static_cast<std::size_t>(i)]);
    for (const auto& [k2, c] : compiled.plan.columns)
      if (k2 == key) bit_cols[static_cast<std::size_t>(i)] = c;
  }
  Transformer& model = compiled.model;
  const Fp one = fp_one(fmt);
  const int d = model.cfg.d;
  int next_col = extra0;
  std::vector<int> neg_cols(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) neg_cols[static_cast<std::size_t>(i)] = next_col++;

  auto zero_attn = [&] {
    AttnBlock block;
    for (int i = 0; i < 2; ++i) {
      HeadWeights hw;
      hw.wq = Matrix(d, 1);
      hw.wk = Matrix(d, 1);
      hw.wv = Matrix(d, 1);
      block.heads.push_back(std::move(hw));
    }
    block.wo = Matrix(2, d);
    return block;
  };
  auto push_mlp_layer = [&](const detail::MlpBuilder& mlp, const std::string& why) {
    DecoderLayerWeights dl;
    dl.masked_attn = zero_attn();
    dl.cross_attn = zero_attn();
    const int d_ff = std::max(model.cfg.d_ff, mlp.hidden_count());
    model.cfg.d_ff = d_ff;
    dl.mlp = mlp.build(std::max(1, mlp.hidden_count()));
    model.dec.push_back(std::move(dl));
    compiled.plan.decoder_stages.push_back(why);
  };

  // layer: all literal negations at once
  {
    detail::MlpBuilder mlp(d);
    mlp.set_one(one);
    for (int i = 0; i < m; ++i) {
      const int h = mlp.hidden({{bit_cols[static_cast<std::size_t>(i)], one.negated()}}, one);
      mlp.output(neg_cols[static_cast<std::size_t>(i)], h, one);
    }
    push_mlp_layer(mlp, "softmax/negate-literals");
  }
  // AND trees, one level per layer, all patterns in parallel
  struct TreeState {
    std::vector<int> frontier;  // columns of the current conjunct level
  };
  std::map<std::string, TreeState> trees;
  for (const auto& [p, pre] : preimage_for_pattern) {
    TreeState ts;
    for (int i = 0; i < m; ++i)
      ts.frontier.push_back(p[static_cast<std::size_t>(i)] == '1'
                                ? bit_cols[static_cast<std::size_t>(i)]
                                : neg_cols[static_cast<std::size_t>(i)]);
    trees[p] = std::move(ts);
  }
  bool more = true;
  int level = 0;
  while (more) {
    more = false;
    detail::MlpBuilder mlp(d);
    mlp.set_one(one);
    bool emitted = false;
    for (auto& [p, ts] : trees) {
      if (ts.frontier.size() <= 1) continue;
      std::vector<int> next_frontier;
      for (std::size_t i = 0; i + 1 < ts.frontier.size(); i += 2) {
        const int target = next_col++;
        const int h = ts.frontier[i] == ts.frontier[i + 1]
                          ? mlp.hidden({{ts.frontier[i], one}})  // x & x = x
                          : mlp.hidden({{ts.frontier[i], one}, {ts.frontier[i + 1], one}},
                                       one.negated());
        mlp.output(target, h, one);
        next_frontier.push_back(target);
        emitted = true;
      }
      if (ts.frontier.size() % 2 == 1) next_frontier.push_back(ts.frontier.back());
      ts.frontier = std::move(next_frontier);
      if (ts.frontier.size() > 1) more = true;
    }
    if (emitted) push_mlp_layer(mlp, "softmax/and-level-" + std::to_string(level++));
  }
  if (next_col > d) throw std::logic_error("softmax lookup exceeded its reserved columns");

  // final head: out_j = sum over patterns of indicator * preimage_j
  model.cfg.d_out = d_out;
  model.w_out = Matrix(d, d_out);
  model.b_out.assign(static_cast<std::size_t>(d_out), Fp::zero());
  for (const auto& [p, ts] : trees) {
    const auto& pre = preimage_for_pattern.at(p);
    const int ind_col = ts.frontier.at(0);
    for (int j = 0; j < d_out; ++j)
      model.w_out.at(ind_col, j) = pre[static_cast<std::size_t>(j)];
  }
  model.cfg.L2 = static_cast<int>(model.dec.size());

  // re-pad all MLPs to the final d_ff
  for (auto& el : model.enc) {
    MlpWeights& mw = el.mlp;
    if (mw.w1.cols < model.cfg.d_ff) {
      Matrix w1(d, model.cfg.d_ff);
      for (int i = 0; i < mw.w1.rows; ++i)
        for (int j = 0; j < mw.w1.cols; ++j) w1.at(i, j) = mw.w1.at(i, j);
      mw.b1.resize(static_cast<std::size_t>(model.cfg.d_ff), Fp::zero());
      Matrix w2(model.cfg.d_ff, d);
      for (int i = 0; i < mw.w2.rows; ++i)
        for (int j = 0; j < mw.w2.cols; ++j) w2.at(i, j) = mw.w2.at(i, j);
      mw.w1 = std::move(w1);
      mw.w2 = std::move(w2);
    }
  }
  for (auto& dl : model.dec) {
    MlpWeights& mw = dl.mlp;
    if (mw.w1.cols < model.cfg.d_ff) {
      Matrix w1(d, model.cfg.d_ff);
      for (int i = 0; i < mw.w1.rows; ++i)
        for (int j = 0; j < mw.w1.cols; ++j) w1.at(i, j) = mw.w1.at(i, j);
      mw.b1.resize(static_cast<std::size_t>(model.cfg.d_ff), Fp::zero());
      Matrix w2(model.cfg.d_ff, d);
      for (int i = 0; i < mw.w2.rows; ++i)
        for (int j = 0; j < mw.w2.cols; ++j) w2.at(i, j) = mw.w2.at(i, j);
      mw.w1 = std::move(w1);
      mw.w2 = std::move(w2);
    }
  }

  return SoftmaxTransformer{std::move(compiled.model), std::move(compiled.plan),
                            std::move(diags)};
}

}  // namespace trilab
