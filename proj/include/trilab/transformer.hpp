#pragma once

#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "trilab/floats.hpp"
#include "trilab/graphs.hpp"

namespace trilab {

// ---------------------------------------------------------------------------
// Matrices over Fp. Every inner product is the increasing-order sum of the
// multiset of individually rounded products; that one rule fixes the result
// of every matrix operation bit-for-bit.
// ---------------------------------------------------------------------------

struct Matrix {
  int rows = 0, cols = 0;
  std::vector<Fp> data;

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c) {}

  Fp& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  const Fp& at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }

  std::span<const Fp> row(int r) const {
    return std::span<const Fp>(data).subspan(static_cast<std::size_t>(r) * cols,
                                             static_cast<std::size_t>(cols));
  }

  friend bool operator==(const Matrix& a, const Matrix& b) {
    return a.rows == b.rows && a.cols == b.cols && a.data == b.data;
  }
};

inline Fp dot_increasing(const FloatFormat& fmt, std::span<const Fp> x, std::span<const Fp> y) {
  if (x.size() != y.size()) throw std::invalid_argument("dot: length mismatch");
  FpMultiset products;
  for (std::size_t i = 0; i < x.size(); ++i) products.add(fp_mul(fmt, x[i], y[i]));
  return sum_increasing(fmt, products);
}

inline Matrix fp_matmul(const FloatFormat& fmt, const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows) throw std::invalid_argument("matmul: shape mismatch");
  Matrix c(a.rows, b.cols);
  for (int i = 0; i < a.rows; ++i)
    for (int j = 0; j < b.cols; ++j) {
      FpMultiset products;
      for (int k = 0; k < a.cols; ++k) products.add(fp_mul(fmt, a.at(i, k), b.at(k, j)));
      c.at(i, j) = sum_increasing(fmt, products);
    }
  return c;
}

inline Matrix fp_matadd(const FloatFormat& fmt, const Matrix& a, const Matrix& b) {
  if (a.rows != b.rows || a.cols != b.cols) throw std::invalid_argument("matadd: shape mismatch");
  Matrix c(a.rows, a.cols);
  for (std::size_t i = 0; i < a.data.size(); ++i) c.data[i] = fp_add(fmt, a.data[i], b.data[i]);
  return c;
}

/// Columns of a after columns of... rather: horizontal concatenation.
inline Matrix concat_cols(const std::vector<Matrix>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat of nothing");
  int cols = 0;
  for (const auto& m : parts) {
    if (m.rows != parts[0].rows) throw std::invalid_argument("concat: row mismatch");
    cols += m.cols;
  }
  Matrix out(parts[0].rows, cols);
  for (int i = 0; i < out.rows; ++i) {
    int c0 = 0;
    for (const auto& m : parts) {
      for (int j = 0; j < m.cols; ++j) out.at(i, c0 + j) = m.at(i, j);
      c0 += m.cols;
    }
  }
  return out;
}

inline Fp relu(const Fp& x) {
  if (x.is_nan()) return Fp::nan();
  if (x.negative()) return Fp::zero();
  return x;
}

// ---------------------------------------------------------------------------
// Model description
// ---------------------------------------------------------------------------

enum class MaskMode { Strict, NonStrict };
enum class LnMode { None, Pre, Post };

struct TransformerConfig {
  FloatFormat fmt;
  int d = 1, d_k = 1, d_v = 1, d_ff = 1, d_out = 1;
  int h = 1;
  int L1 = 0, L2 = 0;
  MaskMode mask = MaskMode::Strict;
  LnMode ln = LnMode::None;

  void validate() const {
    if (d < 1 || d_k < 1 || d_v < 1 || d_ff < 1 || d_out < 1 || h < 1 || L1 < 0 || L2 < 0)
      throw std::invalid_argument("transformer config: dimensions must be positive");
  }
};

struct HeadWeights {
  Matrix wq, wk;  // d x d_k
  Matrix wv;      // d x d_v
};

struct AttnBlock {
  std::vector<HeadWeights> heads;  // h of them
  Matrix wo;                       // (h*d_v) x d
};

struct MlpWeights {
  Matrix w1;              // d x d_ff
  std::vector<Fp> b1;     // d_ff
  Matrix w2;              // d_ff x d
  std::vector<Fp> b2;     // d
};

struct LnParams {
  Fp gamma, beta, eps;
};

struct EncoderLayerWeights {
  AttnBlock self_attn;
  MlpWeights mlp;
  LnParams ln_attn, ln_mlp;  // used when the config enables layer norm
};

struct DecoderLayerWeights {
  AttnBlock masked_attn;
  AttnBlock cross_attn;
  MlpWeights mlp;
  LnParams ln_masked, ln_cross, ln_mlp;
};

struct Transformer {
  TransformerConfig cfg;
  std::vector<std::pair<Token, std::vector<Fp>>> embedding;  // over Sigma and BOS
  std::vector<EncoderLayerWeights> enc;
  std::vector<DecoderLayerWeights> dec;
  Matrix w_out;             // d x d_out
  std::vector<Fp> b_out;    // d_out

  const std::vector<Fp>& embed(Token t) const {
    for (const auto& [tok, vec] : embedding)
      if (tok == t) return vec;
    throw std::invalid_argument("token has no embedding");
  }
};

// ---------------------------------------------------------------------------
// Core operations
// ---------------------------------------------------------------------------

enum class AttnKind { Unmasked, Masked, Cross };

/// Replaces future-position scores with -infinity. Strict masks j >= i,
/// non-strict only j > i (1-based, applied to square matrices).
inline Matrix mask_scores(const Matrix& s, MaskMode mode) {
  if (s.rows != s.cols) throw std::invalid_argument("mask: matrix must be square");
  Matrix out = s;
  for (int i = 0; i < s.rows; ++i)
    for (int j = 0; j < s.cols; ++j)
      if (mode == MaskMode::Strict ? j >= i : j > i) out.at(i, j) = Fp::neg_inf();
  return out;
}

/// Row-wise softmax with the stability bias b = max(x). A row of only
/// -infinities yields all zeros; NaN anywhere poisons the whole row.
inline std::vector<Fp> softmax_row(const FloatFormat& fmt, std::span<const Fp> x) {
  std::vector<Fp> out(x.size());
  if (x.empty()) return out;
  for (const Fp& v : x)
    if (v.is_nan()) return std::vector<Fp>(x.size(), Fp::nan());
  FpValueLess less;
  Fp mx = x[0];
  for (const Fp& v : x)
    if (less(mx, v)) mx = v;
  if (mx == Fp::neg_inf()) return out;  // all zeros by convention
  FpMultiset numerators;
  std::vector<Fp> num(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    num[i] = fp_exp(fmt, fp_sub(fmt, x[i], mx));
    if (num[i].is_nan()) return std::vector<Fp>(x.size(), Fp::nan());
    numerators.add(num[i]);
  }
  const Fp den = sum_increasing(fmt, numerators);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = fp_div(fmt, num[i], den);
  return out;
}

/// One attention head: softmax(mask((Y Wq)(X Wk)^T / sqrt(d_k))) (X Wv).
/// Masked attention requires X = Y and is the only masked case; Cross and
/// Unmasked differ only in whether X and Y coincide.
inline Matrix attention_head(const FloatFormat& fmt, const Matrix& x, const Matrix& y,
                             const HeadWeights& w, AttnKind kind,
                             MaskMode mode = MaskMode::Strict) {
  const Matrix q = fp_matmul(fmt, y, w.wq);                     // rows(y) x d_k
  const Matrix k = fp_matmul(fmt, x, w.wk);                     // rows(x) x d_k
  const Matrix v = fp_matmul(fmt, x, w.wv);                     // rows(x) x d_v
  const Fp scale = fp_sqrt(fmt, encode_int(fmt, w.wq.cols));
  Matrix scores(q.rows, k.rows);
  for (int i = 0; i < q.rows; ++i)
    for (int j = 0; j < k.rows; ++j)
      scores.at(i, j) = fp_div(fmt, dot_increasing(fmt, q.row(i), k.row(j)), scale);
  if (kind == AttnKind::Masked) {
    if (x.rows != y.rows) throw std::invalid_argument("masked attention requires X = Y");
    scores = mask_scores(scores, mode);
  }
  Matrix out(q.rows, v.cols);
  for (int i = 0; i < q.rows; ++i) {
    const std::vector<Fp> weights = softmax_row(fmt, scores.row(i));
    for (int c = 0; c < v.cols; ++c) {
      FpMultiset products;
      for (int j = 0; j < k.rows; ++j) products.add(fp_mul(fmt, weights[j], v.at(j, c)));
      out.at(i, c) = sum_increasing(fmt, products);
    }
  }
  return out;
}

/// Multi-head layer: concat of the heads followed by the output projection.
inline Matrix multi_head(const FloatFormat& fmt, const Matrix& x, const Matrix& y,
                         const AttnBlock& block, AttnKind kind, MaskMode mode) {
  std::vector<Matrix> outs;
  outs.reserve(block.heads.size());
  for (const auto& head : block.heads)
    outs.push_back(attention_head(fmt, x, y, head, kind, mode));
  return fp_matmul(fmt, concat_cols(outs), block.wo);
}

inline Matrix mhsa(const FloatFormat& fmt, const Matrix& x, const AttnBlock& block,
                   bool masked, MaskMode mode = MaskMode::Strict) {
  return multi_head(fmt, x, x, block, masked ? AttnKind::Masked : AttnKind::Unmasked, mode);
}

inline Matrix mhca(const FloatFormat& fmt, const Matrix& x, const Matrix& y,
                   const AttnBlock& block) {
  return multi_head(fmt, x, y, block, AttnKind::Cross, MaskMode::Strict);
}

/// ReLU(x W1 + b1) W2 + b2 on one row; biases are added after the inner sums.
inline std::vector<Fp> mlp_apply(const FloatFormat& fmt, std::span<const Fp> x,
                                 const MlpWeights& w) {
  std::vector<Fp> hidden(static_cast<std::size_t>(w.w1.cols));
  for (int j = 0; j < w.w1.cols; ++j) {
    FpMultiset products;
    for (int i = 0; i < w.w1.rows; ++i) products.add(fp_mul(fmt, x[static_cast<std::size_t>(i)], w.w1.at(i, j)));
    hidden[static_cast<std::size_t>(j)] =
        relu(fp_add(fmt, sum_increasing(fmt, products), w.b1[static_cast<std::size_t>(j)]));
  }
  std::vector<Fp> out(static_cast<std::size_t>(w.w2.cols));
  for (int j = 0; j < w.w2.cols; ++j) {
    FpMultiset products;
    for (int i = 0; i < w.w2.rows; ++i) products.add(fp_mul(fmt, hidden[static_cast<std::size_t>(i)], w.w2.at(i, j)));
    out[static_cast<std::size_t>(j)] =
        fp_add(fmt, sum_increasing(fmt, products), w.b2[static_cast<std::size_t>(j)]);
  }
  return out;
}

inline Matrix mlp_apply_rows(const FloatFormat& fmt, const Matrix& x, const MlpWeights& w) {
  Matrix out(x.rows, x.cols);
  for (int i = 0; i < x.rows; ++i) {
    const auto row = mlp_apply(fmt, x.row(i), w);
    for (int c = 0; c < x.cols; ++c) out.at(i, c) = row[static_cast<std::size_t>(c)];
  }
  return out;
}

/// (x - mu)/sqrt(var + eps) * gamma + beta, with mean and variance computed
/// by the increasing-order rule.
inline std::vector<Fp> layer_norm_row(const FloatFormat& fmt, std::span<const Fp> x,
                                      const LnParams& ln) {
  if (x.empty()) throw std::invalid_argument("layer norm of an empty row");
  const Fp n = encode_int(fmt, static_cast<long>(x.size()));
  FpMultiset xs;
  for (const Fp& v : x) xs.add(v);
  const Fp mu = fp_div(fmt, sum_increasing(fmt, xs), n);
  std::vector<Fp> dev(x.size());
  FpMultiset sq;
  for (std::size_t i = 0; i < x.size(); ++i) {
    dev[i] = fp_sub(fmt, x[i], mu);
    sq.add(fp_mul(fmt, dev[i], dev[i]));
  }
  const Fp var = fp_div(fmt, sum_increasing(fmt, sq), n);
  const Fp denom = fp_sqrt(fmt, fp_add(fmt, var, ln.eps));
  std::vector<Fp> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i)
    out[i] = fp_add(fmt, fp_mul(fmt, fp_div(fmt, dev[i], denom), ln.gamma), ln.beta);
  return out;
}

inline Matrix layer_norm_rows(const FloatFormat& fmt, const Matrix& x, const LnParams& ln) {
  Matrix out(x.rows, x.cols);
  for (int i = 0; i < x.rows; ++i) {
    const auto row = layer_norm_row(fmt, x.row(i), ln);
    for (int c = 0; c < x.cols; ++c) out.at(i, c) = row[static_cast<std::size_t>(c)];
  }
  return out;
}

namespace detail {

/// Applies one residual sublayer z -> f(z) + z under the configured layer
/// norm placement: pre-norm f(LN(z)) + z, post-norm LN(f(z) + z).
template <typename F>
Matrix sublayer(const FloatFormat& fmt, LnMode ln, const LnParams& params, const Matrix& z,
                F&& f) {
  if (z.rows == 0) return z;
  switch (ln) {
    case LnMode::None:
      return fp_matadd(fmt, f(z), z);
    case LnMode::Pre:
      return fp_matadd(fmt, f(layer_norm_rows(fmt, z, params)), z);
    case LnMode::Post:
      return layer_norm_rows(fmt, fp_matadd(fmt, f(z), z), params);
  }
  throw std::logic_error("unreachable");
}

}  // namespace detail

inline Matrix encoder_layer(const FloatFormat& fmt, const Matrix& x,
                            const EncoderLayerWeights& w, LnMode ln,
                            MaskMode /*mask unused in encoders*/ = MaskMode::Strict) {
  const Matrix x1 = detail::sublayer(fmt, ln, w.ln_attn, x, [&](const Matrix& z) {
    return mhsa(fmt, z, w.self_attn, /*masked=*/false);
  });
  return detail::sublayer(fmt, ln, w.ln_mlp, x1,
                          [&](const Matrix& z) { return mlp_apply_rows(fmt, z, w.mlp); });
}

/// One decoder layer. The cross sublayer under pre-norm normalises both its
/// inputs (the encoder output and the running decoder state); under
/// post-norm the encoder output is used as-is.
inline Matrix decoder_layer(const FloatFormat& fmt, const Matrix& x_enc, const Matrix& y,
                            const DecoderLayerWeights& w, MaskMode mode, LnMode ln) {
  const Matrix y1 = detail::sublayer(fmt, ln, w.ln_masked, y, [&](const Matrix& z) {
    return mhsa(fmt, z, w.masked_attn, /*masked=*/true, mode);
  });
  const Matrix y2 = [&] {
    if (ln == LnMode::Pre) {
      const Matrix xn = x_enc.rows > 0 ? layer_norm_rows(fmt, x_enc, w.ln_cross) : x_enc;
      return fp_matadd(fmt, mhca(fmt, xn, layer_norm_rows(fmt, y1, w.ln_cross), w.cross_attn),
                       y1);
    }
    const Matrix summed = fp_matadd(fmt, mhca(fmt, x_enc, y1, w.cross_attn), y1);
    return ln == LnMode::Post ? layer_norm_rows(fmt, summed, w.ln_cross) : summed;
  }();
  return detail::sublayer(fmt, ln, w.ln_mlp, y2,
                          [&](const Matrix& z) { return mlp_apply_rows(fmt, z, w.mlp); });
}

inline Matrix embed_tokens(const Transformer& t, const std::vector<Token>& tokens) {
  Matrix m(static_cast<int>(tokens.size()), t.cfg.d);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const auto& vec = t.embed(tokens[i]);
    for (int c = 0; c < t.cfg.d; ++c) m.at(static_cast<int>(i), c) = vec[static_cast<std::size_t>(c)];
  }
  return m;
}

inline Matrix encoder_output(const Transformer& t, const TwoSortedGraph& g) {
  const FloatFormat& fmt = t.cfg.fmt;
  Matrix x = embed_tokens(t, g.prefix());
  for (const auto& layer : t.enc) x = encoder_layer(fmt, x, layer, t.cfg.ln);
  return x;
}

/// Runs the whole model: Out(D(E(em(prefix)), em(suffix))). The result has
/// one row per suffix vertex (BOS first) and d_out columns.
inline Matrix run(const Transformer& t, const TwoSortedGraph& g) {
  t.cfg.validate();
  const FloatFormat& fmt = t.cfg.fmt;
  const Matrix x = encoder_output(t, g);
  Matrix y = embed_tokens(t, g.suffix());
  for (const auto& layer : t.dec) y = decoder_layer(fmt, x, y, layer, t.cfg.mask, t.cfg.ln);
  Matrix out(y.rows, t.cfg.d_out);
  const Matrix head = fp_matmul(fmt, y, t.w_out);
  for (int i = 0; i < y.rows; ++i)
    for (int c = 0; c < t.cfg.d_out; ++c)
      out.at(i, c) = fp_add(fmt, head.at(i, c), t.b_out[static_cast<std::size_t>(c)]);
  return out;
}

// ---------------------------------------------------------------------------
// Output interpretations
// ---------------------------------------------------------------------------

/// The concatenated bit patterns of the row's floats, sign bit first per
/// float. NaN uses the format's reserved pattern.
inline std::string interpret_bitwise(const FloatFormat& fmt, std::span<const Fp> row) {
  const int width = fmt.total_bits();
  std::string out;
  out.reserve(row.size() * static_cast<std::size_t>(width));
  for (const Fp& v : row) {
    const std::uint64_t bits = v.bits(fmt);
    for (int i = width - 1; i >= 0; --i) out += ((bits >> i) & 1) ? '1' : '0';
  }
  return out;
}

/// One bit per coordinate; requires every entry to be exactly 0 or 1.
inline std::string interpret_featurewise(const FloatFormat& fmt, std::span<const Fp> row) {
  std::string out;
  out.reserve(row.size());
  const Fp one = fp_one(fmt);
  for (const Fp& v : row) {
    if (v.is_zero())
      out += '0';
    else if (v == one)
      out += '1';
    else
      throw std::domain_error("feature-wise interpretation of a non-Boolean value " +
                              fp_to_hex(fmt, v));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Multi-head decomposition: rewrites every h-head attention layer as h
// single-head layers accumulating into reserved slots past the original
// feature dimensions, one projection sublayer applying W^O from the slots,
// and one sublayer for the original MLP. Widening keeps the original
// dimensions untouched, so every head sees the exact inputs it saw before
// and all sums carry only extra exact zeros.
// ---------------------------------------------------------------------------

namespace detail {

inline Matrix widen(const Matrix& m, int new_cols) {
  Matrix out(m.rows, new_cols);
  for (int i = 0; i < m.rows; ++i)
    for (int j = 0; j < m.cols; ++j) out.at(i, j) = m.at(i, j);
  return out;
}

inline Matrix widen_rows(const Matrix& m, int new_rows) {
  Matrix out(new_rows, m.cols);
  for (int i = 0; i < m.rows; ++i)
    for (int j = 0; j < m.cols; ++j) out.at(i, j) = m.at(i, j);
  return out;
}

struct DecomposePlan {
  int d_orig, d_wide, slot0, d_v, h, d_ff_wide;
  FloatFormat fmt;

  AttnBlock single_head(const HeadWeights& head, int slot) const {
    AttnBlock block;
    HeadWeights hw;
    hw.wq = widen_rows(head.wq, d_wide);
    hw.wk = widen_rows(head.wk, d_wide);
    hw.wv = widen_rows(head.wv, d_wide);
    block.heads.push_back(std::move(hw));
    block.wo = Matrix(d_v, d_wide);  // route the head output into its slot
    const Fp one = fp_one(fmt);
    for (int r = 0; r < d_v; ++r) block.wo.at(r, slot0 + slot * d_v + r) = one;
    return block;
  }

  AttnBlock zero_attn(bool /*masked*/) const {
    AttnBlock block;
    HeadWeights hw;
    hw.wq = Matrix(d_wide, 1);
    hw.wk = Matrix(d_wide, 1);
    hw.wv = Matrix(d_wide, 1);
    block.heads.push_back(std::move(hw));
    block.wo = Matrix(1, d_wide);
    return block;
  }

  MlpWeights zero_mlp() const {
    MlpWeights m;
    m.w1 = Matrix(d_wide, 1);
    m.b1.assign(1, Fp::zero());
    m.w2 = Matrix(1, d_wide);
    m.b2.assign(static_cast<std::size_t>(d_wide), Fp::zero());
    return m;
  }

  /// MLP computing slots * W^O into the original dims and clearing the
  /// slots, via the ReLU(x) - ReLU(-x) split (exact: one branch is zero).
  MlpWeights projection_mlp(const Matrix& wo) const {
    const int slots = h * d_v;
    MlpWeights m;
    m.w1 = Matrix(d_wide, 2 * slots);
    m.b1.assign(static_cast<std::size_t>(2 * slots), Fp::zero());
    m.w2 = Matrix(2 * slots, d_wide);
    m.b2.assign(static_cast<std::size_t>(d_wide), Fp::zero());
    const Fp one = fp_one(fmt);
    const Fp neg_one = one.negated();
    for (int s = 0; s < slots; ++s) {
      m.w1.at(slot0 + s, 2 * s) = one;
      m.w1.at(slot0 + s, 2 * s + 1) = neg_one;
      for (int j = 0; j < d_orig; ++j) {
        m.w2.at(2 * s, j) = wo.at(s, j);
        m.w2.at(2 * s + 1, j) = wo.at(s, j).negated();
      }
      m.w2.at(2 * s, slot0 + s) = neg_one;  // clear the slot
      m.w2.at(2 * s + 1, slot0 + s) = one;
    }
    return m;
  }

  MlpWeights widened_mlp(const MlpWeights& orig) const {
    MlpWeights m;
    m.w1 = Matrix(d_wide, d_ff_wide);
    for (int i = 0; i < d_orig; ++i)
      for (int j = 0; j < orig.w1.cols; ++j) m.w1.at(i, j) = orig.w1.at(i, j);
    m.b1.assign(static_cast<std::size_t>(d_ff_wide), Fp::zero());
    for (std::size_t j = 0; j < orig.b1.size(); ++j) m.b1[j] = orig.b1[j];
    m.w2 = Matrix(d_ff_wide, d_wide);
    for (int i = 0; i < orig.w2.rows; ++i)
      for (int j = 0; j < d_orig; ++j) m.w2.at(i, j) = orig.w2.at(i, j);
    m.b2.assign(static_cast<std::size_t>(d_wide), Fp::zero());
    for (std::size_t j = 0; j < orig.b2.size(); ++j) m.b2[j] = orig.b2[j];
    return m;
  }
};

}  // namespace detail

/// Equivalent single-head transformer (bit-identical outputs on every
/// graph). Requires layer norm to be disabled: widening would change the
/// row statistics that layer norm depends on.
inline Transformer decompose_multihead(const Transformer& t) {
  if (t.cfg.ln != LnMode::None)
    throw std::invalid_argument("decompose_multihead requires ln_mode = none");
  const int h = t.cfg.h, d_v = t.cfg.d_v;
  detail::DecomposePlan plan;
  plan.fmt = t.cfg.fmt;
  plan.d_orig = t.cfg.d;
  plan.slot0 = t.cfg.d;
  plan.d_wide = t.cfg.d + h * d_v;
  plan.d_v = d_v;
  plan.h = h;
  plan.d_ff_wide = std::max(t.cfg.d_ff, 2 * h * d_v);

  Transformer out;
  out.cfg = t.cfg;
  out.cfg.d = plan.d_wide;
  out.cfg.h = 1;
  out.cfg.d_ff = plan.d_ff_wide;

  for (const auto& [tok, vec] : t.embedding) {
    std::vector<Fp> wide(static_cast<std::size_t>(plan.d_wide), Fp::zero());
    for (std::size_t i = 0; i < vec.size(); ++i) wide[i] = vec[i];
    out.embedding.emplace_back(tok, std::move(wide));
  }

  for (const auto& layer : t.enc) {
    for (int s = 0; s < h; ++s) {
      EncoderLayerWeights el;
      el.self_attn = plan.single_head(layer.self_attn.heads[static_cast<std::size_t>(s)], s);
      el.mlp = plan.zero_mlp();
      out.enc.push_back(std::move(el));
    }
    EncoderLayerWeights proj;
    proj.self_attn = plan.zero_attn(false);
    proj.mlp = plan.projection_mlp(layer.self_attn.wo);
    out.enc.push_back(std::move(proj));
    EncoderLayerWeights orig;
    orig.self_attn = plan.zero_attn(false);
    orig.mlp = plan.widened_mlp(layer.mlp);
    out.enc.push_back(std::move(orig));
  }

  auto zero_dec_layer = [&] {
    DecoderLayerWeights dl;
    dl.masked_attn = plan.zero_attn(true);
    dl.cross_attn = plan.zero_attn(false);
    dl.mlp = plan.zero_mlp();
    return dl;
  };
  for (const auto& layer : t.dec) {
    for (int s = 0; s < h; ++s) {
      DecoderLayerWeights dl = zero_dec_layer();
      dl.masked_attn = plan.single_head(layer.masked_attn.heads[static_cast<std::size_t>(s)], s);
      out.dec.push_back(std::move(dl));
    }
    {
      DecoderLayerWeights dl = zero_dec_layer();
      dl.mlp = plan.projection_mlp(layer.masked_attn.wo);
      out.dec.push_back(std::move(dl));
    }
    for (int s = 0; s < h; ++s) {
      DecoderLayerWeights dl = zero_dec_layer();
      dl.cross_attn = plan.single_head(layer.cross_attn.heads[static_cast<std::size_t>(s)], s);
      out.dec.push_back(std::move(dl));
    }
    {
      DecoderLayerWeights dl = zero_dec_layer();
      dl.mlp = plan.projection_mlp(layer.cross_attn.wo);
      out.dec.push_back(std::move(dl));
    }
    {
      DecoderLayerWeights dl = zero_dec_layer();
      dl.mlp = plan.widened_mlp(layer.mlp);
      out.dec.push_back(std::move(dl));
    }
  }
  out.cfg.L1 = static_cast<int>(out.enc.size());
  out.cfg.L2 = static_cast<int>(out.dec.size());

  out.w_out = detail::widen_rows(t.w_out, plan.d_wide);
  out.b_out = t.b_out;
  return out;
}

}  // namespace trilab
