#pragma once

// Shared helpers for the test suites and the acceptance runner.

#include <vector>

#include "trilab/floats.hpp"
#include "trilab/graphs.hpp"
#include "trilab/rng.hpp"
#include "trilab/transformer.hpp"

namespace trilab::testing {

/// Finite values with |v| <= 2, zero included twice to bias weights toward
/// sparsity. Bounded magnitudes keep random models out of the NaN regime
/// often enough to make differential sweeps informative.
inline std::vector<Fp> small_value_pool(const FloatFormat& fmt) {
  std::vector<Fp> pool;
  const Rational two(2);
  for (const Fp& v : enumerate_finite(fmt)) {
    Rational mag = v.is_zero() ? Rational(0) : v.value(fmt);
    if (mag < 0) mag = -mag;
    if (mag <= two) pool.push_back(v);
  }
  pool.push_back(Fp::zero());
  pool.push_back(Fp::zero());
  return pool;
}

inline Matrix random_matrix(SplitMix64& rng, const std::vector<Fp>& pool, int r, int c) {
  Matrix m(r, c);
  for (auto& v : m.data) v = pool[rng.bounded(pool.size())];
  return m;
}

inline std::vector<Fp> random_vec(SplitMix64& rng, const std::vector<Fp>& pool, int n) {
  std::vector<Fp> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = pool[rng.bounded(pool.size())];
  return v;
}

struct RandomModelSpec {
  FloatFormat fmt{3, 3};
  int d = 2, d_k = 1, d_v = 1, d_ff = 2, d_out = 1, h = 1, L1 = 1, L2 = 1;
  MaskMode mask = MaskMode::Strict;
  LnMode ln = LnMode::None;
};

inline Transformer random_transformer(const RandomModelSpec& spec, const Vocab& vocab,
                                      std::uint64_t seed) {
  SplitMix64 rng(seed);
  const auto pool = small_value_pool(spec.fmt);
  Transformer t;
  t.cfg.fmt = spec.fmt;
  t.cfg.d = spec.d;
  t.cfg.d_k = spec.d_k;
  t.cfg.d_v = spec.d_v;
  t.cfg.d_ff = spec.d_ff;
  t.cfg.d_out = spec.d_out;
  t.cfg.h = spec.h;
  t.cfg.L1 = spec.L1;
  t.cfg.L2 = spec.L2;
  t.cfg.mask = spec.mask;
  t.cfg.ln = spec.ln;

  auto attn = [&] {
    AttnBlock block;
    for (int i = 0; i < spec.h; ++i) {
      HeadWeights hw;
      hw.wq = random_matrix(rng, pool, spec.d, spec.d_k);
      hw.wk = random_matrix(rng, pool, spec.d, spec.d_k);
      hw.wv = random_matrix(rng, pool, spec.d, spec.d_v);
      block.heads.push_back(std::move(hw));
    }
    block.wo = random_matrix(rng, pool, spec.h * spec.d_v, spec.d);
    return block;
  };
  auto mlp = [&] {
    MlpWeights m;
    m.w1 = random_matrix(rng, pool, spec.d, spec.d_ff);
    m.b1 = random_vec(rng, pool, spec.d_ff);
    m.w2 = random_matrix(rng, pool, spec.d_ff, spec.d);
    m.b2 = random_vec(rng, pool, spec.d);
    return m;
  };
  auto ln_params = [&] {
    LnParams p;
    p.gamma = pool[rng.bounded(pool.size())];
    p.beta = pool[rng.bounded(pool.size())];
    p.eps = encode_real(spec.fmt, spec.fmt.min_pos_value() * 4);
    return p;
  };

  for (Token tok = -1; tok < static_cast<Token>(vocab.size()); ++tok)
    t.embedding.emplace_back(tok, random_vec(rng, pool, spec.d));
  for (int i = 0; i < spec.L1; ++i) {
    EncoderLayerWeights el;
    el.self_attn = attn();
    el.mlp = mlp();
    el.ln_attn = ln_params();
    el.ln_mlp = ln_params();
    t.enc.push_back(std::move(el));
  }
  for (int i = 0; i < spec.L2; ++i) {
    DecoderLayerWeights dl;
    dl.masked_attn = attn();
    dl.cross_attn = attn();
    dl.mlp = mlp();
    dl.ln_masked = ln_params();
    dl.ln_cross = ln_params();
    dl.ln_mlp = ln_params();
    t.dec.push_back(std::move(dl));
  }
  t.w_out = random_matrix(rng, pool, spec.d, spec.d_out);
  t.b_out = random_vec(rng, pool, spec.d_out);
  return t;
}

}  // namespace trilab::testing
