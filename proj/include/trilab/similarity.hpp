#pragma once

#include <optional>
#include <stdexcept>
#include <vector>

#include "trilab/floats.hpp"

namespace trilab {

/// A binary relation on output vectors in F^d_out. Exact is equality of bit
/// patterns; Eps relates vectors whose coordinates are within eps of each
/// other (exact rational distance, infinities only match themselves, NaN
/// matches nothing); Pairs is an explicit finite list; Full and Empty are
/// the two trivial relations.
struct SimilarityRelation {
  enum class Kind { Exact, Eps, Pairs, Full, Empty };

  Kind kind = Kind::Exact;
  Fp eps;  // Eps only
  std::vector<std::pair<std::vector<Fp>, std::vector<Fp>>> pairs;

  static SimilarityRelation exact() { return {}; }
  static SimilarityRelation full() {
    SimilarityRelation r;
    r.kind = Kind::Full;
    return r;
  }
  static SimilarityRelation empty() {
    SimilarityRelation r;
    r.kind = Kind::Empty;
    return r;
  }
  static SimilarityRelation eps_close(const Fp& eps) {
    if (eps.is_nan() || eps.negative())
      throw std::invalid_argument("eps must be a non-negative float");
    SimilarityRelation r;
    r.kind = Kind::Eps;
    r.eps = eps;
    return r;
  }
  static SimilarityRelation explicit_pairs(
      std::vector<std::pair<std::vector<Fp>, std::vector<Fp>>> p) {
    SimilarityRelation r;
    r.kind = Kind::Pairs;
    r.pairs = std::move(p);
    return r;
  }

  bool coord_close(const FloatFormat& fmt, const Fp& a, const Fp& b) const {
    if (a.is_nan() || b.is_nan()) return false;
    if (a.is_inf() || b.is_inf()) return a == b;
    if (eps.kind() == Fp::Kind::PosInf) return true;
    Rational d = a.value(fmt) - b.value(fmt);
    if (d < 0) d = -d;
    return d <= eps.value(fmt);
  }

  bool related(const FloatFormat& fmt, const std::vector<Fp>& v,
               const std::vector<Fp>& u) const {
    if (v.size() != u.size()) return false;
    switch (kind) {
      case Kind::Full: return true;
      case Kind::Empty: return false;
      case Kind::Exact: return v == u;
      case Kind::Eps: {
        for (std::size_t i = 0; i < v.size(); ++i)
          if (!coord_close(fmt, v[i], u[i])) return false;
        return true;
      }
      case Kind::Pairs: {
        for (const auto& [a, b] : pairs)
          if (a == v && b == u) return true;
        return false;
      }
    }
    return false;
  }

  /// Some u with v ~ u, canonical (smallest concatenated bit pattern), or
  /// nullopt when the image is empty.
  std::optional<std::vector<Fp>> pick_related(const FloatFormat& fmt,
                                              const std::vector<Fp>& v) const {
    switch (kind) {
      case Kind::Exact: return v;
      case Kind::Empty: return std::nullopt;
      case Kind::Full: return std::vector<Fp>(v.size(), Fp::zero());
      case Kind::Eps: {
        std::vector<Fp> out;
        out.reserve(v.size());
        for (const Fp& c : v) {
          if (c.is_nan()) return std::nullopt;
          if (c.is_inf()) {
            out.push_back(c);
            continue;
          }
          std::optional<Fp> best;
          std::uint64_t best_bits = 0;
          for (std::uint64_t bits = 0; bits < (std::uint64_t{1} << fmt.total_bits()); ++bits) {
            const Fp cand = Fp::from_bits(fmt, bits);
            if (cand.is_nan() || cand.is_inf()) continue;
            if (cand.bits(fmt) != bits) continue;  // canonical patterns only
            if (coord_close(fmt, c, cand) && (!best || bits < best_bits)) {
              best = cand;
              best_bits = bits;
            }
          }
          if (!best) return std::nullopt;
          out.push_back(*best);
        }
        return out;
      }
      case Kind::Pairs: {
        std::optional<std::vector<Fp>> best;
        auto pattern_less = [&](const std::vector<Fp>& a, const std::vector<Fp>& b) {
          for (std::size_t i = 0; i < a.size() && i < b.size(); ++i) {
            const auto pa = a[i].bits(fmt), pb = b[i].bits(fmt);
            if (pa != pb) return pa < pb;
          }
          return a.size() < b.size();
        };
        for (const auto& [a, b] : pairs)
          if (a == v && (!best || pattern_less(b, *best))) best = b;
        return best;
      }
    }
    return std::nullopt;
  }
};

}  // namespace trilab
