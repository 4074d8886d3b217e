#pragma once

#include <boost/multiprecision/cpp_int.hpp>

#include <algorithm>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "trilab/rng.hpp"

namespace trilab {

using BigInt = boost::multiprecision::cpp_int;
using Rational = boost::multiprecision::cpp_rational;

/// A software floating-point format with p significand bits and q exponent
/// bits. A finite number is a bit string sign|e|s whose value is
/// (-1)^sign * (s/a) * 2^(e-bias) with a = 2^(p-1) and bias = 2^(q-1)-1.
/// Finite patterns are either normalised (leading significand bit 1, any e)
/// or subnormalised (leading bit 0 and e = 0). The pattern e = 1...1,
/// s = 0...0 encodes +/-infinity. NaN is a distinguished value, not a bit
/// pattern; decoding any reserved pattern yields NaN.
struct FloatFormat {
  int p = 0;  ///< significand bits, >= 1
  int q = 0;  ///< exponent bits, >= 1

  FloatFormat() = default;
  FloatFormat(int p_, int q_) : p(p_), q(q_) {
    if (p < 1 || q < 1 || p + q + 1 > 64)
      throw std::invalid_argument("FloatFormat: need p >= 1, q >= 1, p+q+1 <= 64");
  }

  int total_bits() const { return p + q + 1; }
  std::int64_t bias() const { return (std::int64_t{1} << (q - 1)) - 1; }
  std::int64_t emax() const { return (std::int64_t{1} << q) - 1; }
  std::uint64_t sig_unit() const { return std::uint64_t{1} << (p - 1); }  // a
  std::uint64_t sig_limit() const { return std::uint64_t{1} << p; }       // 2a

  /// Smallest positive (subnormal) value: (1/a) * 2^(-bias).
  Rational min_pos_value() const {
    return Rational(1, BigInt(sig_unit()) << static_cast<unsigned>(bias()));
  }
  /// Largest finite value: ((2a-1)/a) * 2^(emax - bias).
  Rational max_fin_value() const {
    Rational r(BigInt(sig_limit() - 1), BigInt(sig_unit()));
    std::int64_t e = emax() - bias();
    if (e >= 0)
      r *= Rational(BigInt(1) << static_cast<unsigned>(e));
    else
      r /= Rational(BigInt(1) << static_cast<unsigned>(-e));
    return r;
  }

  std::string name() const { return "f" + std::to_string(p) + "." + std::to_string(q); }

  friend bool operator==(const FloatFormat& a, const FloatFormat& b) {
    return a.p == b.p && a.q == b.q;
  }
  friend bool operator!=(const FloatFormat& a, const FloatFormat& b) { return !(a == b); }
  friend bool operator<(const FloatFormat& a, const FloatFormat& b) {
    return a.p != b.p ? a.p < b.p : a.q < b.q;
  }
};

/// One value of a format: a canonical finite bit pattern, +/-infinity, or
/// NaN. Canonical means a finite value has a unique representation (zero is
/// unsigned; the -0 pattern decodes to +0). Equality is structural.
class Fp {
 public:
  enum class Kind : std::uint8_t { Finite, PosInf, NegInf, NaN };

  Fp() = default;  // +0

  static Fp zero() { return Fp(); }
  static Fp pos_inf() { Fp v; v.kind_ = Kind::PosInf; return v; }
  static Fp neg_inf() { Fp v; v.kind_ = Kind::NegInf; return v; }
  static Fp nan() { Fp v; v.kind_ = Kind::NaN; return v; }

  /// Builds a finite value from fields; throws unless the pattern is
  /// canonical for fmt (normalised, or subnormal with e = 0; -0 rejected).
  static Fp finite(const FloatFormat& fmt, bool neg, std::uint32_t e, std::uint64_t s) {
    if (e > static_cast<std::uint64_t>(fmt.emax()) || s >= fmt.sig_limit())
      throw std::invalid_argument("Fp::finite: field out of range");
    const bool normal = s >= fmt.sig_unit();
    if (!normal && e != 0) throw std::invalid_argument("Fp::finite: non-canonical pattern");
    if (s == 0 && e == 0) neg = false;  // canonical zero
    Fp v;
    v.kind_ = Kind::Finite;
    v.neg_ = neg;
    v.exp_ = e;
    v.sig_ = s;
    return v;
  }

  Kind kind() const { return kind_; }
  bool is_nan() const { return kind_ == Kind::NaN; }
  bool is_finite() const { return kind_ == Kind::Finite; }
  bool is_inf() const { return kind_ == Kind::PosInf || kind_ == Kind::NegInf; }
  bool is_zero() const { return kind_ == Kind::Finite && sig_ == 0 && exp_ == 0; }
  /// Sign for ordering purposes; NaN and zero report non-negative.
  bool negative() const {
    return kind_ == Kind::NegInf || (kind_ == Kind::Finite && neg_);
  }
  std::uint32_t exp_bits() const { return exp_; }
  std::uint64_t sig_bits() const { return sig_; }

  Fp negated() const {
    switch (kind_) {
      case Kind::NaN: return *this;
      case Kind::PosInf: return neg_inf();
      case Kind::NegInf: return pos_inf();
      case Kind::Finite: {
        if (is_zero()) return *this;
        Fp v = *this;
        v.neg_ = !neg_;
        return v;
      }
    }
    return *this;
  }

  /// Exact value of a finite number.
  Rational value(const FloatFormat& fmt) const {
    if (kind_ != Kind::Finite) throw std::logic_error("Fp::value: not finite");
    Rational mag(BigInt(sig_), BigInt(fmt.sig_unit()));
    std::int64_t e = static_cast<std::int64_t>(exp_) - fmt.bias();
    if (e >= 0)
      mag *= Rational(BigInt(1) << static_cast<unsigned>(e));
    else
      mag /= Rational(BigInt(1) << static_cast<unsigned>(-e));
    return neg_ ? -mag : mag;
  }

  /// Raw bit pattern sign|e|s. NaN maps to the format's reserved pattern.
  std::uint64_t bits(const FloatFormat& fmt) const {
    const int pq = fmt.p + fmt.q;
    switch (kind_) {
      case Kind::PosInf:
        return static_cast<std::uint64_t>(fmt.emax()) << fmt.p;
      case Kind::NegInf:
        return (std::uint64_t{1} << pq) | (static_cast<std::uint64_t>(fmt.emax()) << fmt.p);
      case Kind::NaN:
        return nan_pattern(fmt);
      case Kind::Finite:
        return (std::uint64_t{neg_} << pq) | (static_cast<std::uint64_t>(exp_) << fmt.p) | sig_;
    }
    return 0;
  }

  /// Decodes a bit pattern; -0 canonicalises to +0, reserved patterns to NaN.
  static Fp from_bits(const FloatFormat& fmt, std::uint64_t bits) {
    const int pq = fmt.p + fmt.q;
    if (bits >> (pq + 1)) throw std::invalid_argument("Fp::from_bits: pattern too wide");
    const bool neg = (bits >> pq) & 1;
    const std::uint32_t e = static_cast<std::uint32_t>((bits >> fmt.p) & ((std::uint64_t{1} << fmt.q) - 1));
    const std::uint64_t s = bits & (fmt.sig_unit() * 2 - 1);
    if (e == static_cast<std::uint64_t>(fmt.emax()) && s == 0)
      return neg ? neg_inf() : pos_inf();
    const bool normal = s >= fmt.sig_unit();
    if (!normal && e != 0) return nan();  // reserved
    if (s == 0 && e == 0) return zero();  // folds -0
    return finite(fmt, neg, e, s);
  }

  /// The reserved pattern used when NaN must be materialised as bits.
  static std::uint64_t nan_pattern(const FloatFormat& fmt) {
    if (fmt.p >= 2) return (static_cast<std::uint64_t>(fmt.emax()) << fmt.p) | 1u;
    if (fmt.q >= 2) return std::uint64_t{1} << fmt.p;  // e = 0...01, s = 0
    throw std::domain_error("no reserved NaN pattern exists for p=1,q=1");
  }

  friend bool operator==(const Fp& a, const Fp& b) {
    return a.kind_ == b.kind_ && a.neg_ == b.neg_ && a.exp_ == b.exp_ && a.sig_ == b.sig_;
  }
  friend bool operator!=(const Fp& a, const Fp& b) { return !(a == b); }

  std::uint64_t hash() const {
    return hash_combine(static_cast<std::uint64_t>(kind_) * 2 + neg_,
                        (std::uint64_t{exp_} << 40) ^ sig_);
  }

 private:
  Kind kind_ = Kind::Finite;
  bool neg_ = false;
  std::uint32_t exp_ = 0;
  std::uint64_t sig_ = 0;
};

/// Total order by numeric value: -inf < negatives < 0 < positives < +inf.
/// NaN sorts last so the comparator is usable in ordered containers; no
/// numeric meaning is attached to that.
struct FpValueLess {
  bool operator()(const Fp& a, const Fp& b) const {
    auto rank = [](const Fp& v) -> int {
      switch (v.kind()) {
        case Fp::Kind::NegInf: return 0;
        case Fp::Kind::Finite: return 1;
        case Fp::Kind::PosInf: return 2;
        case Fp::Kind::NaN: return 3;
      }
      return 3;
    };
    const int ra = rank(a), rb = rank(b);
    if (ra != rb) return ra < rb;
    if (ra != 1) return false;
    if (a.negative() != b.negative()) return a.negative();
    // same sign: compare magnitude lexicographically on (e, s)
    const bool mag_less = a.exp_bits() != b.exp_bits() ? a.exp_bits() < b.exp_bits()
                                                       : a.sig_bits() < b.sig_bits();
    const bool mag_gt = a.exp_bits() != b.exp_bits() ? a.exp_bits() > b.exp_bits()
                                                     : a.sig_bits() > b.sig_bits();
    return a.negative() ? mag_gt : mag_less;
  }
};

/// Multiset of Fp values keyed by value order, so iteration is already the
/// increasing-order traversal the summation rule requires.
class FpMultiset {
 public:
  using Map = std::map<Fp, std::uint64_t, FpValueLess>;

  void add(const Fp& v, std::uint64_t count = 1) {
    if (count == 0) return;
    entries_[v] += count;
  }

  /// Pointwise min with k (the k-projection).
  FpMultiset capped(std::uint64_t k) const {
    FpMultiset out;
    if (k == 0) return out;
    for (const auto& [v, c] : entries_) out.entries_[v] = std::min(c, k);
    return out;
  }

  const Map& entries() const { return entries_; }
  bool empty() const { return entries_.empty(); }
  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (const auto& [v, c] : entries_) t += c;
    return t;
  }

  friend bool operator==(const FpMultiset& a, const FpMultiset& b) {
    return a.entries_ == b.entries_;
  }

 private:
  Map entries_;
};

namespace detail {

inline int64_t floor_log2(const Rational& x) {
  // x > 0 required
  const BigInt num = numerator(x), den = denominator(x);
  std::int64_t k = static_cast<std::int64_t>(msb(num)) - static_cast<std::int64_t>(msb(den));
  // msb difference is within 1 of the true floor; fix up exactly.
  auto pow2_le = [&](std::int64_t e) {
    // 2^e <= x  <=>  den * 2^e <= num (e >= 0), or den <= num * 2^-e
    if (e >= 0) return den * (BigInt(1) << static_cast<unsigned>(e)) <= num;
    return den <= num * (BigInt(1) << static_cast<unsigned>(-e));
  };
  while (!pow2_le(k)) --k;
  while (pow2_le(k + 1)) ++k;
  return k;
}

/// Round a non-negative rational to the nearest integer, ties to even.
inline BigInt round_int_ties_even(const Rational& t) {
  BigInt n = numerator(t) / denominator(t);  // floor for non-negative t
  const Rational frac = t - Rational(n);
  const Rational half(1, 2);
  if (frac > half) return n + 1;
  if (frac < half) return n;
  return (n % 2 == 0) ? n : n + 1;
}

struct RoundedMag {
  std::uint32_t e;
  std::uint64_t s;
};

/// Round-to-nearest (ties to even significand) of a positive magnitude onto
/// the finite grid of F(p,q). Returns nullopt when the magnitude rounds past
/// the largest finite value (i.e. it is at or above maxFin + half of the top
/// binade's step, where the tie goes to the even carry and hence out).
inline std::optional<RoundedMag> round_mag(const FloatFormat& fmt, const Rational& mag) {
  const std::int64_t bias = fmt.bias(), emax = fmt.emax();
  const BigInt a(fmt.sig_unit());

  std::int64_t e = floor_log2(mag) + bias;
  if (e < 0) e = 0;
  if (e > emax) e = emax;

  auto step_of = [&](std::int64_t ee) {
    // 2^(ee - bias) / a
    Rational st(1, a);
    const std::int64_t x = ee - bias;
    if (x >= 0)
      st *= Rational(BigInt(1) << static_cast<unsigned>(x));
    else
      st /= Rational(BigInt(1) << static_cast<unsigned>(-x));
    return st;
  };

  BigInt n;
  for (;;) {
    const Rational t = mag / step_of(e);
    n = round_int_ties_even(t);
    if (n >= BigInt(fmt.sig_limit())) {
      if (e == emax) return std::nullopt;  // beyond the finite range
      ++e;
      continue;  // re-round in the higher binade (value 2a*step == a*step')
    }
    if (e > 0 && n < a) {
      --e;
      continue;  // the estimate overshot the binade
    }
    break;
  }
  return RoundedMag{static_cast<std::uint32_t>(e), static_cast<std::uint64_t>(n)};
}

}  // namespace detail

/// Round-to-nearest encoding of an exact rational, with the two-tier
/// overflow rule: a result that rounds past the finite range of F(p,q) is
/// clamped to +/-maxFin as long as it still rounds inside the finite range
/// of F(p,q+1); only past that margin does it overflow to +/-infinity.
inline Fp encode_real(const FloatFormat& fmt, const Rational& x) {
  if (x == 0) return Fp::zero();
  const bool neg = x < 0;
  const Rational mag = neg ? Rational(-x) : x;
  if (auto r = detail::round_mag(fmt, mag))
    return Fp::finite(fmt, neg, r->e, r->s);
  const FloatFormat wider(fmt.p, fmt.q + 1);
  if (detail::round_mag(wider, mag)) {
    const Fp clamped = Fp::finite(fmt, neg, static_cast<std::uint32_t>(fmt.emax()),
                                  fmt.sig_limit() - 1);
    return clamped;
  }
  return neg ? Fp::neg_inf() : Fp::pos_inf();
}

inline Fp encode_int(const FloatFormat& fmt, const BigInt& n) {
  return encode_real(fmt, Rational(n));
}

inline Fp fp_one(const FloatFormat& fmt) { return encode_int(fmt, 1); }

/// All canonical finite values of the format in increasing value order.
inline std::vector<Fp> enumerate_finite(const FloatFormat& fmt) {
  std::vector<Fp> out;
  const std::uint64_t a = fmt.sig_unit();
  // negatives by descending magnitude, then zero, then positives ascending
  for (std::int64_t e = fmt.emax(); e >= 0; --e)
    for (std::uint64_t s = 2 * a; s-- > (e == 0 ? 1 : a);)
      out.push_back(Fp::finite(fmt, true, static_cast<std::uint32_t>(e), s));
  out.push_back(Fp::zero());
  for (std::int64_t e = 0; e <= fmt.emax(); ++e)
    for (std::uint64_t s = (e == 0 ? 1 : a); s < 2 * a; ++s)
      out.push_back(Fp::finite(fmt, false, static_cast<std::uint32_t>(e), s));
  return out;
}

// ---------------------------------------------------------------------------
// Arithmetic: exact extended-real computation followed by one rounding.
// Forms with no extended-real value (inf - inf, 0 * inf, inf/inf, x/0,
// sqrt of a negative) and any operation touching NaN produce NaN.
// ---------------------------------------------------------------------------

namespace detail {

class OpCaches {
 public:
  enum Op { Add = 0, Mul = 1, Div = 2 };

  static OpCaches* get(const FloatFormat& fmt) {
    if (fmt.total_bits() > 20) return nullptr;
    static std::mutex mx;
    static std::map<std::pair<int, int>, std::unique_ptr<OpCaches>> table;
    std::lock_guard lock(mx);
    auto& slot = table[{fmt.p, fmt.q}];
    if (!slot) slot = std::make_unique<OpCaches>();
    return slot.get();
  }

  std::optional<Fp> lookup_bin(Op op, std::uint64_t key) const {
    std::shared_lock lock(mx_);
    auto it = bin_[op].find(key);
    if (it == bin_[op].end()) return std::nullopt;
    return it->second;
  }
  void store_bin(Op op, std::uint64_t key, const Fp& v) {
    std::unique_lock lock(mx_);
    bin_[op].emplace(key, v);
  }
  std::optional<Fp> lookup_un(int which, std::uint64_t key) const {
    std::shared_lock lock(mx_);
    auto it = un_[which].find(key);
    if (it == un_[which].end()) return std::nullopt;
    return it->second;
  }
  void store_un(int which, std::uint64_t key, const Fp& v) {
    std::unique_lock lock(mx_);
    un_[which].emplace(key, v);
  }

  static std::uint64_t code(const FloatFormat& fmt, const Fp& v) {
    return v.is_nan() ? (std::uint64_t{1} << fmt.total_bits()) : v.bits(fmt);
  }
  static std::uint64_t pair_key(const FloatFormat& fmt, const Fp& x, const Fp& y) {
    return (code(fmt, x) << 24) | code(fmt, y);
  }

 private:
  mutable std::shared_mutex mx_;
  std::unordered_map<std::uint64_t, Fp> bin_[3];
  std::unordered_map<std::uint64_t, Fp> un_[2];  // exp, sqrt
};

}  // namespace detail

inline Fp fp_add(const FloatFormat& fmt, const Fp& x, const Fp& y) {
  if (x.is_nan() || y.is_nan()) return Fp::nan();
  if (x.is_inf() || y.is_inf()) {
    if (x.is_inf() && y.is_inf())
      return x.kind() == y.kind() ? x : Fp::nan();
    return x.is_inf() ? x : y;
  }
  auto* cache = detail::OpCaches::get(fmt);
  const std::uint64_t key = cache ? detail::OpCaches::pair_key(fmt, x, y) : 0;
  if (cache)
    if (auto hit = cache->lookup_bin(detail::OpCaches::Add, key)) return *hit;
  const Fp r = encode_real(fmt, x.value(fmt) + y.value(fmt));
  if (cache) cache->store_bin(detail::OpCaches::Add, key, r);
  return r;
}

inline Fp fp_sub(const FloatFormat& fmt, const Fp& x, const Fp& y) {
  return fp_add(fmt, x, y.negated());
}

inline Fp fp_mul(const FloatFormat& fmt, const Fp& x, const Fp& y) {
  if (x.is_nan() || y.is_nan()) return Fp::nan();
  if (x.is_inf() || y.is_inf()) {
    if (x.is_zero() || y.is_zero()) return Fp::nan();
    const bool neg = x.negative() != y.negative();
    return neg ? Fp::neg_inf() : Fp::pos_inf();
  }
  auto* cache = detail::OpCaches::get(fmt);
  const std::uint64_t key = cache ? detail::OpCaches::pair_key(fmt, x, y) : 0;
  if (cache)
    if (auto hit = cache->lookup_bin(detail::OpCaches::Mul, key)) return *hit;
  const Fp r = encode_real(fmt, x.value(fmt) * y.value(fmt));
  if (cache) cache->store_bin(detail::OpCaches::Mul, key, r);
  return r;
}

inline Fp fp_div(const FloatFormat& fmt, const Fp& x, const Fp& y) {
  if (x.is_nan() || y.is_nan()) return Fp::nan();
  if (y.is_zero()) return Fp::nan();  // no extended-real value for x/0
  if (x.is_inf()) {
    if (y.is_inf()) return Fp::nan();
    return x.negative() != y.negative() ? Fp::neg_inf() : Fp::pos_inf();
  }
  if (y.is_inf()) return Fp::zero();
  auto* cache = detail::OpCaches::get(fmt);
  const std::uint64_t key = cache ? detail::OpCaches::pair_key(fmt, x, y) : 0;
  if (cache)
    if (auto hit = cache->lookup_bin(detail::OpCaches::Div, key)) return *hit;
  const Fp r = encode_real(fmt, x.value(fmt) / y.value(fmt));
  if (cache) cache->store_bin(detail::OpCaches::Div, key, r);
  return r;
}

inline Fp fp_sqrt(const FloatFormat& fmt, const Fp& x) {
  if (x.is_nan()) return Fp::nan();
  if (x.kind() == Fp::Kind::PosInf) return x;
  if (x.negative() && !x.is_zero()) return Fp::nan();
  if (x.kind() == Fp::Kind::NegInf) return Fp::nan();
  if (x.is_zero()) return Fp::zero();
  auto* cache = detail::OpCaches::get(fmt);
  const std::uint64_t key = cache ? detail::OpCaches::code(fmt, x) : 0;
  if (cache)
    if (auto hit = cache->lookup_un(1, key)) return *hit;

  // Round sqrt(v) to the grid with exact comparisons on squared quantities.
  const Rational v = x.value(fmt);
  const std::int64_t bias = fmt.bias(), emax = fmt.emax();
  const BigInt a(fmt.sig_unit());

  // sqrt(v) >= 2^(ee-bias)  <=>  v >= 2^(2(ee-bias))
  auto sqrt_ge_pow2 = [&](std::int64_t ee) {
    const std::int64_t xx = 2 * (ee - bias);
    if (xx >= 0) return v >= Rational(BigInt(1) << static_cast<unsigned>(xx));
    return v >= Rational(1, BigInt(1) << static_cast<unsigned>(-xx));
  };
  std::int64_t lg = detail::floor_log2(v);
  std::int64_t e = (lg >= 0 ? lg / 2 : (lg - 1) / 2) + bias;  // floor division
  if (e < 0) e = 0;
  if (e > emax) e = emax;
  while (e > 0 && !sqrt_ge_pow2(e)) --e;
  while (e < emax && sqrt_ge_pow2(e + 1)) ++e;

  auto step2 = [&](std::int64_t ee) {  // (2^(ee-bias)/a)^2
    Rational st(1, a * a);
    const std::int64_t xx = 2 * (ee - bias);
    if (xx >= 0)
      st *= Rational(BigInt(1) << static_cast<unsigned>(xx));
    else
      st /= Rational(BigInt(1) << static_cast<unsigned>(-xx));
    return st;
  };

  BigInt n;
  for (;;) {
    const Rational y = v / step2(e);  // sqrt(y) = v^(1/2) / step
    BigInt n0 = sqrt(BigInt(numerator(y) / denominator(y)));  // floor(sqrt(floor(y))) == floor(sqrt(y))
    // decide between n0 and n0+1: compare y with (n0 + 1/2)^2
    const Rational mid = Rational((2 * n0 + 1) * (2 * n0 + 1), 4);
    if (y > mid)
      n = n0 + 1;
    else if (y < mid)
      n = n0;
    else
      n = (n0 % 2 == 0) ? n0 : n0 + 1;
    if (n >= BigInt(fmt.sig_limit())) {
      if (e == emax) throw std::logic_error("fp_sqrt: overflow cannot occur");
      ++e;
      continue;
    }
    break;
  }
  const Fp r = Fp::finite(fmt, false, static_cast<std::uint32_t>(e),
                          static_cast<std::uint64_t>(n));
  if (cache) cache->store_un(1, key, r);
  return r;
}

namespace detail {

/// ln 2 bracketed to ~60 decimal digits; ample for any format this library
/// accepts (the bracket must round identically at both ends).
inline void ln2_bracket(Rational& lo, Rational& hi) {
  static const char* digits = "693147180559945309417232121458176568075500134360255254120680";
  BigInt n(digits);
  BigInt d = pow(BigInt(10), 60);
  lo = Rational(n, d);
  hi = Rational(n + 1, d);
}

inline Fp ln2_rounded(const FloatFormat& fmt) {
  Rational lo, hi;
  ln2_bracket(lo, hi);
  const Fp a = encode_real(fmt, lo), b = encode_real(fmt, hi);
  if (a != b) throw std::domain_error("format too fine for the stored ln2 bracket");
  return a;
}

/// Multiply a finite value by 2^n with correct subnormal/overflow handling.
inline Fp scale_pow2(const FloatFormat& fmt, const Fp& v, const BigInt& n) {
  if (!v.is_finite()) return v;
  if (v.is_zero()) return v;
  // Resolve far out-of-range shifts without materialising 2^n.
  const std::int64_t lo_log = static_cast<std::int64_t>(msb(BigInt(v.sig_bits()))) +
                              static_cast<std::int64_t>(v.exp_bits()) - fmt.bias() - (fmt.p - 1);
  const BigInt result_lo = BigInt(lo_log) + n;        // floor(log2 |result|)
  const std::int64_t ovf = (std::int64_t{1} << fmt.q) + 2;  // beyond the wider format's range
  const std::int64_t unf = -(fmt.bias() + fmt.p + 2);
  if (result_lo > ovf) return v.negative() ? Fp::neg_inf() : Fp::pos_inf();
  if (result_lo + 1 < unf) return Fp::zero();
  Rational x = v.value(fmt);
  const std::int64_t ni = static_cast<std::int64_t>(n);
  if (ni > (1 << 26) || ni < -(1 << 26))
    throw std::domain_error("scale_pow2: shift too large to materialise");
  if (ni >= 0)
    x *= Rational(BigInt(1) << static_cast<unsigned>(ni));
  else
    x /= Rational(BigInt(1) << static_cast<unsigned>(-ni));
  return encode_real(fmt, x);
}

}  // namespace detail

/// In-format exponential. The algorithm is fixed so that independent
/// implementations agree bit for bit:
///   1. exp(NaN) = NaN, exp(+inf) = +inf, exp(-inf) = 0.
///   2. L = round(ln 2) in the format; t = fp_div(x, L); n = nearest integer
///      to value(t), ties to even.
///   3. r = fp_sub(x, fp_mul(encode_int(n), L)).
///   4. Degree-8 Horner evaluation with coefficients c_k = round(1/k!):
///      acc = c8; for k = 7..0: acc = fp_add(fp_mul(acc, r), c_k).
///   5. Result = acc * 2^n (exponent shift with the usual rounding).
inline Fp fp_exp(const FloatFormat& fmt, const Fp& x) {
  if (x.is_nan()) return Fp::nan();
  if (x.kind() == Fp::Kind::PosInf) return Fp::pos_inf();
  if (x.kind() == Fp::Kind::NegInf) return Fp::zero();
  auto* cache = detail::OpCaches::get(fmt);
  const std::uint64_t key = cache ? detail::OpCaches::code(fmt, x) : 0;
  if (cache)
    if (auto hit = cache->lookup_un(0, key)) return *hit;

  const Fp L = detail::ln2_rounded(fmt);
  const Fp t = fp_div(fmt, x, L);
  BigInt n = 0;
  if (!t.is_zero()) {
    const Rational tv = t.value(fmt);
    const bool tneg = tv < 0;
    n = detail::round_int_ties_even(tneg ? Rational(-tv) : tv);
    if (tneg) n = -n;
  }
  const Fp r = fp_sub(fmt, x, fp_mul(fmt, encode_int(fmt, n), L));

  Fp acc = encode_real(fmt, Rational(1, 40320));  // 1/8!
  static const long factorials[8] = {5040, 720, 120, 24, 6, 2, 1, 1};
  for (int k = 0; k < 8; ++k) {
    const Fp c = encode_real(fmt, Rational(1, factorials[k]));
    acc = fp_add(fmt, fp_mul(fmt, acc, r), c);
  }
  const Fp result = detail::scale_pow2(fmt, acc, n);
  if (cache) cache->store_un(0, key, result);
  return result;
}

/// Correctly rounded exp, for debugging comparisons only (never the default
/// semantics). Evaluates the series with exact rationals and a rigorous tail
/// bound, refining until the bracket rounds unambiguously; exact ties cannot
/// occur because e^x is irrational for rational x != 0.
inline Fp fp_exp_exact_round(const FloatFormat& fmt, const Fp& x) {
  if (x.is_nan()) return Fp::nan();
  if (x.kind() == Fp::Kind::PosInf) return Fp::pos_inf();
  if (x.kind() == Fp::Kind::NegInf) return Fp::zero();
  if (x.is_zero()) return fp_one(fmt);
  const Rational v = x.value(fmt);
  const Rational mag = v < 0 ? Rational(-v) : v;
  // Out-of-range shortcuts: e^x monotone; compare against coarse bounds.
  const std::int64_t hi_log = (std::int64_t{1} << fmt.q) + 2;
  // e^x > 2^hi_log when x > hi_log (since ln 2 < 1)
  if (v > Rational(hi_log) && v > 0) return Fp::pos_inf();
  if (v < -Rational(fmt.bias() + fmt.p + 4) * 2) return Fp::zero();

  // sum_{k<=N} x^k / k! with |tail| <= |x|^(N+1)/(N+1)! * 2 for N >= 2|x|
  BigInt mag_ceil = numerator(mag) / denominator(mag) + 1;
  unsigned N = 2 * static_cast<unsigned>(mag_ceil) + 8;
  for (;;) {
    Rational term(1), sum(1);
    for (unsigned k = 1; k <= N; ++k) {
      term *= v;
      term /= k;
      sum += term;
    }
    Rational tail = term < 0 ? Rational(-term) : term;
    tail *= mag;
    tail /= (N + 1);
    tail *= 2;
    const Fp lo = encode_real(fmt, sum - tail);
    const Fp hi = encode_real(fmt, sum + tail);
    if (lo == hi) return lo;
    N += N / 2 + 8;
  }
}

/// Sum of a multiset in increasing value order (left fold of fp_add starting
/// from zero; the empty multiset sums to zero). Inputs containing NaN
/// propagate NaN.
inline Fp sum_increasing(const FloatFormat& fmt, const FpMultiset& m) {
  Fp acc = Fp::zero();
  for (const auto& [v, c] : m.entries()) {
    if (v.is_nan()) return Fp::nan();
    for (std::uint64_t i = 0; i < c; ++i) {
      const Fp next = fp_add(fmt, acc, v);
      if (next == acc && !v.is_zero() && v.is_finite() && acc.is_finite()) {
        // absorbed: every further copy of v is also absorbed
        break;
      }
      acc = next;
    }
  }
  return acc;
}

inline FpMultiset cap_multiset(const FpMultiset& m, std::uint64_t k) { return m.capped(k); }

// ---------------------------------------------------------------------------
// Property checkers
// ---------------------------------------------------------------------------

struct SaturationReport {
  bool holds = true;
  std::uint64_t trials = 0;
  std::optional<FpMultiset> witness;  // first multiset with SUM(M) != SUM(M|k)
};

/// Randomized search for a multiset violating SUM(M) = SUM(M|k).
/// Deterministic for a given seed.
inline SaturationReport validate_saturation(const FloatFormat& fmt, std::uint64_t k,
                                            std::uint64_t trials, std::uint64_t seed) {
  if (k < 1) throw std::invalid_argument("validate_saturation: k >= 1 required");
  SaturationReport rep;
  rep.trials = trials;
  const std::vector<Fp> values = enumerate_finite(fmt);
  SplitMix64 rng(seed);
  for (std::uint64_t t = 0; t < trials; ++t) {
    FpMultiset m;
    const std::uint64_t distinct = 1 + rng.bounded(5);
    for (std::uint64_t i = 0; i < distinct; ++i) {
      const Fp& v = values[rng.bounded(values.size())];
      const std::uint64_t mult = 1 + rng.bounded(3 * k + 2);
      m.add(v, mult);
    }
    if (sum_increasing(fmt, m) != sum_increasing(fmt, m.capped(k))) {
      rep.holds = false;
      rep.witness = m;
      return rep;
    }
  }
  return rep;
}

/// Working saturation bound for a format: the smallest power-of-two-ish k
/// that survives a seeded search, doubled as a safety margin. Memoized.
inline std::uint64_t saturation_bound(const FloatFormat& fmt) {
  static std::mutex mx;
  static std::map<std::pair<int, int>, std::uint64_t> memo;
  {
    std::lock_guard lock(mx);
    auto it = memo.find({fmt.p, fmt.q});
    if (it != memo.end()) return it->second;
  }
  constexpr std::uint64_t kSweepTrials = 2000;
  constexpr std::uint64_t kSweepSeed = 0x5eedf10a75ULL;
  std::uint64_t k = 1;
  while (!validate_saturation(fmt, k, kSweepTrials, kSweepSeed).holds) {
    if (k > (std::uint64_t{1} << 24))
      throw std::runtime_error("saturation bound sweep failed to converge");
    k *= 2;
  }
  // refine downward a little (k/2 already failed, so search (k/2, k])
  std::uint64_t lo = k / 2 + 1, hi = k;
  while (lo < hi) {
    const std::uint64_t mid = lo + (hi - lo) / 2;
    if (validate_saturation(fmt, mid, kSweepTrials, kSweepSeed).holds)
      hi = mid;
    else
      lo = mid + 1;
  }
  const std::uint64_t bound = 2 * hi;
  std::lock_guard lock(mx);
  memo[{fmt.p, fmt.q}] = bound;
  return bound;
}

struct UnderflowReport {
  bool valid = true;
  std::optional<Fp> counterexample;
};

/// Exhaustive check of the threshold identity |F| <= k/2  <=>  F * (k/2 * f) = 0
/// over every finite F of the format, with the product evaluated in-format as
/// fp_mul(F, fp_mul(k/2, f)). Rejects k whose half is not exactly
/// representable.
inline UnderflowReport validate_underflow_k(const FloatFormat& fmt, std::uint64_t k) {
  const Rational half_k = Rational(BigInt(k), 2);
  const Fp half = encode_real(fmt, half_k);
  if (!half.is_finite() || half.value(fmt) != half_k)
    throw std::invalid_argument("validate_underflow_k: k/2 is not representable");
  const Fp f = encode_real(fmt, fmt.min_pos_value());
  const Fp m = fp_mul(fmt, half, f);
  UnderflowReport rep;
  for (const Fp& F : enumerate_finite(fmt)) {
    const Rational av = F.is_zero() ? Rational(0)
                                    : (F.negative() ? Rational(-F.value(fmt)) : F.value(fmt));
    const bool lhs = av <= half_k;
    const bool rhs = fp_mul(fmt, F, m).is_zero();
    if (lhs != rhs) {
      rep.valid = false;
      rep.counterexample = F;
      return rep;
    }
  }
  return rep;
}

/// The k for which k/2 is exactly representable in fmt (candidate arguments
/// for validate_underflow_k), in increasing order, capped at limit.
inline std::vector<std::uint64_t> representable_half_ks(const FloatFormat& fmt,
                                                        std::uint64_t limit = 1u << 16) {
  std::vector<std::uint64_t> out;
  for (const Fp& v : enumerate_finite(fmt)) {
    if (v.negative() || v.is_zero()) continue;
    const Rational twice = v.value(fmt) * 2;
    if (denominator(twice) == 1 && numerator(twice) <= BigInt(limit))
      out.push_back(static_cast<std::uint64_t>(numerator(twice)));
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

// -- serialization helpers ---------------------------------------------------

inline std::string fp_to_hex(const FloatFormat& fmt, const Fp& v) {
  if (v.is_nan()) return "nan";
  if (v.kind() == Fp::Kind::PosInf) return "+inf";
  if (v.kind() == Fp::Kind::NegInf) return "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "0x%llx", static_cast<unsigned long long>(v.bits(fmt)));
  return buf;
}

inline Fp fp_from_hex(const FloatFormat& fmt, const std::string& s) {
  if (s == "nan") return Fp::nan();
  if (s == "+inf" || s == "inf") return Fp::pos_inf();
  if (s == "-inf") return Fp::neg_inf();
  std::string body = s;
  if (auto pos = body.find(':'); pos != std::string::npos) body = body.substr(pos + 1);
  if (body.rfind("0x", 0) != 0) throw std::invalid_argument("float literal must be 0x-hex: " + s);
  const std::uint64_t bits = std::stoull(body.substr(2), nullptr, 16);
  return Fp::from_bits(fmt, bits);
}

/// Format-prefixed external form, e.g. "f3.3:0x13".
inline std::string fp_to_string(const FloatFormat& fmt, const Fp& v) {
  if (!v.is_finite()) return fp_to_hex(fmt, v);
  return fmt.name() + ":" + fp_to_hex(fmt, v);
}

}  // namespace trilab
