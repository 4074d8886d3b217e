#pragma once

#include <algorithm>
#include <stdexcept>
#include <string>
#include <vector>

namespace trilab {

/// Token identifier: an index into a Vocab, or the reserved BOS marker.
/// EOS exists only as a generation terminator; it never labels a vertex.
using Token = int;
inline constexpr Token kBos = -1;

inline const std::string kBosName = "BOS";
inline const std::string kEosName = "EOS";

/// An ordered alphabet. BOS and EOS are reserved names outside the alphabet.
struct Vocab {
  std::vector<std::string> tokens;

  Vocab() = default;
  explicit Vocab(std::vector<std::string> t) : tokens(std::move(t)) {
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      if (tokens[i] == kBosName || tokens[i] == kEosName)
        throw std::invalid_argument("vocab must not contain " + tokens[i]);
      for (std::size_t j = i + 1; j < tokens.size(); ++j)
        if (tokens[i] == tokens[j])
          throw std::invalid_argument("duplicate token: " + tokens[i]);
    }
  }

  std::size_t size() const { return tokens.size(); }

  Token id(const std::string& name) const {
    if (name == kBosName) return kBos;
    for (std::size_t i = 0; i < tokens.size(); ++i)
      if (tokens[i] == name) return static_cast<Token>(i);
    throw std::invalid_argument("unknown token: " + name);
  }

  const std::string& name(Token t) const {
    if (t == kBos) return kBosName;
    if (t < 0 || static_cast<std::size_t>(t) >= tokens.size())
      throw std::invalid_argument("token id out of range");
    return tokens[static_cast<std::size_t>(t)];
  }
};

/// A token sequence with exactly one BOS vertex separating the prefix from
/// the suffix. Vertices are numbered 1..n; the successor relation is
/// implicit. The BOS vertex sits at position |prefix|+1 and belongs to the
/// suffix.
class TwoSortedGraph {
 public:
  TwoSortedGraph() = default;
  TwoSortedGraph(std::vector<Token> prefix, std::vector<Token> suffix_after_bos)
      : prefix_(std::move(prefix)), suffix_tail_(std::move(suffix_after_bos)) {}

  static TwoSortedGraph make(const Vocab& v, const std::vector<std::string>& prefix,
                             const std::vector<std::string>& suffix_after_bos) {
    std::vector<Token> p, s;
    p.reserve(prefix.size());
    s.reserve(suffix_after_bos.size());
    for (const auto& t : prefix) {
      const Token id = v.id(t);
      if (id == kBos) throw std::invalid_argument("BOS cannot appear in the prefix");
      p.push_back(id);
    }
    for (const auto& t : suffix_after_bos) {
      const Token id = v.id(t);
      if (id == kBos) throw std::invalid_argument("BOS cannot be repeated in the suffix");
      s.push_back(id);
    }
    return TwoSortedGraph(std::move(p), std::move(s));
  }

  int size() const { return static_cast<int>(prefix_.size() + 1 + suffix_tail_.size()); }
  int bos_index() const { return static_cast<int>(prefix_.size()) + 1; }  // 1-based
  int prefix_len() const { return static_cast<int>(prefix_.size()); }
  int suffix_len() const { return static_cast<int>(suffix_tail_.size()) + 1; }  // includes BOS

  /// Label of vertex v (1-based).
  Token label(int v) const {
    if (v < 1 || v > size()) throw std::out_of_range("vertex index");
    const int w = bos_index();
    if (v < w) return prefix_[static_cast<std::size_t>(v - 1)];
    if (v == w) return kBos;
    return suffix_tail_[static_cast<std::size_t>(v - w - 1)];
  }

  bool in_suffix(int v) const { return v >= bos_index() && v <= size(); }
  bool in_prefix(int v) const { return v >= 1 && v < bos_index(); }

  const std::vector<Token>& prefix() const { return prefix_; }
  const std::vector<Token>& suffix_tail() const { return suffix_tail_; }

  /// Full suffix labels, BOS first.
  std::vector<Token> suffix() const {
    std::vector<Token> out;
    out.reserve(suffix_tail_.size() + 1);
    out.push_back(kBos);
    out.insert(out.end(), suffix_tail_.begin(), suffix_tail_.end());
    return out;
  }

  TwoSortedGraph with_appended(Token t) const {
    TwoSortedGraph g = *this;
    g.suffix_tail_.push_back(t);
    return g;
  }

  friend bool operator==(const TwoSortedGraph& a, const TwoSortedGraph& b) {
    return a.prefix_ == b.prefix_ && a.suffix_tail_ == b.suffix_tail_;
  }
  friend bool operator<(const TwoSortedGraph& a, const TwoSortedGraph& b) {
    if (a.prefix_ != b.prefix_) return a.prefix_ < b.prefix_;
    return a.suffix_tail_ < b.suffix_tail_;
  }

  std::string to_string(const Vocab& vocab) const {
    std::string out = "[";
    for (std::size_t i = 0; i < prefix_.size(); ++i) {
      if (i) out += " ";
      out += vocab.name(prefix_[i]);
    }
    out += " | BOS";
    for (const Token t : suffix_tail_) out += " " + vocab.name(t);
    out += "]";
    return out;
  }

 private:
  std::vector<Token> prefix_;
  std::vector<Token> suffix_tail_;
};

/// Every two-sorted graph with at most max_total_len vertices, each exactly
/// once, in a deterministic order: ascending total size, then descending
/// prefix length, then token assignments lexicographically by id with the
/// leftmost slot most significant (prefix slots before suffix slots).
inline std::vector<TwoSortedGraph> enumerate_graphs(const Vocab& vocab, int max_total_len) {
  if (max_total_len < 1) throw std::invalid_argument("max_total_len >= 1 required");
  std::vector<TwoSortedGraph> out;
  const int sigma = static_cast<int>(vocab.size());
  for (int n = 1; n <= max_total_len; ++n) {
    for (int plen = n - 1; plen >= 0; --plen) {
      const int slots = n - 1;
      if (slots > 0 && sigma == 0) continue;
      std::vector<int> odo(static_cast<std::size_t>(slots), 0);
      for (;;) {
        std::vector<Token> prefix(odo.begin(), odo.begin() + plen);
        std::vector<Token> suffix(odo.begin() + plen, odo.end());
        out.emplace_back(std::move(prefix), std::move(suffix));
        int i = slots - 1;
        while (i >= 0 && odo[static_cast<std::size_t>(i)] == sigma - 1) {
          odo[static_cast<std::size_t>(i)] = 0;
          --i;
        }
        if (i < 0) break;
        ++odo[static_cast<std::size_t>(i)];
      }
      if (slots == 0) continue;
    }
  }
  return out;
}

}  // namespace trilab
