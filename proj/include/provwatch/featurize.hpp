#pragma once

// Hierarchical feature hashing of entity attributes and edge encodings.

#include <algorithm>
#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "provwatch/ingest.hpp"
#include "provwatch/types.hpp"

namespace provwatch {

using FeatureVector = std::vector<float>;

/// Returns the destination IP of a socket attribute "srcIP:srcPort→dstIP:dstPort".
/// Attributes without an arrow are taken to be a bare "ip[:port]".
inline std::string_view socket_destination_ip(std::string_view attr) {
  static constexpr std::string_view kArrow = "\xE2\x86\x92";
  std::string_view dst = attr;
  if (auto p = attr.find(kArrow); p != std::string_view::npos)
    dst = attr.substr(p + kArrow.size());
  else if (auto q = attr.find("->"); q != std::string_view::npos)
    dst = attr.substr(q + 2);
  if (!dst.empty() && dst.front() == '[') {
    auto close = dst.find(']');
    return close == std::string_view::npos ? dst.substr(1) : dst.substr(1, close - 1);
  }
  if (std::count(dst.begin(), dst.end(), ':') == 1) dst = dst.substr(0, dst.find(':'));
  return dst;
}

/// Hierarchy levels of an attribute: path prefixes ending at '/' boundaries, or
/// dotted prefixes of a socket's destination IP.
inline std::vector<std::string> substrings(std::string_view attribute, EntityKind kind) {
  std::vector<std::string> out;
  if (attribute == kUnknownAttribute || attribute.empty()) {
    out.emplace_back(kUnknownAttribute);
    return out;
  }
  std::string_view s = attribute;
  char sep = '/';
  if (kind == EntityKind::Socket) {
    s = socket_destination_ip(attribute);
    sep = s.find('.') == std::string_view::npos && s.find(':') != std::string_view::npos ? ':' : '.';
    if (s.empty()) {
      out.emplace_back(kUnknownAttribute);
      return out;
    }
  }
  if (s == "/") {
    out.emplace_back("/");
    return out;
  }
  for (std::size_t i = 1; i < s.size(); ++i)
    if (s[i] == sep && s[i - 1] != sep) out.emplace_back(s.substr(0, i));
  if (s.back() != sep) out.emplace_back(s);
  if (out.empty()) out.emplace_back(s);
  return out;
}

/// splitmix64 finalizer.
inline constexpr std::uint64_t avalanche64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Character hash pair: h(c) picks a dimension, H(c) picks a sign. Both come from one
/// seeded 64-bit hash of the byte value; the sign uses the top bit.
class CharHasher {
 public:
  CharHasher(std::size_t dim, std::uint64_t seed) : dim_(dim) {
    if (dim == 0) throw std::invalid_argument("feature dimension must be positive");
    for (std::size_t c = 0; c < 256; ++c) {
      std::uint64_t h = avalanche64(c ^ avalanche64(seed));
      bucket_[c] = static_cast<std::uint32_t>(h % dim);
      sign_[c] = (h >> 63) == 0 ? 1.0f : -1.0f;
    }
  }

  std::size_t dim() const noexcept { return dim_; }
  std::uint32_t bucket(unsigned char c) const noexcept { return bucket_[c]; }
  float sign(unsigned char c) const noexcept { return sign_[c]; }

 private:
  std::size_t dim_;
  std::array<std::uint32_t, 256> bucket_{};
  std::array<float, 256> sign_{};
};

inline void accumulate_substring(std::string_view s, const CharHasher& hasher, std::span<float> out) {
  for (unsigned char c : s) out[hasher.bucket(c)] += hasher.sign(c);
}

inline FeatureVector hash_substring(std::string_view s, const CharHasher& hasher) {
  FeatureVector v(hasher.dim(), 0.0f);
  accumulate_substring(s, hasher, v);
  return v;
}

inline FeatureVector hash_substring(std::string_view s, std::size_t dim, std::uint64_t seed) {
  return hash_substring(s, CharHasher(dim, seed));
}

inline FeatureVector encode_attribute(std::string_view attribute, EntityKind kind, const CharHasher& hasher) {
  FeatureVector v(hasher.dim(), 0.0f);
  for (const auto& s : substrings(attribute, kind)) accumulate_substring(s, hasher, v);
  return v;
}

inline FeatureVector encode_attribute(std::string_view attribute, EntityKind kind, std::size_t dim,
                                      std::uint64_t seed) {
  return encode_attribute(attribute, kind, CharHasher(dim, seed));
}

/// Per-node feature vectors for one EntityCatalog, filled on demand.
class FeatureCache {
 public:
  FeatureCache(std::size_t dim, std::uint64_t seed) : hasher_(dim, seed) {}

  std::size_t dim() const noexcept { return hasher_.dim(); }
  const CharHasher& hasher() const noexcept { return hasher_; }

  /// Encodes every catalog entry not yet cached.
  void sync(const EntityCatalog& catalog) {
    const std::size_t d = dim();
    const std::size_t have = values_.size() / d;
    values_.resize(catalog.size() * d, 0.0f);
    for (std::size_t i = have; i < catalog.size(); ++i) {
      const EntityNode& n = catalog[static_cast<NodeId>(i)];
      std::span<float> out(values_.data() + i * d, d);
      for (const auto& s : substrings(n.attribute, n.kind)) accumulate_substring(s, hasher_, out);
    }
  }

  std::size_t size() const noexcept { return values_.size() / dim(); }

  std::span<const float> operator[](NodeId id) const { return {values_.data() + std::size_t(id) * dim(), dim()}; }

 private:
  CharHasher hasher_;
  std::vector<float> values_;
};

/// Φ_src ⧺ Φ_dst ⧺ one-hot(rel).
struct EdgeEncoding {
  std::vector<float> values;
  Timestamp ts = 0;
};

inline std::size_t edge_encoding_dim(std::size_t feature_dim) { return 2 * feature_dim + kNumRelations; }

inline void write_edge_encoding(std::span<const float> src, std::span<const float> dst, Relation rel,
                                std::span<float> out) {
  std::copy(src.begin(), src.end(), out.begin());
  std::copy(dst.begin(), dst.end(), out.begin() + src.size());
  auto onehot = out.subspan(src.size() + dst.size(), kNumRelations);
  std::fill(onehot.begin(), onehot.end(), 0.0f);
  onehot[relation_index(rel)] = 1.0f;
}

inline EdgeEncoding encode_edge(const Event& ev, const FeatureCache& features) {
  EdgeEncoding e;
  e.values.resize(edge_encoding_dim(features.dim()));
  e.ts = ev.ts;
  write_edge_encoding(features[ev.src], features[ev.dst], ev.rel, e.values);
  return e;
}

}  // namespace provwatch
