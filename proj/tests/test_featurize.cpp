#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "provwatch/featurize.hpp"
#include "test_util.hpp"

using namespace provwatch;

namespace {

double cosine(const FeatureVector& a, const FeatureVector& b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += double(a[i]) * b[i];
    aa += double(a[i]) * a[i];
    bb += double(b[i]) * b[i];
  }
  return ab / std::sqrt(aa * bb);
}

FeatureVector fv(std::initializer_list<float> v) { return FeatureVector(v); }

}  // namespace

TEST(Substrings, PathPrefixes) {
  EXPECT_EQ(substrings("/home/admin/clean", EntityKind::File),
            (std::vector<std::string>{"/home", "/home/admin", "/home/admin/clean"}));
  EXPECT_EQ(substrings("/usr/bin/firefox", EntityKind::Process),
            (std::vector<std::string>{"/usr", "/usr/bin", "/usr/bin/firefox"}));
  EXPECT_EQ(substrings("/", EntityKind::File), (std::vector<std::string>{"/"}));
  EXPECT_EQ(substrings("<unknown>", EntityKind::File), (std::vector<std::string>{"<unknown>"}));
  EXPECT_EQ(substrings("/var/log/", EntityKind::File), (std::vector<std::string>{"/var", "/var/log"}));
  EXPECT_EQ(substrings("relative/name", EntityKind::File), (std::vector<std::string>{"relative", "relative/name"}));
}

TEST(Substrings, SocketUsesOnlyTheDestinationAddress) {
  const std::vector<std::string> want{"161", "161.116", "161.116.88", "161.116.88.72"};
  EXPECT_EQ(substrings("10.0.0.2:51000\xE2\x86\x92" "161.116.88.72:443", EntityKind::Socket), want);
  EXPECT_EQ(substrings("10.0.0.2:51000->161.116.88.72:80", EntityKind::Socket), want);
  EXPECT_EQ(substrings("161.116.88.72", EntityKind::Socket), want);
  EXPECT_EQ(socket_destination_ip("a:1\xE2\x86\x92[fe80::1]:22"), "fe80::1");
}

TEST(HashSubstring, EmptyAndRepeatedCharacters) {
  CharHasher h(16, 0);
  EXPECT_EQ(hash_substring("", h), FeatureVector(16, 0.0f));
  auto aa = hash_substring("aa", h);
  for (std::size_t i = 0; i < 16; ++i)
    EXPECT_EQ(aa[i], i == h.bucket('a') ? 2 * h.sign('a') : 0.0f) << i;
}

TEST(HashSubstring, MatchesFrozenOracleValues) {
  // values from an independent re-implementation of the seeded splitmix64 pair
  EXPECT_EQ(hash_substring("ab", 4, 0), fv({0, -2, 0, 0}));
  EXPECT_EQ(encode_attribute("/var/log/wdev", EntityKind::File, 16, 0),
            fv({0, -3, 0, 0, -4, -1, 1, 0, 0, 0, 0, -1, 0, 3, 0, 0}));
  EXPECT_EQ(encode_attribute("/var/log/xdev", EntityKind::File, 16, 0),
            fv({0, -3, 0, 0, -4, -1, 2, 1, 0, 0, 0, -1, 0, 3, 0, 0}));
  EXPECT_EQ(encode_attribute("/home/admin/profile", EntityKind::File, 16, 0),
            fv({0, -1, 0, 0, -3, -2, -5, 0, 1, 0, -5, -4, 3, 5, 0, 0}));
  EXPECT_EQ(encode_attribute("/home/admin/clean", EntityKind::File, 16, 0),
            fv({0, 0, 0, 0, -3, -1, -5, 0, 0, 0, -5, -4, 2, 3, 0, 0}));
}

TEST(HashSubstring, SeedChangesTheMapping) {
  EXPECT_NE(hash_substring("/usr/lib/libc.so.6", 16, 0), hash_substring("/usr/lib/libc.so.6", 16, 1));
}

TEST(EncodeAttribute, SumOfSubstringVectors) {
  CharHasher h(16, 0);
  auto a = hash_substring("/a", h);
  auto b = hash_substring("/a/b", h);
  auto sum = encode_attribute("/a/b", EntityKind::File, h);
  for (std::size_t i = 0; i < 16; ++i) EXPECT_EQ(sum[i], a[i] + b[i]);
  EXPECT_EQ(encode_attribute("/etc", EntityKind::File, h), hash_substring("/etc", h));
}

TEST(EncodeAttribute, LinearityOnRandomPaths) {
  std::mt19937_64 rng(11);
  CharHasher h(16, 0);
  for (int trial = 0; trial < 200; ++trial) {
    std::string path;
    const int depth = 1 + int(rng() % 6);
    for (int d = 0; d < depth; ++d) {
      path += '/';
      for (int k = 0, n = 1 + int(rng() % 8); k < n; ++k) path += char('a' + rng() % 26);
    }
    std::vector<double> expect(16, 0.0);
    for (const auto& s : substrings(path, EntityKind::File)) {
      auto v = hash_substring(s, h);
      for (std::size_t i = 0; i < 16; ++i) expect[i] += v[i];
    }
    auto got = encode_attribute(path, EntityKind::File, h);
    for (std::size_t i = 0; i < 16; ++i) EXPECT_NEAR(got[i], expect[i], 1e-12) << path;
  }
}

TEST(EncodeAttribute, SiblingsAreCloserThanForeignPaths) {
  auto w = encode_attribute("/var/log/wdev", EntityKind::File, 16, 0);
  auto x = encode_attribute("/var/log/xdev", EntityKind::File, 16, 0);
  auto p = encode_attribute("/home/admin/profile", EntityKind::File, 16, 0);
  EXPECT_GT(cosine(w, x), cosine(w, p));
  EXPECT_NEAR(cosine(w, x), 0.9756427153298839, 1e-6);
  EXPECT_NEAR(cosine(w, p), 0.47523882300946035, 1e-6);
}

TEST(EncodeAttribute, SiblingSimilarityHoldsOnAverage) {
  std::mt19937_64 rng(2024);
  CharHasher h(16, 0);
  auto word = [&] {
    std::string s;
    for (int k = 0, n = 3 + int(rng() % 6); k < n; ++k) s += char('a' + rng() % 26);
    return s;
  };
  double sib = 0, foreign = 0;
  const int trials = 1000;
  for (int t = 0; t < trials; ++t) {
    std::string dir = "/" + word() + "/" + word();
    std::string other = "/" + word() + "/" + word();
    auto a = encode_attribute(dir + "/" + word(), EntityKind::File, h);
    auto b = encode_attribute(dir + "/" + word(), EntityKind::File, h);
    auto c = encode_attribute(other + "/" + word(), EntityKind::File, h);
    sib += cosine(a, b);
    foreign += cosine(a, c);
  }
  EXPECT_GT(sib / trials, foreign / trials);
}

TEST(EncodeEdge, LayoutAndOneHot) {
  test_support::Graph g;
  auto& ev = g.add(1, {"p", EntityKind::Process, "/bin/cat"}, {"f", EntityKind::File, "/etc/hosts"}, Relation::Read);
  FeatureCache cache(16, 0);
  cache.sync(g.catalog);
  auto enc = encode_edge(ev, cache);
  ASSERT_EQ(enc.values.size(), 41u);
  EXPECT_EQ(edge_encoding_dim(16), 41u);
  EXPECT_EQ(enc.ts, 1);
  for (std::size_t i = 0; i < 16; ++i) {
    EXPECT_EQ(enc.values[i], cache[ev.src][i]);
    EXPECT_EQ(enc.values[16 + i], cache[ev.dst][i]);
  }
  for (std::size_t k = 0; k < kNumRelations; ++k) EXPECT_EQ(enc.values[32 + k], k == 3 ? 1.0f : 0.0f);

  Event other = ev;
  other.rel = Relation::Open;
  auto enc2 = encode_edge(other, cache);
  for (std::size_t i = 0; i < 32; ++i) EXPECT_EQ(enc.values[i], enc2.values[i]);
  EXPECT_NE(enc.values, enc2.values);
  int ones = 0;
  for (std::size_t k = 32; k < 41; ++k) ones += enc2.values[k] == 1.0f;
  EXPECT_EQ(ones, 1);
}

TEST(FeatureCache, DeterministicAndIncremental) {
  test_support::Graph g;
  g.add(1, {"p", EntityKind::Process, "/bin/cat"}, {"f", EntityKind::File, "/etc/hosts"}, Relation::Read);
  FeatureCache cache(8, 3);
  cache.sync(g.catalog);
  EXPECT_EQ(cache.size(), 2u);
  g.add(2, {"p", EntityKind::Process, "/bin/cat"}, {"s", EntityKind::Socket, "1.2.3.4:5\xE2\x86\x92" "8.8.8.8:53"},
        Relation::Send);
  cache.sync(g.catalog);
  ASSERT_EQ(cache.size(), 3u);
  auto s = cache[2];
  auto want = encode_attribute("8.8.8.8", EntityKind::Socket, 8, 3);
  EXPECT_TRUE(std::equal(s.begin(), s.end(), want.begin()));
}
