#include <pemal/feature_hash.hpp>

#include "support/reference_hash.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <random>

using namespace pemal;
using namespace pemal::testing;

namespace {

std::string random_token(std::mt19937_64& rng) {
    std::string s(rng() % 24, '\0');
    for (auto& c : s) c = static_cast<char>(rng() & 0xff);
    return s;
}

std::size_t nonzeros(const HashedVector& v) {
    return static_cast<std::size_t>(std::count_if(v.begin(), v.end(), [](double x) { return x != 0.0; }));
}

}  // namespace

// Published MurmurHash3_x86_32 outputs (same values as the canonical C++
// implementation and Python's mmh3 with signed=False).
TEST(Murmur3, KnownVectors) {
    EXPECT_EQ(murmur3_32("", 0), 0x00000000u);
    EXPECT_EQ(murmur3_32("", 1), 0x514e28b7u);
    EXPECT_EQ(murmur3_32("hello", 0), 0x248bfa47u);
    EXPECT_EQ(murmur3_32("The quick brown fox jumps over the lazy dog", 0), 0x2e4ff723u);
    EXPECT_EQ(murmur3_32("kernel32.dll", 0), 0x30884675u);
    EXPECT_EQ(murmur3_32("kernel32.dll", 1), 0xb59eab78u);
    EXPECT_EQ(murmur3_32(".text", 0), 0x82f3c2a3u);
    EXPECT_EQ(murmur3_32(".text", 1), 0xa67daab8u);
}

TEST(Murmur3, MatchesReferenceOnRandomBytes) {
    std::mt19937_64 rng(1);
    for (int i = 0; i < 2000; ++i) {
        const auto t = random_token(rng);
        const auto seed = static_cast<std::uint32_t>(rng());
        ASSERT_EQ(murmur3_32(t, seed), ref_murmur3(t, seed));
    }
}

TEST(HashTokens, NoTokensIsZero) {
    const auto v = hash_tokens({}, 50);
    ASSERT_EQ(v.size(), 50u);
    EXPECT_EQ(nonzeros(v), 0u);
}

TEST(HashTokens, SingleTokenMatchesReference) {
    const std::vector<std::string> tokens{"kernel32.dll"};
    const auto v = hash_tokens(tokens, 256);
    ASSERT_EQ(v.size(), 256u);
    EXPECT_EQ(nonzeros(v), 1u);
    EXPECT_EQ(v[ref_index("kernel32.dll", 256)], ref_sign("kernel32.dll"));
}

TEST(HashTokens, RepeatedTokenAccumulates) {
    const std::vector<std::string> tokens{"a", "a"};
    const auto v = hash_tokens(tokens, 16);
    EXPECT_EQ(nonzeros(v), 1u);
    EXPECT_EQ(std::abs(v[ref_index("a", 16)]), 2.0);
}

TEST(HashTokens, PermutationInvariant) {
    std::mt19937_64 rng(5);
    std::vector<std::string> tokens;
    for (int i = 0; i < 200; ++i) tokens.push_back(random_token(rng));
    const auto a = hash_tokens(tokens, 97);
    std::shuffle(tokens.begin(), tokens.end(), rng);
    EXPECT_EQ(hash_tokens(tokens, 97), a);
}

TEST(HashPairs, ZeroWeightIsZero) {
    const std::vector<std::pair<std::string, double>> p{{"x", 0.0}};
    EXPECT_EQ(nonzeros(hash_pairs(p, 50)), 0u);
}

TEST(HashPairs, WeightedEntryMatchesReference) {
    const std::vector<std::pair<std::string, double>> p{{".text", 4096.0}};
    const auto v = hash_pairs(p, 50);
    EXPECT_EQ(nonzeros(v), 1u);
    EXPECT_EQ(v[ref_index(".text", 50)], ref_sign(".text") * 4096.0);
}

TEST(HashPairs, LinearInValuesForOneKey) {
    const std::vector<std::pair<std::string, double>> p{{"a", 2.0}, {"a", 3.0}};
    const auto v = hash_pairs(p, 10);
    EXPECT_EQ(nonzeros(v), 1u);
    EXPECT_EQ(std::abs(v[ref_index("a", 10)]), 5.0);
}

TEST(HashPairs, ConcatenationIsElementwiseSum) {
    std::mt19937_64 rng(9);
    std::uniform_int_distribution<int> small(-1000, 1000);
    std::vector<std::pair<std::string, double>> p1, p2;
    for (int i = 0; i < 100; ++i) p1.emplace_back(random_token(rng), small(rng));
    for (int i = 0; i < 100; ++i) p2.emplace_back(random_token(rng), small(rng));
    auto both = p1;
    both.insert(both.end(), p2.begin(), p2.end());
    const auto a = hash_pairs(p1, 33), b = hash_pairs(p2, 33), ab = hash_pairs(both, 33);
    // Integer-valued weights keep the sums exact.
    for (std::size_t i = 0; i < 33; ++i) EXPECT_EQ(ab[i], a[i] + b[i]);
}

TEST(HashPairs, MatchesReferenceOnRandomInputs) {
    std::mt19937_64 rng(21);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t dim = 1 + rng() % 300;
        std::vector<std::pair<std::string, double>> p;
        for (int i = 0; i < 40; ++i) p.emplace_back(random_token(rng), static_cast<double>(rng() % 100));
        EXPECT_EQ(hash_pairs(p, dim), ref_hash_pairs(p, dim));
    }
}
