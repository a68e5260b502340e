#pragma once

// Signed feature hashing.
//
//   index(t) = murmur3_32(t, seed 0) mod d
//   sign(t)  = -1 if bit 31 of murmur3_32(t, seed 1) is set, else +1
//
// murmur3_32 is MurmurHash3_x86_32 over the raw token bytes. Any other
// implementation that follows these three lines reproduces the vectors.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace pemal {

inline constexpr std::uint32_t kIndexSeed = 0;
inline constexpr std::uint32_t kSignSeed = 1;

inline std::uint32_t murmur3_32(std::string_view key, std::uint32_t seed) noexcept {
    constexpr std::uint32_t c1 = 0xcc9e2d51;
    constexpr std::uint32_t c2 = 0x1b873593;
    auto rotl = [](std::uint32_t x, int r) { return (x << r) | (x >> (32 - r)); };
    auto byte = [&](std::size_t i) { return static_cast<std::uint32_t>(static_cast<unsigned char>(key[i])); };

    const std::size_t len = key.size();
    const std::size_t nblocks = len / 4;
    std::uint32_t h = seed;

    for (std::size_t i = 0; i < nblocks; ++i) {
        std::uint32_t k = byte(4 * i) | (byte(4 * i + 1) << 8) | (byte(4 * i + 2) << 16) | (byte(4 * i + 3) << 24);
        k *= c1;
        k = rotl(k, 15);
        k *= c2;
        h ^= k;
        h = rotl(h, 13);
        h = h * 5 + 0xe6546b64;
    }

    const std::size_t tail = nblocks * 4;
    std::uint32_t k = 0;
    switch (len & 3) {
        case 3: k ^= byte(tail + 2) << 16; [[fallthrough]];
        case 2: k ^= byte(tail + 1) << 8; [[fallthrough]];
        case 1:
            k ^= byte(tail);
            k *= c1;
            k = rotl(k, 15);
            k *= c2;
            h ^= k;
    }

    h ^= static_cast<std::uint32_t>(len);
    h ^= h >> 16;
    h *= 0x85ebca6b;
    h ^= h >> 13;
    h *= 0xc2b2ae35;
    h ^= h >> 16;
    return h;
}

struct HashSlot {
    std::size_t index;
    double sign;
};

inline HashSlot hash_slot(std::string_view token, std::size_t dim) noexcept {
    const std::size_t index = murmur3_32(token, kIndexSeed) % dim;
    const double sign = (murmur3_32(token, kSignSeed) & 0x80000000u) ? -1.0 : 1.0;
    return {index, sign};
}

/// A dense vector of exactly `dim` entries.
using HashedVector = std::vector<double>;

/// Requires dim >= 1.
inline HashedVector hash_tokens(std::span<const std::string> tokens, std::size_t dim) {
    HashedVector out(dim, 0.0);
    for (const auto& t : tokens) {
        auto [i, s] = hash_slot(t, dim);
        out[i] += s;
    }
    return out;
}

inline HashedVector hash_pairs(std::span<const std::pair<std::string, double>> pairs, std::size_t dim) {
    HashedVector out(dim, 0.0);
    for (const auto& [key, value] : pairs) {
        auto [i, s] = hash_slot(key, dim);
        out[i] += s * value;
    }
    return out;
}

}  // namespace pemal
