#pragma once

// Little-endian encode/decode helpers shared by the cache and model formats.

#include <pemal/error.hpp>

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

namespace pemal::binio {

inline std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
    uLong crc = ::crc32(0L, Z_NULL, 0);
    // zlib takes uInt lengths; feed in chunks for multi-GB buffers.
    constexpr std::size_t kChunk = 1u << 30;
    for (std::size_t at = 0; at < bytes.size(); at += kChunk) {
        const auto n = static_cast<uInt>(std::min(kChunk, bytes.size() - at));
        crc = ::crc32(crc, bytes.data() + at, n);
    }
    return static_cast<std::uint32_t>(crc);
}

class Writer {
public:
    template <typename T>
        requires std::is_arithmetic_v<T>
    void put(T value) {
        using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                  std::conditional_t<sizeof(T) == 4, std::uint32_t,
                  std::conditional_t<sizeof(T) == 2, std::uint16_t, std::uint8_t>>>;
        const U bits = std::bit_cast<U>(value);
        for (std::size_t i = 0; i < sizeof(T); ++i) buf_.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
    }

    void put_bytes(std::span<const std::uint8_t> bytes) { buf_.insert(buf_.end(), bytes.begin(), bytes.end()); }

    void put_string(const std::string& s) {
        put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
        buf_.insert(buf_.end(), s.begin(), s.end());
    }

    /// Appends CRC32 of everything written so far.
    void seal() { put<std::uint32_t>(crc32(buf_)); }

    const std::vector<std::uint8_t>& bytes() const noexcept { return buf_; }

    void save(const std::filesystem::path& path) const {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open " + path.string() + " for writing");
        out.write(reinterpret_cast<const char*>(buf_.data()), static_cast<std::streamsize>(buf_.size()));
        if (!out) throw IoError("write failed: " + path.string());
    }

private:
    std::vector<std::uint8_t> buf_;
};

/// Reader that throws `E` on any out-of-range access.
template <typename E>
class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> data) : data_(data) {}

    template <typename T>
        requires std::is_arithmetic_v<T>
    T get() {
        need(sizeof(T));
        using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                  std::conditional_t<sizeof(T) == 4, std::uint32_t,
                  std::conditional_t<sizeof(T) == 2, std::uint16_t, std::uint8_t>>>;
        U bits = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<U>(static_cast<U>(data_[pos_ + i]) << (8 * i));
        pos_ += sizeof(T);
        return std::bit_cast<T>(bits);
    }

    std::span<const std::uint8_t> get_bytes(std::size_t n) {
        need(n);
        auto out = data_.subspan(pos_, n);
        pos_ += n;
        return out;
    }

    std::string get_string() {
        const auto n = get<std::uint32_t>();
        auto b = get_bytes(n);
        return {b.begin(), b.end()};
    }

    std::size_t position() const noexcept { return pos_; }
    std::size_t remaining() const noexcept { return data_.size() - pos_; }

private:
    void need(std::size_t n) const {
        if (n > data_.size() - pos_) throw E("unexpected end of data");
    }

    std::span<const std::uint8_t> data_;
    std::size_t pos_ = 0;
};

/// Splits a sealed buffer into payload and verifies its trailing CRC32.
template <typename E>
std::span<const std::uint8_t> verify_sealed(std::span<const std::uint8_t> data) {
    if (data.size() < 4) throw E("file too short");
    auto payload = data.first(data.size() - 4);
    Reader<E> tail(data.last(4));
    if (tail.template get<std::uint32_t>() != crc32(payload)) throw E("checksum mismatch");
    return payload;
}

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw IoError("cannot open " + path.string());
    const auto size = static_cast<std::size_t>(in.tellg());
    std::vector<std::uint8_t> out(size);
    in.seekg(0);
    if (size != 0 && !in.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(size)))
        throw IoError("read failed: " + path.string());
    return out;
}

}  // namespace pemal::binio
