#pragma once

// Tolerant parser for PE32 / PE32+ images.
//
// Only the DOS header, the PE signature, the COFF header, the fixed part of
// the optional header and the section table are mandatory. Import, export
// and data-directory contents that are damaged degrade to empty values so
// that hostile samples still produce a feature vector.

#include <pemal/error.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

namespace pemal {

using ByteSpan = std::span<const std::uint8_t>;

/// Shannon entropy in bits per byte; 0 for empty input.
inline double section_entropy(ByteSpan bytes) {
    if (bytes.empty()) return 0.0;
    std::array<std::size_t, 256> counts{};
    for (auto b : bytes) ++counts[b];
    const double n = static_cast<double>(bytes.size());
    double h = 0.0;
    for (auto c : counts) {
        if (c == 0) continue;
        const double p = static_cast<double>(c) / n;
        h -= p * std::log2(p);
    }
    return std::clamp(h, 0.0, 8.0);
}

namespace pe {

inline constexpr std::uint16_t kMagicPE32 = 0x10b;
inline constexpr std::uint16_t kMagicPE32Plus = 0x20b;
inline constexpr std::size_t kNumDataDirectories = 16;

enum DataDirectoryIndex : std::size_t {
    kExportDir = 0,
    kImportDir = 1,
    kResourceDir = 2,
    kExceptionDir = 3,
    kSecurityDir = 4,
    kBaseRelocDir = 5,
    kDebugDir = 6,
    kArchitectureDir = 7,
    kGlobalPtrDir = 8,
    kTlsDir = 9,
    kLoadConfigDir = 10,
    kBoundImportDir = 11,
    kIatDir = 12,
    kDelayImportDir = 13,
    kClrRuntimeDir = 14,
    kReservedDir = 15,
};

inline constexpr std::uint32_t kSectionMemExecute = 0x20000000;
inline constexpr std::uint32_t kSectionMemRead = 0x40000000;
inline constexpr std::uint32_t kSectionMemWrite = 0x80000000;

// Walk limits for hostile tables.
inline constexpr std::size_t kMaxImportDescriptors = 4096;
inline constexpr std::size_t kMaxThunksPerLibrary = 65536;
inline constexpr std::size_t kMaxExportNames = 65536;
inline constexpr std::size_t kMaxNameLength = 1024;

}  // namespace pe

struct DosHeader {
    std::uint16_t magic = 0;
    std::uint32_t pe_offset = 0;

    bool operator==(const DosHeader&) const = default;
};

struct CoffHeader {
    std::uint16_t machine = 0;
    std::uint16_t num_sections = 0;
    std::uint32_t timestamp = 0;
    std::uint32_t symbol_table_offset = 0;
    std::uint32_t num_symbols = 0;
    std::uint16_t sizeof_optional_header = 0;
    std::uint16_t characteristics = 0;

    bool operator==(const CoffHeader&) const = default;
};

struct OptionalHeader {
    std::uint16_t magic = 0;
    std::uint8_t major_linker_version = 0;
    std::uint8_t minor_linker_version = 0;
    std::uint32_t sizeof_code = 0;
    std::uint32_t entry_point_rva = 0;
    std::uint64_t image_base = 0;
    std::uint16_t major_os_version = 0;
    std::uint16_t minor_os_version = 0;
    std::uint16_t major_image_version = 0;
    std::uint16_t minor_image_version = 0;
    std::uint16_t major_subsystem_version = 0;
    std::uint16_t minor_subsystem_version = 0;
    std::uint32_t sizeof_image = 0;
    std::uint32_t sizeof_headers = 0;
    std::uint16_t subsystem = 0;
    std::uint16_t dll_characteristics = 0;
    std::uint64_t sizeof_heap_commit = 0;
    std::uint32_t num_rva_and_sizes = 0;

    bool is_pe32_plus() const noexcept { return magic == pe::kMagicPE32Plus; }
    bool operator==(const OptionalHeader&) const = default;
};

struct DataDirectory {
    std::uint32_t virtual_address = 0;
    std::uint32_t size = 0;

    bool present() const noexcept { return size != 0; }
    bool operator==(const DataDirectory&) const = default;
};

struct Section {
    std::string name;  // raw bytes up to the first NUL
    std::uint32_t virtual_size = 0;
    std::uint32_t virtual_address = 0;
    std::uint32_t raw_size = 0;
    std::uint32_t raw_offset = 0;
    std::uint32_t characteristics = 0;
    double entropy = 0.0;
    bool contains_entry_point = false;

    bool operator==(const Section&) const = default;
};

struct ImportedLibrary {
    std::string library_name;
    std::vector<std::string> function_names;

    bool operator==(const ImportedLibrary&) const = default;
};

struct ParsedPE {
    DosHeader dos_header;
    CoffHeader coff_header;
    OptionalHeader optional_header;
    std::array<DataDirectory, pe::kNumDataDirectories> data_directories{};
    std::vector<Section> sections;
    std::vector<ImportedLibrary> imports;
    std::vector<std::string> exports;

    bool has_debug = false;
    bool has_relocations = false;
    bool has_resources = false;
    bool has_signature = false;
    bool has_tls = false;

    const Section* entry_section() const {
        for (const auto& s : sections)
            if (s.contains_entry_point) return &s;
        return nullptr;
    }

    bool operator==(const ParsedPE&) const = default;
};

namespace detail {

/// Bounds-checked little-endian view over the input buffer.
class ByteReader {
public:
    explicit ByteReader(ByteSpan data) : data_(data) {}

    std::size_t size() const noexcept { return data_.size(); }

    bool fits(std::size_t offset, std::size_t len) const noexcept {
        return offset <= data_.size() && len <= data_.size() - offset;
    }

    template <typename T>
    std::optional<T> try_read(std::size_t offset) const noexcept {
        if (!fits(offset, sizeof(T))) return std::nullopt;
        std::uint64_t v = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i)
            v |= static_cast<std::uint64_t>(data_[offset + i]) << (8 * i);
        return static_cast<T>(v);
    }

    template <typename T>
    T read(std::size_t offset, const char* what) const {
        auto v = try_read<T>(offset);
        if (!v) throw MalformedPE(std::min(offset, data_.size()), std::string("truncated ") + what);
        return *v;
    }

    std::optional<std::string> try_cstring(std::size_t offset, std::size_t max_len) const {
        if (offset >= data_.size()) return std::nullopt;
        std::string out;
        for (std::size_t i = offset; i < data_.size() && out.size() < max_len; ++i) {
            if (data_[i] == 0) return out;
            out.push_back(static_cast<char>(data_[i]));
        }
        // Unterminated strings are accepted when they hit the length cap, not the buffer end.
        if (out.size() == max_len) return out;
        return std::nullopt;
    }

    ByteSpan slice(std::size_t offset, std::size_t len) const noexcept {
        if (offset >= data_.size()) return {};
        return data_.subspan(offset, std::min(len, data_.size() - offset));
    }

private:
    ByteSpan data_;
};

inline std::optional<std::size_t> rva_to_offset(const ParsedPE& pe, std::size_t file_size, std::uint64_t rva) {
    for (const auto& s : pe.sections) {
        const std::uint64_t span = std::max(s.virtual_size, s.raw_size);
        if (rva >= s.virtual_address && rva < s.virtual_address + span) {
            const std::uint64_t delta = rva - s.virtual_address;
            if (delta >= s.raw_size) return std::nullopt;  // lands in zero-fill
            const std::uint64_t off = static_cast<std::uint64_t>(s.raw_offset) + delta;
            if (off >= file_size) return std::nullopt;
            return static_cast<std::size_t>(off);
        }
    }
    // Header region is mapped 1:1.
    if (rva < pe.optional_header.sizeof_headers && rva < file_size) return static_cast<std::size_t>(rva);
    return std::nullopt;
}

inline std::vector<ImportedLibrary> parse_imports(const ParsedPE& pe, const ByteReader& r) {
    std::vector<ImportedLibrary> out;
    const auto& dir = pe.data_directories[pe::kImportDir];
    if (dir.virtual_address == 0 || dir.size == 0) return out;
    const bool wide = pe.optional_header.is_pe32_plus();
    const std::size_t thunk_size = wide ? 8 : 4;
    const std::uint64_t ordinal_flag = wide ? (1ULL << 63) : (1ULL << 31);

    for (std::size_t i = 0; i < pe::kMaxImportDescriptors; ++i) {
        auto desc = rva_to_offset(pe, r.size(), static_cast<std::uint64_t>(dir.virtual_address) + i * 20);
        if (!desc || !r.fits(*desc, 20)) break;
        const auto original_first_thunk = *r.try_read<std::uint32_t>(*desc);
        const auto name_rva = *r.try_read<std::uint32_t>(*desc + 12);
        const auto first_thunk = *r.try_read<std::uint32_t>(*desc + 16);
        if (original_first_thunk == 0 && name_rva == 0 && first_thunk == 0) break;

        auto name_off = rva_to_offset(pe, r.size(), name_rva);
        if (!name_off) continue;
        auto name = r.try_cstring(*name_off, pe::kMaxNameLength);
        if (!name || name->empty()) continue;

        ImportedLibrary lib{*name, {}};
        const std::uint32_t thunk_rva = original_first_thunk != 0 ? original_first_thunk : first_thunk;
        for (std::size_t t = 0; thunk_rva != 0 && t < pe::kMaxThunksPerLibrary; ++t) {
            auto off = rva_to_offset(pe, r.size(), static_cast<std::uint64_t>(thunk_rva) + t * thunk_size);
            if (!off) break;
            std::uint64_t thunk = 0;
            if (wide) {
                auto v = r.try_read<std::uint64_t>(*off);
                if (!v) break;
                thunk = *v;
            } else {
                auto v = r.try_read<std::uint32_t>(*off);
                if (!v) break;
                thunk = *v;
            }
            if (thunk == 0) break;
            if (thunk & ordinal_flag) {
                lib.function_names.push_back("ordinal" + std::to_string(thunk & 0xffff));
                continue;
            }
            auto hint_off = rva_to_offset(pe, r.size(), (thunk & 0x7fffffff) + 2);
            if (!hint_off) break;
            auto fn = r.try_cstring(*hint_off, pe::kMaxNameLength);
            if (!fn) break;
            lib.function_names.push_back(std::move(*fn));
        }
        out.push_back(std::move(lib));
    }
    return out;
}

inline std::vector<std::string> parse_exports(const ParsedPE& pe, const ByteReader& r) {
    std::vector<std::string> out;
    const auto& dir = pe.data_directories[pe::kExportDir];
    if (dir.virtual_address == 0 || dir.size == 0) return out;
    auto base = rva_to_offset(pe, r.size(), dir.virtual_address);
    if (!base || !r.fits(*base, 40)) return out;
    const auto num_names = *r.try_read<std::uint32_t>(*base + 24);
    const auto names_rva = *r.try_read<std::uint32_t>(*base + 32);
    const std::size_t n = std::min<std::size_t>(num_names, pe::kMaxExportNames);
    for (std::size_t i = 0; i < n; ++i) {
        auto slot = rva_to_offset(pe, r.size(), static_cast<std::uint64_t>(names_rva) + 4 * i);
        if (!slot) break;
        auto name_rva = r.try_read<std::uint32_t>(*slot);
        if (!name_rva) break;
        auto name_off = rva_to_offset(pe, r.size(), *name_rva);
        if (!name_off) continue;
        auto name = r.try_cstring(*name_off, pe::kMaxNameLength);
        if (name) out.push_back(std::move(*name));
    }
    return out;
}

}  // namespace detail

/// Parse raw PE bytes. Throws MalformedPE when the core headers or the
/// section table are unusable; everything else degrades to empty values.
inline ParsedPE parse_pe(ByteSpan bytes) {
    detail::ByteReader r(bytes);
    ParsedPE pe;

    if (bytes.size() < 2 || bytes[0] != 'M' || bytes[1] != 'Z') throw MalformedPE(0, "missing MZ magic");
    pe.dos_header.magic = r.read<std::uint16_t>(0, "DOS header");
    pe.dos_header.pe_offset = r.read<std::uint32_t>(0x3c, "DOS header");

    const std::size_t sig = pe.dos_header.pe_offset;
    if (!r.fits(sig, 4)) throw MalformedPE(std::min(sig, bytes.size()), "truncated PE signature");
    if (bytes[sig] != 'P' || bytes[sig + 1] != 'E' || bytes[sig + 2] != 0 || bytes[sig + 3] != 0)
        throw MalformedPE(sig, "missing PE signature");

    const std::size_t coff = sig + 4;
    auto& ch = pe.coff_header;
    ch.machine = r.read<std::uint16_t>(coff + 0, "COFF header");
    ch.num_sections = r.read<std::uint16_t>(coff + 2, "COFF header");
    ch.timestamp = r.read<std::uint32_t>(coff + 4, "COFF header");
    ch.symbol_table_offset = r.read<std::uint32_t>(coff + 8, "COFF header");
    ch.num_symbols = r.read<std::uint32_t>(coff + 12, "COFF header");
    ch.sizeof_optional_header = r.read<std::uint16_t>(coff + 16, "COFF header");
    ch.characteristics = r.read<std::uint16_t>(coff + 18, "COFF header");

    const std::size_t opt = coff + 20;
    auto& oh = pe.optional_header;
    oh.magic = r.read<std::uint16_t>(opt, "optional header");
    if (oh.magic != pe::kMagicPE32 && oh.magic != pe::kMagicPE32Plus)
        throw MalformedPE(opt, "unknown optional header magic");
    const bool wide = oh.is_pe32_plus();
    oh.major_linker_version = r.read<std::uint8_t>(opt + 2, "optional header");
    oh.minor_linker_version = r.read<std::uint8_t>(opt + 3, "optional header");
    oh.sizeof_code = r.read<std::uint32_t>(opt + 4, "optional header");
    oh.entry_point_rva = r.read<std::uint32_t>(opt + 16, "optional header");
    oh.image_base = wide ? r.read<std::uint64_t>(opt + 24, "optional header")
                         : r.read<std::uint32_t>(opt + 28, "optional header");
    oh.major_os_version = r.read<std::uint16_t>(opt + 40, "optional header");
    oh.minor_os_version = r.read<std::uint16_t>(opt + 42, "optional header");
    oh.major_image_version = r.read<std::uint16_t>(opt + 44, "optional header");
    oh.minor_image_version = r.read<std::uint16_t>(opt + 46, "optional header");
    oh.major_subsystem_version = r.read<std::uint16_t>(opt + 48, "optional header");
    oh.minor_subsystem_version = r.read<std::uint16_t>(opt + 50, "optional header");
    oh.sizeof_image = r.read<std::uint32_t>(opt + 56, "optional header");
    oh.sizeof_headers = r.read<std::uint32_t>(opt + 60, "optional header");
    oh.subsystem = r.read<std::uint16_t>(opt + 68, "optional header");
    oh.dll_characteristics = r.read<std::uint16_t>(opt + 70, "optional header");
    oh.sizeof_heap_commit = wide ? r.read<std::uint64_t>(opt + 96, "optional header")
                                 : r.read<std::uint32_t>(opt + 84, "optional header");
    oh.num_rva_and_sizes = r.read<std::uint32_t>(opt + (wide ? 108 : 92), "optional header");

    // Directories beyond the declared count, or past the end of the file, stay zero.
    const std::size_t dirs = opt + (wide ? 112 : 96);
    const std::size_t declared = std::min<std::size_t>(oh.num_rva_and_sizes, pe::kNumDataDirectories);
    for (std::size_t i = 0; i < declared; ++i) {
        auto va = r.try_read<std::uint32_t>(dirs + 8 * i);
        auto sz = r.try_read<std::uint32_t>(dirs + 8 * i + 4);
        if (!va || !sz) break;
        pe.data_directories[i] = {*va, *sz};
    }

    const std::size_t table = opt + ch.sizeof_optional_header;
    const std::size_t table_len = static_cast<std::size_t>(ch.num_sections) * 40;
    if (!r.fits(table, table_len))
        throw MalformedPE(std::min(table, bytes.size()), "section table extends past end of file");

    pe.sections.reserve(ch.num_sections);
    bool entry_claimed = false;
    for (std::size_t i = 0; i < ch.num_sections; ++i) {
        const std::size_t at = table + 40 * i;
        Section s;
        for (std::size_t k = 0; k < 8 && bytes[at + k] != 0; ++k) s.name.push_back(static_cast<char>(bytes[at + k]));
        s.virtual_size = *r.try_read<std::uint32_t>(at + 8);
        s.virtual_address = *r.try_read<std::uint32_t>(at + 12);
        s.raw_size = *r.try_read<std::uint32_t>(at + 16);
        s.raw_offset = *r.try_read<std::uint32_t>(at + 20);
        s.characteristics = *r.try_read<std::uint32_t>(at + 36);
        s.entropy = section_entropy(r.slice(s.raw_offset, s.raw_size));
        const std::uint64_t span = std::max(s.virtual_size, s.raw_size);
        const std::uint64_t ep = oh.entry_point_rva;
        if (!entry_claimed && ep >= s.virtual_address && ep < s.virtual_address + span) {
            s.contains_entry_point = true;
            entry_claimed = true;
        }
        pe.sections.push_back(std::move(s));
    }

    pe.imports = detail::parse_imports(pe, r);
    pe.exports = detail::parse_exports(pe, r);

    const auto& dd = pe.data_directories;
    pe.has_debug = dd[pe::kDebugDir].present();
    pe.has_relocations = dd[pe::kBaseRelocDir].present();
    pe.has_resources = dd[pe::kResourceDir].present();
    pe.has_signature = dd[pe::kSecurityDir].present();
    pe.has_tls = dd[pe::kTlsDir].present();
    return pe;
}

}  // namespace pemal
