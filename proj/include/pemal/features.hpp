#pragma once

// The nine static feature sets and their fixed 2381-wide concatenation.
//
// Extraction is split in two stages. `extract_raw` turns file bytes into a
// RawFeatures record whose fields mirror EMBER's raw JSON (counts, names,
// per-section records); `vectorize_raw` turns that record into numbers.
// Raw-mode JSONL input goes through the second stage only, so both paths
// agree by construction.

#include <pemal/error.hpp>
#include <pemal/feature_hash.hpp>
#include <pemal/pe_parser.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace pemal {

enum class FeatureSet : std::uint8_t { BH, BE, ST, GE, HE, SE, IM, EX, DD };

inline constexpr std::size_t kNumFeatureSets = 9;

struct FeatureSetInfo {
    FeatureSet set;
    std::string_view abbr;
    std::size_t size;
    std::size_t offset;
};

namespace detail {
inline constexpr std::array<std::pair<std::string_view, std::size_t>, kNumFeatureSets> kSetSizes{{
    {"BH", 256}, {"BE", 256}, {"ST", 104}, {"GE", 10}, {"HE", 62},
    {"SE", 255}, {"IM", 1280}, {"EX", 128}, {"DD", 30},
}};

constexpr std::array<FeatureSetInfo, kNumFeatureSets> make_layout() {
    std::array<FeatureSetInfo, kNumFeatureSets> out{};
    std::size_t offset = 0;
    for (std::size_t i = 0; i < kNumFeatureSets; ++i) {
        out[i] = {static_cast<FeatureSet>(i), kSetSizes[i].first, kSetSizes[i].second, offset};
        offset += kSetSizes[i].second;
    }
    return out;
}
}  // namespace detail

/// Canonical layout, in order.
inline constexpr std::array<FeatureSetInfo, kNumFeatureSets> kLayout = detail::make_layout();
inline constexpr std::size_t kFeatureDim = kLayout.back().offset + kLayout.back().size;
static_assert(kFeatureDim == 2381);

constexpr const FeatureSetInfo& info(FeatureSet s) { return kLayout[static_cast<std::size_t>(s)]; }

struct FeatureVector {
    std::vector<double> values = std::vector<double>(kFeatureDim, 0.0);

    std::span<double> sub(FeatureSet s) { return std::span(values).subspan(info(s).offset, info(s).size); }
    std::span<const double> sub(FeatureSet s) const {
        return std::span(values).subspan(info(s).offset, info(s).size);
    }
};

// Extractor geometry.
inline constexpr std::size_t kEntropyWindow = 2048;
inline constexpr std::size_t kEntropyStep = 1024;
inline constexpr std::size_t kEntropyBins = 16;
inline constexpr std::size_t kMinStringLength = 5;
inline constexpr std::size_t kPrintableBins = 96;
inline constexpr std::size_t kHeaderHashDim = 10;
inline constexpr std::size_t kSectionHashDim = 50;
inline constexpr std::size_t kLibraryHashDim = 256;
inline constexpr std::size_t kFunctionHashDim = 1024;
inline constexpr std::size_t kExportHashDim = 128;
inline constexpr std::size_t kDataDirectoriesUsed = 15;

// ---------------------------------------------------------------------------
// Symbolic names for header enums and flags. These are the strings that get
// hashed, so they are part of the vector format.

namespace names {

struct Flag {
    std::uint32_t bit;
    std::string_view name;
};

inline constexpr std::array<Flag, 15> kCoffCharacteristics{{
    {0x0001, "RELOCS_STRIPPED"},       {0x0002, "EXECUTABLE_IMAGE"},     {0x0004, "LINE_NUMS_STRIPPED"},
    {0x0008, "LOCAL_SYMS_STRIPPED"},   {0x0010, "AGGRESSIVE_WS_TRIM"},   {0x0020, "LARGE_ADDRESS_AWARE"},
    {0x0080, "BYTES_REVERSED_LO"},     {0x0100, "CHARA_32BIT_MACHINE"},  {0x0200, "DEBUG_STRIPPED"},
    {0x0400, "REMOVABLE_RUN_FROM_SWAP"}, {0x0800, "NET_RUN_FROM_SWAP"},  {0x1000, "SYSTEM"},
    {0x2000, "DLL"},                   {0x4000, "UP_SYSTEM_ONLY"},       {0x8000, "BYTES_REVERSED_HI"},
}};

inline constexpr std::array<Flag, 11> kDllCharacteristics{{
    {0x0020, "HIGH_ENTROPY_VA"}, {0x0040, "DYNAMIC_BASE"}, {0x0080, "FORCE_INTEGRITY"},
    {0x0100, "NX_COMPAT"},       {0x0200, "NO_ISOLATION"}, {0x0400, "NO_SEH"},
    {0x0800, "NO_BIND"},         {0x1000, "APPCONTAINER"}, {0x2000, "WDM_DRIVER"},
    {0x4000, "GUARD_CF"},        {0x8000, "TERMINAL_SERVER_AWARE"},
}};

inline constexpr std::array<Flag, 14> kSectionCharacteristics{{
    {0x00000020, "CNT_CODE"},         {0x00000040, "CNT_INITIALIZED_DATA"}, {0x00000080, "CNT_UNINITIALIZED_DATA"},
    {0x00000200, "LNK_INFO"},         {0x00000800, "LNK_REMOVE"},           {0x00001000, "LNK_COMDAT"},
    {0x00008000, "GPREL"},            {0x02000000, "MEM_DISCARDABLE"},      {0x04000000, "MEM_NOT_CACHED"},
    {0x08000000, "MEM_NOT_PAGED"},    {0x10000000, "MEM_SHARED"},           {0x20000000, "MEM_EXECUTE"},
    {0x40000000, "MEM_READ"},         {0x80000000, "MEM_WRITE"},
}};

inline std::vector<std::string> flag_names(std::uint32_t value, std::span<const Flag> table) {
    std::vector<std::string> out;
    for (const auto& f : table)
        if (value & f.bit) out.emplace_back(f.name);
    return out;
}

inline std::string machine(std::uint16_t code) {
    switch (code) {
        case 0x014c: return "I386";
        case 0x8664: return "AMD64";
        case 0x01c0: return "ARM";
        case 0x01c4: return "ARMNT";
        case 0xaa64: return "ARM64";
        case 0x0200: return "IA64";
        case 0x0ebc: return "EBC";
        case 0x0166: return "R4000";
        case 0x01a2: return "SH3";
        case 0x01a6: return "SH4";
        case 0x01c2: return "THUMB";
        case 0x01f0: return "POWERPC";
        default: return "UNKNOWN";
    }
}

inline std::string subsystem(std::uint16_t code) {
    switch (code) {
        case 1: return "NATIVE";
        case 2: return "WINDOWS_GUI";
        case 3: return "WINDOWS_CUI";
        case 5: return "OS2_CUI";
        case 7: return "POSIX_CUI";
        case 9: return "WINDOWS_CE_GUI";
        case 10: return "EFI_APPLICATION";
        case 11: return "EFI_BOOT_SERVICE_DRIVER";
        case 12: return "EFI_RUNTIME_DRIVER";
        case 13: return "EFI_ROM";
        case 14: return "XBOX";
        case 16: return "WINDOWS_BOOT_APPLICATION";
        default: return "UNKNOWN";
    }
}

inline std::string magic(std::uint16_t code) {
    if (code == pe::kMagicPE32) return "PE32";
    if (code == pe::kMagicPE32Plus) return "PE32_PLUS";
    return "UNKNOWN";
}

}  // namespace names

// ---------------------------------------------------------------------------
// Raw (pre-vectorization) records.

struct StringSummary {
    double num_strings = 0;
    double avg_length = 0;
    std::array<double, kPrintableBins> printable_counts{};
    double printables = 0;
    double entropy = 0;
    double paths = 0;
    double urls = 0;
    double registry = 0;
    double mz = 0;
};

struct GeneralSummary {
    double size = 0;
    double vsize = 0;
    double has_debug = 0;
    double exports = 0;
    double imports = 0;
    double has_relocations = 0;
    double has_resources = 0;
    double has_signature = 0;
    double has_tls = 0;
    double symbols = 0;
};

struct HeaderSummary {
    double timestamp = 0;
    std::string machine;
    std::vector<std::string> characteristics;
    std::string subsystem;
    std::vector<std::string> dll_characteristics;
    std::string magic;
    double major_image_version = 0, minor_image_version = 0;
    double major_linker_version = 0, minor_linker_version = 0;
    double major_os_version = 0, minor_os_version = 0;
    double major_subsystem_version = 0, minor_subsystem_version = 0;
    double sizeof_code = 0, sizeof_headers = 0, sizeof_heap_commit = 0;
};

struct SectionRecord {
    std::string name;
    double size = 0;  // raw size
    double entropy = 0;
    double vsize = 0;
    std::vector<std::string> props;
};

struct SectionSummary {
    std::string entry;
    std::vector<SectionRecord> sections;
};

struct RawFeatures {
    std::array<double, 256> histogram{};
    std::array<double, 256> byteentropy{};
    StringSummary strings;
    // Header-derived part; absent when the file did not parse.
    bool parsed = false;
    GeneralSummary general;
    HeaderSummary header;
    SectionSummary section;
    std::vector<ImportedLibrary> imports;
    std::vector<std::string> exports;
    std::array<DataDirectory, kDataDirectoriesUsed> datadirectories{};
};

// ---------------------------------------------------------------------------
// Byte-level summaries.

inline std::array<double, 256> byte_counts(ByteSpan bytes) {
    std::array<double, 256> counts{};
    for (auto b : bytes) counts[b] += 1.0;
    return counts;
}

inline std::array<double, 256> byte_entropy_counts(ByteSpan bytes) {
    std::array<double, 256> grid{};
    if (bytes.empty()) return grid;
    auto add_window = [&](ByteSpan w) {
        std::array<std::size_t, 256> counts{};
        for (auto b : w) ++counts[b];
        const double n = static_cast<double>(w.size());
        double h = 0.0;
        for (auto c : counts) {
            if (c == 0) continue;
            const double p = static_cast<double>(c) / n;
            h -= p * std::log2(p);
        }
        const auto row = std::min<std::size_t>(kEntropyBins - 1, static_cast<std::size_t>(std::max(0.0, h) * 2.0));
        for (std::size_t v = 0; v < 256; ++v)
            if (counts[v] != 0) grid[row * kEntropyBins + (v >> 4)] += static_cast<double>(counts[v]);
    };
    if (bytes.size() < kEntropyWindow) {
        add_window(bytes);
        return grid;
    }
    for (std::size_t start = 0; start + kEntropyWindow <= bytes.size(); start += kEntropyStep)
        add_window(bytes.subspan(start, kEntropyWindow));
    return grid;
}

namespace detail {
inline bool starts_with_ci(ByteSpan bytes, std::size_t at, std::string_view lower) {
    if (at + lower.size() > bytes.size()) return false;
    for (std::size_t i = 0; i < lower.size(); ++i) {
        auto c = bytes[at + i];
        if (c >= 'A' && c <= 'Z') c = static_cast<std::uint8_t>(c - 'A' + 'a');
        if (c != static_cast<std::uint8_t>(lower[i])) return false;
    }
    return true;
}

inline bool starts_with(ByteSpan bytes, std::size_t at, std::string_view s) {
    if (at + s.size() > bytes.size()) return false;
    return std::equal(s.begin(), s.end(), bytes.begin() + static_cast<std::ptrdiff_t>(at),
                      [](char a, std::uint8_t b) { return static_cast<std::uint8_t>(a) == b; });
}

inline double distribution_entropy(std::span<const double> counts, double total) {
    if (total <= 0) return 0.0;
    double h = 0.0;
    for (auto c : counts) {
        if (c <= 0) continue;
        const double p = c / total;
        h -= p * std::log2(p);
    }
    return h;
}
}  // namespace detail

inline StringSummary summarize_strings(ByteSpan bytes) {
    StringSummary s;
    auto printable = [](std::uint8_t b) { return b >= 0x20 && b < 0x7f; };
    std::size_t i = 0;
    while (i < bytes.size()) {
        if (!printable(bytes[i])) {
            ++i;
            continue;
        }
        std::size_t j = i;
        while (j < bytes.size() && printable(bytes[j])) ++j;
        if (j - i >= kMinStringLength) {
            s.num_strings += 1;
            s.printables += static_cast<double>(j - i);
            for (std::size_t k = i; k < j; ++k) s.printable_counts[bytes[k] - 0x20] += 1;
        }
        i = j;
    }
    if (s.num_strings > 0) s.avg_length = s.printables / s.num_strings;
    s.entropy = detail::distribution_entropy(s.printable_counts, s.printables);

    for (std::size_t k = 0; k < bytes.size(); ++k) {
        if (detail::starts_with_ci(bytes, k, "c:\\")) s.paths += 1;
        if (detail::starts_with_ci(bytes, k, "http://") || detail::starts_with_ci(bytes, k, "https://")) s.urls += 1;
        if (detail::starts_with(bytes, k, "HKEY_")) s.registry += 1;
        if (detail::starts_with(bytes, k, "MZ")) {
            s.mz += 1;
            ++k;  // non-overlapping
        }
    }
    return s;
}

// ---------------------------------------------------------------------------
// Header-level summaries.

inline GeneralSummary summarize_general(const ParsedPE& pe, std::size_t file_size) {
    GeneralSummary g;
    g.size = static_cast<double>(file_size);
    for (const auto& s : pe.sections) g.vsize += s.virtual_size;
    g.has_debug = pe.has_debug;
    g.exports = static_cast<double>(pe.exports.size());
    for (const auto& lib : pe.imports) g.imports += static_cast<double>(lib.function_names.size());
    g.has_relocations = pe.has_relocations;
    g.has_resources = pe.has_resources;
    g.has_signature = pe.has_signature;
    g.has_tls = pe.has_tls;
    g.symbols = pe.coff_header.num_symbols;
    return g;
}

inline HeaderSummary summarize_header(const ParsedPE& pe) {
    const auto& c = pe.coff_header;
    const auto& o = pe.optional_header;
    HeaderSummary h;
    h.timestamp = c.timestamp;
    h.machine = names::machine(c.machine);
    h.characteristics = names::flag_names(c.characteristics, names::kCoffCharacteristics);
    h.subsystem = names::subsystem(o.subsystem);
    h.dll_characteristics = names::flag_names(o.dll_characteristics, names::kDllCharacteristics);
    h.magic = names::magic(o.magic);
    h.major_image_version = o.major_image_version;
    h.minor_image_version = o.minor_image_version;
    h.major_linker_version = o.major_linker_version;
    h.minor_linker_version = o.minor_linker_version;
    h.major_os_version = o.major_os_version;
    h.minor_os_version = o.minor_os_version;
    h.major_subsystem_version = o.major_subsystem_version;
    h.minor_subsystem_version = o.minor_subsystem_version;
    h.sizeof_code = o.sizeof_code;
    h.sizeof_headers = o.sizeof_headers;
    h.sizeof_heap_commit = static_cast<double>(o.sizeof_heap_commit);
    return h;
}

inline SectionSummary summarize_sections(const ParsedPE& pe) {
    SectionSummary out;
    for (const auto& s : pe.sections) {
        out.sections.push_back({s.name, static_cast<double>(s.raw_size), s.entropy, static_cast<double>(s.virtual_size),
                                names::flag_names(s.characteristics, names::kSectionCharacteristics)});
        if (s.contains_entry_point) out.entry = s.name;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Record -> numbers.

namespace detail {
inline void normalize_into(std::span<const double> counts, std::span<double> out) {
    double total = 0.0;
    for (auto c : counts) total += c;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = total > 0 ? counts[i] / total : 0.0;
}

inline void copy_into(std::span<double> out, std::size_t& at, std::span<const double> values) {
    std::copy(values.begin(), values.end(), out.begin() + static_cast<std::ptrdiff_t>(at));
    at += values.size();
}

inline bool has_prop(const SectionRecord& s, std::string_view p) {
    return std::find(s.props.begin(), s.props.end(), p) != s.props.end();
}
}  // namespace detail

inline std::vector<double> vectorize_strings(const StringSummary& s) {
    std::vector<double> out;
    out.reserve(info(FeatureSet::ST).size);
    out.push_back(s.num_strings);
    out.push_back(s.avg_length);
    std::array<double, kPrintableBins> dist{};
    detail::normalize_into(s.printable_counts, dist);
    out.insert(out.end(), dist.begin(), dist.end());
    out.insert(out.end(), {s.printables, s.entropy, s.paths, s.urls, s.registry, s.mz});
    return out;
}

inline std::vector<double> vectorize_general(const GeneralSummary& g) {
    return {g.size,    g.vsize,           g.has_debug,     g.exports,       g.imports,
            g.has_relocations, g.has_resources, g.has_signature, g.has_tls, g.symbols};
}

inline std::vector<double> vectorize_header(const HeaderSummary& h) {
    std::vector<double> out(info(FeatureSet::HE).size, 0.0);
    std::size_t at = 0;
    out[at++] = h.timestamp;
    auto one = [](const std::string& s) { return std::vector<std::string>{s}; };
    detail::copy_into(out, at, hash_tokens(one(h.machine), kHeaderHashDim));
    detail::copy_into(out, at, hash_tokens(h.characteristics, kHeaderHashDim));
    detail::copy_into(out, at, hash_tokens(one(h.subsystem), kHeaderHashDim));
    detail::copy_into(out, at, hash_tokens(h.dll_characteristics, kHeaderHashDim));
    detail::copy_into(out, at, hash_tokens(one(h.magic), kHeaderHashDim));
    for (double v : {h.major_image_version, h.minor_image_version, h.major_linker_version, h.minor_linker_version,
                     h.major_os_version, h.minor_os_version, h.major_subsystem_version, h.minor_subsystem_version,
                     h.sizeof_code, h.sizeof_headers, h.sizeof_heap_commit})
        out[at++] = v;
    return out;
}

inline std::vector<double> vectorize_sections(const SectionSummary& s) {
    std::vector<double> out(info(FeatureSet::SE).size, 0.0);
    std::size_t at = 0;
    out[at++] = static_cast<double>(s.sections.size());
    out[at++] = static_cast<double>(std::count_if(s.sections.begin(), s.sections.end(), [](auto& x) { return x.size == 0; }));
    out[at++] = static_cast<double>(std::count_if(s.sections.begin(), s.sections.end(), [](auto& x) { return x.name.empty(); }));
    out[at++] = static_cast<double>(std::count_if(s.sections.begin(), s.sections.end(), [](auto& x) {
        return detail::has_prop(x, "MEM_READ") && detail::has_prop(x, "MEM_EXECUTE");
    }));
    out[at++] = static_cast<double>(
        std::count_if(s.sections.begin(), s.sections.end(), [](auto& x) { return detail::has_prop(x, "MEM_WRITE"); }));

    std::vector<std::pair<std::string, double>> raw_sizes, entropies, vsizes;
    for (const auto& x : s.sections) {
        raw_sizes.emplace_back(x.name, x.size);
        entropies.emplace_back(x.name, x.entropy);
        vsizes.emplace_back(x.name, x.vsize);
    }
    detail::copy_into(out, at, hash_pairs(raw_sizes, kSectionHashDim));
    detail::copy_into(out, at, hash_pairs(entropies, kSectionHashDim));
    detail::copy_into(out, at, hash_pairs(vsizes, kSectionHashDim));

    // An unnamed entry section is indistinguishable from "no entry section".
    std::vector<std::string> entry_name, entry_props;
    if (!s.entry.empty()) {
        entry_name.push_back(s.entry);
        auto it = std::find_if(s.sections.begin(), s.sections.end(), [&](auto& x) { return x.name == s.entry; });
        if (it != s.sections.end()) entry_props = it->props;
    }
    detail::copy_into(out, at, hash_tokens(entry_name, kSectionHashDim));
    detail::copy_into(out, at, hash_tokens(entry_props, kSectionHashDim));
    return out;
}

inline std::string ascii_lower(std::string s) {
    for (auto& c : s)
        if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    return s;
}

inline std::vector<double> vectorize_imports(std::span<const ImportedLibrary> imports) {
    std::vector<std::string> libraries, functions;
    for (const auto& lib : imports) {
        auto name = ascii_lower(lib.library_name);
        if (std::find(libraries.begin(), libraries.end(), name) == libraries.end()) libraries.push_back(name);
        for (const auto& fn : lib.function_names) functions.push_back(name + ":" + fn);
    }
    auto out = hash_tokens(libraries, kLibraryHashDim);
    auto fns = hash_tokens(functions, kFunctionHashDim);
    out.insert(out.end(), fns.begin(), fns.end());
    return out;
}

inline std::vector<double> vectorize_exports(std::span<const std::string> exports) {
    return hash_tokens(exports, kExportHashDim);
}

inline std::vector<double> vectorize_data_directories(std::span<const DataDirectory> dirs) {
    std::vector<double> out(info(FeatureSet::DD).size, 0.0);
    for (std::size_t i = 0; i < std::min(dirs.size(), kDataDirectoriesUsed); ++i) {
        out[2 * i] = dirs[i].size;
        out[2 * i + 1] = dirs[i].virtual_address;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Per-set extractors.

inline std::vector<double> byte_histogram(ByteSpan bytes) {
    std::vector<double> out(256);
    detail::normalize_into(byte_counts(bytes), out);
    return out;
}

inline std::vector<double> byte_entropy_histogram(ByteSpan bytes) {
    std::vector<double> out(256);
    detail::normalize_into(byte_entropy_counts(bytes), out);
    return out;
}

inline std::vector<double> string_features(ByteSpan bytes) { return vectorize_strings(summarize_strings(bytes)); }

inline std::vector<double> general_info(const ParsedPE& pe, std::size_t file_size) {
    return vectorize_general(summarize_general(pe, file_size));
}

inline std::vector<double> header_info(const ParsedPE& pe) { return vectorize_header(summarize_header(pe)); }

inline std::vector<double> section_info(const ParsedPE& pe) { return vectorize_sections(summarize_sections(pe)); }

inline std::vector<double> import_info(const ParsedPE& pe) { return vectorize_imports(pe.imports); }

inline std::vector<double> export_info(const ParsedPE& pe) { return vectorize_exports(pe.exports); }

inline std::vector<double> data_directory_info(const ParsedPE& pe) {
    return vectorize_data_directories(pe.data_directories);
}

// ---------------------------------------------------------------------------
// Whole-file.

inline RawFeatures extract_raw(ByteSpan bytes, std::string* diagnostic = nullptr) {
    RawFeatures raw;
    raw.histogram = byte_counts(bytes);
    raw.byteentropy = byte_entropy_counts(bytes);
    raw.strings = summarize_strings(bytes);
    try {
        const ParsedPE pe = parse_pe(bytes);
        raw.parsed = true;
        raw.general = summarize_general(pe, bytes.size());
        raw.header = summarize_header(pe);
        raw.section = summarize_sections(pe);
        raw.imports = pe.imports;
        raw.exports = pe.exports;
        std::copy_n(pe.data_directories.begin(), kDataDirectoriesUsed, raw.datadirectories.begin());
    } catch (const MalformedPE& e) {
        if (diagnostic) *diagnostic = e.what();
    }
    return raw;
}

inline FeatureVector vectorize_raw(const RawFeatures& raw) {
    FeatureVector fv;
    detail::normalize_into(raw.histogram, fv.sub(FeatureSet::BH));
    detail::normalize_into(raw.byteentropy, fv.sub(FeatureSet::BE));
    auto put = [&](FeatureSet s, const std::vector<double>& v) { std::copy(v.begin(), v.end(), fv.sub(s).begin()); };
    put(FeatureSet::ST, vectorize_strings(raw.strings));
    if (!raw.parsed) return fv;
    put(FeatureSet::GE, vectorize_general(raw.general));
    put(FeatureSet::HE, vectorize_header(raw.header));
    put(FeatureSet::SE, vectorize_sections(raw.section));
    put(FeatureSet::IM, vectorize_imports(raw.imports));
    put(FeatureSet::EX, vectorize_exports(raw.exports));
    put(FeatureSet::DD, vectorize_data_directories(raw.datadirectories));
    return fv;
}

/// Total function of the input bytes. When the PE headers do not parse,
/// only BH, BE and ST are populated; `diagnostic` receives the reason.
inline FeatureVector vectorize(ByteSpan bytes, std::string* diagnostic = nullptr) {
    return vectorize_raw(extract_raw(bytes, diagnostic));
}

}  // namespace pemal
