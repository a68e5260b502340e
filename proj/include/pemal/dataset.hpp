#pragma once

// Labeled feature matrices: JSONL ingestion, label filtering, subsampling
// and the PEFV binary cache.
//
// PEFV layout (all little-endian):
//   "PEFV" | u32 version | u64 rows | u32 cols
//   | i8 labels[rows] | u8 splits[rows] | f32 values[rows*cols] (row-major)
//   | u32 CRC32 of everything before it
//
// Row ids are not part of the cache; reading assigns "0", "1", ...

#include <pemal/binary_io.hpp>
#include <pemal/error.hpp>
#include <pemal/features.hpp>
#include <pemal/parallel.hpp>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <string>
#include <vector>

namespace pemal {

enum class Split : std::uint8_t { Train = 0, Test = 1 };

inline constexpr std::int8_t kUnlabeled = -1;
inline constexpr std::int8_t kBenign = 0;
inline constexpr std::int8_t kMalicious = 1;

using FeatureMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct LabeledDataset {
    FeatureMatrix X = FeatureMatrix(0, kFeatureDim);
    std::vector<std::int8_t> y;
    std::vector<Split> split;
    std::vector<std::string> ids;

    std::size_t rows() const noexcept { return y.size(); }

    void validate() const {
        const auto n = static_cast<std::size_t>(X.rows());
        if (n != y.size() || n != split.size() || n != ids.size())
            throw DimensionError("dataset columns disagree on row count");
        if (X.cols() != static_cast<Eigen::Index>(kFeatureDim))
            throw DimensionError("dataset must have " + std::to_string(kFeatureDim) + " columns, got " +
                                 std::to_string(X.cols()));
        for (auto label : y)
            if (label < -1 || label > 1) throw DimensionError("label out of range: " + std::to_string(label));
    }

    /// Rows at `indices`, in the given order.
    LabeledDataset select(const std::vector<std::size_t>& indices) const {
        LabeledDataset out;
        out.X.resize(static_cast<Eigen::Index>(indices.size()), X.cols());
        for (std::size_t r = 0; r < indices.size(); ++r) {
            out.X.row(static_cast<Eigen::Index>(r)) = X.row(static_cast<Eigen::Index>(indices[r]));
            out.y.push_back(y[indices[r]]);
            out.split.push_back(split[indices[r]]);
            out.ids.push_back(ids[indices[r]]);
        }
        return out;
    }

    std::vector<std::size_t> indices_of(Split s) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < split.size(); ++i)
            if (split[i] == s) out.push_back(i);
        return out;
    }

    LabeledDataset subset(Split s) const { return select(indices_of(s)); }

    bool operator==(const LabeledDataset& o) const {
        return X.rows() == o.X.rows() && X.cols() == o.X.cols() &&
               std::equal(X.data(), X.data() + X.size(), o.X.data(),
                          [](float a, float b) { return std::bit_cast<std::uint32_t>(a) == std::bit_cast<std::uint32_t>(b); }) &&
               y == o.y && split == o.split && ids == o.ids;
    }
};

inline LabeledDataset filter_labeled(const LabeledDataset& ds) {
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < ds.rows(); ++i)
        if (ds.y[i] != kUnlabeled) keep.push_back(i);
    return ds.select(keep);
}

/// Uniform sample of `take` rows without replacement; survivors keep file order.
inline LabeledDataset subsample(const LabeledDataset& ds, std::size_t take, std::uint64_t seed) {
    if (take >= ds.rows()) return ds;
    std::vector<std::size_t> idx(ds.rows());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < take; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng() % (idx.size() - i));
        std::swap(idx[i], idx[j]);
    }
    idx.resize(take);
    std::sort(idx.begin(), idx.end());
    return ds.select(idx);
}

// ---------------------------------------------------------------------------
// EMBER-style raw JSON <-> RawFeatures.

namespace detail {
using nlohmann::json;

inline double num(const json& j, const char* key) {
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) return 0.0;
    if (it->is_boolean()) return it->get<bool>() ? 1.0 : 0.0;
    if (!it->is_number()) throw std::invalid_argument(std::string("field '") + key + "' is not a number");
    return it->get<double>();
}

inline std::vector<std::string> strings(const json& j, const char* key) {
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) return {};
    return it->get<std::vector<std::string>>();
}

inline std::string str(const json& j, const char* key) {
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) return {};
    return it->get<std::string>();
}

template <std::size_t N>
void fill_array(const json& j, const char* key, std::array<double, N>& out) {
    auto it = j.find(key);
    if (it == j.end()) return;
    if (!it->is_array() || it->size() != N)
        throw std::invalid_argument(std::string("field '") + key + "' must hold " + std::to_string(N) + " numbers");
    for (std::size_t i = 0; i < N; ++i) out[i] = (*it)[i].get<double>();
}
}  // namespace detail

inline RawFeatures raw_from_json(const nlohmann::json& j) {
    using detail::num;
    RawFeatures raw;
    detail::fill_array(j, "histogram", raw.histogram);
    detail::fill_array(j, "byteentropy", raw.byteentropy);
    if (auto it = j.find("strings"); it != j.end()) {
        const auto& s = *it;
        raw.strings.num_strings = num(s, "numstrings");
        raw.strings.avg_length = num(s, "avlength");
        detail::fill_array(s, "printabledist", raw.strings.printable_counts);
        raw.strings.printables = num(s, "printables");
        raw.strings.entropy = num(s, "entropy");
        raw.strings.paths = num(s, "paths");
        raw.strings.urls = num(s, "urls");
        raw.strings.registry = num(s, "registry");
        raw.strings.mz = num(s, "MZ");
    }
    for (const char* key : {"general", "header", "section", "imports", "exports", "datadirectories"})
        if (j.contains(key)) raw.parsed = true;
    if (!raw.parsed) return raw;

    if (auto it = j.find("general"); it != j.end()) {
        const auto& g = *it;
        raw.general = {num(g, "size"),           num(g, "vsize"),         num(g, "has_debug"), num(g, "exports"),
                       num(g, "imports"),        num(g, "has_relocations"), num(g, "has_resources"),
                       num(g, "has_signature"),  num(g, "has_tls"),       num(g, "symbols")};
    }
    if (auto it = j.find("header"); it != j.end()) {
        auto& h = raw.header;
        const auto coff = it->value("coff", nlohmann::json::object());
        const auto opt = it->value("optional", nlohmann::json::object());
        h.timestamp = num(coff, "timestamp");
        h.machine = detail::str(coff, "machine");
        h.characteristics = detail::strings(coff, "characteristics");
        h.subsystem = detail::str(opt, "subsystem");
        h.dll_characteristics = detail::strings(opt, "dll_characteristics");
        h.magic = detail::str(opt, "magic");
        h.major_image_version = num(opt, "major_image_version");
        h.minor_image_version = num(opt, "minor_image_version");
        h.major_linker_version = num(opt, "major_linker_version");
        h.minor_linker_version = num(opt, "minor_linker_version");
        h.major_os_version = num(opt, "major_operating_system_version");
        h.minor_os_version = num(opt, "minor_operating_system_version");
        h.major_subsystem_version = num(opt, "major_subsystem_version");
        h.minor_subsystem_version = num(opt, "minor_subsystem_version");
        h.sizeof_code = num(opt, "sizeof_code");
        h.sizeof_headers = num(opt, "sizeof_headers");
        h.sizeof_heap_commit = num(opt, "sizeof_heap_commit");
    }
    if (auto it = j.find("section"); it != j.end()) {
        raw.section.entry = detail::str(*it, "entry");
        for (const auto& s : it->value("sections", nlohmann::json::array()))
            raw.section.sections.push_back(
                {detail::str(s, "name"), num(s, "size"), num(s, "entropy"), num(s, "vsize"), detail::strings(s, "props")});
    }
    if (auto it = j.find("imports"); it != j.end() && it->is_object())
        for (const auto& [lib, fns] : it->items()) raw.imports.push_back({lib, fns.get<std::vector<std::string>>()});
    if (auto it = j.find("exports"); it != j.end() && it->is_array())
        raw.exports = it->get<std::vector<std::string>>();
    if (auto it = j.find("datadirectories"); it != j.end() && it->is_array())
        for (std::size_t i = 0; i < std::min(it->size(), kDataDirectoriesUsed); ++i)
            raw.datadirectories[i] = {static_cast<std::uint32_t>(num((*it)[i], "virtual_address")),
                                      static_cast<std::uint32_t>(num((*it)[i], "size"))};
    return raw;
}

inline nlohmann::json raw_to_json(const RawFeatures& raw) {
    using nlohmann::json;
    json j;
    j["histogram"] = raw.histogram;
    j["byteentropy"] = raw.byteentropy;
    const auto& s = raw.strings;
    j["strings"] = {{"numstrings", s.num_strings}, {"avlength", s.avg_length}, {"printabledist", s.printable_counts},
                    {"printables", s.printables},  {"entropy", s.entropy},     {"paths", s.paths},
                    {"urls", s.urls},              {"registry", s.registry},   {"MZ", s.mz}};
    if (!raw.parsed) return j;
    const auto& g = raw.general;
    j["general"] = {{"size", g.size},
                    {"vsize", g.vsize},
                    {"has_debug", g.has_debug},
                    {"exports", g.exports},
                    {"imports", g.imports},
                    {"has_relocations", g.has_relocations},
                    {"has_resources", g.has_resources},
                    {"has_signature", g.has_signature},
                    {"has_tls", g.has_tls},
                    {"symbols", g.symbols}};
    const auto& h = raw.header;
    j["header"] = {{"coff", {{"timestamp", h.timestamp}, {"machine", h.machine}, {"characteristics", h.characteristics}}},
                   {"optional",
                    {{"subsystem", h.subsystem},
                     {"dll_characteristics", h.dll_characteristics},
                     {"magic", h.magic},
                     {"major_image_version", h.major_image_version},
                     {"minor_image_version", h.minor_image_version},
                     {"major_linker_version", h.major_linker_version},
                     {"minor_linker_version", h.minor_linker_version},
                     {"major_operating_system_version", h.major_os_version},
                     {"minor_operating_system_version", h.minor_os_version},
                     {"major_subsystem_version", h.major_subsystem_version},
                     {"minor_subsystem_version", h.minor_subsystem_version},
                     {"sizeof_code", h.sizeof_code},
                     {"sizeof_headers", h.sizeof_headers},
                     {"sizeof_heap_commit", h.sizeof_heap_commit}}}};
    json sections = json::array();
    for (const auto& x : raw.section.sections)
        sections.push_back({{"name", x.name}, {"size", x.size}, {"entropy", x.entropy}, {"vsize", x.vsize}, {"props", x.props}});
    j["section"] = {{"entry", raw.section.entry}, {"sections", sections}};
    json imports = json::object();
    for (const auto& lib : raw.imports) {
        auto& slot = imports[lib.library_name];
        if (slot.is_null()) slot = json::array();
        for (const auto& fn : lib.function_names) slot.push_back(fn);
    }
    j["imports"] = imports;
    j["exports"] = raw.exports;
    static constexpr std::array<const char*, kDataDirectoriesUsed> kDirNames{
        "EXPORT_TABLE",     "IMPORT_TABLE",  "RESOURCE_TABLE", "EXCEPTION_TABLE",   "CERTIFICATE_TABLE",
        "BASE_RELOCATION_TABLE", "DEBUG",    "ARCHITECTURE",   "GLOBAL_PTR",        "TLS_TABLE",
        "LOAD_CONFIG_TABLE", "BOUND_IMPORT", "IAT",            "DELAY_IMPORT_DESCRIPTOR", "CLR_RUNTIME_HEADER"};
    json dirs = json::array();
    for (std::size_t i = 0; i < kDataDirectoriesUsed; ++i)
        dirs.push_back({{"name", kDirNames[i]},
                        {"size", raw.datadirectories[i].size},
                        {"virtual_address", raw.datadirectories[i].virtual_address}});
    j["datadirectories"] = dirs;
    return j;
}

// ---------------------------------------------------------------------------
// JSONL loading.

enum class JsonlMode { RawFeatures, Prevectorized };

namespace detail {
struct ParsedLine {
    std::vector<float> values;
    std::int8_t label = kUnlabeled;
    Split split = Split::Train;
    std::string id;
};

inline ParsedLine parse_line(const std::string& text, std::size_t line_no, JsonlMode mode, Split default_split) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(line_no, e.what());
    }
    if (!j.is_object()) throw ParseError(line_no, "expected a JSON object");
    ParsedLine out;
    auto label = j.find("label");
    if (label == j.end() || !label->is_number_integer()) throw ParseError(line_no, "missing integer 'label'");
    const auto l = label->get<std::int64_t>();
    if (l < -1 || l > 1) throw ParseError(line_no, "label must be -1, 0 or 1");
    out.label = static_cast<std::int8_t>(l);
    out.split = default_split;
    if (auto s = j.find("split"); s != j.end()) {
        if (*s == "train") out.split = Split::Train;
        else if (*s == "test") out.split = Split::Test;
        else throw ParseError(line_no, "split must be \"train\" or \"test\"");
    }
    if (auto id = j.find("sha256"); id != j.end() && id->is_string()) out.id = id->get<std::string>();
    else if (auto id2 = j.find("id"); id2 != j.end() && id2->is_string()) out.id = id2->get<std::string>();
    else out.id = std::to_string(line_no);

    if (mode == JsonlMode::Prevectorized) {
        auto f = j.find("features");
        if (f == j.end() || !f->is_array()) throw ParseError(line_no, "missing 'features' array");
        if (f->size() != kFeatureDim)
            throw DimensionError("line " + std::to_string(line_no) + ": expected " + std::to_string(kFeatureDim) +
                                 " features, got " + std::to_string(f->size()));
        out.values.reserve(kFeatureDim);
        for (const auto& v : *f) {
            if (!v.is_number()) throw ParseError(line_no, "non-numeric feature value");
            out.values.push_back(v.get<float>());
        }
    } else {
        try {
            const auto fv = vectorize_raw(raw_from_json(j));
            out.values.assign(fv.values.begin(), fv.values.end());
        } catch (const std::exception& e) {
            throw ParseError(line_no, e.what());
        }
    }
    return out;
}
}  // namespace detail

inline LabeledDataset load_jsonl(std::istream& in, JsonlMode mode, Split default_split = Split::Train,
                                 std::size_t threads = 1) {
    std::vector<std::string> lines;
    std::vector<std::size_t> numbers;
    std::string line;
    for (std::size_t n = 1; std::getline(in, line); ++n) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        lines.push_back(std::move(line));
        numbers.push_back(n);
    }
    auto parsed = parallel_map(lines.size(), threads, [&](std::size_t i) {
        return detail::parse_line(lines[i], numbers[i], mode, default_split);
    });
    LabeledDataset ds;
    ds.X.resize(static_cast<Eigen::Index>(parsed.size()), kFeatureDim);
    for (std::size_t r = 0; r < parsed.size(); ++r) {
        ds.X.row(static_cast<Eigen::Index>(r)) =
            Eigen::Map<const Eigen::RowVectorXf>(parsed[r].values.data(), kFeatureDim);
        ds.y.push_back(parsed[r].label);
        ds.split.push_back(parsed[r].split);
        ds.ids.push_back(std::move(parsed[r].id));
    }
    return ds;
}

inline LabeledDataset load_jsonl(const std::filesystem::path& path, JsonlMode mode, Split default_split = Split::Train,
                                 std::size_t threads = 1) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    return load_jsonl(in, mode, default_split, threads);
}

// ---------------------------------------------------------------------------
// PEFV cache.

inline constexpr std::uint32_t kCacheVersion = 1;

inline std::vector<std::uint8_t> encode_cache(const LabeledDataset& ds) {
    ds.validate();
    binio::Writer w;
    w.put_bytes(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>("PEFV"), 4));
    w.put<std::uint32_t>(kCacheVersion);
    w.put<std::uint64_t>(ds.rows());
    w.put<std::uint32_t>(static_cast<std::uint32_t>(ds.X.cols()));
    for (auto l : ds.y) w.put<std::int8_t>(l);
    for (auto s : ds.split) w.put<std::uint8_t>(static_cast<std::uint8_t>(s));
    for (Eigen::Index i = 0; i < ds.X.size(); ++i) w.put<float>(ds.X.data()[i]);
    w.seal();
    return w.bytes();
}

inline LabeledDataset decode_cache(std::span<const std::uint8_t> data) {
    if (data.size() < 4 || !std::equal(data.begin(), data.begin() + 4, "PEFV")) throw CorruptCache("bad magic");
    binio::Reader<CorruptCache> r(binio::verify_sealed<CorruptCache>(data));
    r.get_bytes(4);
    if (r.get<std::uint32_t>() != kCacheVersion) throw CorruptCache("unsupported cache version");
    const auto rows = r.get<std::uint64_t>();
    const auto cols = r.get<std::uint32_t>();
    if (cols != kFeatureDim) throw CorruptCache("column count " + std::to_string(cols) + " is not " + std::to_string(kFeatureDim));
    const std::uint64_t per_row = 2 + 4ULL * cols;
    if (rows > r.remaining() / per_row || r.remaining() != rows * per_row)
        throw CorruptCache("payload size does not match header");
    LabeledDataset ds;
    for (std::uint64_t i = 0; i < rows; ++i) {
        const auto l = r.get<std::int8_t>();
        if (l < -1 || l > 1) throw CorruptCache("label out of range");
        ds.y.push_back(l);
    }
    for (std::uint64_t i = 0; i < rows; ++i) {
        const auto s = r.get<std::uint8_t>();
        if (s > 1) throw CorruptCache("split tag out of range");
        ds.split.push_back(static_cast<Split>(s));
        ds.ids.push_back(std::to_string(i));
    }
    ds.X.resize(static_cast<Eigen::Index>(rows), cols);
    for (Eigen::Index i = 0; i < ds.X.size(); ++i) ds.X.data()[i] = r.get<float>();
    return ds;
}

inline void write_cache(const LabeledDataset& ds, const std::filesystem::path& path) {
    const auto bytes = encode_cache(ds);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + path.string());
}

inline LabeledDataset read_cache(const std::filesystem::path& path) {
    const auto bytes = binio::read_file(path);
    return decode_cache(bytes);
}

/// Opens either a PEFV cache or a prevectorized JSONL file, sniffing the magic.
inline LabeledDataset load_dataset(const std::filesystem::path& path, Split default_split = Split::Train,
                                   std::size_t threads = 1) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    char magic[4] = {};
    in.read(magic, 4);
    if (in.gcount() == 4 && std::equal(magic, magic + 4, "PEFV")) return read_cache(path);
    return load_jsonl(path, JsonlMode::Prevectorized, default_split, threads);
}

}  // namespace pemal
