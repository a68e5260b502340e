#pragma once

#include <pemal/error.hpp>
#include <pemal/features.hpp>
#include <pemal/scaling.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <bitset>
#include <cctype>
#include <initializer_list>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace pemal {

/// A subset of the nine feature sets. Always resolves in canonical layout order.
class FeatureMask {
public:
    FeatureMask() = default;
    FeatureMask(std::initializer_list<FeatureSet> sets) {
        for (auto s : sets) include(s);
    }

    static FeatureMask all() {
        FeatureMask m;
        m.bits_.set();
        return m;
    }

    static FeatureMask from_bits(std::uint32_t bits) {
        if (bits >> kNumFeatureSets) throw InvalidArgument("feature mask has bits outside the nine sets");
        FeatureMask m;
        m.bits_ = std::bitset<kNumFeatureSets>(bits);
        return m;
    }

    /// "BH_SE_IM" (any order, case-insensitive) or "ALL".
    static FeatureMask parse(std::string_view text) {
        std::string upper(text);
        for (auto& c : upper) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
        if (upper == "ALL") return all();
        FeatureMask m;
        std::size_t start = 0;
        while (start <= upper.size()) {
            const auto end = std::min(upper.find_first_of("_,+", start), upper.size());
            const auto token = std::string_view(upper).substr(start, end - start);
            bool found = false;
            for (const auto& s : kLayout)
                if (s.abbr == token) {
                    m.include(s.set);
                    found = true;
                }
            if (!found) throw InvalidArgument("unknown feature set '" + std::string(token) + "'");
            start = end + 1;
        }
        return m;
    }

    void include(FeatureSet s) { bits_.set(static_cast<std::size_t>(s)); }
    bool contains(FeatureSet s) const { return bits_.test(static_cast<std::size_t>(s)); }
    bool empty() const { return bits_.none(); }
    std::size_t count() const { return bits_.count(); }
    std::uint32_t bits() const { return static_cast<std::uint32_t>(bits_.to_ulong()); }
    bool is_all() const { return bits_.all(); }

    std::size_t width() const {
        std::size_t w = 0;
        for (const auto& s : kLayout)
            if (contains(s.set)) w += s.size;
        return w;
    }

    /// Column index ranges [begin, end) of the included sets, canonical order.
    std::vector<std::pair<std::size_t, std::size_t>> ranges() const {
        std::vector<std::pair<std::size_t, std::size_t>> out;
        for (const auto& s : kLayout)
            if (contains(s.set)) out.emplace_back(s.offset, s.offset + s.size);
        return out;
    }

    std::string name() const {
        if (is_all()) return "ALL";
        std::string out;
        for (const auto& s : kLayout)
            if (contains(s.set)) {
                if (!out.empty()) out += '_';
                out += s.abbr;
            }
        return out;
    }

    bool operator==(const FeatureMask&) const = default;

private:
    std::bitset<kNumFeatureSets> bits_;
};

/// Columns of the included sets, concatenated in canonical order, upcast to double.
template <typename Derived>
Matrix slice_features(const Eigen::MatrixBase<Derived>& X, const FeatureMask& mask) {
    if (mask.empty()) throw EmptyMask("feature mask selects no feature sets");
    if (X.cols() != static_cast<Eigen::Index>(kFeatureDim))
        throw DimensionError("expected " + std::to_string(kFeatureDim) + " columns, got " + std::to_string(X.cols()));
    Matrix out(X.rows(), static_cast<Eigen::Index>(mask.width()));
    Eigen::Index at = 0;
    for (auto [b, e] : mask.ranges()) {
        const auto n = static_cast<Eigen::Index>(e - b);
        out.middleCols(at, n) = X.middleCols(static_cast<Eigen::Index>(b), n).template cast<double>();
        at += n;
    }
    return out;
}

}  // namespace pemal
