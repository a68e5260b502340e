#pragma once

// Binary-classification metrics. Scores are malignancy probabilities;
// labels are 0 (benign) or 1 (malicious).

#include <pemal/error.hpp>

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

namespace pemal {

inline constexpr double kDefaultThreshold = 0.5;
inline constexpr double kDefaultFprCap = 0.01;

struct Confusion {
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
    bool operator==(const Confusion&) const = default;
};

/// score >= threshold counts as a malicious prediction.
inline Confusion confusion(std::span<const double> scores, std::span<const std::int8_t> labels,
                           double threshold = kDefaultThreshold) {
    if (scores.size() != labels.size()) throw DimensionError("scores and labels differ in length");
    Confusion c;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const bool pred = scores[i] >= threshold;
        const bool pos = labels[i] == 1;
        if (pred && pos) ++c.tp;
        else if (pred) ++c.fp;
        else if (pos) ++c.fn;
        else ++c.tn;
    }
    return c;
}

namespace detail {

struct TieGroup {
    std::size_t pos = 0, neg = 0;
};

/// Groups of equal score in descending score order.
inline std::vector<TieGroup> tie_groups(std::span<const double> scores, std::span<const std::int8_t> labels) {
    if (scores.size() != labels.size()) throw DimensionError("scores and labels differ in length");
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    std::vector<TieGroup> groups;
    std::size_t pos = 0, neg = 0;
    for (std::size_t i = 0; i < order.size(); ++i) {
        if (i > 0 && scores[order[i]] != scores[order[i - 1]]) groups.push_back({0, 0});
        if (groups.empty()) groups.push_back({0, 0});
        (labels[order[i]] == 1 ? groups.back().pos : groups.back().neg) += 1;
        (labels[order[i]] == 1 ? pos : neg) += 1;
    }
    if (pos == 0 || neg == 0) throw DegenerateLabels("both classes must be present");
    return groups;
}

struct Totals {
    std::size_t pos = 0, neg = 0;
};

inline Totals totals(const std::vector<TieGroup>& groups) {
    Totals t;
    for (const auto& g : groups) {
        t.pos += g.pos;
        t.neg += g.neg;
    }
    return t;
}

}  // namespace detail

/// Mann-Whitney estimate: fraction of (positive, negative) pairs ranked
/// correctly, ties counting one half. Computed in exact integer arithmetic.
inline double roc_auc(std::span<const double> scores, std::span<const std::int8_t> labels) {
    const auto groups = detail::tie_groups(scores, labels);
    const auto t = detail::totals(groups);
    // Walk from the lowest score upward, counting negatives already passed.
    std::uint64_t twice_credit = 0, neg_below = 0;
    for (auto it = groups.rbegin(); it != groups.rend(); ++it) {
        twice_credit += 2 * it->pos * neg_below + it->pos * it->neg;
        neg_below += it->neg;
    }
    return static_cast<double>(twice_credit) / (2.0 * static_cast<double>(t.pos) * static_cast<double>(t.neg));
}

/// Highest TPR over all thresholds whose FPR stays at or below `fpr_cap`.
inline double tpr_at_fpr(std::span<const double> scores, std::span<const std::int8_t> labels,
                         double fpr_cap = kDefaultFprCap) {
    const auto groups = detail::tie_groups(scores, labels);
    const auto t = detail::totals(groups);
    std::size_t tp = 0, fp = 0;
    double best = 0.0;
    for (const auto& g : groups) {
        tp += g.pos;
        fp += g.neg;
        if (static_cast<double>(fp) / static_cast<double>(t.neg) <= fpr_cap)
            best = std::max(best, static_cast<double>(tp) / static_cast<double>(t.pos));
    }
    return best;
}

/// Raw area under the ROC curve over FPR in [0, fpr_cap]. Tied scores form
/// straight segments.
inline double roc_area_below(std::span<const double> scores, std::span<const std::int8_t> labels, double fpr_cap) {
    const auto groups = detail::tie_groups(scores, labels);
    const auto t = detail::totals(groups);
    double area = 0.0, x0 = 0.0, y0 = 0.0;
    std::size_t tp = 0, fp = 0;
    for (const auto& g : groups) {
        tp += g.pos;
        fp += g.neg;
        const double x1 = static_cast<double>(fp) / static_cast<double>(t.neg);
        const double y1 = static_cast<double>(tp) / static_cast<double>(t.pos);
        if (x1 >= fpr_cap) {
            const double y_cap = x1 > x0 ? y0 + (y1 - y0) * (fpr_cap - x0) / (x1 - x0) : y1;
            area += (fpr_cap - x0) * (y0 + y_cap) / 2.0;
            return area;
        }
        area += (x1 - x0) * (y0 + y1) / 2.0;
        x0 = x1;
        y0 = y1;
    }
    return area;
}

/// Partial AUC over FPR in [0, fpr_cap], McClish-standardized so that a
/// perfect ranking scores 1 and a chance ranking 0.5.
inline double partial_auc(std::span<const double> scores, std::span<const std::int8_t> labels,
                          double fpr_cap = kDefaultFprCap) {
    if (!(fpr_cap > 0 && fpr_cap <= 1)) throw InvalidArgument("fpr cap must lie in (0, 1]");
    const double area = roc_area_below(scores, labels, fpr_cap);
    const double min_area = fpr_cap * fpr_cap / 2.0;
    const double max_area = fpr_cap;
    return 0.5 * (1.0 + (area - min_area) / (max_area - min_area));
}

struct MetricsReport {
    double acc = 0, auc = 0, tpr_at_1pct_fpr = 0, partial_auc_1pct = 0;
    double precision = 0, recall = 0, f1 = 0;
    double threshold = kDefaultThreshold;
};

inline MetricsReport evaluate(std::span<const double> scores, std::span<const std::int8_t> labels,
                              double threshold = kDefaultThreshold) {
    MetricsReport r;
    r.threshold = threshold;
    const auto c = confusion(scores, labels, threshold);
    const double n = static_cast<double>(scores.size());
    r.acc = n > 0 ? static_cast<double>(c.tp + c.tn) / n : 0.0;
    r.precision = c.tp + c.fp > 0 ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp) : 0.0;
    r.recall = c.tp + c.fn > 0 ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn) : 0.0;
    r.f1 = r.precision + r.recall > 0 ? 2 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
    r.auc = roc_auc(scores, labels);
    r.tpr_at_1pct_fpr = tpr_at_fpr(scores, labels, kDefaultFprCap);
    r.partial_auc_1pct = partial_auc(scores, labels, kDefaultFprCap);
    return r;
}

inline nlohmann::json to_json(const MetricsReport& r) {
    return {{"acc", r.acc},
            {"auc", r.auc},
            {"tpr_at_1pct_fpr", r.tpr_at_1pct_fpr},
            {"partial_auc_1pct", r.partial_auc_1pct},
            {"precision", r.precision},
            {"recall", r.recall},
            {"f1", r.f1},
            {"threshold", r.threshold}};
}

}  // namespace pemal
