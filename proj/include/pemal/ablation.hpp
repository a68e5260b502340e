#pragma once

// Feature-set ablation sweep: enumerate masks, train one pipeline per
// (mask, model) row on the training split, score it on the test split.

#include <pemal/dataset.hpp>
#include <pemal/error.hpp>
#include <pemal/feature_mask.hpp>
#include <pemal/metrics.hpp>
#include <pemal/model_io.hpp>
#include <pemal/models.hpp>
#include <pemal/parallel.hpp>

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace pemal {

enum class AblationLevel { Singles = 1, Pairs = 2, Triples = 3, Quads = 4, Quints = 5, All = 0 };

inline AblationLevel parse_level(std::string_view s) {
    if (s == "all" || s == "ALL") return AblationLevel::All;
    if (s.size() == 1 && s[0] >= '1' && s[0] <= '5') return static_cast<AblationLevel>(s[0] - '0');
    throw InvalidArgument("invalid ablation level '" + std::string(s) + "' (expected 1-5 or all)");
}

/// The five sets carried forward to levels 3 and above.
inline constexpr std::array<FeatureSet, 5> kShortlist{FeatureSet::BH, FeatureSet::BE, FeatureSet::ST, FeatureSet::SE,
                                                      FeatureSet::IM};

namespace detail {
// All k-subsets of `pool` in lexicographic index order.
inline void combinations(std::span<const FeatureSet> pool, std::size_t k, std::size_t start, FeatureMask current,
                         std::vector<FeatureMask>& out) {
    if (current.count() == k) {
        out.push_back(current);
        return;
    }
    for (std::size_t i = start; i < pool.size(); ++i) {
        FeatureMask next = current;
        next.include(pool[i]);
        combinations(pool, k, i + 1, next, out);
    }
}
}  // namespace detail

/// 1 -> 9 singles, 2 -> 36 pairs over all nine sets; 3/4/5 -> 10/5/1 subsets
/// of the BH, BE, ST, SE, IM shortlist; All -> the full mask.
inline std::vector<FeatureMask> enumerate_subsets(AblationLevel level) {
    std::vector<FeatureMask> out;
    const auto k = static_cast<std::size_t>(level);
    switch (level) {
        case AblationLevel::All: out.push_back(FeatureMask::all()); break;
        case AblationLevel::Singles:
        case AblationLevel::Pairs: {
            std::vector<FeatureSet> every;
            for (const auto& s : kLayout) every.push_back(s.set);
            detail::combinations(every, k, 0, {}, out);
            break;
        }
        case AblationLevel::Triples:
        case AblationLevel::Quads:
        case AblationLevel::Quints: detail::combinations(kShortlist, k, 0, {}, out); break;
        default: throw InvalidArgument("invalid ablation level");
    }
    return out;
}

inline std::vector<FeatureMask> enumerate_subsets(int level) {
    if (level < 0 || level > 5) throw InvalidArgument("invalid ablation level " + std::to_string(level));
    return enumerate_subsets(static_cast<AblationLevel>(level));
}

struct AblationRow {
    FeatureMask mask;
    ModelKind model = ModelKind::Mlp;
    std::optional<MetricsReport> metrics;  // empty when training or scoring failed
    std::string error;
    double train_seconds = 0.0;
};

struct AblationReport {
    std::vector<AblationRow> rows;

    /// ACC descending; failed rows last; equal keys keep canonical order.
    void sort() {
        std::stable_sort(rows.begin(), rows.end(), [](const AblationRow& a, const AblationRow& b) {
            if (a.metrics.has_value() != b.metrics.has_value()) return a.metrics.has_value();
            return a.metrics && a.metrics->acc > b.metrics->acc;
        });
    }
};

struct AblationOptions {
    std::size_t threads = 1;
    bool record_timing = true;
};

/// Expects a label-filtered dataset carrying both splits.
inline AblationReport run_ablation(const LabeledDataset& ds, std::span<const AblationLevel> levels,
                                   std::span<const ModelKind> models, const TrainConfig& config,
                                   const AblationOptions& options = {}) {
    const LabeledDataset train = ds.subset(Split::Train);
    const LabeledDataset test = ds.subset(Split::Test);

    std::vector<std::pair<FeatureMask, ModelKind>> jobs;
    for (auto level : levels)
        for (const auto& mask : enumerate_subsets(level))
            for (auto kind : models) {
                const bool seen = std::any_of(jobs.begin(), jobs.end(),
                                              [&](const auto& j) { return j.first == mask && j.second == kind; });
                if (!seen) jobs.emplace_back(mask, kind);
            }

    AblationReport report;
    report.rows = parallel_map(jobs.size(), options.threads, [&](std::size_t i) {
        AblationRow row{jobs[i].first, jobs[i].second, std::nullopt, {}, 0.0};
        try {
            const auto t0 = std::chrono::steady_clock::now();
            // The scaler is fit on the sliced training rows only.
            const TrainedModel model = train_pipeline(train, row.mask, row.model, config);
            const auto t1 = std::chrono::steady_clock::now();
            if (options.record_timing) row.train_seconds = std::chrono::duration<double>(t1 - t0).count();
            const Vector scores = model.predict_proba(test.X);
            row.metrics = evaluate(std::span<const double>(scores.data(), static_cast<std::size_t>(scores.size())), test.y);
        } catch (const std::exception& e) {
            row.error = e.what();
        }
        return row;
    });
    report.sort();
    return report;
}

// ---------------------------------------------------------------------------
// Report rendering.

namespace detail {
inline std::string fmt(double v, int precision = 6) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", precision, v);
    return buf;
}
}  // namespace detail

inline constexpr const char* kAblationCsvHeader =
    "mask,model,acc,auc,tpr_at_1pct_fpr,partial_auc_1pct,precision,recall,f1,train_seconds";

inline std::string to_csv(const AblationReport& report) {
    std::ostringstream out;
    out << kAblationCsvHeader << '\n';
    for (const auto& r : report.rows) {
        out << r.mask.name() << ',' << to_string(r.model);
        if (r.metrics) {
            const auto& m = *r.metrics;
            for (double v : {m.acc, m.auc, m.tpr_at_1pct_fpr, m.partial_auc_1pct, m.precision, m.recall, m.f1})
                out << ',' << detail::fmt(v);
        } else {
            out << ",,,,,,,";
        }
        out << ',' << detail::fmt(r.train_seconds, 3) << '\n';
    }
    return out.str();
}

inline nlohmann::json to_json(const AblationReport& report) {
    auto rows = nlohmann::json::array();
    for (const auto& r : report.rows) {
        nlohmann::json j{{"mask", r.mask.name()}, {"model", to_string(r.model)}, {"train_seconds", r.train_seconds}};
        if (r.metrics) j["metrics"] = to_json(*r.metrics);
        else j["error"] = r.error;
        rows.push_back(std::move(j));
    }
    return {{"rows", rows}};
}

/// Fixed-width text table of (mask, model, metrics) rows.
inline std::string render_table(const std::vector<std::vector<std::string>>& cells) {
    std::vector<std::size_t> width;
    for (const auto& row : cells)
        for (std::size_t c = 0; c < row.size(); ++c) {
            if (width.size() <= c) width.push_back(0);
            width[c] = std::max(width[c], row[c].size());
        }
    std::ostringstream out;
    for (std::size_t r = 0; r < cells.size(); ++r) {
        for (std::size_t c = 0; c < cells[r].size(); ++c) {
            if (c) out << "  ";
            out << cells[r][c] << std::string(width[c] - cells[r][c].size(), ' ');
        }
        out << '\n';
        if (r == 0) {
            for (std::size_t c = 0; c < width.size(); ++c) out << (c ? "  " : "") << std::string(width[c], '-');
            out << '\n';
        }
    }
    return out.str();
}

inline std::string to_text(const AblationReport& report) {
    std::vector<std::vector<std::string>> cells{{"mask", "model", "acc", "auc", "tpr@1%fpr", "pauc@1%", "f1"}};
    for (const auto& r : report.rows) {
        if (r.metrics)
            cells.push_back({r.mask.name(), std::string(to_string(r.model)), detail::fmt(r.metrics->acc, 4),
                             detail::fmt(r.metrics->auc, 4), detail::fmt(r.metrics->tpr_at_1pct_fpr, 4),
                             detail::fmt(r.metrics->partial_auc_1pct, 4), detail::fmt(r.metrics->f1, 4)});
        else
            cells.push_back({r.mask.name(), std::string(to_string(r.model)), "failed: " + r.error});
    }
    return render_table(cells);
}

}  // namespace pemal
