#include <pemal/ablation.hpp>

#include "support/synthetic.hpp"

#include <gtest/gtest.h>

#include <random>
#include <set>

using namespace pemal;
using namespace pemal::testing;

TEST(FeatureMask, WidthAndName) {
    const FeatureMask m{FeatureSet::SE, FeatureSet::BH};
    EXPECT_EQ(m.width(), 511u);
    EXPECT_EQ(m.name(), "BH_SE");
    EXPECT_EQ(FeatureMask::all().width(), kFeatureDim);
    EXPECT_EQ(FeatureMask::all().name(), "ALL");
}

TEST(FeatureMask, ParseAcceptsAnyOrderAndCase) {
    EXPECT_EQ(FeatureMask::parse("se_bh"), (FeatureMask{FeatureSet::BH, FeatureSet::SE}));
    EXPECT_EQ(FeatureMask::parse("IM,ST+BE"), (FeatureMask{FeatureSet::BE, FeatureSet::ST, FeatureSet::IM}));
    EXPECT_EQ(FeatureMask::parse("all"), FeatureMask::all());
    EXPECT_THROW(FeatureMask::parse("BH_XX"), InvalidArgument);
    EXPECT_THROW(FeatureMask::parse(""), InvalidArgument);
}

TEST(FeatureMask, WidthIsStrictlyMonotone) {
    for (std::uint32_t a = 1; a < 512; ++a)
        for (std::uint32_t b = a + 1; b < 512; ++b)
            if ((a & b) == a) EXPECT_LT(FeatureMask::from_bits(a).width(), FeatureMask::from_bits(b).width());
}

TEST(SliceFeatures, AllIsIdentity) {
    std::mt19937_64 rng(1);
    FeatureMatrix X(3, kFeatureDim);
    for (Eigen::Index i = 0; i < X.size(); ++i) X.data()[i] = static_cast<float>(rng() % 1000) / 7.0f;
    const Matrix S = slice_features(X, FeatureMask::all());
    EXPECT_TRUE(S == X.cast<double>());
}

TEST(SliceFeatures, ColumnsInCanonicalOrder) {
    Matrix X(2, kFeatureDim);
    for (Eigen::Index c = 0; c < X.cols(); ++c) X.col(c).setConstant(static_cast<double>(c));
    const Matrix bh = slice_features(X, FeatureMask{FeatureSet::BH});
    ASSERT_EQ(bh.cols(), 256);
    for (Eigen::Index c = 0; c < 256; ++c) EXPECT_EQ(bh(1, c), c);
    const Matrix s = slice_features(X, FeatureMask::parse("SE_BH"));
    ASSERT_EQ(s.cols(), 511);
    for (Eigen::Index c = 0; c < 256; ++c) EXPECT_EQ(s(0, c), c);
    for (Eigen::Index c = 0; c < 255; ++c) EXPECT_EQ(s(0, 256 + c), 688 + c);
}

TEST(SliceFeatures, Errors) {
    EXPECT_THROW(slice_features(Matrix(1, kFeatureDim), FeatureMask{}), EmptyMask);
    EXPECT_THROW(slice_features(Matrix(1, 10), FeatureMask::all()), DimensionError);
}

TEST(EnumerateSubsets, Counts) {
    EXPECT_EQ(enumerate_subsets(1).size(), 9u);
    EXPECT_EQ(enumerate_subsets(2).size(), 36u);
    EXPECT_EQ(enumerate_subsets(3).size(), 10u);
    EXPECT_EQ(enumerate_subsets(4).size(), 5u);
    EXPECT_EQ(enumerate_subsets(5).size(), 1u);
    EXPECT_EQ(enumerate_subsets(AblationLevel::All).size(), 1u);
    EXPECT_TRUE(enumerate_subsets(AblationLevel::All)[0].is_all());
    EXPECT_THROW(enumerate_subsets(6), InvalidArgument);
    EXPECT_THROW(parse_level("7"), InvalidArgument);
}

TEST(EnumerateSubsets, DistinctAndSized) {
    for (int level = 1; level <= 5; ++level) {
        std::set<std::uint32_t> seen;
        for (const auto& m : enumerate_subsets(level)) {
            EXPECT_EQ(m.count(), static_cast<std::size_t>(level));
            EXPECT_TRUE(seen.insert(m.bits()).second);
            if (level >= 3)
                for (auto s : {FeatureSet::GE, FeatureSet::HE, FeatureSet::EX, FeatureSet::DD}) EXPECT_FALSE(m.contains(s));
        }
    }
}

TEST(EnumerateSubsets, SinglesFollowLayoutOrder) {
    const auto singles = enumerate_subsets(1);
    for (std::size_t i = 0; i < singles.size(); ++i) EXPECT_EQ(singles[i].name(), kLayout[i].abbr);
    EXPECT_EQ(enumerate_subsets(5)[0].name(), "BH_BE_ST_SE_IM");
    EXPECT_EQ(enumerate_subsets(3)[0].name(), "BH_BE_ST");
}

namespace {

LabeledDataset small_synthetic() {
    SyntheticSpec spec;
    spec.train_rows = 300;
    spec.test_rows = 100;
    spec.seed = 3;
    return make_synthetic(spec);
}

TrainConfig quick_config() {
    TrainConfig c;
    c.epochs = 3;
    c.batch_size = 64;
    return c;
}

}  // namespace

TEST(RunAblation, SignalInSectionsRanksSectionsFirst) {
    const auto ds = small_synthetic();
    const std::vector<AblationLevel> levels{AblationLevel::Singles};
    const std::vector<ModelKind> models{ModelKind::Logistic};
    const auto report = run_ablation(ds, levels, models, quick_config());
    ASSERT_EQ(report.rows.size(), 9u);
    EXPECT_EQ(report.rows[0].mask.name(), "SE");
    for (std::size_t i = 1; i < report.rows.size(); ++i)
        EXPECT_GE(report.rows[i - 1].metrics->acc, report.rows[i].metrics->acc);
}

TEST(RunAblation, DeterministicAcrossRunsAndThreadCounts) {
    const auto ds = small_synthetic();
    const std::vector<AblationLevel> levels{AblationLevel::Singles, AblationLevel::All};
    const std::vector<ModelKind> models{ModelKind::Mlp, ModelKind::Logistic};
    const auto c = quick_config();
    const AblationOptions serial{1, false}, parallel{3, false};
    const auto a = to_csv(run_ablation(ds, levels, models, c, serial));
    EXPECT_EQ(a, to_csv(run_ablation(ds, levels, models, c, serial)));
    EXPECT_EQ(a, to_csv(run_ablation(ds, levels, models, c, parallel)));
}

TEST(RunAblation, NoDuplicateRows) {
    const auto ds = small_synthetic();
    const std::vector<AblationLevel> levels{AblationLevel::Quints, AblationLevel::Quints};
    const std::vector<ModelKind> models{ModelKind::Logistic, ModelKind::Logistic};
    EXPECT_EQ(run_ablation(ds, levels, models, quick_config()).rows.size(), 1u);
}

TEST(RunAblation, FailedRowsAreRecordedNotFatal) {
    auto ds = small_synthetic();
    // No positives in the test split: every row fails to score.
    for (std::size_t i = 0; i < ds.rows(); ++i)
        if (ds.split[i] == Split::Test) ds.y[i] = 0;
    const std::vector<AblationLevel> levels{AblationLevel::Singles};
    const std::vector<ModelKind> models{ModelKind::Logistic};
    const auto report = run_ablation(ds, levels, models, quick_config());
    ASSERT_EQ(report.rows.size(), 9u);
    for (const auto& r : report.rows) {
        EXPECT_FALSE(r.metrics.has_value());
        EXPECT_FALSE(r.error.empty());
    }
    const auto csv = to_csv(report);
    EXPECT_NE(csv.find("BH,logistic,,,,,,,,"), std::string::npos) << csv;
    EXPECT_TRUE(to_json(report)["rows"][0].contains("error"));
}

TEST(AblationReport, SortPutsFailuresLastAndKeepsTies) {
    AblationReport r;
    MetricsReport hi, lo;
    hi.acc = 0.9;
    lo.acc = 0.8;
    r.rows.push_back({FeatureMask{FeatureSet::BH}, ModelKind::Mlp, std::nullopt, "boom", 0});
    r.rows.push_back({FeatureMask{FeatureSet::BE}, ModelKind::Mlp, lo, {}, 0});
    r.rows.push_back({FeatureMask{FeatureSet::ST}, ModelKind::Mlp, hi, {}, 0});
    r.rows.push_back({FeatureMask{FeatureSet::GE}, ModelKind::Mlp, hi, {}, 0});
    r.sort();
    EXPECT_EQ(r.rows[0].mask.name(), "ST");
    EXPECT_EQ(r.rows[1].mask.name(), "GE");
    EXPECT_EQ(r.rows[2].mask.name(), "BE");
    EXPECT_EQ(r.rows[3].mask.name(), "BH");
}

TEST(AblationReport, CsvHeaderAndText) {
    AblationReport r;
    MetricsReport m;
    m.acc = 0.5;
    r.rows.push_back({FeatureMask::parse("BH_SE"), ModelKind::Mlp, m, {}, 1.25});
    const auto csv = to_csv(r);
    EXPECT_EQ(csv.substr(0, csv.find('\n')), kAblationCsvHeader);
    EXPECT_NE(csv.find("BH_SE,mlp,0.500000,"), std::string::npos);
    EXPECT_NE(csv.find(",1.250\n"), std::string::npos);
    EXPECT_NE(to_text(r).find("BH_SE"), std::string::npos);
}
