#pragma once

// A trained pipeline (feature mask -> scaler -> classifier) and its file format.
//
// Model file layout (little-endian, f64 for every real number):
//   "PEMD" | u32 version | u32 kind | u32 mask bits | u32 input dim
//   | f64 mean[dim] | f64 stddev[dim] | kind payload | u32 CRC32
// Payloads:
//   mlp:      u32 n_hidden | u32 hidden[n] | u32 bn_after | u8 input_bn
//             | u64 n_params | f64 params[] | u64 n_running | f64 running[]
//   logistic: f64 w[dim] | f64 bias
//   knn:      u32 k | u64 rows | f64 points[rows*dim] | i8 labels[rows]

#include <pemal/binary_io.hpp>
#include <pemal/dataset.hpp>
#include <pemal/error.hpp>
#include <pemal/feature_mask.hpp>
#include <pemal/models.hpp>
#include <pemal/scaling.hpp>

#include <filesystem>
#include <memory>

namespace pemal {

inline constexpr std::uint32_t kModelVersion = 1;

struct TrainedModel {
    FeatureMask mask = FeatureMask::all();
    Scaler scaler;
    std::unique_ptr<Classifier> classifier;

    /// Rows are full 2381-wide feature vectors.
    template <typename Derived>
    Vector predict_proba(const Eigen::MatrixBase<Derived>& X) const {
        return classifier->predict_proba(scaler.transform(slice_features(X, mask)));
    }
};

/// Slices to `mask`, fits the scaler on those rows and trains `kind`.
inline TrainedModel train_pipeline(const LabeledDataset& train, const FeatureMask& mask, ModelKind kind,
                                   const TrainConfig& config) {
    TrainedModel m;
    m.mask = mask;
    const Matrix X = slice_features(train.X, mask);
    m.scaler = fit_scaler(X);
    m.classifier = make_classifier(kind);
    m.classifier->train(m.scaler.transform(X), train.y, config);
    return m;
}

inline std::vector<std::uint8_t> encode_model(const TrainedModel& m) {
    binio::Writer w;
    w.put_bytes(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>("PEMD"), 4));
    w.put<std::uint32_t>(kModelVersion);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(m.classifier->kind()));
    w.put<std::uint32_t>(m.mask.bits());
    const auto dim = m.scaler.dim();
    w.put<std::uint32_t>(static_cast<std::uint32_t>(dim));
    for (Eigen::Index i = 0; i < dim; ++i) w.put<double>(m.scaler.mean[i]);
    for (Eigen::Index i = 0; i < dim; ++i) w.put<double>(m.scaler.stddev[i]);
    switch (m.classifier->kind()) {
        case ModelKind::Mlp: {
            const auto& mlp = static_cast<const MlpModel&>(*m.classifier);
            const auto& a = mlp.architecture();
            w.put<std::uint32_t>(static_cast<std::uint32_t>(a.hidden.size()));
            for (auto h : a.hidden) w.put<std::uint32_t>(static_cast<std::uint32_t>(h));
            w.put<std::uint32_t>(static_cast<std::uint32_t>(a.bn_after));
            w.put<std::uint8_t>(a.input_bn ? 1 : 0);
            w.put<std::uint64_t>(mlp.parameters().size());
            for (double p : mlp.parameters()) w.put<double>(p);
            w.put<std::uint64_t>(mlp.running_statistics().size());
            for (double p : mlp.running_statistics()) w.put<double>(p);
            break;
        }
        case ModelKind::Logistic: {
            const auto& lr = static_cast<const LogisticModel&>(*m.classifier);
            for (Eigen::Index i = 0; i < lr.weights().size(); ++i) w.put<double>(lr.weights()[i]);
            w.put<double>(lr.bias());
            break;
        }
        case ModelKind::Knn: {
            const auto& knn = static_cast<const KnnModel&>(*m.classifier);
            w.put<std::uint32_t>(static_cast<std::uint32_t>(knn.k()));
            w.put<std::uint64_t>(static_cast<std::uint64_t>(knn.points().rows()));
            for (Eigen::Index i = 0; i < knn.points().size(); ++i) w.put<double>(knn.points().data()[i]);
            for (auto l : knn.labels()) w.put<std::int8_t>(l);
            break;
        }
    }
    w.seal();
    return w.bytes();
}

inline TrainedModel decode_model(std::span<const std::uint8_t> data) {
    using R = binio::Reader<CorruptModel>;
    if (data.size() < 4 || !std::equal(data.begin(), data.begin() + 4, "PEMD")) throw CorruptModel("not a model file");
    R r(binio::verify_sealed<CorruptModel>(data));
    r.get_bytes(4);
    if (r.get<std::uint32_t>() != kModelVersion) throw CorruptModel("unsupported model version");
    const auto kind = static_cast<ModelKind>(r.get<std::uint32_t>());
    TrainedModel m;
    m.mask = FeatureMask::from_bits(r.get<std::uint32_t>());
    const auto dim = static_cast<Eigen::Index>(r.get<std::uint32_t>());
    if (static_cast<std::size_t>(dim) != m.mask.width()) throw CorruptModel("input width does not match mask");
    m.scaler.mean.resize(dim);
    m.scaler.stddev.resize(dim);
    for (Eigen::Index i = 0; i < dim; ++i) m.scaler.mean[i] = r.get<double>();
    for (Eigen::Index i = 0; i < dim; ++i) m.scaler.stddev[i] = r.get<double>();
    switch (kind) {
        case ModelKind::Mlp: {
            MlpArchitecture a;
            a.input_dim = static_cast<std::size_t>(dim);
            a.hidden.resize(r.get<std::uint32_t>());
            for (auto& h : a.hidden) h = r.get<std::uint32_t>();
            a.bn_after = r.get<std::uint32_t>();
            a.input_bn = r.get<std::uint8_t>() != 0;
            auto mlp = std::make_unique<MlpModel>(a);
            if (r.get<std::uint64_t>() != mlp->parameters().size()) throw CorruptModel("parameter count mismatch");
            for (auto& p : mlp->parameters()) p = r.get<double>();
            if (r.get<std::uint64_t>() != mlp->running_statistics().size()) throw CorruptModel("running statistics mismatch");
            for (auto& p : mlp->running_statistics()) p = r.get<double>();
            m.classifier = std::move(mlp);
            break;
        }
        case ModelKind::Logistic: {
            auto lr = std::make_unique<LogisticModel>(dim);
            for (Eigen::Index i = 0; i < dim; ++i) lr->weights()[i] = r.get<double>();
            lr->bias() = r.get<double>();
            m.classifier = std::move(lr);
            break;
        }
        case ModelKind::Knn: {
            const auto k = r.get<std::uint32_t>();
            const auto rows = r.get<std::uint64_t>();
            if (dim > 0 && rows > r.remaining() / (8 * static_cast<std::uint64_t>(dim))) throw CorruptModel("truncated knn points");
            Matrix X(static_cast<Eigen::Index>(rows), dim);
            for (Eigen::Index i = 0; i < X.size(); ++i) X.data()[i] = r.get<double>();
            std::vector<std::int8_t> y(rows);
            for (auto& l : y) l = r.get<std::int8_t>();
            m.classifier = std::make_unique<KnnModel>(std::move(X), std::move(y), k);
            break;
        }
        default: throw CorruptModel("unknown model kind");
    }
    if (r.remaining() != 0) throw CorruptModel("trailing bytes in model file");
    return m;
}

inline void save_model(const TrainedModel& m, const std::filesystem::path& path) {
    const auto bytes = encode_model(m);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + path.string());
}

inline TrainedModel load_model(const std::filesystem::path& path) { return decode_model(binio::read_file(path)); }

}  // namespace pemal
