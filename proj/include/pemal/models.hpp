#pragma once

// Classifiers behind one interface: the batch-normalized tanh MLP, plus
// logistic regression and k-nearest-neighbours baselines.

#include <pemal/error.hpp>
#include <pemal/scaling.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace pemal {

enum class Optimizer { GradientDescent, Adam };
enum class InitScheme { XavierUniform, LecunUniform };
enum class ModelKind : std::uint32_t { Mlp = 1, Logistic = 2, Knn = 3 };

inline std::string_view to_string(ModelKind k) {
    switch (k) {
        case ModelKind::Mlp: return "mlp";
        case ModelKind::Logistic: return "logistic";
        case ModelKind::Knn: return "knn";
    }
    return "unknown";
}

inline ModelKind parse_model_kind(std::string_view s) {
    if (s == "mlp" || s == "ann") return ModelKind::Mlp;
    if (s == "logistic" || s == "lr") return ModelKind::Logistic;
    if (s == "knn") return ModelKind::Knn;
    throw InvalidArgument("unknown model kind '" + std::string(s) + "'");
}

struct TrainConfig {
    double learning_rate = 1e-3;
    std::size_t batch_size = 512;
    std::size_t epochs = 10;
    std::uint64_t seed = 42;
    Optimizer optimizer = Optimizer::Adam;
    InitScheme init = InitScheme::XavierUniform;
    double l2 = 1e-4;       // logistic regression only
    std::size_t knn_k = 5;  // knn only

    void validate() const {
        if (batch_size < 1) throw InvalidArgument("batch size must be >= 1");
        if (epochs < 1) throw InvalidArgument("epochs must be >= 1");
        if (!(learning_rate > 0)) throw InvalidArgument("learning rate must be positive");
        if (knn_k < 1) throw InvalidArgument("k must be >= 1");
    }
};

class Classifier {
public:
    virtual ~Classifier() = default;
    virtual ModelKind kind() const = 0;
    virtual Eigen::Index input_dim() const = 0;
    /// Labels must be 0 or 1.
    virtual void train(const Matrix& X, std::span<const std::int8_t> y, const TrainConfig& config) = 0;
    /// Per-row probability of the malicious class.
    virtual Vector predict_proba(const Matrix& X) const = 0;
};

namespace detail {

inline void check_training_set(const Matrix& X, std::span<const std::int8_t> y) {
    if (X.rows() == 0 || y.empty()) throw EmptyDataset("training set is empty");
    if (static_cast<std::size_t>(X.rows()) != y.size())
        throw DimensionError("X has " + std::to_string(X.rows()) + " rows but y has " + std::to_string(y.size()));
    for (auto l : y)
        if (l != 0 && l != 1) throw NonBinaryLabels("training labels must be 0 or 1, got " + std::to_string(l));
}

/// Uniform double in [0, 1) from the top 53 bits; portable unlike std::uniform_real_distribution.
inline double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline void shuffle(std::vector<std::size_t>& v, std::mt19937_64& rng) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng() % i]);
}

inline Matrix gather_rows(const Matrix& X, std::span<const std::size_t> idx) {
    Matrix out(static_cast<Eigen::Index>(idx.size()), X.cols());
    for (std::size_t r = 0; r < idx.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = X.row(static_cast<Eigen::Index>(idx[r]));
    return out;
}

/// Adam or plain gradient descent over one flat parameter vector.
class OptimizerState {
public:
    OptimizerState(Optimizer kind, double lr, std::size_t n) : kind_(kind), lr_(lr) {
        if (kind_ == Optimizer::Adam) {
            m_.assign(n, 0.0);
            v_.assign(n, 0.0);
        }
    }

    void step(std::span<double> params, std::span<const double> grad) {
        if (kind_ == Optimizer::GradientDescent) {
            for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr_ * grad[i];
            return;
        }
        constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
        ++t_;
        const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            m_[i] = b1 * m_[i] + (1 - b1) * grad[i];
            v_[i] = b2 * v_[i] + (1 - b2) * grad[i] * grad[i];
            params[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps);
        }
    }

private:
    Optimizer kind_;
    double lr_;
    ParamVector m_, v_;
    std::uint64_t t_ = 0;
};

}  // namespace detail

// ===========================================================================
// MLP

enum class Mode { Train, Infer };

inline constexpr double kBatchNormEpsilon = 1e-5;
inline constexpr double kBatchNormMomentum = 0.9;

struct MlpArchitecture {
    std::size_t input_dim = 0;
    std::vector<std::size_t> hidden{512, 128, 8};
    /// A batch-norm layer follows this many hidden layers; 0 disables it.
    std::size_t bn_after = 2;
    bool input_bn = true;

    static MlpArchitecture standard(std::size_t input_dim) { return {input_dim, {512, 128, 8}, 2, true}; }

    bool operator==(const MlpArchitecture&) const = default;
};

/// Layout of the flat parameter vector:
///   [input BN gamma, beta] [W_0, b_0] ... [W_out, b_out] [hidden BN gamma, beta]
/// Weights are row-major (fan_in x fan_out).
struct MlpLayout {
    struct Dense {
        std::size_t in, out, w, b;
    };
    struct Norm {
        std::size_t dim = 0, gamma = 0, beta = 0;
    };
    Norm input_bn;
    std::vector<Dense> dense;  // hidden layers then the 2-unit output layer
    Norm hidden_bn;
    std::size_t num_params = 0;
    std::size_t num_running = 0;  // mean+var for each BN

    explicit MlpLayout(const MlpArchitecture& a) {
        if (a.input_dim == 0) throw InvalidArgument("input dimension must be positive");
        if (a.bn_after > a.hidden.size()) throw InvalidArgument("bn_after exceeds hidden layer count");
        std::size_t at = 0;
        auto norm = [&](std::size_t d) {
            Norm n{d, at, at + d};
            at += 2 * d;
            num_running += 2 * d;
            return n;
        };
        if (a.input_bn) input_bn = norm(a.input_dim);
        std::size_t in = a.input_dim;
        std::vector<std::size_t> widths = a.hidden;
        widths.push_back(2);
        for (auto out : widths) {
            if (out == 0) throw InvalidArgument("layer width must be positive");
            dense.push_back({in, out, at, at + in * out});
            at += in * out + out;
            in = out;
        }
        if (a.bn_after > 0) hidden_bn = norm(a.hidden[a.bn_after - 1]);
        num_params = at;
    }
};

class MlpModel final : public Classifier {
public:
    struct Cache;

    MlpModel() = default;
    explicit MlpModel(MlpArchitecture arch) : arch_(std::move(arch)), layout_(arch_) {
        params_.assign(layout_.num_params, 0.0);
        running_.assign(layout_.num_running, 0.0);
        reset_norms();
    }

    ModelKind kind() const override { return ModelKind::Mlp; }
    Eigen::Index input_dim() const override { return static_cast<Eigen::Index>(arch_.input_dim); }
    const MlpArchitecture& architecture() const noexcept { return arch_; }
    const MlpLayout& layout() const noexcept { return layout_; }

    ParamVector& parameters() noexcept { return params_; }
    const ParamVector& parameters() const noexcept { return params_; }
    /// Inference statistics: for each BN, running mean then running variance.
    ParamVector& running_statistics() noexcept { return running_; }
    const ParamVector& running_statistics() const noexcept { return running_; }

    Eigen::Map<Matrix> weights(std::size_t layer) {
        const auto& d = layout_.dense.at(layer);
        return {params_.data() + d.w, static_cast<Eigen::Index>(d.in), static_cast<Eigen::Index>(d.out)};
    }
    Eigen::Map<Vector> bias(std::size_t layer) {
        const auto& d = layout_.dense.at(layer);
        return {params_.data() + d.b, static_cast<Eigen::Index>(d.out)};
    }
    std::size_t num_dense() const noexcept { return layout_.dense.size(); }

    void initialize(InitScheme scheme, std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        std::fill(params_.begin(), params_.end(), 0.0);
        for (const auto& d : layout_.dense) {
            const double a = scheme == InitScheme::XavierUniform ? std::sqrt(6.0 / static_cast<double>(d.in + d.out))
                                                                 : std::sqrt(3.0 / static_cast<double>(d.in));
            for (std::size_t i = 0; i < d.in * d.out; ++i) params_[d.w + i] = (2.0 * detail::uniform01(rng) - 1.0) * a;
        }
        reset_norms();
    }

    /// Forward pass over a batch. Returns per-row class probabilities (B x 2).
    /// Train mode normalizes with batch statistics, Infer mode with the
    /// running statistics.
    Matrix forward(const Matrix& X, Mode mode, Cache* cache = nullptr) const;

    /// Mean cross-entropy and its gradient w.r.t. every parameter, train-mode BN.
    double loss_and_gradient(const Matrix& X, std::span<const std::int8_t> y, ParamVector& grad,
                             bool update_running = false);

    double loss(const Matrix& X, std::span<const std::int8_t> y, Mode mode) const {
        const Matrix p = forward(X, mode);
        double total = 0.0;
        for (Eigen::Index i = 0; i < p.rows(); ++i) total -= std::log(std::max(p(i, y[static_cast<std::size_t>(i)]), 1e-300));
        return total / static_cast<double>(p.rows());
    }

    void train(const Matrix& X, std::span<const std::int8_t> y, const TrainConfig& config) override;

    /// Per-epoch training loss recorded by the last train() call (full-data, train-mode).
    const std::vector<double>& epoch_losses() const noexcept { return epoch_losses_; }
    void record_epoch_losses(bool on) noexcept { record_losses_ = on; }

    Vector predict_proba(const Matrix& X) const override {
        check_input(X);
        return forward(X, Mode::Infer).col(1);
    }

private:
    void check_input(const Matrix& X) const {
        if (X.cols() != input_dim())
            throw DimensionError("MLP expects " + std::to_string(input_dim()) + " inputs, got " + std::to_string(X.cols()));
    }

    void reset_norms() {
        auto reset = [&](const MlpLayout::Norm& n, std::size_t running_at) {
            for (std::size_t i = 0; i < n.dim; ++i) {
                params_[n.gamma + i] = 1.0;
                params_[n.beta + i] = 0.0;
                running_[running_at + i] = 0.0;
                running_[running_at + n.dim + i] = 1.0;
            }
        };
        reset(layout_.input_bn, 0);
        reset(layout_.hidden_bn, 2 * layout_.input_bn.dim);
    }

    struct NormCache {
        Matrix xhat;
        Vector inv_std;
        Vector batch_mean, batch_var;
    };

    Matrix norm_forward(const Matrix& x, const MlpLayout::Norm& n, std::size_t running_at, Mode mode,
                        NormCache* nc) const;
    void fold_running(const MlpLayout::Norm& n, std::size_t running_at, const NormCache& nc);
    Matrix norm_backward(const Matrix& dy, const MlpLayout::Norm& n, const NormCache& nc, ParamVector& grad) const;

    MlpArchitecture arch_;
    MlpLayout layout_{MlpArchitecture{1, {}, 0, false}};
    ParamVector params_;
    ParamVector running_;
    std::vector<double> epoch_losses_;
    bool record_losses_ = false;
};

struct MlpModel::Cache {
    NormCache input_norm;
    NormCache hidden_norm;
    std::vector<Matrix> inputs;    // input to each dense layer
    std::vector<Matrix> tanh_out;  // tanh output of each hidden layer
};

inline Matrix MlpModel::norm_forward(const Matrix& x, const MlpLayout::Norm& n, std::size_t running_at, Mode mode,
                                     NormCache* nc) const {
    const auto d = static_cast<Eigen::Index>(n.dim);
    Eigen::Map<const Vector> gamma(params_.data() + n.gamma, d), beta(params_.data() + n.beta, d);
    Vector mean, var;
    if (mode == Mode::Train) {
        const double b = static_cast<double>(x.rows());
        mean = x.colwise().sum().transpose() / b;
        var = (x.rowwise() - mean.transpose()).array().square().colwise().sum().transpose() / b;
    } else {
        mean = Eigen::Map<const Vector>(running_.data() + running_at, d);
        var = Eigen::Map<const Vector>(running_.data() + running_at + n.dim, d);
    }
    const Vector inv_std = (var.array() + kBatchNormEpsilon).rsqrt();
    Matrix xhat = (x.rowwise() - mean.transpose()).array().rowwise() * inv_std.transpose().array();
    Matrix y = (xhat.array().rowwise() * gamma.transpose().array()).rowwise() + beta.transpose().array();
    if (nc) {
        nc->xhat = std::move(xhat);
        nc->inv_std = inv_std;
        nc->batch_mean = std::move(mean);
        nc->batch_var = std::move(var);
    }
    return y;
}

inline void MlpModel::fold_running(const MlpLayout::Norm& n, std::size_t running_at, const NormCache& nc) {
    const auto d = static_cast<Eigen::Index>(n.dim);
    Eigen::Map<Vector> run_mean(running_.data() + running_at, d), run_var(running_.data() + running_at + n.dim, d);
    run_mean = kBatchNormMomentum * run_mean + (1 - kBatchNormMomentum) * nc.batch_mean;
    run_var = kBatchNormMomentum * run_var + (1 - kBatchNormMomentum) * nc.batch_var;
}

inline Matrix MlpModel::norm_backward(const Matrix& dy, const MlpLayout::Norm& n, const NormCache& nc,
                                      ParamVector& grad) const {
    const auto d = static_cast<Eigen::Index>(n.dim);
    Eigen::Map<const Vector> gamma(params_.data() + n.gamma, d);
    Eigen::Map<Vector>(grad.data() + n.gamma, d) += (dy.array() * nc.xhat.array()).colwise().sum().transpose().matrix();
    Eigen::Map<Vector>(grad.data() + n.beta, d) += dy.colwise().sum().transpose();
    const double b = static_cast<double>(dy.rows());
    const Matrix dxhat = dy.array().rowwise() * gamma.transpose().array();
    const Eigen::RowVectorXd sum_dxhat = dxhat.colwise().sum();
    const Eigen::RowVectorXd sum_dxhat_xhat = (dxhat.array() * nc.xhat.array()).colwise().sum();
    Matrix dx = (b * dxhat.array()).rowwise() - sum_dxhat.array();
    dx.array() -= nc.xhat.array().rowwise() * sum_dxhat_xhat.array();
    dx.array().rowwise() *= (nc.inv_std.transpose().array() / b);
    return dx;
}

inline Matrix MlpModel::forward(const Matrix& X, Mode mode, Cache* cache) const {
    check_input(X);
    if (cache) {
        cache->inputs.clear();
        cache->tanh_out.clear();
    }
    Matrix a = arch_.input_bn ? norm_forward(X, layout_.input_bn, 0, mode, cache ? &cache->input_norm : nullptr) : X;
    const std::size_t hidden = arch_.hidden.size();
    for (std::size_t l = 0;; ++l) {
        const auto& d = layout_.dense[l];
        Eigen::Map<const Matrix> W(params_.data() + d.w, static_cast<Eigen::Index>(d.in), static_cast<Eigen::Index>(d.out));
        Eigen::Map<const Vector> bvec(params_.data() + d.b, static_cast<Eigen::Index>(d.out));
        Matrix z = a * W;
        z.rowwise() += bvec.transpose();
        if (cache) cache->inputs.push_back(std::move(a));
        if (l == hidden) {
            // Row-wise softmax over the two logits.
            const Vector m = z.rowwise().maxCoeff();
            const Matrix e = (z.colwise() - m).array().exp();
            const Vector s = e.rowwise().sum();
            return e.array().colwise() / s.array();
        }
        Matrix h = z.array().tanh();
        if (cache) cache->tanh_out.push_back(h);
        if (l + 1 == arch_.bn_after)
            a = norm_forward(h, layout_.hidden_bn, 2 * layout_.input_bn.dim, mode,
                             cache ? &cache->hidden_norm : nullptr);
        else
            a = std::move(h);
    }
}

inline double MlpModel::loss_and_gradient(const Matrix& X, std::span<const std::int8_t> y, ParamVector& grad,
                                          bool update_running) {
    Cache cache;
    const Matrix p = forward(X, Mode::Train, &cache);
    if (update_running) {
        if (arch_.input_bn) fold_running(layout_.input_bn, 0, cache.input_norm);
        if (arch_.bn_after > 0) fold_running(layout_.hidden_bn, 2 * layout_.input_bn.dim, cache.hidden_norm);
    }
    grad.assign(params_.size(), 0.0);
    const auto B = p.rows();
    double loss = 0.0;
    Matrix delta = p;  // d loss / d logits
    for (Eigen::Index i = 0; i < B; ++i) {
        const auto label = y[static_cast<std::size_t>(i)];
        loss -= std::log(std::max(p(i, label), 1e-300));
        delta(i, label) -= 1.0;
    }
    delta /= static_cast<double>(B);

    for (std::size_t l = layout_.dense.size(); l-- > 0;) {
        const auto& d = layout_.dense[l];
        Eigen::Map<const Matrix> W(params_.data() + d.w, static_cast<Eigen::Index>(d.in), static_cast<Eigen::Index>(d.out));
        Eigen::Map<Matrix>(grad.data() + d.w, static_cast<Eigen::Index>(d.in), static_cast<Eigen::Index>(d.out)).noalias() +=
            cache.inputs[l].transpose() * delta;
        Eigen::Map<Vector>(grad.data() + d.b, static_cast<Eigen::Index>(d.out)) += delta.colwise().sum().transpose();
        if (l == 0 && !arch_.input_bn) break;
        Matrix da = delta * W.transpose();
        if (l == 0) {
            norm_backward(da, layout_.input_bn, cache.input_norm, grad);
            break;
        }
        // da is w.r.t. the input of layer l, i.e. the (possibly normalized) output of hidden layer l-1.
        if (l == arch_.bn_after) da = norm_backward(da, layout_.hidden_bn, cache.hidden_norm, grad);
        const Matrix& h = cache.tanh_out[l - 1];
        delta = da.array() * (1.0 - h.array().square());
    }
    return loss / static_cast<double>(B);
}

inline void MlpModel::train(const Matrix& X, std::span<const std::int8_t> y, const TrainConfig& config) {
    config.validate();
    detail::check_training_set(X, y);
    if (arch_.input_dim != static_cast<std::size_t>(X.cols())) *this = MlpModel(MlpArchitecture{
        static_cast<std::size_t>(X.cols()), arch_.hidden, arch_.bn_after, arch_.input_bn});
    initialize(config.init, config.seed);
    epoch_losses_.clear();

    std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
    detail::OptimizerState opt(config.optimizer, config.learning_rate, params_.size());
    std::vector<std::size_t> order(static_cast<std::size_t>(X.rows()));
    std::iota(order.begin(), order.end(), std::size_t{0});
    ParamVector grad;
    std::vector<std::int8_t> yb;
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        detail::shuffle(order, rng);
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const auto idx = std::span(order).subspan(start, std::min(config.batch_size, order.size() - start));
            const Matrix xb = detail::gather_rows(X, idx);
            yb.clear();
            for (auto i : idx) yb.push_back(y[i]);
            loss_and_gradient(xb, yb, grad, true);
            opt.step(params_, grad);
        }
        if (record_losses_) epoch_losses_.push_back(loss(X, y, Mode::Train));
    }
}

/// Max over parameters of |ga - gn| / max(|ga|, |gn|, 1e-8), with gn from
/// central differences of the train-mode batch loss.
inline double gradient_check(MlpModel& model, const Matrix& X, std::span<const std::int8_t> y, double step = 1e-4) {
    ParamVector analytic;
    model.loss_and_gradient(X, y, analytic, false);
    auto& p = model.parameters();
    double worst = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double saved = p[i];
        p[i] = saved + step;
        const double up = model.loss(X, y, Mode::Train);
        p[i] = saved - step;
        const double down = model.loss(X, y, Mode::Train);
        p[i] = saved;
        const double numeric = (up - down) / (2 * step);
        const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
        worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    }
    return worst;
}

inline MlpModel mlp_train(const Matrix& X, std::span<const std::int8_t> y, const TrainConfig& config) {
    MlpModel m(MlpArchitecture::standard(static_cast<std::size_t>(std::max<Eigen::Index>(X.cols(), 1))));
    m.train(X, y, config);
    return m;
}

// ===========================================================================
// Logistic regression

class LogisticModel final : public Classifier {
public:
    LogisticModel() = default;
    explicit LogisticModel(Eigen::Index dim) : w_(Vector::Zero(dim)) {}

    ModelKind kind() const override { return ModelKind::Logistic; }
    Eigen::Index input_dim() const override { return w_.size(); }
    Vector& weights() noexcept { return w_; }
    const Vector& weights() const noexcept { return w_; }
    double& bias() noexcept { return b_; }
    double bias() const noexcept { return b_; }

    void train(const Matrix& X, std::span<const std::int8_t> y, const TrainConfig& config) override {
        config.validate();
        detail::check_training_set(X, y);
        w_ = Vector::Zero(X.cols());
        b_ = 0.0;
        ParamVector params(static_cast<std::size_t>(X.cols()) + 1, 0.0), grad(params.size());
        detail::OptimizerState opt(config.optimizer, config.learning_rate, params.size());
        std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
        std::vector<std::size_t> order(static_cast<std::size_t>(X.rows()));
        std::iota(order.begin(), order.end(), std::size_t{0});
        const auto d = X.cols();
        for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
            detail::shuffle(order, rng);
            for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
                const auto idx = std::span(order).subspan(start, std::min(config.batch_size, order.size() - start));
                const Matrix xb = detail::gather_rows(X, idx);
                Eigen::Map<Vector> w(params.data(), d);
                const Vector z = (xb * w).array() + params.back();
                Vector r(z.size());
                for (Eigen::Index i = 0; i < z.size(); ++i) r[i] = sigmoid(z[i]) - y[idx[static_cast<std::size_t>(i)]];
                r /= static_cast<double>(idx.size());
                Eigen::Map<Vector>(grad.data(), d) = xb.transpose() * r + config.l2 * w;
                grad.back() = r.sum();
                opt.step(params, grad);
            }
        }
        w_ = Eigen::Map<Vector>(params.data(), d);
        b_ = params.back();
    }

    Vector predict_proba(const Matrix& X) const override {
        if (X.cols() != w_.size())
            throw DimensionError("logistic model expects " + std::to_string(w_.size()) + " inputs, got " +
                                 std::to_string(X.cols()));
        Vector z = (X * w_).array() + b_;
        return z.unaryExpr([](double v) { return sigmoid(v); });
    }

private:
    static double sigmoid(double z) {
        if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
        const double e = std::exp(z);
        return e / (1.0 + e);
    }

    Vector w_;
    double b_ = 0.0;
};

inline LogisticModel logistic_train(const Matrix& X, std::span<const std::int8_t> y, const TrainConfig& config) {
    LogisticModel m(X.cols());
    m.train(X, y, config);
    return m;
}

// ===========================================================================
// k-nearest neighbours

/// Fraction of malicious labels among the k nearest training rows
/// (Euclidean); equal distances prefer the smaller row index.
inline double knn_predict(const Matrix& X_train, std::span<const std::int8_t> y_train, const Eigen::RowVectorXd& x,
                          std::size_t k) {
    if (X_train.rows() == 0) throw EmptyDataset("knn needs at least one training row");
    if (k < 1) throw InvalidArgument("k must be >= 1");
    if (x.size() != X_train.cols()) throw DimensionError("query width does not match training width");
    const Vector dist = (X_train.rowwise() - x).rowwise().squaredNorm();
    std::vector<std::size_t> idx(static_cast<std::size_t>(X_train.rows()));
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    const std::size_t kk = std::min(k, idx.size());
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(kk), idx.end(), [&](std::size_t a, std::size_t b) {
        const double da = dist[static_cast<Eigen::Index>(a)], db = dist[static_cast<Eigen::Index>(b)];
        return da < db || (da == db && a < b);
    });
    double hits = 0;
    for (std::size_t i = 0; i < kk; ++i) hits += y_train[idx[i]] == 1 ? 1.0 : 0.0;
    return hits / static_cast<double>(kk);
}

class KnnModel final : public Classifier {
public:
    KnnModel() = default;
    KnnModel(Matrix X, std::vector<std::int8_t> y, std::size_t k) : X_(std::move(X)), y_(std::move(y)), k_(k) {}

    ModelKind kind() const override { return ModelKind::Knn; }
    Eigen::Index input_dim() const override { return X_.cols(); }
    std::size_t k() const noexcept { return k_; }
    const Matrix& points() const noexcept { return X_; }
    const std::vector<std::int8_t>& labels() const noexcept { return y_; }

    void train(const Matrix& X, std::span<const std::int8_t> y, const TrainConfig& config) override {
        config.validate();
        detail::check_training_set(X, y);
        X_ = X;
        y_.assign(y.begin(), y.end());
        k_ = config.knn_k;
    }

    Vector predict_proba(const Matrix& X) const override {
        Vector out(X.rows());
        for (Eigen::Index i = 0; i < X.rows(); ++i) out[i] = knn_predict(X_, y_, X.row(i), k_);
        return out;
    }

private:
    Matrix X_;
    std::vector<std::int8_t> y_;
    std::size_t k_ = 5;
};

inline std::unique_ptr<Classifier> make_classifier(ModelKind kind) {
    switch (kind) {
        case ModelKind::Mlp: return std::make_unique<MlpModel>(MlpArchitecture::standard(1));
        case ModelKind::Logistic: return std::make_unique<LogisticModel>();
        case ModelKind::Knn: return std::make_unique<KnnModel>();
    }
    throw InvalidArgument("unknown model kind");
}

}  // namespace pemal
