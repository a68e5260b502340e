#pragma once

// Z-score standardization fit on training rows only.

#include <pemal/error.hpp>

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <vector>

namespace pemal {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
/// Flat parameter storage, aligned like Eigen's own buffers. Vectorized kernels
/// over Maps into it then peel the same elements on every run, so results do
/// not depend on where the heap placed the buffer.
using ParamVector = std::vector<double, Eigen::aligned_allocator<double>>;

/// Columns whose population stddev falls below this are treated as constant.
inline constexpr double kMinStddev = 1e-8;

struct Scaler {
    Vector mean;
    Vector stddev;  // every entry >= kMinStddev

    Eigen::Index dim() const noexcept { return mean.size(); }

    Matrix transform(const Matrix& X) const {
        if (X.cols() != dim())
            throw DimensionError("scaler expects " + std::to_string(dim()) + " columns, got " + std::to_string(X.cols()));
        return (X.rowwise() - mean.transpose()).array().rowwise() / stddev.transpose().array();
    }

    Vector transform(const Vector& x) const {
        if (x.size() != dim())
            throw DimensionError("scaler expects " + std::to_string(dim()) + " values, got " + std::to_string(x.size()));
        return (x - mean).cwiseQuotient(stddev);
    }

    bool operator==(const Scaler& o) const {
        return mean.size() == o.mean.size() && stddev.size() == o.stddev.size() && mean == o.mean && stddev == o.stddev;
    }
};

inline Scaler fit_scaler(const Matrix& X) {
    if (X.rows() == 0) throw EmptyDataset("cannot fit a scaler on zero rows");
    Scaler s;
    const double n = static_cast<double>(X.rows());
    s.mean = X.colwise().sum().transpose() / n;
    s.stddev = ((X.rowwise() - s.mean.transpose()).array().square().colwise().sum() / n).sqrt().transpose();
    for (Eigen::Index j = 0; j < s.stddev.size(); ++j)
        if (!(s.stddev[j] >= kMinStddev)) s.stddev[j] = 1.0;
    return s;
}

}  // namespace pemal
