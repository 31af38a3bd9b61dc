#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "dtnh/errors.hpp"

namespace dtnh {

/// Dense n-dimensional array of doubles, row-major flat storage.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    Tensor() = default;

    Tensor(std::vector<std::size_t> shape_, std::vector<double> data_)
        : shape(std::move(shape_)), data(std::move(data_)) {
        if (size_of(shape) != data.size()) {
            throw DimensionError("Tensor: shape product " +
                                 std::to_string(size_of(shape)) +
                                 " != data length " + std::to_string(data.size()));
        }
    }

    static Tensor zeros(std::vector<std::size_t> shape_) {
        std::size_t n = size_of(shape_);
        return Tensor(std::move(shape_), std::vector<double>(n, 0.0));
    }

    static std::size_t size_of(const std::vector<std::size_t>& shape) {
        return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                               std::multiplies<>());
    }

    std::size_t size() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }

    // Rank-2 accessors.
    double& at(std::size_t r, std::size_t c) { return data[r * shape[1] + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * shape[1] + c]; }
};

/// Flattened parameter-space vector (omega, omega_s, gradients, directions).
/// Kept distinct from rank-1 Tensor: these live in R^d, not in activation space.
struct FlatVector {
    std::vector<double> data;

    FlatVector() = default;
    explicit FlatVector(std::vector<double> d) : data(std::move(d)) {}
    FlatVector(std::initializer_list<double> values) : data(values) {}
    explicit FlatVector(std::size_t n, double fill = 0.0) : data(n, fill) {}

    std::size_t size() const { return data.size(); }
    double& operator[](std::size_t i) { return data[i]; }
    double operator[](std::size_t i) const { return data[i]; }
};

inline void check_same_length(const FlatVector& a, const FlatVector& b,
                              const char* op) {
    if (a.size() != b.size()) {
        throw DimensionError(std::string(op) + ": length mismatch " +
                             std::to_string(a.size()) + " vs " +
                             std::to_string(b.size()));
    }
}

inline double dot(const FlatVector& a, const FlatVector& b) {
    check_same_length(a, b, "dot");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm_sq(const FlatVector& a) { return dot(a, a); }

/// alpha * x + y, elementwise.
inline FlatVector axpy(double alpha, const FlatVector& x, const FlatVector& y) {
    check_same_length(x, y, "axpy");
    FlatVector out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = alpha * x[i] + y[i];
    return out;
}

/// In-place y += alpha * x.
inline void axpy_into(double alpha, const FlatVector& x, FlatVector& y) {
    check_same_length(x, y, "axpy_into");
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

inline FlatVector scale(double alpha, const FlatVector& x) {
    FlatVector out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = alpha * x[i];
    return out;
}

inline bool all_finite(const FlatVector& v) {
    for (double x : v.data)
        if (!std::isfinite(x)) return false;
    return true;
}

/// Rank-2 matrix product.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2)
        throw DimensionError("matmul: both operands must be rank-2");
    if (a.shape[1] != b.shape[0])
        throw DimensionError("matmul: inner extents disagree, " +
                             std::to_string(a.shape[1]) + " vs " +
                             std::to_string(b.shape[0]));
    const std::size_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
    Tensor out = Tensor::zeros({m, n});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = a.at(i, p);
            for (std::size_t j = 0; j < n; ++j)
                out.at(i, j) += aip * b.at(p, j);
        }
    return out;
}

}  // namespace dtnh
