#pragma once

// Dense row-major tensors of doubles plus the small set of numeric kernels
// the rest of the library is built on.

#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace mmfl {

struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ContractError : std::runtime_error {
    explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

struct Tensor {
    std::vector<int64_t> shape;
    std::vector<double> data;

    Tensor() = default;

    Tensor(std::vector<int64_t> s, std::vector<double> d)
        : shape(std::move(s)), data(std::move(d)) {
        if (numel(shape) != static_cast<int64_t>(data.size())) {
            throw ShapeError("tensor data length does not match shape");
        }
    }

    static int64_t numel(const std::vector<int64_t>& s) {
        int64_t n = 1;
        for (int64_t d : s) {
            if (d <= 0) throw ShapeError("non-positive dimension");
            n *= d;
        }
        return n;
    }

    static Tensor zeros(std::vector<int64_t> s) {
        int64_t n = numel(s);
        return Tensor(std::move(s), std::vector<double>(static_cast<size_t>(n), 0.0));
    }

    static Tensor full(std::vector<int64_t> s, double v) {
        int64_t n = numel(s);
        return Tensor(std::move(s), std::vector<double>(static_cast<size_t>(n), v));
    }

    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    int64_t size() const { return static_cast<int64_t>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }
    int64_t dim(int i) const { return shape[static_cast<size_t>(i)]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    double item() const {
        if (size() != 1) throw ContractError("item() on non-scalar tensor");
        return data[0];
    }
};

inline bool all_finite(const Tensor& t) {
    for (double v : t.data) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

// C[m,n] = A[m,k] * B[k,n]
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2) throw ShapeError("matmul expects rank-2 tensors");
    if (a.dim(1) != b.dim(0)) throw ShapeError("matmul inner dimension mismatch");
    const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor c = Tensor::zeros({m, n});
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t p = 0; p < k; ++p) {
            const double av = a.data[static_cast<size_t>(i * k + p)];
            if (av == 0.0) continue;
            const double* brow = &b.data[static_cast<size_t>(p * n)];
            double* crow = &c.data[static_cast<size_t>(i * n)];
            for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
    return c;
}

// Row-wise softmax with max-shift stability.
inline Tensor softmax_rows(const Tensor& x) {
    if (x.rank() != 2) throw ShapeError("softmax_rows expects rank-2 tensor");
    const int64_t r = x.dim(0), c = x.dim(1);
    Tensor y = Tensor::zeros({r, c});
    for (int64_t i = 0; i < r; ++i) {
        const double* row = &x.data[static_cast<size_t>(i * c)];
        double mx = row[0];
        for (int64_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        double* out = &y.data[static_cast<size_t>(i * c)];
        for (int64_t j = 0; j < c; ++j) {
            out[j] = std::exp(row[j] - mx);
            sum += out[j];
        }
        for (int64_t j = 0; j < c; ++j) out[j] /= sum;
    }
    return y;
}

inline Tensor l2_normalize_rows(const Tensor& x, double eps = 1e-12) {
    if (x.rank() != 2) throw ShapeError("l2_normalize_rows expects rank-2 tensor");
    const int64_t r = x.dim(0), c = x.dim(1);
    Tensor y = x;
    for (int64_t i = 0; i < r; ++i) {
        double* row = &y.data[static_cast<size_t>(i * c)];
        double sq = 0.0;
        for (int64_t j = 0; j < c; ++j) sq += row[j] * row[j];
        const double norm = std::sqrt(sq);
        if (norm <= eps) throw ContractError("l2_normalize_rows: degenerate (near-zero) row");
        for (int64_t j = 0; j < c; ++j) row[j] /= norm;
    }
    return y;
}

// Standardizes the last axis to mean 0 / variance 1, then applies gain and bias.
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                         double eps = 1e-5) {
    const int64_t d = x.shape.back();
    if (gain.size() != d || bias.size() != d) {
        throw ShapeError("layer_norm gain/bias length mismatch");
    }
    const int64_t rows = x.size() / d;
    Tensor y = x;
    for (int64_t i = 0; i < rows; ++i) {
        double* row = &y.data[static_cast<size_t>(i * d)];
        double mean = 0.0;
        for (int64_t j = 0; j < d; ++j) mean += row[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (int64_t j = 0; j < d; ++j) {
            const double c = row[j] - mean;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + eps);
        for (int64_t j = 0; j < d; ++j) {
            row[j] = gain.data[static_cast<size_t>(j)] * (row[j] - mean) * inv +
                     bias.data[static_cast<size_t>(j)];
        }
    }
    return y;
}

// Exact GELU: 0.5 x (1 + erf(x / sqrt(2)))
inline double gelu_scalar(double x) {
    return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0)));
}

inline double gelu_deriv_scalar(double x) {
    static const double inv_sqrt_2pi = 0.3989422804014326779;
    return 0.5 * (1.0 + std::erf(x / std::sqrt(2.0))) +
           x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
}

}  // namespace mmfl
