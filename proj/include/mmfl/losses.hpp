#pragma once

// Training objectives: InfoNCE per modality, the symmetric contrastive loss,
// and cross-entropy for the supervised setting.

#include <cmath>
#include <vector>

#include "mmfl/graph.hpp"
#include "mmfl/tensor.hpp"

namespace mmfl {

struct Temperature {
    double tau = 0.05;

    void validate() const {
        if (!(tau > 0.0)) throw ContractError("Temperature: tau must be positive");
    }
};

namespace detail {

inline void check_unit_rows(const Tensor& z, const char* what) {
    if (z.rank() != 2) throw ShapeError("loss input must be rank-2");
    if (z.dim(0) < 1) throw ContractError("empty batch");
    const int64_t d = z.dim(1);
    for (int64_t i = 0; i < z.dim(0); ++i) {
        double sq = 0.0;
        for (int64_t j = 0; j < d; ++j) {
            const double v = z.data[static_cast<size_t>(i * d + j)];
            sq += v * v;
        }
        if (std::abs(std::sqrt(sq) - 1.0) > 1e-6) {
            throw ContractError(std::string(what) + ": rows must be unit-norm");
        }
    }
}

}  // namespace detail

// -(1/B) sum_i log softmax_j(z_a^i . z_b^j / tau) at j = i.
// Rows of both inputs must already be unit-normalized by the caller.
inline int info_nce(Graph& g, int za, int zb, Temperature tau) {
    tau.validate();
    detail::check_unit_rows(g.value(za), "info_nce(z_a)");
    detail::check_unit_rows(g.value(zb), "info_nce(z_b)");
    if (g.value(za).dim(0) != g.value(zb).dim(0)) {
        throw ShapeError("info_nce: batch size mismatch");
    }
    const int logits = g.scale(g.matmul_nt(za, zb), 1.0 / tau.tau);
    return g.nll_diag(logits);
}

inline double info_nce(const Tensor& za, const Tensor& zb, Temperature tau) {
    Graph g;
    return g.value(info_nce(g, g.constant(za), g.constant(zb), tau)).item();
}

// 0.5 * (info_nce(a,b) + info_nce(b,a))
inline int clip_loss(Graph& g, int za, int zb, Temperature tau) {
    const int lab = info_nce(g, za, zb, tau);
    const int lba = info_nce(g, zb, za, tau);
    return g.lincomb({lab, lba}, {0.5, 0.5});
}

inline double clip_loss(const Tensor& za, const Tensor& zb, Temperature tau) {
    Graph g;
    return g.value(clip_loss(g, g.constant(za), g.constant(zb), tau)).item();
}

inline int cross_entropy(Graph& g, int logits, std::vector<int> labels) {
    return g.nll_labels(logits, std::move(labels));
}

inline double cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
    Graph g;
    return g.value(g.nll_labels(g.constant(logits), labels)).item();
}

}  // namespace mmfl
