#pragma once

// Synthetic paired-modality data and federated partitioning.
//
// Both modalities are token sequences produced as fixed linear views of a
// shared latent vector, so cross-modal alignment is learnable by
// construction while runtimes stay at desk scale.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "mmfl/nn.hpp"
#include "mmfl/rng.hpp"
#include "mmfl/tensor.hpp"

namespace mmfl {

struct PairedDataset {
    Tensor x_a;  // [n, seq_a, in_a]
    Tensor x_b;  // [n, seq_b, in_b]
    std::vector<int> labels;  // empty unless supervised
    int64_t n = 0;

    bool supervised() const { return !labels.empty(); }

    // Copies of sample i's modalities, shaped [1, seq, in].
    Tensor sample_a(int64_t i) const { return slice(x_a, i); }
    Tensor sample_b(int64_t i) const { return slice(x_b, i); }

    static Tensor slice(const Tensor& x, int64_t i) {
        const int64_t stride = x.dim(1) * x.dim(2);
        Tensor out = Tensor::zeros({1, x.dim(1), x.dim(2)});
        std::copy_n(x.data.begin() + i * stride, stride, out.data.begin());
        return out;
    }

    static Tensor gather(const Tensor& x, const std::vector<int64_t>& idx) {
        const int64_t stride = x.dim(1) * x.dim(2);
        Tensor out = Tensor::zeros({static_cast<int64_t>(idx.size()), x.dim(1), x.dim(2)});
        for (size_t k = 0; k < idx.size(); ++k) {
            std::copy_n(x.data.begin() + idx[k] * stride, stride,
                        out.data.begin() + static_cast<int64_t>(k) * stride);
        }
        return out;
    }
};

struct PartitionPlan {
    std::vector<std::vector<int64_t>> assignments;  // per client, sample indices
};

struct PartitionError : ContractError {
    explicit PartitionError(const std::string& m) : ContractError(m) {}
};

inline PairedDataset gen_synthetic_pairs(int64_t n, int latent_dim,
                                         const BlockSpec& spec_a, int in_a,
                                         const BlockSpec& spec_b, int in_b,
                                         std::optional<int> classes, double noise,
                                         RngStream rng) {
    if (n < 1) throw ContractError("gen_synthetic_pairs: n must be >= 1");
    if (noise < 0.0) throw ContractError("gen_synthetic_pairs: noise must be >= 0");
    const int64_t da = static_cast<int64_t>(spec_a.seq_len) * in_a;
    const int64_t db = static_cast<int64_t>(spec_b.seq_len) * in_b;

    // Fixed projection matrices shared by every sample.
    RngStream proj_rng = rng.derive("projections");
    Tensor A = Tensor::zeros({latent_dim, da});
    Tensor B = Tensor::zeros({latent_dim, db});
    const double scale = 1.0 / std::sqrt(static_cast<double>(latent_dim));
    for (double& v : A.data) v = proj_rng.normal() * scale;
    for (double& v : B.data) v = proj_rng.normal() * scale;

    std::vector<Tensor> class_means;
    if (classes) {
        if (*classes < 1) throw ContractError("gen_synthetic_pairs: classes must be >= 1");
        RngStream mean_rng = rng.derive("class-means");
        for (int c = 0; c < *classes; ++c) {
            Tensor mu = Tensor::zeros({latent_dim});
            for (double& v : mu.data) v = mean_rng.normal();
            class_means.push_back(std::move(mu));
        }
    }

    PairedDataset d;
    d.n = n;
    d.x_a = Tensor::zeros({n, spec_a.seq_len, in_a});
    d.x_b = Tensor::zeros({n, spec_b.seq_len, in_b});
    RngStream sample_rng = rng.derive("samples");
    std::vector<double> u(static_cast<size_t>(latent_dim));
    for (int64_t i = 0; i < n; ++i) {
        int label = -1;
        if (classes) {
            label = static_cast<int>(sample_rng.below(static_cast<uint64_t>(*classes)));
            d.labels.push_back(label);
            const Tensor& mu = class_means[static_cast<size_t>(label)];
            for (int j = 0; j < latent_dim; ++j) {
                u[static_cast<size_t>(j)] =
                    mu.data[static_cast<size_t>(j)] + 0.3 * sample_rng.normal();
            }
        } else {
            for (int j = 0; j < latent_dim; ++j) u[static_cast<size_t>(j)] = sample_rng.normal();
        }
        for (int64_t k = 0; k < da; ++k) {
            double acc = 0.0;
            for (int j = 0; j < latent_dim; ++j)
                acc += u[static_cast<size_t>(j)] * A.data[static_cast<size_t>(j * da + k)];
            if (noise > 0.0) acc += noise * sample_rng.normal();
            d.x_a.data[static_cast<size_t>(i * da + k)] = acc;
        }
        for (int64_t k = 0; k < db; ++k) {
            double acc = 0.0;
            for (int j = 0; j < latent_dim; ++j)
                acc += u[static_cast<size_t>(j)] * B.data[static_cast<size_t>(j * db + k)];
            if (noise > 0.0) acc += noise * sample_rng.normal();
            d.x_b.data[static_cast<size_t>(i * db + k)] = acc;
        }
    }
    return d;
}

// Shuffled indices split into near-equal parts (sizes differ by at most 1).
inline PartitionPlan uniform_partition(int64_t n, int clients, RngStream rng) {
    if (clients < 1) throw ContractError("uniform_partition: need at least one client");
    if (n < clients) throw PartitionError("uniform_partition: fewer samples than clients");
    std::vector<int64_t> idx(static_cast<size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    for (int64_t i = n - 1; i > 0; --i) {
        const int64_t j = static_cast<int64_t>(rng.below(static_cast<uint64_t>(i + 1)));
        std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
    }
    PartitionPlan plan;
    plan.assignments.resize(static_cast<size_t>(clients));
    const int64_t base = n / clients, extra = n % clients;
    int64_t pos = 0;
    for (int c = 0; c < clients; ++c) {
        const int64_t take = base + (c < extra ? 1 : 0);
        plan.assignments[static_cast<size_t>(c)].assign(idx.begin() + pos,
                                                        idx.begin() + pos + take);
        pos += take;
    }
    return plan;
}

namespace detail {

// Marsaglia-Tsang, with the alpha<1 boost.
inline double gamma_draw(double alpha, RngStream& rng) {
    if (alpha < 1.0) {
        const double u = std::max(rng.uniform(), 0x1.0p-53);
        return gamma_draw(alpha + 1.0, rng) * std::pow(u, 1.0 / alpha);
    }
    const double d = alpha - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        double x, v;
        do {
            x = rng.normal();
            v = 1.0 + c * x;
        } while (v <= 0.0);
        v = v * v * v;
        const double u = rng.uniform();
        if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
        if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
}

inline std::vector<double> dirichlet_draw(double beta, int n, RngStream& rng) {
    std::vector<double> p(static_cast<size_t>(n));
    double sum = 0.0;
    for (double& v : p) {
        v = gamma_draw(beta, rng);
        sum += v;
    }
    if (sum <= 0.0) sum = 1.0;
    for (double& v : p) v /= sum;
    return p;
}

// Integer counts summing exactly to total, closest to total * p.
inline std::vector<int64_t> largest_remainder(const std::vector<double>& p, int64_t total) {
    const size_t n = p.size();
    std::vector<int64_t> counts(n);
    std::vector<std::pair<double, size_t>> rem(n);
    int64_t assigned = 0;
    for (size_t i = 0; i < n; ++i) {
        const double exact = p[i] * static_cast<double>(total);
        counts[i] = static_cast<int64_t>(std::floor(exact));
        rem[i] = {exact - std::floor(exact), i};
        assigned += counts[i];
    }
    std::sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    for (int64_t k = 0; k < total - assigned; ++k) counts[rem[static_cast<size_t>(k)].second]++;
    return counts;
}

}  // namespace detail

// Class-conditional Dirichlet split: for each class, proportions are drawn
// from Dirichlet(beta * 1_N) and that class's samples are dealt out by
// largest-remainder rounding. Redraws (bounded) if any client ends empty.
inline PartitionPlan dirichlet_partition(const std::vector<int>& labels, int clients,
                                         double beta, RngStream rng,
                                         int max_retries = 100) {
    if (!(beta > 0.0)) throw ContractError("dirichlet_partition: beta must be positive");
    if (clients < 1) throw ContractError("dirichlet_partition: need at least one client");
    if (labels.empty()) throw PartitionError("dirichlet_partition: empty label list");

    const int num_classes = 1 + *std::max_element(labels.begin(), labels.end());
    std::vector<std::vector<int64_t>> by_class(static_cast<size_t>(num_classes));
    for (size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0) throw ContractError("dirichlet_partition: negative label");
        by_class[static_cast<size_t>(labels[i])].push_back(static_cast<int64_t>(i));
    }

    for (int attempt = 0; attempt < max_retries; ++attempt) {
        RngStream draw_rng = rng.derive("attempt", static_cast<uint64_t>(attempt));
        PartitionPlan plan;
        plan.assignments.resize(static_cast<size_t>(clients));
        for (int c = 0; c < num_classes; ++c) {
            std::vector<int64_t> idx = by_class[static_cast<size_t>(c)];
            if (idx.empty()) continue;
            for (int64_t i = static_cast<int64_t>(idx.size()) - 1; i > 0; --i) {
                const int64_t j =
                    static_cast<int64_t>(draw_rng.below(static_cast<uint64_t>(i + 1)));
                std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
            }
            const auto p = detail::dirichlet_draw(beta, clients, draw_rng);
            const auto counts =
                detail::largest_remainder(p, static_cast<int64_t>(idx.size()));
            int64_t pos = 0;
            for (int k = 0; k < clients; ++k) {
                for (int64_t t = 0; t < counts[static_cast<size_t>(k)]; ++t) {
                    plan.assignments[static_cast<size_t>(k)].push_back(
                        idx[static_cast<size_t>(pos++)]);
                }
            }
        }
        const bool ok = std::none_of(plan.assignments.begin(), plan.assignments.end(),
                                     [](const auto& a) { return a.empty(); });
        if (ok) {
            for (auto& a : plan.assignments) std::sort(a.begin(), a.end());
            return plan;
        }
    }
    throw PartitionError("dirichlet_partition: retry budget exhausted with empty clients");
}

struct Batch {
    std::vector<int64_t> indices;  // into the parent dataset
};

// Epoch-shuffled aligned mini-batches; the final short batch is kept.
inline std::vector<Batch> batches(const std::vector<int64_t>& idx, int64_t batch_size,
                                  RngStream epoch_rng) {
    if (idx.empty()) throw ContractError("batches: empty client dataset");
    if (batch_size < 1) throw ContractError("batches: batch size must be >= 1");
    std::vector<int64_t> order = idx;
    for (int64_t i = static_cast<int64_t>(order.size()) - 1; i > 0; --i) {
        const int64_t j = static_cast<int64_t>(epoch_rng.below(static_cast<uint64_t>(i + 1)));
        std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
    }
    std::vector<Batch> out;
    for (size_t pos = 0; pos < order.size(); pos += static_cast<size_t>(batch_size)) {
        Batch b;
        const size_t end = std::min(order.size(), pos + static_cast<size_t>(batch_size));
        b.indices.assign(order.begin() + static_cast<int64_t>(pos),
                         order.begin() + static_cast<int64_t>(end));
        out.push_back(std::move(b));
    }
    return out;
}

}  // namespace mmfl
