#pragma once

// Evaluation metrics: cross-modal retrieval recall@K, macro-averaged
// precision/recall/F1, and the per-block gradient-magnitude profile.

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <vector>

#include "mmfl/losses.hpp"
#include "mmfl/nn.hpp"
#include "mmfl/tensor.hpp"

namespace mmfl {

struct RetrievalResult {
    std::vector<int> ks;
    std::vector<double> recall_ab;  // queries from modality a against b, percent
    std::vector<double> recall_ba;

    double at_ab(int k) const { return at(recall_ab, k); }
    double at_ba(int k) const { return at(recall_ba, k); }

  private:
    double at(const std::vector<double>& r, int k) const {
        for (size_t i = 0; i < ks.size(); ++i)
            if (ks[i] == k) return r[i];
        throw ContractError("retrieval result: K not computed");
    }
};

namespace detail {

// Rank of the true match (index i) when ranking all rows of `gallery` by dot
// product with query row i, descending, ties broken by ascending index.
inline int64_t match_rank(const Tensor& queries, const Tensor& gallery, int64_t i) {
    const int64_t n = gallery.dim(0), d = queries.dim(1);
    const double* q = &queries.data[static_cast<size_t>(i * d)];
    auto score = [&](int64_t j) {
        const double* g = &gallery.data[static_cast<size_t>(j * d)];
        double acc = 0.0;
        for (int64_t p = 0; p < d; ++p) acc += q[p] * g[p];
        return acc;
    };
    const double si = score(i);
    int64_t rank = 1;
    for (int64_t j = 0; j < n; ++j) {
        if (j == i) continue;
        const double sj = score(j);
        if (sj > si || (sj == si && j < i)) ++rank;
    }
    return rank;
}

}  // namespace detail

inline RetrievalResult retrieval_recall(const Tensor& z_a, const Tensor& z_b,
                                        std::vector<int> ks = {1, 5, 10, 50}) {
    if (z_a.rank() != 2 || z_b.rank() != 2 || !z_a.same_shape(z_b)) {
        throw ShapeError("retrieval_recall: embedding shape mismatch");
    }
    const int64_t n = z_a.dim(0);
    std::sort(ks.begin(), ks.end());
    if (ks.empty() || n < ks.back()) {
        throw ContractError("retrieval_recall: need n >= max(ks)");
    }
    RetrievalResult res;
    res.ks = ks;
    res.recall_ab.assign(ks.size(), 0.0);
    res.recall_ba.assign(ks.size(), 0.0);
    for (int64_t i = 0; i < n; ++i) {
        const int64_t rab = detail::match_rank(z_a, z_b, i);
        const int64_t rba = detail::match_rank(z_b, z_a, i);
        for (size_t k = 0; k < ks.size(); ++k) {
            if (rab <= ks[k]) res.recall_ab[k] += 1.0;
            if (rba <= ks[k]) res.recall_ba[k] += 1.0;
        }
    }
    for (size_t k = 0; k < ks.size(); ++k) {
        res.recall_ab[k] *= 100.0 / static_cast<double>(n);
        res.recall_ba[k] *= 100.0 / static_cast<double>(n);
    }
    return res;
}

struct MacroPRF1 {
    double precision = 0.0;  // in [0, 100]
    double recall = 0.0;
    double f1 = 0.0;
};

// Macro average over the classes present in `labels`, with the 0-convention
// for empty denominators.
inline MacroPRF1 macro_prf1(const std::vector<int>& preds, const std::vector<int>& labels,
                            int num_classes) {
    if (preds.size() != labels.size()) throw ContractError("macro_prf1: length mismatch");
    std::vector<int64_t> tp(static_cast<size_t>(num_classes), 0);
    std::vector<int64_t> pred_count(static_cast<size_t>(num_classes), 0);
    std::vector<int64_t> label_count(static_cast<size_t>(num_classes), 0);
    for (size_t i = 0; i < preds.size(); ++i) {
        if (preds[i] < 0 || preds[i] >= num_classes || labels[i] < 0 ||
            labels[i] >= num_classes) {
            throw ContractError("macro_prf1: class id out of range");
        }
        pred_count[static_cast<size_t>(preds[i])]++;
        label_count[static_cast<size_t>(labels[i])]++;
        if (preds[i] == labels[i]) tp[static_cast<size_t>(preds[i])]++;
    }
    MacroPRF1 out;
    int present = 0;
    for (int c = 0; c < num_classes; ++c) {
        if (label_count[static_cast<size_t>(c)] == 0) continue;
        ++present;
        const double p = pred_count[static_cast<size_t>(c)] == 0
                             ? 0.0
                             : static_cast<double>(tp[static_cast<size_t>(c)]) /
                                   static_cast<double>(pred_count[static_cast<size_t>(c)]);
        const double r = static_cast<double>(tp[static_cast<size_t>(c)]) /
                         static_cast<double>(label_count[static_cast<size_t>(c)]);
        const double f = (p + r) > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
        out.precision += p;
        out.recall += r;
        out.f1 += f;
    }
    if (present == 0) throw ContractError("macro_prf1: no classes present");
    const double scale = 100.0 / static_cast<double>(present);
    out.precision *= scale;
    out.recall *= scale;
    out.f1 *= scale;
    return out;
}

struct GradientProfile {
    std::vector<double> values;  // per block, normalized so the last entry is 1
};

enum class ProfileMode { EndToEnd, Progressive };

namespace detail {

inline double frobenius(const Tensor& t) {
    double sq = 0.0;
    for (double v : t.data) sq += v * v;
    return std::sqrt(sq);
}

// Norm of the attention-output weight gradient for each block of the probed
// encoder, measured with the probed encoder truncated to `depth_probe`
// blocks (the other encoder truncated proportionally).
inline std::vector<double> probe_wo_norms(const EncoderState& probed,
                                          const EncoderState& other,
                                          const Segment& head_probed,
                                          const HeadSpec& spec_probed,
                                          const Segment& head_other,
                                          const HeadSpec& spec_other,
                                          const Tensor& x_probed, const Tensor& x_other,
                                          Temperature tau, int depth_probe) {
    EncoderState p = probed;
    p.blocks.resize(static_cast<size_t>(depth_probe));
    p.frozen_count = 0;
    p.embed.frozen = false;
    for (Segment& b : p.blocks) b.frozen = false;

    EncoderState o = other;
    const int depth_other = std::max<int>(
        1, static_cast<int>(std::ceil(static_cast<double>(other.depth()) * depth_probe /
                                      std::max(1, probed.depth()))));
    o.blocks.resize(static_cast<size_t>(std::min(other.depth(), depth_other)));
    o.frozen_count = 0;
    o.embed.frozen = false;
    for (Segment& b : o.blocks) b.frozen = false;

    Graph g;
    ParamBinding binding;
    const int hp = encoder_forward(p, x_probed, g, binding);
    const int ho = encoder_forward(o, x_other, g, binding);
    const int zp = g.l2norm_rows(head_forward(head_probed, spec_probed, hp, g, binding));
    const int zo = g.l2norm_rows(head_forward(head_other, spec_other, ho, g, binding));
    const int loss = clip_loss(g, zp, zo, tau);
    const auto grads = g.grad(loss);

    std::vector<double> norms;
    for (int b = 0; b < depth_probe; ++b) {
        const std::string seg = p.blocks[static_cast<size_t>(b)].name;
        double norm = -1.0;
        for (const BoundParam& bp : binding.bound()) {
            if (bp.segment == seg && bp.index == kBlockAttnOutIndex) {
                const auto it = grads.find(bp.node);
                if (it == grads.end()) {
                    throw ContractError("track_gradients: probe layer has no gradient");
                }
                norm = frobenius(it->second);
                break;
            }
        }
        if (norm < 0.0) throw ContractError("track_gradients: probe layer not found");
        norms.push_back(norm);
    }
    return norms;
}

}  // namespace detail

// Gradient-magnitude profile of the probed encoder's attention-output
// weights under the symmetric contrastive loss on a probe batch.
//
// EndToEnd: one backward pass through the full model, one entry per block.
// Progressive: block s is measured with the model truncated to s blocks, as
// each block would be at the stage that introduced it.
inline GradientProfile track_gradients(const EncoderState& probed, const EncoderState& other,
                                       const Segment& head_probed, const HeadSpec& spec_probed,
                                       const Segment& head_other, const HeadSpec& spec_other,
                                       const Tensor& x_probed, const Tensor& x_other,
                                       Temperature tau, ProfileMode mode) {
    const int depth = probed.depth();
    if (depth < 1) throw ContractError("track_gradients: probed encoder has no blocks");
    GradientProfile prof;
    if (mode == ProfileMode::EndToEnd) {
        prof.values = detail::probe_wo_norms(probed, other, head_probed, spec_probed,
                                             head_other, spec_other, x_probed, x_other,
                                             tau, depth);
    } else {
        for (int s = 1; s <= depth; ++s) {
            const auto norms = detail::probe_wo_norms(probed, other, head_probed,
                                                      spec_probed, head_other, spec_other,
                                                      x_probed, x_other, tau, s);
            prof.values.push_back(norms.back());  // the newest block at its own stage
        }
    }
    const double last = prof.values.back();
    if (last > 0.0) {
        for (double& v : prof.values) v /= last;
    }
    prof.values.back() = 1.0;
    return prof;
}

}  // namespace mmfl
