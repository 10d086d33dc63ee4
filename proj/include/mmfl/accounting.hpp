#pragma once

// Analytic resource ledgers: communication bytes, per-sample FLOPs and a
// peak-memory model, all derived from model-shape arithmetic alone.
//
// Conventions:
//  - parameters are exchanged as 32-bit floats; ledger bytes exclude the
//    wire manifest.
//  - a multiply-add counts as 2 FLOPs; attention score/value matmuls and
//    MLPs are counted, softmax/layernorm/GELU are not. Backward over the
//    differentiated subgraph costs 2x its forward. Token-lookup embeddings
//    cost no FLOPs; dense input projections do.
//  - memory counts fp32 bytes: parameters of every executed segment,
//    gradients and Adam moments for active segments only, and activations
//    retained for backward. A frozen block keeps only its output
//    activation; an active block keeps its internals.

#include <algorithm>
#include <cstdint>

#include "mmfl/plan.hpp"
#include "mmfl/tensor.hpp"

namespace mmfl {

struct EncoderShape {
    int seq = 0;
    int d = 0;
    int heads = 0;
    int mlp = 0;
    int in_dim = 0;          // dense input projection width (ignored for lookup)
    bool lookup_embed = false;
    int64_t vocab = 0;       // lookup table rows
    int pos_rows = 0;        // positional table rows; defaults to seq when 0
    int total_blocks = 0;

    int pos() const { return pos_rows > 0 ? pos_rows : seq; }
};

struct HeadShape {
    int in_dim = 0;
    int hidden = 0;
    int out = 0;
    bool two_layer = false;  // prediction head; projection heads have 3 layers
};

struct ModelShapes {
    EncoderShape enc_a;
    EncoderShape enc_b;
    HeadShape head_a;
    HeadShape head_b;
    bool has_sup_head = false;
    HeadShape head_sup;
};

// ---------------------------------------------------------------- parameters

inline int64_t embed_params(const EncoderShape& e) {
    const int64_t d = e.d;
    const int64_t table = e.lookup_embed
                              ? e.vocab * d
                              : static_cast<int64_t>(e.in_dim) * d + d;
    return table + static_cast<int64_t>(e.pos()) * d;
}

inline int64_t block_params(const EncoderShape& e) {
    const int64_t d = e.d, m = e.mlp;
    // attention 4(d^2+d), mlp d*m+m+m*d+d, two layernorms 4d
    return 4 * (d * d + d) + (d * m + m + m * d + d) + 4 * d;
}

inline int64_t head_params(const HeadShape& h) {
    const int64_t in = h.in_dim, hid = h.hidden, out = h.out;
    if (h.two_layer) return in * hid + hid + hid * out + out;
    return in * hid + hid + hid * hid + hid + hid * out + out;
}

inline int64_t heads_params(const ModelShapes& m) {
    int64_t n = head_params(m.head_a) + head_params(m.head_b);
    if (m.has_sup_head) n += head_params(m.head_sup);
    return n;
}

inline int64_t total_params(const ModelShapes& m) {
    return embed_params(m.enc_a) + embed_params(m.enc_b) +
           m.enc_a.total_blocks * block_params(m.enc_a) +
           m.enc_b.total_blocks * block_params(m.enc_b) + heads_params(m);
}

// Whether the embedding segments are in the active (trainable) set at a
// given 1-based stage.
inline bool embed_active(Strategy strategy, int stage) {
    return strategy != Strategy::LayerWise || stage == 1;
}

inline int64_t active_params(const ModelShapes& m, const StagePlan& plan,
                             Strategy strategy, int stage) {
    int64_t active_blocks_a = 0, active_blocks_b = 0;
    switch (strategy) {
        case Strategy::EndToEnd:
            active_blocks_a = m.enc_a.total_blocks;
            active_blocks_b = m.enc_b.total_blocks;
            break;
        case Strategy::Progressive:
            active_blocks_a = plan.blocks_a_through(stage);
            active_blocks_b = plan.blocks_b_through(stage);
            break;
        case Strategy::LayerWise:
            active_blocks_a = plan.growth_a[static_cast<size_t>(stage - 1)];
            active_blocks_b = plan.growth_b[static_cast<size_t>(stage - 1)];
            break;
    }
    int64_t n = active_blocks_a * block_params(m.enc_a) +
                active_blocks_b * block_params(m.enc_b) + heads_params(m);
    if (embed_active(strategy, stage)) {
        n += embed_params(m.enc_a) + embed_params(m.enc_b);
    }
    return n;
}

inline int64_t executed_params(const ModelShapes& m, const StagePlan& plan,
                               Strategy strategy, int stage) {
    const int64_t ba = strategy == Strategy::EndToEnd ? m.enc_a.total_blocks
                                                      : plan.blocks_a_through(stage);
    const int64_t bb = strategy == Strategy::EndToEnd ? m.enc_b.total_blocks
                                                      : plan.blocks_b_through(stage);
    return embed_params(m.enc_a) + embed_params(m.enc_b) + ba * block_params(m.enc_a) +
           bb * block_params(m.enc_b) + heads_params(m);
}

// ------------------------------------------------------------- communication

struct CommBytes {
    int64_t upload = 0;
    int64_t download = 0;
};

// Per-client exchange for one round: the active set travels once up and
// once down, at 4 bytes per parameter.
inline CommBytes comm_round_bytes(const ModelShapes& m, const StagePlan& plan,
                                  Strategy strategy, int stage) {
    const int64_t bytes = 4 * active_params(m, plan, strategy, stage);
    return {bytes, bytes};
}

inline int64_t comm_total_bytes(const ModelShapes& m, const StagePlan& plan,
                                Strategy strategy) {
    int64_t total = 0;
    for (int s = 1; s <= plan.stages; ++s) {
        const CommBytes cb = comm_round_bytes(m, plan, strategy, s);
        total += static_cast<int64_t>(plan.rounds[static_cast<size_t>(s - 1)]) *
                 (cb.upload + cb.download);
    }
    return total;
}

// --------------------------------------------------------------------- FLOPs

inline int64_t embed_fwd_flops(const EncoderShape& e) {
    if (e.lookup_embed) return 0;
    return 2LL * e.seq * e.in_dim * e.d;
}

inline int64_t block_fwd_flops(const EncoderShape& e) {
    const int64_t n = e.seq, d = e.d, m = e.mlp;
    // q/k/v/o projections, scores, context, two mlp matmuls
    return 8 * n * d * d + 4 * n * n * d + 4 * n * d * m;
}

inline int64_t head_fwd_flops(const HeadShape& h) {
    if (h.two_layer) return 2LL * (static_cast<int64_t>(h.in_dim) * h.hidden +
                                   static_cast<int64_t>(h.hidden) * h.out);
    return 2LL * (static_cast<int64_t>(h.in_dim) * h.hidden +
                  static_cast<int64_t>(h.hidden) * h.hidden +
                  static_cast<int64_t>(h.hidden) * h.out);
}

inline int64_t heads_fwd_flops(const ModelShapes& m) {
    int64_t f = head_fwd_flops(m.head_a) + head_fwd_flops(m.head_b);
    if (m.has_sup_head) f += head_fwd_flops(m.head_sup);
    return f;
}

struct FlopsCount {
    int64_t forward = 0;
    int64_t backward = 0;
    int64_t total() const { return forward + backward; }
};

// FLOPs for one input sample at a given stage. Forward covers every
// executed layer; backward covers the active segments and everything
// downstream of them, at twice the corresponding forward cost.
inline FlopsCount flops_per_sample(const ModelShapes& m, const StagePlan& plan,
                                   Strategy strategy, int stage) {
    const int64_t ba = strategy == Strategy::EndToEnd ? m.enc_a.total_blocks
                                                      : plan.blocks_a_through(stage);
    const int64_t bb = strategy == Strategy::EndToEnd ? m.enc_b.total_blocks
                                                      : plan.blocks_b_through(stage);
    FlopsCount fc;
    fc.forward = embed_fwd_flops(m.enc_a) + embed_fwd_flops(m.enc_b) +
                 ba * block_fwd_flops(m.enc_a) + bb * block_fwd_flops(m.enc_b) +
                 heads_fwd_flops(m);
    if (embed_active(strategy, stage)) {
        // Gradients flow through the whole executed model.
        fc.backward = 2 * fc.forward;
    } else {
        const int64_t ga = plan.growth_a[static_cast<size_t>(stage - 1)];
        const int64_t gb = plan.growth_b[static_cast<size_t>(stage - 1)];
        fc.backward = 2 * (ga * block_fwd_flops(m.enc_a) + gb * block_fwd_flops(m.enc_b) +
                           heads_fwd_flops(m));
    }
    return fc;
}

inline int64_t flops_total(const ModelShapes& m, const StagePlan& plan,
                           Strategy strategy, int epochs) {
    int64_t total = 0;
    for (int s = 1; s <= plan.stages; ++s) {
        total += static_cast<int64_t>(plan.rounds[static_cast<size_t>(s - 1)]) * epochs *
                 flops_per_sample(m, plan, strategy, s).total();
    }
    return total;
}

// -------------------------------------------------------------------- memory

struct MemoryEstimate {
    int64_t param_bytes = 0;
    int64_t grad_bytes = 0;
    int64_t optimizer_bytes = 0;
    int64_t activation_bytes = 0;
    int64_t total() const {
        return param_bytes + grad_bytes + optimizer_bytes + activation_bytes;
    }
};

inline int64_t block_full_act_floats(const EncoderShape& e) {
    // ln1, q, k, v, context, attn-out, ln2, mlp-hidden, mlp-out per token,
    // plus the attention probabilities
    const int64_t n = e.seq, d = e.d;
    return n * (8 * d + e.mlp) + static_cast<int64_t>(e.heads) * n * n;
}

inline int64_t block_boundary_act_floats(const EncoderShape& e) {
    return static_cast<int64_t>(e.seq) * e.d;
}

inline int64_t head_act_floats(const HeadShape& h) {
    return h.two_layer ? h.hidden + h.out : 2LL * h.hidden + h.out;
}

inline MemoryEstimate memory_estimate(const ModelShapes& m, const StagePlan& plan,
                                      Strategy strategy, int stage, int64_t batch) {
    if (batch < 1) throw ContractError("memory_estimate: batch must be >= 1");
    MemoryEstimate est;
    est.param_bytes = 4 * executed_params(m, plan, strategy, stage);
    const int64_t active = active_params(m, plan, strategy, stage);
    est.grad_bytes = 4 * active;
    est.optimizer_bytes = 8 * active;  // Adam first and second moments

    auto encoder_act = [&](const EncoderShape& e, int64_t executed, int64_t frozen) {
        int64_t floats = block_boundary_act_floats(e);  // embedding output
        floats += frozen * block_boundary_act_floats(e);
        floats += (executed - frozen) * block_full_act_floats(e);
        return floats;
    };
    const int64_t ba = strategy == Strategy::EndToEnd ? m.enc_a.total_blocks
                                                      : plan.blocks_a_through(stage);
    const int64_t bb = strategy == Strategy::EndToEnd ? m.enc_b.total_blocks
                                                      : plan.blocks_b_through(stage);
    int64_t frozen_a = 0, frozen_b = 0;
    if (strategy == Strategy::LayerWise) {
        frozen_a = ba - plan.growth_a[static_cast<size_t>(stage - 1)];
        frozen_b = bb - plan.growth_b[static_cast<size_t>(stage - 1)];
    }
    int64_t act = encoder_act(m.enc_a, ba, frozen_a) + encoder_act(m.enc_b, bb, frozen_b) +
                  head_act_floats(m.head_a) + head_act_floats(m.head_b);
    if (m.has_sup_head) act += head_act_floats(m.head_sup);
    est.activation_bytes = 4 * batch * act;
    return est;
}

inline int64_t memory_peak_bytes(const ModelShapes& m, const StagePlan& plan,
                                 Strategy strategy, int64_t batch) {
    int64_t peak = 0;
    for (int s = 1; s <= plan.stages; ++s) {
        if (plan.rounds[static_cast<size_t>(s - 1)] == 0) continue;
        peak = std::max(peak, memory_estimate(m, plan, strategy, s, batch).total());
    }
    return peak;
}

inline double to_mib(int64_t bytes) { return static_cast<double>(bytes) / (1024.0 * 1024.0); }

}  // namespace mmfl
