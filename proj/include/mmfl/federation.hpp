#pragma once

// The FL orchestrator: server stage/round loops, client local training,
// dataset-size-weighted aggregation and participant sampling.
//
// Client training is a pure function of (received model, local data, derived
// rng), so rounds are reproducible bit-for-bit regardless of how many worker
// threads execute the clients; the server always reduces in ascending client
// id order.

#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "mmfl/accounting.hpp"
#include "mmfl/data.hpp"
#include "mmfl/eval.hpp"
#include "mmfl/losses.hpp"
#include "mmfl/nn.hpp"
#include "mmfl/plan.hpp"
#include "mmfl/rng.hpp"
#include "mmfl/serialize.hpp"

namespace mmfl {

struct ProtocolError : ContractError {
    explicit ProtocolError(const std::string& m) : ContractError(m) {}
};

struct DualModel {
    EncoderState enc_a;
    EncoderState enc_b;
    HeadSpec hspec_a;
    HeadSpec hspec_b;
    Segment head_a;
    Segment head_b;
    bool supervised = false;
    HeadSpec hspec_sup;
    Segment head_sup;
};

// Canonical segment order: embeds, blocks, then head layers.
inline ParameterBundle extract_all(const DualModel& m) {
    ParameterBundle b;
    b.segments.push_back(m.enc_a.embed);
    for (const Segment& s : m.enc_a.blocks) b.segments.push_back(s);
    b.segments.push_back(m.enc_b.embed);
    for (const Segment& s : m.enc_b.blocks) b.segments.push_back(s);
    b.segments.push_back(m.head_a);
    b.segments.push_back(m.head_b);
    if (m.supervised) b.segments.push_back(m.head_sup);
    return b;
}

inline ParameterBundle extract_active(const DualModel& m) {
    ParameterBundle all = extract_all(m);
    ParameterBundle out;
    for (Segment& s : all.segments) {
        if (!s.frozen) out.segments.push_back(std::move(s));
    }
    return out;
}

// Installs segment values by name; frozen flags of the model are kept.
inline void install_bundle(DualModel& m, const ParameterBundle& bundle) {
    auto apply = [&](Segment& dst) {
        const Segment* src = bundle.find(dst.name);
        if (!src) return;
        if (src->params.size() != dst.params.size()) {
            throw ShapeError("install_bundle: segment layout mismatch for " + dst.name);
        }
        for (size_t i = 0; i < dst.params.size(); ++i) {
            if (!dst.params[i].same_shape(src->params[i])) {
                throw ShapeError("install_bundle: tensor shape mismatch in " + dst.name);
            }
            dst.params[i].data = src->params[i].data;
        }
    };
    apply(m.enc_a.embed);
    for (Segment& s : m.enc_a.blocks) apply(s);
    apply(m.enc_b.embed);
    for (Segment& s : m.enc_b.blocks) apply(s);
    apply(m.head_a);
    apply(m.head_b);
    if (m.supervised) apply(m.head_sup);
}

inline EncoderShape encoder_shape(const EncoderState& e, int total_blocks) {
    EncoderShape s;
    s.seq = e.spec.seq_len;
    s.d = e.spec.width;
    s.heads = e.spec.heads;
    s.mlp = e.spec.mlp_hidden;
    s.in_dim = e.in_dim;
    s.total_blocks = total_blocks;
    return s;
}

inline HeadShape head_shape(const HeadSpec& h) {
    return {h.in_dim, h.hidden_dim, h.out_dim, h.kind == HeadSpec::Kind::Prediction};
}

inline ModelShapes model_shapes(const DualModel& m, const StagePlan& plan) {
    ModelShapes s;
    s.enc_a = encoder_shape(m.enc_a, plan.total_blocks_a());
    s.enc_b = encoder_shape(m.enc_b, plan.total_blocks_b());
    s.head_a = head_shape(m.hspec_a);
    s.head_b = head_shape(m.hspec_b);
    s.has_sup_head = m.supervised;
    if (m.supervised) s.head_sup = head_shape(m.hspec_sup);
    return s;
}

// ------------------------------------------------------------------ FedAvg

// Elementwise dataset-weighted average. Bundles must be supplied in
// ascending client id order; the reduction is sequential in that order.
inline ParameterBundle fedavg(const std::vector<ParameterBundle>& bundles,
                              const std::vector<double>& weights) {
    if (bundles.empty() || bundles.size() != weights.size()) {
        throw ContractError("fedavg: bundle/weight count mismatch");
    }
    double wsum = 0.0;
    for (double w : weights) wsum += w;
    if (std::abs(wsum - 1.0) > 1e-9) throw ContractError("fedavg: weights must sum to 1");
    for (const ParameterBundle& b : bundles) {
        if (!bundles.front().compatible(b)) throw ShapeError("fedavg: incompatible bundles");
    }
    ParameterBundle out = bundles.front();
    for (Segment& seg : out.segments) {
        for (Tensor& t : seg.params) {
            for (double& v : t.data) v *= weights.front();
        }
    }
    for (size_t c = 1; c < bundles.size(); ++c) {
        for (size_t s = 0; s < out.segments.size(); ++s) {
            for (size_t p = 0; p < out.segments[s].params.size(); ++p) {
                auto& dst = out.segments[s].params[p].data;
                const auto& src = bundles[c].segments[s].params[p].data;
                for (size_t i = 0; i < dst.size(); ++i) dst[i] += weights[c] * src[i];
            }
        }
    }
    return out;
}

// Uniform sample of client ids [0, total) without replacement, returned
// sorted ascending.
inline std::vector<int> sample_participants(int total, int participating, RngStream rng) {
    if (participating < 1 || participating > total) {
        throw ContractError("sample_participants: participant count out of range");
    }
    std::vector<int> ids(static_cast<size_t>(total));
    std::iota(ids.begin(), ids.end(), 0);
    for (int i = 0; i < participating; ++i) {
        const int j = i + static_cast<int>(rng.below(static_cast<uint64_t>(total - i)));
        std::swap(ids[static_cast<size_t>(i)], ids[static_cast<size_t>(j)]);
    }
    ids.resize(static_cast<size_t>(participating));
    std::sort(ids.begin(), ids.end());
    return ids;
}

// ------------------------------------------------------------ local training

struct OptimizerSettings {
    bool use_sgd = false;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct FedRunConfig {
    Strategy strategy = Strategy::LayerWise;
    StagePlan plan;
    int clients = 10;
    int participants = 10;
    int epochs = 3;
    int64_t batch = 256;
    Temperature tau{0.05};
    OptimizerSettings optimizer;
    uint64_t seed = 0;
    int workers = 1;
    bool count_stage_broadcast = false;
    int eval_every = 0;  // evaluate held-out metrics every k rounds; 0 = final only

    // Per-segment learning rate, after the linear batch-size scaling rule
    // base_lr * B / 256.
    double lr_for(const std::string& segment, int stage) const {
        double base;
        if (segment.rfind("a/", 0) == 0) {
            base = plan.lr_enc_a[static_cast<size_t>(stage - 1)];
        } else if (segment.rfind("b/", 0) == 0) {
            base = plan.lr_enc_b[static_cast<size_t>(stage - 1)];
        } else {
            base = plan.lr_head;
        }
        return base * static_cast<double>(batch) / 256.0;
    }
};

struct ClientHandle {
    int id = 0;
    std::vector<int64_t> indices;
    double weight = 0.0;  // |D^n| / |D| over the full population
};

inline std::vector<ClientHandle> make_clients(const PartitionPlan& plan) {
    int64_t total = 0;
    for (const auto& a : plan.assignments) total += static_cast<int64_t>(a.size());
    std::vector<ClientHandle> out;
    for (size_t c = 0; c < plan.assignments.size(); ++c) {
        ClientHandle h;
        h.id = static_cast<int>(c);
        h.indices = plan.assignments[c];
        h.weight = static_cast<double>(h.indices.size()) / static_cast<double>(total);
        out.push_back(std::move(h));
    }
    return out;
}

namespace detail {

class AdamOptimizer {
  public:
    AdamOptimizer(OptimizerSettings settings) : s_(settings) {}

    void step(Tensor& param, const Tensor& grad, const std::string& key, double lr) {
        if (s_.use_sgd) {
            for (size_t i = 0; i < param.data.size(); ++i) {
                param.data[i] -= lr * grad.data[i];
            }
            return;
        }
        State& st = states_[key];
        if (st.m.data.empty()) {
            st.m = Tensor::zeros(param.shape);
            st.v = Tensor::zeros(param.shape);
        }
        st.t += 1;
        const double bc1 = 1.0 - std::pow(s_.beta1, st.t);
        const double bc2 = 1.0 - std::pow(s_.beta2, st.t);
        for (size_t i = 0; i < param.data.size(); ++i) {
            const double g = grad.data[i];
            st.m.data[i] = s_.beta1 * st.m.data[i] + (1.0 - s_.beta1) * g;
            st.v.data[i] = s_.beta2 * st.v.data[i] + (1.0 - s_.beta2) * g * g;
            const double mhat = st.m.data[i] / bc1;
            const double vhat = st.v.data[i] / bc2;
            param.data[i] -= lr * mhat / (std::sqrt(vhat) + s_.eps);
        }
    }

  private:
    struct State {
        Tensor m, v;
        int t = 0;
    };
    OptimizerSettings s_;
    std::map<std::string, State> states_;
};

struct ForwardOut {
    int za = -1;          // projection output (pre-normalization)
    int zb = -1;
    int loss = -1;
    ParamBinding binding;
};

inline ForwardOut batch_forward(Graph& g, const DualModel& model, const Tensor& xa,
                                const Tensor& xb, const std::vector<int>& labels,
                                Temperature tau) {
    ForwardOut out;
    const int ha = encoder_forward(model.enc_a, xa, g, out.binding);
    const int hb = encoder_forward(model.enc_b, xb, g, out.binding);
    out.za = head_forward(model.head_a, model.hspec_a, ha, g, out.binding);
    out.zb = head_forward(model.head_b, model.hspec_b, hb, g, out.binding);
    if (model.supervised) {
        const int fused = fuse_concat(g, out.za, out.zb);
        const int logits =
            head_forward(model.head_sup, model.hspec_sup, fused, g, out.binding);
        out.loss = cross_entropy(g, logits, labels);
    } else {
        const int na = g.l2norm_rows(out.za);
        const int nb = g.l2norm_rows(out.zb);
        out.loss = clip_loss(g, na, nb, tau);
    }
    return out;
}

}  // namespace detail

struct ClientResult {
    ParameterBundle update;  // exactly the active segments plus heads
    double mean_loss = 0.0;
};

// Local training: E epochs of mini-batch updates on the client's shard.
// Frozen segments take part in the forward pass but are never updated;
// optimizer state is local to the call.
inline ClientResult client_train(const DualModel& global, const PairedDataset& data,
                                 const std::vector<int64_t>& indices, int stage,
                                 const FedRunConfig& cfg, RngStream rng) {
    DualModel model = global;
    detail::AdamOptimizer opt(cfg.optimizer);
    double loss_sum = 0.0;
    int64_t steps = 0;

    // Name -> mutable segment for gradient application.
    std::map<std::string, Segment*> by_name;
    by_name[model.enc_a.embed.name] = &model.enc_a.embed;
    for (Segment& s : model.enc_a.blocks) by_name[s.name] = &s;
    by_name[model.enc_b.embed.name] = &model.enc_b.embed;
    for (Segment& s : model.enc_b.blocks) by_name[s.name] = &s;
    by_name[model.head_a.name] = &model.head_a;
    by_name[model.head_b.name] = &model.head_b;
    if (model.supervised) by_name[model.head_sup.name] = &model.head_sup;

    for (int e = 0; e < cfg.epochs; ++e) {
        const auto epoch_batches =
            batches(indices, cfg.batch, rng.derive("epoch", static_cast<uint64_t>(e)));
        for (const Batch& b : epoch_batches) {
            const Tensor xa = PairedDataset::gather(data.x_a, b.indices);
            const Tensor xb = PairedDataset::gather(data.x_b, b.indices);
            std::vector<int> labels;
            if (model.supervised) {
                for (int64_t i : b.indices) labels.push_back(data.labels[static_cast<size_t>(i)]);
            }
            Graph g;
            auto fwd = detail::batch_forward(g, model, xa, xb, labels, cfg.tau);
            loss_sum += g.value(fwd.loss).item();
            ++steps;
            const auto grads = g.grad(fwd.loss);
            for (const BoundParam& bp : fwd.binding.bound()) {
                const auto it = grads.find(bp.node);
                if (it == grads.end()) continue;
                Segment* seg = by_name.at(bp.segment);
                const double lr = cfg.lr_for(bp.segment, stage);
                opt.step(seg->params[static_cast<size_t>(bp.index)], it->second,
                         bp.segment + "#" + std::to_string(bp.index), lr);
            }
        }
    }
    ClientResult res;
    res.update = extract_active(model);
    res.mean_loss = steps > 0 ? loss_sum / static_cast<double>(steps) : 0.0;
    return res;
}

// --------------------------------------------------------------- round loop

struct EvalMetrics {
    bool has_retrieval = false;
    RetrievalResult retrieval;
    bool has_prf1 = false;
    MacroPRF1 prf1;
};

struct RoundRecord {
    int stage = 0;         // 1-based
    int round = 0;         // 1-based, global across stages
    double mean_loss = 0.0;
    int64_t up_bytes = 0;    // per client, serialized payload
    int64_t down_bytes = 0;
    int64_t fwd_flops = 0;   // per sample per epoch, analytic
    int64_t bwd_flops = 0;
    int64_t mem_bytes = 0;   // analytic peak estimate for this stage
    std::optional<EvalMetrics> eval;
};

struct GlobalState {
    DualModel model;
    int stage = 0;
    int round = 0;  // global round counter
    RngStream rng;
};

// Called after every round with a mutable record (evaluation metrics are
// attached this way before the record is archived).
using RoundObserver = std::function<void(const GlobalState&, RoundRecord&)>;

inline RoundRecord run_round(GlobalState& state, const FedRunConfig& cfg,
                             const std::vector<ClientHandle>& clients,
                             const PairedDataset& data) {
    const int stage = state.stage;
    state.round += 1;

    std::vector<int> participant_ids;
    if (cfg.participants < cfg.clients) {
        participant_ids = sample_participants(
            cfg.clients, cfg.participants,
            state.rng.derive("participants", static_cast<uint64_t>(state.round)));
    } else {
        participant_ids.resize(static_cast<size_t>(cfg.clients));
        std::iota(participant_ids.begin(), participant_ids.end(), 0);
    }

    // Population weights renormalized over the sampled participants.
    double wsum = 0.0;
    for (int id : participant_ids) wsum += clients[static_cast<size_t>(id)].weight;
    std::vector<double> weights;
    for (int id : participant_ids)
        weights.push_back(clients[static_cast<size_t>(id)].weight / wsum);

    std::vector<ClientResult> results(participant_ids.size());
    auto run_client = [&](size_t slot) {
        const ClientHandle& h = clients[static_cast<size_t>(participant_ids[slot])];
        results[slot] = client_train(
            state.model, data, h.indices, stage, cfg,
            state.rng.derive("client", static_cast<uint64_t>(state.round),
                             static_cast<uint64_t>(h.id)));
    };
    const int workers = std::max(1, std::min<int>(cfg.workers,
                                                  static_cast<int>(participant_ids.size())));
    if (workers == 1) {
        for (size_t i = 0; i < participant_ids.size(); ++i) run_client(i);
    } else {
        std::atomic<size_t> next{0};
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (;;) {
                    const size_t i = next.fetch_add(1);
                    if (i >= participant_ids.size()) return;
                    run_client(i);
                }
            });
        }
        for (auto& t : pool) t.join();
    }

    std::vector<ParameterBundle> bundles;
    double loss_sum = 0.0;
    for (ClientResult& r : results) {
        loss_sum += r.mean_loss;
        bundles.push_back(std::move(r.update));
    }
    const ParameterBundle aggregate = fedavg(bundles, weights);
    install_bundle(state.model, aggregate);

    RoundRecord rec;
    rec.stage = stage;
    rec.round = state.round;
    rec.mean_loss = loss_sum / static_cast<double>(results.size());
    rec.down_bytes = payload_bytes(extract_active(state.model));
    rec.up_bytes = rec.down_bytes;
    const ModelShapes shapes = model_shapes(state.model, cfg.plan);
    const FlopsCount fc = flops_per_sample(shapes, cfg.plan, cfg.strategy, stage);
    rec.fwd_flops = fc.forward;
    rec.bwd_flops = fc.backward;
    rec.mem_bytes = memory_estimate(shapes, cfg.plan, cfg.strategy, stage, cfg.batch).total();
    return rec;
}

// ------------------------------------------------------------- experiment run

struct RunResult {
    GlobalState state;
    std::vector<RoundRecord> history;
    int64_t comm_total_up = 0;
    int64_t comm_total_down = 0;
    int64_t stage_broadcast_bytes = 0;  // prefix distribution at stage transitions
};

inline DualModel init_global_model(int in_a, const BlockSpec& spec_a, int in_b,
                                   const BlockSpec& spec_b, const HeadSpec& hspec,
                                   bool supervised, int classes, int sup_hidden,
                                   RngStream rng) {
    DualModel m;
    m.enc_a = make_encoder(in_a, spec_a, rng.derive("embed-a"), "a");
    m.enc_b = make_encoder(in_b, spec_b, rng.derive("embed-b"), "b");
    m.hspec_a = hspec;
    m.hspec_a.in_dim = spec_a.width;
    m.hspec_b = hspec;
    m.hspec_b.in_dim = spec_b.width;
    m.head_a = init_head(m.hspec_a, rng.derive("head-a"), "head/a");
    m.head_b = init_head(m.hspec_b, rng.derive("head-b"), "head/b");
    m.supervised = supervised;
    if (supervised) {
        m.hspec_sup = HeadSpec{HeadSpec::Kind::Prediction, 2 * hspec.out_dim, sup_hidden,
                               classes};
        m.head_sup = init_head(m.hspec_sup, rng.derive("head-sup"), "head/sup");
    }
    return m;
}

// Attach the stage's new layers (init order: modality a first), honoring the
// strategy's freeze rule, and run the stage's rounds.
inline void run_stage(GlobalState& state, const FedRunConfig& cfg,
                      const std::vector<ClientHandle>& clients, const PairedDataset& data,
                      RunResult& result, const RoundObserver& observer) {
    state.stage += 1;
    const int s = state.stage;
    if (s > cfg.plan.stages) throw ProtocolError("run_stage: stage index beyond plan");
    const bool freeze_prior = cfg.strategy == Strategy::LayerWise;

    std::vector<Segment> new_a, new_b;
    for (int i = 0; i < cfg.plan.growth_a[static_cast<size_t>(s - 1)]; ++i) {
        const int idx = state.model.enc_a.depth() + static_cast<int>(new_a.size()) + 1;
        new_a.push_back(init_block(
            state.model.enc_a.spec,
            state.rng.derive("init-a", static_cast<uint64_t>(s), static_cast<uint64_t>(idx)),
            "a/block" + std::to_string(idx)));
    }
    for (int i = 0; i < cfg.plan.growth_b[static_cast<size_t>(s - 1)]; ++i) {
        const int idx = state.model.enc_b.depth() + static_cast<int>(new_b.size()) + 1;
        new_b.push_back(init_block(
            state.model.enc_b.spec,
            state.rng.derive("init-b", static_cast<uint64_t>(s), static_cast<uint64_t>(idx)),
            "b/block" + std::to_string(idx)));
    }
    state.model.enc_a = attach_block(std::move(state.model.enc_a), std::move(new_a),
                                     freeze_prior);
    state.model.enc_b = attach_block(std::move(state.model.enc_b), std::move(new_b),
                                     freeze_prior);

    for (int r = 0; r < cfg.plan.rounds[static_cast<size_t>(s - 1)]; ++r) {
        RoundRecord rec = run_round(state, cfg, clients, data);
        result.comm_total_up += rec.up_bytes;
        result.comm_total_down += rec.down_bytes;
        if (observer) observer(state, rec);
        result.history.push_back(std::move(rec));
    }

    // Stage-end distribution of the finalized layers as next-stage frozen
    // prefix. Broadcast to all clients; excluded from the default ledger.
    ParameterBundle finalized;
    for (int i = cfg.plan.blocks_a_through(s - 1); i < cfg.plan.blocks_a_through(s); ++i) {
        finalized.segments.push_back(state.model.enc_a.blocks[static_cast<size_t>(i)]);
    }
    for (int i = cfg.plan.blocks_b_through(s - 1); i < cfg.plan.blocks_b_through(s); ++i) {
        finalized.segments.push_back(state.model.enc_b.blocks[static_cast<size_t>(i)]);
    }
    result.stage_broadcast_bytes +=
        static_cast<int64_t>(cfg.clients) * payload_bytes(finalized);
}

// Inference-only pass producing both projection outputs for a dataset.
inline std::pair<Tensor, Tensor> forward_projections(const DualModel& m,
                                                     const PairedDataset& data) {
    std::vector<int64_t> idx(static_cast<size_t>(data.n));
    std::iota(idx.begin(), idx.end(), 0);
    const Tensor xa = PairedDataset::gather(data.x_a, idx);
    const Tensor xb = PairedDataset::gather(data.x_b, idx);
    Graph g;
    ParamBinding binding;
    const int ha = encoder_forward(m.enc_a, xa, g, binding);
    const int hb = encoder_forward(m.enc_b, xb, g, binding);
    const int za = head_forward(m.head_a, m.hspec_a, ha, g, binding);
    const int zb = head_forward(m.head_b, m.hspec_b, hb, g, binding);
    return {g.value(za), g.value(zb)};
}

inline EvalMetrics evaluate_model(const DualModel& m, const PairedDataset& heldout,
                                  Temperature /*tau*/) {
    EvalMetrics out;
    auto [za, zb] = forward_projections(m, heldout);
    if (m.supervised) {
        Graph g;
        ParamBinding binding;
        const int fused = g.concat_cols(g.constant(za), g.constant(zb));
        const int logits = head_forward(m.head_sup, m.hspec_sup, fused, g, binding);
        const Tensor& lv = g.value(logits);
        std::vector<int> preds;
        const int64_t C = lv.dim(1);
        for (int64_t i = 0; i < lv.dim(0); ++i) {
            int best = 0;
            for (int64_t c = 1; c < C; ++c) {
                if (lv.data[static_cast<size_t>(i * C + c)] >
                    lv.data[static_cast<size_t>(i * C + best)]) {
                    best = static_cast<int>(c);
                }
            }
            preds.push_back(best);
        }
        out.prf1 = macro_prf1(preds, heldout.labels, static_cast<int>(C));
        out.has_prf1 = true;
    }
    std::vector<int> ks;
    for (int k : {1, 5, 10, 50}) {
        if (heldout.n >= k) ks.push_back(k);
    }
    if (!ks.empty()) {
        out.retrieval =
            retrieval_recall(l2_normalize_rows(za), l2_normalize_rows(zb), ks);
        out.has_retrieval = true;
    }
    return out;
}

struct ModelConfig {
    int in_a = 0;
    BlockSpec spec_a;
    int in_b = 0;
    BlockSpec spec_b;
    int head_hidden = 0;
    int head_out = 0;
    bool supervised = false;
    int classes = 0;
    int sup_hidden = 256;
};

struct ExperimentData {
    PairedDataset train;
    PairedDataset heldout;
    PartitionPlan partition;
};

// Executes every stage of the plan and returns the assembled encoders and
// heads plus the full per-round history.
inline RunResult server_run(const ModelConfig& mc, const FedRunConfig& cfg,
                            const ExperimentData& data,
                            const RoundObserver& user_observer = nullptr) {
    cfg.plan.validate();
    if (cfg.participants < 1 || cfg.participants > cfg.clients) {
        throw ContractError("server_run: participants out of range");
    }
    if (static_cast<int>(data.partition.assignments.size()) != cfg.clients) {
        throw ContractError("server_run: partition does not match client count");
    }
    HeadSpec hspec{HeadSpec::Kind::Projection, 0, mc.head_hidden, mc.head_out};

    GlobalState state;
    state.rng = RngStream(cfg.seed);
    state.model = init_global_model(mc.in_a, mc.spec_a, mc.in_b, mc.spec_b, hspec,
                                    mc.supervised, mc.classes, mc.sup_hidden, state.rng);
    const std::vector<ClientHandle> clients = make_clients(data.partition);

    RunResult result;
    const int total_rounds = cfg.plan.total_rounds();
    RoundObserver hook = [&](const GlobalState& s, RoundRecord& rec) {
        const bool last = rec.round == total_rounds;
        if ((cfg.eval_every > 0 && rec.round % cfg.eval_every == 0) || last) {
            rec.eval = evaluate_model(s.model, data.heldout, cfg.tau);
        }
        if (user_observer) user_observer(s, rec);
    };
    for (int s = 1; s <= cfg.plan.stages; ++s) {
        run_stage(state, cfg, clients, data.train, result, hook);
    }
    result.state = std::move(state);
    return result;
}

}  // namespace mmfl
