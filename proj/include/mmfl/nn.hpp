#pragma once

// Transformer encoder blocks, embedding layers, projection/prediction heads
// and the attach/freeze mechanics used by the staged training strategies.

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mmfl/graph.hpp"
#include "mmfl/rng.hpp"
#include "mmfl/tensor.hpp"

namespace mmfl {

struct BlockSpec {
    int width = 0;       // model dimension d
    int heads = 0;
    int mlp_hidden = 0;
    int seq_len = 0;

    void validate() const {
        if (width <= 0 || heads <= 0 || mlp_hidden <= 0 || seq_len <= 0) {
            throw ContractError("BlockSpec: all fields must be positive");
        }
        if (width % heads != 0) throw ContractError("BlockSpec: width not divisible by heads");
    }
};

struct HeadSpec {
    enum class Kind { Projection, Prediction };
    Kind kind = Kind::Projection;
    int in_dim = 0;
    int hidden_dim = 0;
    int out_dim = 0;

    void validate() const {
        if (in_dim <= 0 || hidden_dim <= 0 || out_dim <= 0) {
            throw ContractError("HeadSpec: all dimensions must be positive");
        }
    }
};

// One exchangeable, aggregatable unit of parameters. Tensors keep their
// structured shapes; the serialized form flattens them.
struct Segment {
    std::string name;
    std::vector<Tensor> params;
    bool frozen = false;

    int64_t param_count() const {
        int64_t n = 0;
        for (const Tensor& t : params) n += t.size();
        return n;
    }
};

struct ParameterBundle {
    std::vector<Segment> segments;

    int64_t param_count() const {
        int64_t n = 0;
        for (const Segment& s : segments) n += s.param_count();
        return n;
    }

    const Segment* find(const std::string& name) const {
        for (const Segment& s : segments)
            if (s.name == name) return &s;
        return nullptr;
    }

    bool compatible(const ParameterBundle& o) const {
        if (segments.size() != o.segments.size()) return false;
        for (size_t i = 0; i < segments.size(); ++i) {
            if (segments[i].name != o.segments[i].name) return false;
            if (segments[i].params.size() != o.segments[i].params.size()) return false;
            for (size_t j = 0; j < segments[i].params.size(); ++j) {
                if (segments[i].params[j].shape != o.segments[i].params[j].shape) return false;
            }
        }
        return true;
    }
};

namespace detail {

inline Tensor init_weight(int64_t fan_in, std::vector<int64_t> shape, RngStream& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.data) v = rng.uniform(-bound, bound);
    return t;
}

}  // namespace detail

// Embedding segment: input projection W[in,d] + b[d] and positional table
// P[seq,d]. The positional table is drawn like a weight with fan_in = d.
inline Segment init_embed(int in_dim, const BlockSpec& spec, RngStream rng,
                          std::string name) {
    spec.validate();
    if (in_dim <= 0) throw ContractError("init_embed: in_dim must be positive");
    Segment s;
    s.name = std::move(name);
    s.params.push_back(detail::init_weight(in_dim, {in_dim, spec.width}, rng));
    s.params.push_back(Tensor::zeros({spec.width}));
    s.params.push_back(detail::init_weight(spec.width, {spec.seq_len, spec.width}, rng));
    return s;
}

// Pre-norm transformer block parameters, in forward order:
// ln1(g,b), Wq,bq, Wk,bk, Wv,bv, Wo,bo, ln2(g,b), W1,b1, W2,b2
inline Segment init_block(const BlockSpec& spec, RngStream rng, std::string name) {
    spec.validate();
    const int64_t d = spec.width, m = spec.mlp_hidden;
    Segment s;
    s.name = std::move(name);
    s.params.push_back(Tensor::full({d}, 1.0));  // ln1 gain
    s.params.push_back(Tensor::zeros({d}));      // ln1 bias
    for (int i = 0; i < 4; ++i) {                // Wq/Wk/Wv/Wo + biases
        s.params.push_back(detail::init_weight(d, {d, d}, rng));
        s.params.push_back(Tensor::zeros({d}));
    }
    s.params.push_back(Tensor::full({d}, 1.0));  // ln2 gain
    s.params.push_back(Tensor::zeros({d}));      // ln2 bias
    s.params.push_back(detail::init_weight(d, {d, m}, rng));
    s.params.push_back(Tensor::zeros({m}));
    s.params.push_back(detail::init_weight(m, {m, d}, rng));
    s.params.push_back(Tensor::zeros({d}));
    return s;
}

// Index of the attention-output weight Wo within a block segment.
inline constexpr int kBlockAttnOutIndex = 8;

inline Segment init_head(const HeadSpec& spec, RngStream rng, std::string name) {
    spec.validate();
    Segment s;
    s.name = std::move(name);
    const int64_t in = spec.in_dim, h = spec.hidden_dim, out = spec.out_dim;
    if (spec.kind == HeadSpec::Kind::Projection) {
        s.params.push_back(detail::init_weight(in, {in, h}, rng));
        s.params.push_back(Tensor::zeros({h}));
        s.params.push_back(detail::init_weight(h, {h, h}, rng));
        s.params.push_back(Tensor::zeros({h}));
        s.params.push_back(detail::init_weight(h, {h, out}, rng));
        s.params.push_back(Tensor::zeros({out}));
    } else {
        s.params.push_back(detail::init_weight(in, {in, h}, rng));
        s.params.push_back(Tensor::zeros({h}));
        s.params.push_back(detail::init_weight(h, {h, out}, rng));
        s.params.push_back(Tensor::zeros({out}));
    }
    return s;
}

struct EncoderState {
    int in_dim = 0;
    BlockSpec spec;
    Segment embed;
    std::vector<Segment> blocks;
    int frozen_count = 0;  // leading blocks excluded from training

    int depth() const { return static_cast<int>(blocks.size()); }
};

inline EncoderState make_encoder(int in_dim, const BlockSpec& spec, RngStream rng,
                                 const std::string& prefix) {
    EncoderState e;
    e.in_dim = in_dim;
    e.spec = spec;
    e.embed = init_embed(in_dim, spec, rng, prefix + "/embed");
    return e;
}

// Appends blocks; in layer-wise mode freezes everything that existed before,
// including the embedding once the encoder is more than zero stages old.
inline EncoderState attach_block(EncoderState enc, std::vector<Segment> new_blocks,
                                 bool freeze_prior) {
    for (const Segment& b : new_blocks) {
        if (b.params.size() != 16 || b.params[2].dim(0) != enc.spec.width) {
            throw ShapeError("attach_block: block width mismatch");
        }
    }
    const int prior = enc.depth();
    if (freeze_prior) {
        enc.frozen_count = prior;
        for (int i = 0; i < prior; ++i) enc.blocks[static_cast<size_t>(i)].frozen = true;
        enc.embed.frozen = prior > 0;
    } else {
        enc.frozen_count = 0;
    }
    for (Segment& b : new_blocks) {
        b.frozen = false;
        enc.blocks.push_back(std::move(b));
    }
    return enc;
}

// Registers a segment's parameters as graph leaves. Frozen segments become
// constants, so they take part in the forward pass but never in grad().
struct BoundParam {
    int node = -1;
    std::string segment;
    int index = -1;
};

class ParamBinding {
  public:
    std::vector<int> bind(Graph& g, const Segment& seg) {
        std::vector<int> ids;
        ids.reserve(seg.params.size());
        for (size_t i = 0; i < seg.params.size(); ++i) {
            const int id = g.leaf(seg.params[i], !seg.frozen);
            ids.push_back(id);
            bound_.push_back({id, seg.name, static_cast<int>(i)});
        }
        return ids;
    }

    const std::vector<BoundParam>& bound() const { return bound_; }

  private:
    std::vector<BoundParam> bound_;
};

namespace detail {

inline int block_forward(Graph& g, const std::vector<int>& p, int x, const BlockSpec& spec) {
    // p layout mirrors init_block
    const int u = g.layer_norm(x, p[0], p[1]);
    const int q = g.split_heads(g.linear(u, p[2], p[3]), spec.heads);
    const int k = g.split_heads(g.linear(u, p[4], p[5]), spec.heads);
    const int v = g.split_heads(g.linear(u, p[6], p[7]), spec.heads);
    const double dh = static_cast<double>(spec.width / spec.heads);
    const int scores = g.scale(g.bmm_nt(q, k), 1.0 / std::sqrt(dh));
    const int probs = g.softmax_last(scores);
    const int ctx = g.merge_heads(g.bmm_nn(probs, v), spec.heads);
    const int attn = g.linear(ctx, p[8], p[9]);
    const int h = g.add(x, attn);
    const int w = g.layer_norm(h, p[10], p[11]);
    const int mlp = g.linear(g.gelu(g.linear(w, p[12], p[13])), p[14], p[15]);
    return g.add(h, mlp);
}

}  // namespace detail

// Embeds tokens, applies the block stack and mean-pools tokens to one vector
// per sample. x is [batch, seq, in_dim].
inline int encoder_forward(const EncoderState& enc, const Tensor& x, Graph& g,
                           ParamBinding& binding) {
    if (x.rank() != 3 || x.dim(1) != enc.spec.seq_len || x.dim(2) != enc.in_dim) {
        throw ShapeError("encoder_forward: input shape mismatch");
    }
    const int xin = g.constant(x);
    const auto ep = binding.bind(g, enc.embed);
    int h = g.add_rows(g.linear(xin, ep[0], ep[1]), ep[2]);
    for (const Segment& b : enc.blocks) {
        const auto bp = binding.bind(g, b);
        h = detail::block_forward(g, bp, h, enc.spec);
    }
    return g.mean_tokens(h);
}

// MLP head with GELU between layers and a linear output.
inline int head_forward(const Segment& head, const HeadSpec& spec, int v, Graph& g,
                        ParamBinding& binding) {
    spec.validate();
    if (g.value(v).shape.back() != spec.in_dim) {
        throw ShapeError("head_forward: input width mismatch");
    }
    const auto p = binding.bind(g, head);
    if (spec.kind == HeadSpec::Kind::Projection) {
        int h = g.gelu(g.linear(v, p[0], p[1]));
        h = g.gelu(g.linear(h, p[2], p[3]));
        return g.linear(h, p[4], p[5]);
    }
    const int h = g.gelu(g.linear(v, p[0], p[1]));
    return g.linear(h, p[2], p[3]);
}

// Fixed (modality a, modality b) column order.
inline int fuse_concat(Graph& g, int za, int zb) { return g.concat_cols(za, zb); }

inline Tensor fuse_concat(const Tensor& za, const Tensor& zb) {
    Graph g;
    return g.value(g.concat_cols(g.constant(za), g.constant(zb)));
}

}  // namespace mmfl
