#pragma once

// Reverse-mode automatic differentiation on an append-only tape.
//
// Each node records its operation tag, parent ids and cached output, so the
// whole graph can be re-executed from the leaves (used by fd_check). Parents
// always precede their node, giving a topological order by construction.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <unordered_map>
#include <vector>

#include "mmfl/tensor.hpp"

namespace mmfl {

enum class Op {
    Leaf,
    Linear,       // X[..,k] * W[k,m] + b[m]
    Add,          // elementwise, same shape
    AddRows,      // X[B,s,d] + P[s,d] broadcast over the leading axis
    LayerNorm,    // last axis, with gain/bias parents
    Gelu,
    Mul,          // elementwise
    Scale,        // constant multiple
    SplitHeads,   // [B,s,d] -> [B*h, s, d/h]
    MergeHeads,   // [B*h, s, d/h] -> [B,s,d]
    BmmNT,        // A[G,n,k] x B[G,m,k]^T -> [G,n,m]
    BmmNN,        // A[G,n,m] x B[G,m,k]   -> [G,n,k]
    MatmulNT,     // A[m,k] x B[n,k]^T -> [m,n]
    SoftmaxLast,
    MeanTokens,   // [B,s,d] -> [B,d]
    L2NormRows,   // rank-2 rows to unit norm
    ConcatCols,   // [B,p] ++ [B,q] -> [B,p+q]
    NllDiag,      // mean_i (logsumexp(S_i) - S_ii), S square
    NllLabels,    // mean_i (logsumexp(S_i) - S_{i,y_i})
    SumAll,
    LinComb,      // scalar-coefficient combination of same-shape parents
};

struct Node {
    Op op = Op::Leaf;
    std::vector<int> parents;
    Tensor value;
    bool trainable = false;   // leaves only
    double scalar = 0.0;      // Scale factor / eps for LayerNorm and L2NormRows
    int heads = 0;            // SplitHeads / MergeHeads
    std::vector<int> labels;       // NllLabels
    std::vector<double> coeffs;    // LinComb
};

class Graph {
  public:
    int leaf(Tensor t, bool trainable) {
        Node n;
        n.op = Op::Leaf;
        n.value = std::move(t);
        n.trainable = trainable;
        return push(std::move(n));
    }

    int constant(Tensor t) { return leaf(std::move(t), false); }

    int linear(int x, int w, int b) { return emit(Op::Linear, {x, w, b}); }
    int add(int a, int b) { return emit(Op::Add, {a, b}); }
    int add_rows(int x, int p) { return emit(Op::AddRows, {x, p}); }
    int gelu(int x) { return emit(Op::Gelu, {x}); }
    int mul(int a, int b) { return emit(Op::Mul, {a, b}); }

    int layer_norm(int x, int gain, int bias, double eps = 1e-5) {
        Node n;
        n.op = Op::LayerNorm;
        n.parents = {x, gain, bias};
        n.scalar = eps;
        n.value = eval(n);
        return push(std::move(n));
    }

    int scale(int x, double c) {
        Node n;
        n.op = Op::Scale;
        n.parents = {x};
        n.scalar = c;
        n.value = eval(n);
        return push(std::move(n));
    }

    int split_heads(int x, int h) {
        Node n;
        n.op = Op::SplitHeads;
        n.parents = {x};
        n.heads = h;
        n.value = eval(n);
        return push(std::move(n));
    }

    int merge_heads(int x, int h) {
        Node n;
        n.op = Op::MergeHeads;
        n.parents = {x};
        n.heads = h;
        n.value = eval(n);
        return push(std::move(n));
    }

    int bmm_nt(int a, int b) { return emit(Op::BmmNT, {a, b}); }
    int bmm_nn(int a, int b) { return emit(Op::BmmNN, {a, b}); }
    int matmul_nt(int a, int b) { return emit(Op::MatmulNT, {a, b}); }
    int softmax_last(int x) { return emit(Op::SoftmaxLast, {x}); }
    int mean_tokens(int x) { return emit(Op::MeanTokens, {x}); }

    int l2norm_rows(int x, double eps = 1e-12) {
        Node n;
        n.op = Op::L2NormRows;
        n.parents = {x};
        n.scalar = eps;
        n.value = eval(n);
        return push(std::move(n));
    }

    int concat_cols(int a, int b) { return emit(Op::ConcatCols, {a, b}); }
    int nll_diag(int s) { return emit(Op::NllDiag, {s}); }

    int nll_labels(int s, std::vector<int> labels) {
        Node n;
        n.op = Op::NllLabels;
        n.parents = {s};
        n.labels = std::move(labels);
        n.value = eval(n);
        return push(std::move(n));
    }

    int sum_all(int x) { return emit(Op::SumAll, {x}); }

    int lincomb(std::vector<int> parents, std::vector<double> coeffs) {
        Node n;
        n.op = Op::LinComb;
        n.parents = std::move(parents);
        n.coeffs = std::move(coeffs);
        n.value = eval(n);
        return push(std::move(n));
    }

    const Tensor& value(int id) const { return nodes_[static_cast<size_t>(id)].value; }
    const Node& node(int id) const { return nodes_[static_cast<size_t>(id)]; }
    int num_nodes() const { return static_cast<int>(nodes_.size()); }

    // Test hook: replace a leaf value and refresh downstream caches lazily
    // via recompute().
    void set_leaf(int id, Tensor t) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (n.op != Op::Leaf) throw ContractError("set_leaf on non-leaf node");
        if (!n.value.same_shape(t)) throw ShapeError("set_leaf shape mismatch");
        n.value = std::move(t);
    }

    void recompute() {
        for (Node& n : nodes_) {
            if (n.op != Op::Leaf) n.value = eval(n);
        }
    }

    // Reverse pass from a scalar loss node. Returns gradients for every
    // trainable leaf reachable from the loss; frozen/constant leaves and
    // unreachable leaves get no entry.
    std::unordered_map<int, Tensor> grad(int loss) const {
        if (value(loss).size() != 1) throw ContractError("grad: loss node is not scalar");
        std::vector<Tensor> adj(nodes_.size());
        std::vector<bool> has(nodes_.size(), false);
        adj[static_cast<size_t>(loss)] = Tensor::scalar(1.0);
        has[static_cast<size_t>(loss)] = true;

        for (int id = loss; id >= 0; --id) {
            if (!has[static_cast<size_t>(id)]) continue;
            const Node& n = nodes_[static_cast<size_t>(id)];
            if (n.op == Op::Leaf) continue;
            backward(n, adj[static_cast<size_t>(id)], adj, has);
        }

        std::unordered_map<int, Tensor> out;
        for (int id = 0; id <= loss; ++id) {
            const Node& n = nodes_[static_cast<size_t>(id)];
            if (n.op == Op::Leaf && n.trainable && has[static_cast<size_t>(id)]) {
                out.emplace(id, std::move(adj[static_cast<size_t>(id)]));
            }
        }
        return out;
    }

  private:
    std::vector<Node> nodes_;

    int push(Node n) {
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

    int emit(Op op, std::vector<int> parents) {
        Node n;
        n.op = op;
        n.parents = std::move(parents);
        n.value = eval(n);
        return push(std::move(n));
    }

    const Tensor& pv(const Node& n, int i) const {
        return nodes_[static_cast<size_t>(n.parents[static_cast<size_t>(i)])].value;
    }

    Tensor eval(const Node& n) const {
        switch (n.op) {
            case Op::Leaf:
                return n.value;
            case Op::Linear: {
                const Tensor& x = pv(n, 0);
                const Tensor& w = pv(n, 1);
                const Tensor& b = pv(n, 2);
                const int64_t k = w.dim(0), m = w.dim(1);
                if (x.shape.back() != k) throw ShapeError("linear: input width mismatch");
                if (b.size() != m) throw ShapeError("linear: bias width mismatch");
                const int64_t rows = x.size() / k;
                std::vector<int64_t> out_shape = x.shape;
                out_shape.back() = m;
                Tensor y = Tensor::zeros(std::move(out_shape));
                for (int64_t r = 0; r < rows; ++r) {
                    const double* xr = &x.data[static_cast<size_t>(r * k)];
                    double* yr = &y.data[static_cast<size_t>(r * m)];
                    for (int64_t j = 0; j < m; ++j) yr[j] = b.data[static_cast<size_t>(j)];
                    for (int64_t p = 0; p < k; ++p) {
                        const double xv = xr[p];
                        if (xv == 0.0) continue;
                        const double* wrow = &w.data[static_cast<size_t>(p * m)];
                        for (int64_t j = 0; j < m; ++j) yr[j] += xv * wrow[j];
                    }
                }
                return y;
            }
            case Op::Add: {
                const Tensor& a = pv(n, 0);
                const Tensor& b = pv(n, 1);
                if (!a.same_shape(b)) throw ShapeError("add: shape mismatch");
                Tensor y = a;
                for (size_t i = 0; i < y.data.size(); ++i) y.data[i] += b.data[i];
                return y;
            }
            case Op::AddRows: {
                const Tensor& x = pv(n, 0);
                const Tensor& p = pv(n, 1);
                if (x.rank() != 3 || p.rank() != 2 || x.dim(1) != p.dim(0) ||
                    x.dim(2) != p.dim(1)) {
                    throw ShapeError("add_rows: shape mismatch");
                }
                Tensor y = x;
                const int64_t sd = p.size();
                const int64_t batch = x.dim(0);
                for (int64_t b = 0; b < batch; ++b) {
                    double* yr = &y.data[static_cast<size_t>(b * sd)];
                    for (int64_t i = 0; i < sd; ++i) yr[i] += p.data[static_cast<size_t>(i)];
                }
                return y;
            }
            case Op::LayerNorm:
                return mmfl::layer_norm(pv(n, 0), pv(n, 1), pv(n, 2), n.scalar);
            case Op::Gelu: {
                Tensor y = pv(n, 0);
                for (double& v : y.data) v = gelu_scalar(v);
                return y;
            }
            case Op::Mul: {
                const Tensor& a = pv(n, 0);
                const Tensor& b = pv(n, 1);
                if (!a.same_shape(b)) throw ShapeError("mul: shape mismatch");
                Tensor y = a;
                for (size_t i = 0; i < y.data.size(); ++i) y.data[i] *= b.data[i];
                return y;
            }
            case Op::Scale: {
                Tensor y = pv(n, 0);
                for (double& v : y.data) v *= n.scalar;
                return y;
            }
            case Op::SplitHeads: {
                const Tensor& x = pv(n, 0);
                const int h = n.heads;
                if (x.rank() != 3 || x.dim(2) % h != 0) {
                    throw ShapeError("split_heads: bad shape");
                }
                const int64_t B = x.dim(0), s = x.dim(1), d = x.dim(2), dh = d / h;
                Tensor y = Tensor::zeros({B * h, s, dh});
                for (int64_t b = 0; b < B; ++b)
                    for (int i = 0; i < h; ++i)
                        for (int64_t t = 0; t < s; ++t)
                            for (int64_t j = 0; j < dh; ++j)
                                y.data[static_cast<size_t>(((b * h + i) * s + t) * dh + j)] =
                                    x.data[static_cast<size_t>((b * s + t) * d + i * dh + j)];
                return y;
            }
            case Op::MergeHeads: {
                const Tensor& x = pv(n, 0);
                const int h = n.heads;
                if (x.rank() != 3 || x.dim(0) % h != 0) {
                    throw ShapeError("merge_heads: bad shape");
                }
                const int64_t B = x.dim(0) / h, s = x.dim(1), dh = x.dim(2), d = dh * h;
                Tensor y = Tensor::zeros({B, s, d});
                for (int64_t b = 0; b < B; ++b)
                    for (int i = 0; i < h; ++i)
                        for (int64_t t = 0; t < s; ++t)
                            for (int64_t j = 0; j < dh; ++j)
                                y.data[static_cast<size_t>((b * s + t) * d + i * dh + j)] =
                                    x.data[static_cast<size_t>(((b * h + i) * s + t) * dh + j)];
                return y;
            }
            case Op::BmmNT: {
                const Tensor& a = pv(n, 0);
                const Tensor& b = pv(n, 1);
                if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) ||
                    a.dim(2) != b.dim(2)) {
                    throw ShapeError("bmm_nt: shape mismatch");
                }
                const int64_t G = a.dim(0), rn = a.dim(1), k = a.dim(2), rm = b.dim(1);
                Tensor y = Tensor::zeros({G, rn, rm});
                for (int64_t g = 0; g < G; ++g)
                    for (int64_t i = 0; i < rn; ++i)
                        for (int64_t j = 0; j < rm; ++j) {
                            double acc = 0.0;
                            const double* ar = &a.data[static_cast<size_t>((g * rn + i) * k)];
                            const double* br = &b.data[static_cast<size_t>((g * rm + j) * k)];
                            for (int64_t p = 0; p < k; ++p) acc += ar[p] * br[p];
                            y.data[static_cast<size_t>((g * rn + i) * rm + j)] = acc;
                        }
                return y;
            }
            case Op::BmmNN: {
                const Tensor& a = pv(n, 0);
                const Tensor& b = pv(n, 1);
                if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) ||
                    a.dim(2) != b.dim(1)) {
                    throw ShapeError("bmm_nn: shape mismatch");
                }
                const int64_t G = a.dim(0), rn = a.dim(1), rm = a.dim(2), k = b.dim(2);
                Tensor y = Tensor::zeros({G, rn, k});
                for (int64_t g = 0; g < G; ++g)
                    for (int64_t i = 0; i < rn; ++i) {
                        double* yr = &y.data[static_cast<size_t>((g * rn + i) * k)];
                        for (int64_t p = 0; p < rm; ++p) {
                            const double av = a.data[static_cast<size_t>((g * rn + i) * rm + p)];
                            if (av == 0.0) continue;
                            const double* br = &b.data[static_cast<size_t>((g * rm + p) * k)];
                            for (int64_t j = 0; j < k; ++j) yr[j] += av * br[j];
                        }
                    }
                return y;
            }
            case Op::MatmulNT: {
                const Tensor& a = pv(n, 0);
                const Tensor& b = pv(n, 1);
                if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1)) {
                    throw ShapeError("matmul_nt: shape mismatch");
                }
                const int64_t m = a.dim(0), k = a.dim(1), r = b.dim(0);
                Tensor y = Tensor::zeros({m, r});
                for (int64_t i = 0; i < m; ++i)
                    for (int64_t j = 0; j < r; ++j) {
                        double acc = 0.0;
                        const double* ar = &a.data[static_cast<size_t>(i * k)];
                        const double* br = &b.data[static_cast<size_t>(j * k)];
                        for (int64_t p = 0; p < k; ++p) acc += ar[p] * br[p];
                        y.data[static_cast<size_t>(i * r + j)] = acc;
                    }
                return y;
            }
            case Op::SoftmaxLast: {
                const Tensor& x = pv(n, 0);
                const int64_t c = x.shape.back();
                const int64_t rows = x.size() / c;
                Tensor flat({rows, c}, x.data);
                Tensor y = softmax_rows(flat);
                return Tensor(x.shape, std::move(y.data));
            }
            case Op::MeanTokens: {
                const Tensor& x = pv(n, 0);
                if (x.rank() != 3) throw ShapeError("mean_tokens expects rank-3 input");
                const int64_t B = x.dim(0), s = x.dim(1), d = x.dim(2);
                Tensor y = Tensor::zeros({B, d});
                for (int64_t b = 0; b < B; ++b)
                    for (int64_t t = 0; t < s; ++t)
                        for (int64_t j = 0; j < d; ++j)
                            y.data[static_cast<size_t>(b * d + j)] +=
                                x.data[static_cast<size_t>((b * s + t) * d + j)] /
                                static_cast<double>(s);
                return y;
            }
            case Op::L2NormRows:
                return l2_normalize_rows(pv(n, 0), n.scalar);
            case Op::ConcatCols: {
                const Tensor& a = pv(n, 0);
                const Tensor& b = pv(n, 1);
                if (a.rank() != 2 || b.rank() != 2 || a.dim(0) != b.dim(0)) {
                    throw ShapeError("concat_cols: batch mismatch");
                }
                const int64_t B = a.dim(0), p = a.dim(1), q = b.dim(1);
                Tensor y = Tensor::zeros({B, p + q});
                for (int64_t i = 0; i < B; ++i) {
                    for (int64_t j = 0; j < p; ++j)
                        y.data[static_cast<size_t>(i * (p + q) + j)] =
                            a.data[static_cast<size_t>(i * p + j)];
                    for (int64_t j = 0; j < q; ++j)
                        y.data[static_cast<size_t>(i * (p + q) + p + j)] =
                            b.data[static_cast<size_t>(i * q + j)];
                }
                return y;
            }
            case Op::NllDiag: {
                const Tensor& s = pv(n, 0);
                if (s.rank() != 2 || s.dim(0) != s.dim(1)) {
                    throw ShapeError("nll_diag expects a square matrix");
                }
                const int64_t B = s.dim(0);
                double loss = 0.0;
                for (int64_t i = 0; i < B; ++i) {
                    loss += row_lse(s, i) - s.data[static_cast<size_t>(i * B + i)];
                }
                return Tensor::scalar(loss / static_cast<double>(B));
            }
            case Op::NllLabels: {
                const Tensor& s = pv(n, 0);
                if (s.rank() != 2) throw ShapeError("nll_labels expects rank-2 logits");
                const int64_t B = s.dim(0), C = s.dim(1);
                if (static_cast<int64_t>(n.labels.size()) != B) {
                    throw ContractError("nll_labels: label count mismatch");
                }
                double loss = 0.0;
                for (int64_t i = 0; i < B; ++i) {
                    const int y = n.labels[static_cast<size_t>(i)];
                    if (y < 0 || y >= C) throw ContractError("nll_labels: label out of range");
                    loss += row_lse(s, i) - s.data[static_cast<size_t>(i * C + y)];
                }
                return Tensor::scalar(loss / static_cast<double>(B));
            }
            case Op::SumAll: {
                const Tensor& x = pv(n, 0);
                double acc = 0.0;
                for (double v : x.data) acc += v;
                return Tensor::scalar(acc);
            }
            case Op::LinComb: {
                if (n.parents.size() != n.coeffs.size() || n.parents.empty()) {
                    throw ContractError("lincomb: parent/coefficient mismatch");
                }
                Tensor y = pv(n, 0);
                for (double& v : y.data) v *= n.coeffs[0];
                for (size_t i = 1; i < n.parents.size(); ++i) {
                    const Tensor& p = pv(n, static_cast<int>(i));
                    if (!p.same_shape(y)) throw ShapeError("lincomb: shape mismatch");
                    for (size_t j = 0; j < y.data.size(); ++j)
                        y.data[j] += n.coeffs[i] * p.data[j];
                }
                return y;
            }
        }
        throw ContractError("unknown op");
    }

    static double row_lse(const Tensor& s, int64_t i) {
        const int64_t c = s.dim(1);
        const double* row = &s.data[static_cast<size_t>(i * c)];
        double mx = row[0];
        for (int64_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        double acc = 0.0;
        for (int64_t j = 0; j < c; ++j) acc += std::exp(row[j] - mx);
        return mx + std::log(acc);
    }

    void accumulate(std::vector<Tensor>& adj, std::vector<bool>& has, int id,
                    Tensor g) const {
        if (!has[static_cast<size_t>(id)]) {
            adj[static_cast<size_t>(id)] = std::move(g);
            has[static_cast<size_t>(id)] = true;
        } else {
            Tensor& acc = adj[static_cast<size_t>(id)];
            for (size_t i = 0; i < acc.data.size(); ++i) acc.data[i] += g.data[i];
        }
    }

    void backward(const Node& n, const Tensor& g, std::vector<Tensor>& adj,
                  std::vector<bool>& has) const {
        switch (n.op) {
            case Op::Leaf:
                return;
            case Op::Linear: {
                const Tensor& x = pv(n, 0);
                const Tensor& w = pv(n, 1);
                const int64_t k = w.dim(0), m = w.dim(1);
                const int64_t rows = x.size() / k;
                Tensor gx = Tensor::zeros(x.shape);
                Tensor gw = Tensor::zeros(w.shape);
                Tensor gb = Tensor::zeros({m});
                for (int64_t r = 0; r < rows; ++r) {
                    const double* xr = &x.data[static_cast<size_t>(r * k)];
                    const double* gr = &g.data[static_cast<size_t>(r * m)];
                    double* gxr = &gx.data[static_cast<size_t>(r * k)];
                    for (int64_t j = 0; j < m; ++j) gb.data[static_cast<size_t>(j)] += gr[j];
                    for (int64_t p = 0; p < k; ++p) {
                        const double* wrow = &w.data[static_cast<size_t>(p * m)];
                        double* gwrow = &gw.data[static_cast<size_t>(p * m)];
                        double acc = 0.0;
                        const double xv = xr[p];
                        for (int64_t j = 0; j < m; ++j) {
                            acc += gr[j] * wrow[j];
                            gwrow[j] += xv * gr[j];
                        }
                        gxr[p] = acc;
                    }
                }
                accumulate(adj, has, n.parents[0], std::move(gx));
                accumulate(adj, has, n.parents[1], std::move(gw));
                accumulate(adj, has, n.parents[2], std::move(gb));
                return;
            }
            case Op::Add:
                accumulate(adj, has, n.parents[0], g);
                accumulate(adj, has, n.parents[1], g);
                return;
            case Op::AddRows: {
                const Tensor& p = pv(n, 1);
                accumulate(adj, has, n.parents[0], g);
                Tensor gp = Tensor::zeros(p.shape);
                const int64_t sd = p.size();
                const int64_t batch = g.dim(0);
                for (int64_t b = 0; b < batch; ++b)
                    for (int64_t i = 0; i < sd; ++i)
                        gp.data[static_cast<size_t>(i)] +=
                            g.data[static_cast<size_t>(b * sd + i)];
                accumulate(adj, has, n.parents[1], std::move(gp));
                return;
            }
            case Op::LayerNorm: {
                const Tensor& x = pv(n, 0);
                const Tensor& gain = pv(n, 1);
                const double eps = n.scalar;
                const int64_t d = x.shape.back();
                const int64_t rows = x.size() / d;
                Tensor gx = Tensor::zeros(x.shape);
                Tensor gg = Tensor::zeros(gain.shape);
                Tensor gb = Tensor::zeros(gain.shape);
                for (int64_t r = 0; r < rows; ++r) {
                    const double* xr = &x.data[static_cast<size_t>(r * d)];
                    const double* gr = &g.data[static_cast<size_t>(r * d)];
                    double mean = 0.0;
                    for (int64_t j = 0; j < d; ++j) mean += xr[j];
                    mean /= static_cast<double>(d);
                    double var = 0.0;
                    for (int64_t j = 0; j < d; ++j) {
                        const double c = xr[j] - mean;
                        var += c * c;
                    }
                    var /= static_cast<double>(d);
                    const double inv = 1.0 / std::sqrt(var + eps);
                    // xhat, dxhat, and the two row means needed for dx
                    double mean_dxh = 0.0, mean_dxh_xh = 0.0;
                    std::vector<double> xh(static_cast<size_t>(d)), dxh(static_cast<size_t>(d));
                    for (int64_t j = 0; j < d; ++j) {
                        xh[static_cast<size_t>(j)] = (xr[j] - mean) * inv;
                        dxh[static_cast<size_t>(j)] = gr[j] * gain.data[static_cast<size_t>(j)];
                        mean_dxh += dxh[static_cast<size_t>(j)];
                        mean_dxh_xh += dxh[static_cast<size_t>(j)] * xh[static_cast<size_t>(j)];
                        gg.data[static_cast<size_t>(j)] += gr[j] * xh[static_cast<size_t>(j)];
                        gb.data[static_cast<size_t>(j)] += gr[j];
                    }
                    mean_dxh /= static_cast<double>(d);
                    mean_dxh_xh /= static_cast<double>(d);
                    double* gxr = &gx.data[static_cast<size_t>(r * d)];
                    for (int64_t j = 0; j < d; ++j) {
                        gxr[j] = inv * (dxh[static_cast<size_t>(j)] - mean_dxh -
                                        xh[static_cast<size_t>(j)] * mean_dxh_xh);
                    }
                }
                accumulate(adj, has, n.parents[0], std::move(gx));
                accumulate(adj, has, n.parents[1], std::move(gg));
                accumulate(adj, has, n.parents[2], std::move(gb));
                return;
            }
            case Op::Gelu: {
                const Tensor& x = pv(n, 0);
                Tensor gx = g;
                for (size_t i = 0; i < gx.data.size(); ++i)
                    gx.data[i] *= gelu_deriv_scalar(x.data[i]);
                accumulate(adj, has, n.parents[0], std::move(gx));
                return;
            }
            case Op::Mul: {
                const Tensor& a = pv(n, 0);
                const Tensor& b = pv(n, 1);
                Tensor ga = g, gb = g;
                for (size_t i = 0; i < g.data.size(); ++i) {
                    ga.data[i] *= b.data[i];
                    gb.data[i] *= a.data[i];
                }
                accumulate(adj, has, n.parents[0], std::move(ga));
                accumulate(adj, has, n.parents[1], std::move(gb));
                return;
            }
            case Op::Scale: {
                Tensor gx = g;
                for (double& v : gx.data) v *= n.scalar;
                accumulate(adj, has, n.parents[0], std::move(gx));
                return;
            }
            case Op::SplitHeads: {
                const Tensor& x = pv(n, 0);
                const int h = n.heads;
                const int64_t B = x.dim(0), s = x.dim(1), d = x.dim(2), dh = d / h;
                Tensor gx = Tensor::zeros(x.shape);
                for (int64_t b = 0; b < B; ++b)
                    for (int i = 0; i < h; ++i)
                        for (int64_t t = 0; t < s; ++t)
                            for (int64_t j = 0; j < dh; ++j)
                                gx.data[static_cast<size_t>((b * s + t) * d + i * dh + j)] =
                                    g.data[static_cast<size_t>(((b * h + i) * s + t) * dh + j)];
                accumulate(adj, has, n.parents[0], std::move(gx));
                return;
            }
            case Op::MergeHeads: {
                const Tensor& x = pv(n, 0);
                const int h = n.heads;
                const int64_t B = x.dim(0) / h, s = x.dim(1), dh = x.dim(2), d = dh * h;
                Tensor gx = Tensor::zeros(x.shape);
                for (int64_t b = 0; b < B; ++b)
                    for (int i = 0; i < h; ++i)
                        for (int64_t t = 0; t < s; ++t)
                            for (int64_t j = 0; j < dh; ++j)
                                gx.data[static_cast<size_t>(((b * h + i) * s + t) * dh + j)] =
                                    g.data[static_cast<size_t>((b * s + t) * d + i * dh + j)];
                accumulate(adj, has, n.parents[0], std::move(gx));
                return;
            }
            case Op::BmmNT: {
                // C = A B^T per group: dA = G B, dB = G^T A
                const Tensor& a = pv(n, 0);
                const Tensor& b = pv(n, 1);
                const int64_t G = a.dim(0), rn = a.dim(1), k = a.dim(2), rm = b.dim(1);
                Tensor ga = Tensor::zeros(a.shape);
                Tensor gb = Tensor::zeros(b.shape);
                for (int64_t gi = 0; gi < G; ++gi)
                    for (int64_t i = 0; i < rn; ++i)
                        for (int64_t j = 0; j < rm; ++j) {
                            const double gv =
                                g.data[static_cast<size_t>((gi * rn + i) * rm + j)];
                            if (gv == 0.0) continue;
                            const double* br = &b.data[static_cast<size_t>((gi * rm + j) * k)];
                            const double* ar = &a.data[static_cast<size_t>((gi * rn + i) * k)];
                            double* gar = &ga.data[static_cast<size_t>((gi * rn + i) * k)];
                            double* gbr = &gb.data[static_cast<size_t>((gi * rm + j) * k)];
                            for (int64_t p = 0; p < k; ++p) {
                                gar[p] += gv * br[p];
                                gbr[p] += gv * ar[p];
                            }
                        }
                accumulate(adj, has, n.parents[0], std::move(ga));
                accumulate(adj, has, n.parents[1], std::move(gb));
                return;
            }
            case Op::BmmNN: {
                // C = A B per group: dA = G B^T, dB = A^T G
                const Tensor& a = pv(n, 0);
                const Tensor& b = pv(n, 1);
                const int64_t G = a.dim(0), rn = a.dim(1), rm = a.dim(2), k = b.dim(2);
                Tensor ga = Tensor::zeros(a.shape);
                Tensor gb = Tensor::zeros(b.shape);
                for (int64_t gi = 0; gi < G; ++gi)
                    for (int64_t i = 0; i < rn; ++i)
                        for (int64_t p = 0; p < rm; ++p) {
                            const double* gr = &g.data[static_cast<size_t>((gi * rn + i) * k)];
                            const double* br = &b.data[static_cast<size_t>((gi * rm + p) * k)];
                            const double av = a.data[static_cast<size_t>((gi * rn + i) * rm + p)];
                            double* gbr = &gb.data[static_cast<size_t>((gi * rm + p) * k)];
                            double acc = 0.0;
                            for (int64_t j = 0; j < k; ++j) {
                                acc += gr[j] * br[j];
                                gbr[j] += av * gr[j];
                            }
                            ga.data[static_cast<size_t>((gi * rn + i) * rm + p)] += acc;
                        }
                accumulate(adj, has, n.parents[0], std::move(ga));
                accumulate(adj, has, n.parents[1], std::move(gb));
                return;
            }
            case Op::MatmulNT: {
                const Tensor& a = pv(n, 0);
                const Tensor& b = pv(n, 1);
                const int64_t m = a.dim(0), k = a.dim(1), r = b.dim(0);
                Tensor ga = Tensor::zeros(a.shape);
                Tensor gb = Tensor::zeros(b.shape);
                for (int64_t i = 0; i < m; ++i)
                    for (int64_t j = 0; j < r; ++j) {
                        const double gv = g.data[static_cast<size_t>(i * r + j)];
                        if (gv == 0.0) continue;
                        const double* ar = &a.data[static_cast<size_t>(i * k)];
                        const double* br = &b.data[static_cast<size_t>(j * k)];
                        double* gar = &ga.data[static_cast<size_t>(i * k)];
                        double* gbr = &gb.data[static_cast<size_t>(j * k)];
                        for (int64_t p = 0; p < k; ++p) {
                            gar[p] += gv * br[p];
                            gbr[p] += gv * ar[p];
                        }
                    }
                accumulate(adj, has, n.parents[0], std::move(ga));
                accumulate(adj, has, n.parents[1], std::move(gb));
                return;
            }
            case Op::SoftmaxLast: {
                const Tensor& y = n.value;
                const int64_t c = y.shape.back();
                const int64_t rows = y.size() / c;
                Tensor gx = Tensor::zeros(y.shape);
                for (int64_t r = 0; r < rows; ++r) {
                    const double* yr = &y.data[static_cast<size_t>(r * c)];
                    const double* gr = &g.data[static_cast<size_t>(r * c)];
                    double dot = 0.0;
                    for (int64_t j = 0; j < c; ++j) dot += yr[j] * gr[j];
                    double* gxr = &gx.data[static_cast<size_t>(r * c)];
                    for (int64_t j = 0; j < c; ++j) gxr[j] = yr[j] * (gr[j] - dot);
                }
                accumulate(adj, has, n.parents[0], std::move(gx));
                return;
            }
            case Op::MeanTokens: {
                const Tensor& x = pv(n, 0);
                const int64_t B = x.dim(0), s = x.dim(1), d = x.dim(2);
                Tensor gx = Tensor::zeros(x.shape);
                for (int64_t b = 0; b < B; ++b)
                    for (int64_t t = 0; t < s; ++t)
                        for (int64_t j = 0; j < d; ++j)
                            gx.data[static_cast<size_t>((b * s + t) * d + j)] =
                                g.data[static_cast<size_t>(b * d + j)] / static_cast<double>(s);
                accumulate(adj, has, n.parents[0], std::move(gx));
                return;
            }
            case Op::L2NormRows: {
                // y = x / |x|; dx = (g - y (y . g)) / |x|
                const Tensor& x = pv(n, 0);
                const Tensor& y = n.value;
                const int64_t r = x.dim(0), c = x.dim(1);
                Tensor gx = Tensor::zeros(x.shape);
                for (int64_t i = 0; i < r; ++i) {
                    const double* xr = &x.data[static_cast<size_t>(i * c)];
                    const double* yr = &y.data[static_cast<size_t>(i * c)];
                    const double* gr = &g.data[static_cast<size_t>(i * c)];
                    double norm = 0.0, dot = 0.0;
                    for (int64_t j = 0; j < c; ++j) {
                        norm += xr[j] * xr[j];
                        dot += yr[j] * gr[j];
                    }
                    norm = std::sqrt(norm);
                    double* gxr = &gx.data[static_cast<size_t>(i * c)];
                    for (int64_t j = 0; j < c; ++j) gxr[j] = (gr[j] - yr[j] * dot) / norm;
                }
                accumulate(adj, has, n.parents[0], std::move(gx));
                return;
            }
            case Op::ConcatCols: {
                const Tensor& a = pv(n, 0);
                const Tensor& b = pv(n, 1);
                const int64_t B = a.dim(0), p = a.dim(1), q = b.dim(1);
                Tensor ga = Tensor::zeros(a.shape);
                Tensor gb = Tensor::zeros(b.shape);
                for (int64_t i = 0; i < B; ++i) {
                    for (int64_t j = 0; j < p; ++j)
                        ga.data[static_cast<size_t>(i * p + j)] =
                            g.data[static_cast<size_t>(i * (p + q) + j)];
                    for (int64_t j = 0; j < q; ++j)
                        gb.data[static_cast<size_t>(i * q + j)] =
                            g.data[static_cast<size_t>(i * (p + q) + p + j)];
                }
                accumulate(adj, has, n.parents[0], std::move(ga));
                accumulate(adj, has, n.parents[1], std::move(gb));
                return;
            }
            case Op::NllDiag: {
                const Tensor& s = pv(n, 0);
                const int64_t B = s.dim(0);
                const double gv = g.item() / static_cast<double>(B);
                Tensor p = softmax_rows(s);
                for (int64_t i = 0; i < B; ++i)
                    p.data[static_cast<size_t>(i * B + i)] -= 1.0;
                for (double& v : p.data) v *= gv;
                accumulate(adj, has, n.parents[0], std::move(p));
                return;
            }
            case Op::NllLabels: {
                const Tensor& s = pv(n, 0);
                const int64_t B = s.dim(0), C = s.dim(1);
                const double gv = g.item() / static_cast<double>(B);
                Tensor p = softmax_rows(s);
                for (int64_t i = 0; i < B; ++i)
                    p.data[static_cast<size_t>(i * C + n.labels[static_cast<size_t>(i)])] -= 1.0;
                for (double& v : p.data) v *= gv;
                accumulate(adj, has, n.parents[0], std::move(p));
                return;
            }
            case Op::SumAll: {
                const Tensor& x = pv(n, 0);
                Tensor gx = Tensor::full(x.shape, g.item());
                accumulate(adj, has, n.parents[0], std::move(gx));
                return;
            }
            case Op::LinComb: {
                for (size_t i = 0; i < n.parents.size(); ++i) {
                    Tensor gp = g;
                    for (double& v : gp.data) v *= n.coeffs[i];
                    accumulate(adj, has, n.parents[static_cast<size_t>(i)], std::move(gp));
                }
                return;
            }
        }
    }
};

// Max relative deviation between reverse-mode gradients and numerical
// derivatives over every element of every trainable leaf. Uses central
// differences at steps h and h/2 combined by Richardson extrapolation, which
// cancels the leading h^2 truncation term.
inline double fd_check(Graph& g, int loss, double h = 1e-4) {
    if (h <= 0.0 || h > 1e-2) throw ContractError("fd_check: h out of (0, 1e-2]");
    auto analytic = g.grad(loss);
    double max_rel = 0.0;
    for (auto& [leaf, ga] : analytic) {
        Tensor original = g.value(leaf);
        Tensor work = original;
        auto eval_at = [&](size_t i, double v) {
            const double saved = work.data[i];
            work.data[i] = v;
            g.set_leaf(leaf, work);
            g.recompute();
            work.data[i] = saved;
            return g.value(loss).item();
        };
        for (size_t i = 0; i < work.data.size(); ++i) {
            const double x = work.data[i];
            const double d_h =
                (eval_at(i, x + h) - eval_at(i, x - h)) / (2.0 * h);
            const double d_h2 =
                (eval_at(i, x + 0.5 * h) - eval_at(i, x - 0.5 * h)) / h;
            const double numeric = (4.0 * d_h2 - d_h) / 3.0;
            const double a = ga.data[i];
            const double rel = std::abs(a - numeric) / std::max(1.0, std::abs(a));
            max_rel = std::max(max_rel, rel);
        }
        g.set_leaf(leaf, original);
    }
    g.recompute();
    return max_rel;
}

}  // namespace mmfl
