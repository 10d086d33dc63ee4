#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include "mmfl/eval.hpp"
#include "mmfl/nn.hpp"
#include "mmfl/rng.hpp"

using namespace mmfl;

namespace {

Tensor random_unit_rows(int64_t n, int64_t d, RngStream rng) {
    Tensor t = Tensor::zeros({n, d});
    for (double& v : t.data) v = rng.normal();
    return l2_normalize_rows(t);
}

// Recall@K by explicit rank enumeration, independent of the library's
// implementation details.
double brute_recall(const Tensor& q, const Tensor& g, int k) {
    const int64_t n = q.dim(0), d = q.dim(1);
    int hits = 0;
    for (int64_t i = 0; i < n; ++i) {
        std::vector<std::pair<double, int64_t>> scored;
        for (int64_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (int64_t p = 0; p < d; ++p) {
                s += q.data[static_cast<size_t>(i * d + p)] *
                     g.data[static_cast<size_t>(j * d + p)];
            }
            scored.emplace_back(s, j);
        }
        std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second;
        });
        for (int r = 0; r < k; ++r) {
            if (scored[static_cast<size_t>(r)].second == i) {
                ++hits;
                break;
            }
        }
    }
    return 100.0 * hits / static_cast<double>(n);
}

}  // namespace

TEST_CASE("retrieval is perfect when both sides are identical orthonormal rows") {
    const int64_t n = 6;
    Tensor eye = Tensor::zeros({n, n});
    for (int64_t i = 0; i < n; ++i) eye.data[static_cast<size_t>(i * n + i)] = 1.0;
    const RetrievalResult r = retrieval_recall(eye, eye, {1, 5});
    CHECK(r.at_ab(1) == 100.0);
    CHECK(r.at_ba(1) == 100.0);
    CHECK(r.at_ab(5) == 100.0);
}

TEST_CASE("retrieval at K = n is always 100 percent") {
    const Tensor za = random_unit_rows(17, 8, RngStream(21));
    const Tensor zb = random_unit_rows(17, 8, RngStream(22));
    const RetrievalResult r = retrieval_recall(za, zb, {17});
    CHECK(r.at_ab(17) == 100.0);
    CHECK(r.at_ba(17) == 100.0);
}

TEST_CASE("retrieval matches a brute-force ranking oracle") {
    RngStream rng(23);
    for (int trial = 0; trial < 10; ++trial) {
        const Tensor za = random_unit_rows(20, 6, rng.derive("a", static_cast<uint64_t>(trial)));
        const Tensor zb = random_unit_rows(20, 6, rng.derive("b", static_cast<uint64_t>(trial)));
        const RetrievalResult r = retrieval_recall(za, zb, {1, 5, 10});
        for (int k : {1, 5, 10}) {
            CHECK(r.at_ab(k) == Catch::Approx(brute_recall(za, zb, k)).margin(1e-12));
            CHECK(r.at_ba(k) == Catch::Approx(brute_recall(zb, za, k)).margin(1e-12));
        }
    }
}

TEST_CASE("retrieval recall is monotone in K") {
    const Tensor za = random_unit_rows(30, 4, RngStream(24));
    const Tensor zb = random_unit_rows(30, 4, RngStream(25));
    const RetrievalResult r = retrieval_recall(za, zb, {1, 5, 10, 30});
    CHECK(r.at_ab(1) <= r.at_ab(5));
    CHECK(r.at_ab(5) <= r.at_ab(10));
    CHECK(r.at_ab(10) <= r.at_ab(30));
    CHECK(r.at_ab(30) == 100.0);
}

TEST_CASE("retrieval is invariant under a common orthogonal rotation") {
    const int64_t n = 12, d = 4;
    const Tensor za = random_unit_rows(n, d, RngStream(26));
    const Tensor zb = random_unit_rows(n, d, RngStream(27));
    // a Givens rotation in coordinates (0, 1)
    const double c = std::cos(0.7), s = std::sin(0.7);
    auto rotate = [&](const Tensor& t) {
        Tensor out = t;
        for (int64_t i = 0; i < n; ++i) {
            const double x = t.data[static_cast<size_t>(i * d)];
            const double y = t.data[static_cast<size_t>(i * d + 1)];
            out.data[static_cast<size_t>(i * d)] = c * x - s * y;
            out.data[static_cast<size_t>(i * d + 1)] = s * x + c * y;
        }
        return out;
    };
    const RetrievalResult plain = retrieval_recall(za, zb, {1, 5});
    const RetrievalResult rotated = retrieval_recall(rotate(za), rotate(zb), {1, 5});
    CHECK(plain.recall_ab == rotated.recall_ab);
    CHECK(plain.recall_ba == rotated.recall_ba);
}

TEST_CASE("retrieval input contracts") {
    const Tensor za = random_unit_rows(5, 3, RngStream(28));
    const Tensor zb = random_unit_rows(6, 3, RngStream(29));
    CHECK_THROWS_AS(retrieval_recall(za, zb, {1}), ShapeError);
    const Tensor zc = random_unit_rows(5, 3, RngStream(30));
    CHECK_THROWS_AS(retrieval_recall(za, zc, {6}), ContractError);
    CHECK_THROWS_AS(retrieval_recall(za, zc, {}), ContractError);
}

TEST_CASE("macro PRF1 on perfect predictions") {
    const std::vector<int> labels{0, 1, 2, 0, 1, 2};
    const MacroPRF1 m = macro_prf1(labels, labels, 3);
    CHECK(m.precision == Catch::Approx(100.0));
    CHECK(m.recall == Catch::Approx(100.0));
    CHECK(m.f1 == Catch::Approx(100.0));
}

TEST_CASE("macro PRF1 all-one-class predictor on a balanced binary problem") {
    // predicting class 0 always: class 0 gets P = 0.5, R = 1, F1 = 2/3;
    // class 1 gets all zeros. Macro averages: P = 25, R = 50, F1 = 33.33.
    const std::vector<int> labels{0, 0, 1, 1};
    const std::vector<int> preds{0, 0, 0, 0};
    const MacroPRF1 m = macro_prf1(preds, labels, 2);
    CHECK(m.precision == Catch::Approx(25.0));
    CHECK(m.recall == Catch::Approx(50.0));
    CHECK(m.f1 == Catch::Approx(100.0 / 3.0));
}

TEST_CASE("macro PRF1 matches a confusion-matrix oracle") {
    RngStream rng(31);
    const int C = 5, n = 200;
    std::vector<int> labels, preds;
    for (int i = 0; i < n; ++i) {
        labels.push_back(static_cast<int>(rng.below(C)));
        preds.push_back(static_cast<int>(rng.below(C)));
    }
    const MacroPRF1 got = macro_prf1(preds, labels, C);

    std::vector<std::vector<int>> cm(C, std::vector<int>(C, 0));
    for (int i = 0; i < n; ++i) cm[static_cast<size_t>(labels[i])][static_cast<size_t>(preds[i])]++;
    double P = 0, R = 0, F = 0;
    int present = 0;
    for (int c = 0; c < C; ++c) {
        int row = 0, col = 0;
        for (int k = 0; k < C; ++k) {
            row += cm[static_cast<size_t>(c)][static_cast<size_t>(k)];
            col += cm[static_cast<size_t>(k)][static_cast<size_t>(c)];
        }
        if (row == 0) continue;
        ++present;
        const double p = col == 0 ? 0.0 : static_cast<double>(cm[static_cast<size_t>(c)][static_cast<size_t>(c)]) / col;
        const double r = static_cast<double>(cm[static_cast<size_t>(c)][static_cast<size_t>(c)]) / row;
        P += p;
        R += r;
        F += (p + r) > 0 ? 2 * p * r / (p + r) : 0.0;
    }
    CHECK(got.precision == Catch::Approx(100.0 * P / present).margin(1e-10));
    CHECK(got.recall == Catch::Approx(100.0 * R / present).margin(1e-10));
    CHECK(got.f1 == Catch::Approx(100.0 * F / present).margin(1e-10));
}

TEST_CASE("macro PRF1 is invariant under class relabeling") {
    const std::vector<int> labels{0, 1, 2, 0, 1, 2, 2, 1};
    const std::vector<int> preds{0, 2, 2, 0, 1, 1, 2, 1};
    const MacroPRF1 a = macro_prf1(preds, labels, 3);
    // swap labels 0 <-> 2 everywhere
    auto swap02 = [](std::vector<int> v) {
        for (int& x : v) x = x == 0 ? 2 : (x == 2 ? 0 : x);
        return v;
    };
    const MacroPRF1 b = macro_prf1(swap02(preds), swap02(labels), 3);
    CHECK(a.precision == Catch::Approx(b.precision));
    CHECK(a.recall == Catch::Approx(b.recall));
    CHECK(a.f1 == Catch::Approx(b.f1));
}

TEST_CASE("macro PRF1 input contracts") {
    CHECK_THROWS_AS(macro_prf1({0, 1}, {0}, 2), ContractError);
    CHECK_THROWS_AS(macro_prf1({0, 2}, {0, 1}, 2), ContractError);
    CHECK_THROWS_AS(macro_prf1({0, 1}, {0, -1}, 2), ContractError);
}

namespace {

struct ProbeSetup {
    EncoderState enc_a, enc_b;
    HeadSpec hspec_a, hspec_b;
    Segment head_a, head_b;
    Tensor xa, xb;
};

ProbeSetup make_probe(int blocks_a, int blocks_b, uint64_t seed) {
    RngStream rng(seed);
    const BlockSpec spec_a{8, 2, 16, 3};
    const BlockSpec spec_b{8, 2, 16, 4};
    ProbeSetup s;
    s.enc_a = make_encoder(5, spec_a, rng.derive("ea"), "a");
    s.enc_b = make_encoder(6, spec_b, rng.derive("eb"), "b");
    std::vector<Segment> ba, bb;
    for (int i = 0; i < blocks_a; ++i) {
        ba.push_back(init_block(spec_a, rng.derive("ba", static_cast<uint64_t>(i)),
                                "a/block" + std::to_string(i + 1)));
    }
    for (int i = 0; i < blocks_b; ++i) {
        bb.push_back(init_block(spec_b, rng.derive("bb", static_cast<uint64_t>(i)),
                                "b/block" + std::to_string(i + 1)));
    }
    s.enc_a = attach_block(std::move(s.enc_a), std::move(ba), false);
    s.enc_b = attach_block(std::move(s.enc_b), std::move(bb), false);
    s.hspec_a = HeadSpec{HeadSpec::Kind::Projection, 8, 16, 8};
    s.hspec_b = s.hspec_a;
    s.head_a = init_head(s.hspec_a, rng.derive("ha"), "head/a");
    s.head_b = init_head(s.hspec_b, rng.derive("hb"), "head/b");
    const int64_t batch = 6;
    s.xa = Tensor::zeros({batch, 3, 5});
    s.xb = Tensor::zeros({batch, 4, 6});
    for (double& v : s.xa.data) v = rng.normal();
    for (double& v : s.xb.data) v = rng.normal();
    return s;
}

}  // namespace

TEST_CASE("gradient profile of a single block is exactly [1]") {
    ProbeSetup s = make_probe(1, 1, 41);
    for (ProfileMode mode : {ProfileMode::EndToEnd, ProfileMode::Progressive}) {
        const GradientProfile p =
            track_gradients(s.enc_b, s.enc_a, s.head_b, s.hspec_b, s.head_a, s.hspec_a,
                            s.xb, s.xa, Temperature{0.5}, mode);
        REQUIRE(p.values.size() == 1);
        CHECK(p.values[0] == 1.0);
    }
}

TEST_CASE("gradient profile is finite, non-negative and ends at 1 in both modes") {
    ProbeSetup s = make_probe(4, 4, 42);
    for (ProfileMode mode : {ProfileMode::EndToEnd, ProfileMode::Progressive}) {
        const GradientProfile p =
            track_gradients(s.enc_b, s.enc_a, s.head_b, s.hspec_b, s.head_a, s.hspec_a,
                            s.xb, s.xa, Temperature{0.5}, mode);
        REQUIRE(p.values.size() == 4);
        for (double v : p.values) {
            CHECK(std::isfinite(v));
            CHECK(v >= 0.0);
        }
        CHECK(p.values.back() == 1.0);
    }
}

TEST_CASE("gradient profile modes disagree on deep encoders") {
    // with more than one block the truncated-model measurements generally
    // differ from the full-depth backward pass
    ProbeSetup s = make_probe(3, 3, 43);
    const GradientProfile ete =
        track_gradients(s.enc_b, s.enc_a, s.head_b, s.hspec_b, s.head_a, s.hspec_a, s.xb,
                        s.xa, Temperature{0.5}, ProfileMode::EndToEnd);
    const GradientProfile prog =
        track_gradients(s.enc_b, s.enc_a, s.head_b, s.hspec_b, s.head_a, s.hspec_a, s.xb,
                        s.xa, Temperature{0.5}, ProfileMode::Progressive);
    REQUIRE(ete.values.size() == prog.values.size());
    bool any_diff = false;
    for (size_t i = 0; i + 1 < ete.values.size(); ++i) {
        if (std::abs(ete.values[i] - prog.values[i]) > 1e-9) any_diff = true;
    }
    CHECK(any_diff);
}

TEST_CASE("gradient profile rejects an empty encoder") {
    ProbeSetup s = make_probe(1, 1, 44);
    EncoderState empty = s.enc_b;
    empty.blocks.clear();
    CHECK_THROWS_AS(track_gradients(empty, s.enc_a, s.head_b, s.hspec_b, s.head_a,
                                    s.hspec_a, s.xb, s.xa, Temperature{0.5},
                                    ProfileMode::EndToEnd),
                    ContractError);
}
