#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <set>

#include "mmfl/config.hpp"
#include "mmfl/federation.hpp"
#include "mmfl/report.hpp"

using namespace mmfl;

namespace {

ParameterBundle scalar_bundle(double v) {
    ParameterBundle b;
    Segment s;
    s.name = "w";
    s.params.push_back(Tensor::scalar(v));
    b.segments.push_back(std::move(s));
    return b;
}

// Small dual-encoder setup used across the federation tests.
RunConfig small_run(Strategy strategy, int stages) {
    RunConfig c = preset_config(strategy == Strategy::EndToEnd     ? "tiny-ete"
                                : strategy == Strategy::Progressive ? "tiny-prog"
                                                                    : "tiny-lw");
    c.data.samples = 64;
    c.data.held_out = 16;
    c.fed_clients = 4;
    c.fed_participants = 4;
    c.fed_batch = 16;
    c.fed_epochs = 1;
    if (strategy == Strategy::EndToEnd) {
        c.plan.rounds = {2};
        c.plan.growth_a = {stages};
        c.plan.growth_b = {stages};
    } else {
        c.plan.stages = stages;
        c.plan.rounds.assign(static_cast<size_t>(stages), 2);
        c.plan.growth_a.assign(static_cast<size_t>(stages), 1);
        c.plan.growth_b.assign(static_cast<size_t>(stages), 1);
        c.plan.lr_enc_a.assign(static_cast<size_t>(stages), 8e-3);
        c.plan.lr_enc_b.assign(static_cast<size_t>(stages), 8e-3);
    }
    c.validate();
    return c;
}

}  // namespace

TEST_CASE("fedavg fixed point and two-client arithmetic") {
    const ParameterBundle same = scalar_bundle(1.25);
    const ParameterBundle out = fedavg({same, same, same}, {0.2, 0.3, 0.5});
    CHECK(out.segments[0].params[0].item() == 1.25);

    // |D1| = 1, |D2| = 3 -> weights 0.25 / 0.75
    const ParameterBundle two =
        fedavg({scalar_bundle(0.0), scalar_bundle(4.0)}, {0.25, 0.75});
    CHECK(two.segments[0].params[0].item() == 3.0);
}

TEST_CASE("fedavg matches the naive weighted-sum oracle") {
    RngStream rng(51);
    for (int trial = 0; trial < 100; ++trial) {
        RngStream t = rng.derive("case", static_cast<uint64_t>(trial));
        const int clients = 1 + static_cast<int>(t.below(8));
        const int segs = 1 + static_cast<int>(t.below(5));

        // dataset sizes define the weights, per the |D^n| / |D| rule
        std::vector<int64_t> sizes;
        int64_t total = 0;
        for (int c = 0; c < clients; ++c) {
            sizes.push_back(1 + static_cast<int64_t>(t.below(50)));
            total += sizes.back();
        }
        std::vector<double> weights;
        for (int64_t s : sizes) {
            weights.push_back(static_cast<double>(s) / static_cast<double>(total));
        }

        std::vector<std::vector<int64_t>> shapes;
        for (int s = 0; s < segs; ++s) {
            shapes.push_back({1 + static_cast<int64_t>(t.below(4)),
                              1 + static_cast<int64_t>(t.below(4))});
        }
        std::vector<ParameterBundle> bundles;
        for (int c = 0; c < clients; ++c) {
            ParameterBundle b;
            for (int s = 0; s < segs; ++s) {
                Segment seg;
                seg.name = "s" + std::to_string(s);
                Tensor p = Tensor::zeros(shapes[static_cast<size_t>(s)]);
                for (double& v : p.data) v = t.normal();
                seg.params.push_back(std::move(p));
                b.segments.push_back(std::move(seg));
            }
            bundles.push_back(std::move(b));
        }

        const ParameterBundle got = fedavg(bundles, weights);
        for (int s = 0; s < segs; ++s) {
            const auto& gd = got.segments[static_cast<size_t>(s)].params[0].data;
            for (size_t i = 0; i < gd.size(); ++i) {
                double ref = 0.0;
                for (int c = 0; c < clients; ++c) {
                    ref += weights[static_cast<size_t>(c)] *
                           bundles[static_cast<size_t>(c)]
                               .segments[static_cast<size_t>(s)]
                               .params[0]
                               .data[i];
                }
                REQUIRE(std::abs(gd[i] - ref) <= 1e-12);
            }
        }
    }
}

TEST_CASE("fedavg stays inside the clients' convex hull") {
    RngStream rng(52);
    std::vector<ParameterBundle> bundles;
    for (int c = 0; c < 5; ++c) bundles.push_back(scalar_bundle(rng.normal()));
    const ParameterBundle out = fedavg(bundles, {0.1, 0.2, 0.3, 0.25, 0.15});
    double lo = 1e300, hi = -1e300;
    for (const ParameterBundle& b : bundles) {
        lo = std::min(lo, b.segments[0].params[0].item());
        hi = std::max(hi, b.segments[0].params[0].item());
    }
    CHECK(out.segments[0].params[0].item() >= lo);
    CHECK(out.segments[0].params[0].item() <= hi);
}

TEST_CASE("fedavg contract violations") {
    CHECK_THROWS_AS(fedavg({}, {}), ContractError);
    CHECK_THROWS_AS(fedavg({scalar_bundle(1.0)}, {0.9}), ContractError);
    ParameterBundle other = scalar_bundle(1.0);
    other.segments[0].params[0] = Tensor::zeros({2});
    CHECK_THROWS_AS(fedavg({scalar_bundle(1.0), other}, {0.5, 0.5}), ShapeError);
}

TEST_CASE("participant sampling") {
    const auto all = sample_participants(5, 5, RngStream(1));
    CHECK(all == std::vector<int>{0, 1, 2, 3, 4});

    const auto some = sample_participants(40, 10, RngStream(2));
    CHECK(some.size() == 10);
    CHECK(std::is_sorted(some.begin(), some.end()));
    CHECK(std::set<int>(some.begin(), some.end()).size() == 10);
    for (int id : some) {
        CHECK(id >= 0);
        CHECK(id < 40);
    }
    CHECK(sample_participants(40, 10, RngStream(2)) == some);

    CHECK_THROWS_AS(sample_participants(5, 0, RngStream(1)), ContractError);
    CHECK_THROWS_AS(sample_participants(5, 6, RngStream(1)), ContractError);

    // selection frequency roughly uniform
    std::vector<int> counts(20, 0);
    const int draws = 10000;
    RngStream rng(3);
    for (int i = 0; i < draws; ++i) {
        for (int id : sample_participants(20, 5, rng.derive("d", static_cast<uint64_t>(i))))
            counts[static_cast<size_t>(id)]++;
    }
    const double p = 5.0 / 20.0;
    const double sigma = std::sqrt(draws * p * (1 - p));
    for (int c : counts) {
        CHECK(std::abs(c - draws * p) < 3.5 * sigma);
    }
}

TEST_CASE("client_train with zero lr returns the model bitwise") {
    RunConfig cfg = small_run(Strategy::LayerWise, 2);
    cfg.plan.lr_enc_a.assign(2, 0.0);
    cfg.plan.lr_enc_b.assign(2, 0.0);
    cfg.plan.lr_head = 0.0;
    cfg.use_sgd = true;  // Adam at lr 0 is also a no-op, but sgd makes it obvious
    const ExperimentData data = build_experiment_data(cfg);

    GlobalState state;
    state.rng = RngStream(7);
    HeadSpec hspec{HeadSpec::Kind::Projection, 0, cfg.head_hidden, cfg.head_out};
    state.model = init_global_model(cfg.enc_a.in_dim, cfg.model_config().spec_a,
                                    cfg.enc_b.in_dim, cfg.model_config().spec_b, hspec,
                                    false, 0, 256, state.rng);
    FedRunConfig fed = cfg.fed_config();
    RunResult result;
    run_stage(state, fed, make_clients(data.partition), data.train, result, nullptr);

    const ClientResult r = client_train(state.model, data.train,
                                        data.partition.assignments[0], 1, fed,
                                        RngStream(9));
    const ParameterBundle before = extract_active(state.model);
    REQUIRE(r.update.compatible(before));
    for (size_t s = 0; s < before.segments.size(); ++s) {
        for (size_t p = 0; p < before.segments[s].params.size(); ++p) {
            CHECK(r.update.segments[s].params[p].data ==
                  before.segments[s].params[p].data);
        }
    }
}

TEST_CASE("layer-wise upload set is the newest blocks plus heads") {
    const RunConfig cfg = small_run(Strategy::LayerWise, 3);
    const ExperimentData data = build_experiment_data(cfg);
    FedRunConfig fed = cfg.fed_config();

    GlobalState state;
    state.rng = RngStream(fed.seed);
    HeadSpec hspec{HeadSpec::Kind::Projection, 0, cfg.head_hidden, cfg.head_out};
    state.model = init_global_model(cfg.enc_a.in_dim, cfg.model_config().spec_a,
                                    cfg.enc_b.in_dim, cfg.model_config().spec_b, hspec,
                                    false, 0, 256, state.rng);
    const auto clients = make_clients(data.partition);
    RunResult result;
    run_stage(state, fed, clients, data.train, result, nullptr);
    run_stage(state, fed, clients, data.train, result, nullptr);

    const ClientResult r = client_train(state.model, data.train,
                                        data.partition.assignments[1], 2, fed,
                                        RngStream(11));
    std::set<std::string> names;
    for (const Segment& s : r.update.segments) names.insert(s.name);
    CHECK(names == std::set<std::string>{"a/block2", "b/block2", "head/a", "head/b"});
}

TEST_CASE("frozen segments are bitwise constant across layer-wise rounds") {
    const RunConfig cfg = small_run(Strategy::LayerWise, 3);
    const ExperimentData data = build_experiment_data(cfg);
    FedRunConfig fed = cfg.fed_config();

    std::vector<std::pair<std::string, std::vector<double>>> frozen_snapshot;
    int violations = 0;
    RoundObserver observer = [&](const GlobalState& s, RoundRecord&) {
        const ParameterBundle all = extract_all(s.model);
        std::vector<std::pair<std::string, std::vector<double>>> now;
        for (const Segment& seg : all.segments) {
            if (!seg.frozen) continue;
            std::vector<double> flat;
            for (const Tensor& t : seg.params)
                flat.insert(flat.end(), t.data.begin(), t.data.end());
            now.emplace_back(seg.name, std::move(flat));
        }
        for (const auto& [name, vals] : now) {
            for (const auto& [pname, pvals] : frozen_snapshot) {
                if (pname == name && pvals != vals) ++violations;
            }
        }
        frozen_snapshot = std::move(now);
    };
    server_run(cfg.model_config(), fed, data, observer);
    CHECK(violations == 0);
}

TEST_CASE("run history has the planned length and stage labels") {
    const RunConfig cfg = small_run(Strategy::Progressive, 3);
    const ExperimentData data = build_experiment_data(cfg);
    const RunResult res = server_run(cfg.model_config(), cfg.fed_config(), data);
    REQUIRE(res.history.size() == 6);
    for (size_t i = 0; i < res.history.size(); ++i) {
        CHECK(res.history[i].round == static_cast<int>(i) + 1);
        CHECK(res.history[i].stage == static_cast<int>(i) / 2 + 1);
    }
    // final model has the full planned depth
    CHECK(res.state.model.enc_a.depth() == 3);
    CHECK(res.state.model.enc_b.depth() == 3);
}

TEST_CASE("zero-round stages attach layers but run nothing") {
    RunConfig cfg = small_run(Strategy::LayerWise, 3);
    cfg.plan.rounds = {0, 0, 4};
    const ExperimentData data = build_experiment_data(cfg);
    const RunResult res = server_run(cfg.model_config(), cfg.fed_config(), data);
    REQUIRE(res.history.size() == 4);
    for (const RoundRecord& r : res.history) CHECK(r.stage == 3);
    CHECK(res.state.model.enc_a.depth() == 3);
}

TEST_CASE("round ledger equals the serialized exchange exactly") {
    const RunConfig cfg = small_run(Strategy::LayerWise, 2);
    const ExperimentData data = build_experiment_data(cfg);
    int checked = 0;
    RoundObserver observer = [&](const GlobalState& s, RoundRecord& rec) {
        const SerializedBundle wire = serialize_bundle(extract_active(s.model));
        CHECK(rec.up_bytes == wire.payload_bytes());
        CHECK(rec.down_bytes == wire.payload_bytes());
        ++checked;
    };
    server_run(cfg.model_config(), cfg.fed_config(), data, observer);
    CHECK(checked == 4);
}

TEST_CASE("same seed gives identical histories; different seed differs") {
    const RunConfig cfg = small_run(Strategy::LayerWise, 2);
    const ExperimentData data = build_experiment_data(cfg);
    const RunResult a = server_run(cfg.model_config(), cfg.fed_config(), data);
    const RunResult b = server_run(cfg.model_config(), cfg.fed_config(), data);
    REQUIRE(a.history.size() == b.history.size());
    for (size_t i = 0; i < a.history.size(); ++i) {
        CHECK(a.history[i].mean_loss == b.history[i].mean_loss);
        CHECK(a.history[i].up_bytes == b.history[i].up_bytes);
    }
    FedRunConfig other = cfg.fed_config();
    other.seed = cfg.seed + 1;
    const RunResult c = server_run(cfg.model_config(), other, data);
    CHECK(a.history.front().mean_loss != c.history.front().mean_loss);
}

TEST_CASE("worker count does not change the result") {
    const RunConfig cfg = small_run(Strategy::Progressive, 2);
    const ExperimentData data = build_experiment_data(cfg);
    FedRunConfig serial = cfg.fed_config();
    serial.workers = 1;
    FedRunConfig parallel = cfg.fed_config();
    parallel.workers = 4;
    const RunResult a = server_run(cfg.model_config(), serial, data);
    const RunResult b = server_run(cfg.model_config(), parallel, data);
    const ParameterBundle pa = extract_all(a.state.model);
    const ParameterBundle pb = extract_all(b.state.model);
    REQUIRE(pa.compatible(pb));
    for (size_t s = 0; s < pa.segments.size(); ++s) {
        for (size_t p = 0; p < pa.segments[s].params.size(); ++p) {
            CHECK(pa.segments[s].params[p].data == pb.segments[s].params[p].data);
        }
    }
}

TEST_CASE("single client full participation reduces to local training") {
    RunConfig cfg = small_run(Strategy::EndToEnd, 2);
    cfg.fed_clients = 1;
    cfg.fed_participants = 1;
    cfg.validate();
    const ExperimentData data = build_experiment_data(cfg);
    FedRunConfig fed = cfg.fed_config();

    GlobalState state;
    state.rng = RngStream(fed.seed);
    HeadSpec hspec{HeadSpec::Kind::Projection, 0, cfg.head_hidden, cfg.head_out};
    state.model = init_global_model(cfg.enc_a.in_dim, cfg.model_config().spec_a,
                                    cfg.enc_b.in_dim, cfg.model_config().spec_b, hspec,
                                    false, 0, 256, state.rng);
    FedRunConfig staged = fed;
    RunResult result;
    run_stage(state, staged, make_clients(data.partition), data.train, result, nullptr);
    // after the stage, the global model must equal the last client result of
    // the last round; re-run the final round's client call to verify
    GlobalState replay;
    replay.rng = RngStream(fed.seed);
    replay.model = init_global_model(cfg.enc_a.in_dim, cfg.model_config().spec_a,
                                     cfg.enc_b.in_dim, cfg.model_config().spec_b, hspec,
                                     false, 0, 256, replay.rng);
    RunResult rr;
    run_stage(replay, staged, make_clients(data.partition), data.train, rr, nullptr);
    const ParameterBundle a = extract_all(state.model);
    const ParameterBundle b = extract_all(replay.model);
    for (size_t s = 0; s < a.segments.size(); ++s) {
        for (size_t p = 0; p < a.segments[s].params.size(); ++p) {
            CHECK(a.segments[s].params[p].data == b.segments[s].params[p].data);
        }
    }
}

TEST_CASE("partial participation renormalizes weights and still converges state") {
    RunConfig cfg = small_run(Strategy::LayerWise, 2);
    cfg.fed_participants = 2;
    cfg.validate();
    const ExperimentData data = build_experiment_data(cfg);
    const RunResult res = server_run(cfg.model_config(), cfg.fed_config(), data);
    CHECK(res.history.size() == 4);
    for (const RoundRecord& r : res.history) CHECK(std::isfinite(r.mean_loss));
}

TEST_CASE("server_run validates its inputs") {
    RunConfig cfg = small_run(Strategy::LayerWise, 2);
    const ExperimentData data = build_experiment_data(cfg);
    FedRunConfig fed = cfg.fed_config();
    fed.participants = 9;
    CHECK_THROWS_AS(server_run(cfg.model_config(), fed, data), ContractError);
    FedRunConfig fed2 = cfg.fed_config();
    fed2.clients = 3;  // partition was built for 4
    fed2.participants = 3;
    CHECK_THROWS_AS(server_run(cfg.model_config(), fed2, data), ContractError);
}

TEST_CASE("training reduces the loss on a fixed tiny batch") {
    // single client, single stage, descent check over repeated rounds
    RunConfig cfg = small_run(Strategy::EndToEnd, 1);
    cfg.fed_clients = 1;
    cfg.fed_participants = 1;
    cfg.data.samples = 32;
    cfg.data.noise = 0.0;
    cfg.fed_epochs = 2;
    cfg.plan.rounds = {12};
    cfg.validate();
    const ExperimentData data = build_experiment_data(cfg);
    const RunResult res = server_run(cfg.model_config(), cfg.fed_config(), data);
    CHECK(res.history.back().mean_loss < res.history.front().mean_loss);
}
