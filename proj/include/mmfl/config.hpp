#pragma once

// Run configuration: JSON parsing with field-level diagnostics, validation,
// and the named presets compiled into the binary.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmfl/accounting.hpp"
#include "mmfl/federation.hpp"
#include "mmfl/plan.hpp"

namespace mmfl {

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& m) : std::runtime_error(m) {}
};

struct EncoderConfig {
    int seq = 0;
    int width = 0;
    int heads = 0;
    int mlp = 0;
    int in_dim = 0;
    bool lookup = false;     // token-lookup embedding (accounting only)
    int64_t vocab = 0;
    int pos_rows = 0;        // defaults to seq
};

struct DataConfig {
    int64_t samples = 0;
    int latent = 8;
    std::optional<int> classes;
    double noise = 0.05;
    std::string partition = "uniform";  // or "dirichlet"
    double beta = 0.5;
    int64_t held_out = 0;
};

inline EncoderShape to_shape(const EncoderConfig& e, int total_blocks) {
    EncoderShape s;
    s.seq = e.seq;
    s.d = e.width;
    s.heads = e.heads;
    s.mlp = e.mlp;
    s.in_dim = e.in_dim;
    s.lookup_embed = e.lookup;
    s.vocab = e.vocab;
    s.pos_rows = e.pos_rows;
    s.total_blocks = total_blocks;
    return s;
}

struct RunConfig {
    std::string name = "custom";
    Strategy strategy = Strategy::LayerWise;
    std::string mode = "train";  // "train" | "account-only"
    uint64_t seed = 0;
    std::string out_dir = "out";
    int workers = 1;
    int eval_every = 0;
    bool track_gradients = false;

    EncoderConfig enc_a;
    EncoderConfig enc_b;
    int head_hidden = 0;
    int head_out = 0;
    bool supervised = false;
    int classes = 0;
    int sup_hidden = 256;

    StagePlan plan;
    // Optional per-strategy plans for account-only summaries and `compare`.
    std::map<std::string, StagePlan> plans;

    int fed_clients = 4;
    int fed_participants = 4;
    int fed_epochs = 3;
    int64_t fed_batch = 32;
    double tau = 0.05;
    bool use_sgd = false;
    bool count_stage_broadcast = false;

    DataConfig data;

    const StagePlan& plan_for(Strategy s) const {
        const auto it = plans.find(to_string(s));
        if (it != plans.end()) return it->second;
        if (s != strategy) {
            throw ConfigError("no plan available for strategy " + to_string(s));
        }
        return plan;
    }

    EncoderShape shape_a() const { return to_shape(enc_a, plan.total_blocks_a()); }
    EncoderShape shape_b() const { return to_shape(enc_b, plan.total_blocks_b()); }

    ModelShapes shapes_for(Strategy s) const {
        const StagePlan& p = plan_for(s);
        ModelShapes m;
        m.enc_a = to_shape(enc_a, p.total_blocks_a());
        m.enc_b = to_shape(enc_b, p.total_blocks_b());
        m.head_a = HeadShape{enc_a.width, head_hidden, head_out, false};
        m.head_b = HeadShape{enc_b.width, head_hidden, head_out, false};
        m.has_sup_head = supervised;
        if (supervised) m.head_sup = HeadShape{2 * head_out, sup_hidden, classes, true};
        return m;
    }

    ModelConfig model_config() const {
        ModelConfig mc;
        mc.in_a = enc_a.in_dim;
        mc.spec_a = BlockSpec{enc_a.width, enc_a.heads, enc_a.mlp, enc_a.seq};
        mc.in_b = enc_b.in_dim;
        mc.spec_b = BlockSpec{enc_b.width, enc_b.heads, enc_b.mlp, enc_b.seq};
        mc.head_hidden = head_hidden;
        mc.head_out = head_out;
        mc.supervised = supervised;
        mc.classes = classes;
        mc.sup_hidden = sup_hidden;
        return mc;
    }

    FedRunConfig fed_config() const {
        FedRunConfig f;
        f.strategy = strategy;
        f.plan = plan;
        f.clients = fed_clients;
        f.participants = fed_participants;
        f.epochs = fed_epochs;
        f.batch = fed_batch;
        f.tau = Temperature{tau};
        f.optimizer.use_sgd = use_sgd;
        f.seed = seed;
        f.workers = workers;
        f.count_stage_broadcast = count_stage_broadcast;
        f.eval_every = eval_every;
        return f;
    }

    void validate() const {
        auto fail = [](const std::string& field, const std::string& why) {
            throw ConfigError("invalid config field '" + field + "': " + why);
        };
        if (mode != "train" && mode != "account-only") {
            fail("mode", "must be 'train' or 'account-only'");
        }
        auto check_enc = [&](const EncoderConfig& e, const std::string& which) {
            if (e.seq < 1) fail(which + ".seq", "must be >= 1");
            if (e.width < 1) fail(which + ".width", "must be >= 1");
            if (e.heads < 1) fail(which + ".heads", "must be >= 1");
            if (e.width % e.heads != 0) fail(which + ".heads", "must divide width");
            if (e.mlp < 1) fail(which + ".mlp", "must be >= 1");
            if (!e.lookup && e.in_dim < 1) fail(which + ".in_dim", "must be >= 1");
            if (e.lookup && e.vocab < 1) fail(which + ".vocab", "must be >= 1 for lookup");
        };
        check_enc(enc_a, "model.encoder_a");
        check_enc(enc_b, "model.encoder_b");
        if (head_hidden < 1) fail("model.head.hidden", "must be >= 1");
        if (head_out < 1) fail("model.head.out", "must be >= 1");
        if (supervised && classes < 2) fail("model.classes", "must be >= 2 when supervised");

        try {
            plan.validate();
            for (const auto& [k, p] : plans) {
                strategy_from_string(k);
                p.validate();
            }
        } catch (const ContractError& e) {
            fail("plan", e.what());
        }

        if (fed_clients < 1) fail("federation.clients", "must be >= 1");
        if (fed_participants < 1 || fed_participants > fed_clients) {
            fail("federation.participants", "must be in [1, clients]");
        }
        if (fed_epochs < 1) fail("federation.epochs", "must be >= 1");
        if (fed_batch < 1) fail("federation.batch", "must be >= 1");
        if (!(tau > 0.0)) fail("federation.tau", "must be positive");
        if (workers < 1) fail("workers", "must be >= 1");
        if (eval_every < 0) fail("eval_every", "must be >= 0");

        if (mode == "train") {
            if (enc_a.lookup || enc_b.lookup) {
                fail("model.encoder.lookup", "lookup embeddings are account-only");
            }
            if (data.samples < 1) fail("data.samples", "must be >= 1 for training");
            if (data.samples < fed_clients) fail("data.samples", "fewer samples than clients");
            if (data.latent < 1) fail("data.latent", "must be >= 1");
            if (data.noise < 0.0) fail("data.noise", "must be >= 0");
            if (data.partition != "uniform" && data.partition != "dirichlet") {
                fail("data.partition", "must be 'uniform' or 'dirichlet'");
            }
            if (data.partition == "dirichlet") {
                if (!data.classes) fail("data.classes", "required for dirichlet partition");
                if (!(data.beta > 0.0)) fail("data.beta", "must be positive");
            }
            if (supervised && !data.classes) fail("data.classes", "required when supervised");
            if (supervised && data.classes && *data.classes != classes) {
                fail("data.classes", "must equal model.classes");
            }
        }
    }
};

namespace detail {

inline StagePlan parse_plan(const nlohmann::json& j, const std::string& where) {
    StagePlan p;
    auto get = [&](const char* field) -> const nlohmann::json& {
        if (!j.contains(field)) {
            throw ConfigError("invalid config field '" + where + "." + field +
                              "': missing");
        }
        return j.at(field);
    };
    try {
        p.rounds = get("rounds").get<std::vector<int>>();
        p.growth_a = get("growth_a").get<std::vector<int>>();
        p.growth_b = get("growth_b").get<std::vector<int>>();
        p.lr_enc_a = get("lr_enc_a").get<std::vector<double>>();
        p.lr_enc_b = get("lr_enc_b").get<std::vector<double>>();
        p.lr_head = j.value("lr_head", 1e-4);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("invalid config field '" + where + "': " + e.what());
    }
    p.stages = static_cast<int>(p.rounds.size());
    if (j.contains("total_rounds")) {
        const int want = j.at("total_rounds").get<int>();
        if (p.total_rounds() != want) {
            throw ConfigError("invalid config field '" + where +
                              ".rounds': entries sum to " +
                              std::to_string(p.total_rounds()) + ", expected total_rounds " +
                              std::to_string(want));
        }
    }
    return p;
}

inline EncoderConfig parse_encoder(const nlohmann::json& j, const std::string& where) {
    EncoderConfig e;
    try {
        e.seq = j.value("seq", 0);
        e.width = j.value("width", 0);
        e.heads = j.value("heads", 0);
        e.mlp = j.value("mlp", 0);
        e.in_dim = j.value("in_dim", 0);
        e.lookup = j.value("lookup", false);
        e.vocab = j.value("vocab", int64_t{0});
        e.pos_rows = j.value("pos_rows", 0);
    } catch (const nlohmann::json::exception& ex) {
        throw ConfigError("invalid config field '" + where + "': " + ex.what());
    }
    return e;
}

}  // namespace detail

inline RunConfig parse_config(const nlohmann::json& j) {
    RunConfig c;
    try {
        c.name = j.value("name", std::string("custom"));
        if (j.contains("strategy")) {
            try {
                c.strategy = strategy_from_string(j.at("strategy").get<std::string>());
            } catch (const ContractError& e) {
                throw ConfigError(std::string("invalid config field 'strategy': ") +
                                  e.what());
            }
        }
        c.mode = j.value("mode", std::string("train"));
        c.seed = j.value("seed", uint64_t{0});
        c.out_dir = j.value("out", std::string("out"));
        c.workers = j.value("workers", 1);
        c.eval_every = j.value("eval_every", 0);
        c.track_gradients = j.value("track_gradients", false);

        if (!j.contains("model")) throw ConfigError("invalid config field 'model': missing");
        const auto& m = j.at("model");
        if (!m.contains("encoder_a") || !m.contains("encoder_b")) {
            throw ConfigError("invalid config field 'model.encoder_a/encoder_b': missing");
        }
        c.enc_a = detail::parse_encoder(m.at("encoder_a"), "model.encoder_a");
        c.enc_b = detail::parse_encoder(m.at("encoder_b"), "model.encoder_b");
        if (!m.contains("head")) {
            throw ConfigError("invalid config field 'model.head': missing");
        }
        c.head_hidden = m.at("head").value("hidden", 0);
        c.head_out = m.at("head").value("out", 0);
        c.supervised = m.value("supervised", false);
        c.classes = m.value("classes", 0);
        c.sup_hidden = m.value("sup_hidden", 256);

        if (!j.contains("plan")) throw ConfigError("invalid config field 'plan': missing");
        c.plan = detail::parse_plan(j.at("plan"), "plan");
        if (j.contains("plans")) {
            for (const auto& [key, val] : j.at("plans").items()) {
                try {
                    strategy_from_string(key);
                } catch (const ContractError&) {
                    throw ConfigError("invalid config field 'plans." + key +
                                      "': unknown strategy");
                }
                c.plans[key] = detail::parse_plan(val, "plans." + key);
            }
        }

        if (j.contains("federation")) {
            const auto& f = j.at("federation");
            c.fed_clients = f.value("clients", c.fed_clients);
            c.fed_participants = f.value("participants", c.fed_clients);
            c.fed_epochs = f.value("epochs", c.fed_epochs);
            c.fed_batch = f.value("batch", c.fed_batch);
            c.tau = f.value("tau", c.tau);
            c.use_sgd = f.value("sgd", false);
            c.count_stage_broadcast = f.value("count_stage_broadcast", false);
        }

        if (j.contains("data")) {
            const auto& d = j.at("data");
            c.data.samples = d.value("samples", int64_t{0});
            c.data.latent = d.value("latent", 8);
            if (d.contains("classes") && !d.at("classes").is_null()) {
                c.data.classes = d.at("classes").get<int>();
            }
            c.data.noise = d.value("noise", 0.05);
            c.data.partition = d.value("partition", std::string("uniform"));
            c.data.beta = d.value("beta", 0.5);
            c.data.held_out = d.value("held_out", int64_t{0});
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config parse error: ") + e.what());
    }
    c.validate();
    return c;
}

inline nlohmann::json config_to_json(const RunConfig& c) {
    auto plan_json = [](const StagePlan& p) {
        return nlohmann::json{{"rounds", p.rounds},
                              {"growth_a", p.growth_a},
                              {"growth_b", p.growth_b},
                              {"lr_enc_a", p.lr_enc_a},
                              {"lr_enc_b", p.lr_enc_b},
                              {"lr_head", p.lr_head},
                              {"total_rounds", p.total_rounds()}};
    };
    auto enc_json = [](const EncoderConfig& e) {
        return nlohmann::json{{"seq", e.seq},     {"width", e.width},
                              {"heads", e.heads}, {"mlp", e.mlp},
                              {"in_dim", e.in_dim}, {"lookup", e.lookup},
                              {"vocab", e.vocab}, {"pos_rows", e.pos_rows}};
    };
    nlohmann::json j;
    j["name"] = c.name;
    j["strategy"] = to_string(c.strategy);
    j["mode"] = c.mode;
    j["seed"] = c.seed;
    j["out"] = c.out_dir;
    j["workers"] = c.workers;
    j["eval_every"] = c.eval_every;
    j["track_gradients"] = c.track_gradients;
    j["model"] = {{"encoder_a", enc_json(c.enc_a)},
                  {"encoder_b", enc_json(c.enc_b)},
                  {"head", {{"hidden", c.head_hidden}, {"out", c.head_out}}},
                  {"supervised", c.supervised},
                  {"classes", c.classes},
                  {"sup_hidden", c.sup_hidden}};
    j["plan"] = plan_json(c.plan);
    if (!c.plans.empty()) {
        nlohmann::json ps;
        for (const auto& [k, p] : c.plans) ps[k] = plan_json(p);
        j["plans"] = ps;
    }
    j["federation"] = {{"clients", c.fed_clients},
                       {"participants", c.fed_participants},
                       {"epochs", c.fed_epochs},
                       {"batch", c.fed_batch},
                       {"tau", c.tau},
                       {"sgd", c.use_sgd},
                       {"count_stage_broadcast", c.count_stage_broadcast}};
    nlohmann::json d;
    d["samples"] = c.data.samples;
    d["latent"] = c.data.latent;
    if (c.data.classes) {
        d["classes"] = *c.data.classes;
    } else {
        d["classes"] = nullptr;
    }
    d["noise"] = c.data.noise;
    d["partition"] = c.data.partition;
    d["beta"] = c.data.beta;
    d["held_out"] = c.data.held_out;
    j["data"] = d;
    return j;
}

// ------------------------------------------------------------------- presets

namespace detail {

inline StagePlan uniform_plan(std::vector<int> rounds, int ga, int gb, double lra,
                              double lrb, double lrh) {
    StagePlan p;
    p.stages = static_cast<int>(rounds.size());
    p.rounds = std::move(rounds);
    p.growth_a.assign(static_cast<size_t>(p.stages), ga);
    p.growth_b.assign(static_cast<size_t>(p.stages), gb);
    p.lr_enc_a.assign(static_cast<size_t>(p.stages), lra);
    p.lr_enc_b.assign(static_cast<size_t>(p.stages), lrb);
    p.lr_head = lrh;
    return p;
}

// 12-block d=192 image-like encoder and 6-block d=768 text-like encoder
// with a token-lookup embedding, matching the published large configuration.
inline RunConfig large_mirror_base() {
    RunConfig c;
    c.mode = "account-only";
    c.enc_a = EncoderConfig{197, 192, 3, 768, 768, false, 0, 197};
    c.enc_b = EncoderConfig{512, 768, 12, 3072, 768, true, 30522, 512};
    c.head_hidden = 4096;
    c.head_out = 256;
    c.fed_clients = 10;
    c.fed_participants = 10;
    c.fed_epochs = 3;
    c.fed_batch = 256;
    c.tau = 0.05;
    return c;
}

inline RunConfig preset_coco_mirror() {
    RunConfig c = large_mirror_base();
    c.name = "coco-mirror-accounting";
    c.strategy = Strategy::LayerWise;
    c.plans["end_to_end"] = uniform_plan({90}, 12, 6, 1e-6, 3e-6, 1e-4);
    c.plans["progressive"] =
        uniform_plan({15, 15, 15, 15, 15, 15}, 2, 1, 1e-6, 3e-6, 1e-4);
    c.plans["layer_wise"] =
        uniform_plan({0, 0, 0, 10, 30, 50}, 2, 1, 1e-6, 3e-6, 1e-4);
    c.plan = c.plans["layer_wise"];
    return c;
}

inline RunConfig preset_advance_mirror() {
    RunConfig c = large_mirror_base();
    c.name = "advance-mirror-accounting";
    c.strategy = Strategy::LayerWise;
    // audio-like encoder: long spectrogram token sequence, dense input patches
    c.enc_b = EncoderConfig{1212, 768, 12, 3072, 256, false, 0, 1212};
    c.supervised = true;
    c.classes = 13;
    c.sup_hidden = 256;
    c.fed_batch = 16;
    c.data.partition = "dirichlet";
    c.data.beta = 0.5;
    c.plans["end_to_end"] = uniform_plan({90}, 12, 6, 1e-7, 1e-5, 1e-4);
    c.plans["progressive"] =
        uniform_plan({0, 0, 0, 10, 30, 50}, 2, 1, 1e-7, 1e-5, 1e-4);
    c.plans["layer_wise"] =
        uniform_plan({0, 0, 0, 10, 30, 50}, 2, 1, 1e-7, 1e-5, 1e-4);
    c.plan = c.plans["layer_wise"];
    return c;
}

inline RunConfig tiny_base() {
    RunConfig c;
    c.mode = "train";
    c.enc_a = EncoderConfig{4, 16, 2, 32, 8, false, 0, 4};
    c.enc_b = EncoderConfig{5, 16, 2, 32, 6, false, 0, 5};
    c.head_hidden = 32;
    c.head_out = 16;
    c.fed_clients = 4;
    c.fed_participants = 4;
    c.fed_epochs = 3;
    c.fed_batch = 32;
    c.tau = 0.05;
    c.data.samples = 512;
    c.data.latent = 8;
    c.data.noise = 0.05;
    c.data.partition = "uniform";
    c.data.held_out = 128;
    return c;
}

}  // namespace detail

inline std::vector<std::string> preset_names() {
    return {"coco-mirror-accounting", "advance-mirror-accounting", "tiny-lw",
            "tiny-prog", "tiny-ete"};
}

inline RunConfig preset_config(const std::string& name) {
    if (name == "coco-mirror-accounting") return detail::preset_coco_mirror();
    if (name == "advance-mirror-accounting") return detail::preset_advance_mirror();
    const double lr = 8e-3, lrh = 8e-3;
    if (name == "tiny-lw") {
        RunConfig c = detail::tiny_base();
        c.name = name;
        c.strategy = Strategy::LayerWise;
        c.plan = detail::uniform_plan({10, 10, 10}, 1, 1, lr, lr, lrh);
        return c;
    }
    if (name == "tiny-prog") {
        RunConfig c = detail::tiny_base();
        c.name = name;
        c.strategy = Strategy::Progressive;
        c.plan = detail::uniform_plan({10, 10, 10}, 1, 1, lr, lr, lrh);
        return c;
    }
    if (name == "tiny-ete") {
        RunConfig c = detail::tiny_base();
        c.name = name;
        c.strategy = Strategy::EndToEnd;
        c.plan = detail::uniform_plan({30}, 3, 3, lr, lr, lrh);
        return c;
    }
    throw ConfigError("unknown preset: " + name);
}

}  // namespace mmfl
