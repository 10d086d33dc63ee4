#pragma once

// Experiment driver and artifact writers: metrics.csv, summary.json and the
// gradient-profile report, plus the account-only and comparison summaries.

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmfl/config.hpp"
#include "mmfl/federation.hpp"

namespace mmfl {

namespace detail {

inline std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace detail

inline std::string csv_header() {
    return "stage,round,loss,up_bytes,down_bytes,fwd_flops,bwd_flops,mem_bytes,"
           "r1_ab,r5_ab,r10_ab,r50_ab,r1_ba,r5_ba,r10_ba,r50_ba,"
           "precision,recall,f1";
}

inline std::string csv_row(const RoundRecord& r) {
    std::string row = std::to_string(r.stage) + "," + std::to_string(r.round) + "," +
                      detail::fmt_double(r.mean_loss) + "," +
                      std::to_string(r.up_bytes) + "," + std::to_string(r.down_bytes) +
                      "," + std::to_string(r.fwd_flops) + "," +
                      std::to_string(r.bwd_flops) + "," + std::to_string(r.mem_bytes);
    auto recall_cell = [&](const std::vector<int>& ks, const std::vector<double>& vals,
                           int k) -> std::string {
        for (size_t i = 0; i < ks.size(); ++i) {
            if (ks[i] == k) return detail::fmt_double(vals[i]);
        }
        return "";
    };
    for (int k : {1, 5, 10, 50}) {
        row += ",";
        if (r.eval && r.eval->has_retrieval) {
            row += recall_cell(r.eval->retrieval.ks, r.eval->retrieval.recall_ab, k);
        }
    }
    for (int k : {1, 5, 10, 50}) {
        row += ",";
        if (r.eval && r.eval->has_retrieval) {
            row += recall_cell(r.eval->retrieval.ks, r.eval->retrieval.recall_ba, k);
        }
    }
    if (r.eval && r.eval->has_prf1) {
        row += "," + detail::fmt_double(r.eval->prf1.precision);
        row += "," + detail::fmt_double(r.eval->prf1.recall);
        row += "," + detail::fmt_double(r.eval->prf1.f1);
    } else {
        row += ",,,";
    }
    return row;
}

inline std::string metrics_csv(const std::vector<RoundRecord>& history) {
    std::string out = csv_header() + "\n";
    for (const RoundRecord& r : history) out += csv_row(r) + "\n";
    return out;
}

// -------------------------------------------------------------- account-only

inline nlohmann::json account_strategy_summary(const RunConfig& cfg, Strategy s) {
    const StagePlan& plan = cfg.plan_for(s);
    const ModelShapes shapes = cfg.shapes_for(s);
    nlohmann::json j;
    j["strategy"] = to_string(s);
    j["total_params"] = total_params(shapes);
    const int64_t comm = comm_total_bytes(shapes, plan, s);
    j["comm_total_bytes"] = comm;
    j["comm_total_mib"] = to_mib(comm);
    j["comm_units"] = "MiB";
    j["flops_total"] = flops_total(shapes, plan, s, cfg.fed_epochs);
    j["flops_units"] = "FLOPs";
    j["memory_peak_bytes"] = memory_peak_bytes(shapes, plan, s, cfg.fed_batch);
    nlohmann::json rounds = nlohmann::json::array();
    for (int st = 1; st <= plan.stages; ++st) {
        const CommBytes cb = comm_round_bytes(shapes, plan, s, st);
        const FlopsCount fc = flops_per_sample(shapes, plan, s, st);
        rounds.push_back({{"stage", st},
                          {"rounds", plan.rounds[static_cast<size_t>(st - 1)]},
                          {"up_bytes", cb.upload},
                          {"down_bytes", cb.download},
                          {"fwd_flops", fc.forward},
                          {"bwd_flops", fc.backward}});
    }
    j["stages"] = rounds;
    return j;
}

// Every strategy with a plan in the config; ratios normalized to EndToEnd
// when an end-to-end plan is present.
inline nlohmann::json account_summary(const RunConfig& cfg) {
    nlohmann::json j;
    j["config"] = config_to_json(cfg);
    nlohmann::json strategies;
    std::vector<Strategy> order{Strategy::EndToEnd, Strategy::Progressive,
                                Strategy::LayerWise};
    bool have_ete = false;
    double ete_comm = 0.0, ete_flops = 0.0, ete_mem = 0.0;
    for (Strategy s : order) {
        if (cfg.plans.count(to_string(s)) == 0 && s != cfg.strategy) continue;
        nlohmann::json entry = account_strategy_summary(cfg, s);
        if (s == Strategy::EndToEnd) {
            have_ete = true;
            ete_comm = entry["comm_total_bytes"].get<double>();
            ete_flops = entry["flops_total"].get<double>();
            ete_mem = entry["memory_peak_bytes"].get<double>();
        }
        strategies[to_string(s)] = std::move(entry);
    }
    if (have_ete) {
        for (auto& [name, entry] : strategies.items()) {
            entry["comm_ratio_vs_end_to_end"] =
                entry["comm_total_bytes"].get<double>() / ete_comm;
            entry["flops_ratio_vs_end_to_end"] =
                entry["flops_total"].get<double>() / ete_flops;
            entry["memory_ratio_vs_end_to_end"] =
                entry["memory_peak_bytes"].get<double>() / ete_mem;
        }
    }
    j["strategies"] = std::move(strategies);
    return j;
}

// ------------------------------------------------------------------ training

struct TrainingArtifacts {
    RunResult result;
    std::string csv;
    nlohmann::json summary;
    std::optional<nlohmann::json> gradient_profile;
};

inline ExperimentData build_experiment_data(const RunConfig& cfg) {
    const RngStream root(cfg.seed);
    const BlockSpec spec_a{cfg.enc_a.width, cfg.enc_a.heads, cfg.enc_a.mlp, cfg.enc_a.seq};
    const BlockSpec spec_b{cfg.enc_b.width, cfg.enc_b.heads, cfg.enc_b.mlp, cfg.enc_b.seq};
    ExperimentData data;
    // One pool so the train and held-out splits share the generative map.
    const int64_t total = cfg.data.samples + std::max<int64_t>(0, cfg.data.held_out);
    const PairedDataset pool =
        gen_synthetic_pairs(total, cfg.data.latent, spec_a, cfg.enc_a.in_dim, spec_b,
                            cfg.enc_b.in_dim, cfg.data.classes, cfg.data.noise,
                            root.derive("data"));
    auto take = [&](int64_t begin, int64_t count) {
        std::vector<int64_t> idx(static_cast<size_t>(count));
        std::iota(idx.begin(), idx.end(), begin);
        PairedDataset out;
        out.n = count;
        out.x_a = PairedDataset::gather(pool.x_a, idx);
        out.x_b = PairedDataset::gather(pool.x_b, idx);
        if (pool.supervised()) {
            for (int64_t i : idx) out.labels.push_back(pool.labels[static_cast<size_t>(i)]);
        }
        return out;
    };
    data.train = take(0, cfg.data.samples);
    if (cfg.data.held_out > 0) {
        data.heldout = take(cfg.data.samples, cfg.data.held_out);
    }
    if (cfg.data.partition == "dirichlet") {
        data.partition = dirichlet_partition(data.train.labels, cfg.fed_clients,
                                             cfg.data.beta, root.derive("partition"));
    } else {
        data.partition = uniform_partition(cfg.data.samples, cfg.fed_clients,
                                           root.derive("partition"));
    }
    return data;
}

inline std::vector<int64_t> first_indices(const PairedDataset& d, int64_t cap = 16) {
    std::vector<int64_t> idx;
    for (int64_t i = 0; i < std::min(cap, d.n); ++i) idx.push_back(i);
    return idx;
}

inline nlohmann::json gradient_profile_report(const DualModel& m,
                                              const PairedDataset& probe,
                                              Temperature tau) {
    auto run_mode = [&](ProfileMode mode) {
        const GradientProfile prof =
            track_gradients(m.enc_b, m.enc_a, m.head_b, m.hspec_b, m.head_a, m.hspec_a,
                            PairedDataset::gather(probe.x_b, first_indices(probe)),
                            PairedDataset::gather(probe.x_a, first_indices(probe)), tau,
                            mode);
        return prof.values;
    };
    nlohmann::json j;
    j["probe"] = "attention-output weight, encoder b, normalized to last block";
    j["end_to_end"] = run_mode(ProfileMode::EndToEnd);
    j["progressive"] = run_mode(ProfileMode::Progressive);
    return j;
}

inline TrainingArtifacts run_training(const RunConfig& cfg) {
    const ExperimentData data = build_experiment_data(cfg);
    TrainingArtifacts art;
    art.result = server_run(cfg.model_config(), cfg.fed_config(), data);
    art.csv = metrics_csv(art.result.history);

    nlohmann::json summary;
    summary["config"] = config_to_json(cfg);
    summary["comm_total_up_bytes"] = art.result.comm_total_up;
    summary["comm_total_down_bytes"] = art.result.comm_total_down;
    int64_t comm_total = art.result.comm_total_up + art.result.comm_total_down;
    if (cfg.count_stage_broadcast) comm_total += art.result.stage_broadcast_bytes;
    summary["comm_total_bytes"] = comm_total;
    summary["comm_total_mib"] = to_mib(comm_total);
    summary["stage_broadcast_bytes"] = art.result.stage_broadcast_bytes;
    summary["stage_broadcast_counted"] = cfg.count_stage_broadcast;
    summary["rounds_run"] = art.result.history.size();
    if (!art.result.history.empty()) {
        summary["first_round_loss"] = art.result.history.front().mean_loss;
        summary["final_loss"] = art.result.history.back().mean_loss;
        const RoundRecord& last = art.result.history.back();
        if (last.eval) {
            nlohmann::json fin;
            if (last.eval->has_retrieval) {
                fin["retrieval_ks"] = last.eval->retrieval.ks;
                fin["recall_ab"] = last.eval->retrieval.recall_ab;
                fin["recall_ba"] = last.eval->retrieval.recall_ba;
            }
            if (last.eval->has_prf1) {
                fin["precision"] = last.eval->prf1.precision;
                fin["recall"] = last.eval->prf1.recall;
                fin["f1"] = last.eval->prf1.f1;
            }
            summary["final_metrics"] = fin;
        }
    }
    art.summary = std::move(summary);

    if (cfg.track_gradients && data.heldout.n > 0) {
        art.gradient_profile =
            gradient_profile_report(art.result.state.model, data.heldout,
                                    Temperature{cfg.tau});
    }
    return art;
}

// -------------------------------------------------------------------- compare

// Relative-resource comparison across strategies, normalized to EndToEnd.
inline nlohmann::json compare_report(const std::vector<RunConfig>& configs) {
    if (configs.empty()) throw ContractError("compare: no configurations");
    nlohmann::json rows = nlohmann::json::array();
    double ete_comm = 0.0, ete_flops = 0.0, ete_mem = 0.0;
    bool have_ete = false;
    struct Entry {
        RunConfig cfg;
        nlohmann::json summary;
        int64_t comm;
        int64_t flops;
        int64_t mem;
    };
    std::vector<Entry> entries;
    for (const RunConfig& c : configs) {
        Entry e;
        e.cfg = c;
        if (c.mode == "account-only") {
            e.summary = account_strategy_summary(c, c.strategy);
        } else {
            TrainingArtifacts art = run_training(c);
            e.summary = art.summary;
            e.summary["comm_total_bytes"] =
                art.result.comm_total_up + art.result.comm_total_down;
            const ModelShapes shapes = c.shapes_for(c.strategy);
            e.summary["flops_total"] =
                flops_total(shapes, c.plan, c.strategy, c.fed_epochs);
            e.summary["memory_peak_bytes"] =
                memory_peak_bytes(shapes, c.plan, c.strategy, c.fed_batch);
        }
        e.comm = e.summary["comm_total_bytes"].get<int64_t>();
        e.flops = e.summary["flops_total"].get<int64_t>();
        e.mem = e.summary["memory_peak_bytes"].get<int64_t>();
        if (c.strategy == Strategy::EndToEnd) {
            have_ete = true;
            ete_comm = static_cast<double>(e.comm);
            ete_flops = static_cast<double>(e.flops);
            ete_mem = static_cast<double>(e.mem);
        }
        entries.push_back(std::move(e));
    }
    for (Entry& e : entries) {
        nlohmann::json row;
        row["strategy"] = to_string(e.cfg.strategy);
        row["name"] = e.cfg.name;
        row["comm_total_bytes"] = e.comm;
        row["flops_total"] = e.flops;
        row["memory_peak_bytes"] = e.mem;
        if (have_ete) {
            row["comm_multiplier"] = static_cast<double>(e.comm) / ete_comm;
            row["flops_multiplier"] = static_cast<double>(e.flops) / ete_flops;
            row["memory_multiplier"] = static_cast<double>(e.mem) / ete_mem;
        }
        if (e.summary.contains("final_metrics")) {
            row["final_metrics"] = e.summary["final_metrics"];
        }
        rows.push_back(std::move(row));
    }
    nlohmann::json j;
    j["rows"] = rows;
    j["normalized_to"] = have_ete ? "end_to_end" : "none";
    return j;
}

inline std::string compare_text(const nlohmann::json& report) {
    char buf[256];
    std::string out =
        "strategy       comm            flops           memory\n";
    for (const auto& row : report.at("rows")) {
        std::string line = row.at("strategy").get<std::string>();
        line.resize(15, ' ');
        auto cell = [&](const char* total_key, const char* mult_key) {
            std::string c;
            if (row.contains(mult_key)) {
                std::snprintf(buf, sizeof(buf), "%.2fx", row.at(mult_key).get<double>());
                c = buf;
            } else {
                c = row.at(total_key).dump();
            }
            c.resize(16, ' ');
            return c;
        };
        line += cell("comm_total_bytes", "comm_multiplier");
        line += cell("flops_total", "flops_multiplier");
        line += cell("memory_peak_bytes", "memory_multiplier");
        out += line + "\n";
    }
    return out;
}

inline void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ContractError("cannot open for writing: " + path);
    f << content;
    if (!f) throw ContractError("write failed: " + path);
}

}  // namespace mmfl
