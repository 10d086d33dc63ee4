// Command-line front end: run a single experiment (training or analytic
// accounting), compare strategies, or list the built-in presets.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mmfl/config.hpp"
#include "mmfl/report.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

struct CommonOpts {
    std::string config_path;
    std::string preset;
    std::optional<uint64_t> seed;
    std::string out;
    std::optional<int> workers;
    std::string mode;
};

mmfl::RunConfig load_config(const CommonOpts& opts) {
    mmfl::RunConfig cfg;
    if (!opts.preset.empty() && !opts.config_path.empty()) {
        throw mmfl::ConfigError("pass either --config or --preset, not both");
    }
    if (!opts.preset.empty()) {
        cfg = mmfl::preset_config(opts.preset);
    } else if (!opts.config_path.empty()) {
        std::ifstream f(opts.config_path);
        if (!f) throw mmfl::ConfigError("cannot open config file: " + opts.config_path);
        nlohmann::json j;
        try {
            f >> j;
        } catch (const nlohmann::json::exception& e) {
            throw mmfl::ConfigError(std::string("config is not valid JSON: ") + e.what());
        }
        cfg = mmfl::parse_config(j);
    } else {
        throw mmfl::ConfigError("one of --config or --preset is required");
    }
    if (opts.seed) cfg.seed = *opts.seed;
    if (opts.workers) cfg.workers = *opts.workers;
    if (!opts.mode.empty()) cfg.mode = opts.mode;
    if (!opts.out.empty()) {
        cfg.out_dir = opts.out;
    } else if (const char* env = std::getenv("MMFL_OUT_DIR")) {
        cfg.out_dir = env;
    }
    cfg.validate();
    return cfg;
}

void write_artifacts(const mmfl::RunConfig& cfg, const std::string& csv,
                     const nlohmann::json& summary,
                     const std::optional<nlohmann::json>& profile) {
    std::filesystem::create_directories(cfg.out_dir);
    if (!csv.empty()) {
        mmfl::write_text_file(cfg.out_dir + "/metrics.csv", csv);
    }
    mmfl::write_text_file(cfg.out_dir + "/summary.json", summary.dump(2) + "\n");
    if (profile) {
        mmfl::write_text_file(cfg.out_dir + "/gradient_profile.json",
                              profile->dump(2) + "\n");
    }
}

int cmd_run(const CommonOpts& opts) {
    const mmfl::RunConfig cfg = load_config(opts);
    if (cfg.mode == "account-only") {
        const auto t0 = std::chrono::steady_clock::now();
        nlohmann::json summary = mmfl::account_summary(cfg);
        const auto t1 = std::chrono::steady_clock::now();
        summary["elapsed_seconds"] =
            std::chrono::duration<double>(t1 - t0).count();
        write_artifacts(cfg, "", summary, std::nullopt);
        std::cout << summary["strategies"].dump(2) << "\n";
        return kExitOk;
    }
    mmfl::TrainingArtifacts art = mmfl::run_training(cfg);
    write_artifacts(cfg, art.csv, art.summary, art.gradient_profile);
    std::cout << "rounds: " << art.result.history.size()
              << "  final loss: " << art.summary.value("final_loss", 0.0) << "\n";
    return kExitOk;
}

int cmd_compare(const CommonOpts& opts, const std::vector<std::string>& presets) {
    std::vector<mmfl::RunConfig> configs;
    if (!presets.empty()) {
        for (const std::string& p : presets) {
            CommonOpts o = opts;
            o.preset = p;
            o.config_path.clear();
            configs.push_back(load_config(o));
        }
    } else {
        // one preset expanded across every strategy it has a plan for
        const mmfl::RunConfig base = load_config(opts);
        for (mmfl::Strategy s : {mmfl::Strategy::EndToEnd, mmfl::Strategy::Progressive,
                                 mmfl::Strategy::LayerWise}) {
            if (base.plans.count(mmfl::to_string(s)) == 0 && s != base.strategy) continue;
            mmfl::RunConfig c = base;
            c.strategy = s;
            c.plan = base.plan_for(s);
            configs.push_back(std::move(c));
        }
    }
    const nlohmann::json report = mmfl::compare_report(configs);
    const std::string out_dir = configs.front().out_dir;
    std::filesystem::create_directories(out_dir);
    mmfl::write_text_file(out_dir + "/compare.json", report.dump(2) + "\n");
    std::cout << mmfl::compare_text(report);
    return kExitOk;
}

int cmd_presets() {
    for (const std::string& name : mmfl::preset_names()) {
        const mmfl::RunConfig c = mmfl::preset_config(name);
        std::cout << name << "  (" << mmfl::to_string(c.strategy) << ", " << c.mode
                  << ")\n";
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Federated multimodal training simulator and resource analyzer"};
    app.require_subcommand(1);

    CommonOpts run_opts, cmp_opts;
    std::vector<std::string> cmp_presets;

    auto add_common = [](CLI::App* sub, CommonOpts& o) {
        sub->add_option("--config", o.config_path, "JSON config file");
        sub->add_option("--preset", o.preset, "built-in preset name");
        sub->add_option("--seed", o.seed, "seed override");
        sub->add_option("--out", o.out, "output directory");
        sub->add_option("--workers", o.workers, "parallel client workers");
        sub->add_option("--mode", o.mode, "train or account-only")
            ->check(CLI::IsMember({"train", "account-only"}));
    };

    CLI::App* run = app.add_subcommand("run", "execute one experiment");
    add_common(run, run_opts);
    CLI::App* cmp = app.add_subcommand("compare", "compare strategies");
    add_common(cmp, cmp_opts);
    cmp->add_option("--presets", cmp_presets, "presets to compare")->delimiter(',');
    app.add_subcommand("presets", "list built-in presets");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (run->parsed()) return cmd_run(run_opts);
        if (cmp->parsed()) return cmd_compare(cmp_opts, cmp_presets);
        return cmd_presets();
    } catch (const mmfl::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
}
