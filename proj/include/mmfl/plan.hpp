#pragma once

// Strategy and stage schedule shared by the federation loop and the
// resource accounting.

#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "mmfl/tensor.hpp"

namespace mmfl {

enum class Strategy { EndToEnd, Progressive, LayerWise };

inline std::string to_string(Strategy s) {
    switch (s) {
        case Strategy::EndToEnd: return "end_to_end";
        case Strategy::Progressive: return "progressive";
        case Strategy::LayerWise: return "layer_wise";
    }
    return "?";
}

inline Strategy strategy_from_string(const std::string& s) {
    if (s == "end_to_end") return Strategy::EndToEnd;
    if (s == "progressive") return Strategy::Progressive;
    if (s == "layer_wise") return Strategy::LayerWise;
    throw ContractError("unknown strategy: " + s);
}

struct StagePlan {
    int stages = 1;
    std::vector<int> rounds;       // R_s per stage; zero-round stages allowed
    std::vector<int> growth_a;     // blocks added to encoder a per stage
    std::vector<int> growth_b;
    std::vector<double> lr_enc_a;  // per-stage encoder learning rates
    std::vector<double> lr_enc_b;
    double lr_head = 1e-4;

    int total_rounds() const { return std::accumulate(rounds.begin(), rounds.end(), 0); }
    int total_blocks_a() const {
        return std::accumulate(growth_a.begin(), growth_a.end(), 0);
    }
    int total_blocks_b() const {
        return std::accumulate(growth_b.begin(), growth_b.end(), 0);
    }
    int blocks_a_through(int stage) const {  // stage is 1-based
        return std::accumulate(growth_a.begin(), growth_a.begin() + stage, 0);
    }
    int blocks_b_through(int stage) const {
        return std::accumulate(growth_b.begin(), growth_b.begin() + stage, 0);
    }

    void validate() const {
        if (stages < 1) throw ContractError("StagePlan: stages must be >= 1");
        auto need = [&](const auto& v, const char* field) {
            if (static_cast<int>(v.size()) != stages) {
                throw ContractError(std::string("StagePlan: ") + field +
                                    " must have one entry per stage");
            }
        };
        need(rounds, "rounds");
        need(growth_a, "growth_a");
        need(growth_b, "growth_b");
        need(lr_enc_a, "lr_enc_a");
        need(lr_enc_b, "lr_enc_b");
        for (int r : rounds)
            if (r < 0) throw ContractError("StagePlan: rounds entries must be >= 0");
        for (int gb : growth_a)
            if (gb < 0) throw ContractError("StagePlan: growth_a entries must be >= 0");
        for (int gb : growth_b)
            if (gb < 0) throw ContractError("StagePlan: growth_b entries must be >= 0");
    }
};

}  // namespace mmfl
