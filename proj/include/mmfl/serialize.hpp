#pragma once

// Wire format for parameter exchange: little-endian 32-bit float payload plus
// a JSON manifest (segment name, tensor shapes, frozen flag, byte offset).
// The payload length is the quantity the communication ledger counts.

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmfl/nn.hpp"

namespace mmfl {

struct SerializedBundle {
    std::string manifest;          // JSON
    std::vector<uint8_t> payload;  // f32, little-endian, segment order

    int64_t payload_bytes() const { return static_cast<int64_t>(payload.size()); }
    int64_t total_bytes() const {
        return static_cast<int64_t>(manifest.size() + payload.size());
    }
};

inline int64_t payload_bytes(const ParameterBundle& b) { return 4 * b.param_count(); }

inline SerializedBundle serialize_bundle(const ParameterBundle& bundle) {
    SerializedBundle out;
    nlohmann::json manifest = nlohmann::json::array();
    int64_t offset = 0;
    for (const Segment& seg : bundle.segments) {
        nlohmann::json entry;
        entry["name"] = seg.name;
        entry["frozen"] = seg.frozen;
        entry["offset"] = offset;
        nlohmann::json shapes = nlohmann::json::array();
        for (const Tensor& t : seg.params) {
            shapes.push_back(t.shape);
            for (double v : t.data) {
                const float f = static_cast<float>(v);
                uint32_t bits;
                std::memcpy(&bits, &f, 4);
                if constexpr (std::endian::native == std::endian::big) {
                    bits = __builtin_bswap32(bits);
                }
                const size_t pos = out.payload.size();
                out.payload.resize(pos + 4);
                std::memcpy(&out.payload[pos], &bits, 4);
            }
            offset += 4 * t.size();
        }
        entry["shapes"] = shapes;
        entry["bytes"] = 4 * seg.param_count();
        manifest.push_back(entry);
    }
    out.manifest = manifest.dump();
    return out;
}

inline ParameterBundle deserialize_bundle(const SerializedBundle& in) {
    ParameterBundle out;
    const nlohmann::json manifest = nlohmann::json::parse(in.manifest);
    size_t pos = 0;
    for (const auto& entry : manifest) {
        Segment seg;
        seg.name = entry.at("name").get<std::string>();
        seg.frozen = entry.at("frozen").get<bool>();
        for (const auto& shape : entry.at("shapes")) {
            std::vector<int64_t> dims = shape.get<std::vector<int64_t>>();
            Tensor t = Tensor::zeros(dims);
            for (double& v : t.data) {
                if (pos + 4 > in.payload.size()) {
                    throw ContractError("deserialize_bundle: truncated payload");
                }
                uint32_t bits;
                std::memcpy(&bits, &in.payload[pos], 4);
                if constexpr (std::endian::native == std::endian::big) {
                    bits = __builtin_bswap32(bits);
                }
                float f;
                std::memcpy(&f, &bits, 4);
                v = static_cast<double>(f);
                pos += 4;
            }
            seg.params.push_back(std::move(t));
        }
        out.segments.push_back(std::move(seg));
    }
    if (pos != in.payload.size()) {
        throw ContractError("deserialize_bundle: trailing payload bytes");
    }
    return out;
}

}  // namespace mmfl
