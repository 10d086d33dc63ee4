#pragma once

// Counter-based deterministic random stream.
//
// Output i of a stream is mix64(seed + GOLDEN * (i + 1)) where mix64 is the
// SplitMix64 finalizer. The (seed, counter) pair fully determines every draw,
// so any run can be replayed bit-exactly, and child streams can be derived
// from string labels without coupling consumption order across components.

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>

namespace mmfl {

class RngStream {
  public:
    explicit RngStream(uint64_t seed = 0, uint64_t counter = 0)
        : seed_(seed), counter_(counter) {}

    uint64_t seed() const { return seed_; }
    uint64_t counter() const { return counter_; }

    uint64_t next_u64() {
        ++counter_;
        return mix64(seed_ + kGolden * counter_);
    }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller. Consumes two draws per call; the sine branch is discarded
    // so each call maps to a fixed counter advance of exactly 2.
    double normal() {
        double u1 = uniform();
        const double u2 = uniform();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) *
               std::cos(6.283185307179586476925286766559 * u2);
    }

    // Unbiased integer in [0, n) via rejection on the top range.
    uint64_t below(uint64_t n) {
        const uint64_t threshold = (0 - n) % n;
        for (;;) {
            const uint64_t r = next_u64();
            if (r >= threshold) return r % n;
        }
    }

    // Child stream whose seed depends on this stream's seed and the label,
    // not on this stream's counter.
    RngStream derive(std::string_view label) const {
        uint64_t h = 1469598103934665603ull;  // FNV-1a
        for (char c : label) {
            h ^= static_cast<uint8_t>(c);
            h *= 1099511628211ull;
        }
        return RngStream(mix64(seed_ ^ mix64(h)));
    }

    RngStream derive(std::string_view label, uint64_t a) const {
        return derive(std::string(label) + "/" + std::to_string(a));
    }

    RngStream derive(std::string_view label, uint64_t a, uint64_t b) const {
        return derive(std::string(label) + "/" + std::to_string(a) + "/" +
                      std::to_string(b));
    }

    RngStream derive(std::string_view label, uint64_t a, uint64_t b, uint64_t c) const {
        return derive(std::string(label) + "/" + std::to_string(a) + "/" +
                      std::to_string(b) + "/" + std::to_string(c));
    }

  private:
    static constexpr uint64_t kGolden = 0x9E3779B97F4A7C15ull;

    static uint64_t mix64(uint64_t z) {
        z ^= z >> 30;
        z *= 0xBF58476D1CE4E5B9ull;
        z ^= z >> 27;
        z *= 0x94D049BB133111EBull;
        z ^= z >> 31;
        return z;
    }

    uint64_t seed_;
    uint64_t counter_;
};

}  // namespace mmfl
