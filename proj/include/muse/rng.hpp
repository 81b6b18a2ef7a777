#pragma once

#include <cstdint>
#include <string_view>

namespace muse {

// Counter-based generator built on the SplitMix64 finalizer. Output i of a
// stream is mix(key + (i + 1) * golden), so any draw can be recomputed from
// (key, counter) alone and independent streams are derived by name.
//
// Test vectors (Rng(0).next_u64() sequence):
//   0xe220a8397b1dcdaf, 0x6e789e6aa1b965f4, 0x06c45d188009454f
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : key_(seed) {}
    Rng(std::uint64_t seed, std::string_view stream);

    static std::uint64_t mix(std::uint64_t z);
    static std::uint64_t hash(std::string_view text);

    // Independent child stream; does not advance this generator.
    Rng split(std::string_view stream) const;
    Rng split(std::uint64_t stream) const;

    std::uint64_t next_u64();
    // Uniform in [0, 1) with 53 random bits.
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    // Standard normal via Box-Muller; consumes two draws per call.
    double normal();
    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);
    bool coin() { return (next_u64() >> 63) != 0; }

    std::uint64_t key() const { return key_; }
    std::uint64_t counter() const { return counter_; }
    void set_counter(std::uint64_t c) { counter_ = c; }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

}  // namespace muse
