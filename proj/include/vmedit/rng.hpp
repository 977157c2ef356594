#pragma once

#include <cstdint>

namespace vmedit {

// Deterministic counter-based generator. Each output is SplitMix64 applied
// to (seed, counter); the counter advances by one per draw, so the stream
// is reproducible from (seed, counter) alone and cheap to checkpoint.
class CounterRng {
public:
    explicit CounterRng(std::uint64_t seed = 0) : seed_(seed) {}

    std::uint64_t next_u64();

    // Uniform in [0, 1).
    double uniform();

    // Standard normal via Box-Muller; the second deviate is cached.
    double normal();

    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);

    float normal_f() { return static_cast<float>(normal()); }
    float uniform_f() { return static_cast<float>(uniform()); }

    struct State {
        std::uint64_t seed = 0;
        std::uint64_t counter = 0;
        bool has_spare = false;
        double spare = 0.0;
    };
    State state() const { return {seed_, counter_, has_spare_, spare_}; }
    void set_state(const State& s);

private:
    std::uint64_t seed_ = 0;
    std::uint64_t counter_ = 0;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace vmedit
