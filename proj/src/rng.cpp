#include "vmedit/rng.hpp"

#include <cmath>

namespace vmedit {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

}  // namespace

std::uint64_t CounterRng::next_u64() {
    // Mix the seed in twice so nearby seeds give unrelated streams.
    std::uint64_t v = splitmix64(splitmix64(seed_) ^ counter_);
    ++counter_;
    return v;
}

double CounterRng::uniform() {
    // 53 random bits -> [0,1).
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double CounterRng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    // Box-Muller; u1 shifted away from zero so log() is finite.
    double u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log1p(-u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
}

std::uint64_t CounterRng::below(std::uint64_t n) {
    // Modulo bias is negligible for the small n used here.
    return n == 0 ? 0 : next_u64() % n;
}

void CounterRng::set_state(const State& s) {
    seed_ = s.seed;
    counter_ = s.counter;
    has_spare_ = s.has_spare;
    spare_ = s.spare;
}

}  // namespace vmedit
