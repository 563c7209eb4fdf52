#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace pointdet {

// mt19937_64 with hand-rolled distribution mappings. The std:: distributions
// are implementation-defined, which would break cross-platform reproducibility
// of generated datasets and training histories.
class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1) with 53-bit resolution.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [lo, hi] via rejection-free modulo on the 64-bit
    // stream; bias is negligible for the small ranges used here.
    int64_t uniform_int(int64_t lo, int64_t hi) {
        const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
        return lo + static_cast<int64_t>(engine_() % span);
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Box-Muller; one value per call, cached pair discarded for simplicity.
    double normal(double mean = 0.0, double stddev = 1.0) {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        const double r = std::sqrt(-2.0 * std::log(u1));
        return mean + stddev * r * std::cos(6.283185307179586476925287 * u2);
    }

    // Derive an independent stream (for per-image / per-module seeding).
    Rng fork(uint64_t salt) {
        return Rng(next_u64() ^ (salt * 0x9e3779b97f4a7c15ull + 0xd1b54a32d192ed03ull));
    }

private:
    std::mt19937_64 engine_;
};

} // namespace pointdet
