#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace ccn {

// Seeded random source with hand-rolled distributions so that streams are
// reproducible bit-for-bit across standard library implementations
// (std::normal_distribution et al. are not portable).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1) with 53 bits of precision.
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller without caching; one draw consumes two engine steps.
    double normal(double mean = 0.0, double stddev = 1.0);

    // Uniform integer in [0, n). n must be > 0.
    std::uint64_t below(std::uint64_t n);

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // Derive an independent stream (e.g., one per training run).
    Rng fork(std::uint64_t stream_id);

private:
    std::mt19937_64 engine_;
};

}  // namespace ccn
