#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace cyclevol {

// Seeded generator with portable distributions. std::mt19937_64 output is
// fixed by the standard but the std:: distributions are not, so the mapping to
// reals is done here to keep generated data identical across toolchains.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // [0, 1)
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // [0, n)
    std::uint64_t below(std::uint64_t n) {
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x;
        do {
            x = engine_();
        } while (x >= limit);
        return x % n;
    }

    int uniform_int(int lo, int hi) {  // inclusive
        return lo + static_cast<int>(below(static_cast<std::uint64_t>(hi - lo + 1)));
    }

    bool bernoulli(double p) { return uniform() < p; }

    double normal();

    Rng split() { return Rng(engine_() ^ 0x9E3779B97F4A7C15ULL); }

    // Full generator state as text, for persisting sessions mid-stream.
    std::string state() const;
    static Rng from_state(const std::string& text);

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace cyclevol
