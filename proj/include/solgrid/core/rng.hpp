#pragma once

#include <cmath>
#include <cstdint>

namespace solgrid {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

/// Deterministic counter-based stream: substreams derived from a master seed
/// and a stream id, so adding parallelism never reorders draws.
class RngStream {
public:
    RngStream(std::uint64_t master_seed, std::uint64_t stream_id) {
        std::uint64_t s = master_seed ^ (0x9E3779B97F4A7C15ull * (stream_id + 1));
        // decorrelate nearby (seed, id) pairs
        splitmix64(s);
        splitmix64(s);
        state_ = s;
    }

    std::uint64_t next_u64() { return splitmix64(state_); }

    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    int uniform_int(int n) { return int(next_u64() % std::uint64_t(n)); }

    bool bernoulli() { return (next_u64() & 1ull) != 0; }

    double normal() {
        if (has_cached_) { has_cached_ = false; return cached_; }
        double u1 = uniform(), u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * 3.14159265358979323846 * u2;
        cached_ = r * std::sin(a);
        has_cached_ = true;
        return r * std::cos(a);
    }

private:
    std::uint64_t state_ = 0;
    bool has_cached_ = false;
    double cached_ = 0.0;
};

}  // namespace solgrid
