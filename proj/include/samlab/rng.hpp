#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

#include "samlab/error.hpp"

namespace samlab {

inline uint64_t split_mix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline uint64_t fnv1a64(std::string_view s) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Counter-based random stream: word i is a pure function of (key, i), so a
/// stream can be replayed from its key alone and two streams with different
/// keys never interact. Used everywhere randomness is needed so that enabling
/// or disabling one consumer cannot shift the draws seen by another.
class CounterRng {
public:
    explicit CounterRng(uint64_t key) : key_(key) {}

    /// Stream keyed by (seed, stream, substream). Each level is folded in with
    /// an avalanching mix so related keys give unrelated streams.
    static CounterRng keyed(uint64_t seed, uint64_t stream, uint64_t substream = 0) {
        uint64_t k = split_mix64(seed);
        k = split_mix64(k ^ stream);
        k = split_mix64(k ^ substream);
        return CounterRng(k);
    }

    uint64_t key() const { return key_; }
    uint64_t words_consumed() const { return counter_; }

    uint64_t next_u64() { return split_mix64(key_ + 0x9e3779b97f4a7c15ULL * ++counter_); }

    /// Uniform in [0, 1) with 53 random bits.
    double next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform in [lo, hi).
    double next_uniform(double lo, double hi) { return lo + (hi - lo) * next_unit(); }

    /// Uniform integer in [0, n). Plain modulo; the bias is negligible for the
    /// desk-scale ranges used here and the algorithm is trivially replayable.
    int64_t next_below(int64_t n) {
        if (n <= 0) throw UsageError("CounterRng::next_below requires n > 0");
        return static_cast<int64_t>(next_u64() % static_cast<uint64_t>(n));
    }

    /// Standard normal via Box-Muller. Consumes two uniforms per pair and
    /// caches the second value, so draw order is deterministic.
    double next_normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 1.0 - next_unit();  // in (0, 1], keeps log finite
        double u2 = next_unit();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

private:
    uint64_t key_;
    uint64_t counter_ = 0;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

/// Per-step stream factory for a training run. Streams are keyed by
/// (run_seed, step, purpose), so the set of purposes consumed in a step has
/// no effect on any other purpose or step.
struct StepRngs {
    uint64_t run_seed = 0;
    uint64_t step = 0;

    CounterRng stream(std::string_view purpose) const {
        return CounterRng::keyed(run_seed, step, fnv1a64(purpose));
    }
};

}  // namespace samlab
