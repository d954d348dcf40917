#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace numkit {

// Counter-based generator. Draw n of stream (seed, id) is
// splitmix64_finalize(key + (n+1) * GOLDEN) with key derived from (seed, id),
// so streams are pure functions of (seed, id, counter): the same seed always
// yields the same values, and substreams never interleave.
class Rng {
public:
    explicit Rng(std::uint64_t seed, std::uint64_t stream_id = 0)
        : seed_(seed), stream_(stream_id), key_(derive_key(seed, stream_id)) {}

    // Independent substream of the same master seed.
    Rng stream(std::uint64_t stream_id) const { return Rng(seed_, stream_id); }

    std::uint64_t next_u64() { return mix(key_ + (++counter_) * GOLDEN); }

    // Uniform on [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Standard normal via Box-Muller. No cached spare, so the state stays
    // (key, counter) only; two uniforms are consumed per draw.
    double gaussian() {
        const double u1 = 1.0 - uniform();  // (0, 1], safe for log
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    double gaussian(double mean, double stddev) { return mean + stddev * gaussian(); }

    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) { return n ? next_u64() % n : 0; }

    template <typename Container>
    void fill_gaussian(Container& out, double stddev = 1.0, double mean = 0.0) {
        for (auto& v : out) {
            v = static_cast<typename Container::value_type>(gaussian(mean, stddev));
        }
    }

    template <typename Container>
    void fill_uniform(Container& out, double lo = 0.0, double hi = 1.0) {
        for (auto& v : out) {
            v = static_cast<typename Container::value_type>(lo + (hi - lo) * uniform());
        }
    }

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream_id() const { return stream_; }
    std::uint64_t counter() const { return counter_; }
    void set_counter(std::uint64_t c) { counter_ = c; }

    // Combine identifiers into a single stream id (for keys like
    // (purpose, step, item)). Order-sensitive.
    static std::uint64_t key(std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0) {
        return mix(mix(a + GOLDEN) ^ mix(b + 2 * GOLDEN) ^ mix(c + 3 * GOLDEN));
    }

private:
    static constexpr std::uint64_t GOLDEN = 0x9E3779B97F4A7C15ull;

    static std::uint64_t mix(std::uint64_t z) {
        z ^= z >> 30;
        z *= 0xBF58476D1CE4E5B9ull;
        z ^= z >> 27;
        z *= 0x94D049BB133111EBull;
        z ^= z >> 31;
        return z;
    }

    static std::uint64_t derive_key(std::uint64_t seed, std::uint64_t stream) {
        return mix(mix(seed + GOLDEN) ^ mix(stream + 0xD1B54A32D192ED03ull));
    }

    std::uint64_t seed_ = 0;
    std::uint64_t stream_ = 0;
    std::uint64_t key_ = 0;
    std::uint64_t counter_ = 0;
};

}  // namespace numkit
