#pragma once

#include "orthus/common.hpp"

#include <array>
#include <cmath>
#include <cstdint>

namespace orthus {

// Purpose-separated random streams. Every consumer draws from its own stream so
// that adding draws in one place never shifts the values seen by another.
enum class Stream : uint32_t {
    Init = 0,       // parameter initialisation
    DataOrder,      // minibatch sampling
    CorpusJitter,   // synthetic corpus perturbations
    DiffTime,       // diffusion timestep draws
    DiffNoise,      // diffusion epsilon draws
    CondDrop,       // classifier-free guidance condition dropout
    SampleInit,     // sampler starting noise
    Eval,           // evaluation-side draws
    Misc,
    kCount
};

constexpr size_t kStreamCount = size_t(Stream::kCount);

// Counter-based generator: value = mix(seed, stream, counter). State is just
// the seed plus one counter per stream, which makes checkpointing and
// bit-exact resume trivial.
class Rng {
  public:
    explicit Rng(uint64_t seed = 0) : seed_(seed) { counters_.fill(0); }

    uint64_t seed() const { return seed_; }
    uint64_t counter(Stream s) const { return counters_[size_t(s)]; }
    void set_counter(Stream s, uint64_t c) { counters_[size_t(s)] = c; }

    uint64_t next_u64(Stream s) {
        uint64_t c = counters_[size_t(s)]++;
        return mix(seed_ + 0x9e3779b97f4a7c15ull * (uint64_t(s) + 1), c);
    }

    // Uniform in [0, 1).
    double uniform(Stream s) {
        return double(next_u64(s) >> 11) * 0x1.0p-53;
    }

    // Uniform integer in [0, n).
    uint64_t below(Stream s, uint64_t n) {
        return uint64_t((__uint128_t(next_u64(s)) * n) >> 64);
    }

    // Standard normal via Box-Muller. Draws two words per call and discards
    // the sibling value so the stream state stays a plain counter.
    double gaussian(Stream s) {
        uint64_t a = next_u64(s);
        uint64_t b = next_u64(s);
        double u1 = double((a >> 11) | 1ull) * 0x1.0p-53;  // (0, 1)
        double u2 = double(b >> 11) * 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    std::array<uint64_t, kStreamCount> counters() const { return counters_; }
    void restore(uint64_t seed, const std::array<uint64_t, kStreamCount>& counters) {
        seed_ = seed;
        counters_ = counters;
    }

  private:
    static uint64_t mix(uint64_t key, uint64_t counter) {
        // splitmix64 finalizer applied twice over (key, counter).
        uint64_t z = key ^ (counter + 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        z ^= z >> 31;
        z += key;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    uint64_t seed_;
    std::array<uint64_t, kStreamCount> counters_;
};

}  // namespace orthus
