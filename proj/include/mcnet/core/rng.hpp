#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace mcnet {

// Deterministic RNG. Streams are derived from (seed, stream-id) so that
// resuming a run never has to serialize generator state: every consumer
// reconstructs its stream from integers that are already in the checkpoint
// (epoch, sample index, ...).
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(mix(seed)) {}
    Rng(uint64_t seed, uint64_t stream) : gen_(mix(mix(seed) ^ (0x9e3779b97f4a7c15ULL * (stream + 1)))) {}

    double uniform(double lo = 0.0, double hi = 1.0) {
        std::uniform_real_distribution<double> d(lo, hi);
        return d(gen_);
    }
    int64_t uniform_int(int64_t lo, int64_t hi) {  // inclusive
        std::uniform_int_distribution<int64_t> d(lo, hi);
        return d(gen_);
    }
    double normal(double mean = 0.0, double std = 1.0) {
        std::normal_distribution<double> d(mean, std);
        return d(gen_);
    }
    // Resample until within two standard deviations of the mean.
    double trunc_normal(double mean, double std) {
        for (;;) {
            double x = normal(mean, std);
            if (std::abs(x - mean) <= 2.0 * std) return x;
        }
    }
    template <class It>
    void shuffle(It first, It last) {
        std::shuffle(first, last, gen_);
    }
    std::mt19937_64& gen() { return gen_; }

private:
    static uint64_t mix(uint64_t z) {  // splitmix64 finalizer
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }
    std::mt19937_64 gen_;
};

}  // namespace mcnet
