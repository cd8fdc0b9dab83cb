#pragma once

#include <cstdint>
#include <random>

namespace modalmend {

uint64_t splitmix64(uint64_t x);

// Seeded RNG wrapper. Substreams are derived through splitmix64 hashing so
// that independent components (folds, repeats, modalities) never share a
// stream regardless of call order.
class Rng {
public:
    explicit Rng(uint64_t seed) : base_(seed), engine_(splitmix64(seed)) {}

    // Stable derivation: same (seed, key) always yields the same stream.
    Rng derive(uint64_t key) const { return Rng(splitmix64(base_ ^ splitmix64(key))); }

    double uniform(double lo, double hi);
    double normal(double mean, double stddev);
    int64_t uniform_int(int64_t lo, int64_t hi);  // inclusive range [lo, hi]
    bool bernoulli(double p);

    uint64_t base_seed() const { return base_; }
    std::mt19937_64& engine() { return engine_; }

private:
    uint64_t base_;
    std::mt19937_64 engine_;
};

} // namespace modalmend
