#pragma once

#include <cstdint>
#include <random>

namespace dbf {

// Folds (seed, a, b) into one 64-bit key with the SplitMix64 finaliser, so
// every (seed, index, field) triple gets its own independent stream.
std::uint64_t derive_key(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

// Random stream whose outputs depend only on its key. std::mt19937_64 is fully
// specified by the standard; the conversions below avoid the
// implementation-defined std:: distributions.
class KeyedStream {
public:
    explicit KeyedStream(std::uint64_t key) : gen_(key) {}

    std::uint64_t next() { return gen_(); }
    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    // Uniform integer in [0, n); n must be positive.
    std::uint64_t below(std::uint64_t n) { return gen_() % n; }

private:
    std::mt19937_64 gen_;
};

}  // namespace dbf
