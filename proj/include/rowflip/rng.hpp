#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace rf {

// splitmix64 finalizer; used for keyed per-item hashes.
std::uint64_t mix64(std::uint64_t x);
std::uint64_t hash_combine(std::uint64_t seed, std::uint64_t v);
// Uniform double in [0,1) from the top 53 bits of a hash.
double unit_from_hash(std::uint64_t h);

// Seeded stream. The engine is std::mt19937_64; the real-valued draws are
// computed here instead of via <random> distributions so sequences do not
// depend on the standard library vendor.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    std::uint64_t next() { return eng_(); }
    double uniform();                                 // [0,1)
    double uniform(double lo, double hi);
    std::uint64_t below(std::uint64_t n);             // [0,n)
    double normal();                                  // N(0,1)
    bool bernoulli(double p) { return uniform() < p; }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = below(i);
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 eng_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

// Derives an independent sub-seed for a named purpose.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace rf
