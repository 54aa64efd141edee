#pragma once

#include <cstdint>
#include <cmath>
#include <random>
#include <vector>

namespace rpr {

// Deterministic RNG. mt19937_64 output is fully specified by the standard;
// the uniform/normal transforms are coded here instead of using the stdlib
// distributions so streams do not depend on libstdc++ internals.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    static uint64_t mix(uint64_t a, uint64_t b) {
        uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Independent stream derived from (seed, stream id).
    static Rng derive(uint64_t seed, uint64_t stream) { return Rng(mix(seed, stream)); }

    uint64_t next() { return gen_(); }

    // [0, 1)
    double uniform() { return (double)(gen_() >> 11) * 0x1.0p-53; }
    double uniform(double a, double b) { return a + (b - a) * uniform(); }

    // Box-Muller; pairs cached.
    double normal() {
        if (has_cache_) {
            has_cache_ = false;
            return cache_;
        }
        double u1 = uniform(), u2 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        cache_ = r * std::sin(a);
        has_cache_ = true;
        return r * std::cos(a);
    }

    // Inclusive bounds.
    int uniform_int(int lo, int hi) {
        int span = hi - lo + 1;
        int k = (int)(uniform() * (double)span);
        if (k >= span) k = span - 1;
        return lo + k;
    }

    template <typename T>
    void shuffle(std::vector<T>& xs) {
        for (size_t i = xs.size(); i > 1; --i) {
            size_t j = (size_t)uniform_int(0, (int)i - 1);
            std::swap(xs[i - 1], xs[j]);
        }
    }

    // k distinct values from {0, ..., n-1}, order randomized (partial Fisher-Yates).
    std::vector<int> sample_without_replacement(int n, int k) {
        std::vector<int> idx((size_t)n);
        for (int i = 0; i < n; ++i) idx[(size_t)i] = i;
        for (int i = 0; i < k; ++i) {
            int j = uniform_int(i, n - 1);
            std::swap(idx[(size_t)i], idx[(size_t)j]);
        }
        idx.resize((size_t)k);
        return idx;
    }

private:
    std::mt19937_64 gen_;
    double cache_ = 0.0;
    bool has_cache_ = false;
};

}  // namespace rpr
