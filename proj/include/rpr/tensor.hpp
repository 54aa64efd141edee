#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

namespace rpr {

// Dense row-major tensor of doubles. Small and value-semantic; all the heavy
// lifting lives in kernels.hpp.
class Tensor {
public:
    std::vector<int> shape;
    std::vector<double> v;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)), v((size_t)count(shape), 0.0) {}
    Tensor(std::vector<int> s, double fill) : shape(std::move(s)), v((size_t)count(shape), fill) {}

    static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }
    static Tensor full(std::vector<int> s, double x) { return Tensor(std::move(s), x); }
    static Tensor scalar(double x) {
        Tensor t({1});
        t.v[0] = x;
        return t;
    }

    static long long count(const std::vector<int>& s) {
        long long n = 1;
        for (int d : s) n *= d;
        return n;
    }

    long long numel() const { return (long long)v.size(); }
    int rank() const { return (int)shape.size(); }
    int dim(int i) const { return shape[(size_t)i]; }
    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    double* data() { return v.data(); }
    const double* data() const { return v.data(); }

    double& operator()(int i) { return v[(size_t)i]; }
    double operator()(int i) const { return v[(size_t)i]; }
    double& operator()(int i, int j) { return v[(size_t)i * shape[1] + (size_t)j]; }
    double operator()(int i, int j) const { return v[(size_t)i * shape[1] + (size_t)j]; }
    double& operator()(int i, int j, int k) {
        return v[((size_t)i * shape[1] + (size_t)j) * shape[2] + (size_t)k];
    }
    double operator()(int i, int j, int k) const {
        return v[((size_t)i * shape[1] + (size_t)j) * shape[2] + (size_t)k];
    }
    double& operator()(int i, int j, int k, int l) {
        return v[(((size_t)i * shape[1] + (size_t)j) * shape[2] + (size_t)k) * shape[3] + (size_t)l];
    }
    double operator()(int i, int j, int k, int l) const {
        return v[(((size_t)i * shape[1] + (size_t)j) * shape[2] + (size_t)k) * shape[3] + (size_t)l];
    }

    void fill(double x) { std::fill(v.begin(), v.end(), x); }

    bool all_finite() const {
        for (double x : v)
            if (!std::isfinite(x)) return false;
        return true;
    }

    double min() const {
        double m = v.empty() ? 0.0 : v[0];
        for (double x : v) m = std::min(m, x);
        return m;
    }
    double max() const {
        double m = v.empty() ? 0.0 : v[0];
        for (double x : v) m = std::max(m, x);
        return m;
    }
    double sum() const {
        double s = 0.0;
        for (double x : v) s += x;
        return s;
    }
    double mean() const { return v.empty() ? 0.0 : sum() / (double)v.size(); }

    // Snaps every element onto the float32 grid. Values produced this way
    // round-trip bit-exactly through f32 file formats.
    void round_f32() {
        for (double& x : v) x = (double)(float)x;
    }

    Tensor reshaped(std::vector<int> s) const {
        Tensor t;
        t.shape = std::move(s);
        t.v = v;
        return t;
    }
};

inline uint64_t fnv1a(const void* p, size_t n) {
    const unsigned char* b = (const unsigned char*)p;
    uint64_t h = 1469598103934665603ULL;
    for (size_t i = 0; i < n; ++i) {
        h ^= b[i];
        h *= 1099511628211ULL;
    }
    return h;
}

inline uint64_t checksum(const Tensor& t) {
    return fnv1a(t.v.data(), t.v.size() * sizeof(double));
}

}  // namespace rpr
