#pragma once

// Shared test utilities: finite-difference gradient checking and small
// independent oracles.

#include <cmath>
#include <functional>
#include <vector>

#include "rpr/autograd.hpp"
#include "rpr/rng.hpp"
#include "rpr/tensor.hpp"

namespace testutil {

using rpr::Tensor;

inline Tensor randn(rpr::Rng& rng, std::vector<int> shape, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (double& x : t.v) x = rng.normal() * scale;
    return t;
}

inline Tensor rand_uniform(rpr::Rng& rng, std::vector<int> shape, double lo, double hi) {
    Tensor t(std::move(shape));
    for (double& x : t.v) x = rng.uniform(lo, hi);
    return t;
}

struct GradCheckResult {
    double max_rel_err = 0.0;
    double max_abs_grad = 0.0;
    int checked = 0;
};

// Central finite differences on a scalar function of a leaf tensor, compared
// against the autograd gradient. `indices` empty -> all coordinates.
inline GradCheckResult gradcheck(const std::function<rpr::ag::Var()>& fwd,
                                 const rpr::ag::Var& leaf, double eps = 1e-5,
                                 std::vector<long long> indices = {}) {
    using namespace rpr;
    ag::Var out = fwd();
    ag::backward(out);
    Tensor analytic = leaf->grad;
    GradCheckResult res;
    if (indices.empty())
        for (long long i = 0; i < leaf->val.numel(); ++i) indices.push_back(i);
    for (long long i : indices) {
        const double orig = leaf->val.v[(size_t)i];
        leaf->val.v[(size_t)i] = orig + eps;
        const double fp = fwd()->val.v[0];
        leaf->val.v[(size_t)i] = orig - eps;
        const double fm = fwd()->val.v[0];
        leaf->val.v[(size_t)i] = orig;
        const double num = (fp - fm) / (2 * eps);
        const double ana = analytic.v.empty() ? 0.0 : analytic.v[(size_t)i];
        res.max_abs_grad = std::max(res.max_abs_grad, std::fabs(ana));
        ++res.checked;
        if (std::fabs(num - ana) < 1e-9) continue;  // below finite-difference noise
        const double denom = std::max({std::fabs(num), std::fabs(ana), 1e-8});
        res.max_rel_err = std::max(res.max_rel_err, std::fabs(num - ana) / denom);
    }
    return res;
}

// Like gradcheck, but skips coordinates whose finite difference is unstable
// across two step sizes: those straddle a kink of |.| or min(.,.) where the
// subgradient is not comparable to a central difference.
inline GradCheckResult gradcheck_smooth(const std::function<rpr::ag::Var()>& fwd,
                                        const rpr::ag::Var& leaf, double eps,
                                        std::vector<long long> indices = {},
                                        double* kept_fraction = nullptr) {
    using namespace rpr;
    ag::Var out = fwd();
    ag::backward(out);
    Tensor analytic = leaf->grad;
    GradCheckResult res;
    if (indices.empty())
        for (long long i = 0; i < leaf->val.numel(); ++i) indices.push_back(i);
    int kept = 0;
    for (long long i : indices) {
        const double orig = leaf->val.v[(size_t)i];
        auto fd = [&](double h) {
            leaf->val.v[(size_t)i] = orig + h;
            const double fp = fwd()->val.v[0];
            leaf->val.v[(size_t)i] = orig - h;
            const double fm = fwd()->val.v[0];
            leaf->val.v[(size_t)i] = orig;
            return (fp - fm) / (2 * h);
        };
        const double n1 = fd(eps), n2 = fd(eps / 2);
        const double scale = std::max({std::fabs(n1), std::fabs(n2), 1e-8});
        if (std::fabs(n1 - n2) / scale > 0.02) continue;  // non-smooth point
        ++kept;
        const double ana = analytic.v.empty() ? 0.0 : analytic.v[(size_t)i];
        res.max_abs_grad = std::max(res.max_abs_grad, std::fabs(ana));
        ++res.checked;
        if (std::fabs(n1 - ana) < 1e-9) continue;
        const double denom = std::max({std::fabs(n1), std::fabs(ana), 1e-8});
        res.max_rel_err = std::max(res.max_rel_err, std::fabs(n1 - ana) / denom);
    }
    if (kept_fraction) *kept_fraction = indices.empty() ? 0.0 : (double)kept / indices.size();
    return res;
}

// Straight-line SSIM oracle (3x3 mean pooling with reflect padding) for one
// channel pair; mirrors the definition used by the photometric loss.
inline Tensor ssim_oracle(const Tensor& x, const Tensor& y) {
    const int H = x.dim(0), W = x.dim(1);
    auto reflect = [](int i, int n) {
        if (i < 0) i = -i;
        if (i >= n) i = 2 * n - 2 - i;
        return i;
    };
    auto pool = [&](const Tensor& t, int h, int w) {
        double s = 0;
        for (int dh = -1; dh <= 1; ++dh)
            for (int dw = -1; dw <= 1; ++dw) s += t(reflect(h + dh, H), reflect(w + dw, W));
        return s / 9.0;
    };
    Tensor xx({H, W}), yy({H, W}), xy({H, W});
    for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w) {
            xx(h, w) = x(h, w) * x(h, w);
            yy(h, w) = y(h, w) * y(h, w);
            xy(h, w) = x(h, w) * y(h, w);
        }
    const double c1 = 1e-4, c2 = 9e-4;
    Tensor out({H, W});
    for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w) {
            const double mx = pool(x, h, w), my = pool(y, h, w);
            const double sx = pool(xx, h, w) - mx * mx;
            const double sy = pool(yy, h, w) - my * my;
            const double sxy = pool(xy, h, w) - mx * my;
            const double ssim = ((2 * mx * my + c1) * (2 * sxy + c2)) /
                                ((mx * mx + my * my + c1) * (sx + sy + c2));
            double v = (1.0 - ssim) / 2.0;
            out(h, w) = v < 0 ? 0 : (v > 1 ? 1 : v);
        }
    return out;
}

}  // namespace testutil
