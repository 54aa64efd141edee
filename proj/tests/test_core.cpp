#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "rpr/autograd.hpp"
#include "rpr/kernels.hpp"
#include "rpr/rng.hpp"
#include "rpr/tensor.hpp"

using namespace rpr;
using testutil::randn;

TEST_CASE("rng streams are deterministic and independent") {
    Rng a = Rng::derive(7, 1), b = Rng::derive(7, 1), c = Rng::derive(7, 2);
    bool same = true, diff = false;
    for (int i = 0; i < 100; ++i) {
        double x = a.uniform();
        same = same && (x == b.uniform());
        diff = diff || (x != c.uniform());
    }
    CHECK(same);
    CHECK(diff);
}

TEST_CASE("sample_without_replacement yields distinct in-range values") {
    Rng rng(3);
    auto s = rng.sample_without_replacement(50, 20);
    CHECK(s.size() == 20);
    std::vector<bool> seen(50, false);
    for (int i : s) {
        REQUIRE(i >= 0);
        REQUIRE(i < 50);
        CHECK(!seen[(size_t)i]);
        seen[(size_t)i] = true;
    }
}

// --- serial vs OpenMP parity (bitwise: both sum in the same order) ---------

TEST_CASE("matmul variants: omp matches serial bitwise") {
    Rng rng(1);
    const int M = 37, K = 23, N = 41;
    Tensor a = randn(rng, {M, K}), b = randn(rng, {K, N}), bt = randn(rng, {N, K});
    Tensor c1({M, N}), c2({M, N});
    kern::serial::matmul(c1.data(), a.data(), b.data(), M, K, N, false);
    kern::omp::matmul(c2.data(), a.data(), b.data(), M, K, N, false);
    CHECK(c1.v == c2.v);
    kern::serial::matmul_abt(c1.data(), a.data(), bt.data(), M, K, N, false);
    kern::omp::matmul_abt(c2.data(), a.data(), bt.data(), M, K, N, false);
    CHECK(c1.v == c2.v);
    Tensor d1({K, N}), d2({K, N});
    Tensor g = randn(rng, {M, N});
    kern::serial::matmul_atb(d1.data(), a.data(), g.data(), M, K, N, false);
    kern::omp::matmul_atb(d2.data(), a.data(), g.data(), M, K, N, false);
    CHECK(d1.v == d2.v);
}

TEST_CASE("conv kernels: omp matches serial bitwise") {
    Rng rng(2);
    const int Ci = 5, H = 9, W = 11, Co = 7, k = 3;
    for (int stride : {1, 2}) {
        Tensor x = randn(rng, {Ci, H, W});
        Tensor w = randn(rng, {Co, Ci, k, k});
        Tensor b = randn(rng, {Co});
        const int OH = (H + 2 - k) / stride + 1, OW = (W + 2 - k) / stride + 1;
        Tensor y1({Co, OH, OW}), y2({Co, OH, OW});
        kern::serial::conv2d_fwd(y1.data(), x.data(), w.data(), b.data(), Ci, H, W, Co, k, stride, 1);
        kern::omp::conv2d_fwd(y2.data(), x.data(), w.data(), b.data(), Ci, H, W, Co, k, stride, 1);
        CHECK(y1.v == y2.v);

        Tensor gy = randn(rng, {Co, OH, OW});
        Tensor gx1({Ci, H, W}), gx2({Ci, H, W});
        kern::serial::conv2d_bwd_x(gx1.data(), gy.data(), w.data(), Ci, H, W, Co, k, stride, 1);
        kern::omp::conv2d_bwd_x(gx2.data(), gy.data(), w.data(), Ci, H, W, Co, k, stride, 1);
        CHECK(gx1.v == gx2.v);

        Tensor gw1({Co, Ci, k, k}), gw2({Co, Ci, k, k}), gb1({Co}), gb2({Co});
        kern::serial::conv2d_bwd_w(gw1.data(), gb1.data(), gy.data(), x.data(), Ci, H, W, Co, k, stride, 1);
        kern::omp::conv2d_bwd_w(gw2.data(), gb2.data(), gy.data(), x.data(), Ci, H, W, Co, k, stride, 1);
        CHECK(gw1.v == gw2.v);
        CHECK(gb1.v == gb2.v);
    }
}

TEST_CASE("softmax/bilinear/boxmean: omp matches serial bitwise") {
    Rng rng(3);
    Tensor x = randn(rng, {33, 57});
    Tensor y1({33, 57}), y2({33, 57});
    kern::serial::softmax_rows(y1.data(), x.data(), 33, 57);
    kern::omp::softmax_rows(y2.data(), x.data(), 33, 57);
    CHECK(y1.v == y2.v);

    Tensor src = randn(rng, {3, 17, 19});
    Tensor grid({13, 15, 2});
    for (long long i = 0; i < grid.numel(); ++i) grid.v[(size_t)i] = rng.uniform(-2.0, 21.0);
    Tensor o1({3, 13, 15}), o2({3, 13, 15});
    kern::serial::bilinear_sample(o1.data(), src.data(), 3, 17, 19, grid.data(), 13, 15);
    kern::omp::bilinear_sample(o2.data(), src.data(), 3, 17, 19, grid.data(), 13, 15);
    CHECK(o1.v == o2.v);

    Tensor m1({3, 17, 19}), m2({3, 17, 19});
    kern::serial::boxmean3_reflect(m1.data(), src.data(), 3, 17, 19);
    kern::omp::boxmean3_reflect(m2.data(), src.data(), 3, 17, 19);
    CHECK(m1.v == m2.v);
}

TEST_CASE("softmax rows are stochastic and translation invariant") {
    Rng rng(4);
    Tensor x = randn(rng, {8, 12}, 5.0);
    Tensor y({8, 12});
    kern::softmax_rows(y.data(), x.data(), 8, 12);
    for (int m = 0; m < 8; ++m) {
        double s = 0;
        for (int n = 0; n < 12; ++n) s += y(m, n);
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("bicubic resize: constant preserved, backward is the transpose") {
    Tensor c = Tensor::full({1, 6, 8}, 3.25);
    Tensor up({1, 18, 24});
    kern::resize_bicubic(up.data(), c.data(), 1, 6, 8, 18, 24);
    for (double v : up.v) CHECK(v == doctest::Approx(3.25).epsilon(1e-12));

    // <gdst, A x> == <A^T gdst, x> for random vectors
    Rng rng(5);
    Tensor x = randn(rng, {1, 6, 8}), g = randn(rng, {1, 18, 24});
    Tensor ax({1, 18, 24});
    kern::resize_bicubic(ax.data(), x.data(), 1, 6, 8, 18, 24);
    Tensor atg({1, 6, 8});
    kern::resize_bicubic_bwd(atg.data(), g.data(), 1, 6, 8, 18, 24);
    double lhs = 0, rhs = 0;
    for (long long i = 0; i < ax.numel(); ++i) lhs += ax.v[(size_t)i] * g.v[(size_t)i];
    for (long long i = 0; i < x.numel(); ++i) rhs += x.v[(size_t)i] * atg.v[(size_t)i];
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
}

// --- autograd op gradients ---------------------------------------------------

TEST_CASE("autograd: elementwise and reduction gradients") {
    Rng rng(6);
    auto leaf = ag::leaf(randn(rng, {4, 5}));
    Tensor other = randn(rng, {4, 5});
    auto fwd = [&] {
        auto a = ag::mul(leaf, ag::constant(other));
        a = ag::add_const(a, 0.3);
        a = ag::sigmoid(a);
        a = ag::elu(ag::scale(a, 2.0));
        return ag::mean_all(ag::abs_(a));
    };
    auto r = testutil::gradcheck(fwd, leaf);
    CHECK(r.max_rel_err < 1e-5);
    CHECK(r.max_abs_grad > 0);
}

TEST_CASE("autograd: matmul family gradients") {
    Rng rng(7);
    auto a = ag::leaf(randn(rng, {3, 4}));
    auto b = ag::leaf(randn(rng, {4, 5}));
    auto bt = ag::leaf(randn(rng, {6, 5}));
    auto fwd = [&] { return ag::mean_all(ag::matmul_abt(ag::matmul(a, b), bt)); };
    for (auto* leaf : {&a, &b, &bt}) {
        auto r = testutil::gradcheck(fwd, *leaf);
        CHECK(r.max_rel_err < 1e-6);
        CHECK(r.max_abs_grad > 0);
    }
}

TEST_CASE("autograd: softmax, slicing, concat gradients") {
    Rng rng(8);
    auto x = ag::leaf(randn(rng, {4, 6}));
    Tensor fixed = randn(rng, {4, 6});
    auto fwd = [&] {
        auto s = ag::softmax_rows(x);
        auto l = ag::slice_cols(s, 1, 4);
        auto r = ag::slice_cols(s, 3, 6);
        auto c = ag::concat_cols({l, r});
        return ag::mean_all(ag::mul(c, ag::constant(fixed)));
    };
    auto r = testutil::gradcheck(fwd, x, 1e-6);
    CHECK(r.max_rel_err < 1e-4);
    CHECK(r.max_abs_grad > 0);
}

TEST_CASE("autograd: conv2d, upsample, pools, bicubic gradients") {
    Rng rng(9);
    auto x = ag::leaf(randn(rng, {2, 6, 8}));
    auto w = ag::leaf(randn(rng, {3, 2, 3, 3}, 0.5));
    auto b = ag::leaf(randn(rng, {3}));
    Tensor mask({3, 12, 16});
    for (double& m : mask.v) m = rng.uniform() > 0.3 ? 1.0 : 0.0;
    auto fwd = [&] {
        auto y = ag::conv2d(x, w, b, 2, 1);          // [3,3,4]
        y = ag::upsample_nearest2(y);                // [3,6,8]
        y = ag::avgpool3_reflect(y);
        y = ag::resize_bicubic(y, 12, 16);
        return ag::masked_mean(y, mask);
    };
    for (auto* leaf : {&x, &w, &b}) {
        auto r = testutil::gradcheck(fwd, *leaf, 1e-5);
        CHECK(r.max_rel_err < 1e-4);
        CHECK(r.max_abs_grad > 0);
    }
}

TEST_CASE("autograd: div/log/clamp/min2/masked ops") {
    Rng rng(10);
    auto a = ag::leaf(testutil::rand_uniform(rng, {5, 5}, 0.5, 2.0));
    auto b = ag::leaf(testutil::rand_uniform(rng, {5, 5}, 0.5, 2.0));
    auto fwd = [&] {
        auto q = ag::div_(ag::log_(a), b);
        auto m = ag::min2(q, ag::scale(b, 0.4));
        auto c = ag::clamp(m, -0.8, 0.8);
        auto s = ag::div_by_scalar(c, ag::mean_all(b));
        auto z = ag::sub_scalarvar(s, ag::mean_all(a));
        return ag::sum_all(z);
    };
    for (auto* leaf : {&a, &b}) {
        auto r = testutil::gradcheck(fwd, *leaf, 1e-6);
        CHECK(r.max_rel_err < 1e-4);
    }
}

TEST_CASE("autograd: chw/mc transposes and global pooling") {
    Rng rng(11);
    auto x = ag::leaf(randn(rng, {3, 4, 5}));
    static Tensor fixed = randn(rng, {3});
    auto fwd = [&] {
        auto mc = ag::chw_to_mc(x);
        auto back = ag::mc_to_chw(mc, 4, 5);
        auto g = ag::global_avg_pool(back);
        return ag::mean_all(ag::mul(g, ag::constant(fixed)));
    };
    auto r = testutil::gradcheck(fwd, x, 1e-6);
    CHECK(r.max_rel_err < 1e-5);
}

TEST_CASE("no-grad guard produces constant nodes") {
    auto x = ag::leaf(Tensor::full({2, 2}, 1.5));
    {
        ag::NoGradGuard ng;
        auto y = ag::scale(x, 2.0);
        CHECK(!y->requires_grad);
        CHECK(y->parents.empty());
    }
    auto y = ag::scale(x, 2.0);
    CHECK(y->requires_grad);
}
