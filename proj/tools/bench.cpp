// Times the serial reference kernels against the OpenMP ones on
// pipeline-shaped workloads and reports the speedup.

#include <omp.h>

#include <chrono>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "rpr/kernels.hpp"
#include "rpr/rng.hpp"
#include "rpr/tensor.hpp"

using namespace rpr;

namespace {

double time_ms(const std::function<void()>& fn, int reps) {
    fn();  // warm-up
    auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < reps; ++i) fn();
    auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

Tensor randn(Rng& rng, std::vector<int> shape) {
    Tensor t(std::move(shape));
    for (double& x : t.v) x = rng.normal();
    return t;
}

void row(const char* name, double serial_ms, double omp_ms) {
    std::printf("%-28s %10.3f ms %10.3f ms %8.2fx\n", name, serial_ms, omp_ms,
                serial_ms / omp_ms);
}

}  // namespace

int main() {
    Rng rng(7);
    std::printf("threads: %d\n", omp_get_max_threads());
    std::printf("%-28s %13s %13s %9s\n", "kernel", "serial", "openmp", "speedup");

    {
        // affinity-shaped: [128,64] x [4096,64]^T
        const int M = 128, K = 64, N = 4096;
        Tensor a = randn(rng, {M, K}), b = randn(rng, {N, K}), c({M, N});
        row("matmul_abt 128x64x4096",
            time_ms([&] { kern::serial::matmul_abt(c.data(), a.data(), b.data(), M, K, N, false); }, 20),
            time_ms([&] { kern::omp::matmul_abt(c.data(), a.data(), b.data(), M, K, N, false); }, 20));
    }
    {
        // F_c-shaped: [128,4096] x [4096,128]
        const int M = 128, K = 4096, N = 128;
        Tensor a = randn(rng, {M, K}), b = randn(rng, {K, N}), c({M, N});
        row("matmul 128x4096x128",
            time_ms([&] { kern::serial::matmul(c.data(), a.data(), b.data(), M, K, N, false); }, 20),
            time_ms([&] { kern::omp::matmul(c.data(), a.data(), b.data(), M, K, N, false); }, 20));
    }
    {
        // teacher stage-4 conv: 64 -> 128 at 32x16
        const int Ci = 64, H = 16, W = 32, Co = 128, k = 3;
        Tensor x = randn(rng, {Ci, H, W}), w = randn(rng, {Co, Ci, k, k}), b = randn(rng, {Co});
        Tensor y({Co, H, W});
        row("conv2d 64->128 @32x16",
            time_ms([&] { kern::serial::conv2d_fwd(y.data(), x.data(), w.data(), b.data(), Ci, H, W, Co, k, 1, 1); }, 10),
            time_ms([&] { kern::omp::conv2d_fwd(y.data(), x.data(), w.data(), b.data(), Ci, H, W, Co, k, 1, 1); }, 10));
    }
    {
        const int Ci = 64, H = 16, W = 32, Co = 128, k = 3;
        Tensor gy = randn(rng, {Co, H, W}), w = randn(rng, {Co, Ci, k, k});
        Tensor gx({Ci, H, W});
        row("conv2d_bwd_x 64<-128",
            time_ms([&] { gx.fill(0); kern::serial::conv2d_bwd_x(gx.data(), gy.data(), w.data(), Ci, H, W, Co, k, 1, 1); }, 10),
            time_ms([&] { gx.fill(0); kern::omp::conv2d_bwd_x(gx.data(), gy.data(), w.data(), Ci, H, W, Co, k, 1, 1); }, 10));
    }
    {
        const int M = 512, N = 4096;
        Tensor x = randn(rng, {M, N}), y({M, N});
        row("softmax_rows 512x4096",
            time_ms([&] { kern::serial::softmax_rows(y.data(), x.data(), M, N); }, 10),
            time_ms([&] { kern::omp::softmax_rows(y.data(), x.data(), M, N); }, 10));
    }
    {
        const int C = 3, H = 64, W = 128;
        Tensor src = randn(rng, {C, H, W});
        Tensor grid({H, W, 2});
        Rng g(3);
        for (int i = 0; i < H * W; ++i) {
            grid.v[(size_t)i * 2] = g.uniform(0, W - 1);
            grid.v[(size_t)i * 2 + 1] = g.uniform(0, H - 1);
        }
        Tensor out({C, H, W});
        row("bilinear_sample 3@128x64",
            time_ms([&] { kern::serial::bilinear_sample(out.data(), src.data(), C, H, W, grid.data(), H, W); }, 50),
            time_ms([&] { kern::omp::bilinear_sample(out.data(), src.data(), C, H, W, grid.data(), H, W); }, 50));
    }
    {
        const int C = 16, H = 64, W = 128;
        Tensor x = randn(rng, {C, H, W}), y({C, H, W});
        row("boxmean3 16@128x64",
            time_ms([&] { kern::serial::boxmean3_reflect(y.data(), x.data(), C, H, W); }, 20),
            time_ms([&] { kern::omp::boxmean3_reflect(y.data(), x.data(), C, H, W); }, 20));
    }
    return 0;
}
