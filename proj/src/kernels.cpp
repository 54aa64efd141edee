#include "rpr/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <vector>

namespace rpr::kern {

namespace {
std::atomic<bool> g_parallel{true};

// Below this many multiply-accumulates the fork/join overhead dominates.
constexpr long long kParallelGrain = 1 << 14;
}  // namespace

bool parallel_enabled() { return g_parallel.load(std::memory_order_relaxed); }
void set_parallel(bool on) { g_parallel.store(on, std::memory_order_relaxed); }

// ---------------------------------------------------------------------------
// shared per-output-element routines
//
// Both backends call these, so results are bit-identical regardless of the
// thread count. Reductions use fixed-order partial accumulators: deterministic
// and still SIMD-friendly.
// ---------------------------------------------------------------------------

namespace serial {
namespace detail {

inline double dot8(const double* a, const double* b, int n) {
    double s0 = 0, s1 = 0, s2 = 0, s3 = 0, s4 = 0, s5 = 0, s6 = 0, s7 = 0;
    int k = 0;
    for (; k + 8 <= n; k += 8) {
        s0 += a[k] * b[k];
        s1 += a[k + 1] * b[k + 1];
        s2 += a[k + 2] * b[k + 2];
        s3 += a[k + 3] * b[k + 3];
        s4 += a[k + 4] * b[k + 4];
        s5 += a[k + 5] * b[k + 5];
        s6 += a[k + 6] * b[k + 6];
        s7 += a[k + 7] * b[k + 7];
    }
    double tail = 0;
    for (; k < n; ++k) tail += a[k] * b[k];
    return (((s0 + s1) + (s2 + s3)) + ((s4 + s5) + (s6 + s7))) + tail;
}

// strided-b variant for stride-2 convolution columns
inline double dot_stride(const double* a, const double* b, int n, int bstride) {
    double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
    int k = 0;
    for (; k + 4 <= n; k += 4) {
        s0 += a[k] * b[(size_t)k * bstride];
        s1 += a[k + 1] * b[(size_t)(k + 1) * bstride];
        s2 += a[k + 2] * b[(size_t)(k + 2) * bstride];
        s3 += a[k + 3] * b[(size_t)(k + 3) * bstride];
    }
    double tail = 0;
    for (; k < n; ++k) tail += a[k] * b[(size_t)k * bstride];
    return ((s0 + s1) + (s2 + s3)) + tail;
}

inline void matmul_row(double* c, const double* a, const double* B, int K, int N, bool acc) {
    if (!acc) std::memset(c, 0, sizeof(double) * (size_t)N);
    int k = 0;
    for (; k + 4 <= K; k += 4) {
        const double a0 = a[k], a1 = a[k + 1], a2 = a[k + 2], a3 = a[k + 3];
        const double* b0 = B + (size_t)k * N;
        const double* b1 = b0 + N;
        const double* b2 = b1 + N;
        const double* b3 = b2 + N;
        for (int n = 0; n < N; ++n)
            c[n] += (a0 * b0[n] + a1 * b1[n]) + (a2 * b2[n] + a3 * b3[n]);
    }
    for (; k < K; ++k) {
        const double ak = a[k];
        const double* b = B + (size_t)k * N;
        for (int n = 0; n < N; ++n) c[n] += ak * b[n];
    }
}

inline void matmul_abt_row(double* c, const double* a, const double* B, int K, int N, bool acc) {
    for (int n = 0; n < N; ++n) {
        const double s = dot8(a, B + (size_t)n * K, K);
        c[n] = acc ? c[n] + s : s;
    }
}

inline void matmul_atb_row(double* c, const double* A, const double* B, int M, int K, int N,
                           bool acc, int k) {
    if (!acc) std::memset(c, 0, sizeof(double) * (size_t)N);
    int m = 0;
    for (; m + 4 <= M; m += 4) {
        const double a0 = A[(size_t)m * K + k];
        const double a1 = A[(size_t)(m + 1) * K + k];
        const double a2 = A[(size_t)(m + 2) * K + k];
        const double a3 = A[(size_t)(m + 3) * K + k];
        const double* b0 = B + (size_t)m * N;
        const double* b1 = b0 + N;
        const double* b2 = b1 + N;
        const double* b3 = b2 + N;
        for (int n = 0; n < N; ++n)
            c[n] += (a0 * b0[n] + a1 * b1[n]) + (a2 * b2[n] + a3 * b3[n]);
    }
    for (; m < M; ++m) {
        const double am = A[(size_t)m * K + k];
        const double* b = B + (size_t)m * N;
        for (int n = 0; n < N; ++n) c[n] += am * b[n];
    }
}

inline void conv2d_fwd_one(double* y, const double* x, const double* w, const double* b, int Ci,
                           int H, int W, int Co, int k, int stride, int pad, int co) {
    const int OH = (H + 2 * pad - k) / stride + 1;
    const int OW = (W + 2 * pad - k) / stride + 1;
    double* yo = y + (size_t)co * OH * OW;
    const double bias = b ? b[co] : 0.0;
    for (int i = 0; i < OH * OW; ++i) yo[i] = bias;
    for (int ci = 0; ci < Ci; ++ci) {
        const double* xc = x + (size_t)ci * H * W;
        const double* wc = w + ((size_t)co * Ci + ci) * k * k;
        for (int oh = 0; oh < OH; ++oh) {
            double* yrow = yo + (size_t)oh * OW;
            for (int kh = 0; kh < k; ++kh) {
                const int ih = oh * stride - pad + kh;
                if (ih < 0 || ih >= H) continue;
                const double* xrow = xc + (size_t)ih * W;
                if (k == 3 && stride == 1 && pad == 1) {
                    // interior: three taps fused per output element
                    const double w0 = wc[kh * 3], w1 = wc[kh * 3 + 1], w2 = wc[kh * 3 + 2];
                    yrow[0] += w1 * xrow[0] + w2 * xrow[1];
                    for (int ow = 1; ow < OW - 1; ++ow)
                        yrow[ow] += w0 * xrow[ow - 1] + w1 * xrow[ow] + w2 * xrow[ow + 1];
                    if (OW > 1) yrow[OW - 1] += w0 * xrow[OW - 2] + w1 * xrow[OW - 1];
                    continue;
                }
                for (int kw = 0; kw < k; ++kw) {
                    const double wv = wc[kh * k + kw];
                    const int base = -pad + kw;
                    if (stride == 1) {
                        const int lo = std::max(0, -base);
                        const int hi = std::min(OW, W - base);
                        const double* xs = xrow + base + lo;
                        double* ys = yrow + lo;
                        for (int i = 0; i < hi - lo; ++i) ys[i] += wv * xs[i];
                    } else {
                        for (int ow = 0; ow < OW; ++ow) {
                            const int iw = ow * stride + base;
                            if (iw < 0 || iw >= W) continue;
                            yrow[ow] += wv * xrow[iw];
                        }
                    }
                }
            }
        }
    }
}

// Scatter form: each thread owns one input channel, so writes never race.
inline void conv2d_bwd_x_one(double* gx, const double* gy, const double* w, int Ci, int H, int W,
                             int Co, int k, int stride, int pad, int ci) {
    const int OH = (H + 2 * pad - k) / stride + 1;
    const int OW = (W + 2 * pad - k) / stride + 1;
    double* gxc = gx + (size_t)ci * H * W;
    for (int co = 0; co < Co; ++co) {
        const double* gyc = gy + (size_t)co * OH * OW;
        const double* wc = w + ((size_t)co * Ci + ci) * k * k;
        for (int oh = 0; oh < OH; ++oh) {
            const double* gyrow = gyc + (size_t)oh * OW;
            for (int kh = 0; kh < k; ++kh) {
                const int ih = oh * stride - pad + kh;
                if (ih < 0 || ih >= H) continue;
                double* gxrow = gxc + (size_t)ih * W;
                for (int kw = 0; kw < k; ++kw) {
                    const double wv = wc[kh * k + kw];
                    const int base = -pad + kw;
                    if (stride == 1) {
                        const int lo = std::max(0, -base);
                        const int hi = std::min(OW, W - base);
                        double* gs = gxrow + base + lo;
                        const double* gy0 = gyrow + lo;
                        for (int i = 0; i < hi - lo; ++i) gs[i] += wv * gy0[i];
                    } else {
                        for (int ow = 0; ow < OW; ++ow) {
                            const int iw = ow * stride + base;
                            if (iw < 0 || iw >= W) continue;
                            gxrow[iw] += wv * gyrow[ow];
                        }
                    }
                }
            }
        }
    }
}

inline void conv2d_bwd_w_one(double* gw, double* gb, const double* gy, const double* x, int Ci,
                             int H, int W, int Co, int k, int stride, int pad, int co) {
    const int OH = (H + 2 * pad - k) / stride + 1;
    const int OW = (W + 2 * pad - k) / stride + 1;
    const double* gyc = gy + (size_t)co * OH * OW;
    {
        double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
        int i = 0;
        const int n = OH * OW;
        for (; i + 4 <= n; i += 4) {
            s0 += gyc[i];
            s1 += gyc[i + 1];
            s2 += gyc[i + 2];
            s3 += gyc[i + 3];
        }
        double tail = 0;
        for (; i < n; ++i) tail += gyc[i];
        gb[co] += ((s0 + s1) + (s2 + s3)) + tail;
    }
    for (int ci = 0; ci < Ci; ++ci) {
        const double* xc = x + (size_t)ci * H * W;
        double* gwc = gw + ((size_t)co * Ci + ci) * k * k;
        for (int kh = 0; kh < k; ++kh) {
            for (int kw = 0; kw < k; ++kw) {
                double s = 0.0;
                for (int oh = 0; oh < OH; ++oh) {
                    const int ih = oh * stride - pad + kh;
                    if (ih < 0 || ih >= H) continue;
                    const double* xrow = xc + (size_t)ih * W;
                    const double* gyrow = gyc + (size_t)oh * OW;
                    const int base = -pad + kw;
                    if (stride == 1) {
                        const int lo = std::max(0, -base);
                        const int hi = std::min(OW, W - base);
                        if (hi > lo) s += dot8(gyrow + lo, xrow + lo + base, hi - lo);
                    } else {
                        for (int ow = 0; ow < OW; ++ow) {
                            const int iw = ow * stride + base;
                            if (iw < 0 || iw >= W) continue;
                            s += gyrow[ow] * xrow[iw];
                        }
                    }
                }
                gwc[kh * k + kw] += s;
            }
        }
    }
}

inline void softmax_row(double* y, const double* x, int N) {
    double mx = x[0];
    for (int n = 1; n < N; ++n) mx = std::max(mx, x[n]);
    double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
    int n = 0;
    for (; n + 4 <= N; n += 4) {
        y[n] = std::exp(x[n] - mx);
        y[n + 1] = std::exp(x[n + 1] - mx);
        y[n + 2] = std::exp(x[n + 2] - mx);
        y[n + 3] = std::exp(x[n + 3] - mx);
        s0 += y[n];
        s1 += y[n + 1];
        s2 += y[n + 2];
        s3 += y[n + 3];
    }
    double tail = 0;
    for (; n < N; ++n) {
        y[n] = std::exp(x[n] - mx);
        tail += y[n];
    }
    const double inv = 1.0 / (((s0 + s1) + (s2 + s3)) + tail);
    for (int i = 0; i < N; ++i) y[i] *= inv;
}

inline void bilinear_one(double* out, const double* src, int C, int H, int W, const double* grid,
                         int OH, int OW, int o) {
    const double x = std::clamp(grid[(size_t)o * 2 + 0], 0.0, (double)(W - 1));
    const double y = std::clamp(grid[(size_t)o * 2 + 1], 0.0, (double)(H - 1));
    const int x0 = std::min((int)x, W - 2 >= 0 ? W - 2 : 0);
    const int y0 = std::min((int)y, H - 2 >= 0 ? H - 2 : 0);
    const int x1 = std::min(x0 + 1, W - 1);
    const int y1 = std::min(y0 + 1, H - 1);
    const double fx = x - x0, fy = y - y0;
    const double w00 = (1 - fx) * (1 - fy), w01 = fx * (1 - fy);
    const double w10 = (1 - fx) * fy, w11 = fx * fy;
    for (int c = 0; c < C; ++c) {
        const double* s = src + (size_t)c * H * W;
        out[(size_t)c * OH * OW + o] = w00 * s[(size_t)y0 * W + x0] + w01 * s[(size_t)y0 * W + x1] +
                                       w10 * s[(size_t)y1 * W + x0] + w11 * s[(size_t)y1 * W + x1];
    }
}

inline int reflect(int i, int n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * n - 2 - i;
    return i;
}

inline void boxmean3_one(double* y, const double* x, int H, int W, int c) {
    const double* xc = x + (size_t)c * H * W;
    double* yc = y + (size_t)c * H * W;
    for (int h = 0; h < H; ++h) {
        const double* r0 = xc + (size_t)reflect(h - 1, H) * W;
        const double* r1 = xc + (size_t)h * W;
        const double* r2 = xc + (size_t)reflect(h + 1, H) * W;
        double* yrow = yc + (size_t)h * W;
        for (int w = 0; w < W; ++w) {
            const int wl = reflect(w - 1, W), wr = reflect(w + 1, W);
            yrow[w] = (r0[wl] + r0[w] + r0[wr] + r1[wl] + r1[w] + r1[wr] + r2[wl] + r2[w] +
                       r2[wr]) /
                      9.0;
        }
    }
}

}  // namespace detail

void matmul(double* C, const double* A, const double* B, int M, int K, int N, bool acc) {
    for (int m = 0; m < M; ++m)
        detail::matmul_row(C + (size_t)m * N, A + (size_t)m * K, B, K, N, acc);
}

void matmul_abt(double* C, const double* A, const double* B, int M, int K, int N, bool acc) {
    for (int m = 0; m < M; ++m)
        detail::matmul_abt_row(C + (size_t)m * N, A + (size_t)m * K, B, K, N, acc);
}

void matmul_atb(double* C, const double* A, const double* B, int M, int K, int N, bool acc) {
    for (int k = 0; k < K; ++k)
        detail::matmul_atb_row(C + (size_t)k * N, A, B, M, K, N, acc, k);
}

void conv2d_fwd(double* y, const double* x, const double* w, const double* b, int Ci, int H,
                int W, int Co, int k, int stride, int pad) {
    for (int co = 0; co < Co; ++co)
        detail::conv2d_fwd_one(y, x, w, b, Ci, H, W, Co, k, stride, pad, co);
}

void conv2d_bwd_x(double* gx, const double* gy, const double* w, int Ci, int H, int W, int Co,
                  int k, int stride, int pad) {
    for (int ci = 0; ci < Ci; ++ci)
        detail::conv2d_bwd_x_one(gx, gy, w, Ci, H, W, Co, k, stride, pad, ci);
}

void conv2d_bwd_w(double* gw, double* gb, const double* gy, const double* x, int Ci, int H,
                  int W, int Co, int k, int stride, int pad) {
    for (int co = 0; co < Co; ++co)
        detail::conv2d_bwd_w_one(gw, gb, gy, x, Ci, H, W, Co, k, stride, pad, co);
}

void softmax_rows(double* y, const double* x, int M, int N) {
    for (int m = 0; m < M; ++m)
        detail::softmax_row(y + (size_t)m * N, x + (size_t)m * N, N);
}

void bilinear_sample(double* out, const double* src, int C, int H, int W, const double* grid,
                     int OH, int OW) {
    for (int o = 0; o < OH * OW; ++o)
        detail::bilinear_one(out, src, C, H, W, grid, OH, OW, o);
}

void boxmean3_reflect(double* y, const double* x, int C, int H, int W) {
    for (int c = 0; c < C; ++c)
        detail::boxmean3_one(y, x, H, W, c);
}

}  // namespace serial

// ---------------------------------------------------------------------------
// omp: identical routines, work split over independent outputs
// ---------------------------------------------------------------------------

namespace omp {

void matmul(double* C, const double* A, const double* B, int M, int K, int N, bool acc) {
#pragma omp parallel for schedule(static) if (M > 1)
    for (int m = 0; m < M; ++m)
        serial::detail::matmul_row(C + (size_t)m * N, A + (size_t)m * K, B, K, N, acc);
}

void matmul_abt(double* C, const double* A, const double* B, int M, int K, int N, bool acc) {
#pragma omp parallel for schedule(static) if (M > 1)
    for (int m = 0; m < M; ++m)
        serial::detail::matmul_abt_row(C + (size_t)m * N, A + (size_t)m * K, B, K, N, acc);
}

void matmul_atb(double* C, const double* A, const double* B, int M, int K, int N, bool acc) {
#pragma omp parallel for schedule(static) if (K > 1)
    for (int k = 0; k < K; ++k)
        serial::detail::matmul_atb_row(C + (size_t)k * N, A, B, M, K, N, acc, k);
}

void conv2d_fwd(double* y, const double* x, const double* w, const double* b, int Ci, int H,
                int W, int Co, int k, int stride, int pad) {
#pragma omp parallel for schedule(static) if (Co > 1)
    for (int co = 0; co < Co; ++co)
        serial::detail::conv2d_fwd_one(y, x, w, b, Ci, H, W, Co, k, stride, pad, co);
}

void conv2d_bwd_x(double* gx, const double* gy, const double* w, int Ci, int H, int W, int Co,
                  int k, int stride, int pad) {
#pragma omp parallel for schedule(static) if (Ci > 1)
    for (int ci = 0; ci < Ci; ++ci)
        serial::detail::conv2d_bwd_x_one(gx, gy, w, Ci, H, W, Co, k, stride, pad, ci);
}

void conv2d_bwd_w(double* gw, double* gb, const double* gy, const double* x, int Ci, int H,
                  int W, int Co, int k, int stride, int pad) {
#pragma omp parallel for schedule(static) if (Co > 1)
    for (int co = 0; co < Co; ++co)
        serial::detail::conv2d_bwd_w_one(gw, gb, gy, x, Ci, H, W, Co, k, stride, pad, co);
}

void softmax_rows(double* y, const double* x, int M, int N) {
#pragma omp parallel for schedule(static) if (M > 1)
    for (int m = 0; m < M; ++m)
        serial::detail::softmax_row(y + (size_t)m * N, x + (size_t)m * N, N);
}

void bilinear_sample(double* out, const double* src, int C, int H, int W, const double* grid,
                     int OH, int OW) {
    const int n = OH * OW;
#pragma omp parallel for schedule(static) if (n > 64)
    for (int o = 0; o < n; ++o)
        serial::detail::bilinear_one(out, src, C, H, W, grid, OH, OW, o);
}

void boxmean3_reflect(double* y, const double* x, int C, int H, int W) {
#pragma omp parallel for schedule(static) if (C > 1)
    for (int c = 0; c < C; ++c)
        serial::detail::boxmean3_one(y, x, H, W, c);
}

}  // namespace omp

// ---------------------------------------------------------------------------
// dispatch
// ---------------------------------------------------------------------------

void matmul(double* C, const double* A, const double* B, int M, int K, int N, bool acc) {
    if (parallel_enabled() && (long long)M * K * N > kParallelGrain)
        omp::matmul(C, A, B, M, K, N, acc);
    else
        serial::matmul(C, A, B, M, K, N, acc);
}

void matmul_abt(double* C, const double* A, const double* B, int M, int K, int N, bool acc) {
    if (parallel_enabled() && (long long)M * K * N > kParallelGrain)
        omp::matmul_abt(C, A, B, M, K, N, acc);
    else
        serial::matmul_abt(C, A, B, M, K, N, acc);
}

void matmul_atb(double* C, const double* A, const double* B, int M, int K, int N, bool acc) {
    if (parallel_enabled() && (long long)M * K * N > kParallelGrain)
        omp::matmul_atb(C, A, B, M, K, N, acc);
    else
        serial::matmul_atb(C, A, B, M, K, N, acc);
}

void conv2d_fwd(double* y, const double* x, const double* w, const double* b, int Ci, int H,
                int W, int Co, int k, int stride, int pad) {
    if (parallel_enabled() && (long long)Ci * Co * H * W * k * k > kParallelGrain)
        omp::conv2d_fwd(y, x, w, b, Ci, H, W, Co, k, stride, pad);
    else
        serial::conv2d_fwd(y, x, w, b, Ci, H, W, Co, k, stride, pad);
}

void conv2d_bwd_x(double* gx, const double* gy, const double* w, int Ci, int H, int W, int Co,
                  int k, int stride, int pad) {
    if (parallel_enabled() && (long long)Ci * Co * H * W * k * k > kParallelGrain)
        omp::conv2d_bwd_x(gx, gy, w, Ci, H, W, Co, k, stride, pad);
    else
        serial::conv2d_bwd_x(gx, gy, w, Ci, H, W, Co, k, stride, pad);
}

void conv2d_bwd_w(double* gw, double* gb, const double* gy, const double* x, int Ci, int H,
                  int W, int Co, int k, int stride, int pad) {
    if (parallel_enabled() && (long long)Ci * Co * H * W * k * k > kParallelGrain)
        omp::conv2d_bwd_w(gw, gb, gy, x, Ci, H, W, Co, k, stride, pad);
    else
        serial::conv2d_bwd_w(gw, gb, gy, x, Ci, H, W, Co, k, stride, pad);
}

void softmax_rows(double* y, const double* x, int M, int N) {
    if (parallel_enabled() && (long long)M * N > kParallelGrain)
        omp::softmax_rows(y, x, M, N);
    else
        serial::softmax_rows(y, x, M, N);
}

void bilinear_sample(double* out, const double* src, int C, int H, int W, const double* grid,
                     int OH, int OW) {
    if (parallel_enabled() && (long long)C * OH * OW > kParallelGrain)
        omp::bilinear_sample(out, src, C, H, W, grid, OH, OW);
    else
        serial::bilinear_sample(out, src, C, H, W, grid, OH, OW);
}

void boxmean3_reflect(double* y, const double* x, int C, int H, int W) {
    if (parallel_enabled() && (long long)C * H * W * 9 > kParallelGrain)
        omp::boxmean3_reflect(y, x, C, H, W);
    else
        serial::boxmean3_reflect(y, x, C, H, W);
}

// ---------------------------------------------------------------------------
// resizes (serial; cheap next to the kernels above)
// ---------------------------------------------------------------------------

void resize_bilinear(double* dst, const double* src, int C, int H, int W, int OH, int OW) {
    const double sy = (double)H / OH, sx = (double)W / OW;
    for (int c = 0; c < C; ++c) {
        const double* s = src + (size_t)c * H * W;
        double* d = dst + (size_t)c * OH * OW;
        for (int oy = 0; oy < OH; ++oy) {
            double fy = (oy + 0.5) * sy - 0.5;
            fy = std::clamp(fy, 0.0, (double)(H - 1));
            const int y0 = std::min((int)fy, std::max(H - 2, 0));
            const int y1 = std::min(y0 + 1, H - 1);
            const double wy = fy - y0;
            for (int ox = 0; ox < OW; ++ox) {
                double fx = (ox + 0.5) * sx - 0.5;
                fx = std::clamp(fx, 0.0, (double)(W - 1));
                const int x0 = std::min((int)fx, std::max(W - 2, 0));
                const int x1 = std::min(x0 + 1, W - 1);
                const double wx = fx - x0;
                d[(size_t)oy * OW + ox] =
                    (1 - wy) * ((1 - wx) * s[(size_t)y0 * W + x0] + wx * s[(size_t)y0 * W + x1]) +
                    wy * ((1 - wx) * s[(size_t)y1 * W + x0] + wx * s[(size_t)y1 * W + x1]);
            }
        }
    }
}

namespace {

// Catmull-Rom (Keys, a = -0.5).
inline void cubic_weights(double t, double* w) {
    const double a = -0.5;
    const double t2 = t * t, t3 = t2 * t;
    w[0] = a * (t3 - 2 * t2 + t);
    w[1] = (a + 2) * t3 - (a + 3) * t2 + 1;
    w[2] = -(a + 2) * t3 + (2 * a + 3) * t2 - a * t;
    w[3] = a * (t2 - t3);
}

struct CubicAxis {
    std::vector<int> i0;
    std::vector<double> w;  // 4 weights per output position
};

CubicAxis cubic_axis(int in, int out) {
    CubicAxis ax;
    ax.i0.resize((size_t)out);
    ax.w.resize((size_t)out * 4);
    const double s = (double)in / out;
    for (int o = 0; o < out; ++o) {
        double f = (o + 0.5) * s - 0.5;
        const int base = (int)std::floor(f);
        cubic_weights(f - base, &ax.w[(size_t)o * 4]);
        ax.i0[(size_t)o] = base - 1;
    }
    return ax;
}

inline int clampi(int i, int n) { return i < 0 ? 0 : (i >= n ? n - 1 : i); }

}  // namespace

void resize_bicubic(double* dst, const double* src, int C, int H, int W, int OH, int OW) {
    const CubicAxis ay = cubic_axis(H, OH), ax = cubic_axis(W, OW);
    for (int c = 0; c < C; ++c) {
        const double* s = src + (size_t)c * H * W;
        double* d = dst + (size_t)c * OH * OW;
        for (int oy = 0; oy < OH; ++oy) {
            const double* wy = &ay.w[(size_t)oy * 4];
            const int y0 = ay.i0[(size_t)oy];
            for (int ox = 0; ox < OW; ++ox) {
                const double* wx = &ax.w[(size_t)ox * 4];
                const int x0 = ax.i0[(size_t)ox];
                double acc = 0.0;
                for (int j = 0; j < 4; ++j) {
                    const int yy = clampi(y0 + j, H);
                    const double* row = s + (size_t)yy * W;
                    double r = 0.0;
                    for (int i = 0; i < 4; ++i) r += wx[i] * row[clampi(x0 + i, W)];
                    acc += wy[j] * r;
                }
                d[(size_t)oy * OW + ox] = acc;
            }
        }
    }
}

void resize_bicubic_bwd(double* gsrc, const double* gdst, int C, int H, int W, int OH, int OW) {
    const CubicAxis ay = cubic_axis(H, OH), ax = cubic_axis(W, OW);
    for (int c = 0; c < C; ++c) {
        double* g = gsrc + (size_t)c * H * W;
        const double* gd = gdst + (size_t)c * OH * OW;
        for (int oy = 0; oy < OH; ++oy) {
            const double* wy = &ay.w[(size_t)oy * 4];
            const int y0 = ay.i0[(size_t)oy];
            for (int ox = 0; ox < OW; ++ox) {
                const double go = gd[(size_t)oy * OW + ox];
                if (go == 0.0) continue;
                const double* wx = &ax.w[(size_t)ox * 4];
                const int x0 = ax.i0[(size_t)ox];
                for (int j = 0; j < 4; ++j) {
                    double* row = g + (size_t)clampi(y0 + j, H) * W;
                    const double gj = go * wy[j];
                    for (int i = 0; i < 4; ++i) row[clampi(x0 + i, W)] += gj * wx[i];
                }
            }
        }
    }
}

void downsample_box(double* dst, const double* src, int C, int H, int W, int factor) {
    const int OH = H / factor, OW = W / factor;
    const double inv = 1.0 / (factor * factor);
    for (int c = 0; c < C; ++c) {
        const double* s = src + (size_t)c * H * W;
        double* d = dst + (size_t)c * OH * OW;
        for (int oy = 0; oy < OH; ++oy) {
            for (int ox = 0; ox < OW; ++ox) {
                double acc = 0.0;
                for (int j = 0; j < factor; ++j) {
                    const double* row = s + (size_t)(oy * factor + j) * W + (size_t)ox * factor;
                    for (int i = 0; i < factor; ++i) acc += row[i];
                }
                d[(size_t)oy * OW + ox] = acc * inv;
            }
        }
    }
}

}  // namespace rpr::kern
