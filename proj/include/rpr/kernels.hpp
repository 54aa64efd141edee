#pragma once

#include <cstddef>

// Hot inner loops of the pipeline. Every kernel has a serial reference
// implementation (kern::serial) and an OpenMP one (kern::omp) that splits
// work over independent output elements only, so both produce bit-identical
// results. The unqualified wrappers dispatch on the global parallel flag.
// tools/bench.cpp compares the two.

namespace rpr::kern {

bool parallel_enabled();
void set_parallel(bool on);

namespace serial {

// C[M,N] = A[M,K] * B[K,N]   (+= when acc)
void matmul(double* C, const double* A, const double* B, int M, int K, int N, bool acc);
// C[M,N] = A[M,K] * B[N,K]^T
void matmul_abt(double* C, const double* A, const double* B, int M, int K, int N, bool acc);
// C[K,N] = A[M,K]^T * B[M,N]
void matmul_atb(double* C, const double* A, const double* B, int M, int K, int N, bool acc);

// y[Co,OH,OW] from x[Ci,H,W], w[Co,Ci,k,k], b[Co]; zero padding.
void conv2d_fwd(double* y, const double* x, const double* w, const double* b, int Ci, int H,
                int W, int Co, int k, int stride, int pad);
// gx[Ci,H,W] += gather over gy[Co,OH,OW]; gather form, deterministic.
void conv2d_bwd_x(double* gx, const double* gy, const double* w, int Ci, int H, int W, int Co,
                  int k, int stride, int pad);
// gw[Co,Ci,k,k] +=, gb[Co] +=.
void conv2d_bwd_w(double* gw, double* gb, const double* gy, const double* x, int Ci, int H,
                  int W, int Co, int k, int stride, int pad);

// Row-wise softmax of x[M,N].
void softmax_rows(double* y, const double* x, int M, int N);

// out[C,OH,OW] = bilinear sample of src[C,H,W] at grid[OH,OW,2] (x,y pixel
// coords, border-clamped).
void bilinear_sample(double* out, const double* src, int C, int H, int W, const double* grid,
                     int OH, int OW);

// 3x3 box mean with reflect padding, per channel.
void boxmean3_reflect(double* y, const double* x, int C, int H, int W);

}  // namespace serial

namespace omp {

void matmul(double* C, const double* A, const double* B, int M, int K, int N, bool acc);
void matmul_abt(double* C, const double* A, const double* B, int M, int K, int N, bool acc);
void matmul_atb(double* C, const double* A, const double* B, int M, int K, int N, bool acc);
void conv2d_fwd(double* y, const double* x, const double* w, const double* b, int Ci, int H,
                int W, int Co, int k, int stride, int pad);
void conv2d_bwd_x(double* gx, const double* gy, const double* w, int Ci, int H, int W, int Co,
                  int k, int stride, int pad);
void conv2d_bwd_w(double* gw, double* gb, const double* gy, const double* x, int Ci, int H,
                  int W, int Co, int k, int stride, int pad);
void softmax_rows(double* y, const double* x, int M, int N);
void bilinear_sample(double* out, const double* src, int C, int H, int W, const double* grid,
                     int OH, int OW);
void boxmean3_reflect(double* y, const double* x, int C, int H, int W);

}  // namespace omp

void matmul(double* C, const double* A, const double* B, int M, int K, int N, bool acc = false);
void matmul_abt(double* C, const double* A, const double* B, int M, int K, int N,
                bool acc = false);
void matmul_atb(double* C, const double* A, const double* B, int M, int K, int N,
                bool acc = false);
void conv2d_fwd(double* y, const double* x, const double* w, const double* b, int Ci, int H,
                int W, int Co, int k, int stride, int pad);
void conv2d_bwd_x(double* gx, const double* gy, const double* w, int Ci, int H, int W, int Co,
                  int k, int stride, int pad);
void conv2d_bwd_w(double* gw, double* gb, const double* gy, const double* x, int Ci, int H,
                  int W, int Co, int k, int stride, int pad);
void softmax_rows(double* y, const double* x, int M, int N);
void bilinear_sample(double* out, const double* src, int C, int H, int W, const double* grid,
                     int OH, int OW);
void boxmean3_reflect(double* y, const double* x, int C, int H, int W);

// Resizes (serial only; cheap relative to the kernels above).
// Half-pixel-centred bilinear resize.
void resize_bilinear(double* dst, const double* src, int C, int H, int W, int OH, int OW);
// Catmull-Rom bicubic resize, border-clamped taps.
void resize_bicubic(double* dst, const double* src, int C, int H, int W, int OH, int OW);
// Transpose of resize_bicubic: scatters gdst into gsrc (+=).
void resize_bicubic_bwd(double* gsrc, const double* gdst, int C, int H, int W, int OH, int OW);
// Integer-factor box downsample.
void downsample_box(double* dst, const double* src, int C, int H, int W, int factor);

}  // namespace rpr::kern
