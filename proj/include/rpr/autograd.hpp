#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "rpr/tensor.hpp"

// Small reverse-mode tape. Nodes own their value and (lazily sized) gradient;
// backward closures accumulate into parent gradients. Graphs are rebuilt every
// step; parameters are persistent leaves.

namespace rpr::ag {

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
    Tensor val;
    Tensor grad;
    bool requires_grad = false;
    std::vector<Var> parents;
    std::function<void(Node&)> backfn;

    Tensor& ensure_grad() {
        if (grad.v.empty()) grad = Tensor::zeros(val.shape);
        return grad;
    }
    void zero_grad() {
        if (!grad.v.empty()) grad.fill(0.0);
    }
};

// Gradient recording can be disabled (inference); ops then produce parent-free
// constant nodes.
bool grad_enabled();
struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    bool prev;
};

Var constant(Tensor t);
Var leaf(Tensor t, bool requires_grad = true);
Var make_op(Tensor val, std::vector<Var> parents, std::function<void(Node&)> backfn);

// Runs backward from a scalar root (numel == 1).
void backward(const Var& root);

// --- elementwise / scalar ---------------------------------------------------
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div_(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_const(const Var& a, double c);
Var neg(const Var& a);
Var abs_(const Var& a);
Var log_(const Var& a);
Var exp_(const Var& a);
Var sigmoid(const Var& a);
Var elu(const Var& a);
Var clamp(const Var& a, double lo, double hi);
Var min2(const Var& a, const Var& b);

// --- reductions / broadcast -------------------------------------------------
Var mean_all(const Var& a);
Var sum_all(const Var& a);
// a / s and a - s where s is a 1-element Var.
Var div_by_scalar(const Var& a, const Var& s);
Var sub_scalarvar(const Var& a, const Var& s);
// elementwise multiply by a constant mask/weight map.
Var mul_mask(const Var& a, const Tensor& m);
// sum(a*m)/sum(m); m must have positive sum.
Var masked_mean(const Var& a, const Tensor& m);

// --- linear algebra ----------------------------------------------------------
Var matmul(const Var& a, const Var& b);      // [M,K]x[K,N]
Var matmul_abt(const Var& a, const Var& b);  // [M,K]x[N,K]^T -> [M,N]
Var add_rowvec(const Var& x, const Var& b);  // x[M,N] + b[N]
Var softmax_rows(const Var& x);
Var slice_cols(const Var& x, int c0, int c1);
Var concat_cols(const std::vector<Var>& xs);

// --- shape ------------------------------------------------------------------
Var reshape(const Var& a, std::vector<int> shape);
Var chw_to_mc(const Var& x);  // [C,H,W] -> [H*W, C]
Var mc_to_chw(const Var& x, int H, int W);

// --- conv / image -----------------------------------------------------------
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
Var upsample_nearest2(const Var& x);
Var resize_bicubic(const Var& x, int OH, int OW);
Var avgpool3_reflect(const Var& x);
Var concat_ch(const std::vector<Var>& xs);
Var global_avg_pool(const Var& x);  // [C,H,W] -> [C]
// forward differences along x/y of a [H,W] map, trailing edge zero.
Var dx_fwd(const Var& x);
Var dy_fwd(const Var& x);
// bilinear sample of a constant source at a differentiable grid.
Var grid_sample(const Tensor& src, const Var& grid);

}  // namespace rpr::ag
