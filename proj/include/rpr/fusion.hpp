#pragma once

#include <vector>

#include "rpr/layers.hpp"
#include "rpr/tensor.hpp"

namespace rpr::fusion {

using ag::Var;

// A = softmax(F_s F_r^T / sqrt(C_s)), row-stochastic [M,R].
Var compute_affinity(const Var& fs_mc, const Var& fr_matched);

struct MhaOutput {
    Var f_d;                       // [M, C_s]
    std::vector<Tensor> head_maps; // per-head attention [M, R]
};

struct ConstructedReference {
    Var f_c;  // [M, C_t]
    Var d_c;  // [M, 1], meters
};

// F_c = A * f_r ; D_c = A * d_r.
ConstructedReference construct_reference(const Var& affinity, const Var& features_raw,
                                         const Var& depths);

// The Prior Depth Fusion Module: multi-head depth-hint attention over raw bank
// features plus the fusion convolution combining F_s+F_d, F_c and the D_c
// channel.
struct FusionModule {
    int c_s = 0, c_t = 0, heads = 0;
    net::Linear wq, wk, wv, wo;  // wq/wo: C_s->C_s, wk/wv: C_t->C_s
    net::Conv2d conv_fuse;       // 3x3, (C_s + C_t + 1) -> C_s

    static FusionModule make(Rng& rng, int c_s, int c_t, int heads);
    void params(net::ParamMap& m, const std::string& prefix) const;

    MhaOutput depth_hint_attention(const Var& fs_mc, const Var& features_raw) const;
    // All inputs share the M = H*W pixel layout.
    Var fuse(const Var& fs_mc, const Var& f_d, const Var& f_c, const Var& d_c, int H,
             int W) const;
};

}  // namespace rpr::fusion
