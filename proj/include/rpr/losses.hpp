#pragma once

#include <array>
#include <optional>

#include "rpr/autograd.hpp"
#include "rpr/geometry.hpp"
#include "rpr/tensor.hpp"

namespace rpr::loss {

using ag::Var;

struct LossBreakdown {
    double l_vp = 0, l_c = 0, l_aux = 0, total = 0;
    double alpha = 1.0, beta = 0.1;
};

// 0.85/2 * (1 - SSIM) + 0.15 * |pred - target|, SSIM with 3x3 mean pooling,
// per pixel, averaged over channels. Inputs [3,H,W] in [0,1]; output [H,W].
Var photometric_error(const Var& pred, const Var& target);

struct ReconstructionOptions {
    double d_min = 0.1, d_max = 100.0;
    double smoothness_weight = 1e-3;
    bool automask = true;
    // Optional precomputed per-pixel min of the unwarped source errors; they
    // depend only on the images, so trainers cache them across epochs.
    const Tensor* id_min = nullptr;
};

// min over the two sources of photometric_error(source, target), no gradients.
Tensor identity_error_min(const Tensor& src_prev, const Tensor& src_next, const Tensor& target);

struct ReconstructionResult {
    Var total;
    Var depth_rr;             // rich-resolution depth used for the warps
    double photo_value = 0;   // masked mean photometric term (0 when fully masked)
    double smooth_value = 0;
    long long masked_pixels = 0;  // pixels surviving validity + auto-mask
};

// Min-reprojection photometric loss against the rich-resolution sources
// (t-1, t+1) with auto-masking, plus edge-aware smoothness on mean-normalized
// disparity. `disp` may be LR (it is cubic-upsampled) or already rich.
ReconstructionResult reconstruction_loss(const Var& disp,
                                         const std::array<const Tensor*, 2>& sources,
                                         const Tensor& target, const std::array<Var, 2>& pose6,
                                         const geo::CameraIntrinsics& K_rr,
                                         const ReconstructionOptions& opt);

// G~ = Norm(dx D) + Norm(dy D), Norm(G) = G / max(mean|G|, 1e-7).
Var gradient_signature(const Var& depth);
Tensor gradient_signature(const Tensor& depth);

// Mean |G~(pred) - G~(pseudo)|; `depth_pred` must already be at D_p resolution.
Var consistency_loss(const Var& depth_pred, const Tensor& d_p);

// Mean |D_p - Resize(D_c)| with D_c at feature resolution [Hf,Wf].
Var auxiliary_loss(const Var& d_c, int hf, int wf, const Tensor& d_p);

// total = alpha*l_vp + beta*l_c + l_aux; components may be null (dropped terms).
Var total_loss(const Var& l_vp, const Var& l_c, const Var& l_aux, double alpha, double beta,
               LossBreakdown* breakdown);

}  // namespace rpr::loss
