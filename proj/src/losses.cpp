#include "rpr/losses.hpp"

#include <cmath>

#include "rpr/common.hpp"

namespace rpr::loss {

namespace {

// mean over channels of a [C,H,W] map -> [H,W]
Var mean_channels(const Var& x) {
    const int C = x->val.dim(0), H = x->val.dim(1), W = x->val.dim(2);
    Var mc = ag::chw_to_mc(x);                       // [M,C]
    Var ones = ag::constant(Tensor({C, 1}, 1.0 / C));
    return ag::reshape(ag::matmul(mc, ones), {H, W});
}

Var ssim_loss(const Var& pred, const Var& target) {
    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    Var mu_x = ag::avgpool3_reflect(pred);
    Var mu_y = ag::avgpool3_reflect(target);
    Var sigma_x = ag::sub(ag::avgpool3_reflect(ag::mul(pred, pred)), ag::mul(mu_x, mu_x));
    Var sigma_y = ag::sub(ag::avgpool3_reflect(ag::mul(target, target)), ag::mul(mu_y, mu_y));
    Var sigma_xy = ag::sub(ag::avgpool3_reflect(ag::mul(pred, target)), ag::mul(mu_x, mu_y));
    Var n = ag::mul(ag::add_const(ag::scale(ag::mul(mu_x, mu_y), 2.0), c1),
                    ag::add_const(ag::scale(sigma_xy, 2.0), c2));
    Var d = ag::mul(ag::add_const(ag::add(ag::mul(mu_x, mu_x), ag::mul(mu_y, mu_y)), c1),
                    ag::add_const(ag::add(sigma_x, sigma_y), c2));
    return ag::clamp(ag::scale(ag::sub(ag::constant(Tensor(d->val.shape, 1.0)),
                                       ag::div_(n, d)),
                               0.5),
                     0.0, 1.0);
}

}  // namespace

Tensor identity_error_min(const Tensor& src_prev, const Tensor& src_next, const Tensor& target) {
    ag::NoGradGuard ng;
    Var t = ag::constant(target);
    Tensor id0 = photometric_error(ag::constant(src_prev), t)->val;
    Tensor id1 = photometric_error(ag::constant(src_next), t)->val;
    Tensor out = id0;
    for (long long i = 0; i < out.numel(); ++i)
        out.v[(size_t)i] = std::min(id0.v[(size_t)i], id1.v[(size_t)i]);
    return out;
}

Var photometric_error(const Var& pred, const Var& target) {
    if (!pred->val.same_shape(target->val) || pred->val.rank() != 3)
        throw validation_error("photometric_error: inputs must be matching [C,H,W]");
    Var ssim_term = ssim_loss(pred, target);
    Var l1 = ag::abs_(ag::sub(pred, target));
    Var per_ch = ag::add(ag::scale(ssim_term, 0.85), ag::scale(l1, 0.15));
    return mean_channels(per_ch);
}

ReconstructionResult reconstruction_loss(const Var& disp,
                                         const std::array<const Tensor*, 2>& sources,
                                         const Tensor& target, const std::array<Var, 2>& pose6,
                                         const geo::CameraIntrinsics& K_rr,
                                         const ReconstructionOptions& opt) {
    if (!sources[0] || !sources[1])
        throw validation_error("reconstruction_loss: missing source frames");
    const int H = K_rr.height, W = K_rr.width;
    if (target.dim(1) != H || target.dim(2) != W)
        throw validation_error("reconstruction_loss: target resolution mismatch");

    // Bring the disparity to rich resolution (cubic) and clamp overshoot
    // back into (0,1) before the depth conversion.
    Var d3 = disp->val.rank() == 2 ? ag::reshape(disp, {1, disp->val.dim(0), disp->val.dim(1)})
                                   : disp;
    Var disp_rr = d3;
    if (d3->val.dim(1) != H || d3->val.dim(2) != W) {
        disp_rr = ag::clamp(ag::resize_bicubic(d3, H, W), 1e-6, 1.0 - 1e-6);
    }
    Var disp2d = ag::reshape(disp_rr, {H, W});
    Var depth = geo::disp_to_depth(disp2d, opt.d_min, opt.d_max);

    Var target_v = ag::constant(target);
    const double kBig = 1e9;
    std::array<Var, 2> masked_err;
    std::array<Tensor, 2> valid;
    Tensor id_min;
    if (opt.id_min) {
        if (opt.id_min->dim(0) != H || opt.id_min->dim(1) != W)
            throw validation_error("reconstruction_loss: id_min resolution mismatch");
        id_min = *opt.id_min;
    } else {
        id_min = identity_error_min(*sources[0], *sources[1], target);
    }
    for (int s = 0; s < 2; ++s) {
        auto [warped, mask] = geo::warp(*sources[(size_t)s], depth, pose6[(size_t)s], K_rr);
        Var err = photometric_error(warped, target_v);
        Tensor inv_fill({H, W});
        for (long long i = 0; i < inv_fill.numel(); ++i)
            inv_fill.v[(size_t)i] = mask.v[(size_t)i] > 0 ? 0.0 : kBig;
        masked_err[(size_t)s] = ag::mul_mask(err, mask);
        masked_err[(size_t)s] = ag::add(masked_err[(size_t)s], ag::constant(inv_fill));
        valid[(size_t)s] = std::move(mask);
    }
    Var warped_min = ag::min2(masked_err[0], masked_err[1]);

    Tensor final_mask({H, W});
    long long kept = 0;
    for (long long i = 0; i < final_mask.numel(); ++i) {
        const bool any_valid = valid[0].v[(size_t)i] > 0 || valid[1].v[(size_t)i] > 0;
        bool keep = any_valid;
        if (opt.automask) keep = keep && warped_min->val.v[(size_t)i] < id_min.v[(size_t)i];
        final_mask.v[(size_t)i] = keep ? 1.0 : 0.0;
        kept += keep ? 1 : 0;
    }

    // Edge-aware smoothness on mean-normalized disparity.
    Var dnorm = ag::div_by_scalar(disp2d, ag::mean_all(disp2d));
    Tensor wx({H, W}), wy({H, W});
    for (int v = 0; v < H; ++v)
        for (int u = 0; u < W; ++u) {
            double gx = 0, gy = 0;
            for (int c = 0; c < 3; ++c) {
                if (u + 1 < W) gx += std::fabs(target(c, v, u + 1) - target(c, v, u));
                if (v + 1 < H) gy += std::fabs(target(c, v + 1, u) - target(c, v, u));
            }
            wx(v, u) = std::exp(-gx / 3.0);
            wy(v, u) = std::exp(-gy / 3.0);
        }
    Var smooth = ag::add(ag::mean_all(ag::mul_mask(ag::abs_(ag::dx_fwd(dnorm)), wx)),
                         ag::mean_all(ag::mul_mask(ag::abs_(ag::dy_fwd(dnorm)), wy)));

    ReconstructionResult out;
    out.depth_rr = depth;
    out.masked_pixels = kept;
    Var photo;
    if (kept > 0) {
        photo = ag::masked_mean(warped_min, final_mask);
        out.photo_value = photo->val.v[0];
        out.total = ag::add(photo, ag::scale(smooth, opt.smoothness_weight));
    } else {
        out.total = ag::scale(smooth, opt.smoothness_weight);
    }
    out.smooth_value = smooth->val.v[0];
    if (!std::isfinite(out.total->val.v[0]))
        throw numeric_error("reconstruction_loss: non-finite value");
    return out;
}

Tensor gradient_signature(const Tensor& depth) {
    const int H = depth.dim(0), W = depth.dim(1);
    Tensor gx({H, W}), gy({H, W});
    for (int v = 0; v < H; ++v)
        for (int u = 0; u + 1 < W; ++u) gx(v, u) = depth(v, u + 1) - depth(v, u);
    for (int v = 0; v + 1 < H; ++v)
        for (int u = 0; u < W; ++u) gy(v, u) = depth(v + 1, u) - depth(v, u);
    double mx = 0, my = 0;
    for (long long i = 0; i < gx.numel(); ++i) mx += std::fabs(gx.v[(size_t)i]);
    for (long long i = 0; i < gy.numel(); ++i) my += std::fabs(gy.v[(size_t)i]);
    mx = std::max(mx / (double)gx.numel(), 1e-7);
    my = std::max(my / (double)gy.numel(), 1e-7);
    Tensor out({H, W});
    for (long long i = 0; i < out.numel(); ++i)
        out.v[(size_t)i] = gx.v[(size_t)i] / mx + gy.v[(size_t)i] / my;
    return out;
}

namespace {
// Norm(G) = G / max(mean|G|, 1e-7); the guard (rather than +eps) keeps the
// signature exactly invariant to positive rescaling.
Var norm_by_mean_abs(const Var& g) {
    Var m = ag::mean_all(ag::abs_(g));
    if (m->val.v[0] < 1e-7) return ag::scale(g, 1.0 / 1e-7);
    return ag::div_by_scalar(g, m);
}
}  // namespace

Var gradient_signature(const Var& depth) {
    if (depth->val.rank() != 2) throw validation_error("gradient_signature: want [H,W]");
    if (!depth->val.all_finite()) throw numeric_error("gradient_signature: non-finite depth");
    Var gx = ag::dx_fwd(depth);
    Var gy = ag::dy_fwd(depth);
    return ag::add(norm_by_mean_abs(gx), norm_by_mean_abs(gy));
}

Var consistency_loss(const Var& depth_pred, const Tensor& d_p) {
    if (!depth_pred->val.same_shape(d_p))
        throw validation_error("consistency_loss: resolution mismatch after resize");
    Var sig_pred = gradient_signature(depth_pred);
    Tensor sig_p = gradient_signature(d_p);
    return ag::mean_all(ag::abs_(ag::sub(sig_pred, ag::constant(sig_p))));
}

Var auxiliary_loss(const Var& d_c, int hf, int wf, const Tensor& d_p) {
    if (d_c->val.numel() != (long long)hf * wf)
        throw validation_error("auxiliary_loss: D_c does not match feature grid");
    Var dc_map = ag::reshape(d_c, {1, hf, wf});
    Var up = ag::reshape(ag::resize_bicubic(dc_map, d_p.dim(0), d_p.dim(1)),
                         {d_p.dim(0), d_p.dim(1)});
    return ag::mean_all(ag::abs_(ag::sub(up, ag::constant(d_p))));
}

Var total_loss(const Var& l_vp, const Var& l_c, const Var& l_aux, double alpha, double beta,
               LossBreakdown* breakdown) {
    if (alpha < 0 || beta < 0) throw config_error("total_loss: negative weights");
    auto chk = [](const Var& v, const char* name) {
        if (v && !std::isfinite(v->val.v[0]))
            throw numeric_error(std::string("total_loss: non-finite ") + name);
    };
    chk(l_vp, "l_vp");
    chk(l_c, "l_c");
    chk(l_aux, "l_aux");
    Var total = ag::constant(Tensor::scalar(0.0));
    if (l_vp) total = ag::add(total, ag::scale(l_vp, alpha));
    if (l_c) total = ag::add(total, ag::scale(l_c, beta));
    if (l_aux) total = ag::add(total, l_aux);
    if (breakdown) {
        breakdown->l_vp = l_vp ? l_vp->val.v[0] : 0.0;
        breakdown->l_c = l_c ? l_c->val.v[0] : 0.0;
        breakdown->l_aux = l_aux ? l_aux->val.v[0] : 0.0;
        breakdown->alpha = alpha;
        breakdown->beta = beta;
        breakdown->total = total->val.v[0];
    }
    return total;
}

}  // namespace rpr::loss
