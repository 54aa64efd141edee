#include "rpr/fusion.hpp"

#include <cmath>

#include "rpr/common.hpp"

namespace rpr::fusion {

Var compute_affinity(const Var& fs_mc, const Var& fr_matched) {
    if (fs_mc->val.rank() != 2 || fr_matched->val.rank() != 2 ||
        fs_mc->val.dim(1) != fr_matched->val.dim(1))
        throw validation_error("compute_affinity: channel mismatch");
    const int c = fs_mc->val.dim(1);
    Var logits = ag::scale(ag::matmul_abt(fs_mc, fr_matched), 1.0 / std::sqrt((double)c));
    return ag::softmax_rows(logits);
}

ConstructedReference construct_reference(const Var& affinity, const Var& features_raw,
                                         const Var& depths) {
    if (affinity->val.rank() != 2 || features_raw->val.rank() != 2 ||
        affinity->val.dim(1) != features_raw->val.dim(0))
        throw validation_error("construct_reference: shape mismatch");
    if (depths->val.numel() != features_raw->val.dim(0))
        throw validation_error("construct_reference: depths size mismatch");
    ConstructedReference out;
    out.f_c = ag::matmul(affinity, features_raw);
    Var d = depths->val.rank() == 2 ? depths : ag::reshape(depths, {depths->val.dim(0), 1});
    out.d_c = ag::matmul(affinity, d);
    return out;
}

FusionModule FusionModule::make(Rng& rng, int c_s, int c_t, int heads) {
    if (heads < 1 || c_s % heads != 0)
        throw config_error("fusion: head count must divide C_s");
    FusionModule f;
    f.c_s = c_s;
    f.c_t = c_t;
    f.heads = heads;
    f.wq = net::Linear::make(rng, c_s, c_s);
    f.wk = net::Linear::make(rng, c_t, c_s);
    f.wv = net::Linear::make(rng, c_t, c_s);
    // Zero-init output projection: the depth-hint path fades in as it trains
    // instead of injecting noise into the student features from step one.
    f.wo = net::Linear::make(rng, c_s, c_s, /*zero_init=*/true);
    f.conv_fuse = net::Conv2d::make(rng, c_s + c_t + 1, c_s, 3, 1, 1);
    // Identity-init on the residual slot: F_o starts as F_s + F_d, and the
    // constructed-reference channels blend in through learned taps.
    f.conv_fuse.w->val.fill(0.0);
    for (int c = 0; c < c_s; ++c) f.conv_fuse.w->val(c, c, 1, 1) = 1.0;
    return f;
}

void FusionModule::params(net::ParamMap& m, const std::string& prefix) const {
    wq.params(m, prefix + ".wq");
    wk.params(m, prefix + ".wk");
    wv.params(m, prefix + ".wv");
    wo.params(m, prefix + ".wo");
    conv_fuse.params(m, prefix + ".conv_fuse");
}

MhaOutput FusionModule::depth_hint_attention(const Var& fs_mc, const Var& features_raw) const {
    if (fs_mc->val.dim(1) != c_s || features_raw->val.dim(1) != c_t)
        throw validation_error("depth_hint_attention: channel mismatch");
    const int dh = c_s / heads;
    Var q = wq(fs_mc);
    Var k = wk(features_raw);
    Var v = wv(features_raw);
    MhaOutput out;
    std::vector<Var> head_outs;
    head_outs.reserve((size_t)heads);
    for (int h = 0; h < heads; ++h) {
        Var qh = ag::slice_cols(q, h * dh, (h + 1) * dh);
        Var kh = ag::slice_cols(k, h * dh, (h + 1) * dh);
        Var vh = ag::slice_cols(v, h * dh, (h + 1) * dh);
        Var att = ag::softmax_rows(ag::scale(ag::matmul_abt(qh, kh), 1.0 / std::sqrt((double)dh)));
        out.head_maps.push_back(att->val);
        head_outs.push_back(ag::matmul(att, vh));
    }
    out.f_d = wo(ag::concat_cols(head_outs));
    return out;
}

Var FusionModule::fuse(const Var& fs_mc, const Var& f_d, const Var& f_c, const Var& d_c, int H,
                       int W) const {
    const int M = H * W;
    if (fs_mc->val.dim(0) != M || f_d->val.dim(0) != M || f_c->val.dim(0) != M ||
        d_c->val.numel() != M)
        throw validation_error("fuse: pixel layout mismatch");
    if (fs_mc->val.dim(1) != c_s || f_c->val.dim(1) != c_t)
        throw validation_error("fuse: channel mismatch");
    Var resid = ag::mc_to_chw(ag::add(fs_mc, f_d), H, W);
    Var fc_chw = ag::mc_to_chw(f_c, H, W);
    // D_c joins as one zero-centred log-depth channel.
    Var logd = ag::log_(ag::reshape(d_c, {M, 1}));
    Var dchan = ag::reshape(ag::sub_scalarvar(logd, ag::mean_all(logd)), {1, H, W});
    return conv_fuse(ag::concat_ch({resid, fc_chw, dchan}));
}

}  // namespace rpr::fusion
