#include "rpr/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "rpr/common.hpp"
#include "rpr/fusion.hpp"
#include "rpr/geometry.hpp"
#include "rpr/kernels.hpp"

namespace rpr::eval {

MetricsRecord compute_metrics(const Tensor& pred, const Tensor& gt, double cap,
                              bool median_scaling) {
    if (!pred.same_shape(gt)) throw validation_error("compute_metrics: resolution mismatch");
    if (!(cap > 0)) throw config_error("compute_metrics: cap must be positive");

    std::vector<double> p, g;
    p.reserve(pred.v.size());
    g.reserve(gt.v.size());
    for (size_t i = 0; i < gt.v.size(); ++i) {
        const double gv = gt.v[i];
        if (gv > 0 && gv <= cap) {
            p.push_back(pred.v[i]);
            g.push_back(gv);
        }
    }
    if (p.empty()) throw validation_error("compute_metrics: no valid pixels");

    // Median scaling before the clamp; otherwise rescaling a prediction by a
    // constant would not cancel out exactly.
    if (median_scaling) {
        auto median = [](std::vector<double> xs) {
            const size_t mid = xs.size() / 2;
            std::nth_element(xs.begin(), xs.begin() + (long)mid, xs.end());
            double m = xs[mid];
            if (xs.size() % 2 == 0) {
                std::nth_element(xs.begin(), xs.begin() + (long)mid - 1, xs.end());
                m = 0.5 * (m + xs[mid - 1]);
            }
            return m;
        };
        const double s = median(g) / median(p);
        for (double& x : p) x *= s;
    }
    for (double& x : p) x = std::clamp(x, 1e-3, cap);

    MetricsRecord m;
    m.cap_m = cap;
    m.median_scaling = median_scaling;
    const double n = (double)p.size();
    const double t1 = 1.25, t2 = 1.25 * 1.25, t3 = 1.25 * 1.25 * 1.25;
    for (size_t i = 0; i < p.size(); ++i) {
        const double d = p[i] - g[i];
        m.abs_rel += std::fabs(d) / g[i];
        m.sq_rel += d * d / g[i];
        m.rmse += d * d;
        const double dl = std::log(p[i]) - std::log(g[i]);
        m.rmse_log += dl * dl;
        const double ratio = p[i] / g[i];
        m.d1 += ratio < t1 ? 1 : 0;
        m.d2 += ratio < t2 ? 1 : 0;
        m.d3 += ratio < t3 ? 1 : 0;
    }
    m.abs_rel /= n;
    m.sq_rel /= n;
    m.rmse = std::sqrt(m.rmse / n);
    m.rmse_log = std::sqrt(m.rmse_log / n);
    m.d1 /= n;
    m.d2 /= n;
    m.d3 /= n;
    return m;
}

void print_metrics_header(std::ostream& os) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%10s %10s %10s %10s %10s %10s %10s", "abs_rel", "sq_rel",
                  "rmse", "rmse_log", "d<1.25", "d<1.25^2", "d<1.25^3");
    os << buf << "\n";
}

void print_metrics_row(std::ostream& os, const MetricsRecord& m) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%10.4f %10.4f %10.4f %10.4f %10.4f %10.4f %10.4f", m.abs_rel,
                  m.sq_rel, m.rmse, m.rmse_log, m.d1, m.d2, m.d3);
    os << buf << "\n";
}

Tensor student_forward_depth(const net::StudentModel& model, const bank::ReferenceBank* b,
                             const Tensor& lr_image, bool use_stored_matched) {
    ag::NoGradGuard ng;
    ag::Var fs = model.encode(ag::constant(lr_image));
    const int hf = fs->val.dim(1), wf = fs->val.dim(2);
    ag::Var f_o = fs;
    if (b) {
        ag::Var fs_mc = ag::chw_to_mc(fs);
        ag::Var raw = ag::constant(b->features_raw);
        ag::Var matched = use_stored_matched ? ag::constant(b->features_matched)
                                             : model.match_dims(raw);
        ag::Var aff = fusion::compute_affinity(fs_mc, matched);
        fusion::MhaOutput mha = model.pdf.depth_hint_attention(fs_mc, raw);
        fusion::ConstructedReference cr =
            fusion::construct_reference(aff, raw, ag::constant(b->depths));
        f_o = model.pdf.fuse(fs_mc, mha.f_d, cr.f_c, cr.d_c, hf, wf);
    }
    ag::Var disp = model.decode(f_o);
    Tensor d2 = disp->val.reshaped({disp->val.dim(1), disp->val.dim(2)});
    return geo::disp_to_depth(d2, model.min_depth, model.max_depth);
}

InferenceEngine InferenceEngine::load(const std::filesystem::path& student_ckpt,
                                      const std::filesystem::path& bank_path, bool postprocess) {
    InferenceEngine e;
    e.model = net::StudentModel::from_checkpoint(net::Checkpoint::load(student_ckpt),
                                                 /*trainable=*/false);
    e.bank = bank::load_bank(bank_path);
    if (!e.bank.selected)
        throw validation_error("inference engine requires an AGFS-selected bank");
    if (e.bank.c_s() != e.model.c_s() || e.bank.c_t() != e.model.c_t)
        throw validation_error("bank/model feature widths disagree");
    e.postprocess = postprocess;
    return e;
}

Tensor InferenceEngine::infer(const Tensor& lr_image) const {
    if (lr_image.rank() != 3 || lr_image.dim(0) != 3)
        throw validation_error("infer: expected an RGB image [3,H,W]");
    return student_forward_depth(model, &bank, lr_image, /*use_stored_matched=*/true);
}

Tensor InferenceEngine::infer_postprocessed(const Tensor& lr_image) const {
    Tensor d1 = infer(lr_image);
    Tensor d2 = hflip_map(infer(hflip_image(lr_image)));
    Tensor out = d1;
    for (size_t i = 0; i < out.v.size(); ++i) out.v[i] = 0.5 * (out.v[i] + d2.v[i]);
    return out;
}

Tensor hflip_image(const Tensor& img) {
    const int C = img.dim(0), H = img.dim(1), W = img.dim(2);
    Tensor out({C, H, W});
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) out(c, y, x) = img(c, y, W - 1 - x);
    return out;
}

Tensor hflip_map(const Tensor& m) {
    const int H = m.dim(0), W = m.dim(1);
    Tensor out({H, W});
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) out(y, x) = m(y, W - 1 - x);
    return out;
}

MetricsRecord evaluate_split(const net::StudentModel& model, const bank::ReferenceBank* b,
                             const data::Dataset& split, const EvalOptions& opt) {
    if (split.size() == 0) throw validation_error("evaluate_split: empty split");
    MetricsRecord acc;
    acc.cap_m = opt.cap;
    acc.median_scaling = opt.median_scaling;
    int counted = 0;
    for (size_t i = 0; i < split.size(); ++i) {
        data::ImageTriplet t = split.get(i);
        if (!t.gt_depth) throw validation_error("evaluate_split: sample lacks gt depth: " + t.id);
        Tensor pred = student_forward_depth(model, b, t.lr_target, opt.use_stored_matched);
        if (opt.postprocess) {
            Tensor flipped = hflip_map(
                student_forward_depth(model, b, hflip_image(t.lr_target), opt.use_stored_matched));
            for (size_t j = 0; j < pred.v.size(); ++j)
                pred.v[j] = 0.5 * (pred.v[j] + flipped.v[j]);
        }
        const Tensor& gt = *t.gt_depth;
        Tensor up({1, gt.dim(0), gt.dim(1)});
        kern::resize_bilinear(up.data(), pred.data(), 1, pred.dim(0), pred.dim(1), gt.dim(0),
                              gt.dim(1));
        MetricsRecord m =
            compute_metrics(up.reshaped({gt.dim(0), gt.dim(1)}), gt, opt.cap, opt.median_scaling);
        acc.abs_rel += m.abs_rel;
        acc.sq_rel += m.sq_rel;
        acc.rmse += m.rmse;
        acc.rmse_log += m.rmse_log;
        acc.d1 += m.d1;
        acc.d2 += m.d2;
        acc.d3 += m.d3;
        ++counted;
    }
    acc.abs_rel /= counted;
    acc.sq_rel /= counted;
    acc.rmse /= counted;
    acc.rmse_log /= counted;
    acc.d1 /= counted;
    acc.d2 /= counted;
    acc.d3 /= counted;
    return acc;
}

std::vector<AblationRow> run_ablation(const train::TrainConfig& cfg) {
    namespace fs = std::filesystem;
    const fs::path out(cfg.output_dir);
    data::Dataset test = data::Dataset::load(cfg.data_root, "test");

    struct VariantSpec {
        const char* name;
        const char* ckpt;
        const char* bank;  // nullptr -> no bank
        bool stored_matched;
    };
    const VariantSpec variants[] = {
        {"baseline", "student_baseline.ckpt", nullptr, false},
        {"+pdf", "student_pdf.ckpt", "bank.rprb", false},
        {"+agfs", "student_pdf_agfs.ckpt", "bank_pdf_selected.rprb", true},
        {"+rgl", "student_rgl.ckpt", nullptr, false},
        {"full", "student_full_agfs.ckpt", "bank_full_selected.rprb", true},
    };

    std::vector<AblationRow> rows;
    for (const auto& v : variants) {
        AblationRow row;
        row.name = v.name;
        const fs::path ckpt = out / v.ckpt;
        if (fs::exists(ckpt) && (!v.bank || fs::exists(out / v.bank))) {
            net::StudentModel m =
                net::StudentModel::from_checkpoint(net::Checkpoint::load(ckpt), false);
            bank::ReferenceBank b;
            const bank::ReferenceBank* bp = nullptr;
            if (v.bank) {
                b = bank::load_bank(out / v.bank);
                bp = &b;
            }
            EvalOptions opt;
            opt.use_stored_matched = v.stored_matched;
            row.metrics = evaluate_split(m, bp, test, opt);
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

std::string format_ablation(const std::vector<AblationRow>& rows) {
    std::ostringstream os;
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%-10s %10s %10s %10s", "component", "abs_rel", "rmse",
                  "d<1.25");
    os << buf << "\n";
    for (const auto& r : rows) {
        if (r.metrics) {
            std::snprintf(buf, sizeof(buf), "%-10s %10.4f %10.4f %10.4f", r.name.c_str(),
                          r.metrics->abs_rel, r.metrics->rmse, r.metrics->d1);
        } else {
            std::snprintf(buf, sizeof(buf), "%-10s %10s %10s %10s", r.name.c_str(), "absent",
                          "-", "-");
        }
        os << buf << "\n";
    }
    return os.str();
}

}  // namespace rpr::eval
