// Acceptance suite: runs every criterion at its stated tolerance and prints
// one pass/fail line each. Criterion 8 trains the full pipeline on the
// default synthetic configuration and criteria 9-10 reuse its artifacts.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "helpers.hpp"
#include "rpr/common.hpp"
#include "rpr/data.hpp"
#include "rpr/eval.hpp"
#include "rpr/fusion.hpp"
#include "rpr/geometry.hpp"
#include "rpr/losses.hpp"
#include "rpr/networks.hpp"
#include "rpr/refbank.hpp"
#include "rpr/train.hpp"

using namespace rpr;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void require(bool cond, const std::string& what) {
    if (!cond) throw std::runtime_error(what);
}

void run_criterion(int idx, const std::string& name, double budget_s,
                   const std::function<void(std::string&)>& fn) {
    std::string detail;
    const auto t0 = std::chrono::steady_clock::now();
    bool ok = true;
    std::string err;
    try {
        fn(detail);
    } catch (const std::exception& e) {
        ok = false;
        err = e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (ok && secs > budget_s) {
        ok = false;
        err = "exceeded time budget (" + std::to_string(secs) + "s > " +
              std::to_string(budget_s) + "s)";
    }
    if (!ok) ++g_failures;
    std::printf("[%s] criterion %2d: %s (%.2fs)%s%s%s%s\n", ok ? "PASS" : "FAIL", idx,
                name.c_str(), secs, detail.empty() ? "" : " -- ", detail.c_str(),
                err.empty() ? "" : " -- ", err.c_str());
    std::fflush(stdout);
}

Tensor random_stochastic(Rng& rng, int M, int R) {
    Tensor a({M, R});
    for (int m = 0; m < M; ++m) {
        double s = 0;
        for (int r = 0; r < R; ++r) {
            a(m, r) = rng.uniform(1e-4, 1.0);
            s += a(m, r);
        }
        for (int r = 0; r < R; ++r) a(m, r) /= s;
    }
    return a;
}

// --- criterion 8 artifacts shared with 9/10 --------------------------------

struct Pipeline {
    fs::path dir, data_root, out_dir;
    train::TrainConfig cfg;
    eval::MetricsRecord m_baseline, m_full, m_agfs;
    fs::path teacher_ckpt, full_ckpt, agfs_ckpt, bank_path, selected_path;
    int bank_rows = 0, selected_rows = 0;
};
std::optional<Pipeline> g_pipe;

// Development knobs (argv): a smaller corpus for quick dry runs. The defaults
// are the shipping configuration.
struct Sizes {
    int n_train = 200, n_ref = 20, n_val = 20, n_test = 20;
    int epochs_teacher = 10, epochs_student = 15, epochs_finetune = 3;
};
Sizes g_sizes;

void criterion8(std::string& detail) {
    Pipeline p;
    p.dir = fs::absolute("acceptance_workspace");
    fs::remove_all(p.dir);
    fs::create_directories(p.dir);
    p.data_root = p.dir / "data";
    p.out_dir = p.dir / "out";
    fs::create_directories(p.out_dir);

    const int total = g_sizes.n_train + g_sizes.n_ref + g_sizes.n_val + g_sizes.n_test;
    auto triplets = data::generate_synthetic_scene(0, total, {64, 32}, 2);
    int i = 0;
    for (int k = 0; k < g_sizes.n_train; ++k)
        data::write_triplet(p.data_root, "train", triplets[(size_t)i++]);
    for (int k = 0; k < g_sizes.n_ref; ++k)
        data::write_triplet(p.data_root, "ref", triplets[(size_t)i++]);
    for (int k = 0; k < g_sizes.n_val; ++k)
        data::write_triplet(p.data_root, "val", triplets[(size_t)i++]);
    for (int k = 0; k < g_sizes.n_test; ++k)
        data::write_triplet(p.data_root, "test", triplets[(size_t)i++]);

    train::TrainConfig cfg;  // defaults are the desk-scale configuration
    cfg.data_root = p.data_root.string();
    cfg.output_dir = p.out_dir.string();
    cfg.epochs_teacher = g_sizes.epochs_teacher;
    cfg.epochs_student = g_sizes.epochs_student;
    cfg.epochs_finetune = g_sizes.epochs_finetune;
    p.cfg = cfg;

    auto train_split = data::Dataset::load(p.data_root, "train");
    auto ref_split = data::Dataset::load(p.data_root, "ref");
    auto val_split = data::Dataset::load(p.data_root, "val");
    auto test_split = data::Dataset::load(p.data_root, "test");

    auto teacher = train::train_teacher(cfg, train_split, nullptr);
    p.teacher_ckpt = p.out_dir / "teacher.ckpt";
    teacher.to_checkpoint().save(p.teacher_ckpt);
    teacher.set_trainable(false);

    auto pseudo = data::build_pseudo_labels(teacher, train_split);
    pseudo.save(p.data_root);

    auto bank = bank::sample_reference_bank(teacher, ref_split, cfg.pixel_fraction, cfg.seed,
                                            cfg.student_channels.back());
    p.bank_rows = bank.rows();

    auto student_full = train::train_student(cfg, train_split, &pseudo, &bank, nullptr);
    p.full_ckpt = p.out_dir / "student_full.ckpt";
    student_full.to_checkpoint().save(p.full_ckpt);

    auto cfg_base = cfg;
    cfg_base.use_bank = false;
    cfg_base.use_rgl = false;
    auto student_baseline = train::train_student(cfg_base, train_split, &pseudo, nullptr, nullptr);
    student_baseline.to_checkpoint().save(p.out_dir / "student_baseline.ckpt");

    eval::EvalOptions opt;  // cap 80, median scaling
    p.m_full = eval::evaluate_split(student_full, &bank, test_split, opt);
    p.m_baseline = eval::evaluate_split(student_baseline, nullptr, test_split, opt);

    // AGFS at k = 1% of R, then fine-tune.
    auto weights = bank::average_over_validation(student_full, bank, val_split);
    const int k = (int)std::ceil(0.01 * bank.rows());
    auto selected = bank::compress_bank(bank, bank::select_top_k(weights, k));
    p.selected_rows = selected.rows();
    bank::refresh_matched(selected, student_full);

    auto student_agfs = student_full;  // fine-tune continues from the trained weights
    train::finetune_with_selected_bank(student_agfs, selected, cfg, train_split, &pseudo, nullptr);
    bank::refresh_matched(selected, student_agfs);
    p.agfs_ckpt = p.out_dir / "student_full_agfs.ckpt";
    student_agfs.to_checkpoint().save(p.agfs_ckpt);
    p.selected_path = p.out_dir / "bank_full_selected.rprb";
    bank::save_bank(selected, p.selected_path);
    bank::refresh_matched(bank, student_agfs);
    p.bank_path = p.out_dir / "bank.rprb";
    bank::save_bank(bank, p.bank_path);

    eval::EvalOptions opt_sel = opt;
    opt_sel.use_stored_matched = true;
    p.m_agfs = eval::evaluate_split(student_agfs, &selected, test_split, opt_sel);

    char buf[256];
    std::snprintf(buf, sizeof(buf), "abs_rel baseline %.4f, full %.4f, agfs(k=%d/%d) %.4f",
                  p.m_baseline.abs_rel, p.m_full.abs_rel, p.selected_rows, p.bank_rows,
                  p.m_agfs.abs_rel);
    detail = buf;

    require(p.m_full.abs_rel < p.m_baseline.abs_rel,
            "prior fusion did not beat the no-bank baseline");
    require(p.m_agfs.abs_rel <= 1.05 * p.m_full.abs_rel,
            "AGFS-compressed bank lost more than 5% relative Abs Rel");
    g_pipe = std::move(p);
}

void criterion9(std::string& detail) {
    require(g_pipe.has_value(), "pipeline artifacts unavailable (criterion 8 failed)");
    auto test_split = data::Dataset::load(g_pipe->data_root, "test");
    auto engine = eval::InferenceEngine::load(g_pipe->agfs_ckpt, g_pipe->selected_path, false);
    eval::EvalOptions opt;
    opt.use_stored_matched = true;
    auto plain = eval::evaluate_split(engine.model, &engine.bank, test_split, opt);
    auto post_opt = opt;
    post_opt.postprocess = true;
    auto post = eval::evaluate_split(engine.model, &engine.bank, test_split, post_opt);
    char buf[256];
    std::snprintf(buf, sizeof(buf), "abs_rel %.4f -> %.4f, rmse %.4f -> %.4f", plain.abs_rel,
                  post.abs_rel, plain.rmse, post.rmse);
    detail = buf;
    require(post.abs_rel <= plain.abs_rel + 0.002, "flip averaging degraded Abs Rel by > 0.002");
    require(post.rmse <= 1.01 * plain.rmse, "flip averaging degraded RMSE by > 1% relative");
}

void criterion10(std::string& detail) {
    require(g_pipe.has_value(), "pipeline artifacts unavailable (criterion 8 failed)");
    const auto full_bytes = (double)fs::file_size(g_pipe->bank_path);
    const auto sel_bytes = (double)fs::file_size(g_pipe->selected_path);
    const double ratio = sel_bytes / full_bytes;
    char buf[256];
    std::snprintf(buf, sizeof(buf), "bank %.0f B -> %.0f B (%.3f%%)", full_bytes, sel_bytes,
                  100.0 * ratio);
    detail = buf;
    require(g_pipe->selected_rows == (int)std::ceil(0.01 * g_pipe->bank_rows),
            "selected bank is not at k = 1% of R");
    require(ratio <= 0.015, "compressed bank file exceeds 1.5% of the full bank file");

    // Inference must not depend on the teacher checkpoint.
    auto engine = eval::InferenceEngine::load(g_pipe->agfs_ckpt, g_pipe->selected_path, false);
    auto test_split = data::Dataset::load(g_pipe->data_root, "test");
    Tensor img = test_split.get(0).lr_target;
    Tensor before = engine.infer(img);
    fs::remove(g_pipe->teacher_ckpt);
    auto engine2 = eval::InferenceEngine::load(g_pipe->agfs_ckpt, g_pipe->selected_path, false);
    Tensor after = engine2.infer(img);
    require(before.v == after.v, "inference changed after deleting the teacher checkpoint");
}

}  // namespace

int main(int argc, char** argv) {
    if (argc >= 5) {
        g_sizes.n_train = std::atoi(argv[1]);
        g_sizes.n_ref = std::atoi(argv[2]);
        g_sizes.n_val = std::atoi(argv[3]);
        g_sizes.n_test = std::atoi(argv[4]);
    }
    if (argc >= 8) {
        g_sizes.epochs_teacher = std::atoi(argv[5]);
        g_sizes.epochs_student = std::atoi(argv[6]);
        g_sizes.epochs_finetune = std::atoi(argv[7]);
    }

    run_criterion(1, "stochasticity of affinity and attention rows", 1.0, [](std::string&) {
        Rng rng(100);
        Rng mrng(101);
        auto mod = fusion::FusionModule::make(mrng, 8, 12, 2);
        ag::NoGradGuard ng;
        for (int trial = 0; trial < 1000; ++trial) {
            const int M = rng.uniform_int(1, 8), R = rng.uniform_int(1, 16);
            Tensor fs({M, 8}), fr({R, 8}), raw({R, 12});
            for (double& x : fs.v) x = rng.normal() * 3;
            for (double& x : fr.v) x = rng.normal() * 3;
            for (double& x : raw.v) x = rng.normal() * 3;
            auto aff = fusion::compute_affinity(ag::constant(fs), ag::constant(fr));
            for (int m = 0; m < M; ++m) {
                double s = 0;
                for (int r = 0; r < R; ++r) s += aff->val(m, r);
                require(std::fabs(s - 1.0) <= 1e-5, "affinity row does not sum to 1");
            }
            auto mha = mod.depth_hint_attention(ag::constant(fs), ag::constant(raw));
            for (const auto& h : mha.head_maps)
                for (int m = 0; m < M; ++m) {
                    double s = 0;
                    for (int r = 0; r < R; ++r) s += h(m, r);
                    require(std::fabs(s - 1.0) <= 1e-5, "attention head row does not sum to 1");
                }
        }
    });

    run_criterion(2, "convexity of constructed depths", 1.0, [](std::string&) {
        Rng rng(102);
        ag::NoGradGuard ng;
        for (int trial = 0; trial < 1000; ++trial) {
            const int M = rng.uniform_int(1, 8), R = rng.uniform_int(1, 12);
            Tensor a = random_stochastic(rng, M, R);
            Tensor raw({R, 4});
            Tensor depths({R});
            for (double& x : raw.v) x = rng.normal();
            for (double& x : depths.v) x = rng.uniform(0.3, 95.0);
            auto cr = fusion::construct_reference(ag::constant(a), ag::constant(raw),
                                                  ag::constant(depths));
            const double lo = depths.min(), hi = depths.max();
            const double slack = 1e-12 * (std::fabs(hi) + 1.0);
            for (int m = 0; m < M; ++m) {
                require(cr.d_c->val(m, 0) >= lo - slack, "D_c below min bank depth");
                require(cr.d_c->val(m, 0) <= hi + slack, "D_c above max bank depth");
            }
        }
    });

    run_criterion(3, "consistency-loss scale/shift invariance", 1.0, [](std::string&) {
        Rng rng(103);
        Tensor dp = testutil::rand_uniform(rng, {12, 16}, 1.0, 60.0);
        require(loss::consistency_loss(ag::constant(dp), dp)->val.v[0] == 0.0,
                "L_c(D_p, D_p) != 0");
        for (double c : {0.5, 2.0})
            for (double b : {0.0, 1.0}) {
                Tensor mod = dp;
                for (double& x : mod.v) x = c * x + b;
                const double lc = loss::consistency_loss(ag::constant(mod), dp)->val.v[0];
                require(lc < 1e-6, "L_c(c*D_p + b, D_p) >= 1e-6");
            }
        // exact signature invariance under positive scaling
        Tensor s1 = loss::gradient_signature(dp);
        for (double c : {0.5, 2.0}) {
            Tensor dc = dp;
            for (double& x : dc.v) x *= c;
            Tensor s2 = loss::gradient_signature(dc);
            require(s1.v == s2.v, "gradient signature changed under positive scaling");
        }
    });

    run_criterion(4, "finite-difference gradient suite", 120.0, [](std::string& detail) {
        Rng rng(104);
        double worst = 0;

        // warp w.r.t. depth, 100 random pixels, step 1e-3 m
        {
            const int H = 8, W = 8;
            geo::CameraIntrinsics K{(double)W, (double)W, W / 2.0, H / 2.0, W, H};
            Tensor src({3, H, W});
            for (int c = 0; c < 3; ++c)
                for (int y = 0; y < H; ++y)
                    for (int x = 0; x < W; ++x)
                        src(c, y, x) = 0.5 + 0.3 * std::sin(0.8 * x + 1.1 * y + c);
            auto depth = ag::leaf(testutil::rand_uniform(rng, {H, W}, 4.0, 9.0));
            Tensor p6({6});
            p6(0) = 0.01;
            p6(1) = -0.015;
            p6(3) = 0.04;
            p6(5) = 0.06;
            auto pose = ag::constant(p6);
            auto fwd = [&] {
                auto [img, mask] = geo::warp(src, depth, pose, K);
                return ag::mean_all(img);
            };
            std::vector<long long> idx;
            Rng pick(105);
            for (int i = 0; i < 100; ++i) idx.push_back(pick.uniform_int(0, H * W - 1));
            auto r = testutil::gradcheck(fwd, depth, 1e-3, idx);
            require(r.max_rel_err < 1e-3, "warp/depth gradient exceeds 1e-3");
            require(r.max_abs_grad > 0, "warp/depth gradient vanished");
            worst = std::max(worst, r.max_rel_err);
        }

        // affinity w.r.t. both feature sets
        {
            auto fs = ag::leaf(testutil::randn(rng, {4, 8}));
            auto fr = ag::leaf(testutil::randn(rng, {6, 8}));
            Tensor w = testutil::randn(rng, {4, 6});
            auto fwd = [&] {
                return ag::mean_all(ag::mul(fusion::compute_affinity(fs, fr), ag::constant(w)));
            };
            for (auto* leaf : {&fs, &fr}) {
                auto r = testutil::gradcheck(fwd, *leaf, 1e-6);
                require(r.max_rel_err < 1e-3, "affinity gradient exceeds 1e-3");
                worst = std::max(worst, r.max_rel_err);
            }
        }

        // MHA and fuse (composed), w.r.t. student features and bank rows
        {
            Rng mrng(106);
            auto mod = fusion::FusionModule::make(mrng, 8, 12, 2);
            auto fs = ag::leaf(testutil::randn(rng, {4, 8}));
            auto raw = ag::leaf(testutil::randn(rng, {6, 12}));
            Tensor depths = testutil::rand_uniform(rng, {6}, 1.0, 30.0);
            Tensor w = testutil::randn(rng, {8, 2, 2});
            auto fwd = [&] {
                auto aff = fusion::compute_affinity(fs, mod.wk(raw));
                auto mha = mod.depth_hint_attention(fs, raw);
                auto cr = fusion::construct_reference(aff, raw, ag::constant(depths));
                auto fo = mod.fuse(fs, mha.f_d, cr.f_c, cr.d_c, 2, 2);
                return ag::mean_all(ag::mul(fo, ag::constant(w)));
            };
            for (auto* leaf : {&fs, &raw}) {
                auto r = testutil::gradcheck(fwd, *leaf, 1e-6);
                require(r.max_rel_err < 1e-3, "MHA/fuse gradient exceeds 1e-3");
                require(r.max_abs_grad > 0, "MHA/fuse gradient vanished");
                worst = std::max(worst, r.max_rel_err);
            }
        }

        // loss terms on <= 8x8 instances
        {
            auto pred = ag::leaf(testutil::rand_uniform(rng, {3, 8, 8}, 0.2, 0.8));
            Tensor target = testutil::rand_uniform(rng, {3, 8, 8}, 0.2, 0.8);
            auto fwd = [&] {
                return ag::mean_all(loss::photometric_error(pred, ag::constant(target)));
            };
            auto r = testutil::gradcheck(fwd, pred, 1e-6);
            require(r.max_rel_err < 1e-3, "photometric gradient exceeds 1e-3");
            worst = std::max(worst, r.max_rel_err);
        }
        {
            auto dpred = ag::leaf(testutil::rand_uniform(rng, {8, 8}, 2.0, 30.0));
            Tensor dp = testutil::rand_uniform(rng, {8, 8}, 2.0, 30.0);
            auto fwd = [&] { return loss::consistency_loss(dpred, dp); };
            double kept = 0;
            auto r = testutil::gradcheck_smooth(fwd, dpred, 1e-5, {}, &kept);
            require(r.max_rel_err < 1e-3, "consistency gradient exceeds 1e-3");
            require(kept > 0.7, "too many non-smooth points in consistency check");
            worst = std::max(worst, r.max_rel_err);
        }
        {
            auto dc = ag::leaf(testutil::rand_uniform(rng, {4, 1}, 2.0, 10.0));
            Tensor dp = testutil::rand_uniform(rng, {8, 8}, 2.0, 10.0);
            auto fwd = [&] { return loss::auxiliary_loss(dc, 2, 2, dp); };
            auto r = testutil::gradcheck(fwd, dc, 1e-6);
            require(r.max_rel_err < 1e-3, "auxiliary gradient exceeds 1e-3");
            worst = std::max(worst, r.max_rel_err);
        }
        {
            // reconstruction term on a synthetic instance; kink points filtered
            auto ts = data::generate_synthetic_scene(104, 1, {32, 32}, 2);
            const auto& t = ts[0];
            Tensor disp0 = testutil::rand_uniform(rng, {16, 32}, 0.1, 0.5);
            auto dleaf = ag::leaf(disp0);
            auto p6_of = [](const geo::Pose& p) {
                auto aa = p.log_rotation();
                Tensor v({6});
                for (int i = 0; i < 3; ++i) {
                    v(i) = aa[(size_t)i];
                    v(3 + i) = p.translation(i);
                }
                return ag::constant(v);
            };
            std::array<ag::Var, 2> poses = {p6_of((*t.gt_poses)[0]), p6_of((*t.gt_poses)[1])};
            loss::ReconstructionOptions opt;
            auto fwd = [&] {
                return loss::reconstruction_loss(dleaf, {&t.frames[0], &t.frames[2]}, t.rr_target,
                                                 poses, t.intrinsics_rr, opt)
                    .total;
            };
            std::vector<long long> idx;
            Rng pick(107);
            for (int i = 0; i < 50; ++i) idx.push_back(pick.uniform_int(0, 16 * 32 - 1));
            double kept = 0;
            auto r = testutil::gradcheck_smooth(fwd, dleaf, 1e-6, idx, &kept);
            require(r.max_rel_err < 1e-3, "reconstruction gradient exceeds 1e-3");
            require(kept > 0.6, "too many non-smooth points in reconstruction check");
            worst = std::max(worst, r.max_rel_err);
        }
        char buf[64];
        std::snprintf(buf, sizeof(buf), "worst rel err %.2e", worst);
        detail = buf;
    });

    run_criterion(5, "AGFS selection and weight aggregation oracles", 10.0, [](std::string&) {
        Rng rng(108);
        for (int trial = 0; trial < 1000; ++trial) {
            const int R = rng.uniform_int(1, 50);
            bank::WeightVector w;
            w.values = Tensor({R});
            w.n_samples = 1;
            for (int r = 0; r < R; ++r) w.values(r) = rng.uniform_int(0, 7) / 7.0;  // force ties
            const int k = rng.uniform_int(1, R);
            auto got = bank::select_top_k(w, k);
            std::vector<int> all((size_t)R);
            for (int r = 0; r < R; ++r) all[(size_t)r] = r;
            std::sort(all.begin(), all.end(), [&](int a, int b) {
                if (w.values(a) != w.values(b)) return w.values(a) > w.values(b);
                return a < b;
            });
            all.resize((size_t)k);
            require(got == all, "select_top_k disagrees with the brute-force sort");
        }
        // accumulate_weights against an explicit loop
        for (int trial = 0; trial < 50; ++trial) {
            const int M = rng.uniform_int(1, 9), R = rng.uniform_int(1, 11);
            Tensor aff = random_stochastic(rng, M, R);
            std::vector<Tensor> heads;
            const int H = rng.uniform_int(1, 3);
            for (int h = 0; h < H; ++h) heads.push_back(random_stochastic(rng, M, R));
            Tensor got = bank::accumulate_weights(aff, heads);
            for (int r = 0; r < R; ++r) {
                double s = 0;
                for (int m = 0; m < M; ++m) {
                    double mh = 0;
                    for (const auto& h : heads) mh += h(m, r);
                    s += aff(m, r) + mh / H;
                }
                s /= M;
                require(std::fabs(got(r) - s) < 1e-6, "accumulate_weights disagrees with loop");
            }
        }
    });

    run_criterion(6, "metric protocol oracle", 1.0, [](std::string&) {
        // pinned hand case
        Tensor pred({1, 3}), gt({1, 3});
        pred(0, 0) = 1;
        pred(0, 1) = 2;
        pred(0, 2) = 4;
        gt.fill(2.0);
        auto m = eval::compute_metrics(pred, gt, 80.0, false);
        require(std::fabs(m.abs_rel - 0.5) < 1e-12, "hand case abs_rel != 0.5");
        require(std::fabs(m.d1 - 2.0 / 3.0) < 1e-12, "hand case d1 != 2/3");

        Rng rng(109);
        for (int trial = 0; trial < 100; ++trial) {
            const int H = rng.uniform_int(2, 6), W = rng.uniform_int(2, 6);
            Tensor p = testutil::rand_uniform(rng, {H, W}, 0.2, 90.0);
            Tensor g = testutil::rand_uniform(rng, {H, W}, 0.2, 90.0);
            const bool med = rng.uniform() < 0.5;
            auto a = eval::compute_metrics(p, g, 80.0, med);
            // independent straight-line reimplementation
            std::vector<double> pv, gv;
            for (size_t i = 0; i < g.v.size(); ++i)
                if (g.v[i] > 0 && g.v[i] <= 80.0) {
                    pv.push_back(p.v[i]);
                    gv.push_back(g.v[i]);
                }
            if (med) {
                auto median = [](std::vector<double> xs) {
                    std::sort(xs.begin(), xs.end());
                    const size_t n = xs.size();
                    return n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
                };
                const double s = median(gv) / median(pv);
                for (double& x : pv) x *= s;
            }
            for (double& x : pv) x = std::clamp(x, 1e-3, 80.0);
            double abs_rel = 0, sq_rel = 0, rmse = 0, rmse_log = 0, d1 = 0, d2 = 0, d3 = 0;
            for (size_t i = 0; i < pv.size(); ++i) {
                abs_rel += std::fabs(pv[i] - gv[i]) / gv[i];
                sq_rel += (pv[i] - gv[i]) * (pv[i] - gv[i]) / gv[i];
                rmse += (pv[i] - gv[i]) * (pv[i] - gv[i]);
                rmse_log += std::pow(std::log(pv[i]) - std::log(gv[i]), 2);
                const double ratio = pv[i] / gv[i];
                d1 += ratio < 1.25;
                d2 += ratio < 1.25 * 1.25;
                d3 += ratio < 1.25 * 1.25 * 1.25;
            }
            const double n = (double)pv.size();
            require(std::fabs(a.abs_rel - abs_rel / n) < 1e-9, "abs_rel oracle mismatch");
            require(std::fabs(a.sq_rel - sq_rel / n) < 1e-9, "sq_rel oracle mismatch");
            require(std::fabs(a.rmse - std::sqrt(rmse / n)) < 1e-9, "rmse oracle mismatch");
            require(std::fabs(a.rmse_log - std::sqrt(rmse_log / n)) < 1e-9,
                    "rmse_log oracle mismatch");
            require(std::fabs(a.d1 - d1 / n) < 1e-9, "d1 oracle mismatch");
            require(std::fabs(a.d2 - d2 / n) < 1e-9, "d2 oracle mismatch");
            require(std::fabs(a.d3 - d3 / n) < 1e-9, "d3 oracle mismatch");
            require(a.d1 <= a.d2 && a.d2 <= a.d3, "delta thresholds not monotone");
        }
    });

    run_criterion(7, "geometry round-trips", 10.0, [](std::string& detail) {
        Rng rng(110);
        // identity-pose warp reproduces the source
        Tensor src = testutil::rand_uniform(rng, {3, 24, 32}, 0.0, 1.0);
        Tensor depth = testutil::rand_uniform(rng, {24, 32}, 2.0, 60.0);
        geo::CameraIntrinsics K{32, 32, 16, 12, 32, 24};
        auto [out, mask] = geo::warp(src, depth, geo::Pose::identity(), K);
        const double p_id = geo::psnr(out, src, &mask);
        require(p_id > 40.0, "identity warp PSNR <= 40 dB");

        // synthetic gt-depth / gt-pose warp
        auto ts = data::generate_synthetic_scene(3, 4, {64, 32}, 2);
        double worst = 1e9;
        for (const auto& t : ts) {
            auto [w, m] = geo::warp(t.frames[2], *t.gt_depth, (*t.gt_poses)[1], t.intrinsics_rr);
            worst = std::min(worst, geo::psnr(w, t.rr_target, &m));
        }
        char buf[96];
        std::snprintf(buf, sizeof(buf), "identity %.1f dB, synthetic worst %.1f dB", p_id, worst);
        detail = buf;
        require(worst > 30.0, "synthetic gt warp PSNR <= 30 dB");
    });

    run_criterion(8, "end-to-end directional ablation (full pipeline)", 1800.0, criterion8);
    run_criterion(9, "flip-averaging post-processing", 60.0, criterion9);
    run_criterion(10, "bank compression contract", 10.0, criterion10);

    if (g_failures == 0) {
        std::printf("acceptance: all criteria passed\n");
        return 0;
    }
    std::printf("acceptance: %d criterion(s) failed\n", g_failures);
    return 1;
}
