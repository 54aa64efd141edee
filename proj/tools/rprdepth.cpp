// rprdepth: single entry point for data generation, the training stages,
// feature selection, inference and evaluation.

#include <omp.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "rpr/common.hpp"
#include "rpr/data.hpp"
#include "rpr/eval.hpp"
#include "rpr/image_io.hpp"
#include "rpr/kernels.hpp"
#include "rpr/networks.hpp"
#include "rpr/refbank.hpp"
#include "rpr/train.hpp"

namespace fs = std::filesystem;
using namespace rpr;

namespace {

std::pair<int, int> parse_wxh(const std::string& s) {
    auto x = s.find('x');
    if (x == std::string::npos) throw config_error("expected WxH, got " + s);
    return {std::stoi(s.substr(0, x)), std::stoi(s.substr(x + 1))};
}

int split_count(int n, double fraction, int explicit_count) {
    if (explicit_count >= 0) return explicit_count;
    return (int)std::llround(fraction * n);
}

void cmd_gen_data(uint64_t seed, const std::string& out, int n, const std::string& lr,
                  int rr_scale, double ref_fraction, double val_fraction, double test_fraction,
                  int n_ref, int n_val, int n_test) {
    auto lr_size = parse_wxh(lr);
    auto triplets = data::generate_synthetic_scene(seed, n, lr_size, rr_scale);
    const int nref = split_count(n, ref_fraction, n_ref);
    const int nval = split_count(n, val_fraction, n_val);
    const int ntest = split_count(n, test_fraction, n_test);
    if (nref + nval + ntest >= n)
        throw config_error("gen-data: splits leave no training samples");
    // Deterministic assignment: train first, then ref, val, test.
    const int ntrain = n - nref - nval - ntest;
    for (int i = 0; i < n; ++i) {
        const char* split = i < ntrain                 ? "train"
                            : i < ntrain + nref        ? "ref"
                            : i < ntrain + nref + nval ? "val"
                                                       : "test";
        data::write_triplet(out, split, triplets[(size_t)i]);
    }
    std::printf("wrote %d triplets to %s (train %d, ref %d, val %d, test %d)\n", n, out.c_str(),
                ntrain, nref, nval, ntest);
}

void cmd_train_teacher(const std::string& config) {
    auto cfg = train::TrainConfig::load(config);
    auto ds = data::Dataset::load(cfg.data_root, "train");
    train::EpochStats stats;
    auto teacher = train::train_teacher(cfg, ds, &stats);
    fs::create_directories(cfg.output_dir);
    const fs::path out = fs::path(cfg.output_dir) / "teacher.ckpt";
    teacher.to_checkpoint().save(out);
    for (size_t e = 0; e < stats.epoch_mean_loss.size(); ++e)
        std::printf("teacher epoch %zu  loss %.6f\n", e, stats.epoch_mean_loss[e]);
    std::printf("saved %s\n", out.string().c_str());
}

void cmd_pseudo_labels(const std::string& teacher_path, const std::string& data_root) {
    auto teacher = net::TeacherModel::from_checkpoint(net::Checkpoint::load(teacher_path), false);
    auto ds = data::Dataset::load(data_root, "train");
    auto store = data::build_pseudo_labels(teacher, ds);
    store.save(data_root);
    std::printf("wrote %zu pseudo labels under %s/pseudo\n", store.size(), data_root.c_str());
}

void cmd_build_bank(const std::string& teacher_path, const std::string& data_root,
                    double fraction, uint64_t seed, const std::string& out, int c_s) {
    auto teacher = net::TeacherModel::from_checkpoint(net::Checkpoint::load(teacher_path), false);
    auto ref = data::Dataset::load(data_root, "ref");
    auto b = bank::sample_reference_bank(teacher, ref, fraction, seed, c_s);
    bank::save_bank(b, out);
    std::printf("bank: R=%d C_t=%d -> %s\n", b.rows(), b.c_t(), out.c_str());
}

void cmd_train_student(const std::string& config, const std::string& bank_path) {
    auto cfg = train::TrainConfig::load(config);
    auto ds = data::Dataset::load(cfg.data_root, "train");
    data::PseudoLabelStore pseudo;
    const data::PseudoLabelStore* pseudo_ptr = nullptr;
    if (cfg.use_bank || cfg.use_rgl) {
        pseudo = data::PseudoLabelStore::load(cfg.data_root, ds.ids());
        pseudo_ptr = &pseudo;
    }
    bank::ReferenceBank b;
    const bank::ReferenceBank* bank_ptr = nullptr;
    if (cfg.use_bank) {
        b = bank::load_bank(bank_path);
        bank_ptr = &b;
    }
    train::EpochStats stats;
    auto student = train::train_student(cfg, ds, pseudo_ptr, bank_ptr, &stats);
    fs::create_directories(cfg.output_dir);
    const fs::path out = fs::path(cfg.output_dir) / "student.ckpt";
    student.to_checkpoint().save(out);
    for (size_t e = 0; e < stats.epoch_mean_loss.size(); ++e)
        std::printf("student epoch %zu  loss %.6f\n", e, stats.epoch_mean_loss[e]);
    std::printf("saved %s\n", out.string().c_str());
}

void cmd_select_features(const std::string& student_path, const std::string& bank_path,
                         const std::string& val_root, int k, const std::string& out) {
    auto student = net::StudentModel::from_checkpoint(net::Checkpoint::load(student_path), false);
    if (student.step <= 0)
        throw validation_error("select-features: student checkpoint is untrained");
    auto b = bank::load_bank(bank_path);
    auto val = data::Dataset::load(val_root, "val");
    auto w = bank::average_over_validation(student, b, val);
    if (k <= 0) k = (int)std::ceil(0.01 * b.rows());
    auto idx = bank::select_top_k(w, k);
    auto compressed = bank::compress_bank(b, idx);
    bank::refresh_matched(compressed, student);
    bank::save_bank(compressed, out);
    // Keep the full bank's matched snapshot fresh too, so size and behaviour
    // comparisons against it see the same C_s width.
    bank::refresh_matched(b, student);
    bank::save_bank(b, bank_path);
    std::printf("selected %d of %d bank rows -> %s\n", k, b.rows(), out.c_str());
}

void cmd_finetune(const std::string& student_path, const std::string& bank_path,
                  const std::string& config) {
    auto cfg = train::TrainConfig::load(config);
    auto student = net::StudentModel::from_checkpoint(net::Checkpoint::load(student_path), true);
    auto b = bank::load_bank(bank_path);
    auto ds = data::Dataset::load(cfg.data_root, "train");
    auto pseudo = data::PseudoLabelStore::load(cfg.data_root, ds.ids());
    train::EpochStats stats;
    train::finetune_with_selected_bank(student, b, cfg, ds, &pseudo, &stats);
    fs::create_directories(cfg.output_dir);
    const fs::path out = fs::path(cfg.output_dir) / "student_finetuned.ckpt";
    student.to_checkpoint().save(out);
    // Conv_m kept training above; refresh the deployed snapshot.
    bank::refresh_matched(b, student);
    bank::save_bank(b, bank_path);
    for (size_t e = 0; e < stats.epoch_mean_loss.size(); ++e)
        std::printf("finetune epoch %zu  loss %.6f\n", e, stats.epoch_mean_loss[e]);
    std::printf("saved %s\n", out.string().c_str());
}

void cmd_infer(const std::string& engine_path, const std::string& bank_path, bool postprocess,
               const std::string& image_path, const std::string& out_path) {
    auto engine = eval::InferenceEngine::load(engine_path, bank_path, postprocess);
    Tensor img = io::read_png_rgb(image_path);
    Tensor depth = engine.run(img);
    io::write_depth_f32(out_path, depth);
    Tensor disp = depth;
    for (double& x : disp.v) x = 1.0 / x;
    io::write_png_colormap(out_path + ".png", disp);
    std::printf("wrote %s and %s.png\n", out_path.c_str(), out_path.c_str());
}

void cmd_eval(const std::string& engine_path, const std::string& bank_path,
              const std::string& data_root, double cap, bool no_median, bool postprocess) {
    auto b = bank::load_bank(bank_path);
    auto model = net::StudentModel::from_checkpoint(net::Checkpoint::load(engine_path), false);
    auto test = data::Dataset::load(data_root, "test");
    eval::EvalOptions opt;
    opt.cap = cap;
    opt.median_scaling = !no_median;
    opt.postprocess = postprocess;
    opt.use_stored_matched = b.selected;
    auto m = eval::evaluate_split(model, &b, test, opt);
    eval::print_metrics_header(std::cout);
    eval::print_metrics_row(std::cout, m);
}

int cmd_ablate(const std::string& config) {
    auto cfg = train::TrainConfig::load(config);
    auto rows = eval::run_ablation(cfg);
    const std::string table = eval::format_ablation(rows);
    std::cout << table;
    fs::create_directories(cfg.output_dir);
    const fs::path report = fs::path(cfg.output_dir) / "ablation_report.txt";
    std::ofstream(report) << table;
    for (const auto& r : rows)
        if (!r.metrics) return 1;
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"RPrDepth: rich-resource prior depth estimation"};
    app.require_subcommand(1);
    int threads = 0;
    bool serial = false;
    app.add_option("--threads", threads, "OpenMP thread count (0 = default)");
    app.add_flag("--serial", serial, "use the serial reference kernels");

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
    uint64_t seed = 0;
    std::string out_dir, lr = "64x32";
    int n = 260, rr_scale = 2;
    double ref_fraction = 0.1, val_fraction = 0.1, test_fraction = 0.1;
    int n_ref = -1, n_val = -1, n_test = -1;
    gen->add_option("--seed", seed);
    gen->add_option("--out", out_dir)->required();
    gen->add_option("--n", n);
    gen->add_option("--lr", lr, "LR size as WxH");
    gen->add_option("--rr-scale", rr_scale);
    gen->add_option("--ref-fraction", ref_fraction);
    gen->add_option("--val-fraction", val_fraction);
    gen->add_option("--test-fraction", test_fraction);
    gen->add_option("--n-ref", n_ref, "overrides --ref-fraction");
    gen->add_option("--n-val", n_val, "overrides --val-fraction");
    gen->add_option("--n-test", n_test, "overrides --test-fraction");

    auto* tt = app.add_subcommand("train-teacher", "train the rich-resource teacher");
    std::string config;
    tt->add_option("--config", config)->required();

    auto* pl = app.add_subcommand("pseudo-labels", "precompute teacher depth pseudo labels");
    std::string teacher_path, data_root;
    pl->add_option("--teacher", teacher_path)->required();
    pl->add_option("--data", data_root)->required();

    auto* bb = app.add_subcommand("build-bank", "sample the reference feature bank");
    std::string bb_teacher, bb_data, bb_out;
    double fraction = 0.5;
    uint64_t bb_seed = 0;
    int bb_cs = 64;
    bb->add_option("--teacher", bb_teacher)->required();
    bb->add_option("--data", bb_data)->required();
    bb->add_option("--fraction", fraction);
    bb->add_option("--seed", bb_seed);
    bb->add_option("--out", bb_out)->required();
    bb->add_option("--cs", bb_cs, "matched feature width the bank will serve");

    auto* ts = app.add_subcommand("train-student", "train the LR single-image student");
    std::string ts_config, ts_bank;
    ts->add_option("--config", ts_config)->required();
    ts->add_option("--bank", ts_bank)->required();

    auto* sf = app.add_subcommand("select-features", "attention-guided feature selection");
    std::string sf_student, sf_bank, sf_val, sf_out;
    int sf_k = 0;
    sf->add_option("--student", sf_student)->required();
    sf->add_option("--bank", sf_bank)->required();
    sf->add_option("--val", sf_val)->required();
    sf->add_option("--k", sf_k, "0 = ceil(0.01 R)");
    sf->add_option("--out", sf_out)->required();

    auto* ft = app.add_subcommand("finetune", "fine-tune on the selected bank");
    std::string ft_student, ft_bank, ft_config;
    ft->add_option("--student", ft_student)->required();
    ft->add_option("--bank", ft_bank)->required();
    ft->add_option("--config", ft_config)->required();

    auto* inf = app.add_subcommand("infer", "depth from one LR image");
    std::string inf_engine, inf_bank, inf_image, inf_out;
    bool inf_post = false;
    inf->add_option("--engine", inf_engine)->required();
    inf->add_option("--bank", inf_bank)->required();
    inf->add_flag("--postprocess", inf_post);
    inf->add_option("--image", inf_image)->required();
    inf->add_option("--out", inf_out)->required();

    auto* ev = app.add_subcommand("eval", "seven-metric evaluation on the test split");
    std::string ev_engine, ev_bank, ev_data;
    double cap = 80.0;
    bool no_median = false, ev_post = false;
    ev->add_option("--engine", ev_engine)->required();
    ev->add_option("--bank", ev_bank)->required();
    ev->add_option("--data", ev_data)->required();
    ev->add_option("--cap", cap);
    ev->add_flag("--no-median-scaling", no_median);
    ev->add_flag("--postprocess", ev_post);

    auto* ab = app.add_subcommand("ablate", "report per-component ablation metrics");
    std::string ab_config;
    ab->add_option("--config", ab_config)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (threads > 0) omp_set_num_threads(threads);
        if (serial) kern::set_parallel(false);
        if (*gen)
            cmd_gen_data(seed, out_dir, n, lr, rr_scale, ref_fraction, val_fraction, test_fraction,
                         n_ref, n_val, n_test);
        else if (*tt)
            cmd_train_teacher(config);
        else if (*pl)
            cmd_pseudo_labels(teacher_path, data_root);
        else if (*bb)
            cmd_build_bank(bb_teacher, bb_data, fraction, bb_seed, bb_out, bb_cs);
        else if (*ts)
            cmd_train_student(ts_config, ts_bank);
        else if (*sf)
            cmd_select_features(sf_student, sf_bank, sf_val, sf_k, sf_out);
        else if (*ft)
            cmd_finetune(ft_student, ft_bank, ft_config);
        else if (*inf)
            cmd_infer(inf_engine, inf_bank, inf_post, inf_image, inf_out);
        else if (*ev)
            cmd_eval(ev_engine, ev_bank, ev_data, cap, no_median, ev_post);
        else if (*ab)
            return cmd_ablate(ab_config);
    } catch (const config_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const validation_error& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return 1;
    } catch (const io_error& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return 2;
    } catch (const format_error& e) {
        std::cerr << "format error: " << e.what() << "\n";
        return 2;
    } catch (const numeric_error& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
