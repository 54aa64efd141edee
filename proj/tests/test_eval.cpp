#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "helpers.hpp"
#include "rpr/common.hpp"
#include "rpr/data.hpp"
#include "rpr/eval.hpp"
#include "rpr/networks.hpp"
#include "rpr/refbank.hpp"

using namespace rpr;
namespace fs = std::filesystem;
using testutil::randn;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) {
        path = fs::temp_directory_path() / ("rpr_eval_" + name);
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

// Independent straight-line reimplementation of the metric protocol.
eval::MetricsRecord metrics_oracle(const Tensor& pred, const Tensor& gt, double cap,
                                   bool median_scaling) {
    std::vector<double> p, g;
    for (size_t i = 0; i < gt.v.size(); ++i)
        if (gt.v[i] > 0 && gt.v[i] <= cap) {
            p.push_back(pred.v[i]);
            g.push_back(gt.v[i]);
        }
    if (median_scaling) {
        auto med = [](std::vector<double> v) {
            std::sort(v.begin(), v.end());
            const size_t n = v.size();
            return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
        };
        const double s = med(g) / med(p);
        for (double& x : p) x *= s;
    }
    for (double& x : p) x = x < 1e-3 ? 1e-3 : (x > cap ? cap : x);
    eval::MetricsRecord m;
    const double n = (double)p.size();
    for (size_t i = 0; i < p.size(); ++i) {
        m.abs_rel += std::fabs(p[i] - g[i]) / g[i];
        m.sq_rel += (p[i] - g[i]) * (p[i] - g[i]) / g[i];
        m.rmse += (p[i] - g[i]) * (p[i] - g[i]);
        m.rmse_log += std::pow(std::log(p[i]) - std::log(g[i]), 2);
        const double r = p[i] / g[i];
        m.d1 += r < 1.25;
        m.d2 += r < 1.5625;
        m.d3 += r < 1.953125;
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

struct EngineFixture {
    TempDir tmp{"engine"};
    net::StudentModel student;
    bank::ReferenceBank selected;
    fs::path student_path, bank_path, teacher_path;

    EngineFixture() {
        Rng rng(20);
        auto teacher = net::TeacherModel::make(rng, {8, 12, 16, 24}, 0.1, 100.0);
        student = net::StudentModel::make(rng, {4, 8, 12, 16}, 24, 2, 0.1, 100.0);
        student.step = 5;

        auto ts = data::generate_synthetic_scene(21, 2, {32, 32}, 2);
        for (const auto& t : ts) data::write_triplet(tmp.path / "data", "ref", t);
        auto ref = data::Dataset::load(tmp.path / "data", "ref");
        auto full = bank::sample_reference_bank(teacher, ref, 0.2, 3, 16);
        std::vector<int> idx;
        for (int i = 0; i < 24; ++i) idx.push_back(i * 2);
        selected = bank::compress_bank(full, idx);
        bank::refresh_matched(selected, student);

        student_path = tmp.path / "student.ckpt";
        bank_path = tmp.path / "bank_selected.rprb";
        teacher_path = tmp.path / "teacher.ckpt";
        student.to_checkpoint().save(student_path);
        bank::save_bank(selected, bank_path);
        teacher.to_checkpoint().save(teacher_path);
    }
};

}  // namespace

TEST_CASE("compute_metrics: pinned hand case and basic contracts") {
    Tensor pred({1, 3}), gt({1, 3});
    pred(0, 0) = 1;
    pred(0, 1) = 2;
    pred(0, 2) = 4;
    gt(0, 0) = 2;
    gt(0, 1) = 2;
    gt(0, 2) = 2;
    auto m = eval::compute_metrics(pred, gt, 80.0, /*median_scaling=*/false);
    CHECK(m.abs_rel == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(m.rmse == doctest::Approx(std::sqrt(5.0 / 3.0)).epsilon(1e-9));
    CHECK(m.d1 == doctest::Approx(2.0 / 3.0).epsilon(1e-12));

    // pred == gt -> zero errors, perfect accuracy
    auto mz = eval::compute_metrics(gt, gt, 80.0, false);
    CHECK(mz.abs_rel == 0.0);
    CHECK(mz.rmse == 0.0);
    CHECK(mz.d1 == 1.0);
    CHECK(mz.d2 == 1.0);
    CHECK(mz.d3 == 1.0);

    // median scaling cancels a global factor
    Tensor pred2 = gt;
    for (double& x : pred2.v) x *= 2.0;
    auto ms = eval::compute_metrics(pred2, gt, 80.0, true);
    CHECK(ms.abs_rel == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(ms.d1 == 1.0);

    Tensor invalid = Tensor::full({1, 3}, -1.0);
    CHECK_THROWS_AS(eval::compute_metrics(pred, invalid, 80.0, false), validation_error);
    CHECK_THROWS_AS(eval::compute_metrics(pred, Tensor({2, 2}), 80.0, false), validation_error);
}

TEST_CASE("compute_metrics matches the independent oracle on 100 random pairs") {
    Rng rng(22);
    for (int trial = 0; trial < 100; ++trial) {
        const int H = rng.uniform_int(2, 6), W = rng.uniform_int(2, 6);
        Tensor pred = testutil::rand_uniform(rng, {H, W}, 0.2, 90.0);
        Tensor gt = testutil::rand_uniform(rng, {H, W}, 0.2, 90.0);
        // sprinkle invalid gt pixels
        for (double& x : gt.v)
            if (rng.uniform() < 0.15) x = 0.0;
        bool any = false;
        for (double x : gt.v) any |= (x > 0 && x <= 80.0);
        if (!any) continue;
        const bool med = rng.uniform() < 0.5;
        auto a = eval::compute_metrics(pred, gt, 80.0, med);
        auto b = metrics_oracle(pred, gt, 80.0, med);
        CHECK(std::fabs(a.abs_rel - b.abs_rel) < 1e-9);
        CHECK(std::fabs(a.sq_rel - b.sq_rel) < 1e-9);
        CHECK(std::fabs(a.rmse - b.rmse) < 1e-9);
        CHECK(std::fabs(a.rmse_log - b.rmse_log) < 1e-9);
        CHECK(std::fabs(a.d1 - b.d1) < 1e-9);
        CHECK(std::fabs(a.d2 - b.d2) < 1e-9);
        CHECK(std::fabs(a.d3 - b.d3) < 1e-9);
        // threshold monotonicity
        CHECK(a.d1 <= a.d2);
        CHECK(a.d2 <= a.d3);
    }
}

TEST_CASE("median scaling invariance: metrics(c*pred) == metrics(pred)") {
    Rng rng(23);
    Tensor pred = testutil::rand_uniform(rng, {6, 6}, 1.0, 60.0);
    Tensor gt = testutil::rand_uniform(rng, {6, 6}, 1.0, 60.0);
    auto base = eval::compute_metrics(pred, gt, 80.0, true);
    for (double c : {0.3, 1.7, 4.0}) {
        Tensor scaled = pred;
        for (double& x : scaled.v) x *= c;
        auto m = eval::compute_metrics(scaled, gt, 80.0, true);
        CHECK(std::fabs(m.abs_rel - base.abs_rel) < 1e-9);
        CHECK(std::fabs(m.rmse - base.rmse) < 1e-9);
        CHECK(std::fabs(m.d1 - base.d1) < 1e-9);
    }
}

TEST_CASE("inference engine: deterministic, teacher-free, resolution preserving") {
    EngineFixture fx;
    auto engine = eval::InferenceEngine::load(fx.student_path, fx.bank_path, false);
    Rng rng(24);
    Tensor img = testutil::rand_uniform(rng, {3, 32, 32}, 0.0, 1.0);

    const long long calls_before = net::teacher_forward_counter().load();
    Tensor d1 = engine.infer(img);
    Tensor d2 = engine.infer(img);
    CHECK(net::teacher_forward_counter().load() == calls_before);  // teacher untouched
    CHECK(d1.v == d2.v);
    CHECK(d1.dim(0) == 32);
    CHECK(d1.dim(1) == 32);
    for (double x : d1.v) {
        CHECK(x > 0.1);
        CHECK(x < 100.0);
    }

    // deleting the teacher checkpoint does not affect inference
    Tensor before = engine.infer(img);
    fs::remove(fx.teacher_path);
    auto engine2 = eval::InferenceEngine::load(fx.student_path, fx.bank_path, false);
    Tensor after = engine2.infer(img);
    CHECK(before.v == after.v);
}

TEST_CASE("inference engine rejects an unselected bank") {
    EngineFixture fx;
    bank::ReferenceBank full = fx.selected;
    full.selected = false;
    const fs::path p = fx.tmp.path / "full.rprb";
    bank::save_bank(full, p);
    CHECK_THROWS_AS(eval::InferenceEngine::load(fx.student_path, p, false), validation_error);
}

TEST_CASE("flip-averaged inference: symmetric input and elementwise mean") {
    EngineFixture fx;
    auto engine = eval::InferenceEngine::load(fx.student_path, fx.bank_path, false);

    // For a left-right symmetric input the flipped branch sees the same image,
    // so the result is exactly the symmetrization of the plain prediction.
    Rng rng(25);
    Tensor img = testutil::rand_uniform(rng, {3, 32, 32}, 0.0, 1.0);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 32; ++y)
            for (int x = 0; x < 16; ++x) img(c, y, 31 - x) = img(c, y, x);
    Tensor plain = engine.infer(img);
    Tensor post = engine.infer_postprocessed(img);
    Tensor sym = eval::hflip_map(plain);
    for (long long i = 0; i < post.numel(); ++i)
        CHECK(post.v[(size_t)i] ==
              doctest::Approx(0.5 * (plain.v[(size_t)i] + sym.v[(size_t)i])).epsilon(1e-12));

    // output is the elementwise mean of the two branch maps
    Tensor any = testutil::rand_uniform(rng, {3, 32, 32}, 0.0, 1.0);
    Tensor branch1 = engine.infer(any);
    Tensor branch2 = eval::hflip_map(engine.infer(eval::hflip_image(any)));
    Tensor got = engine.infer_postprocessed(any);
    for (long long i = 0; i < got.numel(); ++i)
        CHECK(got.v[(size_t)i] ==
              doctest::Approx(0.5 * (branch1.v[(size_t)i] + branch2.v[(size_t)i]))
                  .epsilon(1e-12));
}

TEST_CASE("evaluate_split and ablation report plumbing") {
    TempDir tmp("ablate");
    auto ts = data::generate_synthetic_scene(26, 4, {32, 32}, 2);
    for (int i = 0; i < 2; ++i) data::write_triplet(tmp.path / "data", "train", ts[(size_t)i]);
    for (int i = 2; i < 4; ++i) data::write_triplet(tmp.path / "data", "test", ts[(size_t)i]);

    Rng rng(27);
    auto student = net::StudentModel::make(rng, {4, 8, 12, 16}, 24, 2, 0.1, 100.0);
    student.step = 1;
    auto test = data::Dataset::load(tmp.path / "data", "test");
    eval::EvalOptions opt;
    auto m = eval::evaluate_split(student, nullptr, test, opt);
    CHECK(std::isfinite(m.abs_rel));
    CHECK(m.d1 >= 0.0);
    CHECK(m.d1 <= 1.0);

    train::TrainConfig cfg;
    cfg.data_root = (tmp.path / "data").string();
    cfg.output_dir = (tmp.path / "out").string();
    cfg.student_channels = {4, 8, 12, 16};
    cfg.teacher_channels = {8, 12, 16, 24};
    cfg.heads = 2;
    cfg.lr_width = 32;
    cfg.lr_height = 32;
    fs::create_directories(cfg.output_dir);

    // only the baseline variant present -> its row evaluates, others absent
    student.to_checkpoint().save(fs::path(cfg.output_dir) / "student_baseline.ckpt");
    auto rows = eval::run_ablation(cfg);
    REQUIRE(rows.size() == 5);
    CHECK(rows[0].name == "baseline");
    CHECK(rows[0].metrics.has_value());
    CHECK(!rows[1].metrics.has_value());
    CHECK(!rows[4].metrics.has_value());

    // the report reproduces stored metrics exactly on re-evaluation
    auto rows2 = eval::run_ablation(cfg);
    CHECK(rows[0].metrics->abs_rel == rows2[0].metrics->abs_rel);
    CHECK(rows[0].metrics->rmse == rows2[0].metrics->rmse);

    const std::string table = eval::format_ablation(rows);
    CHECK(table.find("baseline") != std::string::npos);
    CHECK(table.find("absent") != std::string::npos);
}
