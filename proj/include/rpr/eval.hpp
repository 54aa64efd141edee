#pragma once

#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "rpr/data.hpp"
#include "rpr/networks.hpp"
#include "rpr/refbank.hpp"
#include "rpr/train.hpp"

namespace rpr::eval {

struct MetricsRecord {
    double abs_rel = 0, sq_rel = 0, rmse = 0, rmse_log = 0;
    double d1 = 0, d2 = 0, d3 = 0;
    double cap_m = 80.0;
    bool median_scaling = true;
};

// Standard seven-metric protocol: clamp pred to [1e-3, cap], mask to
// gt in (0, cap], optional median scaling. The accuracy ratio is pred/gt.
MetricsRecord compute_metrics(const Tensor& pred, const Tensor& gt, double cap,
                              bool median_scaling);

void print_metrics_header(std::ostream& os);
void print_metrics_row(std::ostream& os, const MetricsRecord& m);

// Shared student forward pass. `b` may be null (no-bank baseline). When
// `use_stored_matched` is set the affinity reads bank.features_matched,
// otherwise Conv_m runs on the raw features.
Tensor student_forward_depth(const net::StudentModel& model, const bank::ReferenceBank* b,
                             const Tensor& lr_image, bool use_stored_matched);

// Deployed inference: student checkpoint + AGFS-selected bank, no teacher.
struct InferenceEngine {
    net::StudentModel model;
    bank::ReferenceBank bank;
    bool postprocess = false;

    static InferenceEngine load(const std::filesystem::path& student_ckpt,
                                const std::filesystem::path& bank_path, bool postprocess);
    Tensor infer(const Tensor& lr_image) const;
    Tensor infer_postprocessed(const Tensor& lr_image) const;
    Tensor run(const Tensor& lr_image) const { return postprocess ? infer_postprocessed(lr_image)
                                                                  : infer(lr_image); }
};

struct EvalOptions {
    double cap = 80.0;
    bool median_scaling = true;
    bool postprocess = false;
    bool use_stored_matched = false;
};

// Per-image metrics averaged over the split; predictions are bilinearly
// upsampled to the ground-truth resolution first.
MetricsRecord evaluate_split(const net::StudentModel& model, const bank::ReferenceBank* b,
                             const data::Dataset& split, const EvalOptions& opt);

struct AblationRow {
    std::string name;
    std::optional<MetricsRecord> metrics;
};

// Evaluates the ablation checkpoints present under cfg.output_dir; missing
// variants are reported as absent.
std::vector<AblationRow> run_ablation(const train::TrainConfig& cfg);
std::string format_ablation(const std::vector<AblationRow>& rows);

Tensor hflip_image(const Tensor& img);  // [C,H,W]
Tensor hflip_map(const Tensor& m);      // [H,W]

}  // namespace rpr::eval
