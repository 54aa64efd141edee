#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "rpr/data.hpp"
#include "rpr/networks.hpp"
#include "rpr/refbank.hpp"

namespace rpr::train {

// Flat `key = value` text config; every field is a key, unknown keys are
// errors.
struct TrainConfig {
    uint64_t seed = 0;
    std::string data_root;
    std::string output_dir = "out";
    int lr_width = 64, lr_height = 32;
    int rr_scale = 2;
    int batch_size = 1;
    double learning_rate = 1e-4;
    double lr_decay = 0.5;     // factor applied once...
    double lr_decay_at = 0.75; // ...this far through the epochs
    double alpha = 1.0, beta = 0.1;
    int bank_cap = 2048;
    double pixel_fraction = 0.5;
    int agfs_k = 0;  // 0 -> ceil(0.01 * R)
    int epochs_teacher = 10, epochs_student = 15, epochs_finetune = 3;
    int heads = 4;
    std::vector<int> student_channels = {16, 24, 32, 64};
    std::vector<int> teacher_channels = {32, 48, 64, 128};
    bool use_bank = true;
    bool use_rgl = true;
    bool use_gt_poses = false;
    double min_depth = 0.1, max_depth = 100.0;

    void validate() const;
    static TrainConfig load(const std::filesystem::path& p);
    void save(const std::filesystem::path& p) const;
};

struct Adam {
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    std::vector<ag::Var> params;
    std::vector<Tensor> m, v;
    long long t = 0;

    explicit Adam(const net::ParamMap& pm);
    void zero_grad();
    void step(double lr);
};

struct EpochStats {
    std::vector<double> epoch_mean_loss;
};

net::TeacherModel train_teacher(const TrainConfig& cfg, const data::Dataset& train_split,
                                EpochStats* stats = nullptr);

// Joint student / Conv_m / fusion / pose training against a frozen-teacher
// bank and pseudo labels. `bank` may be null only when cfg.use_bank is false.
net::StudentModel train_student(const TrainConfig& cfg, const data::Dataset& train_split,
                                const data::PseudoLabelStore* pseudo,
                                const bank::ReferenceBank* bank, EpochStats* stats = nullptr);

// Same loop with the AGFS-selected bank and no per-step subsampling.
void finetune_with_selected_bank(net::StudentModel& student, const bank::ReferenceBank& selected,
                                 const TrainConfig& cfg, const data::Dataset& train_split,
                                 const data::PseudoLabelStore* pseudo,
                                 EpochStats* stats = nullptr);

}  // namespace rpr::train
