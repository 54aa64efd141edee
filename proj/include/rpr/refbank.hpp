#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "rpr/tensor.hpp"

namespace rpr::net {
class TeacherModel;
class StudentModel;
}
namespace rpr::data {
class Dataset;
}

namespace rpr::bank {

// Reference pixels sampled offline from the ref split: raw teacher features,
// dimension-matched features (snapshot of Conv_m output), and teacher depths.
struct ReferenceBank {
    Tensor features_raw;      // [R, C_t]
    Tensor features_matched;  // [R, C_s]
    Tensor depths;            // [R], meters
    struct Prov {
        uint32_t image;  // index into the sorted ref-split id list
        uint16_t row, col;  // feature-grid coordinates
    };
    std::vector<Prov> provenance;
    bool selected = false;

    int rows() const { return features_raw.rank() == 2 ? features_raw.dim(0) : 0; }
    int c_t() const { return features_raw.rank() == 2 ? features_raw.dim(1) : 0; }
    int c_s() const { return features_matched.rank() == 2 ? features_matched.dim(1) : 0; }
    void validate() const;
};

struct WeightVector {
    Tensor values;  // [R], aggregated attention weights, >= 0
    int n_samples = 0;
};

// ceil(fraction*M) rows per image, summed over images.
long long bank_rows_for(int n_images, int pixels_per_image, double fraction);

// c_s: matched-feature width the bank will serve (snapshot filled in later by
// refresh_matched; zeros until then).
ReferenceBank sample_reference_bank(const net::TeacherModel& teacher,
                                    const data::Dataset& ref_split, double pixel_fraction,
                                    uint64_t seed, int c_s);

// Re-snapshots features_matched = Conv_m(features_raw) with the student's
// current weights, so inference never runs Conv_m online.
void refresh_matched(ReferenceBank& b, const net::StudentModel& student);

// mean over heads -> add affinity -> mean over the M target pixels.
Tensor accumulate_weights(const Tensor& affinity, const std::vector<Tensor>& mha_weights);

WeightVector average_over_validation(const net::StudentModel& model, const ReferenceBank& b,
                                     const data::Dataset& val_split);

// Indices of the k largest weights, descending; ties by ascending index.
std::vector<int> select_top_k(const WeightVector& w, int k);

ReferenceBank compress_bank(const ReferenceBank& b, const std::vector<int>& indices);

void save_bank(const ReferenceBank& b, const std::filesystem::path& path);
ReferenceBank load_bank(const std::filesystem::path& path);

}  // namespace rpr::bank
