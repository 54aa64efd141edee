#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "rpr/geometry.hpp"
#include "rpr/tensor.hpp"

namespace rpr::net {
class TeacherModel;
}

namespace rpr::data {

// Consecutive frames (t-1, t, t+1) at rich resolution plus the LR view of
// frame t. Ground truth is carried for synthetic data.
struct ImageTriplet {
    std::string id;
    std::array<Tensor, 3> frames;  // [3,H_rr,W_rr] each, values on the 8-bit grid
    Tensor lr_target;              // [3,H_lr,W_lr]
    Tensor rr_target;              // frame t at rich resolution
    geo::CameraIntrinsics intrinsics_lr, intrinsics_rr;
    std::optional<Tensor> gt_depth;                 // [H_rr,W_rr], meters
    std::optional<std::array<geo::Pose, 2>> gt_poses;  // t->t-1, t->t+1

    void validate() const;
};

// Deterministic procedural scenes: textured tilted planes and boxes over a
// ground plane and backdrop, rendered by ray casting with z-buffering from
// three positions along a smooth trajectory. Depths land in [1, 80] m.
std::vector<ImageTriplet> generate_synthetic_scene(uint64_t seed, int n_triplets,
                                                   std::pair<int, int> lr_size, int rr_scale);

void write_triplet(const std::filesystem::path& root, const std::string& split,
                   const ImageTriplet& t);

class Dataset {
public:
    static Dataset load(const std::filesystem::path& root, const std::string& split);

    size_t size() const { return ids_.size(); }
    const std::vector<std::string>& ids() const { return ids_; }
    const std::filesystem::path& root() const { return root_; }
    ImageTriplet get(size_t i) const;

private:
    std::filesystem::path root_;
    std::string split_;
    std::vector<std::string> ids_;
};

// Offline teacher depth predictions, one per training sample, rich resolution.
class PseudoLabelStore {
public:
    void put(const std::string& id, Tensor depth);
    const Tensor& get(const std::string& id) const;
    bool has(const std::string& id) const { return maps_.count(id) > 0; }
    size_t size() const { return maps_.size(); }

    void save(const std::filesystem::path& root) const;  // root/pseudo/<id>.f32
    static PseudoLabelStore load(const std::filesystem::path& root,
                                 const std::vector<std::string>& ids);

private:
    std::map<std::string, Tensor> maps_;
};

PseudoLabelStore build_pseudo_labels(const net::TeacherModel& teacher, const Dataset& dataset);

// Occlusion-aware consistency mask for synthetic validation: pixels of frame t
// whose reprojection into the source is depth-consistent.
Tensor visibility_mask(const Tensor& depth_t, const Tensor& depth_src, const geo::Pose& t_to_src,
                       const geo::CameraIntrinsics& K, double rel_tol = 0.03);

}  // namespace rpr::data
