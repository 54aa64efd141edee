#pragma once

#include <atomic>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "rpr/fusion.hpp"
#include "rpr/geometry.hpp"
#include "rpr/layers.hpp"

namespace rpr::data {
struct ImageTriplet;
}

namespace rpr::net {

// Text architecture descriptor followed by named little-endian float32 arrays.
struct Checkpoint {
    std::map<std::string, std::string> meta;
    std::vector<std::pair<std::string, Tensor>> tensors;
    long long step = 0;

    void save(const std::filesystem::path& p) const;
    static Checkpoint load(const std::filesystem::path& p);
    const Tensor* find(const std::string& name) const;
};

// Plain convolutional pyramid, strides {2,2,1,1}: overall stride 4.
struct Encoder {
    std::vector<Conv2d> stages;
    int in_channels = 0;
    std::vector<int> widths;

    static Encoder make(Rng& rng, int in_channels, const std::vector<int>& widths);
    Var forward(const Var& image) const;  // [Cin,H,W] -> [widths.back(), H/4, W/4]
    void params(ParamMap& m, const std::string& prefix) const;
};

// Upsampling decoder ending in a sigmoid: disparity in (0,1) at 4x the
// feature resolution (the branch's input image resolution).
struct DepthDecoder {
    Conv2d c1, c2, c3, head;
    std::vector<int> widths;  // three inner widths

    static DepthDecoder make(Rng& rng, int in_channels, const std::vector<int>& widths);
    Var forward(const Var& features) const;  // -> [1, 4H, 4W]
    void params(ParamMap& m, const std::string& prefix) const;
};

// Axis-angle + translation from a frame pair; final layer zero-initialized so
// the initial estimate is the identity pose.
struct PoseNet {
    std::vector<Conv2d> stages;
    Linear head;
    std::vector<int> widths;

    static PoseNet make(Rng& rng, const std::vector<int>& widths);
    Var forward(const Var& frame_a, const Var& frame_b) const;  // pose6 [6]
    void params(ParamMap& m, const std::string& prefix) const;
};

Tensor teacher_input(const data::ImageTriplet& t);  // concat(frame_t, frame_{t-1}) -> [6,H,W]

// Call counter proving the teacher is untouched at inference.
std::atomic<long long>& teacher_forward_counter();

class TeacherModel {
public:
    std::vector<int> widths;  // encoder widths; c_t = widths.back()
    double min_depth = 0.1, max_depth = 100.0;
    Encoder encoder;
    DepthDecoder decoder;
    PoseNet pose;
    long long step = 0;

    static TeacherModel make(Rng& rng, const std::vector<int>& widths, double min_depth,
                             double max_depth);
    int c_t() const { return widths.back(); }

    ParamMap params() const;
    Checkpoint to_checkpoint() const;
    static TeacherModel from_checkpoint(const Checkpoint& c, bool trainable);
    void set_trainable(bool on);

    Var encode(const Var& rich_input) const;  // encode_teacher
    Var decode(const Var& features) const;
    Var estimate_pose6(const Tensor& a, const Tensor& b) const;

    // Eval-mode helpers (no gradients).
    Tensor infer_disp(const data::ImageTriplet& t) const;   // [H,W] in (0,1)
    Tensor infer_depth(const data::ImageTriplet& t) const;  // [H,W], meters
    Tensor features(const data::ImageTriplet& t) const;     // [C_t,Hf,Wf]
};

class StudentModel {
public:
    std::vector<int> widths;  // encoder widths; c_s = widths.back()
    int c_t = 0, heads = 4;
    double min_depth = 0.1, max_depth = 100.0;
    Encoder encoder;
    DepthDecoder decoder;
    Conv2d conv_m;  // 1x1, C_t -> C_s (match_dims)
    fusion::FusionModule pdf;
    PoseNet pose;
    long long step = 0;

    static StudentModel make(Rng& rng, const std::vector<int>& widths, int c_t, int heads,
                             double min_depth, double max_depth);
    int c_s() const { return widths.back(); }

    ParamMap params() const;
    Checkpoint to_checkpoint() const;
    static StudentModel from_checkpoint(const Checkpoint& c, bool trainable);
    void set_trainable(bool on);

    Var encode(const Var& lr_image) const;  // encode_student
    // match_dims: [C_t,H,W] -> [C_s,H,W], or bank rows [R,C_t] -> [R,C_s].
    Var match_dims(const Var& f_r) const;
    Var decode(const Var& features) const;
    Var estimate_pose6(const Tensor& a, const Tensor& b) const;
};

// Shared by both branches: input checked against the encoder stride.
Var encode_image(const Encoder& enc, const Tensor& image);

}  // namespace rpr::net
