#pragma once

#include <array>
#include <utility>

#include "rpr/autograd.hpp"
#include "rpr/tensor.hpp"

namespace rpr::geo {

struct CameraIntrinsics {
    double fx = 0, fy = 0, cx = 0, cy = 0;
    int width = 0, height = 0;

    void validate() const;
    // Intrinsics of the same camera at 1/factor resolution.
    CameraIntrinsics downscaled(int factor) const {
        return {fx / factor, fy / factor, cx / factor, cy / factor, width / factor,
                height / factor};
    }
};

// Rigid transform mapping source-camera coordinates into target-camera
// coordinates: x' = R x + t.
struct Pose {
    Tensor rotation;     // [3,3]
    Tensor translation;  // [3]

    static Pose identity();
    static Pose from_axis_angle(const std::array<double, 3>& aa, const std::array<double, 3>& t);
    std::array<double, 3> log_rotation() const;  // axis-angle of R
    Pose inverse() const;
    void validate() const;  // R^T R = I and det(R) = 1 within 1e-6
    std::array<double, 3> apply(const std::array<double, 3>& p) const;
};

// Rodrigues rotation plus analytic derivatives dR/d(theta_i) (Gallego-Yezzi).
void rotation_and_derivs(const std::array<double, 3>& aa, Tensor& R, std::array<Tensor, 3>* dR);

// depth = 1 / (1/d_max + (1/d_min - 1/d_max) * disp); disp in (0,1).
Tensor disp_to_depth(const Tensor& disp, double d_min, double d_max);
ag::Var disp_to_depth(const ag::Var& disp, double d_min, double d_max);

// point(u,v) = depth(u,v) * K^-1 (u,v,1)^T  ->  [H,W,3]
Tensor backproject(const Tensor& depth, const CameraIntrinsics& K);

// p' = K (R p + t) -> (x/z, y/z); points with z <= 1e-3 flagged invalid.
// Returns pixel map [H,W,2]; valid mask written to `valid` [H,W] (1/0).
Tensor project(const Tensor& points, const CameraIntrinsics& K, const Pose& pose, Tensor* valid);

// Inverse warp: bilinear sampling of src at project(backproject(depth)).
// mask = false where samples leave the image or the point is invalid.
std::pair<Tensor, Tensor> warp(const Tensor& src, const Tensor& depth, const Pose& pose,
                               const CameraIntrinsics& K);

// Differentiable pieces used by the losses. pose6 = (axis-angle, translation),
// may or may not require grad. The sample grid carries gradients to depth and
// pose; `valid` is plain data.
ag::Var reproject_grid(const ag::Var& depth, const ag::Var& pose6, const CameraIntrinsics& K,
                       Tensor* valid);
std::pair<ag::Var, Tensor> warp(const Tensor& src, const ag::Var& depth, const ag::Var& pose6,
                                const CameraIntrinsics& K);

double psnr(const Tensor& a, const Tensor& b, const Tensor* mask = nullptr);

}  // namespace rpr::geo
