#pragma once

#include <filesystem>
#include <string>

#include "rpr/geometry.hpp"
#include "rpr/tensor.hpp"

namespace rpr::io {

// 8-bit RGB PNG <-> [3,H,W] tensor with values in {0/255, ..., 255/255}.
Tensor read_png_rgb(const std::filesystem::path& p);
void write_png_rgb(const std::filesystem::path& p, const Tensor& img);

// Grayscale PNG from a [H,W] map normalized to [0,1], simple color ramp.
void write_png_colormap(const std::filesystem::path& p, const Tensor& map);

// depth.f32: text header "DPTH v1 <w> <h>\n" followed by row-major
// little-endian float32.
Tensor read_depth_f32(const std::filesystem::path& p);
void write_depth_f32(const std::filesystem::path& p, const Tensor& depth);

// intrinsics.txt: 9 whitespace-separated floats, row-major 3x3.
geo::CameraIntrinsics read_intrinsics(const std::filesystem::path& p, int width, int height);
void write_intrinsics(const std::filesystem::path& p, const geo::CameraIntrinsics& k);

// poses.txt: two rows of 12 floats, row-major 3x4 (t->t-1 then t->t+1).
std::pair<geo::Pose, geo::Pose> read_poses(const std::filesystem::path& p);
void write_poses(const std::filesystem::path& p, const geo::Pose& to_prev,
                 const geo::Pose& to_next);

// Quantizes an image in [0,1] onto the 8-bit grid (k/255), so a written PNG
// reloads to exactly the in-memory values.
void quantize8(Tensor& img);

}  // namespace rpr::io
