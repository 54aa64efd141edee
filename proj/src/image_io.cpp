#include "rpr/image_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

#include "rpr/common.hpp"

namespace rpr::io {

namespace fs = std::filesystem;

namespace {

struct FileCloser {
    FILE* f;
    ~FileCloser() {
        if (f) std::fclose(f);
    }
};

}  // namespace

Tensor read_png_rgb(const fs::path& p) {
    FILE* f = std::fopen(p.string().c_str(), "rb");
    if (!f) throw io_error("cannot open " + p.string());
    FileCloser closer{f};
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw io_error("libpng init failed");
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw format_error("bad PNG: " + p.string());
    }
    png_init_io(png, f);
    png_read_info(png, info);
    const int W = (int)png_get_image_width(png, info);
    const int H = (int)png_get_image_height(png, info);
    png_set_expand(png);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_gray_to_rgb(png);
    png_read_update_info(png, info);
    std::vector<png_byte> row((size_t)W * 3);
    Tensor img({3, H, W});
    for (int y = 0; y < H; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < 3; ++c)
                img(c, y, x) = row[(size_t)x * 3 + (size_t)c] / 255.0;
    }
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

void write_png_rgb(const fs::path& p, const Tensor& img) {
    if (img.rank() != 3 || img.dim(0) != 3) throw validation_error("write_png_rgb: want [3,H,W]");
    const int H = img.dim(1), W = img.dim(2);
    FILE* f = std::fopen(p.string().c_str(), "wb");
    if (!f) throw io_error("cannot write " + p.string());
    FileCloser closer{f};
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw io_error("PNG write failed: " + p.string());
    }
    png_init_io(png, f);
    png_set_IHDR(png, info, (png_uint_32)W, (png_uint_32)H, 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_byte> row((size_t)W * 3);
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < 3; ++c) {
                double v = std::clamp(img(c, y, x), 0.0, 1.0);
                row[(size_t)x * 3 + (size_t)c] = (png_byte)std::lround(v * 255.0);
            }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

void write_png_colormap(const fs::path& p, const Tensor& map) {
    if (map.rank() != 2) throw validation_error("write_png_colormap: want [H,W]");
    const int H = map.dim(0), W = map.dim(1);
    double lo = map.min(), hi = map.max();
    if (hi - lo < 1e-12) hi = lo + 1e-12;
    // Small magma-like ramp.
    static const double stops[5][3] = {{0.0, 0.0, 0.2},
                                       {0.3, 0.05, 0.5},
                                       {0.8, 0.25, 0.3},
                                       {0.98, 0.65, 0.2},
                                       {0.99, 0.97, 0.75}};
    Tensor img({3, H, W});
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const double t = std::clamp((map(y, x) - lo) / (hi - lo), 0.0, 1.0) * 4.0;
            const int i = std::min((int)t, 3);
            const double f = t - i;
            for (int c = 0; c < 3; ++c)
                img(c, y, x) = stops[i][c] * (1 - f) + stops[i + 1][c] * f;
        }
    write_png_rgb(p, img);
}

Tensor read_depth_f32(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw io_error("cannot open " + p.string());
    std::string line;
    if (!std::getline(in, line)) throw format_error("empty depth file " + p.string());
    std::istringstream hs(line);
    std::string magic, ver;
    int w = 0, h = 0;
    hs >> magic >> ver >> w >> h;
    if (magic != "DPTH" || ver != "v1" || w <= 0 || h <= 0)
        throw format_error("bad depth header in " + p.string());
    std::vector<float> buf((size_t)w * h);
    in.read((char*)buf.data(), (std::streamsize)(buf.size() * sizeof(float)));
    if ((size_t)in.gcount() != buf.size() * sizeof(float))
        throw format_error("truncated depth file " + p.string());
    Tensor d({h, w});
    for (size_t i = 0; i < buf.size(); ++i) d.v[i] = (double)buf[i];
    return d;
}

void write_depth_f32(const fs::path& p, const Tensor& depth) {
    if (depth.rank() != 2) throw validation_error("write_depth_f32: want [H,W]");
    std::ofstream out(p, std::ios::binary);
    if (!out) throw io_error("cannot write " + p.string());
    out << "DPTH v1 " << depth.dim(1) << " " << depth.dim(0) << "\n";
    std::vector<float> buf(depth.v.size());
    for (size_t i = 0; i < buf.size(); ++i) buf[i] = (float)depth.v[i];
    out.write((const char*)buf.data(), (std::streamsize)(buf.size() * sizeof(float)));
    if (!out) throw io_error("short write to " + p.string());
}

geo::CameraIntrinsics read_intrinsics(const fs::path& p, int width, int height) {
    std::ifstream in(p);
    if (!in) throw io_error("cannot open " + p.string());
    double m[9];
    for (double& x : m)
        if (!(in >> x)) throw format_error("bad intrinsics in " + p.string());
    geo::CameraIntrinsics k{m[0], m[4], m[2], m[5], width, height};
    k.validate();
    return k;
}

void write_intrinsics(const fs::path& p, const geo::CameraIntrinsics& k) {
    std::ofstream out(p);
    if (!out) throw io_error("cannot write " + p.string());
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%.17g 0 %.17g\n0 %.17g %.17g\n0 0 1\n", k.fx, k.cx, k.fy,
                  k.cy);
    out << buf;
}

std::pair<geo::Pose, geo::Pose> read_poses(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw io_error("cannot open " + p.string());
    auto read_one = [&]() {
        geo::Pose pose = geo::Pose::identity();
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 3; ++c)
                if (!(in >> pose.rotation(r, c))) throw format_error("bad poses in " + p.string());
            if (!(in >> pose.translation(r))) throw format_error("bad poses in " + p.string());
        }
        return pose;
    };
    geo::Pose a = read_one();
    geo::Pose b = read_one();
    return {a, b};
}

void write_poses(const fs::path& p, const geo::Pose& to_prev, const geo::Pose& to_next) {
    std::ofstream out(p);
    if (!out) throw io_error("cannot write " + p.string());
    auto write_one = [&](const geo::Pose& pose) {
        char buf[64];
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 3; ++c) {
                std::snprintf(buf, sizeof(buf), "%.17g ", pose.rotation(r, c));
                out << buf;
            }
            std::snprintf(buf, sizeof(buf), "%.17g ", pose.translation(r));
            out << buf;
        }
        out << "\n";
    };
    write_one(to_prev);
    write_one(to_next);
}

void quantize8(Tensor& img) {
    for (double& x : img.v) x = std::lround(std::clamp(x, 0.0, 1.0) * 255.0) / 255.0;
}

}  // namespace rpr::io
