#include "rpr/data.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "rpr/common.hpp"
#include "rpr/image_io.hpp"
#include "rpr/kernels.hpp"
#include "rpr/networks.hpp"
#include "rpr/rng.hpp"

namespace rpr::data {

namespace fs = std::filesystem;

void ImageTriplet::validate() const {
    const int H = frames[0].dim(1), W = frames[0].dim(2);
    for (const auto& f : frames)
        if (f.dim(1) != H || f.dim(2) != W)
            throw validation_error("triplet " + id + ": frame resolutions differ");
    if (rr_target.dim(1) != H || rr_target.dim(2) != W)
        throw validation_error("triplet " + id + ": rr_target resolution mismatch");
    const int h = lr_target.dim(1), w = lr_target.dim(2);
    if (h <= 0 || w <= 0 || H % h != 0 || W % w != 0 || H / h != W / w)
        throw validation_error("triplet " + id + ": rr must be an integer multiple of lr");
    if (gt_depth) {
        for (double d : gt_depth->v)
            if (!std::isfinite(d) || d <= 0)
                throw validation_error("triplet " + id + ": gt_depth must be finite and > 0");
    }
}

// ---------------------------------------------------------------------------
// synthetic scenes
// ---------------------------------------------------------------------------

namespace {

struct Vec3 {
    double x = 0, y = 0, z = 0;
};
inline Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
inline Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
inline Vec3 operator*(double s, Vec3 a) { return {s * a.x, s * a.y, s * a.z}; }
inline double dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline Vec3 cross(Vec3 a, Vec3 b) {
    return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline Vec3 normalized(Vec3 a) {
    const double n = std::sqrt(dot(a, a));
    return {a.x / n, a.y / n, a.z / n};
}

// Smooth procedural albedo: base color plus two low-frequency sinusoids.
struct TexturePattern {
    double base[3];
    double amp[2][3];
    double fu[2], fv[2], phase[2][3];

    void sample(double u, double v, double* rgb) const {
        for (int c = 0; c < 3; ++c) {
            double x = base[c];
            for (int j = 0; j < 2; ++j)
                x += amp[j][c] * std::sin(6.2831853071795865 * (fu[j] * u + fv[j] * v) +
                                          phase[j][c]);
            rgb[c] = std::clamp(x, 0.03, 0.97);
        }
    }

    static TexturePattern random(Rng& rng, double freq_scale) {
        TexturePattern t;
        for (int c = 0; c < 3; ++c) t.base[c] = rng.uniform(0.42, 0.58);
        for (int j = 0; j < 2; ++j) {
            t.fu[j] = rng.uniform(0.2, 0.6) * freq_scale;
            t.fv[j] = rng.uniform(0.2, 0.6) * freq_scale;
            for (int c = 0; c < 3; ++c) {
                t.amp[j][c] = rng.uniform(0.04, 0.10);
                t.phase[j][c] = rng.uniform(0.0, 6.2831853);
            }
        }
        return t;
    }
};

struct RectPrim {
    Vec3 p0, n, e1, e2;  // centre, unit normal, unit in-plane axes
    double h1, h2;       // half extents along e1/e2
    TexturePattern tex;
};

struct BoxPrim {
    Vec3 c;
    double hx, hy, hz;
    TexturePattern tex;
};

struct Scene {
    std::vector<RectPrim> rects;
    std::vector<BoxPrim> boxes;
};

struct Hit {
    double t = 1e30;
    double rgb[3] = {0.4, 0.35, 0.3};
};

bool hit_rect(const RectPrim& r, Vec3 o, Vec3 d, Hit& h) {
    const double den = dot(d, r.n);
    if (std::fabs(den) < 1e-9) return false;
    const double t = dot(r.p0 - o, r.n) / den;
    if (t < 0.5 || t >= h.t) return false;
    const Vec3 p = o + t * d - r.p0;
    const double u = dot(p, r.e1), v = dot(p, r.e2);
    if (std::fabs(u) > r.h1 || std::fabs(v) > r.h2) return false;
    h.t = t;
    r.tex.sample(u, v, h.rgb);
    return true;
}

bool hit_box(const BoxPrim& b, Vec3 o, Vec3 d, Hit& h) {
    const double half[3] = {b.hx, b.hy, b.hz};
    const double oo[3] = {o.x - b.c.x, o.y - b.c.y, o.z - b.c.z};
    const double dd[3] = {d.x, d.y, d.z};
    double tmin = -1e30, tmax = 1e30;
    int axis = -1;
    for (int i = 0; i < 3; ++i) {
        if (std::fabs(dd[i]) < 1e-12) {
            if (std::fabs(oo[i]) > half[i]) return false;
            continue;
        }
        double t0 = (-half[i] - oo[i]) / dd[i];
        double t1 = (half[i] - oo[i]) / dd[i];
        if (t0 > t1) std::swap(t0, t1);
        if (t0 > tmin) {
            tmin = t0;
            axis = i;
        }
        tmax = std::min(tmax, t1);
    }
    if (tmin > tmax || tmin < 0.5 || tmin >= h.t || axis < 0) return false;
    h.t = tmin;
    const double p[3] = {oo[0] + tmin * dd[0], oo[1] + tmin * dd[1], oo[2] + tmin * dd[2]};
    const int a1 = (axis + 1) % 3, a2 = (axis + 2) % 3;
    b.tex.sample(p[a1], p[a2], h.rgb);
    return true;
}

Scene make_scene(Rng& rng, double fov_half_tan_x, double fov_half_tan_y) {
    Scene s;
    // Ground plane below the camera path; close geometry gives the
    // photometric loss usable parallax.
    {
        RectPrim g;
        g.p0 = {0, 1.55, 19};
        g.n = {0, -1, 0};
        g.e1 = {1, 0, 0};
        g.e2 = {0, 0, 1};
        g.h1 = 60;
        g.h2 = 18;
        g.tex = TexturePattern::random(rng, 0.22);
        s.rects.push_back(g);
    }
    // Backdrop.
    {
        RectPrim b;
        b.p0 = {0, 0, 38.0 + rng.uniform(-2.0, 2.0)};
        b.n = normalized({rng.uniform(-0.03, 0.03), rng.uniform(-0.03, 0.03), -1});
        Vec3 up{0, 1, 0};
        b.e1 = normalized(cross(up, b.n));
        b.e2 = normalized(cross(b.n, b.e1));
        b.h1 = 90;
        b.h2 = 50;
        b.tex = TexturePattern::random(rng, 0.08);
        s.rects.push_back(b);
    }
    // Tilted planes, biased toward the camera.
    const int n_planes = rng.uniform_int(3, 5);
    for (int i = 0; i < n_planes; ++i) {
        RectPrim r;
        const double z0 = 4.0 * std::pow(6.0, rng.uniform(0.0, 1.0));  // 4..24 m, log-uniform
        r.p0 = {rng.uniform(-0.8, 0.8) * z0 * fov_half_tan_x,
                rng.uniform(-0.7, 0.4) * z0 * fov_half_tan_y, z0};
        Vec3 n{rng.uniform(-0.45, 0.45), rng.uniform(-0.45, 0.45), -1};
        r.n = normalized(n);
        Vec3 up{0, 1, 0};
        r.e1 = normalized(cross(up, r.n));
        r.e2 = normalized(cross(r.n, r.e1));
        r.h1 = rng.uniform(0.25, 0.55) * z0 * fov_half_tan_x;
        r.h2 = rng.uniform(0.25, 0.55) * z0 * fov_half_tan_y;
        r.tex = TexturePattern::random(rng, 7.0 / z0);
        s.rects.push_back(r);
    }
    // Boxes.
    const int n_boxes = rng.uniform_int(1, 2);
    for (int i = 0; i < n_boxes; ++i) {
        BoxPrim b;
        const double z0 = rng.uniform(4.0, 14.0);
        b.c = {rng.uniform(-0.6, 0.6) * z0 * fov_half_tan_x,
               rng.uniform(0.0, 0.6) * z0 * fov_half_tan_y, z0};
        b.hx = rng.uniform(0.08, 0.2) * z0;
        b.hy = rng.uniform(0.08, 0.2) * z0;
        b.hz = rng.uniform(0.08, 0.2) * z0;
        b.tex = TexturePattern::random(rng, 7.0 / z0);
        s.boxes.push_back(b);
    }
    return s;
}

struct CameraPose {
    Tensor R;  // world->camera rotation
    Vec3 C;    // camera centre in world
};

void render(const Scene& s, const CameraPose& cam, const geo::CameraIntrinsics& K, Tensor& img,
            Tensor* depth) {
    const int H = K.height, W = K.width;
    img = Tensor({3, H, W});
    if (depth) *depth = Tensor({H, W});
#pragma omp parallel for schedule(static)
    for (int v = 0; v < H; ++v) {
        for (int u = 0; u < W; ++u) {
            const Vec3 dc{(u - K.cx) / K.fx, (v - K.cy) / K.fy, 1.0};
            // world direction = R^T * dc ; camera depth of a hit equals ray t.
            const Vec3 dw{cam.R(0, 0) * dc.x + cam.R(1, 0) * dc.y + cam.R(2, 0) * dc.z,
                          cam.R(0, 1) * dc.x + cam.R(1, 1) * dc.y + cam.R(2, 1) * dc.z,
                          cam.R(0, 2) * dc.x + cam.R(1, 2) * dc.y + cam.R(2, 2) * dc.z};
            Hit h;
            for (const auto& r : s.rects) hit_rect(r, cam.C, dw, h);
            for (const auto& b : s.boxes) hit_box(b, cam.C, dw, h);
            if (h.t > 1e29) h.t = 79.0;  // should not happen; backdrop covers the frustum
            for (int c = 0; c < 3; ++c) img(c, v, u) = h.rgb[c];
            if (depth) (*depth)(v, u) = h.t;
        }
    }
}

}  // namespace

std::vector<ImageTriplet> generate_synthetic_scene(uint64_t seed, int n_triplets,
                                                   std::pair<int, int> lr_size, int rr_scale) {
    const int lw = lr_size.first, lh = lr_size.second;
    if (lw < 32 || lh < 32) throw config_error("generate_synthetic_scene: lr sides must be >= 32");
    if (rr_scale < 2 || rr_scale > 4)
        throw config_error("generate_synthetic_scene: rr_scale must be in {2,3,4}");
    if (n_triplets < 1) throw config_error("generate_synthetic_scene: n_triplets must be >= 1");

    const int W = lw * rr_scale, H = lh * rr_scale;
    geo::CameraIntrinsics K{(double)W, (double)W, W / 2.0, H / 2.0, W, H};
    const double tanx = (W / 2.0) / K.fx, tany = (H / 2.0) / K.fy;

    std::vector<ImageTriplet> out;
    out.reserve((size_t)n_triplets);
    for (int n = 0; n < n_triplets; ++n) {
        Rng rng = Rng::derive(seed, (uint64_t)n);
        Scene scene = make_scene(rng, tanx, tany);

        // Smooth forward-dominant trajectory; adjacent translation >= 0.05 m
        // (static-frame filter). Forward motion keeps disocclusion low while
        // still producing informative flow on near geometry.
        const double step = rng.uniform(0.16, 0.28);
        const Vec3 dir = normalized(
            {rng.uniform(-0.15, 0.15), rng.uniform(-0.06, 0.06), 1.0});
        const Vec3 c0{rng.uniform(-0.3, 0.3), rng.uniform(-0.15, 0.15), rng.uniform(-0.2, 0.2)};
        const double yaw0 = rng.uniform(-0.01, 0.01), dyaw = rng.uniform(-0.008, 0.008);
        const double pitch0 = rng.uniform(-0.01, 0.01), dpitch = rng.uniform(-0.008, 0.008);

        std::array<CameraPose, 3> cams;
        for (int i = 0; i < 3; ++i) {
            const double yaw = yaw0 + i * dyaw, pitch = pitch0 + i * dpitch;
            geo::Pose p = geo::Pose::from_axis_angle({pitch, yaw, 0.0}, {0, 0, 0});
            cams[(size_t)i].R = p.rotation;
            cams[(size_t)i].C = c0 + ((double)i * step) * dir;
        }

        ImageTriplet t;
        char idbuf[16];
        std::snprintf(idbuf, sizeof(idbuf), "%06d", n);
        t.id = idbuf;
        t.intrinsics_rr = K;
        t.intrinsics_lr = K.downscaled(rr_scale);
        Tensor depth_t;
        for (int i = 0; i < 3; ++i) {
            Tensor img;
            render(scene, cams[(size_t)i], K, img, i == 1 ? &depth_t : nullptr);
            io::quantize8(img);
            t.frames[(size_t)i] = std::move(img);
        }
        depth_t.round_f32();
        if (depth_t.min() < 1.0 || depth_t.max() > 80.0)
            throw numeric_error("synthetic depth left [1,80] m");
        t.gt_depth = depth_t;
        t.rr_target = t.frames[1];
        Tensor lr({3, lh, lw});
        kern::downsample_box(lr.data(), t.frames[1].data(), 3, H, W, rr_scale);
        io::quantize8(lr);
        t.lr_target = std::move(lr);

        // Relative poses t->t-1 and t->t+1: R_rel = R_s R_t^T, t_rel = R_s (C_t - C_s).
        auto rel = [&](int si) {
            geo::Pose p = geo::Pose::identity();
            const Tensor& Rs = cams[(size_t)si].R;
            const Tensor& Rt = cams[1].R;
            kern::serial::matmul_abt(p.rotation.data(), Rs.data(), Rt.data(), 3, 3, 3, false);
            const Vec3 dc = cams[1].C - cams[(size_t)si].C;
            p.translation(0) = Rs(0, 0) * dc.x + Rs(0, 1) * dc.y + Rs(0, 2) * dc.z;
            p.translation(1) = Rs(1, 0) * dc.x + Rs(1, 1) * dc.y + Rs(1, 2) * dc.z;
            p.translation(2) = Rs(2, 0) * dc.x + Rs(2, 1) * dc.y + Rs(2, 2) * dc.z;
            return p;
        };
        t.gt_poses = std::array<geo::Pose, 2>{rel(0), rel(2)};
        for (const auto& p : *t.gt_poses) {
            double norm = 0;
            for (int i = 0; i < 3; ++i) norm += p.translation(i) * p.translation(i);
            if (std::sqrt(norm) < 0.05) throw numeric_error("static frame generated");
        }
        t.validate();
        out.push_back(std::move(t));
    }
    return out;
}

// ---------------------------------------------------------------------------
// on-disk layout
// ---------------------------------------------------------------------------

void write_triplet(const fs::path& root, const std::string& split, const ImageTriplet& t) {
    const fs::path dir = root / split / t.id;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw io_error("cannot create " + dir.string());
    io::write_png_rgb(dir / "frame_-1.png", t.frames[0]);
    io::write_png_rgb(dir / "frame_0.png", t.frames[1]);
    io::write_png_rgb(dir / "frame_1.png", t.frames[2]);
    io::write_png_rgb(dir / "lr.png", t.lr_target);
    io::write_png_rgb(dir / "rr.png", t.rr_target);
    io::write_intrinsics(dir / "intrinsics.txt", t.intrinsics_rr);
    if (t.gt_depth) io::write_depth_f32(dir / "depth.f32", *t.gt_depth);
    if (t.gt_poses) io::write_poses(dir / "poses.txt", (*t.gt_poses)[0], (*t.gt_poses)[1]);
}

Dataset Dataset::load(const fs::path& root, const std::string& split) {
    if (split != "train" && split != "ref" && split != "val" && split != "test")
        throw validation_error("unknown split: " + split);
    Dataset d;
    d.root_ = root;
    d.split_ = split;
    const fs::path dir = root / split;
    if (!fs::is_directory(dir)) throw io_error("missing split directory: " + dir.string());
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_directory()) d.ids_.push_back(e.path().filename().string());
    std::sort(d.ids_.begin(), d.ids_.end());
    if (d.ids_.empty()) throw io_error("no samples under " + dir.string());

    // Ref and train must stay disjoint by id.
    if (fs::is_directory(root / "train") && fs::is_directory(root / "ref")) {
        std::set<std::string> train_ids, ref_ids;
        for (const auto& e : fs::directory_iterator(root / "train"))
            if (e.is_directory()) train_ids.insert(e.path().filename().string());
        for (const auto& e : fs::directory_iterator(root / "ref"))
            if (e.is_directory()) ref_ids.insert(e.path().filename().string());
        for (const auto& id : ref_ids)
            if (train_ids.count(id))
                throw validation_error("ref/train splits overlap on id " + id);
    }
    return d;
}

ImageTriplet Dataset::get(size_t i) const {
    const fs::path dir = root_ / split_ / ids_[i];
    ImageTriplet t;
    t.id = ids_[i];
    t.frames[0] = io::read_png_rgb(dir / "frame_-1.png");
    t.frames[1] = io::read_png_rgb(dir / "frame_0.png");
    t.frames[2] = io::read_png_rgb(dir / "frame_1.png");
    t.lr_target = io::read_png_rgb(dir / "lr.png");
    t.rr_target = io::read_png_rgb(dir / "rr.png");
    const int W = t.rr_target.dim(2), H = t.rr_target.dim(1);
    t.intrinsics_rr = io::read_intrinsics(dir / "intrinsics.txt", W, H);
    const int factor = W / t.lr_target.dim(2);
    t.intrinsics_lr = t.intrinsics_rr.downscaled(factor);
    if (fs::exists(dir / "depth.f32")) t.gt_depth = io::read_depth_f32(dir / "depth.f32");
    if (fs::exists(dir / "poses.txt")) {
        auto [a, b] = io::read_poses(dir / "poses.txt");
        t.gt_poses = std::array<geo::Pose, 2>{a, b};
    }
    t.validate();
    return t;
}

// ---------------------------------------------------------------------------
// pseudo labels
// ---------------------------------------------------------------------------

void PseudoLabelStore::put(const std::string& id, Tensor depth) {
    for (double d : depth.v)
        if (!std::isfinite(d) || d <= 0)
            throw validation_error("pseudo label " + id + " must be finite and positive");
    maps_[id] = std::move(depth);
}

const Tensor& PseudoLabelStore::get(const std::string& id) const {
    auto it = maps_.find(id);
    if (it == maps_.end()) throw io_error("missing pseudo label for " + id);
    return it->second;
}

void PseudoLabelStore::save(const fs::path& root) const {
    const fs::path dir = root / "pseudo";
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw io_error("cannot create " + dir.string());
    for (const auto& [id, d] : maps_) io::write_depth_f32(dir / (id + ".f32"), d);
}

PseudoLabelStore PseudoLabelStore::load(const fs::path& root, const std::vector<std::string>& ids) {
    PseudoLabelStore s;
    for (const auto& id : ids) {
        const fs::path p = root / "pseudo" / (id + ".f32");
        if (!fs::exists(p)) throw io_error("missing pseudo label file " + p.string());
        s.put(id, io::read_depth_f32(p));
    }
    return s;
}

PseudoLabelStore build_pseudo_labels(const net::TeacherModel& teacher, const Dataset& dataset) {
    if (dataset.size() == 0) throw validation_error("build_pseudo_labels: empty dataset");
    PseudoLabelStore store;
    for (size_t i = 0; i < dataset.size(); ++i) {
        ImageTriplet t = dataset.get(i);
        Tensor depth = teacher.infer_depth(t);
        depth.round_f32();
        store.put(t.id, std::move(depth));
    }
    return store;
}

Tensor visibility_mask(const Tensor& depth_t, const Tensor& depth_src, const geo::Pose& t_to_src,
                       const geo::CameraIntrinsics& K, double rel_tol) {
    const int H = depth_t.dim(0), W = depth_t.dim(1);
    Tensor valid;
    Tensor grid = geo::project(geo::backproject(depth_t, K), K, t_to_src, &valid);
    Tensor mask({H, W});
    Tensor sampled({1, H, W});
    kern::bilinear_sample(sampled.data(), depth_src.data(), 1, depth_src.dim(0), depth_src.dim(1),
                          grid.data(), H, W);
    for (int v = 0; v < H; ++v)
        for (int u = 0; u < W; ++u) {
            if (valid(v, u) == 0.0) continue;
            const double x = grid(v, u, 0), y = grid(v, u, 1);
            if (x < 0 || x > W - 1 || y < 0 || y > H - 1) continue;
            // depth of the point in the source camera
            const std::array<double, 3> p{depth_t(v, u) * (u - K.cx) / K.fx,
                                          depth_t(v, u) * (v - K.cy) / K.fy, depth_t(v, u)};
            const double z_src = t_to_src.apply(p)[2];
            if (std::fabs(sampled(0, v, u) - z_src) <= rel_tol * z_src) mask(v, u) = 1.0;
        }
    return mask;
}

}  // namespace rpr::data
