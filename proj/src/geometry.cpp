#include "rpr/geometry.hpp"

#include <cmath>

#include "rpr/common.hpp"
#include "rpr/kernels.hpp"

namespace rpr::geo {

namespace {
constexpr double kZMin = 1e-3;

void cross_matrix(const std::array<double, 3>& v, Tensor& m) {
    m = Tensor({3, 3});
    m(0, 1) = -v[2];
    m(0, 2) = v[1];
    m(1, 0) = v[2];
    m(1, 2) = -v[0];
    m(2, 0) = -v[1];
    m(2, 1) = v[0];
}
}  // namespace

void CameraIntrinsics::validate() const {
    if (!(fx > 0) || !(fy > 0)) throw validation_error("intrinsics: focal lengths must be > 0");
    if (!(cx >= 0 && cx < width) || !(cy >= 0 && cy < height))
        throw validation_error("intrinsics: principal point outside image");
}

Pose Pose::identity() {
    Pose p;
    p.rotation = Tensor({3, 3});
    p.rotation(0, 0) = p.rotation(1, 1) = p.rotation(2, 2) = 1.0;
    p.translation = Tensor({3});
    return p;
}

void rotation_and_derivs(const std::array<double, 3>& aa, Tensor& R, std::array<Tensor, 3>* dR) {
    const double theta2 = aa[0] * aa[0] + aa[1] * aa[1] + aa[2] * aa[2];
    const double theta = std::sqrt(theta2);
    Tensor K;
    cross_matrix(aa, K);
    R = Tensor({3, 3});
    if (theta < 1e-12) {
        // R = I + [aa]x to first order; derivative is the generator.
        R(0, 0) = R(1, 1) = R(2, 2) = 1.0;
        for (int i = 0; i < 9; ++i) R.v[(size_t)i] += K.v[(size_t)i];
        if (dR) {
            for (int i = 0; i < 3; ++i) {
                std::array<double, 3> e{0, 0, 0};
                e[(size_t)i] = 1.0;
                cross_matrix(e, (*dR)[(size_t)i]);
            }
        }
        return;
    }
    const double a = std::sin(theta) / theta;
    const double b = (1.0 - std::cos(theta)) / theta2;
    // R = I + a K + b K^2
    Tensor K2({3, 3});
    kern::serial::matmul(K2.data(), K.data(), K.data(), 3, 3, 3, false);
    for (int i = 0; i < 9; ++i) R.v[(size_t)i] = a * K.v[(size_t)i] + b * K2.v[(size_t)i];
    R(0, 0) += 1.0;
    R(1, 1) += 1.0;
    R(2, 2) += 1.0;
    if (!dR) return;
    // Gallego & Yezzi: dR/d(aa_i) = (aa_i [aa]x + [aa x (I - R) e_i]x) / |aa|^2 * R
    for (int i = 0; i < 3; ++i) {
        std::array<double, 3> col{};  // (I - R) e_i
        for (int r = 0; r < 3; ++r) col[(size_t)r] = (r == i ? 1.0 : 0.0) - R(r, i);
        const std::array<double, 3> cr{aa[1] * col[2] - aa[2] * col[1],
                                       aa[2] * col[0] - aa[0] * col[2],
                                       aa[0] * col[1] - aa[1] * col[0]};
        Tensor crm;
        cross_matrix(cr, crm);
        Tensor m({3, 3});
        for (int j = 0; j < 9; ++j) m.v[(size_t)j] = (aa[(size_t)i] * K.v[(size_t)j] + crm.v[(size_t)j]) / theta2;
        (*dR)[(size_t)i] = Tensor({3, 3});
        kern::serial::matmul((*dR)[(size_t)i].data(), m.data(), R.data(), 3, 3, 3, false);
    }
}

Pose Pose::from_axis_angle(const std::array<double, 3>& aa, const std::array<double, 3>& t) {
    Pose p;
    rotation_and_derivs(aa, p.rotation, nullptr);
    p.translation = Tensor({3});
    for (int i = 0; i < 3; ++i) p.translation(i) = t[(size_t)i];
    return p;
}

std::array<double, 3> Pose::log_rotation() const {
    const Tensor& R = rotation;
    const double tr = R(0, 0) + R(1, 1) + R(2, 2);
    double c = std::clamp((tr - 1.0) / 2.0, -1.0, 1.0);
    const double theta = std::acos(c);
    if (theta < 1e-9) return {0, 0, 0};
    const double s = 2.0 * std::sin(theta);
    return {theta * (R(2, 1) - R(1, 2)) / s, theta * (R(0, 2) - R(2, 0)) / s,
            theta * (R(1, 0) - R(0, 1)) / s};
}

Pose Pose::inverse() const {
    Pose p;
    p.rotation = Tensor({3, 3});
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) p.rotation(i, j) = rotation(j, i);
    p.translation = Tensor({3});
    for (int i = 0; i < 3; ++i) {
        double s = 0.0;
        for (int j = 0; j < 3; ++j) s += rotation(j, i) * translation(j);
        p.translation(i) = -s;
    }
    return p;
}

void Pose::validate() const {
    Tensor rtr({3, 3});
    kern::serial::matmul_atb(rtr.data(), rotation.data(), rotation.data(), 3, 3, 3, false);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            const double want = i == j ? 1.0 : 0.0;
            if (std::fabs(rtr(i, j) - want) > 1e-6)
                throw validation_error("pose: rotation not orthonormal");
        }
    const Tensor& R = rotation;
    const double det = R(0, 0) * (R(1, 1) * R(2, 2) - R(1, 2) * R(2, 1)) -
                       R(0, 1) * (R(1, 0) * R(2, 2) - R(1, 2) * R(2, 0)) +
                       R(0, 2) * (R(1, 0) * R(2, 1) - R(1, 1) * R(2, 0));
    if (std::fabs(det - 1.0) > 1e-6) throw validation_error("pose: det(R) != 1");
}

std::array<double, 3> Pose::apply(const std::array<double, 3>& p) const {
    std::array<double, 3> q{};
    for (int i = 0; i < 3; ++i)
        q[(size_t)i] = rotation(i, 0) * p[0] + rotation(i, 1) * p[1] + rotation(i, 2) * p[2] +
                       translation(i);
    return q;
}

// ---------------------------------------------------------------------------

Tensor disp_to_depth(const Tensor& disp, double d_min, double d_max) {
    if (!(0 < d_min && d_min < d_max)) throw config_error("disp_to_depth: need 0 < d_min < d_max");
    if (!disp.all_finite()) throw numeric_error("disp_to_depth: non-finite disparity");
    Tensor out = disp;
    const double a = 1.0 / d_max, b = 1.0 / d_min - 1.0 / d_max;
    for (double& x : out.v) x = 1.0 / (a + b * x);
    return out;
}

ag::Var disp_to_depth(const ag::Var& disp, double d_min, double d_max) {
    if (!(0 < d_min && d_min < d_max)) throw config_error("disp_to_depth: need 0 < d_min < d_max");
    if (!disp->val.all_finite()) throw numeric_error("disp_to_depth: non-finite disparity");
    const double a = 1.0 / d_max, b = 1.0 / d_min - 1.0 / d_max;
    Tensor out = disp->val;
    for (double& x : out.v) x = 1.0 / (a + b * x);
    ag::Var d = disp;
    return ag::make_op(std::move(out), {d}, [d, a, b](ag::Node& n) {
        auto& g = d->ensure_grad();
        for (long long i = 0; i < g.numel(); ++i) {
            const double y = n.val.v[(size_t)i];
            g.v[(size_t)i] += n.grad.v[(size_t)i] * (-b * y * y);
        }
    });
}

Tensor backproject(const Tensor& depth, const CameraIntrinsics& K) {
    if (depth.rank() != 2) throw validation_error("backproject: depth must be [H,W]");
    const int H = depth.dim(0), W = depth.dim(1);
    Tensor pts({H, W, 3});
    for (int v = 0; v < H; ++v)
        for (int u = 0; u < W; ++u) {
            const double d = depth(v, u);
            pts(v, u, 0) = d * (u - K.cx) / K.fx;
            pts(v, u, 1) = d * (v - K.cy) / K.fy;
            pts(v, u, 2) = d;
        }
    return pts;
}

Tensor project(const Tensor& points, const CameraIntrinsics& K, const Pose& pose, Tensor* valid) {
    if (points.rank() != 3 || points.dim(2) != 3)
        throw validation_error("project: points must be [H,W,3]");
    const int H = points.dim(0), W = points.dim(1);
    Tensor px({H, W, 2});
    if (valid) *valid = Tensor({H, W});
    for (int v = 0; v < H; ++v)
        for (int u = 0; u < W; ++u) {
            const std::array<double, 3> p{points(v, u, 0), points(v, u, 1), points(v, u, 2)};
            const auto q = pose.apply(p);
            if (q[2] <= kZMin) {
                px(v, u, 0) = -10.0;
                px(v, u, 1) = -10.0;
                continue;
            }
            px(v, u, 0) = K.fx * q[0] / q[2] + K.cx;
            px(v, u, 1) = K.fy * q[1] / q[2] + K.cy;
            if (valid) (*valid)(v, u) = 1.0;
        }
    return px;
}

std::pair<Tensor, Tensor> warp(const Tensor& src, const Tensor& depth, const Pose& pose,
                               const CameraIntrinsics& K) {
    if (src.rank() != 3) throw validation_error("warp: src must be [C,H,W]");
    const int C = src.dim(0), H = src.dim(1), W = src.dim(2);
    if (depth.dim(0) != H || depth.dim(1) != W || K.width != W || K.height != H)
        throw validation_error("warp: resolution mismatch");
    Tensor valid;
    Tensor grid = project(backproject(depth, K), K, pose, &valid);
    Tensor out({C, H, W});
    kern::bilinear_sample(out.data(), src.data(), C, H, W, grid.data(), H, W);
    Tensor mask({H, W});
    for (int v = 0; v < H; ++v)
        for (int u = 0; u < W; ++u) {
            const double x = grid(v, u, 0), y = grid(v, u, 1);
            mask(v, u) = (valid(v, u) > 0 && x >= -1e-6 && x <= W - 1 + 1e-6 && y >= -1e-6 && y <= H - 1 + 1e-6) ? 1.0
                                                                                          : 0.0;
        }
    return {std::move(out), std::move(mask)};
}

ag::Var reproject_grid(const ag::Var& depth, const ag::Var& pose6, const CameraIntrinsics& K,
                       Tensor* valid_out) {
    if (depth->val.rank() != 2) throw validation_error("reproject_grid: depth must be [H,W]");
    if (pose6->val.numel() != 6) throw validation_error("reproject_grid: pose6 must have 6 values");
    const int H = depth->val.dim(0), W = depth->val.dim(1);
    const std::array<double, 3> aa{pose6->val(0), pose6->val(1), pose6->val(2)};
    Tensor R;
    auto dR = std::make_shared<std::array<Tensor, 3>>();
    rotation_and_derivs(aa, R, dR.get());
    const std::array<double, 3> t{pose6->val(3), pose6->val(4), pose6->val(5)};

    Tensor grid({H, W, 2});
    Tensor valid({H, W});
    // Cache per-pixel camera points and transformed points for backward.
    auto X = std::make_shared<Tensor>(Tensor({H, W, 3}));
    auto Y = std::make_shared<Tensor>(Tensor({H, W, 3}));
    for (int v = 0; v < H; ++v)
        for (int u = 0; u < W; ++u) {
            const double d = depth->val(v, u);
            const std::array<double, 3> r{(u - K.cx) / K.fx, (v - K.cy) / K.fy, 1.0};
            for (int i = 0; i < 3; ++i) (*X)(v, u, i) = d * r[(size_t)i];
            std::array<double, 3> q{};
            for (int i = 0; i < 3; ++i)
                q[(size_t)i] = R(i, 0) * (*X)(v, u, 0) + R(i, 1) * (*X)(v, u, 1) +
                               R(i, 2) * (*X)(v, u, 2) + t[(size_t)i];
            for (int i = 0; i < 3; ++i) (*Y)(v, u, i) = q[(size_t)i];
            if (q[2] <= kZMin) {
                grid(v, u, 0) = -10.0;
                grid(v, u, 1) = -10.0;
                continue;
            }
            grid(v, u, 0) = K.fx * q[0] / q[2] + K.cx;
            grid(v, u, 1) = K.fy * q[1] / q[2] + K.cy;
            valid(v, u) = 1.0;
        }
    if (valid_out) *valid_out = valid;

    Tensor Rc = R;
    Tensor validc = valid;
    ag::Var d = depth;
    ag::Var p6 = pose6;
    return ag::make_op(std::move(grid), {d, p6}, [d, p6, K, Rc, dR, X, Y, validc, H, W](ag::Node& n) {
        double gp[6] = {0, 0, 0, 0, 0, 0};
        const bool want_pose = p6->requires_grad;
        const bool want_depth = d->requires_grad;
        Tensor* gd = want_depth ? &d->ensure_grad() : nullptr;
        for (int v = 0; v < H; ++v)
            for (int u = 0; u < W; ++u) {
                if (validc(v, u) == 0.0) continue;
                const double gx = n.grad(v, u, 0), gy = n.grad(v, u, 1);
                if (gx == 0.0 && gy == 0.0) continue;
                const double yx = (*Y)(v, u, 0), yy = (*Y)(v, u, 1), yz = (*Y)(v, u, 2);
                const double iz = 1.0 / yz;
                // d(px)/dY and d(py)/dY
                const std::array<double, 3> dpx{K.fx * iz, 0.0, -K.fx * yx * iz * iz};
                const std::array<double, 3> dpy{0.0, K.fy * iz, -K.fy * yy * iz * iz};
                std::array<double, 3> gY{};
                for (int i = 0; i < 3; ++i) gY[(size_t)i] = gx * dpx[(size_t)i] + gy * dpy[(size_t)i];
                if (want_depth) {
                    // dY/dd = R * r where X = d * r
                    const std::array<double, 3> r{(u - K.cx) / K.fx, (v - K.cy) / K.fy, 1.0};
                    double s = 0.0;
                    for (int i = 0; i < 3; ++i)
                        s += gY[(size_t)i] *
                             (Rc(i, 0) * r[0] + Rc(i, 1) * r[1] + Rc(i, 2) * r[2]);
                    (*gd)(v, u) += s;
                }
                if (want_pose) {
                    for (int a = 0; a < 3; ++a) {
                        const Tensor& dRa = (*dR)[(size_t)a];
                        double s = 0.0;
                        for (int i = 0; i < 3; ++i)
                            s += gY[(size_t)i] * (dRa(i, 0) * (*X)(v, u, 0) +
                                                  dRa(i, 1) * (*X)(v, u, 1) +
                                                  dRa(i, 2) * (*X)(v, u, 2));
                        gp[a] += s;
                    }
                    for (int i = 0; i < 3; ++i) gp[3 + i] += gY[(size_t)i];
                }
            }
        if (want_pose) {
            auto& g = p6->ensure_grad();
            for (int i = 0; i < 6; ++i) g.v[(size_t)i] += gp[i];
        }
    });
}

std::pair<ag::Var, Tensor> warp(const Tensor& src, const ag::Var& depth, const ag::Var& pose6,
                                const CameraIntrinsics& K) {
    const int C = src.dim(0), H = src.dim(1), W = src.dim(2);
    if (depth->val.dim(0) != H || depth->val.dim(1) != W || K.width != W || K.height != H)
        throw validation_error("warp: resolution mismatch");
    (void)C;
    Tensor valid;
    ag::Var grid = reproject_grid(depth, pose6, K, &valid);
    ag::Var out = ag::grid_sample(src, grid);
    Tensor mask({H, W});
    for (int v = 0; v < H; ++v)
        for (int u = 0; u < W; ++u) {
            const double x = grid->val(v, u, 0), y = grid->val(v, u, 1);
            mask(v, u) = (valid(v, u) > 0 && x >= -1e-6 && x <= W - 1 + 1e-6 && y >= -1e-6 && y <= H - 1 + 1e-6) ? 1.0
                                                                                          : 0.0;
        }
    return {out, std::move(mask)};
}

double psnr(const Tensor& a, const Tensor& b, const Tensor* mask) {
    if (!a.same_shape(b)) throw validation_error("psnr: shape mismatch");
    const int C = a.rank() == 3 ? a.dim(0) : 1;
    const long long M = a.numel() / C;
    double se = 0.0;
    long long cnt = 0;
    for (int c = 0; c < C; ++c)
        for (long long m = 0; m < M; ++m) {
            if (mask && mask->v[(size_t)m] == 0.0) continue;
            const double d = a.v[(size_t)(c * M + m)] - b.v[(size_t)(c * M + m)];
            se += d * d;
            ++cnt;
        }
    if (cnt == 0) return 0.0;
    const double mse = se / (double)cnt;
    if (mse == 0.0) return 99.0;
    return 10.0 * std::log10(1.0 / mse);
}

}  // namespace rpr::geo
