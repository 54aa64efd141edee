#include "rpr/refbank.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "rpr/common.hpp"
#include "rpr/data.hpp"
#include "rpr/fusion.hpp"
#include "rpr/kernels.hpp"
#include "rpr/networks.hpp"
#include "rpr/rng.hpp"

namespace rpr::bank {

void ReferenceBank::validate() const {
    const int R = rows();
    if (R <= 0) throw validation_error("bank: R must be > 0");
    if (features_matched.dim(0) != R || depths.dim(0) != R || (int)provenance.size() != R)
        throw validation_error("bank: parallel arrays disagree on R");
    if (!features_raw.all_finite() || !features_matched.all_finite() || !depths.all_finite())
        throw validation_error("bank: non-finite values");
    for (double d : depths.v)
        if (d <= 0) throw validation_error("bank: depths must be > 0");
}

long long bank_rows_for(int n_images, int pixels_per_image, double fraction) {
    const long long per = (long long)std::ceil(fraction * (double)pixels_per_image);
    return per * n_images;
}

ReferenceBank sample_reference_bank(const net::TeacherModel& teacher,
                                    const data::Dataset& ref_split, double pixel_fraction,
                                    uint64_t seed, int c_s) {
    if (!(pixel_fraction > 0.0 && pixel_fraction <= 1.0))
        throw config_error("sample_reference_bank: pixel_fraction must be in (0,1]");
    if (ref_split.size() == 0) throw config_error("sample_reference_bank: empty ref split");
    if (c_s < 1) throw config_error("sample_reference_bank: c_s must be >= 1");

    const int c_t = teacher.c_t();
    std::vector<double> raw, depths;
    std::vector<ReferenceBank::Prov> prov;
    for (size_t i = 0; i < ref_split.size(); ++i) {
        data::ImageTriplet t = ref_split.get(i);
        Tensor f = teacher.features(t);  // [C_t, Hf, Wf]
        const int Hf = f.dim(1), Wf = f.dim(2), M = Hf * Wf;
        Tensor depth = teacher.infer_depth(t);  // rich resolution
        const int stride = depth.dim(0) / Hf;
        Tensor dpool({1, Hf, Wf});
        kern::downsample_box(dpool.data(), depth.data(), 1, depth.dim(0), depth.dim(1), stride);

        const int k = (int)std::ceil(pixel_fraction * M);
        Rng rng = Rng::derive(seed, (uint64_t)i);
        std::vector<int> pick = rng.sample_without_replacement(M, k);
        std::sort(pick.begin(), pick.end());
        for (int m : pick) {
            for (int c = 0; c < c_t; ++c) raw.push_back((double)(float)f.v[(size_t)c * M + m]);
            depths.push_back((double)(float)dpool.v[(size_t)m]);
            prov.push_back({(uint32_t)i, (uint16_t)(m / Wf), (uint16_t)(m % Wf)});
        }
    }
    ReferenceBank b;
    const int R = (int)prov.size();
    b.features_raw = Tensor({R, c_t});
    std::copy(raw.begin(), raw.end(), b.features_raw.v.begin());
    b.depths = Tensor({R});
    std::copy(depths.begin(), depths.end(), b.depths.v.begin());
    b.features_matched = Tensor({R, c_s});  // zeros until refresh_matched
    b.provenance = std::move(prov);
    b.selected = false;
    b.validate();
    return b;
}

void refresh_matched(ReferenceBank& b, const net::StudentModel& student) {
    ag::NoGradGuard ng;
    ag::Var matched = student.match_dims(ag::constant(b.features_raw));
    b.features_matched = matched->val;
    b.features_matched.round_f32();
}

Tensor accumulate_weights(const Tensor& affinity, const std::vector<Tensor>& mha_weights) {
    if (affinity.rank() != 2) throw validation_error("accumulate_weights: affinity must be [M,R]");
    const int M = affinity.dim(0), R = affinity.dim(1);
    if (mha_weights.empty()) throw validation_error("accumulate_weights: no attention maps");
    for (const auto& h : mha_weights)
        if (h.rank() != 2 || h.dim(0) != M || h.dim(1) != R)
            throw validation_error("accumulate_weights: attention map shape mismatch");
    auto check_rows = [&](const Tensor& t, const char* what) {
        for (int m = 0; m < M; ++m) {
            double s = 0.0;
            for (int r = 0; r < R; ++r) s += t(m, r);
            if (std::fabs(s - 1.0) > 1e-5)
                throw validation_error(std::string(what) + ": rows must sum to 1");
        }
    };
    check_rows(affinity, "accumulate_weights: affinity");
    for (const auto& h : mha_weights) check_rows(h, "accumulate_weights: mha");

    Tensor out({R});
    const double hin = 1.0 / (double)mha_weights.size();
    for (int m = 0; m < M; ++m) {
        for (int r = 0; r < R; ++r) {
            double mh = 0.0;
            for (const auto& h : mha_weights) mh += h(m, r);
            out(r) += affinity(m, r) + hin * mh;
        }
    }
    for (double& x : out.v) x /= (double)M;
    return out;
}

WeightVector average_over_validation(const net::StudentModel& model, const ReferenceBank& b,
                                     const data::Dataset& val_split) {
    if (val_split.size() == 0) throw config_error("average_over_validation: empty val split");
    ag::NoGradGuard ng;
    ag::Var raw = ag::constant(b.features_raw);
    ag::Var matched = model.match_dims(raw);
    Tensor acc({b.rows()});
    for (size_t i = 0; i < val_split.size(); ++i) {
        data::ImageTriplet t = val_split.get(i);
        ag::Var fs = ag::chw_to_mc(model.encode(ag::constant(t.lr_target)));
        ag::Var aff = fusion::compute_affinity(fs, matched);
        fusion::MhaOutput mha = model.pdf.depth_hint_attention(fs, raw);
        Tensor w = accumulate_weights(aff->val, mha.head_maps);
        for (long long j = 0; j < acc.numel(); ++j) acc.v[(size_t)j] += w.v[(size_t)j];
    }
    WeightVector out;
    out.n_samples = (int)val_split.size();
    for (double& x : acc.v) x /= (double)out.n_samples;
    out.values = std::move(acc);
    return out;
}

std::vector<int> select_top_k(const WeightVector& w, int k) {
    const int R = (int)w.values.numel();
    if (k < 1 || k > R) throw validation_error("select_top_k: k out of range");
    std::vector<int> idx((size_t)R);
    for (int i = 0; i < R; ++i) idx[(size_t)i] = i;
    std::sort(idx.begin(), idx.end(), [&](int a, int b) {
        const double wa = w.values(a), wb = w.values(b);
        if (wa != wb) return wa > wb;
        return a < b;
    });
    idx.resize((size_t)k);
    return idx;
}

ReferenceBank compress_bank(const ReferenceBank& b, const std::vector<int>& indices) {
    const int R = b.rows();
    std::vector<char> seen((size_t)R, 0);
    for (int i : indices) {
        if (i < 0 || i >= R) throw validation_error("compress_bank: index out of range");
        if (seen[(size_t)i]) throw validation_error("compress_bank: duplicate indices");
        seen[(size_t)i] = 1;
    }
    ReferenceBank out;
    const int K = (int)indices.size();
    out.features_raw = Tensor({K, b.c_t()});
    out.features_matched = Tensor({K, b.c_s()});
    out.depths = Tensor({K});
    out.provenance.resize((size_t)K);
    for (int j = 0; j < K; ++j) {
        const int i = indices[(size_t)j];
        std::memcpy(&out.features_raw.v[(size_t)j * b.c_t()], &b.features_raw.v[(size_t)i * b.c_t()],
                    sizeof(double) * (size_t)b.c_t());
        std::memcpy(&out.features_matched.v[(size_t)j * b.c_s()],
                    &b.features_matched.v[(size_t)i * b.c_s()], sizeof(double) * (size_t)b.c_s());
        out.depths(j) = b.depths(i);
        out.provenance[(size_t)j] = b.provenance[(size_t)i];
    }
    out.selected = true;
    out.validate();
    return out;
}

// ---------------------------------------------------------------------------
// bank file: RPRB magic, u32 version, u32 R, u32 C_t, u32 C_s, u8 selected,
// then f32 features_raw / features_matched / depths, then provenance records.
// ---------------------------------------------------------------------------

namespace {
struct ProvRecord {
    uint32_t image;
    uint16_t row, col;
};
static_assert(sizeof(ProvRecord) == 8);

template <typename T>
void put(std::ofstream& out, T v) {
    out.write((const char*)&v, sizeof(T));
}
}  // namespace

void save_bank(const ReferenceBank& b, const std::filesystem::path& path) {
    b.validate();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot write " + path.string());
    out.write("RPRB", 4);
    put<uint32_t>(out, 1);
    put<uint32_t>(out, (uint32_t)b.rows());
    put<uint32_t>(out, (uint32_t)b.c_t());
    put<uint32_t>(out, (uint32_t)b.c_s());
    put<uint8_t>(out, b.selected ? 1 : 0);
    auto write_f32 = [&](const Tensor& t) {
        std::vector<float> buf(t.v.size());
        for (size_t i = 0; i < buf.size(); ++i) buf[i] = (float)t.v[i];
        out.write((const char*)buf.data(), (std::streamsize)(buf.size() * sizeof(float)));
    };
    write_f32(b.features_raw);
    write_f32(b.features_matched);
    write_f32(b.depths);
    for (const auto& p : b.provenance) {
        ProvRecord r{p.image, p.row, p.col};
        out.write((const char*)&r, sizeof(r));
    }
    if (!out) throw io_error("short write to " + path.string());
}

ReferenceBank load_bank(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (in.gcount() != 4 || std::memcmp(magic, "RPRB", 4) != 0)
        throw format_error("bad bank magic in " + path.string());
    uint32_t version = 0, R = 0, ct = 0, cs = 0;
    uint8_t selected = 0;
    in.read((char*)&version, 4);
    in.read((char*)&R, 4);
    in.read((char*)&ct, 4);
    in.read((char*)&cs, 4);
    in.read((char*)&selected, 1);
    if (!in || version != 1) throw format_error("unsupported bank version in " + path.string());
    if (R == 0) throw format_error("bank with R = 0 in " + path.string());
    ReferenceBank b;
    b.selected = selected != 0;
    auto read_f32 = [&](std::vector<int> shape) {
        Tensor t(std::move(shape));
        std::vector<float> buf(t.v.size());
        in.read((char*)buf.data(), (std::streamsize)(buf.size() * sizeof(float)));
        if ((size_t)in.gcount() != buf.size() * sizeof(float))
            throw format_error("truncated bank file " + path.string());
        for (size_t i = 0; i < buf.size(); ++i) t.v[i] = (double)buf[i];
        return t;
    };
    b.features_raw = read_f32({(int)R, (int)ct});
    b.features_matched = read_f32({(int)R, (int)cs});
    b.depths = read_f32({(int)R});
    b.provenance.resize(R);
    for (uint32_t i = 0; i < R; ++i) {
        ProvRecord r;
        in.read((char*)&r, sizeof(r));
        if ((size_t)in.gcount() != sizeof(r))
            throw format_error("truncated bank file " + path.string());
        b.provenance[i] = {r.image, r.row, r.col};
    }
    char extra;
    if (in.read(&extra, 1); in.gcount() != 0)
        throw format_error("trailing bytes in bank file " + path.string());
    b.validate();
    return b;
}

}  // namespace rpr::bank
