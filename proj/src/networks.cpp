#include "rpr/networks.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "rpr/common.hpp"
#include "rpr/data.hpp"

namespace rpr::net {

Conv2d Conv2d::make(Rng& rng, int ci, int co, int k, int stride, int pad) {
    Conv2d c;
    c.stride = stride;
    c.pad = pad;
    Tensor w({co, ci, k, k});
    const double std = std::sqrt(2.0 / (ci * k * k));
    for (double& x : w.v) x = rng.normal() * std;
    c.w = ag::leaf(std::move(w));
    c.b = ag::leaf(Tensor({co}));
    return c;
}

Linear Linear::make(Rng& rng, int in, int out, bool zero_init) {
    Linear l;
    Tensor w({out, in});
    if (!zero_init) {
        const double std = std::sqrt(2.0 / in);
        for (double& x : w.v) x = rng.normal() * std;
    }
    l.w = ag::leaf(std::move(w));
    l.b = ag::leaf(Tensor({out}));
    return l;
}

// ---------------------------------------------------------------------------
// checkpoint container
// ---------------------------------------------------------------------------

void Checkpoint::save(const std::filesystem::path& p) const {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw io_error("cannot write " + p.string());
    out << "RPRCKPT v1\n";
    out << "step " << step << "\n";
    for (const auto& [k, v] : meta) out << "meta " << k << " " << v << "\n";
    out << "tensors " << tensors.size() << "\n";
    for (const auto& [name, t] : tensors) {
        out << "tensor " << name << " " << t.rank();
        for (int i = 0; i < t.rank(); ++i) out << " " << t.dim(i);
        out << "\n";
        std::vector<float> buf(t.v.size());
        for (size_t i = 0; i < buf.size(); ++i) buf[i] = (float)t.v[i];
        out.write((const char*)buf.data(), (std::streamsize)(buf.size() * sizeof(float)));
    }
    if (!out) throw io_error("short write to " + p.string());
}

Checkpoint Checkpoint::load(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw io_error("cannot open " + p.string());
    std::string line;
    if (!std::getline(in, line) || line != "RPRCKPT v1")
        throw format_error("bad checkpoint magic in " + p.string());
    Checkpoint c;
    size_t n_tensors = 0;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::string tag;
        ls >> tag;
        if (tag == "step") {
            ls >> c.step;
        } else if (tag == "meta") {
            std::string k, v;
            ls >> k >> v;
            c.meta[k] = v;
        } else if (tag == "tensors") {
            ls >> n_tensors;
            break;
        } else {
            throw format_error("unknown checkpoint header line: " + line);
        }
    }
    for (size_t i = 0; i < n_tensors; ++i) {
        if (!std::getline(in, line)) throw format_error("truncated checkpoint " + p.string());
        std::istringstream ls(line);
        std::string tag, name;
        int rank = 0;
        ls >> tag >> name >> rank;
        if (tag != "tensor" || rank < 0 || rank > 4)
            throw format_error("bad tensor header in " + p.string());
        std::vector<int> shape((size_t)rank);
        for (int r = 0; r < rank; ++r)
            if (!(ls >> shape[(size_t)r])) throw format_error("bad tensor shape in " + p.string());
        Tensor t(shape);
        std::vector<float> buf(t.v.size());
        in.read((char*)buf.data(), (std::streamsize)(buf.size() * sizeof(float)));
        if ((size_t)in.gcount() != buf.size() * sizeof(float))
            throw format_error("truncated checkpoint " + p.string());
        for (size_t j = 0; j < buf.size(); ++j) t.v[j] = (double)buf[j];
        c.tensors.emplace_back(name, std::move(t));
    }
    return c;
}

const Tensor* Checkpoint::find(const std::string& name) const {
    for (const auto& [n, t] : tensors)
        if (n == name) return &t;
    return nullptr;
}

namespace {

Checkpoint pack(const ParamMap& pm, std::map<std::string, std::string> meta, long long step) {
    Checkpoint c;
    c.meta = std::move(meta);
    c.step = step;
    for (const auto& [name, var] : pm.items) c.tensors.emplace_back(name, var->val);
    return c;
}

void unpack(const ParamMap& pm, const Checkpoint& c) {
    for (const auto& [name, var] : pm.items) {
        const Tensor* t = c.find(name);
        if (!t) throw format_error("checkpoint missing tensor " + name);
        if (t->shape != var->val.shape)
            throw format_error("checkpoint shape mismatch for " + name);
        var->val = *t;
    }
    if (c.tensors.size() != pm.items.size())
        throw format_error("checkpoint has unexpected extra tensors");
}

std::vector<int> parse_widths(const std::string& s) {
    std::vector<int> out;
    std::istringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) out.push_back(std::stoi(tok));
    if (out.empty()) throw format_error("bad widths list: " + s);
    return out;
}

std::string widths_str(const std::vector<int>& w) {
    std::string s;
    for (size_t i = 0; i < w.size(); ++i) s += (i ? "," : "") + std::to_string(w[i]);
    return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// building blocks
// ---------------------------------------------------------------------------

Encoder Encoder::make(Rng& rng, int in_channels, const std::vector<int>& widths) {
    if (widths.size() != 4) throw config_error("encoder: expected 4 stage widths");
    Encoder e;
    e.in_channels = in_channels;
    e.widths = widths;
    const int strides[4] = {2, 2, 1, 1};
    int ci = in_channels;
    for (int i = 0; i < 4; ++i) {
        e.stages.push_back(Conv2d::make(rng, ci, widths[(size_t)i], 3, strides[i], 1));
        ci = widths[(size_t)i];
    }
    return e;
}

Var Encoder::forward(const Var& image) const {
    if (image->val.rank() != 3 || image->val.dim(0) != in_channels)
        throw validation_error("encoder: bad input channels");
    if (image->val.dim(1) % 4 != 0 || image->val.dim(2) % 4 != 0)
        throw config_error("encoder: resolution not divisible by stride 4");
    Var x = image;
    for (const auto& s : stages) x = ag::elu(s(x));
    return x;
}

void Encoder::params(ParamMap& m, const std::string& prefix) const {
    for (size_t i = 0; i < stages.size(); ++i)
        stages[i].params(m, prefix + ".stage" + std::to_string(i));
}

DepthDecoder DepthDecoder::make(Rng& rng, int in_channels, const std::vector<int>& widths) {
    if (widths.size() != 3) throw config_error("decoder: expected 3 inner widths");
    DepthDecoder d;
    d.widths = widths;
    d.c1 = Conv2d::make(rng, in_channels, widths[0], 3, 1, 1);
    d.c2 = Conv2d::make(rng, widths[0], widths[1], 3, 1, 1);
    d.c3 = Conv2d::make(rng, widths[1], widths[2], 3, 1, 1);
    d.head = Conv2d::make(rng, widths[2], 1, 3, 1, 1);
    // Bias the initial disparity toward mid-range scene depth (~9 m with the
    // default (0.1, 100) conversion) instead of sigmoid(0) = 0.5 -> 0.2 m.
    d.head.b->val.fill(-4.4);
    return d;
}

Var DepthDecoder::forward(const Var& features) const {
    Var x = ag::elu(c1(features));
    x = ag::elu(c2(ag::upsample_nearest2(x)));
    x = ag::elu(c3(ag::upsample_nearest2(x)));
    return ag::sigmoid(head(x));
}

void DepthDecoder::params(ParamMap& m, const std::string& prefix) const {
    c1.params(m, prefix + ".c1");
    c2.params(m, prefix + ".c2");
    c3.params(m, prefix + ".c3");
    head.params(m, prefix + ".head");
}

PoseNet PoseNet::make(Rng& rng, const std::vector<int>& widths) {
    if (widths.size() != 4) throw config_error("pose net: expected 4 stage widths");
    PoseNet p;
    p.widths = widths;
    int ci = 6;
    for (int i = 0; i < 4; ++i) {
        p.stages.push_back(Conv2d::make(rng, ci, widths[(size_t)i], 3, 2, 1));
        ci = widths[(size_t)i];
    }
    p.head = Linear::make(rng, ci, 6, /*zero_init=*/true);
    return p;
}

Var PoseNet::forward(const Var& frame_a, const Var& frame_b) const {
    Var x = ag::concat_ch({frame_a, frame_b});
    for (const auto& s : stages) x = ag::elu(s(x));
    Var pooled = ag::reshape(ag::global_avg_pool(x), {1, widths.back()});
    // Small outputs keep early pose estimates near the identity.
    return ag::reshape(ag::scale(head(pooled), 0.05), {6});
}

void PoseNet::params(ParamMap& m, const std::string& prefix) const {
    for (size_t i = 0; i < stages.size(); ++i)
        stages[i].params(m, prefix + ".stage" + std::to_string(i));
    head.params(m, prefix + ".head");
}

Var encode_image(const Encoder& enc, const Tensor& image) {
    return enc.forward(ag::constant(image));
}

// ---------------------------------------------------------------------------
// teacher
// ---------------------------------------------------------------------------

std::atomic<long long>& teacher_forward_counter() {
    static std::atomic<long long> n{0};
    return n;
}

Tensor teacher_input(const data::ImageTriplet& t) {
    const Tensor& cur = t.frames[1];
    const Tensor& prev = t.frames[0];
    Tensor in({6, cur.dim(1), cur.dim(2)});
    std::memcpy(in.data(), cur.data(), sizeof(double) * cur.v.size());
    std::memcpy(in.data() + cur.v.size(), prev.data(), sizeof(double) * prev.v.size());
    return in;
}

TeacherModel TeacherModel::make(Rng& rng, const std::vector<int>& widths, double min_depth,
                                double max_depth) {
    TeacherModel m;
    m.widths = widths;
    m.min_depth = min_depth;
    m.max_depth = max_depth;
    m.encoder = Encoder::make(rng, 6, widths);
    const int ct = widths.back();
    m.decoder = DepthDecoder::make(rng, ct, {(ct * 3) / 8, (ct * 3) / 16, (ct * 3) / 32});
    m.pose = PoseNet::make(rng, {16, 24, 32, 48});
    return m;
}

ParamMap TeacherModel::params() const {
    ParamMap m;
    encoder.params(m, "encoder");
    decoder.params(m, "decoder");
    pose.params(m, "pose");
    return m;
}

Checkpoint TeacherModel::to_checkpoint() const {
    return pack(params(),
                {{"role", "teacher"},
                 {"widths", widths_str(widths)},
                 {"min_depth", std::to_string(min_depth)},
                 {"max_depth", std::to_string(max_depth)}},
                step);
}

TeacherModel TeacherModel::from_checkpoint(const Checkpoint& c, bool trainable) {
    auto it = c.meta.find("role");
    if (it == c.meta.end() || it->second != "teacher")
        throw format_error("checkpoint is not a teacher model");
    Rng rng(0);
    TeacherModel m = make(rng, parse_widths(c.meta.at("widths")), std::stod(c.meta.at("min_depth")),
                          std::stod(c.meta.at("max_depth")));
    unpack(m.params(), c);
    m.step = c.step;
    m.set_trainable(trainable);
    return m;
}

void TeacherModel::set_trainable(bool on) {
    for (auto& [name, var] : params().items) var->requires_grad = on;
}

Var TeacherModel::encode(const Var& rich_input) const {
    teacher_forward_counter().fetch_add(1, std::memory_order_relaxed);
    return encoder.forward(rich_input);
}

Var TeacherModel::decode(const Var& features) const { return decoder.forward(features); }

Var TeacherModel::estimate_pose6(const Tensor& a, const Tensor& b) const {
    return pose.forward(ag::constant(a), ag::constant(b));
}

Tensor TeacherModel::infer_disp(const data::ImageTriplet& t) const {
    ag::NoGradGuard ng;
    Var d = decode(encode(ag::constant(teacher_input(t))));
    return d->val.reshaped({d->val.dim(1), d->val.dim(2)});
}

Tensor TeacherModel::infer_depth(const data::ImageTriplet& t) const {
    return geo::disp_to_depth(infer_disp(t), min_depth, max_depth);
}

Tensor TeacherModel::features(const data::ImageTriplet& t) const {
    ag::NoGradGuard ng;
    return encode(ag::constant(teacher_input(t)))->val;
}

// ---------------------------------------------------------------------------
// student
// ---------------------------------------------------------------------------

StudentModel StudentModel::make(Rng& rng, const std::vector<int>& widths, int c_t, int heads,
                                double min_depth, double max_depth) {
    StudentModel m;
    m.widths = widths;
    m.c_t = c_t;
    m.heads = heads;
    m.min_depth = min_depth;
    m.max_depth = max_depth;
    m.encoder = Encoder::make(rng, 3, widths);
    const int cs = widths.back();
    m.decoder = DepthDecoder::make(rng, cs, {cs / 2, cs / 4, cs / 8});
    m.conv_m = Conv2d::make(rng, c_t, cs, 1, 1, 0);
    m.pdf = fusion::FusionModule::make(rng, cs, c_t, heads);
    m.pose = PoseNet::make(rng, {16, 24, 32, 48});
    return m;
}

ParamMap StudentModel::params() const {
    ParamMap m;
    encoder.params(m, "encoder");
    decoder.params(m, "decoder");
    conv_m.params(m, "conv_m");
    pdf.params(m, "fusion");
    pose.params(m, "pose");
    return m;
}

Checkpoint StudentModel::to_checkpoint() const {
    return pack(params(),
                {{"role", "student"},
                 {"widths", widths_str(widths)},
                 {"c_t", std::to_string(c_t)},
                 {"heads", std::to_string(heads)},
                 {"min_depth", std::to_string(min_depth)},
                 {"max_depth", std::to_string(max_depth)}},
                step);
}

StudentModel StudentModel::from_checkpoint(const Checkpoint& c, bool trainable) {
    auto it = c.meta.find("role");
    if (it == c.meta.end() || it->second != "student")
        throw format_error("checkpoint is not a student model");
    Rng rng(0);
    StudentModel m =
        make(rng, parse_widths(c.meta.at("widths")), std::stoi(c.meta.at("c_t")),
             std::stoi(c.meta.at("heads")), std::stod(c.meta.at("min_depth")),
             std::stod(c.meta.at("max_depth")));
    unpack(m.params(), c);
    m.step = c.step;
    m.set_trainable(trainable);
    return m;
}

void StudentModel::set_trainable(bool on) {
    for (auto& [name, var] : params().items) var->requires_grad = on;
}

Var StudentModel::encode(const Var& lr_image) const { return encoder.forward(lr_image); }

Var StudentModel::match_dims(const Var& f_r) const {
    if (f_r->val.rank() == 3) {
        if (f_r->val.dim(0) != c_t) throw validation_error("match_dims: expected C_t channels");
        return conv_m(f_r);
    }
    if (f_r->val.rank() == 2) {
        if (f_r->val.dim(1) != c_t) throw validation_error("match_dims: expected C_t columns");
        // 1x1 conv over a row list is a linear map with the same weights.
        Var w2 = ag::reshape(conv_m.w, {c_s(), c_t});
        return ag::add_rowvec(ag::matmul_abt(f_r, w2), conv_m.b);
    }
    throw validation_error("match_dims: rank 2 or 3 expected");
}

Var StudentModel::decode(const Var& features) const { return decoder.forward(features); }

Var StudentModel::estimate_pose6(const Tensor& a, const Tensor& b) const {
    return pose.forward(ag::constant(a), ag::constant(b));
}

}  // namespace rpr::net
