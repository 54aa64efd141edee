#include "rpr/train.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "rpr/common.hpp"
#include "rpr/fusion.hpp"
#include "rpr/losses.hpp"

namespace rpr::train {

// ---------------------------------------------------------------------------
// config
// ---------------------------------------------------------------------------

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw config_error("config: bad boolean for " + key + ": " + v);
}

std::vector<int> parse_int_list(const std::string& v) {
    std::vector<int> out;
    std::istringstream ss(v);
    std::string tok;
    while (std::getline(ss, tok, ',')) out.push_back(std::stoi(trim(tok)));
    return out;
}

std::string int_list_str(const std::vector<int>& xs) {
    std::string s;
    for (size_t i = 0; i < xs.size(); ++i) s += (i ? "," : "") + std::to_string(xs[i]);
    return s;
}

}  // namespace

void TrainConfig::validate() const {
    if (lr_width < 16 || lr_height < 16 || lr_width % 4 != 0 || lr_height % 4 != 0)
        throw config_error("config: lr resolution must be >= 16 and divisible by stride 4");
    if (rr_scale < 2 || rr_scale > 4) throw config_error("config: rr_scale must be in {2,3,4}");
    if (batch_size < 1) throw config_error("config: batch_size must be positive");
    if (!(learning_rate > 0)) throw config_error("config: learning_rate must be positive");
    if (!(lr_decay > 0 && lr_decay <= 1) || !(lr_decay_at > 0 && lr_decay_at <= 1))
        throw config_error("config: lr decay parameters out of range");
    if (alpha < 0 || beta < 0) throw config_error("config: loss weights must be non-negative");
    if (bank_cap < 1) throw config_error("config: bank_cap must be positive");
    if (!(pixel_fraction > 0 && pixel_fraction <= 1))
        throw config_error("config: pixel_fraction must be in (0,1]");
    if (agfs_k < 0) throw config_error("config: agfs_k must be >= 0");
    if (epochs_teacher < 0 || epochs_student < 0 || epochs_finetune < 0)
        throw config_error("config: epoch counts must be >= 0");
    if (heads < 1 || student_channels.size() != 4 || teacher_channels.size() != 4)
        throw config_error("config: bad network architecture fields");
    if (student_channels.back() % heads != 0)
        throw config_error("config: heads must divide the student feature width");
    if (!(0 < min_depth && min_depth < max_depth))
        throw config_error("config: need 0 < min_depth < max_depth");
}

TrainConfig TrainConfig::load(const std::filesystem::path& p) {
    std::ifstream in(p);
    if (!in) throw io_error("cannot open config " + p.string());
    TrainConfig c;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto h = line.find('#'); h != std::string::npos) line = line.substr(0, h);
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw config_error("config: missing '=' at line " + std::to_string(lineno));
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        try {
            if (key == "seed") c.seed = (uint64_t)std::stoull(val);
            else if (key == "data_root") c.data_root = val;
            else if (key == "output_dir") c.output_dir = val;
            else if (key == "lr_width") c.lr_width = std::stoi(val);
            else if (key == "lr_height") c.lr_height = std::stoi(val);
            else if (key == "rr_scale") c.rr_scale = std::stoi(val);
            else if (key == "batch_size") c.batch_size = std::stoi(val);
            else if (key == "learning_rate") c.learning_rate = std::stod(val);
            else if (key == "lr_decay") c.lr_decay = std::stod(val);
            else if (key == "lr_decay_at") c.lr_decay_at = std::stod(val);
            else if (key == "alpha") c.alpha = std::stod(val);
            else if (key == "beta") c.beta = std::stod(val);
            else if (key == "bank_cap") c.bank_cap = std::stoi(val);
            else if (key == "pixel_fraction") c.pixel_fraction = std::stod(val);
            else if (key == "agfs_k") c.agfs_k = std::stoi(val);
            else if (key == "epochs_teacher") c.epochs_teacher = std::stoi(val);
            else if (key == "epochs_student") c.epochs_student = std::stoi(val);
            else if (key == "epochs_finetune") c.epochs_finetune = std::stoi(val);
            else if (key == "heads") c.heads = std::stoi(val);
            else if (key == "student_channels") c.student_channels = parse_int_list(val);
            else if (key == "teacher_channels") c.teacher_channels = parse_int_list(val);
            else if (key == "use_bank") c.use_bank = parse_bool(val, key);
            else if (key == "use_rgl") c.use_rgl = parse_bool(val, key);
            else if (key == "use_gt_poses") c.use_gt_poses = parse_bool(val, key);
            else if (key == "min_depth") c.min_depth = std::stod(val);
            else if (key == "max_depth") c.max_depth = std::stod(val);
            else throw config_error("config: unknown key '" + key + "'");
        } catch (const config_error&) {
            throw;
        } catch (const std::exception&) {
            throw config_error("config: bad value for " + key + ": " + val);
        }
    }
    c.validate();
    return c;
}

void TrainConfig::save(const std::filesystem::path& p) const {
    std::ofstream out(p);
    if (!out) throw io_error("cannot write config " + p.string());
    out << "seed = " << seed << "\n";
    out << "data_root = " << data_root << "\n";
    out << "output_dir = " << output_dir << "\n";
    out << "lr_width = " << lr_width << "\n";
    out << "lr_height = " << lr_height << "\n";
    out << "rr_scale = " << rr_scale << "\n";
    out << "batch_size = " << batch_size << "\n";
    out << "learning_rate = " << learning_rate << "\n";
    out << "lr_decay = " << lr_decay << "\n";
    out << "lr_decay_at = " << lr_decay_at << "\n";
    out << "alpha = " << alpha << "\n";
    out << "beta = " << beta << "\n";
    out << "bank_cap = " << bank_cap << "\n";
    out << "pixel_fraction = " << pixel_fraction << "\n";
    out << "agfs_k = " << agfs_k << "\n";
    out << "epochs_teacher = " << epochs_teacher << "\n";
    out << "epochs_student = " << epochs_student << "\n";
    out << "epochs_finetune = " << epochs_finetune << "\n";
    out << "heads = " << heads << "\n";
    out << "student_channels = " << int_list_str(student_channels) << "\n";
    out << "teacher_channels = " << int_list_str(teacher_channels) << "\n";
    out << "use_bank = " << (use_bank ? "true" : "false") << "\n";
    out << "use_rgl = " << (use_rgl ? "true" : "false") << "\n";
    out << "use_gt_poses = " << (use_gt_poses ? "true" : "false") << "\n";
    out << "min_depth = " << min_depth << "\n";
    out << "max_depth = " << max_depth << "\n";
}

// ---------------------------------------------------------------------------
// optimizer
// ---------------------------------------------------------------------------

Adam::Adam(const net::ParamMap& pm) {
    for (const auto& [name, var] : pm.items) {
        params.push_back(var);
        m.push_back(Tensor::zeros(var->val.shape));
        v.push_back(Tensor::zeros(var->val.shape));
    }
}

void Adam::zero_grad() {
    for (auto& p : params) p->zero_grad();
}

void Adam::step(double lr) {
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, (double)t);
    const double bc2 = 1.0 - std::pow(beta2, (double)t);
    for (size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i];
        if (p->grad.v.empty()) continue;
        for (size_t j = 0; j < p->val.v.size(); ++j) {
            const double g = p->grad.v[j];
            m[i].v[j] = beta1 * m[i].v[j] + (1 - beta1) * g;
            v[i].v[j] = beta2 * v[i].v[j] + (1 - beta2) * g * g;
            const double mh = m[i].v[j] / bc1;
            const double vh = v[i].v[j] / bc2;
            p->val.v[j] -= lr * mh / (std::sqrt(vh) + eps);
        }
    }
}

// ---------------------------------------------------------------------------
// training loops
// ---------------------------------------------------------------------------

namespace {

ag::Var pose6_for(const net::PoseNet& pose, const data::ImageTriplet& t, int source_index,
                  bool use_gt) {
    if (use_gt) {
        if (!t.gt_poses) throw validation_error("use_gt_poses set but triplet has no gt poses");
        const geo::Pose& p = (*t.gt_poses)[source_index == 0 ? 0 : 1];
        const auto aa = p.log_rotation();
        Tensor p6({6});
        for (int i = 0; i < 3; ++i) {
            p6(i) = aa[(size_t)i];
            p6(3 + i) = p.translation(i);
        }
        return ag::constant(p6);
    }
    return pose.forward(ag::constant(t.frames[1]), ag::constant(t.frames[(size_t)source_index]));
}

double decayed_lr(const TrainConfig& cfg, int epoch, int total_epochs) {
    const bool past = (double)epoch >= cfg.lr_decay_at * (double)total_epochs;
    return cfg.learning_rate * (past ? cfg.lr_decay : 1.0);
}

struct BankView {
    Tensor raw;     // [rows, C_t]
    Tensor depths;  // [rows]
};

BankView bank_rows(const bank::ReferenceBank& b, const std::vector<int>& idx) {
    BankView v;
    const int K = (int)idx.size(), ct = b.c_t();
    v.raw = Tensor({K, ct});
    v.depths = Tensor({K});
    for (int j = 0; j < K; ++j) {
        const int i = idx[(size_t)j];
        std::copy(&b.features_raw.v[(size_t)i * ct], &b.features_raw.v[(size_t)(i + 1) * ct],
                  &v.raw.v[(size_t)j * ct]);
        v.depths(j) = b.depths(i);
    }
    return v;
}

}  // namespace

net::TeacherModel train_teacher(const TrainConfig& cfg, const data::Dataset& train_split,
                                EpochStats* stats) {
    cfg.validate();
    if (train_split.size() == 0) throw validation_error("train_teacher: empty train split");
    Rng init = Rng::derive(cfg.seed, 1);
    net::TeacherModel model =
        net::TeacherModel::make(init, cfg.teacher_channels, cfg.min_depth, cfg.max_depth);
    Adam opt(model.params());

    loss::ReconstructionOptions ropt;
    ropt.d_min = cfg.min_depth;
    ropt.d_max = cfg.max_depth;
    std::map<std::string, Tensor> id_min_cache;
    const int n = (int)train_split.size();
    for (int epoch = 0; epoch < cfg.epochs_teacher; ++epoch) {
        std::vector<int> order((size_t)n);
        for (int i = 0; i < n; ++i) order[(size_t)i] = i;
        Rng shuf = Rng::derive(cfg.seed, 100 + (uint64_t)epoch);
        shuf.shuffle(order);
        const double lr = decayed_lr(cfg, epoch, cfg.epochs_teacher);
        double epoch_loss = 0;
        int steps = 0;
        for (int bi = 0; bi < n; bi += cfg.batch_size) {
            opt.zero_grad();
            ag::Var batch_loss = ag::constant(Tensor::scalar(0.0));
            int bn = 0;
            for (int k = bi; k < std::min(n, bi + cfg.batch_size); ++k, ++bn) {
                data::ImageTriplet t = train_split.get((size_t)order[(size_t)k]);
                auto [it, fresh] = id_min_cache.try_emplace(t.id);
                if (fresh)
                    it->second = loss::identity_error_min(t.frames[0], t.frames[2], t.rr_target);
                ropt.id_min = &it->second;
                ag::Var disp = model.decode(model.encode(ag::constant(net::teacher_input(t))));
                std::array<ag::Var, 2> poses = {pose6_for(model.pose, t, 0, cfg.use_gt_poses),
                                                pose6_for(model.pose, t, 2, cfg.use_gt_poses)};
                auto rec = loss::reconstruction_loss(disp, {&t.frames[0], &t.frames[2]},
                                                     t.rr_target, poses, t.intrinsics_rr, ropt);
                batch_loss = ag::add(batch_loss, rec.total);
            }
            ag::Var lv = ag::scale(batch_loss, 1.0 / bn);
            if (!std::isfinite(lv->val.v[0]))
                throw numeric_error("train_teacher: non-finite reconstruction loss");
            ag::backward(lv);
            opt.step(lr);
            model.step += 1;
            epoch_loss += lv->val.v[0];
            ++steps;
        }
        if (stats) stats->epoch_mean_loss.push_back(epoch_loss / std::max(1, steps));
    }
    return model;
}

namespace {

struct StudentStepOutput {
    ag::Var loss;
    loss::LossBreakdown breakdown;
};

StudentStepOutput student_item_loss(const net::StudentModel& model, const TrainConfig& cfg,
                                    const data::ImageTriplet& t, const Tensor* d_p,
                                    const bank::ReferenceBank* b, const std::vector<int>* rows,
                                    const Tensor* id_min) {
    ag::Var fs = model.encode(ag::constant(t.lr_target));
    const int hf = fs->val.dim(1), wf = fs->val.dim(2);
    ag::Var fs_mc = ag::chw_to_mc(fs);
    ag::Var f_o = fs;
    ag::Var d_c;
    if (b) {
        BankView view = rows ? bank_rows(*b, *rows) : BankView{b->features_raw, b->depths};
        ag::Var raw = ag::constant(view.raw);
        ag::Var depths = ag::constant(view.depths);
        ag::Var fr = model.match_dims(raw);
        ag::Var aff = fusion::compute_affinity(fs_mc, fr);
        fusion::MhaOutput mha = model.pdf.depth_hint_attention(fs_mc, raw);
        fusion::ConstructedReference cr = fusion::construct_reference(aff, raw, depths);
        f_o = model.pdf.fuse(fs_mc, mha.f_d, cr.f_c, cr.d_c, hf, wf);
        d_c = cr.d_c;
    }
    ag::Var disp = model.decode(f_o);

    loss::ReconstructionOptions ropt;
    ropt.d_min = cfg.min_depth;
    ropt.d_max = cfg.max_depth;
    ropt.id_min = id_min;
    std::array<ag::Var, 2> poses = {pose6_for(model.pose, t, 0, cfg.use_gt_poses),
                                    pose6_for(model.pose, t, 2, cfg.use_gt_poses)};
    auto rec = loss::reconstruction_loss(disp, {&t.frames[0], &t.frames[2]}, t.rr_target, poses,
                                         t.intrinsics_rr, ropt);

    ag::Var l_c, l_aux;
    if (cfg.use_rgl) {
        if (!d_p) throw validation_error("student training with RGL requires pseudo labels");
        l_c = loss::consistency_loss(rec.depth_rr, *d_p);
    }
    if (b) {
        if (!d_p) throw validation_error("student training with a bank requires pseudo labels");
        l_aux = loss::auxiliary_loss(d_c, hf, wf, *d_p);
    }
    StudentStepOutput out;
    out.loss = loss::total_loss(rec.total, l_c, l_aux, cfg.alpha, cfg.beta, &out.breakdown);
    return out;
}

void run_student_epochs(net::StudentModel& model, const TrainConfig& cfg,
                        const data::Dataset& train_split, const data::PseudoLabelStore* pseudo,
                        const bank::ReferenceBank* b, int epochs, bool subsample_bank,
                        uint64_t stream_base, EpochStats* stats) {
    Adam opt(model.params());
    std::map<std::string, Tensor> id_min_cache;
    const int n = (int)train_split.size();
    for (int epoch = 0; epoch < epochs; ++epoch) {
        std::vector<int> order((size_t)n);
        for (int i = 0; i < n; ++i) order[(size_t)i] = i;
        Rng shuf = Rng::derive(cfg.seed, stream_base + (uint64_t)epoch);
        shuf.shuffle(order);
        Rng row_rng = Rng::derive(cfg.seed, stream_base + 5000 + (uint64_t)epoch);
        const double lr = decayed_lr(cfg, epoch, epochs);
        double epoch_loss = 0;
        int steps = 0;
        for (int bi = 0; bi < n; bi += cfg.batch_size) {
            opt.zero_grad();
            ag::Var batch_loss = ag::constant(Tensor::scalar(0.0));
            int bn = 0;
            for (int k = bi; k < std::min(n, bi + cfg.batch_size); ++k, ++bn) {
                data::ImageTriplet t = train_split.get((size_t)order[(size_t)k]);
                auto [it, fresh] = id_min_cache.try_emplace(t.id);
                if (fresh)
                    it->second = loss::identity_error_min(t.frames[0], t.frames[2], t.rr_target);
                const Tensor* d_p = nullptr;
                if (pseudo && pseudo->has(t.id)) d_p = &pseudo->get(t.id);
                std::vector<int> rows;
                std::vector<int>* rows_ptr = nullptr;
                if (b && subsample_bank && b->rows() > cfg.bank_cap) {
                    rows = row_rng.sample_without_replacement(b->rows(), cfg.bank_cap);
                    rows_ptr = &rows;
                }
                auto item = student_item_loss(model, cfg, t, d_p, b, rows_ptr, &it->second);
                batch_loss = ag::add(batch_loss, item.loss);
            }
            ag::Var lv = ag::scale(batch_loss, 1.0 / bn);
            if (!std::isfinite(lv->val.v[0]))
                throw numeric_error("train_student: non-finite total loss");
            ag::backward(lv);
            opt.step(lr);
            model.step += 1;
            epoch_loss += lv->val.v[0];
            ++steps;
        }
        if (stats) stats->epoch_mean_loss.push_back(epoch_loss / std::max(1, steps));
    }
}

}  // namespace

net::StudentModel train_student(const TrainConfig& cfg, const data::Dataset& train_split,
                                const data::PseudoLabelStore* pseudo,
                                const bank::ReferenceBank* b, EpochStats* stats) {
    cfg.validate();
    if (train_split.size() == 0) throw validation_error("train_student: empty train split");
    if (cfg.use_bank && !b)
        throw validation_error("train_student: config requests a bank but none was provided");
    if ((cfg.use_bank || cfg.use_rgl) && !pseudo)
        throw validation_error("train_student: pseudo labels required before student training");
    const bank::ReferenceBank* use = cfg.use_bank ? b : nullptr;
    Rng init = Rng::derive(cfg.seed, 2);
    net::StudentModel model = net::StudentModel::make(
        init, cfg.student_channels, use ? use->c_t() : cfg.teacher_channels.back(), cfg.heads,
        cfg.min_depth, cfg.max_depth);
    run_student_epochs(model, cfg, train_split, pseudo, use, cfg.epochs_student,
                       /*subsample_bank=*/true, 200, stats);
    return model;
}

void finetune_with_selected_bank(net::StudentModel& student, const bank::ReferenceBank& selected,
                                 const TrainConfig& cfg, const data::Dataset& train_split,
                                 const data::PseudoLabelStore* pseudo, EpochStats* stats) {
    cfg.validate();
    if (!selected.selected)
        throw validation_error("finetune: bank must be AGFS-selected (selected flag unset)");
    if (student.step <= 0)
        throw validation_error("finetune: student must be trained before fine-tuning");
    run_student_epochs(student, cfg, train_split, pseudo, &selected, cfg.epochs_finetune,
                       /*subsample_bank=*/false, 300, stats);
}

}  // namespace rpr::train
