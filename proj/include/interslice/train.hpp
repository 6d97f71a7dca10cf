#pragma once

// Three-stage training: video frame-interpolation pre-training, supervised
// fine-tuning on high-quality volumes with simulated degradation, and
// per-subject self-supervised fine-tuning on the target volume.
//
// Determinism: every epoch draws from a generator seeded by
// (seed, stage, epoch), so a run is reproducible from its config and a
// checkpoint resume continues the exact same trajectory.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "interslice/degrade.hpp"
#include "interslice/infer.hpp"
#include "interslice/metrics.hpp"
#include "interslice/model.hpp"

namespace isr {

enum class Stage { VideoPretrain, MrFinetune, SelfsupFinetune };

inline const char* stage_tag(Stage s) {
    switch (s) {
        case Stage::VideoPretrain: return "video-pretrain";
        case Stage::MrFinetune: return "mr-finetune";
        default: return "selfsup";
    }
}

inline const char* stage_name(Stage s) {
    switch (s) {
        case Stage::VideoPretrain: return "video_pretrain";
        case Stage::MrFinetune: return "mr_finetune";
        default: return "selfsup_finetune";
    }
}

inline Stage stage_from_string(const std::string& s) {
    if (s == "video_pretrain") return Stage::VideoPretrain;
    if (s == "mr_finetune") return Stage::MrFinetune;
    if (s == "selfsup_finetune") return Stage::SelfsupFinetune;
    throw config_error("unknown stage '" + s + "'");
}

// Mean absolute per-pixel difference.
inline scalar l1_loss(const Frame& pred, const Frame& target) {
    require_same_shape(pred, target, "l1_loss");
    double acc = 0.0;
    for (size_t i = 0; i < pred.size(); ++i) acc += std::abs(pred.data()[i] - target.data()[i]);
    return acc / static_cast<double>(pred.size());
}

// Smoothed L1 (Charbonnier) used as the optimization objective; epsilon 0
// degrades to plain L1 with the sign subgradient. Returns the loss and fills
// grad_out with weight * dLoss/dPred.
inline scalar smooth_l1_with_grad(const Frame& pred, const Frame& target, scalar epsilon,
                                  scalar weight, Frame& grad_out) {
    require_same_shape(pred, target, "smooth_l1_with_grad");
    grad_out = Frame(pred.height(), pred.width());
    const scalar inv_n = 1.0 / static_cast<scalar>(pred.size());
    double acc = 0.0;
    for (size_t i = 0; i < pred.size(); ++i) {
        const scalar d = pred.data()[i] - target.data()[i];
        if (epsilon > 0.0) {
            const scalar root = std::sqrt(d * d + epsilon * epsilon);
            acc += root;
            grad_out.data()[i] = weight * inv_n * d / root;
        } else {
            acc += std::abs(d);
            grad_out.data()[i] = weight * inv_n * (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0));
        }
    }
    return acc * inv_n;
}

inline scalar smooth_l1_value(const Frame& pred, const Frame& target, scalar epsilon) {
    require_same_shape(pred, target, "smooth_l1_value");
    double acc = 0.0;
    for (size_t i = 0; i < pred.size(); ++i) {
        const scalar d = pred.data()[i] - target.data()[i];
        acc += epsilon > 0.0 ? std::sqrt(d * d + epsilon * epsilon) : std::abs(d);
    }
    return acc / static_cast<double>(pred.size());
}

struct StageConfig {
    Stage stage = Stage::VideoPretrain;
    int epochs = 1000;
    double initial_lr = 1e-4;
    int lr_halving_period = 200;  // epochs; <= 0 disables halving
    int batch_size = 16;
    int factor = 4;  // downsampling factor n
    // stage 1: [h, w] crop; stages 2/3: [in-plane, in-plane, retained slices]
    std::array<int, 3> patch_size{64, 64, 16};
    int patches_per_subject = 100;  // stage 3
    uint64_t seed = 0;
    int iterations_per_epoch = 0;  // 0 -> dataset size
    int checkpoint_interval = 0;   // epochs between interval checkpoints; 0 -> final only
    int val_interval = 1;          // epochs between validation passes (stage 2)
    double loss_epsilon = 1e-3;    // charbonnier smoothing of the L1 objective
    SliceProfile profile = SliceProfile::Gaussian;  // stage-2 LR simulation
    double fwhm_mm = 0.0;                           // 0 -> factor * source spacing
    Axis selfsup_axis = Axis::X;
    bool allow_stage_mismatch = false;

    static StageConfig defaults(Stage s) {
        StageConfig c;
        c.stage = s;
        switch (s) {
            case Stage::VideoPretrain:
                c.epochs = 1000;
                c.batch_size = 16;
                c.patch_size = {64, 64, 0};
                break;
            case Stage::MrFinetune:
                c.epochs = 1000;
                c.batch_size = 16;
                c.patch_size = {64, 64, 16};
                c.profile = SliceProfile::Gaussian;
                break;
            case Stage::SelfsupFinetune:
                c.epochs = 5;
                c.batch_size = 8;
                c.patch_size = {64, 64, 16};
                c.patches_per_subject = 100;
                c.profile = SliceProfile::None;
                break;
        }
        return c;
    }

    void validate() const {
        if (epochs < 1) throw config_error("StageConfig: epochs must be >= 1");
        if (!(initial_lr > 0.0)) throw config_error("StageConfig: initial_lr must be > 0");
        if (factor < 2) throw config_error("StageConfig: factor must be >= 2");
        if (batch_size < 1) throw config_error("StageConfig: batch_size must be >= 1");
        if (patch_size[0] < 1 || patch_size[1] < 1)
            throw config_error("StageConfig: in-plane patch size must be >= 1");
        if (stage != Stage::VideoPretrain && patch_size[2] < 2)
            throw config_error("StageConfig: retained slice count must be >= 2");
        if (stage == Stage::SelfsupFinetune && patches_per_subject < 1)
            throw config_error("StageConfig: patches_per_subject must be >= 1");
        if (stage == Stage::SelfsupFinetune && selfsup_axis == Axis::Z)
            throw config_error("StageConfig: selfsup axis must be x or y");
    }
};

// initial_lr halved every lr_halving_period epochs.
inline double lr_schedule(int epoch, const StageConfig& cfg) {
    if (epoch < 0) throw value_error("lr_schedule: epoch must be >= 0");
    if (cfg.lr_halving_period <= 0) return cfg.initial_lr;
    return cfg.initial_lr * std::pow(0.5, epoch / cfg.lr_halving_period);
}

class Adam {
public:
    explicit Adam(const ModelConfig& cfg) : m_(cfg), v_(cfg) {}

    void step(ParamSet& params, const ParamSet& grads, double lr) {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (size_t e = 0; e < params.tensor_count(); ++e) {
            auto& p = params.entry(e).data;
            const auto& g = grads.entry(e).data;
            auto& m = m_.entry(e).data;
            auto& v = v_.entry(e).data;
            for (size_t i = 0; i < p.size(); ++i) {
                m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
                v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
                p[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps_);
            }
        }
    }

    ParamSet& m() { return m_; }
    ParamSet& v() { return v_; }
    const ParamSet& m() const { return m_; }
    const ParamSet& v() const { return v_; }
    int64_t steps() const { return t_; }
    void set_steps(int64_t t) { t_ = t; }

private:
    double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
    ParamSet m_, v_;
    int64_t t_ = 0;
};

struct Checkpoint {
    ModelParams params;
    ParamSet adam_m, adam_v;
    int64_t adam_step = 0;
    int epoch = 0;  // completed epochs within params.stage_tag
    double last_loss = 0.0;
    double best_val_psnr = -1.0;

    static Checkpoint fresh(const SRModel& model) {
        Checkpoint c;
        c.params = model.params();
        c.adam_m = ParamSet(model.config());
        c.adam_v = ParamSet(model.config());
        return c;
    }
};

inline void save_checkpoint(const Checkpoint& c, const std::string& path) {
    nlohmann::json meta;
    meta["format"] = "interslice-checkpoint";
    meta["config"] = c.params.config;
    {
        char fp[32];
        std::snprintf(fp, sizeof(fp), "%016llx",
                      static_cast<unsigned long long>(c.params.fingerprint()));
        meta["fingerprint"] = fp;
    }
    meta["stage"] = c.params.stage_tag;
    meta["step"] = c.params.step;
    meta["epoch"] = c.epoch;
    meta["adam_step"] = c.adam_step;
    meta["last_loss"] = c.last_loss;
    meta["best_val_psnr"] = c.best_val_psnr;
    meta["tensors"] = nlohmann::json::array();
    for (size_t i = 0; i < c.params.tensors.tensor_count(); ++i) {
        const auto& e = c.params.tensors.entry(i);
        meta["tensors"].push_back(
            {{"name", e.name}, {"dtype", "f64"}, {"shape", e.shape}, {"count", e.count()}});
    }
    const std::string js = meta.dump();

    std::ofstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot open '" + path + "' for writing");
    f.write("ISRCKPT\1", 8);
    const uint32_t version = 1;
    f.write(reinterpret_cast<const char*>(&version), 4);
    const uint64_t len = js.size();
    f.write(reinterpret_cast<const char*>(&len), 8);
    f.write(js.data(), static_cast<std::streamsize>(js.size()));
    for (const ParamSet* set : {&c.params.tensors, &c.adam_m, &c.adam_v})
        for (size_t i = 0; i < set->tensor_count(); ++i) {
            const auto& e = set->entry(i);
            f.write(reinterpret_cast<const char*>(e.data.data()),
                    static_cast<std::streamsize>(e.count() * sizeof(scalar)));
        }
    if (!f) throw io_error("short write to '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot open '" + path + "' for reading");
    char magic[8];
    f.read(magic, 8);
    if (f.gcount() != 8 || std::memcmp(magic, "ISRCKPT\1", 8) != 0)
        throw format_error("'" + path + "' is not a checkpoint file");
    uint32_t version = 0;
    uint64_t len = 0;
    f.read(reinterpret_cast<char*>(&version), 4);
    f.read(reinterpret_cast<char*>(&len), 8);
    if (!f || version != 1)
        throw format_error("'" + path + "': unsupported checkpoint version");
    if (len > (1ull << 24)) throw format_error("'" + path + "': implausible metadata size");
    std::string js(len, '\0');
    f.read(js.data(), static_cast<std::streamsize>(len));
    if (static_cast<uint64_t>(f.gcount()) != len)
        throw format_error("'" + path + "': truncated metadata");

    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(js);
    } catch (const nlohmann::json::exception& e) {
        throw format_error("'" + path + "': corrupt metadata: " + e.what());
    }
    if (meta.value("format", "") != "interslice-checkpoint")
        throw format_error("'" + path + "': not an interslice checkpoint");

    Checkpoint c;
    c.params.config = meta.at("config").get<ModelConfig>();
    c.params.stage_tag = meta.value("stage", "init");
    c.params.step = meta.value("step", int64_t{0});
    c.epoch = meta.value("epoch", 0);
    c.adam_step = meta.value("adam_step", int64_t{0});
    c.last_loss = meta.value("last_loss", 0.0);
    c.best_val_psnr = meta.value("best_val_psnr", -1.0);
    c.params.tensors = ParamSet(c.params.config);
    c.adam_m = ParamSet(c.params.config);
    c.adam_v = ParamSet(c.params.config);
    for (ParamSet* set : {&c.params.tensors, &c.adam_m, &c.adam_v})
        for (size_t i = 0; i < set->tensor_count(); ++i) {
            auto& e = set->entry(i);
            f.read(reinterpret_cast<char*>(e.data.data()),
                   static_cast<std::streamsize>(e.count() * sizeof(scalar)));
            if (static_cast<size_t>(f.gcount()) != e.count() * sizeof(scalar))
                throw format_error("'" + path + "': truncated payload at '" + e.name + "'");
        }
    return c;
}

// Accepts either a checkpoint or a plain parameter archive.
inline ModelParams load_model_params_any(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot open '" + path + "' for reading");
    char magic[8] = {};
    f.read(magic, 8);
    f.close();
    if (std::memcmp(magic, "ISRCKPT\1", 8) == 0) return load_checkpoint(path).params;
    return load_params(path);
}

// Run directory: loss CSV, echoed config, manifest and checkpoints. Run
// directories are append-only; an existing non-empty directory is refused
// unless force is set.
class RunWriter {
public:
    RunWriter(std::string dir, bool force = false) : dir_(std::move(dir)) {
        namespace fs = std::filesystem;
        if (fs::exists(dir_) && !fs::is_empty(dir_) && !force)
            throw config_error("run directory '" + dir_ + "' already exists; pick a new one or pass --force");
        fs::create_directories(dir_);
        csv_.open(path("loss.csv"));
        if (!csv_) throw io_error("cannot create '" + path("loss.csv") + "'");
        csv_ << "stage,epoch,iter,loss,lr\n";
    }

    std::string path(const std::string& name) const {
        return (std::filesystem::path(dir_) / name).string();
    }
    const std::string& dir() const { return dir_; }

    void echo_config(const std::string& toml_text) {
        std::ofstream f(path("config.toml"));
        f << toml_text;
    }

    void log_row(const char* stage, int epoch, int iter, double loss, double lr) {
        char buf[160];
        std::snprintf(buf, sizeof(buf), "%s,%d,%d,%.17g,%.17g\n", stage, epoch, iter, loss, lr);
        csv_ << buf;
        csv_.flush();
    }

    void note(const std::string& line) {
        std::ofstream f(path("train.log"), std::ios::app);
        f << line << "\n";
        std::cout << line << "\n";
    }

    void set_field(const std::string& key, nlohmann::json value) { manifest_[key] = std::move(value); }

    void write_manifest() {
        std::ofstream f(path("manifest.json"));
        f << manifest_.dump(2) << "\n";
    }

private:
    std::string dir_;
    std::ofstream csv_;
    nlohmann::json manifest_;
};

namespace detail {

// One optimizer batch: accumulates gradients over the samples (already
// weighted by 1/batch) and returns the mean smoothed-L1 loss.
inline scalar train_batch(SRModel& model, const std::vector<InterpolationSample>& batch,
                          scalar epsilon, ParamSet& grads) {
    grads.fill(0.0);
    const scalar w = 1.0 / static_cast<scalar>(batch.size());
    double loss = 0.0;
    for (const auto& s : batch) {
        if (!s.target) throw train_error("train_batch: sample lacks a ground-truth frame");
        SRModel::Trace trace;
        const Frame pred = model.forward_trace(s.left, s.right, s.coord.t, trace);
        Frame grad;
        loss += w * smooth_l1_with_grad(pred, *s.target, epsilon, w, grad);
        model.backward(trace, grad, grads);
    }
    return loss;
}

inline void abort_non_finite(double loss, const char* tag, int epoch, int iter, RunWriter* w) {
    if (std::isfinite(loss)) return;
    const std::string msg = std::string("non-finite loss in stage ") + tag + " at epoch " +
                            std::to_string(epoch) + ", iter " + std::to_string(iter) +
                            "; aborting (last good checkpoint kept on disk)";
    if (w) w->note(msg);
    throw train_error(msg);
}

struct EpochPlan {
    int start_epoch = 0;  // completed epochs so far
    Adam adam;
    explicit EpochPlan(const ModelConfig& cfg) : adam(cfg) {}
};

// Decides between resuming the same stage and starting it fresh from a
// previous stage's weights. Throws on an unexpected provenance unless the
// config allows the mismatch.
inline EpochPlan prepare_stage(SRModel& model, const StageConfig& cfg, const Checkpoint* init,
                               const char* own_tag, const char* expected_prev) {
    EpochPlan plan(model.config());
    if (!init) {
        if (cfg.stage != Stage::VideoPretrain && !cfg.allow_stage_mismatch)
            throw train_error(std::string("stage ") + own_tag +
                              " expects a checkpoint tagged '" + expected_prev +
                              "' (or allow_stage_mismatch)");
        model.params().stage_tag = own_tag;
        return plan;
    }
    if (init->params.config.fingerprint() != model.config().fingerprint())
        throw compat_error("checkpoint model config does not match the training config");
    model.params() = init->params;
    if (init->params.stage_tag == own_tag) {
        // resume
        plan.start_epoch = init->epoch;
        plan.adam.m() = init->adam_m;
        plan.adam.v() = init->adam_v;
        plan.adam.set_steps(init->adam_step);
    } else if (init->params.stage_tag == expected_prev || cfg.allow_stage_mismatch) {
        model.params().stage_tag = own_tag;
    } else {
        throw train_error(std::string("stage ") + own_tag + " expects a checkpoint tagged '" +
                          expected_prev + "', got '" + init->params.stage_tag +
                          "' (set allow_stage_mismatch to override)");
    }
    return plan;
}

inline Checkpoint snapshot(const SRModel& model, const Adam& adam, int epoch, double loss,
                           double best_val) {
    Checkpoint c;
    c.params = model.params();
    c.adam_m = adam.m();
    c.adam_v = adam.v();
    c.adam_step = adam.steps();
    c.epoch = epoch;
    c.last_loss = loss;
    c.best_val_psnr = best_val;
    return c;
}

inline void interval_checkpoint(const Checkpoint& c, const StageConfig& cfg, int epoch,
                                RunWriter* w) {
    if (!w) return;
    save_checkpoint(c, w->path("last.ckpt"));
    if (cfg.checkpoint_interval > 0 && epoch % cfg.checkpoint_interval == 0) {
        char name[32];
        std::snprintf(name, sizeof(name), "epoch_%05d.ckpt", epoch);
        save_checkpoint(c, w->path(name));
    }
}

}  // namespace detail

// Stage 1: video frame-interpolation pre-training. Per sample: draw a 15n+1
// window, keep every n-th frame, crop one shared in-plane window, and train
// the model to predict a random intermediate frame of a random gap.
inline Checkpoint train_stage1(const std::vector<FrameSequence>& seqs, const StageConfig& cfg,
                               SRModel& model, RunWriter* writer = nullptr,
                               const Checkpoint* resume = nullptr) {
    cfg.validate();
    if (seqs.empty()) throw train_error("train_stage1: empty dataset");
    const int n = cfg.factor;
    const int window = subsequence_window_length(n);
    for (const auto& s : seqs) {
        if (s.length() < window)
            throw train_error("train_stage1: sequence '" + s.source_id() + "' has " +
                              std::to_string(s.length()) + " frames; the 15n+1 rule needs >= " +
                              std::to_string(window));
        if (s.height() < cfg.patch_size[0] || s.width() < cfg.patch_size[1])
            throw train_error("train_stage1: sequence '" + s.source_id() +
                              "' is smaller than the crop window");
    }

    auto plan = detail::prepare_stage(model, cfg, resume, stage_tag(Stage::VideoPretrain), "init");
    const int iters = cfg.iterations_per_epoch > 0 ? cfg.iterations_per_epoch
                                                   : static_cast<int>(seqs.size());
    ParamSet grads(model.config());
    std::vector<double> epoch_losses;
    double loss = 0.0;

    for (int epoch = plan.start_epoch; epoch < cfg.epochs; ++epoch) {
        Rng rng(mix_seed(cfg.seed, 101, static_cast<uint64_t>(epoch)));
        const double lr = lr_schedule(epoch, cfg);
        double epoch_loss = 0.0;
        for (int it = 0; it < iters; ++it) {
            std::vector<InterpolationSample> batch;
            batch.reserve(static_cast<size_t>(cfg.batch_size));
            for (int b = 0; b < cfg.batch_size; ++b) {
                const auto& seq = seqs[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(seqs.size()) - 1))];
                const SubsequenceSample sub = sample_subsequence(seq, n, rng);
                const int i0 = static_cast<int>(rng.uniform_int(0, seq.height() - cfg.patch_size[0]));
                const int j0 = static_cast<int>(rng.uniform_int(0, seq.width() - cfg.patch_size[1]));
                const int gap = static_cast<int>(rng.uniform_int(0, 14));
                const int k = static_cast<int>(rng.uniform_int(1, n - 1));
                const auto& gt = sub.groundtruth[static_cast<size_t>(gap * (n - 1) + (k - 1))];
                batch.emplace_back(
                    crop_frame_at(sub.kept[static_cast<size_t>(gap)], i0, j0, cfg.patch_size[0], cfg.patch_size[1]),
                    crop_frame_at(sub.kept[static_cast<size_t>(gap) + 1], i0, j0, cfg.patch_size[0], cfg.patch_size[1]),
                    TargetCoordinate(k, n),
                    crop_frame_at(gt.frame, i0, j0, cfg.patch_size[0], cfg.patch_size[1]));
            }
            loss = detail::train_batch(model, batch, cfg.loss_epsilon, grads);
            detail::abort_non_finite(loss, stage_tag(cfg.stage), epoch, it, writer);
            plan.adam.step(model.params().tensors, grads, lr);
            model.params().step++;
            if (writer) writer->log_row(stage_tag(cfg.stage), epoch, it, loss, lr);
            epoch_loss += loss / iters;
        }
        epoch_losses.push_back(epoch_loss);
        if (writer)
            writer->note("epoch " + std::to_string(epoch + 1) + "/" + std::to_string(cfg.epochs) +
                         " loss " + std::to_string(epoch_loss) + " lr " + std::to_string(lr));
        detail::interval_checkpoint(detail::snapshot(model, plan.adam, epoch + 1, loss, -1.0), cfg,
                                    epoch + 1, writer);
    }

    Checkpoint out = detail::snapshot(model, plan.adam, cfg.epochs, loss, -1.0);
    if (writer) {
        save_checkpoint(out, writer->path("last.ckpt"));
        writer->set_field("stage", stage_name(cfg.stage));
        writer->set_field("stage_tag", out.params.stage_tag);
        writer->set_field("seed", cfg.seed);
        writer->set_field("epochs_run", cfg.epochs - plan.start_epoch);
        writer->set_field("loss_history", epoch_losses);
        writer->set_field("final_loss", out.last_loss);
        writer->write_manifest();
    }
    return out;
}

namespace detail {

// Validation for stage 2: simulate the LR volume, super-resolve it and score
// PSNR against the original (cropped to the reconstructed z-range).
inline double validation_psnr(SRModel& model, const std::vector<Volume>& val,
                              const StageConfig& cfg) {
    if (val.empty()) return -1.0;
    double acc = 0.0;
    for (const auto& hr : val) {
        const double fwhm = cfg.fwhm_mm > 0.0 ? cfg.fwhm_mm : cfg.factor * hr.spacing(Axis::Z);
        const Volume lr = decimate(
            hr, DegradeSpec(Axis::Z, cfg.factor, cfg.profile,
                            cfg.profile == SliceProfile::Gaussian ? fwhm : 0.0));
        const Volume sr = super_resolve(lr, model, cfg.factor);
        const Volume ref = crop_volume_at(hr, {0, 0, 0}, {hr.nx(), hr.ny(), sr.nz()});
        const double p = psnr(ref, sr);
        acc += std::isinf(p) ? 99.0 : p;  // identical reconstruction caps the average
    }
    return acc / static_cast<double>(val.size());
}

}  // namespace detail

// Stage 2: supervised fine-tuning on high-quality volumes. Each sample crops
// an HR patch, simulates its LR counterpart along z, and supervises the
// model with an intermediate HR slice between two retained LR slices.
inline Checkpoint train_stage2(const std::vector<Volume>& hr_volumes,
                               const std::vector<Volume>& val_volumes, const StageConfig& cfg,
                               const Checkpoint* init, SRModel& model,
                               RunWriter* writer = nullptr) {
    cfg.validate();
    if (hr_volumes.empty()) throw train_error("train_stage2: empty dataset");
    const int n = cfg.factor;
    const int hr_z = cfg.patch_size[2] * n;
    for (const auto& v : hr_volumes)
        if (v.nx() < cfg.patch_size[0] || v.ny() < cfg.patch_size[1] || v.nz() < hr_z)
            throw train_error("train_stage2: volume '" + v.subject_id() + "' (" + v.shape_string() +
                              ") is smaller than the required patch " +
                              std::to_string(cfg.patch_size[0]) + "x" +
                              std::to_string(cfg.patch_size[1]) + "x" + std::to_string(hr_z));

    auto plan = detail::prepare_stage(model, cfg, init, stage_tag(Stage::MrFinetune),
                                      stage_tag(Stage::VideoPretrain));
    const int iters = cfg.iterations_per_epoch > 0 ? cfg.iterations_per_epoch
                                                   : static_cast<int>(hr_volumes.size());
    ParamSet grads(model.config());
    std::vector<double> epoch_losses;
    double loss = 0.0;
    double best_val = init ? init->best_val_psnr : -1.0;

    for (int epoch = plan.start_epoch; epoch < cfg.epochs; ++epoch) {
        Rng rng(mix_seed(cfg.seed, 202, static_cast<uint64_t>(epoch)));
        const double lr = lr_schedule(epoch, cfg);
        double epoch_loss = 0.0;
        for (int it = 0; it < iters; ++it) {
            std::vector<InterpolationSample> batch;
            batch.reserve(static_cast<size_t>(cfg.batch_size));
            for (int b = 0; b < cfg.batch_size; ++b) {
                const auto& vol = hr_volumes[static_cast<size_t>(
                    rng.uniform_int(0, static_cast<int64_t>(hr_volumes.size()) - 1))];
                const Volume hr_patch =
                    crop_patch(vol, {cfg.patch_size[0], cfg.patch_size[1], hr_z}, rng);
                const double fwhm =
                    cfg.fwhm_mm > 0.0 ? cfg.fwhm_mm : n * vol.spacing(Axis::Z);
                const Volume lr_patch = decimate(
                    hr_patch, DegradeSpec(Axis::Z, n, cfg.profile,
                                          cfg.profile == SliceProfile::Gaussian ? fwhm : 0.0));
                const int j = static_cast<int>(rng.uniform_int(0, lr_patch.nz() - 2));
                const int k = static_cast<int>(rng.uniform_int(1, n - 1));
                batch.emplace_back(extract_slice(lr_patch, Axis::Z, j),
                                   extract_slice(lr_patch, Axis::Z, j + 1), TargetCoordinate(k, n),
                                   extract_slice(hr_patch, Axis::Z, j * n + k));
            }
            loss = detail::train_batch(model, batch, cfg.loss_epsilon, grads);
            detail::abort_non_finite(loss, stage_tag(cfg.stage), epoch, it, writer);
            plan.adam.step(model.params().tensors, grads, lr);
            model.params().step++;
            if (writer) writer->log_row(stage_tag(cfg.stage), epoch, it, loss, lr);
            epoch_loss += loss / iters;
        }
        epoch_losses.push_back(epoch_loss);

        std::string val_note;
        if (!val_volumes.empty() && cfg.val_interval > 0 &&
            ((epoch + 1) % cfg.val_interval == 0 || epoch + 1 == cfg.epochs)) {
            const double vp = detail::validation_psnr(model, val_volumes, cfg);
            val_note = " val_psnr " + std::to_string(vp);
            if (vp > best_val) {
                best_val = vp;
                if (writer)
                    save_checkpoint(detail::snapshot(model, plan.adam, epoch + 1, loss, best_val),
                                    writer->path("best.ckpt"));
            }
        }
        if (writer)
            writer->note("epoch " + std::to_string(epoch + 1) + "/" + std::to_string(cfg.epochs) +
                         " loss " + std::to_string(epoch_loss) + " lr " + std::to_string(lr) +
                         val_note);
        detail::interval_checkpoint(detail::snapshot(model, plan.adam, epoch + 1, loss, best_val),
                                    cfg, epoch + 1, writer);
    }

    Checkpoint out = detail::snapshot(model, plan.adam, cfg.epochs, loss, best_val);
    if (writer) {
        save_checkpoint(out, writer->path("last.ckpt"));
        writer->set_field("stage", stage_name(cfg.stage));
        writer->set_field("stage_tag", out.params.stage_tag);
        writer->set_field("seed", cfg.seed);
        writer->set_field("epochs_run", cfg.epochs - plan.start_epoch);
        writer->set_field("loss_history", epoch_losses);
        writer->set_field("final_loss", out.last_loss);
        writer->set_field("best_val_psnr", best_val);
        writer->write_manifest();
    }
    return out;
}

// Stage 3: per-subject self-supervised fine-tuning. Builds {volume, volume
// downsampled along x (or y)}, extracts a fixed set of aligned patches, and
// fine-tunes all parameters on adjacent-slice pairs along the degraded axis.
inline Checkpoint train_stage3(const Volume& subject_lr, const StageConfig& cfg,
                               const Checkpoint* init, SRModel& model,
                               RunWriter* writer = nullptr) {
    cfg.validate();
    const auto t_start = std::chrono::steady_clock::now();
    const int n = cfg.factor;
    const Axis axis = cfg.selfsup_axis;

    const SelfsupPair pair = build_selfsup_pair(subject_lr, n, axis, cfg.profile, cfg.fwhm_mm);
    if (pair.anisotropy_warning && writer) writer->note("warning: " + pair.warning);

    // patch extents in the reference volume; the degraded axis needs
    // patch_size[2] retained slices
    const int retained = cfg.patch_size[2];
    const int axis_need = retained * n;
    std::array<int, 3> ref_size{};
    if (axis == Axis::X)
        ref_size = {axis_need, cfg.patch_size[0], cfg.patch_size[1]};
    else
        ref_size = {cfg.patch_size[0], axis_need, cfg.patch_size[1]};
    const std::array<int, 3> ext{subject_lr.nx(), subject_lr.ny(), subject_lr.nz()};
    for (int a = 0; a < 3; ++a)
        if (ref_size[a] > ext[a])
            throw train_error("train_stage3: subject volume " + subject_lr.shape_string() +
                              " is too small; patches need at least " + std::to_string(ref_size[0]) +
                              "x" + std::to_string(ref_size[1]) + "x" + std::to_string(ref_size[2]));

    auto plan = detail::prepare_stage(model, cfg, init, stage_tag(Stage::SelfsupFinetune),
                                      stage_tag(Stage::MrFinetune));

    // the fixed patch set is part of the stage seed, not the epoch seeds
    struct Patch {
        Volume input;  // retained slices along the degraded axis
        Volume reference;
    };
    std::vector<Patch> patches;
    {
        Rng rng(mix_seed(cfg.seed, 303, 0xBA5E));
        const int ax = static_cast<int>(axis);
        for (int p = 0; p < cfg.patches_per_subject; ++p) {
            std::array<int, 3> corner{};
            for (int a = 0; a < 3; ++a) {
                if (a == ax) {
                    const int max_u = (ext[a] - ref_size[a]) / n;
                    corner[a] = n * static_cast<int>(rng.uniform_int(0, max_u));
                } else {
                    corner[a] = static_cast<int>(rng.uniform_int(0, ext[a] - ref_size[a]));
                }
            }
            std::array<int, 3> in_corner = corner;
            std::array<int, 3> in_size = ref_size;
            in_corner[ax] = corner[ax] / n;
            in_size[ax] = retained;
            patches.push_back({crop_volume_at(pair.input, in_corner, in_size),
                               crop_volume_at(pair.reference, corner, ref_size)});
        }
    }
    if (writer) {
        writer->note("selfsup: extracted " + std::to_string(patches.size()) + " patches from '" +
                     subject_lr.subject_id() + "'");
        writer->set_field("patches_extracted", patches.size());
    }

    ParamSet grads(model.config());
    std::vector<double> epoch_losses;
    double loss = 0.0;

    for (int epoch = plan.start_epoch; epoch < cfg.epochs; ++epoch) {
        Rng rng(mix_seed(cfg.seed, 303, static_cast<uint64_t>(epoch) + 1));
        const double lr = lr_schedule(epoch, cfg);

        // shuffled pass over every patch
        std::vector<int> order(patches.size());
        std::iota(order.begin(), order.end(), 0);
        for (size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(i) - 1))]);

        double epoch_loss = 0.0;
        int it = 0;
        for (size_t off = 0; off < order.size(); off += static_cast<size_t>(cfg.batch_size), ++it) {
            std::vector<InterpolationSample> batch;
            const size_t hi = std::min(order.size(), off + static_cast<size_t>(cfg.batch_size));
            for (size_t b = off; b < hi; ++b) {
                const Patch& p = patches[static_cast<size_t>(order[b])];
                const int j = static_cast<int>(rng.uniform_int(0, retained - 2));
                const int k = static_cast<int>(rng.uniform_int(1, n - 1));
                batch.emplace_back(extract_slice(p.input, axis, j),
                                   extract_slice(p.input, axis, j + 1), TargetCoordinate(k, n),
                                   extract_slice(p.reference, axis, j * n + k));
            }
            loss = detail::train_batch(model, batch, cfg.loss_epsilon, grads);
            detail::abort_non_finite(loss, stage_tag(cfg.stage), epoch, it, writer);
            plan.adam.step(model.params().tensors, grads, lr);
            model.params().step++;
            if (writer) writer->log_row(stage_tag(cfg.stage), epoch, it, loss, lr);
            epoch_loss += loss;
        }
        epoch_losses.push_back(epoch_loss / std::max(1, it));
        if (writer)
            writer->note("epoch " + std::to_string(epoch + 1) + "/" + std::to_string(cfg.epochs) +
                         " loss " + std::to_string(epoch_losses.back()) + " lr " + std::to_string(lr));
        detail::interval_checkpoint(detail::snapshot(model, plan.adam, epoch + 1, loss, -1.0), cfg,
                                    epoch + 1, writer);
    }

    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    Checkpoint out = detail::snapshot(model, plan.adam, cfg.epochs, loss, -1.0);
    if (writer) {
        save_checkpoint(out, writer->path("last.ckpt"));
        writer->note("selfsup fine-tuning took " + std::to_string(elapsed) + " s");
        writer->set_field("stage", stage_name(cfg.stage));
        writer->set_field("stage_tag", out.params.stage_tag);
        writer->set_field("seed", cfg.seed);
        writer->set_field("epochs_run", cfg.epochs - plan.start_epoch);
        writer->set_field("loss_history", epoch_losses);
        writer->set_field("final_loss", out.last_loss);
        writer->set_field("elapsed_seconds", elapsed);
        writer->write_manifest();
    }
    return out;
}

}  // namespace isr
