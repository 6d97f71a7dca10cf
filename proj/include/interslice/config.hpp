#pragma once

// TOML <-> StageConfig bridge with schema validation. Unknown keys and type
// mismatches are reported per field so a broken config fails loudly and
// completely, not at the first problem.

#include <cstdlib>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "interslice/toml.hpp"
#include "interslice/train.hpp"

namespace isr {

struct TrainJobConfig {
    StageConfig stage_cfg;
    ModelConfig model = ModelConfig::defaults();
    std::string data_dir;         // stage 1: directory of sequence directories;
                                  // stage 2: directory of volume files
    std::string val_dir;          // stage 2, optional
    std::string input_volume;     // stage 3 subject
    std::string init_checkpoint;  // previous-stage checkpoint (or resume)
    std::string run_dir;
    std::array<int, 2> resize{90, 160};  // stage 1 frame resize (h, w)
};

// Paths may be relative to the data root named by ISR_DATA_ROOT.
inline std::string resolve_data_path(const std::string& p) {
    if (p.empty()) return p;
    std::filesystem::path fp(p);
    if (fp.is_absolute()) return p;
    if (const char* root = std::getenv("ISR_DATA_ROOT")) return (std::filesystem::path(root) / fp).string();
    return p;
}

namespace detail {

struct FieldErrors {
    std::vector<std::string> errs;
    void add(const std::string& field, const std::string& what) {
        errs.push_back(field + ": " + what);
    }
    void raise_if_any() const {
        if (errs.empty()) return;
        std::string msg = "invalid config:";
        for (const auto& e : errs) msg += "\n  - " + e;
        throw config_error(msg);
    }
};

template <typename T, typename Get>
T get_or(const toml::Table& t, const std::string& key, T def, FieldErrors& errs, Get&& get) {
    auto it = t.find(key);
    if (it == t.end()) return def;
    try {
        return get(it->second);
    } catch (const config_error& e) {
        errs.add(key, e.what());
        return def;
    }
}

inline int64_t get_int(const toml::Table& t, const std::string& key, int64_t def, FieldErrors& e) {
    return get_or<int64_t>(t, key, def, e, [](const toml::Value& v) { return v.as_int(); });
}
inline double get_double(const toml::Table& t, const std::string& key, double def, FieldErrors& e) {
    return get_or<double>(t, key, def, e, [](const toml::Value& v) { return v.as_double(); });
}
inline bool get_bool(const toml::Table& t, const std::string& key, bool def, FieldErrors& e) {
    return get_or<bool>(t, key, def, e, [](const toml::Value& v) { return v.as_bool(); });
}
inline std::string get_string(const toml::Table& t, const std::string& key, std::string def,
                              FieldErrors& e) {
    return get_or<std::string>(t, key, std::move(def), e,
                               [](const toml::Value& v) { return v.as_string(); });
}
inline std::vector<int> get_int_array(const toml::Table& t, const std::string& key,
                                      std::vector<int> def, FieldErrors& e) {
    return get_or<std::vector<int>>(t, key, std::move(def), e, [](const toml::Value& v) {
        std::vector<int> out;
        for (const auto& x : v.as_array()) out.push_back(static_cast<int>(x.as_int()));
        return out;
    });
}

inline void check_known_keys(const toml::Table& t, const std::set<std::string>& known,
                             const std::string& scope, FieldErrors& errs) {
    for (const auto& [k, v] : t)
        if (!known.count(k)) errs.add(scope.empty() ? k : scope + "." + k, "unknown key");
}

}  // namespace detail

inline ModelConfig model_config_from_table(const toml::Table& t, detail::FieldErrors& errs) {
    ModelConfig m = ModelConfig::defaults();
    detail::check_known_keys(
        t, {"encoder_channels", "feature_dim", "coord_frequencies", "decoder_widths", "target_params"},
        "model", errs);
    m.encoder_channels = detail::get_int_array(t, "encoder_channels", m.encoder_channels, errs);
    m.feature_dim = static_cast<int>(detail::get_int(t, "feature_dim", m.feature_dim, errs));
    m.coord_frequencies =
        static_cast<int>(detail::get_int(t, "coord_frequencies", m.coord_frequencies, errs));
    m.decoder_widths = detail::get_int_array(t, "decoder_widths", m.decoder_widths, errs);
    m.target_params = detail::get_int(t, "target_params", m.target_params, errs);
    return m;
}

inline TrainJobConfig parse_train_config(const toml::Table& t, Stage stage) {
    detail::FieldErrors errs;
    TrainJobConfig job;
    job.stage_cfg = StageConfig::defaults(stage);
    StageConfig& c = job.stage_cfg;

    detail::check_known_keys(
        t,
        {"stage", "seed", "epochs", "initial_lr", "lr_halving_period", "batch_size", "factor",
         "patch_size", "iterations_per_epoch", "checkpoint_interval", "val_interval",
         "loss_epsilon", "profile", "fwhm_mm", "axis", "patches_per_subject",
         "allow_stage_mismatch", "data_dir", "val_dir", "input", "init_checkpoint", "run_dir",
         "resize", "model"},
        "", errs);

    const std::string stage_str = detail::get_string(t, "stage", stage_name(stage), errs);
    try {
        if (stage_from_string(stage_str) != stage)
            errs.add("stage", "config says '" + stage_str + "' but the subcommand runs " +
                                  stage_name(stage));
    } catch (const config_error& e) {
        errs.add("stage", e.what());
    }

    c.seed = static_cast<uint64_t>(detail::get_int(t, "seed", static_cast<int64_t>(c.seed), errs));
    c.epochs = static_cast<int>(detail::get_int(t, "epochs", c.epochs, errs));
    c.initial_lr = detail::get_double(t, "initial_lr", c.initial_lr, errs);
    c.lr_halving_period =
        static_cast<int>(detail::get_int(t, "lr_halving_period", c.lr_halving_period, errs));
    c.batch_size = static_cast<int>(detail::get_int(t, "batch_size", c.batch_size, errs));
    c.factor = static_cast<int>(detail::get_int(t, "factor", c.factor, errs));
    c.iterations_per_epoch =
        static_cast<int>(detail::get_int(t, "iterations_per_epoch", c.iterations_per_epoch, errs));
    c.checkpoint_interval =
        static_cast<int>(detail::get_int(t, "checkpoint_interval", c.checkpoint_interval, errs));
    c.val_interval = static_cast<int>(detail::get_int(t, "val_interval", c.val_interval, errs));
    c.loss_epsilon = detail::get_double(t, "loss_epsilon", c.loss_epsilon, errs);
    c.patches_per_subject =
        static_cast<int>(detail::get_int(t, "patches_per_subject", c.patches_per_subject, errs));
    c.allow_stage_mismatch =
        detail::get_bool(t, "allow_stage_mismatch", c.allow_stage_mismatch, errs);

    {
        std::vector<int> def;
        if (stage == Stage::VideoPretrain)
            def = {c.patch_size[0], c.patch_size[1]};
        else
            def = {c.patch_size[0], c.patch_size[1], c.patch_size[2]};
        auto ps = detail::get_int_array(t, "patch_size", def, errs);
        if (stage == Stage::VideoPretrain) {
            if (ps.size() != 2)
                errs.add("patch_size", "expected [h, w] for video pre-training");
            else
                c.patch_size = {ps[0], ps[1], 0};
        } else {
            if (ps.size() != 3)
                errs.add("patch_size", "expected [in-plane, in-plane, retained-slices]");
            else
                c.patch_size = {ps[0], ps[1], ps[2]};
        }
    }

    const std::string prof =
        detail::get_string(t, "profile", profile_name(c.profile), errs);
    try {
        c.profile = profile_from_string(prof);
    } catch (const value_error& e) {
        errs.add("profile", e.what());
    }
    c.fwhm_mm = detail::get_double(t, "fwhm_mm", c.fwhm_mm, errs);
    const std::string ax = detail::get_string(t, "axis", axis_name(c.selfsup_axis), errs);
    try {
        c.selfsup_axis = axis_from_string(ax);
    } catch (const value_error& e) {
        errs.add("axis", e.what());
    }

    job.data_dir = resolve_data_path(detail::get_string(t, "data_dir", "", errs));
    job.val_dir = resolve_data_path(detail::get_string(t, "val_dir", "", errs));
    job.input_volume = resolve_data_path(detail::get_string(t, "input", "", errs));
    job.init_checkpoint = resolve_data_path(detail::get_string(t, "init_checkpoint", "", errs));
    job.run_dir = detail::get_string(t, "run_dir", "", errs);
    {
        auto rs = detail::get_int_array(t, "resize", {job.resize[0], job.resize[1]}, errs);
        if (rs.size() != 2)
            errs.add("resize", "expected [h, w]");
        else
            job.resize = {rs[0], rs[1]};
    }

    if (auto it = t.find("model"); it != t.end()) {
        try {
            job.model = model_config_from_table(it->second.as_table(), errs);
        } catch (const config_error& e) {
            errs.add("model", e.what());
        }
    }

    // stage-level requirements
    if (stage == Stage::VideoPretrain && job.data_dir.empty())
        errs.add("data_dir", "required for video pre-training");
    if (stage == Stage::MrFinetune && job.data_dir.empty())
        errs.add("data_dir", "required for supervised fine-tuning");
    if (stage == Stage::SelfsupFinetune && job.input_volume.empty())
        errs.add("input", "required for self-supervised fine-tuning");
    if (job.run_dir.empty()) errs.add("run_dir", "required");

    errs.raise_if_any();
    try {
        c.validate();
        job.model.validate();
    } catch (const config_error& e) {
        throw config_error(std::string("invalid config:\n  - ") + e.what());
    }
    return job;
}

// Fully resolved config (defaults included) for the run-directory echo.
inline toml::Table to_table(const TrainJobConfig& job) {
    const StageConfig& c = job.stage_cfg;
    toml::Table t;
    t["stage"] = stage_name(c.stage);
    t["seed"] = static_cast<int64_t>(c.seed);
    t["epochs"] = c.epochs;
    t["initial_lr"] = c.initial_lr;
    t["lr_halving_period"] = c.lr_halving_period;
    t["batch_size"] = c.batch_size;
    t["factor"] = c.factor;
    {
        toml::Array ps;
        ps.push_back(c.patch_size[0]);
        ps.push_back(c.patch_size[1]);
        if (c.stage != Stage::VideoPretrain) ps.push_back(c.patch_size[2]);
        t["patch_size"] = ps;
    }
    t["iterations_per_epoch"] = c.iterations_per_epoch;
    t["checkpoint_interval"] = c.checkpoint_interval;
    t["val_interval"] = c.val_interval;
    t["loss_epsilon"] = c.loss_epsilon;
    t["profile"] = profile_name(c.profile);
    t["fwhm_mm"] = c.fwhm_mm;
    t["axis"] = axis_name(c.selfsup_axis);
    t["patches_per_subject"] = c.patches_per_subject;
    t["allow_stage_mismatch"] = c.allow_stage_mismatch;
    t["data_dir"] = job.data_dir;
    t["val_dir"] = job.val_dir;
    t["input"] = job.input_volume;
    t["init_checkpoint"] = job.init_checkpoint;
    t["run_dir"] = job.run_dir;
    {
        toml::Array rs;
        rs.push_back(job.resize[0]);
        rs.push_back(job.resize[1]);
        t["resize"] = rs;
    }
    toml::Table m;
    {
        toml::Array enc;
        for (int e : job.model.encoder_channels) enc.push_back(e);
        m["encoder_channels"] = enc;
        m["feature_dim"] = job.model.feature_dim;
        m["coord_frequencies"] = job.model.coord_frequencies;
        toml::Array dec;
        for (int d : job.model.decoder_widths) dec.push_back(d);
        m["decoder_widths"] = dec;
        m["target_params"] = job.model.target_params;
    }
    t["model"] = m;
    return t;
}

}  // namespace isr
