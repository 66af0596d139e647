#include "cascade/experiment.hpp"

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "cascade/common.hpp"
#include "cascade/rng.hpp"
#include "cascade/svg.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace cascade {

namespace {

constexpr const char* kVersion = "0.1.0";

// --- config ------------------------------------------------------------------

void check_keys(const json& j, const std::string& ctx, std::initializer_list<const char*> allowed) {
    if (!j.is_object()) throw ConfigError("config: '" + ctx + "' must be a JSON object");
    for (const auto& [key, _] : j.items()) {
        bool ok = false;
        for (const char* a : allowed)
            if (key == a) {
                ok = true;
                break;
            }
        if (!ok) throw ConfigError("config: unknown key '" + ctx + "." + key + "'");
    }
}

FitBudget budget_from_json(const json& j, const std::string& ctx, const FitBudget& def) {
    check_keys(j, ctx, {"max_epochs", "patience", "lr0", "batch_size"});
    FitBudget b = def;
    b.max_epochs = j.value("max_epochs", def.max_epochs);
    b.patience = j.value("patience", def.patience);
    b.lr0 = j.value("lr0", def.lr0);
    b.batch_size = j.value("batch_size", def.batch_size);
    return b;
}

json budget_to_json(const FitBudget& b) {
    return json{{"max_epochs", b.max_epochs},
                {"patience", b.patience},
                {"lr0", b.lr0},
                {"batch_size", b.batch_size}};
}

void validate_config(const ExperimentConfig& c) {
    if (c.folds < 2) throw ConfigError("config: folds must be at least 2");
    if (c.seeds.empty()) throw ConfigError("config: seeds must not be empty");
    if (c.protocols.empty()) throw ConfigError("config: protocols must not be empty");
    for (const auto& p : c.protocols) parse_protocol(p);
    if (c.threads < 1) throw ConfigError("config: threads must be positive");
    if (c.data.image_size == 0 || c.data.image_size % 16 != 0)
        throw ConfigError("config: data.image_size must be a positive multiple of 16");
    if (c.pretrain.slices < 2) throw ConfigError("config: pretrain.slices must be at least 2");
    if (c.pretrain.lesion_fraction < 0.0 || c.pretrain.lesion_fraction > 1.0)
        throw ConfigError("config: pretrain.lesion_fraction must be in [0,1]");
    if (c.pretrain.val_fraction <= 0.0 || c.pretrain.val_fraction >= 1.0)
        throw ConfigError("config: pretrain.val_fraction must be in (0,1)");
    if (c.finetune.val_fraction <= 0.0 || c.finetune.val_fraction >= 1.0)
        throw ConfigError("config: finetune.val_fraction must be in (0,1)");
    if (c.model.base_filters == 0) throw ConfigError("config: model.base_filters must be positive");
}

}  // namespace

ExperimentConfig default_config() { return ExperimentConfig{}; }

ExperimentConfig config_from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config JSON parse failure: ") + e.what());
    }
    check_keys(j, "<root>", {"out_dir", "threads", "folds", "seeds", "protocols", "data",
                             "pretrain", "finetune", "model", "augment", "roi_margin"});
    ExperimentConfig c;
    c.out_dir = j.value("out_dir", c.out_dir);
    c.threads = j.value("threads", c.threads);
    c.folds = j.value("folds", c.folds);
    if (j.contains("seeds")) c.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
    if (j.contains("protocols")) c.protocols = j["protocols"].get<std::vector<std::string>>();
    c.roi_margin = j.value("roi_margin", c.roi_margin);

    if (j.contains("data")) {
        const json& d = j["data"];
        check_keys(d, "data", {"image_size", "healthy", "cysts", "hemangiomas", "metastases",
                               "seed", "slices_per_subject"});
        c.data.image_size = d.value("image_size", c.data.image_size);
        c.data.healthy = d.value("healthy", c.data.healthy);
        c.data.cysts = d.value("cysts", c.data.cysts);
        c.data.hemangiomas = d.value("hemangiomas", c.data.hemangiomas);
        c.data.metastases = d.value("metastases", c.data.metastases);
        c.data.seed = d.value("seed", c.data.seed);
        c.data.slices_per_subject = d.value("slices_per_subject", c.data.slices_per_subject);
    }
    if (j.contains("pretrain")) {
        const json& p = j["pretrain"];
        check_keys(p, "pretrain",
                   {"slices", "lesion_fraction", "seed", "val_fraction", "liver", "lesion"});
        c.pretrain.slices = p.value("slices", c.pretrain.slices);
        c.pretrain.lesion_fraction = p.value("lesion_fraction", c.pretrain.lesion_fraction);
        c.pretrain.seed = p.value("seed", c.pretrain.seed);
        c.pretrain.val_fraction = p.value("val_fraction", c.pretrain.val_fraction);
        if (p.contains("liver"))
            c.pretrain.liver = budget_from_json(p["liver"], "pretrain.liver", c.pretrain.liver);
        if (p.contains("lesion"))
            c.pretrain.lesion = budget_from_json(p["lesion"], "pretrain.lesion", c.pretrain.lesion);
    }
    if (j.contains("finetune")) {
        const json& f = j["finetune"];
        check_keys(f, "finetune", {"lr0", "epochs_per_phase", "patience", "val_fraction",
                                   "batch_size", "cumulative_freezing"});
        c.finetune.lr0 = f.value("lr0", c.finetune.lr0);
        c.finetune.epochs_per_phase = f.value("epochs_per_phase", c.finetune.epochs_per_phase);
        c.finetune.patience = f.value("patience", c.finetune.patience);
        c.finetune.val_fraction = f.value("val_fraction", c.finetune.val_fraction);
        c.finetune.batch_size = f.value("batch_size", c.finetune.batch_size);
        c.finetune.cumulative_freezing =
            f.value("cumulative_freezing", c.finetune.cumulative_freezing);
    }
    if (j.contains("model")) {
        check_keys(j["model"], "model", {"base_filters"});
        c.model.base_filters = j["model"].value("base_filters", c.model.base_filters);
    }
    if (j.contains("augment")) {
        const json& a = j["augment"];
        check_keys(a, "augment",
                   {"rotate_deg", "zoom_lo", "zoom_hi", "shift_frac", "flip_prob", "noise_sigma",
                    "intensity_scale_lo", "intensity_scale_hi", "intensity_shift"});
        c.augment.rotate_deg = a.value("rotate_deg", c.augment.rotate_deg);
        c.augment.zoom_lo = a.value("zoom_lo", c.augment.zoom_lo);
        c.augment.zoom_hi = a.value("zoom_hi", c.augment.zoom_hi);
        c.augment.shift_frac = a.value("shift_frac", c.augment.shift_frac);
        c.augment.flip_prob = a.value("flip_prob", c.augment.flip_prob);
        c.augment.noise_sigma = a.value("noise_sigma", c.augment.noise_sigma);
        c.augment.intensity_scale_lo = a.value("intensity_scale_lo", c.augment.intensity_scale_lo);
        c.augment.intensity_scale_hi = a.value("intensity_scale_hi", c.augment.intensity_scale_hi);
        c.augment.intensity_shift = a.value("intensity_shift", c.augment.intensity_shift);
    }
    validate_config(c);
    return c;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file " + path);
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return config_from_json_text(text);
}

std::string config_to_json_text(const ExperimentConfig& c) {
    json j;
    j["out_dir"] = c.out_dir;
    j["threads"] = c.threads;
    j["folds"] = c.folds;
    j["seeds"] = c.seeds;
    j["protocols"] = c.protocols;
    j["roi_margin"] = c.roi_margin;
    j["data"] = json{{"image_size", c.data.image_size},
                     {"healthy", c.data.healthy},
                     {"cysts", c.data.cysts},
                     {"hemangiomas", c.data.hemangiomas},
                     {"metastases", c.data.metastases},
                     {"seed", c.data.seed},
                     {"slices_per_subject", c.data.slices_per_subject}};
    j["pretrain"] = json{{"slices", c.pretrain.slices},
                         {"lesion_fraction", c.pretrain.lesion_fraction},
                         {"seed", c.pretrain.seed},
                         {"val_fraction", c.pretrain.val_fraction},
                         {"liver", budget_to_json(c.pretrain.liver)},
                         {"lesion", budget_to_json(c.pretrain.lesion)}};
    j["finetune"] = json{{"lr0", c.finetune.lr0},
                         {"epochs_per_phase", c.finetune.epochs_per_phase},
                         {"patience", c.finetune.patience},
                         {"val_fraction", c.finetune.val_fraction},
                         {"batch_size", c.finetune.batch_size},
                         {"cumulative_freezing", c.finetune.cumulative_freezing}};
    j["model"] = json{{"base_filters", c.model.base_filters}};
    j["augment"] = json{{"rotate_deg", c.augment.rotate_deg},
                        {"zoom_lo", c.augment.zoom_lo},
                        {"zoom_hi", c.augment.zoom_hi},
                        {"shift_frac", c.augment.shift_frac},
                        {"flip_prob", c.augment.flip_prob},
                        {"noise_sigma", c.augment.noise_sigma},
                        {"intensity_scale_lo", c.augment.intensity_scale_lo},
                        {"intensity_scale_hi", c.augment.intensity_scale_hi},
                        {"intensity_shift", c.augment.intensity_shift}};
    return j.dump(2);
}

std::string config_hash_hex(const ExperimentConfig& cfg) {
    const std::uint64_t h = hash_str(config_to_json_text(cfg));
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// --- shared paths / plumbing ---------------------------------------------------

namespace {

fs::path target_dir(const ExperimentConfig& c) { return fs::path(c.out_dir) / "data" / "target"; }
fs::path pretrain_data_dir(const ExperimentConfig& c) {
    return fs::path(c.out_dir) / "data" / "pretrain";
}
fs::path liver_ckpt_dir(const ExperimentConfig& c) {
    return fs::path(c.out_dir) / "pretrain" / "liver_fcn";
}
fs::path lesion_ckpt_dir(const ExperimentConfig& c) {
    return fs::path(c.out_dir) / "pretrain" / "lesion_fcn";
}
fs::path cell_dir(const ExperimentConfig& c, const std::string& protocol, int fold,
                  std::uint64_t seed) {
    return fs::path(c.out_dir) / "cells" / protocol /
           ("fold" + std::to_string(fold) + "_seed" + std::to_string(seed));
}

void write_text(const fs::path& path, const std::string& text) {
    fs::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot write " + path.string());
    f << text;
}

void write_run_manifest(const ExperimentConfig& cfg, const std::string& command) {
    json j{{"command", command},
           {"version", kVersion},
           {"config_hash", config_hash_hex(cfg)},
           {"seeds", cfg.seeds},
           {"config", json::parse(config_to_json_text(cfg))}};
    write_text(fs::path(cfg.out_dir) / ("run_manifest_" + command + ".json"), j.dump(2) + "\n");
}

PhantomSpec target_phantom_spec(const ExperimentConfig& c) {
    PhantomSpec ps;
    ps.image_size = c.data.image_size;
    ps.healthy = c.data.healthy;
    ps.cysts = c.data.cysts;
    ps.hemangiomas = c.data.hemangiomas;
    ps.metastases = c.data.metastases;
    ps.seed = c.data.seed;
    ps.slices_per_subject = c.data.slices_per_subject;
    ps.collapse_lesions = false;
    return ps;
}

PhantomSpec pretrain_phantom_spec(const ExperimentConfig& c) {
    PhantomSpec ps;
    ps.image_size = c.data.image_size;
    const int lesioned = static_cast<int>(c.pretrain.slices * c.pretrain.lesion_fraction);
    ps.healthy = c.pretrain.slices - lesioned;
    ps.cysts = (lesioned + 2) / 3;
    ps.hemangiomas = (lesioned + 1) / 3;
    ps.metastases = lesioned / 3;
    ps.seed = c.pretrain.seed;
    ps.collapse_lesions = true;
    return ps;
}

/// Deterministic stratified train/val role assignment per subject.
void assign_roles(SliceDataset& ds, double val_fraction, std::uint64_t seed) {
    std::map<int, std::vector<std::string>> by_class;
    std::map<std::string, int> cls_of;
    for (const auto& s : ds.samples)
        if (!cls_of.count(s.subject_id)) {
            cls_of[s.subject_id] = s.lesion_class;
            by_class[s.lesion_class].push_back(s.subject_id);
        }
    std::map<std::string, std::string> role_of;
    for (auto& [cls, ids] : by_class) {
        Rng rng(mix64(seed, 0x726f6c65ULL, static_cast<std::uint64_t>(cls)));
        rng.shuffle(ids);
        const std::size_t n_val =
            std::max<std::size_t>(1, static_cast<std::size_t>(
                                         std::floor(val_fraction * static_cast<double>(ids.size()) + 0.5)));
        for (std::size_t i = 0; i < ids.size(); ++i)
            role_of[ids[i]] = i < n_val ? "val" : "train";
    }
    for (auto& s : ds.samples) s.role = role_of[s.subject_id];
}

struct TargetContext {
    SliceDataset target;
    FoldSplit folds;
    UNet<float> liver_model;
    NormStats liver_stats;
    std::string lesion_ckpt;
    std::map<std::string, RoiBox> boxes;  // per-subject union boxes (all subjects)
    UNetConfig model_config;
};

NormStats stats_from_extra(const std::string& extra_json, const std::string& what) {
    const json e = json::parse(extra_json);
    if (!e.contains("stats"))
        throw IoError(what + ": checkpoint is missing normalization stats metadata");
    return NormStats{e["stats"].at("mean").get<double>(), e["stats"].at("std").get<double>()};
}

json stats_to_json(const NormStats& st) { return json{{"mean", st.mean}, {"std", st.stddev}}; }

TargetContext load_target_context(const ExperimentConfig& cfg) {
    if (!dataset_exists(target_dir(cfg).string()))
        throw ConfigError("target dataset missing; run gen-data first (out dir '" + cfg.out_dir +
                          "')");
    if (!checkpoint_exists(liver_ckpt_dir(cfg).string()) ||
        !checkpoint_exists(lesion_ckpt_dir(cfg).string()))
        throw ConfigError("pretrained checkpoints missing; run pretrain first (out dir '" +
                          cfg.out_dir + "')");

    TargetContext ctx;
    ctx.target = read_dataset(target_dir(cfg).string()).data;
    ctx.folds = make_folds(ctx.target, cfg.folds, cfg.data.seed);
    auto liver = load_checkpoint(liver_ckpt_dir(cfg).string());
    ctx.liver_model = std::move(liver.model);
    ctx.liver_stats = stats_from_extra(liver.extra_json, "liver checkpoint");
    ctx.lesion_ckpt = lesion_ckpt_dir(cfg).string();
    ctx.boxes = subject_roi_boxes(ctx.liver_model, ctx.target.samples, ctx.liver_stats,
                                  cfg.roi_margin);
    ctx.model_config = UNetConfig{1, cfg.model.base_filters, 5, 3, cfg.data.image_size, 0};
    return ctx;
}

struct FoldSplitSamples {
    std::vector<Sample> train;  // training portion (excludes val)
    std::vector<Sample> val;
    std::vector<Sample> test;
};

/// Fold -> test; remaining subjects split into train/val deterministically
/// (keyed by data seed and fold only, so every protocol/seed sees the same
/// split).
FoldSplitSamples split_fold(const ExperimentConfig& cfg, const SliceDataset& ds,
                            const FoldSplit& folds, int fold) {
    if (fold < 0 || fold >= static_cast<int>(folds.fold_subjects.size()))
        throw ConfigError("fold index " + std::to_string(fold) + " out of range 0.." +
                          std::to_string(folds.fold_subjects.size() - 1));
    std::vector<std::string> pool;
    for (std::size_t f = 0; f < folds.fold_subjects.size(); ++f)
        if (static_cast<int>(f) != fold)
            pool.insert(pool.end(), folds.fold_subjects[f].begin(), folds.fold_subjects[f].end());
    Rng rng(mix64(cfg.data.seed, 0x76616c73ULL, static_cast<std::uint64_t>(fold)));
    rng.shuffle(pool);
    const std::size_t n_val = std::max<std::size_t>(
        1, static_cast<std::size_t>(
               std::floor(cfg.finetune.val_fraction * static_cast<double>(pool.size()) + 0.5)));
    std::map<std::string, char> role;  // t/v/x
    for (std::size_t i = 0; i < pool.size(); ++i) role[pool[i]] = i < n_val ? 'v' : 't';
    for (const auto& id : folds.fold_subjects[fold]) role[id] = 'x';

    FoldSplitSamples out;
    for (const auto& s : ds.samples) {
        switch (role.at(s.subject_id)) {
            case 't': out.train.push_back(s); break;
            case 'v': out.val.push_back(s); break;
            default: out.test.push_back(s); break;
        }
    }
    if (out.train.empty() || out.val.empty() || out.test.empty())
        throw ValueError("fold split produced an empty train/val/test portion");
    return out;
}

}  // namespace

// --- commands -------------------------------------------------------------------

void cmd_gen_data(const ExperimentConfig& cfg, bool force) {
    const fs::path tdir = target_dir(cfg), pdir = pretrain_data_dir(cfg);
    if (!force && (dataset_exists(tdir.string()) || dataset_exists(pdir.string())))
        throw ConfigError("datasets already exist under '" + (fs::path(cfg.out_dir) / "data").string() +
                          "'; pass --force to overwrite");

    SliceDataset target = synth_generate(target_phantom_spec(cfg));
    write_dataset(target, tdir.string());
    log_info("gen-data: wrote " + std::to_string(target.samples.size()) + " target slices to " +
             tdir.string());

    SliceDataset pre = synth_generate(pretrain_phantom_spec(cfg));
    assign_roles(pre, cfg.pretrain.val_fraction, cfg.pretrain.seed);
    const NormStats stats = compute_liver_stats(samples_with_role(pre.samples, "train"));
    write_dataset(pre, pdir.string(), stats);
    log_info("gen-data: wrote " + std::to_string(pre.samples.size()) + " pretraining slices to " +
             pdir.string());
    write_run_manifest(cfg, "gen-data");
}

void cmd_pretrain(const ExperimentConfig& cfg) {
    if (!dataset_exists(pretrain_data_dir(cfg).string()))
        throw ConfigError("pretraining dataset missing; run gen-data first");
    LoadedDataset loaded = read_dataset(pretrain_data_dir(cfg).string());
    const NormStats stats = loaded.train_stats
                                ? *loaded.train_stats
                                : compute_liver_stats(samples_with_role(loaded.data.samples, "train"));

    const std::vector<Sample> prepped = prep_samples(loaded.data.samples, stats);
    const std::vector<Sample> train = samples_with_role(prepped, "train");
    const std::vector<Sample> val = samples_with_role(prepped, "val");
    const std::string extra = json{{"stats", stats_to_json(stats)}}.dump();

    const fs::path pdir = fs::path(cfg.out_dir) / "pretrain";
    UNetConfig liver_cfg{1, cfg.model.base_filters, 5, 3, cfg.data.image_size,
                         mix64(cfg.pretrain.seed, 0x6c697665ULL)};

    if (!checkpoint_exists(liver_ckpt_dir(cfg).string())) {
        UNet<float> liver = UNet<float>::build(liver_cfg);
        FitResult fit = train_liver_fcn(liver, train, val, cfg.pretrain.liver, cfg.augment,
                                        cfg.pretrain.seed, (pdir / "liver_fit").string());
        save_checkpoint(liver_ckpt_dir(cfg).string(), liver, nullptr, extra);
        write_text(pdir / "logs_liver.csv", logs_csv(fit.logs));
        log_info("pretrain: liver stage done (" + std::to_string(fit.logs.size()) + " epochs)");
    } else {
        log_info("pretrain: liver checkpoint present, skipping");
    }

    if (!checkpoint_exists(lesion_ckpt_dir(cfg).string())) {
        auto liver = load_checkpoint(liver_ckpt_dir(cfg).string());
        const auto boxes =
            subject_roi_boxes(liver.model, loaded.data.samples, stats, cfg.roi_margin);
        const std::vector<Sample> crops = crop_samples(prepped, boxes);
        const std::vector<Sample> train_crops = samples_with_role(crops, "train");
        const std::vector<Sample> val_crops = samples_with_role(crops, "val");

        UNetConfig lesion_cfg = liver_cfg;
        lesion_cfg.seed = mix64(cfg.pretrain.seed, 0x6c657369ULL);
        UNet<float> lesion = UNet<float>::build(lesion_cfg);
        FitResult fit = train_lesion_fcn(lesion, train_crops, val_crops, cfg.pretrain.lesion,
                                         cfg.augment, cfg.pretrain.seed + 1,
                                         (pdir / "lesion_fit").string());
        save_checkpoint(lesion_ckpt_dir(cfg).string(), lesion, nullptr, extra);
        write_text(pdir / "logs_lesion.csv", logs_csv(fit.logs));
        log_info("pretrain: lesion stage done (" + std::to_string(fit.logs.size()) + " epochs)");
    } else {
        log_info("pretrain: lesion checkpoint present, skipping");
    }
    write_run_manifest(cfg, "pretrain");
}

namespace {

/// Fine-tunes one (protocol, fold, seed) cell and writes checkpoint + logs.
std::vector<EpochLog> finetune_cell(const ExperimentConfig& cfg, TargetContext& ctx,
                                    const std::string& protocol_name_str, int fold,
                                    std::uint64_t seed, const fs::path& dir) {
    const Protocol protocol = parse_protocol(protocol_name_str);
    FoldSplitSamples split = split_fold(cfg, ctx.target, ctx.folds, fold);

    const NormStats fold_stats = compute_liver_stats(split.train);
    const auto train_crops = crop_samples(prep_samples(split.train, fold_stats), ctx.boxes);
    const auto val_crops = crop_samples(prep_samples(split.val, fold_stats), ctx.boxes);

    SliceDataset train_ds;
    train_ds.num_label_classes = 5;
    train_ds.samples = train_crops;

    FinetuneInputs in;
    in.pretrained_checkpoint = ctx.lesion_ckpt;
    in.model_config = ctx.model_config;
    in.model_seed = mix64(seed, static_cast<std::uint64_t>(fold), 0x6d6f6465ULL);
    in.schedule = build_schedule(protocol, 5, cfg.finetune.lr0, cfg.finetune.epochs_per_phase,
                                 cfg.finetune.patience, cfg.finetune.cumulative_freezing);
    in.train_options.batch_size = cfg.finetune.batch_size;
    in.train_options.seed = mix64(seed, static_cast<std::uint64_t>(fold), 0x74726e00ULL);
    in.train_options.aug = cfg.augment;
    in.train_options.aug.master_seed = mix64(seed, static_cast<std::uint64_t>(fold), 0x61756700ULL);
    in.train_options.class_weights = to_float_weights(compute_class_weights(train_ds, 5));
    in.train_options.dice_label_ids = {kLabelCyst, kLabelHemangioma, kLabelMetastasis};

    FinetuneResult ft = finetune_lesion_classifier(in, train_crops, val_crops);

    const json extra{{"protocol", protocol_name_str},
                     {"fold", fold},
                     {"seed", seed},
                     {"stats", stats_to_json(fold_stats)}};
    save_checkpoint((dir / "checkpoint").string(), ft.model, nullptr, extra.dump());
    write_text(dir / "logs.csv", logs_csv(ft.logs));
    write_text(dir / "schedule.json", schedule_to_json(in.schedule) + "\n");
    return ft.logs;
}

/// Runs the cascade over one fold's test images and writes metrics + outputs.
MetricSet evaluate_checkpoint(const ExperimentConfig& cfg, TargetContext& ctx,
                              const std::string& checkpoint_dir, int fold, const fs::path& dir) {
    auto fine = load_checkpoint(checkpoint_dir);
    const NormStats lesion_stats = stats_from_extra(fine.extra_json, "fine-tuned checkpoint");
    FoldSplitSamples split = split_fold(cfg, ctx.target, ctx.folds, fold);

    fs::create_directories(dir / "labels");
    std::vector<ImageEval> evals;
    json jimages = json::array();
    for (const auto& s : split.test) {
        const RoiBox& box = ctx.boxes.at(s.subject_id);
        CascadeOutput co = run_cascade(s, ctx.liver_model, ctx.liver_stats, fine.model,
                                       lesion_stats, cfg.roi_margin, &box);
        write_mask_file((dir / "labels" / (s.id + ".labels.bin")).string(), co.label_map);
        jimages.push_back(json{{"id", s.id},
                               {"gt_class", s.lesion_class},
                               {"pred_class", co.majority_class},
                               {"box", {co.box.top, co.box.left, co.box.height, co.box.width}}});
        if (s.lesion_class != 0)
            evals.push_back(evaluate_image(co.label_map, s.label_map, s.lesion_class));
    }
    if (evals.empty()) throw ValueError("evaluate: fold has no lesion-bearing test images");
    const MetricSet m = compute_metrics(evals);

    std::ostringstream csv;
    csv << "id,gt_class,pred_class,has_overlap,dice\n";
    std::size_t k = 0;
    for (const auto& s : split.test) {
        if (s.lesion_class == 0) continue;
        const auto& e = evals[k++];
        char buf[160];
        std::snprintf(buf, sizeof(buf), "%s,%d,%d,%d,%.6f\n", s.id.c_str(), e.gt_class,
                      e.pred_class, e.has_overlap ? 1 : 0, e.dice);
        csv << buf;
    }
    write_text(dir / "evals.csv", csv.str());

    json jm{{"success", m.success},
            {"dice1", m.dice1},
            {"dice2", m.dice2},
            {"acc", m.accuracy},
            {"fold", fold},
            {"images", jimages}};
    write_text(dir / "metrics.json", jm.dump(2) + "\n");
    return m;
}

MetricSet read_cell_metrics(const fs::path& dir) {
    std::ifstream f(dir / "metrics.json");
    if (!f) throw IoError("cannot open " + (dir / "metrics.json").string());
    const json j = json::parse(f);
    return MetricSet{j.at("success").get<double>(), j.at("dice1").get<double>(),
                     j.at("dice2").get<double>(), j.at("acc").get<double>()};
}

}  // namespace

void cmd_finetune(const ExperimentConfig& cfg, const std::string& protocol, int fold,
                  std::optional<std::uint64_t> seed) {
    const std::uint64_t s = seed.value_or(cfg.seeds.front());
    TargetContext ctx = load_target_context(cfg);
    const fs::path dir = cell_dir(cfg, protocol, fold, s);
    fs::create_directories(dir);
    finetune_cell(cfg, ctx, protocol, fold, s, dir);
    write_run_manifest(cfg, "finetune");
    log_info("finetune: wrote " + (dir / "checkpoint").string());
}

void cmd_evaluate(const ExperimentConfig& cfg, const std::string& checkpoint_dir, int fold,
                  const std::string& eval_dir_override) {
    TargetContext ctx = load_target_context(cfg);
    const fs::path dir = eval_dir_override.empty()
                             ? fs::path(cfg.out_dir) / ("evaluate_fold" + std::to_string(fold))
                             : fs::path(eval_dir_override);
    const MetricSet m = evaluate_checkpoint(cfg, ctx, checkpoint_dir, fold, dir);
    write_run_manifest(cfg, "evaluate");
    char buf[160];
    std::snprintf(buf, sizeof(buf), "success=%.4f dice1=%.4f dice2=%.4f acc=%.4f", m.success,
                  m.dice1, m.dice2, m.accuracy);
    log_info("evaluate: " + std::string(buf));
}

void cmd_experiment(const ExperimentConfig& cfg) {
    if (!dataset_exists(target_dir(cfg).string()) ||
        !dataset_exists(pretrain_data_dir(cfg).string()))
        cmd_gen_data(cfg, false);
    if (!checkpoint_exists(liver_ckpt_dir(cfg).string()) ||
        !checkpoint_exists(lesion_ckpt_dir(cfg).string()))
        cmd_pretrain(cfg);

    TargetContext ctx = load_target_context(cfg);

    struct Cell {
        std::string protocol;
        int fold;
        std::uint64_t seed;
    };
    std::vector<Cell> cells;
    for (const auto& p : cfg.protocols)
        for (int f = 0; f < cfg.folds; ++f)
            for (std::uint64_t s : cfg.seeds) cells.push_back(Cell{p, f, s});

    std::vector<CellMetrics> results(cells.size());
    std::vector<std::vector<EpochLog>> cell_logs(cells.size());
    std::atomic<std::size_t> next{0};
    std::mutex err_mutex;
    std::exception_ptr first_error;

    auto worker = [&]() {
        while (true) {
            const std::size_t i = next.fetch_add(1);
            if (i >= cells.size()) return;
            {
                std::lock_guard<std::mutex> lk(err_mutex);
                if (first_error) return;
            }
            const Cell& cell = cells[i];
            const fs::path dir = cell_dir(cfg, cell.protocol, cell.fold, cell.seed);
            try {
                if (!fs::exists(dir / "metrics.json")) {
                    fs::create_directories(dir);
                    std::vector<EpochLog> logs;
                    if (!checkpoint_exists((dir / "checkpoint").string()))
                        logs = finetune_cell(cfg, ctx, cell.protocol, cell.fold, cell.seed, dir);
                    evaluate_checkpoint(cfg, ctx, (dir / "checkpoint").string(), cell.fold, dir);
                    cell_logs[i] = std::move(logs);
                } else {
                    log_info("experiment: cell " + dir.string() + " already complete");
                }
                results[i] = CellMetrics{cell.protocol, cell.fold, cell.seed,
                                         read_cell_metrics(dir)};
                log_info("experiment: finished " + cell.protocol + " fold " +
                         std::to_string(cell.fold) + " seed " + std::to_string(cell.seed));
            } catch (...) {
                std::lock_guard<std::mutex> lk(err_mutex);
                if (!first_error) first_error = std::current_exception();
                return;
            }
        }
    };

    const int n_threads = std::max(1, std::min<int>(cfg.threads, static_cast<int>(cells.size())));
    if (n_threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    if (first_error) std::rethrow_exception(first_error);

    // loss curves for cells trained in this run
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (cell_logs[i].empty()) continue;
        const std::string name = cells[i].protocol + "_fold" + std::to_string(cells[i].fold) +
                                 "_seed" + std::to_string(cells[i].seed);
        fs::create_directories(fs::path(cfg.out_dir) / "curves");
        write_loss_curves_svg((fs::path(cfg.out_dir) / "curves" / (name + ".svg")).string(),
                              cell_logs[i], name);
    }

    const MetricsReport report = build_report(results);
    write_text(fs::path(cfg.out_dir) / "report.csv", report_csv(report));
    write_text(fs::path(cfg.out_dir) / "report.txt", report_text(report));
    write_run_manifest(cfg, "experiment");
    log_info("experiment: report written to " + (fs::path(cfg.out_dir) / "report.csv").string());
}

}  // namespace cascade
