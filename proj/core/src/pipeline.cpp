#include "cascade/pipeline.hpp"

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "cascade/common.hpp"
#include "cascade/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace cascade {

namespace {

json log_to_json(const EpochLog& l) {
    return json{{"phase", l.phase},         {"epoch", l.epoch},       {"lr", l.lr},
                {"train_loss", l.train_loss}, {"val_loss", l.val_loss}, {"val_dice", l.val_dice}};
}

EpochLog log_from_json(const json& j) {
    EpochLog l;
    l.phase = j.at("phase").get<int>();
    l.epoch = j.at("epoch").get<int>();
    l.lr = j.at("lr").get<double>();
    l.train_loss = j.at("train_loss").get<double>();
    l.val_loss = j.at("val_loss").get<double>();
    l.val_dice = j.at("val_dice").get<double>();
    return l;
}

struct FitState {
    int next_epoch = 0;
    double best_val = std::numeric_limits<double>::infinity();
    int since_improve = 0;
    bool done = false;
    std::vector<EpochLog> logs;
};

void write_state(const std::string& dir, const FitState& st) {
    json j{{"next_epoch", st.next_epoch},
           {"best_val", st.best_val},
           {"since_improve", st.since_improve},
           {"done", st.done}};
    j["logs"] = json::array();
    for (const auto& l : st.logs) j["logs"].push_back(log_to_json(l));
    std::ofstream f(fs::path(dir) / "state.json", std::ios::trunc);
    if (!f) throw IoError("cannot write " + (fs::path(dir) / "state.json").string());
    f << j.dump(2) << "\n";
}

bool read_state(const std::string& dir, FitState& st) {
    const fs::path path = fs::path(dir) / "state.json";
    std::ifstream f(path);
    if (!f) return false;
    json j;
    try {
        j = json::parse(f);
    } catch (const json::exception& e) {
        throw IoError(path.string() + ": " + e.what());
    }
    st.next_epoch = j.at("next_epoch").get<int>();
    st.best_val = j.at("best_val").get<double>();
    st.since_improve = j.at("since_improve").get<int>();
    st.done = j.at("done").get<bool>();
    st.logs.clear();
    for (const auto& jl : j.at("logs")) st.logs.push_back(log_from_json(jl));
    return true;
}

}  // namespace

FitResult fit_resumable(UNet<float>& model, std::span<const Sample> train,
                        std::span<const Sample> val, const FitBudget& budget,
                        const TrainOptions& opt, const std::string& dir,
                        const std::string& extra_json) {
    if (train.empty()) throw ValueError("fit_resumable: empty training set");
    const bool persist = !dir.empty();

    FitState st;
    AdamState<float> adam;
    EarlyStopper stopper(budget.patience);

    if (persist) {
        fs::create_directories(dir);
        if (read_state(dir, st)) {
            if (st.done) {
                auto best = load_checkpoint((fs::path(dir) / "best").string());
                restore_model(model, snapshot_model(best.model));
                return FitResult{st.logs};
            }
            auto last = load_checkpoint((fs::path(dir) / "last").string());
            restore_model(model, snapshot_model(last.model));
            adam = std::move(last.adam);
            stopper.restore(st.best_val, st.since_improve);
            log_info("fit: resuming from epoch " + std::to_string(st.next_epoch));
        }
    }

    ModelSnapshot best = snapshot_model(model);
    if (persist && st.next_epoch > 0) {
        auto best_ck = load_checkpoint((fs::path(dir) / "best").string());
        best = snapshot_model(best_ck.model);
    }

    for (int epoch = st.next_epoch; epoch < budget.max_epochs; ++epoch) {
        const double lr = lr_at_epoch(budget.lr0, epoch);
        const double train_loss =
            train_one_epoch(model, train, adam, lr, opt, static_cast<std::uint64_t>(epoch));
        const ValScores vs = validate(model, val, opt);
        st.logs.push_back(EpochLog{0, epoch, lr, train_loss, vs.loss, vs.dice});

        const bool improved = stopper.observe(vs.loss);
        if (improved) best = snapshot_model(model);

        st.next_epoch = epoch + 1;
        st.best_val = stopper.best();
        st.since_improve = stopper.epochs_since_improvement();
        st.done = stopper.should_stop() || epoch + 1 == budget.max_epochs;
        if (persist) {
            save_checkpoint((fs::path(dir) / "last").string(), model, &adam, extra_json);
            // model still holds the epoch's weights, which equal `best` right
            // after an improvement
            if (improved)
                save_checkpoint((fs::path(dir) / "best").string(), model, nullptr, extra_json);
            write_state(dir, st);
        }
        if (st.done) break;
    }
    restore_model(model, best);
    if (persist && !st.done) {
        st.done = true;
        write_state(dir, st);
    }
    return FitResult{st.logs};
}

// --- data preparation ----------------------------------------------------------

std::vector<Sample> prep_samples(std::span<const Sample> samples, const NormStats& stats) {
    std::vector<Sample> out;
    out.reserve(samples.size());
    for (const auto& s : samples) {
        Sample p = s;
        p.image = standardize(hu_window(s.image), stats);
        out.push_back(std::move(p));
    }
    return out;
}

std::vector<Sample> collapse_to_liver(std::span<const Sample> samples) {
    std::vector<Sample> out;
    out.reserve(samples.size());
    for (const auto& s : samples) {
        Sample p = s;
        for (auto& lbl : p.label_map.v)
            if (lbl > kLabelLiver) lbl = kLabelLiver;
        out.push_back(std::move(p));
    }
    return out;
}

std::map<std::string, RoiBox> subject_roi_boxes(UNet<float>& liver_model,
                                                std::span<const Sample> samples,
                                                const NormStats& liver_stats,
                                                std::size_t margin) {
    std::map<std::string, std::vector<MaskGrid>> masks;
    for (const auto& s : samples)
        masks[s.subject_id].push_back(predict_liver(liver_model, s, liver_stats));
    std::map<std::string, RoiBox> boxes;
    for (const auto& [subject, ms] : masks) boxes[subject] = extract_roi_union(ms, margin);
    return boxes;
}

std::vector<Sample> crop_samples(std::span<const Sample> samples,
                                 const std::map<std::string, RoiBox>& boxes) {
    std::vector<Sample> out;
    out.reserve(samples.size());
    for (const auto& s : samples) {
        auto it = boxes.find(s.subject_id);
        if (it == boxes.end())
            throw ValueError("crop_samples: no ROI box for subject '" + s.subject_id + "'");
        Sample c = s;
        c.image = crop(s.image, it->second);
        c.liver_mask = crop(s.liver_mask, it->second);
        c.label_map = crop(s.label_map, it->second);
        out.push_back(std::move(c));
    }
    return out;
}

std::vector<Sample> samples_with_role(std::span<const Sample> samples, const std::string& role) {
    std::vector<Sample> out;
    for (const auto& s : samples)
        if (s.role == role) out.push_back(s);
    return out;
}

std::vector<float> to_float_weights(const std::vector<double>& w) {
    std::vector<float> out(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) out[i] = static_cast<float>(w[i]);
    return out;
}

std::vector<float> liver_stage_weights(std::span<const Sample> collapsed_train) {
    SliceDataset tmp;
    tmp.num_label_classes = 3;
    tmp.samples.assign(collapsed_train.begin(), collapsed_train.end());
    // ratios over the two populated classes only; the lesion channel never
    // carries a true pixel, so its weight is inert
    std::size_t counts[2] = {0, 0};
    std::size_t total = 0;
    for (const auto& s : tmp.samples)
        for (std::uint8_t lbl : s.label_map.v) {
            if (lbl > kLabelLiver)
                throw ValueError("liver_stage_weights: labels are not liver-collapsed");
            ++counts[lbl];
            ++total;
        }
    if (counts[0] == 0 || counts[1] == 0)
        throw ValueError("liver_stage_weights: both background and liver pixels are required");
    const double r0 = static_cast<double>(counts[0]) / static_cast<double>(total);
    const double r1 = static_cast<double>(counts[1]) / static_cast<double>(total);
    const double inv_sum = 1.0 / r0 + 1.0 / r1;
    return {static_cast<float>((1.0 / r0) / inv_sum * 2.0),
            static_cast<float>((1.0 / r1) / inv_sum * 2.0), 1.0f};
}

// --- stages ----------------------------------------------------------------------

FitResult train_liver_fcn(UNet<float>& model, std::span<const Sample> train_prepped,
                          std::span<const Sample> val_prepped, const FitBudget& budget,
                          const AugConfig& aug, std::uint64_t seed,
                          const std::string& resume_dir) {
    if (model.config().num_classes != 3)
        throw ConfigError("train_liver_fcn: expected a 3-class model");
    const std::vector<Sample> train = collapse_to_liver(train_prepped);
    const std::vector<Sample> val = collapse_to_liver(val_prepped);

    TrainOptions opt;
    opt.batch_size = budget.batch_size;
    opt.seed = seed;
    opt.aug = aug;
    opt.aug.master_seed = mix64(seed, 0x6175676cULL);
    opt.class_weights = liver_stage_weights(train);
    opt.dice_label_ids = {kLabelLiver};
    return fit_resumable(model, train, val, budget, opt, resume_dir,
                         R"({"stage":"liver_fcn"})");
}

FitResult train_lesion_fcn(UNet<float>& model, std::span<const Sample> train_crops,
                           std::span<const Sample> val_crops, const FitBudget& budget,
                           const AugConfig& aug, std::uint64_t seed,
                           const std::string& resume_dir) {
    if (model.config().num_classes != 3)
        throw ConfigError("train_lesion_fcn: expected a 3-class model");
    SliceDataset tmp;
    tmp.num_label_classes = 3;
    tmp.samples.assign(train_crops.begin(), train_crops.end());

    TrainOptions opt;
    opt.batch_size = budget.batch_size;
    opt.seed = seed;
    opt.aug = aug;
    opt.aug.master_seed = mix64(seed, 0x6175676eULL);
    opt.class_weights = to_float_weights(compute_class_weights(tmp, 3));
    opt.dice_label_ids = {kLabelLesion};
    return fit_resumable(model, train_crops, val_crops, budget, opt, resume_dir,
                         R"({"stage":"lesion_fcn"})");
}

FinetuneResult finetune_lesion_classifier(const FinetuneInputs& in,
                                          std::span<const Sample> train_crops,
                                          std::span<const Sample> val_crops) {
    FinetuneResult out;
    if (in.schedule.transfer_init) {
        auto loaded = load_checkpoint(in.pretrained_checkpoint);
        out.model = std::move(loaded.model);
        if (out.model.config().num_classes != 3)
            throw ConfigError("finetune: pretrained checkpoint must be a 3-class model");
        out.model.swap_head(5, in.model_seed);
    } else {
        UNetConfig cfg = in.model_config;
        cfg.num_classes = 5;
        cfg.seed = in.model_seed;
        out.model = UNet<float>::build(cfg);
    }
    TrainResult tr = run_schedule(out.model, train_crops, val_crops, in.schedule,
                                  in.train_options);
    out.logs = std::move(tr.logs);
    return out;
}

}  // namespace cascade
