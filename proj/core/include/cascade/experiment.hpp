#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cascade/augment.hpp"
#include "cascade/metrics.hpp"
#include "cascade/pipeline.hpp"

namespace cascade {

struct DataSpec {
    std::size_t image_size = 96;
    int healthy = 9, cysts = 9, hemangiomas = 9, metastases = 9;
    std::uint64_t seed = 11;
    int slices_per_subject = 1;
};

struct PretrainSpec {
    int slices = 500;
    double lesion_fraction = 0.7;  // remainder healthy; lesion phenotypes mixed evenly
    std::uint64_t seed = 7;
    double val_fraction = 0.15;
    FitBudget liver{12, 3, 1e-4, 6};
    FitBudget lesion{12, 3, 1e-4, 1};
};

struct FinetuneSpec {
    double lr0 = 5e-5;
    int epochs_per_phase = 20;
    int patience = 5;
    double val_fraction = 0.2;
    int batch_size = 1;
    bool cumulative_freezing = true;
};

struct ModelSpec {
    std::size_t base_filters = 8;
};

struct ExperimentConfig {
    std::string out_dir = "out";
    int threads = 1;
    int folds = 3;
    std::vector<std::uint64_t> seeds{1, 2, 3};
    std::vector<std::string> protocols{"baseline", "naive", "freeze_encoder", "hier_freeze",
                                       "hier_unfreeze"};
    DataSpec data;
    PretrainSpec pretrain;
    FinetuneSpec finetune;
    ModelSpec model;
    AugConfig augment;
    std::size_t roi_margin = 16;
};

ExperimentConfig default_config();

/// Strict parse: unknown keys anywhere raise ConfigError naming the key.
ExperimentConfig config_from_json_text(const std::string& text);
ExperimentConfig load_config(const std::string& path);

/// Canonical dump (all fields, fixed order); used for run manifests and
/// the config hash.
std::string config_to_json_text(const ExperimentConfig& cfg);
std::string config_hash_hex(const ExperimentConfig& cfg);

// --- commands (throw on failure; the CLI maps exceptions to exit codes) ------

/// Writes the target (5-class) and pretraining (collapsed 3-class) phantom
/// datasets under <out>/data. Refuses to overwrite without `force`.
void cmd_gen_data(const ExperimentConfig& cfg, bool force);

/// Trains the liver and lesion segmentation stages on the pretraining corpus
/// and leaves checkpoints under <out>/pretrain. Resumes from the per-epoch
/// checkpoints when interrupted.
void cmd_pretrain(const ExperimentConfig& cfg);

/// One fine-tuning cell: protocol x fold (x seed). Produces
/// <out>/cells/<protocol>/fold<f>_seed<s>/{checkpoint,logs.csv,schedule.json}.
void cmd_finetune(const ExperimentConfig& cfg, const std::string& protocol, int fold,
                  std::optional<std::uint64_t> seed);

/// Cascade evaluation of a fine-tuned checkpoint on one fold's test images.
/// Writes metrics.json, evals.csv and per-image label maps.
void cmd_evaluate(const ExperimentConfig& cfg, const std::string& checkpoint_dir, int fold,
                  const std::string& eval_dir_override = "");

/// Full comparison: data + pretraining if missing, every protocol x fold x
/// seed cell (resuming from finished cells), then report.csv / report.txt /
/// curves/*.svg under <out>.
void cmd_experiment(const ExperimentConfig& cfg);

}  // namespace cascade
