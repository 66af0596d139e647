#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "cascade/cascade.hpp"
#include "cascade/checkpoint.hpp"
#include "cascade/trainer.hpp"

namespace cascade {

struct FitBudget {
    int max_epochs = 4;
    int patience = 2;
    double lr0 = 1e-4;
    int batch_size = 1;
};

struct FitResult {
    std::vector<EpochLog> logs;
};

/// Single-phase training with directory-backed interrupt recovery:
///   dir/state.json   next epoch, early-stopping state, logs so far, done flag
///   dir/last/        checkpoint (model + Adam) after the latest epoch
///   dir/best/        best-validation checkpoint
/// A rerun picks up after the last completed epoch and reproduces the
/// uninterrupted run exactly (epoch-keyed shuffling/augmentation). On
/// completion the best-validation weights are restored into `model`.
/// An empty `dir` disables persistence.
FitResult fit_resumable(UNet<float>& model, std::span<const Sample> train,
                        std::span<const Sample> val, const FitBudget& budget,
                        const TrainOptions& opt, const std::string& dir,
                        const std::string& extra_json = "{}");

// --- data preparation --------------------------------------------------------

/// hu_window + standardize applied to every sample image.
std::vector<Sample> prep_samples(std::span<const Sample> samples, const NormStats& stats);

/// Label maps collapsed to {background, liver}: lesion pixels become liver.
std::vector<Sample> collapse_to_liver(std::span<const Sample> samples);

/// Stage-1 predictions unioned per subject into one ROI box each.
std::map<std::string, RoiBox> subject_roi_boxes(UNet<float>& liver_model,
                                                std::span<const Sample> samples,
                                                const NormStats& liver_stats, std::size_t margin);

/// Crops image and masks of each sample to its subject's box.
std::vector<Sample> crop_samples(std::span<const Sample> samples,
                                 const std::map<std::string, RoiBox>& boxes);

std::vector<Sample> samples_with_role(std::span<const Sample> samples, const std::string& role);

/// K=3 loss weights for liver-collapsed data: inverse-ratio weights over the
/// two populated classes, weight 1 for the unused lesion channel.
std::vector<float> liver_stage_weights(std::span<const Sample> collapsed_train);

std::vector<float> to_float_weights(const std::vector<double>& w);

// --- pretraining stages --------------------------------------------------------

/// Stage 1: liver localization. Trains a 3-class net on liver-collapsed
/// labels of the (already standardized) samples.
FitResult train_liver_fcn(UNet<float>& model, std::span<const Sample> train_prepped,
                          std::span<const Sample> val_prepped, const FitBudget& budget,
                          const AugConfig& aug, std::uint64_t seed, const std::string& resume_dir);

/// Stage 2: lesion segmentation on ROI crops (labels {0,1,2}).
FitResult train_lesion_fcn(UNet<float>& model, std::span<const Sample> train_crops,
                           std::span<const Sample> val_crops, const FitBudget& budget,
                           const AugConfig& aug, std::uint64_t seed,
                           const std::string& resume_dir);

/// Fine-tuning entry: baseline protocols build a fresh 5-class model from
/// `model_seed`; transfer protocols load the pretrained checkpoint and swap
/// the head to 5 classes. Then the compiled schedule runs on the crops.
struct FinetuneInputs {
    std::string pretrained_checkpoint;  // ignored for baseline
    UNetConfig model_config;            // used for baseline construction
    std::uint64_t model_seed = 0;
    Schedule schedule;
    TrainOptions train_options;
};

struct FinetuneResult {
    UNet<float> model;
    std::vector<EpochLog> logs;
};

FinetuneResult finetune_lesion_classifier(const FinetuneInputs& in,
                                          std::span<const Sample> train_crops,
                                          std::span<const Sample> val_crops);

}  // namespace cascade
