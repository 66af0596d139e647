#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cascade/grid.hpp"
#include "cascade/tensor.hpp"

namespace cascade {

// Label-map values. Lesion classes start at 2 so that a collapsed
// single-lesion dataset ({0,1,2}) and the full 5-class one share ids.
inline constexpr std::uint8_t kLabelBackground = 0;
inline constexpr std::uint8_t kLabelLiver = 1;
inline constexpr std::uint8_t kLabelCyst = 2;
inline constexpr std::uint8_t kLabelHemangioma = 3;
inline constexpr std::uint8_t kLabelMetastasis = 4;
inline constexpr std::uint8_t kLabelLesion = 2;  // collapsed corpora

std::string lesion_class_name(int label);

/// One 2-D slice: image in Hounsfield units, binary liver mask, and a label
/// map whose lesion pixels always lie inside the liver. Healthy slices have
/// lesion_class 0 and no pixels above kLabelLiver.
struct Sample {
    std::string id;
    std::string subject_id;
    int lesion_class = 0;   // 0 healthy, else the slice's single lesion label
    std::string role;       // "train" / "val" for fixed-split corpora, "" for CV sets
    ImageGrid image;
    MaskGrid liver_mask;
    MaskGrid label_map;
};

struct SliceDataset {
    std::vector<Sample> samples;
    int num_label_classes = 5;  // label-map domain size: 3 (collapsed) or 5
};

/// Throws ValueError when a sample violates the shape/containment invariants.
void validate_sample(const Sample& s, int num_label_classes);

// --- pre-processing ---------------------------------------------------------

inline constexpr float kHuWindowLo = -160.0f;
inline constexpr float kHuWindowHi = 240.0f;

/// Clips to [-160, 240] HU. Idempotent.
ImageGrid hu_window(const ImageGrid& image);

struct NormStats {
    double mean = 0.0;
    double stddev = 1.0;
};

/// Mean/std of windowed intensity over liver pixels of the given samples.
NormStats compute_liver_stats(std::span<const Sample> samples);

/// (x - mean) / std over the whole image. stddev must be positive.
ImageGrid standardize(const ImageGrid& image, const NormStats& stats);

/// Per-class pixel ratios r_c mapped to weights (1/r_c) / sum_j (1/r_j) * K,
/// so the weights average to 1. A class with zero pixels has its ratio
/// clamped to 1e-6 (with a warning).
std::vector<double> compute_class_weights(const SliceDataset& ds, int num_classes);

// --- cross-validation folds -------------------------------------------------

/// Disjoint subject partition; stratified by lesion class.
struct FoldSplit {
    std::vector<std::vector<std::string>> fold_subjects;
};

FoldSplit make_folds(const SliceDataset& ds, int k, std::uint64_t seed);

/// Index of the fold containing each sample's subject (-1 if absent).
std::vector<int> fold_of_samples(const SliceDataset& ds, const FoldSplit& split);

// --- container format -------------------------------------------------------

/// Dataset directory: manifest.json plus three binary files per sample
/// (image float32, masks uint8), each with a fixed 16-byte magic/version
/// header followed by u32 height/width and the row-major payload.
void write_dataset(const SliceDataset& ds, const std::string& dir,
                   const std::optional<NormStats>& train_stats = std::nullopt);

struct LoadedDataset {
    SliceDataset data;
    std::optional<NormStats> train_stats;
};

LoadedDataset read_dataset(const std::string& dir);

bool dataset_exists(const std::string& dir);

/// Raw slice-file helpers (exposed for tooling/tests).
void write_image_file(const std::string& path, const ImageGrid& g);
void write_mask_file(const std::string& path, const MaskGrid& g);
ImageGrid read_image_file(const std::string& path);
MaskGrid read_mask_file(const std::string& path);

// --- tensor bridging --------------------------------------------------------

/// [1,1,H,W] tensor from an image grid.
Tensor<float> image_to_tensor(const ImageGrid& g);

/// [N,1,H,W] batch from same-shape grids.
Tensor<float> batch_to_tensor(std::span<const ImageGrid> images);

/// [N,K,H,W] one-hot encoding of label maps; labels must be < K.
Tensor<float> labels_to_onehot(std::span<const MaskGrid> labels, int num_classes);

/// Per-pixel argmax over channels of a [1,K,H,W] tensor.
MaskGrid argmax_labels(const Tensor<float>& logits);

}  // namespace cascade
