#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "cascade/dataset.hpp"
#include "cascade/unet.hpp"

namespace cascade {

/// Liver region of interest, in-bounds with sides padded to multiples of 16.
struct RoiBox {
    std::size_t top = 0, left = 0, height = 0, width = 0;
    std::size_t margin = 0;

    bool operator==(const RoiBox&) const = default;
};

inline constexpr std::size_t kDefaultRoiMargin = 16;

/// Tight bounding box of the mask's nonzero pixels, expanded by `margin`,
/// clipped to the image, then grown to the next multiple of 16 (extending
/// right/down, shifting back when that would leave the image). An empty mask
/// falls back to the full image with a warning.
RoiBox extract_roi(const MaskGrid& liver_mask, std::size_t margin = kDefaultRoiMargin);

/// Union of the tight boxes of several slices of one subject, then the same
/// margin/pad treatment. Mirrors a volumetric bounding box on stacked slices.
RoiBox extract_roi_union(std::span<const MaskGrid> liver_masks,
                         std::size_t margin = kDefaultRoiMargin);

/// Keeps only the largest 8-connected component (ties: the component that
/// appears first in scan order). Empty in, empty out.
MaskGrid refine_liver_mask(const MaskGrid& mask);

/// 26-connected 3-D variant over stacked slices.
std::vector<MaskGrid> refine_liver_volume(const std::vector<MaskGrid>& slices);

ImageGrid crop(const ImageGrid& g, const RoiBox& box);
MaskGrid crop(const MaskGrid& g, const RoiBox& box);

struct CascadeOutput {
    MaskGrid liver_mask;   // refined prediction of the first stage
    MaskGrid label_map;    // full frame; lesion labels only inside the box
    int majority_class = 0;  // modal predicted lesion class, 0 if none
    RoiBox box;
};

/// Two-stage inference: liver forward -> largest-component refinement ->
/// ROI extraction -> lesion forward on the crop -> per-pixel argmax pasted
/// back into the full frame (outside the box: background/liver from stage 1).
/// `fixed_box` overrides ROI extraction (per-subject union boxes).
CascadeOutput run_cascade(const Sample& sample, UNet<float>& liver_model,
                          const NormStats& liver_stats, UNet<float>& lesion_model,
                          const NormStats& lesion_stats,
                          std::size_t margin = kDefaultRoiMargin,
                          const RoiBox* fixed_box = nullptr);

/// Stage-1 liver prediction for one slice: eval forward, argmax == liver,
/// largest-component refinement.
MaskGrid predict_liver(UNet<float>& liver_model, const Sample& sample,
                       const NormStats& liver_stats);

/// Modal lesion class (labels >= 2) of a label map; ties break toward the
/// smaller class id; 0 when no lesion pixels are present.
int majority_lesion_class(const MaskGrid& label_map);

}  // namespace cascade
