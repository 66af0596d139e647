#pragma once

#include <cstdint>

#include "cascade/dataset.hpp"

namespace cascade {

/// Online augmentation ranges. Geometric transforms are applied identically
/// to the image (bilinear) and both masks (nearest neighbor); intensity
/// transforms touch the image only and are expressed in standardized units.
/// All draws are keyed by (master_seed, sample id, epoch).
struct AugConfig {
    double rotate_deg = 15.0;
    double zoom_lo = 0.9, zoom_hi = 1.1;
    double shift_frac = 0.1;   // of each extent
    double flip_prob = 0.5;    // horizontal
    double noise_sigma = 0.05;
    double intensity_scale_lo = 0.9, intensity_scale_hi = 1.1;
    double intensity_shift = 0.1;
    std::uint64_t master_seed = 0;
};

/// Identity ranges (no-op draws): rotation 0, zoom [1,1], no shift/flip/noise.
AugConfig identity_aug();

Sample augment(const Sample& s, const AugConfig& cfg, std::uint64_t epoch);

}  // namespace cascade
