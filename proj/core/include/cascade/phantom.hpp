#pragma once

#include <cstdint>

#include "cascade/dataset.hpp"

namespace cascade {

/// Synthetic abdominal-CT phantom slices: an elliptical liver (about 100 HU
/// with smooth texture) over a soft-tissue background (about 40 HU with
/// organ-like blobs), plus at most one lesion per slice drawn inside the
/// liver:
///   cyst        near 0 HU, homogeneous, sharp circular boundary
///   hemangioma  intermediate interior with a bright peripheral rim
///   metastasis  speckled heterogeneous interior, irregular boundary
/// Ground-truth masks are exact by construction.
struct PhantomSpec {
    std::size_t image_size = 96;  // multiple of 16
    int healthy = 10;
    int cysts = 10;
    int hemangiomas = 10;
    int metastases = 10;
    std::uint64_t seed = 0;
    int slices_per_subject = 1;
    bool collapse_lesions = false;  // pretraining corpora: all lesions labeled kLabelLesion
    int placement_retries = 100;
};

/// Deterministic in `spec.seed`: equal specs produce bit-identical datasets.
/// Throws ValueError if a lesion cannot be placed inside the generated liver
/// within `placement_retries` attempts.
SliceDataset synth_generate(const PhantomSpec& spec);

}  // namespace cascade
