#pragma once

#include <optional>
#include <string>

#include "cascade/unet.hpp"

namespace cascade {

/// Checkpoint directory layout:
///   manifest.json            shapes, block ids, trainable flags, Adam step count
///   <param name>.bin         one little-endian float32 file per parameter, row-major
///   <param name>.adam_m.bin  Adam first moment (when optimizer state is saved)
///   <param name>.adam_v.bin  Adam second moment
///   <buffer name>.mean.bin / <buffer name>.var.bin   batch-norm running statistics
///
/// `extra_json` is an opaque JSON object string stored in the manifest for
/// run metadata (normalization stats, protocol, fold, ...).
void save_checkpoint(const std::string& dir, UNet<float>& model,
                     const AdamState<float>* adam = nullptr,
                     const std::string& extra_json = "{}");

struct LoadedCheckpoint {
    UNet<float> model;
    AdamState<float> adam;
    bool has_adam = false;
    std::string extra_json;
};

/// Rebuilds the model from the stored config and restores parameters,
/// trainable flags, running statistics and (when present) Adam state
/// bit-exactly. Malformed or mismatching files raise IoError naming the file.
LoadedCheckpoint load_checkpoint(const std::string& dir);

bool checkpoint_exists(const std::string& dir);

}  // namespace cascade
