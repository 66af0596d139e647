#pragma once

#include <span>
#include <string>

#include "cascade/trainer.hpp"

namespace cascade {

/// Dependency-free SVG of the train/val loss curves of one run, with phase
/// boundaries marked. Output is deterministic (fixed float formatting).
std::string loss_curves_svg(std::span<const EpochLog> logs, const std::string& title);

void write_loss_curves_svg(const std::string& path, std::span<const EpochLog> logs,
                           const std::string& title);

}  // namespace cascade
