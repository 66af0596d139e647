#pragma once

#include <atomic>
#include <stdexcept>
#include <string>

namespace cascade {

/// Shape or extent disagreement between tensors/arrays.
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Invalid configuration value (bad class count, unknown protocol, ...).
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Invalid runtime value (non-finite element, bad label, empty dataset, ...).
struct ValueError : std::runtime_error {
    explicit ValueError(const std::string& msg) : std::runtime_error(msg) {}
};

/// File parse / serialization failure. Message names the offending file.
struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Strict mode: every op validates that its output is finite.
// Off by default (training speed); tests switch it on.
void set_strict_mode(bool on);
bool strict_mode();

enum class LogLevel : int { quiet = 0, warn = 1, info = 2, debug = 3 };

// Level comes from CASCADE_TUNE_LOG (quiet|warn|info|debug or 0..3), default info.
LogLevel log_level();
void log_warn(const std::string& msg);
void log_info(const std::string& msg);
void log_debug(const std::string& msg);

}  // namespace cascade
