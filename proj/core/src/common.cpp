#include "cascade/common.hpp"

#include <cstdlib>
#include <iostream>
#include <mutex>

namespace cascade {

namespace {

std::atomic<bool> g_strict{false};
std::mutex g_log_mutex;

LogLevel parse_level(const char* s) {
    if (!s) return LogLevel::info;
    std::string v(s);
    if (v == "quiet" || v == "0") return LogLevel::quiet;
    if (v == "warn" || v == "1") return LogLevel::warn;
    if (v == "info" || v == "2") return LogLevel::info;
    if (v == "debug" || v == "3") return LogLevel::debug;
    return LogLevel::info;
}

void emit(LogLevel lvl, const char* tag, const std::string& msg) {
    if (static_cast<int>(log_level()) < static_cast<int>(lvl)) return;
    std::lock_guard<std::mutex> lock(g_log_mutex);
    std::cerr << tag << msg << "\n";
}

}  // namespace

void set_strict_mode(bool on) { g_strict.store(on, std::memory_order_relaxed); }
bool strict_mode() { return g_strict.load(std::memory_order_relaxed); }

LogLevel log_level() {
    static LogLevel lvl = parse_level(std::getenv("CASCADE_TUNE_LOG"));
    return lvl;
}

void log_warn(const std::string& msg) { emit(LogLevel::warn, "[warn] ", msg); }
void log_info(const std::string& msg) { emit(LogLevel::info, "[info] ", msg); }
void log_debug(const std::string& msg) { emit(LogLevel::debug, "[debug] ", msg); }

}  // namespace cascade
