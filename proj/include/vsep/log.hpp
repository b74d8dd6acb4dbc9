#pragma once

// Minimal stderr logger. Verbosity comes from the VSEP_LOG environment
// variable: error, warn, info (default) or debug.

#include <cstdlib>
#include <iostream>
#include <string>
#include <string_view>

namespace vsep::log {

enum class Level { error = 0, warn = 1, info = 2, debug = 3 };

inline Level level_from_env() {
    const char* env = std::getenv("VSEP_LOG");
    if (!env) return Level::info;
    const std::string_view v(env);
    if (v == "error") return Level::error;
    if (v == "warn") return Level::warn;
    if (v == "debug") return Level::debug;
    return Level::info;
}

inline Level& threshold() {
    static Level level = level_from_env();
    return level;
}

inline void write(Level l, std::string_view tag, std::string_view msg) {
    if (static_cast<int>(l) > static_cast<int>(threshold())) return;
    std::cerr << "[vsep " << tag << "] " << msg << '\n';
}

inline void error(std::string_view msg) { write(Level::error, "error", msg); }
inline void warn(std::string_view msg) { write(Level::warn, "warn", msg); }
inline void info(std::string_view msg) { write(Level::info, "info", msg); }
inline void debug(std::string_view msg) { write(Level::debug, "debug", msg); }

}  // namespace vsep::log
