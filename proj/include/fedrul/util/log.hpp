#pragma once

#include <atomic>
#include <iostream>
#include <string_view>

namespace fedrul::log {

enum class Level : int { Debug = 0, Info = 1, Warning = 2, Error = 3, Off = 4 };

inline std::atomic<int>& threshold() {
    static std::atomic<int> level{static_cast<int>(Level::Warning)};
    return level;
}

inline void set_level(Level level) { threshold().store(static_cast<int>(level)); }

inline void write(Level level, std::string_view tag, std::string_view message) {
    if (static_cast<int>(level) < threshold().load()) return;
    std::clog << "[" << tag << "] " << message << '\n';
}

inline void debug(std::string_view m) { write(Level::Debug, "debug", m); }
inline void info(std::string_view m) { write(Level::Info, "info", m); }
inline void warn(std::string_view m) { write(Level::Warning, "warn", m); }
inline void error(std::string_view m) { write(Level::Error, "error", m); }

}  // namespace fedrul::log
