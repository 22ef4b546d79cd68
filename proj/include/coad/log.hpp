#pragma once

#include <atomic>
#include <iostream>
#include <mutex>
#include <string>

namespace coad::log {

enum class Level { debug = 0, info = 1, warn = 2, error = 3, off = 4 };

inline std::atomic<Level>& threshold() {
  static std::atomic<Level> level{Level::warn};
  return level;
}

inline void set_level(Level level) { threshold().store(level); }

inline void write(Level level, const std::string& message) {
  if (level < threshold().load()) return;
  static std::mutex mu;
  static constexpr const char* names[] = {"debug", "info", "warn", "error"};
  std::lock_guard<std::mutex> lock(mu);
  std::clog << "[" << names[static_cast<int>(level)] << "] " << message << '\n';
}

inline void debug(const std::string& m) { write(Level::debug, m); }
inline void info(const std::string& m) { write(Level::info, m); }
inline void warn(const std::string& m) { write(Level::warn, m); }

}  // namespace coad::log
