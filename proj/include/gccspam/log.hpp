#pragma once

#include <atomic>
#include <iostream>
#include <sstream>
#include <string>

namespace gccspam::log {

enum class Level { debug = 0, info = 1, warn = 2, error = 3, off = 4 };

inline std::atomic<Level>& threshold() {
  static std::atomic<Level> level{Level::info};
  return level;
}

inline void set_level(Level level) { threshold() = level; }

template <typename... Args>
void write(Level level, const char* tag, const Args&... args) {
  if (level < threshold().load()) return;
  std::ostringstream os;
  os << "[" << tag << "] ";
  (os << ... << args);
  os << '\n';
  std::cerr << os.str();
}

template <typename... Args>
void debug(const Args&... args) { write(Level::debug, "debug", args...); }
template <typename... Args>
void info(const Args&... args) { write(Level::info, "info", args...); }
template <typename... Args>
void warn(const Args&... args) { write(Level::warn, "warn", args...); }

}  // namespace gccspam::log
