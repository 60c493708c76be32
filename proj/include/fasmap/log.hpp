#pragma once

#include <atomic>
#include <iostream>
#include <mutex>
#include <string_view>

namespace fasmap::log {

inline std::atomic<int>& verbosity() {
  static std::atomic<int> level{1};
  return level;
}

inline std::mutex& sink_mutex() {
  static std::mutex m;
  return m;
}

inline void warn(std::string_view msg) {
  if (verbosity().load() < 1) return;
  std::lock_guard<std::mutex> lock(sink_mutex());
  std::cerr << "[fasmap] warning: " << msg << '\n';
}

inline void info(std::string_view msg) {
  if (verbosity().load() < 2) return;
  std::lock_guard<std::mutex> lock(sink_mutex());
  std::cerr << "[fasmap] " << msg << '\n';
}

}  // namespace fasmap::log
