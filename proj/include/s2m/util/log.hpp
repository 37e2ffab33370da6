#pragma once

#include <iostream>
#include <mutex>
#include <string>

#include "s2m/core/errors.hpp"

namespace s2m {

enum class LogLevel { Debug = 0, Info = 1, Warn = 2, Error = 3 };

inline LogLevel& log_level() {
  static LogLevel level = LogLevel::Info;
  return level;
}

inline LogLevel log_level_from_string(const std::string& s) {
  if (s == "debug") return LogLevel::Debug;
  if (s == "info") return LogLevel::Info;
  if (s == "warn") return LogLevel::Warn;
  if (s == "error") return LogLevel::Error;
  throw ValidationError("unknown log level '" + s + "' (expected debug|info|warn|error)");
}

inline void log(LogLevel level, const std::string& msg) {
  if (level < log_level()) return;
  static std::mutex mu;
  static const char* names[] = {"debug", "info", "warn", "error"};
  std::lock_guard<std::mutex> lock(mu);
  std::cerr << "[" << names[static_cast<int>(level)] << "] " << msg << "\n";
}

inline void log_debug(const std::string& m) { log(LogLevel::Debug, m); }
inline void log_info(const std::string& m) { log(LogLevel::Info, m); }
inline void log_warn(const std::string& m) { log(LogLevel::Warn, m); }
inline void log_error(const std::string& m) { log(LogLevel::Error, m); }

}  // namespace s2m
