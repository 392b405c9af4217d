#pragma once

#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <mutex>

// Minimal stderr logger. Level comes from the PROTOKIT_LOG environment
// variable: error, warn, info (default), debug.

namespace protokit::log {

enum class Level : int { Error = 0, Warn = 1, Info = 2, Debug = 3 };

inline Level& threshold() {
  static Level lvl = [] {
    const char* env = std::getenv("PROTOKIT_LOG");
    if (!env) return Level::Info;
    if (std::strcmp(env, "error") == 0) return Level::Error;
    if (std::strcmp(env, "warn") == 0) return Level::Warn;
    if (std::strcmp(env, "debug") == 0) return Level::Debug;
    return Level::Info;
  }();
  return lvl;
}

inline std::mutex& mutex() {
  static std::mutex m;
  return m;
}

inline void vlog(Level lvl, const char* tag, const char* fmt, va_list ap) {
  if (lvl > threshold()) return;
  std::lock_guard<std::mutex> lock(mutex());
  std::fprintf(stderr, "[%s] ", tag);
  std::vfprintf(stderr, fmt, ap);
  std::fputc('\n', stderr);
}

inline void error(const char* fmt, ...) {
  va_list ap;
  va_start(ap, fmt);
  vlog(Level::Error, "error", fmt, ap);
  va_end(ap);
}

inline void warn(const char* fmt, ...) {
  va_list ap;
  va_start(ap, fmt);
  vlog(Level::Warn, "warn", fmt, ap);
  va_end(ap);
}

inline void info(const char* fmt, ...) {
  va_list ap;
  va_start(ap, fmt);
  vlog(Level::Info, "info", fmt, ap);
  va_end(ap);
}

inline void debug(const char* fmt, ...) {
  va_list ap;
  va_start(ap, fmt);
  vlog(Level::Debug, "debug", fmt, ap);
  va_end(ap);
}

}  // namespace protokit::log
