#include "lanesmith/logging.hpp"

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <cstring>

namespace lanesmith {

namespace {

LogLevel level_from_env() {
  const char* env = std::getenv("LANESMITH_LOG");
  if (!env) return LogLevel::kInfo;
  if (std::strcmp(env, "error") == 0) return LogLevel::kError;
  if (std::strcmp(env, "warn") == 0) return LogLevel::kWarn;
  if (std::strcmp(env, "debug") == 0) return LogLevel::kDebug;
  return LogLevel::kInfo;
}

std::atomic<int> g_level{static_cast<int>(level_from_env())};

void emit(LogLevel lvl, const char* tag, const std::string& msg) {
  if (static_cast<int>(lvl) > g_level.load()) return;
  std::fprintf(stderr, "[%s] %s\n", tag, msg.c_str());
}

}  // namespace

LogLevel log_level() { return static_cast<LogLevel>(g_level.load()); }
void set_log_level(LogLevel level) { g_level.store(static_cast<int>(level)); }

void log_error(const std::string& msg) { emit(LogLevel::kError, "error", msg); }
void log_warn(const std::string& msg) { emit(LogLevel::kWarn, "warn", msg); }
void log_info(const std::string& msg) { emit(LogLevel::kInfo, "info", msg); }
void log_debug(const std::string& msg) { emit(LogLevel::kDebug, "debug", msg); }

}  // namespace lanesmith
