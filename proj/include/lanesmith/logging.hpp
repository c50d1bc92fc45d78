#pragma once

#include <string>

namespace lanesmith {

// Verbosity comes from the LANESMITH_LOG environment variable:
// "error", "warn", "info" (default), or "debug".
enum class LogLevel { kError = 0, kWarn = 1, kInfo = 2, kDebug = 3 };

LogLevel log_level();
void set_log_level(LogLevel level);

void log_error(const std::string& msg);
void log_warn(const std::string& msg);
void log_info(const std::string& msg);
void log_debug(const std::string& msg);

}  // namespace lanesmith
