#pragma once

#include <cstdlib>
#include <cstring>

namespace ttm {

enum class LogLevel { Quiet = 0, Info = 1, Debug = 2 };

/// Verbosity from the TTM_LOG environment variable (quiet|info|debug),
/// read once. Defaults to info.
inline LogLevel log_level() {
  static const LogLevel level = [] {
    const char* env = std::getenv("TTM_LOG");
    if (env == nullptr) return LogLevel::Info;
    if (std::strcmp(env, "quiet") == 0) return LogLevel::Quiet;
    if (std::strcmp(env, "debug") == 0) return LogLevel::Debug;
    return LogLevel::Info;
  }();
  return level;
}

}  // namespace ttm
