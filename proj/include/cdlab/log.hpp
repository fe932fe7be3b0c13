#pragma once

#include <string>

namespace cdlab {

enum class LogLevel { error = 0, info = 1, debug = 2 };

/// Level from CDLAB_LOG (error|info|debug); defaults to info. Throws
/// ConfigError on an unrecognised value.
LogLevel log_level_from_env();
void set_log_level(LogLevel level);
LogLevel log_level();

void log_error(const std::string& message);
void log_info(const std::string& message);
void log_debug(const std::string& message);

}  // namespace cdlab
