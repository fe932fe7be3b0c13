#include "cdlab/log.hpp"

#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <memory>

#include "cdlab/error.hpp"

namespace cdlab {

namespace {

spdlog::logger& logger() {
  static auto instance = [] {
    auto l = std::make_shared<spdlog::logger>("cdlab", std::make_shared<spdlog::sinks::stderr_sink_mt>());
    l->set_pattern("[%H:%M:%S.%e] [%l] %v");
    l->set_level(spdlog::level::info);
    return l;
  }();
  return *instance;
}

LogLevel g_level = LogLevel::info;

}  // namespace

LogLevel log_level_from_env() {
  const char* v = std::getenv("CDLAB_LOG");
  if (!v || !*v) return LogLevel::info;
  const std::string s(v);
  if (s == "error") return LogLevel::error;
  if (s == "info") return LogLevel::info;
  if (s == "debug") return LogLevel::debug;
  throw ConfigError("CDLAB_LOG must be one of error, info, debug (got '" + s + "')");
}

void set_log_level(LogLevel level) {
  g_level = level;
  switch (level) {
    case LogLevel::error:
      logger().set_level(spdlog::level::err);
      break;
    case LogLevel::info:
      logger().set_level(spdlog::level::info);
      break;
    case LogLevel::debug:
      logger().set_level(spdlog::level::debug);
      break;
  }
}

LogLevel log_level() { return g_level; }

void log_error(const std::string& message) { logger().error(message); }
void log_info(const std::string& message) { logger().info(message); }
void log_debug(const std::string& message) {
  if (g_level == LogLevel::debug) logger().debug(message);
}

}  // namespace cdlab
