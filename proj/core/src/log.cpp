#include "spkemb/log.hpp"

#include <cstdlib>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

namespace spkemb {
namespace {

std::shared_ptr<spdlog::logger> make_logger() {
  auto lg = spdlog::stderr_color_mt("spkemb");
  lg->set_pattern("[%H:%M:%S.%e] [%^%l%$] %v");
  const char* env = std::getenv("SPKEMB_LOG_LEVEL");
  lg->set_level(env ? spdlog::level::from_str(env) : spdlog::level::info);
  return lg;
}

spdlog::logger& logger() {
  static std::shared_ptr<spdlog::logger> lg = make_logger();
  return *lg;
}

}  // namespace

void log_debug(const std::string& msg) { logger().debug(msg); }
void log_info(const std::string& msg) { logger().info(msg); }
void log_warn(const std::string& msg) { logger().warn(msg); }
void log_error(const std::string& msg) { logger().error(msg); }

void set_log_level(const std::string& level) {
  logger().set_level(spdlog::level::from_str(level));
}

}  // namespace spkemb
