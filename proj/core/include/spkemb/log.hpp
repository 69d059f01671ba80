#pragma once

#include <string>

namespace spkemb {

/// Thin wrappers over a shared stderr logger. The level comes from the
/// SPKEMB_LOG_LEVEL environment variable (trace..off), default "info".
void log_debug(const std::string& msg);
void log_info(const std::string& msg);
void log_warn(const std::string& msg);
void log_error(const std::string& msg);

/// Overrides the environment setting, e.g. to silence tests.
void set_log_level(const std::string& level);

}  // namespace spkemb
