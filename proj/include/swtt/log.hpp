#pragma once

#include <string>

namespace swtt::log {

enum class Level { Error = 0, Warn = 1, Info = 2, Debug = 3 };

// Defaults to SWTT_LOG_LEVEL (error, warn, info or debug), else info.
Level level();
void set_level(Level l);
Level parse_level(const std::string& s);

void error(const std::string& msg);
void warn(const std::string& msg);
void info(const std::string& msg);
void debug(const std::string& msg);

}  // namespace swtt::log
