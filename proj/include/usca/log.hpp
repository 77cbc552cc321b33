#pragma once

// Minimal leveled logging to stderr. The level comes from SCA_LOG
// (error, info or debug; default info) on first use.

#include <string_view>

namespace usca::log {

enum class Level { Error = 0, Info = 1, Debug = 2 };

Level level();
void set_level(Level l);
/// Parses error/info/debug; throws ValidationError otherwise.
Level parse_level(std::string_view s);

void error(std::string_view msg);
void info(std::string_view msg);
void debug(std::string_view msg);
void warn(std::string_view msg);  // printed at info and above

}  // namespace usca::log
