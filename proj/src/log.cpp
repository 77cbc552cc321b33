#include "usca/log.hpp"

#include <atomic>
#include <cstdlib>
#include <iostream>
#include <mutex>
#include <string>

#include "usca/error.hpp"

namespace usca::log {

namespace {

std::atomic<int>& current() {
  static std::atomic<int> lvl = [] {
    const char* env = std::getenv("SCA_LOG");
    if (!env || !*env) return static_cast<int>(Level::Info);
    try {
      return static_cast<int>(parse_level(env));
    } catch (const Error&) {
      std::cerr << "[warn] ignoring SCA_LOG=" << env << "\n";
      return static_cast<int>(Level::Info);
    }
  }();
  return lvl;
}

void emit(Level at, std::string_view tag, std::string_view msg) {
  if (static_cast<int>(at) > current().load()) return;
  static std::mutex mu;
  std::lock_guard lock(mu);
  std::cerr << '[' << tag << "] " << msg << '\n';
}

}  // namespace

Level level() { return static_cast<Level>(current().load()); }
void set_level(Level l) { current().store(static_cast<int>(l)); }

Level parse_level(std::string_view s) {
  if (s == "error") return Level::Error;
  if (s == "info") return Level::Info;
  if (s == "debug") return Level::Debug;
  throw ValidationError("log level must be error, info or debug, got '" + std::string(s) + "'");
}

void error(std::string_view msg) { emit(Level::Error, "error", msg); }
void info(std::string_view msg) { emit(Level::Info, "info", msg); }
void debug(std::string_view msg) { emit(Level::Debug, "debug", msg); }
void warn(std::string_view msg) { emit(Level::Info, "warn", msg); }

}  // namespace usca::log
