#include "ccic/common.hpp"

#include <cstdio>
#include <cstdlib>
#include <mutex>
#include <string>

#include <spdlog/sinks/stdout_color_sinks.h>

#include "ccic/log.hpp"

namespace ccic {

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string format_exact(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::shared_ptr<spdlog::logger> logger() {
  static std::once_flag once;
  static std::shared_ptr<spdlog::logger> log;
  std::call_once(once, [] {
    log = spdlog::stderr_color_mt("ccic");
    auto level = spdlog::level::warn;
    if (const char* env = std::getenv("CCIC_LOG_LEVEL")) {
      const std::string s = env;
      if (s == "error") level = spdlog::level::err;
      else if (s == "warn") level = spdlog::level::warn;
      else if (s == "info") level = spdlog::level::info;
      else if (s == "debug") level = spdlog::level::debug;
    }
    log->set_level(level);
  });
  return log;
}

}  // namespace ccic
