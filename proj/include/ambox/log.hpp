#pragma once

#include <functional>
#include <mutex>
#include <ostream>
#include <string>
#include <string_view>

#include <json.hpp>

#include "ambox/time.hpp"

namespace ambox {

enum class LogLevel { Debug = 0, Info = 1, Warn = 2, Error = 3, Off = 4 };

LogLevel parse_log_level(std::string_view name);

/// JSON-lines logger. Every line carries the time of the clock that drives
/// the process ("virtual" under the harness, "wall" otherwise).
class Logger {
 public:
  using ClockFn = std::function<Timestamp()>;

  Logger() = default;
  Logger(std::ostream* sink, LogLevel level, std::string clock_kind, ClockFn clock);

  void set_clock(std::string clock_kind, ClockFn clock);
  void set_level(LogLevel level) { level_ = level; }
  bool enabled(LogLevel level) const { return sink_ != nullptr && level >= level_; }

  void log(LogLevel level, std::string_view component, std::string_view msg,
           const nlohmann::json& fields = nlohmann::json::object());

  void debug(std::string_view c, std::string_view m, const nlohmann::json& f = nlohmann::json::object()) {
    log(LogLevel::Debug, c, m, f);
  }
  void info(std::string_view c, std::string_view m, const nlohmann::json& f = nlohmann::json::object()) {
    log(LogLevel::Info, c, m, f);
  }
  void warn(std::string_view c, std::string_view m, const nlohmann::json& f = nlohmann::json::object()) {
    log(LogLevel::Warn, c, m, f);
  }
  void error(std::string_view c, std::string_view m, const nlohmann::json& f = nlohmann::json::object()) {
    log(LogLevel::Error, c, m, f);
  }

  /// A logger that drops everything.
  static Logger& null();

 private:
  std::ostream* sink_ = nullptr;
  LogLevel level_ = LogLevel::Off;
  std::string clock_kind_ = "wall";
  ClockFn clock_;
  std::mutex mu_;
};

}  // namespace ambox
