#include "ambox/log.hpp"

#include <chrono>

#include "ambox/error.hpp"

namespace ambox {

LogLevel parse_log_level(std::string_view name) {
  if (name == "debug") return LogLevel::Debug;
  if (name == "info") return LogLevel::Info;
  if (name == "warn") return LogLevel::Warn;
  if (name == "error") return LogLevel::Error;
  if (name == "off") return LogLevel::Off;
  throw Error(ErrorCode::ConfigInvalid, "unknown log level '" + std::string(name) + "'");
}

Logger::Logger(std::ostream* sink, LogLevel level, std::string clock_kind, ClockFn clock)
    : sink_(sink), level_(level), clock_kind_(std::move(clock_kind)), clock_(std::move(clock)) {}

void Logger::set_clock(std::string clock_kind, ClockFn clock) {
  std::lock_guard lock(mu_);
  clock_kind_ = std::move(clock_kind);
  clock_ = std::move(clock);
}

void Logger::log(LogLevel level, std::string_view component, std::string_view msg,
                 const nlohmann::json& fields) {
  if (!enabled(level)) return;
  static constexpr const char* kNames[] = {"debug", "info", "warn", "error", "off"};
  std::lock_guard lock(mu_);
  Timestamp ts = clock_ ? clock_()
                        : std::chrono::time_point_cast<Duration>(std::chrono::system_clock::now());
  nlohmann::json line = {{"ts", format_rfc3339(ts)},
                         {"clock", clock_kind_},
                         {"level", kNames[static_cast<int>(level)]},
                         {"component", component},
                         {"msg", msg}};
  if (!fields.empty()) line["fields"] = fields;
  *sink_ << line.dump() << '\n';
  sink_->flush();
}

Logger& Logger::null() {
  static Logger instance;
  return instance;
}

}  // namespace ambox
