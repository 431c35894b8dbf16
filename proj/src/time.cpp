#include "ambox/time.hpp"

#include <charconv>
#include <cstdio>

#include "ambox/error.hpp"

namespace ambox {

namespace {

int parse_fixed(std::string_view s, std::size_t pos, std::size_t len) {
  if (pos + len > s.size()) throw Error(ErrorCode::ParseError, "timestamp too short");
  int value = 0;
  for (std::size_t i = pos; i < pos + len; ++i) {
    char c = s[i];
    if (c < '0' || c > '9') throw Error(ErrorCode::ParseError, "bad digit in timestamp");
    value = value * 10 + (c - '0');
  }
  return value;
}

void expect_char(std::string_view s, std::size_t pos, char c) {
  if (pos >= s.size() || s[pos] != c) throw Error(ErrorCode::ParseError, "malformed timestamp");
}

}  // namespace

std::string format_rfc3339(Timestamp t) {
  using namespace std::chrono;
  auto day = floor<days>(t);
  year_month_day ymd{day};
  auto rem = t - day;
  auto h = duration_cast<hours>(rem);
  rem -= h;
  auto m = duration_cast<minutes>(rem);
  rem -= m;
  auto s = duration_cast<seconds>(rem);
  rem -= s;
  char buf[40];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02d.%03dZ", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                static_cast<int>(h.count()), static_cast<int>(m.count()), static_cast<int>(s.count()),
                static_cast<int>(rem.count()));
  return buf;
}

Timestamp parse_rfc3339(std::string_view s) {
  using namespace std::chrono;
  if (s.size() != 24) throw Error(ErrorCode::ParseError, "timestamp must be YYYY-MM-DDTHH:MM:SS.mmmZ");
  int y = parse_fixed(s, 0, 4);
  expect_char(s, 4, '-');
  int mo = parse_fixed(s, 5, 2);
  expect_char(s, 7, '-');
  int d = parse_fixed(s, 8, 2);
  expect_char(s, 10, 'T');
  int hh = parse_fixed(s, 11, 2);
  expect_char(s, 13, ':');
  int mm = parse_fixed(s, 14, 2);
  expect_char(s, 16, ':');
  int ss = parse_fixed(s, 17, 2);
  expect_char(s, 19, '.');
  int ms = parse_fixed(s, 20, 3);
  expect_char(s, 23, 'Z');
  year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
  if (!ymd.ok() || hh > 23 || mm > 59 || ss > 59) throw Error(ErrorCode::ParseError, "timestamp out of range");
  return time_point_cast<Duration>(sys_days{ymd}) + hours{hh} + minutes{mm} + seconds{ss} + Duration{ms};
}

Duration parse_duration(std::string_view text) {
  if (text.empty()) throw Error(ErrorCode::InvalidArgument, "empty duration");
  std::size_t unit_pos = text.find_first_not_of("0123456789.");
  std::string_view number = text.substr(0, unit_pos);
  std::string_view unit = unit_pos == std::string_view::npos ? "s" : text.substr(unit_pos);
  double value = 0;
  auto [ptr, ec] = std::from_chars(number.data(), number.data() + number.size(), value);
  if (ec != std::errc{} || ptr != number.data() + number.size() || number.empty())
    throw Error(ErrorCode::InvalidArgument, "bad duration '" + std::string(text) + "'");
  double scale = 0;
  if (unit == "ms") scale = 1;
  else if (unit == "s") scale = 1000;
  else if (unit == "m" || unit == "min") scale = 60'000;
  else if (unit == "h") scale = 3'600'000;
  else throw Error(ErrorCode::InvalidArgument, "bad duration unit '" + std::string(unit) + "'");
  return Duration{static_cast<std::int64_t>(value * scale + 0.5)};
}

}  // namespace ambox
