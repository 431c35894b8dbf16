#pragma once

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <random>
#include <string>

#include "ambox/time.hpp"

namespace ambox::test {

/// Fresh directory under /tmp, removed on destruction.
struct TempDir {
  std::filesystem::path path;

  explicit TempDir(const std::string& tag = "t") {
    static std::atomic<int> n{0};
    path = std::filesystem::temp_directory_path() /
           ("ambox-test-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(n++));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::filesystem::path operator/(const std::string& s) const { return path / s; }
};

inline Timestamp t0() { return from_millis(kDefaultEpochMillis); }
inline Timestamp at_min(std::int64_t m) { return t0() + Duration{m * 60'000}; }

inline std::string random_text(std::mt19937_64& rng, std::size_t max_len) {
  static const char alphabet[] = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789-_ .:/\"\\{}[]";
  std::string s(rng() % (max_len + 1), 'x');
  for (auto& c : s) c = alphabet[rng() % (sizeof alphabet - 1)];
  return s;
}

}  // namespace ambox::test
