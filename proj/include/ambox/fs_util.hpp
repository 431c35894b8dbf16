#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace ambox {

/// Throws Error(IoFailure).
std::string read_file(const std::filesystem::path& path);

/// tmp file + fsync + rename + directory fsync. A reader sees either the
/// old or the new content, never a mix.
void write_file_atomic(const std::filesystem::path& path, std::string_view content, bool sync = true);

void truncate_file(const std::filesystem::path& path, std::size_t size);

/// Loops over partial writes; throws Error(IoFailure).
void write_all(int fd, std::string_view data);

}  // namespace ambox
