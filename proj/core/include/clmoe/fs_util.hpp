// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace clmoe {

/// Reads a whole file; IoError with the path on failure.
std::string read_file(const std::filesystem::path& path);

/// Writes to `<path>.tmp` and renames over `path`, so readers only ever see
/// a complete file.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

void ensure_directory(const std::filesystem::path& dir);

/// Exclusive advisory lock on `<dir>/.lock`, released on destruction or
/// process exit. Throws IoError when another process holds it.
class DirectoryLock {
 public:
  explicit DirectoryLock(const std::filesystem::path& dir);
  ~DirectoryLock();
  DirectoryLock(const DirectoryLock&) = delete;
  DirectoryLock& operator=(const DirectoryLock&) = delete;

 private:
  int fd_ = -1;
};

}  // namespace clmoe
