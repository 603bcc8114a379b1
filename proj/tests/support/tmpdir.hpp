#pragma once

#include <atomic>
#include <filesystem>
#include <string>

// Unique scratch directory under the system temp dir, removed on destruction.
struct TmpDir {
  std::filesystem::path path;

  explicit TmpDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path = std::filesystem::temp_directory_path() /
           ("ssmmt_test_" + tag + "_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter++));
    std::filesystem::create_directories(path);
  }

  ~TmpDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }

  TmpDir(const TmpDir&) = delete;
  TmpDir& operator=(const TmpDir&) = delete;

  std::filesystem::path operator/(const std::string& name) const { return path / name; }
};
