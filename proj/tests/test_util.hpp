#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "enzyme/schema.hpp"

namespace testutil {

/// Fresh scratch directory, removed on destruction.
class TempDir {
public:
  explicit TempDir(const std::string& tag) {
    static std::mt19937_64 rng{std::random_device{}()};
    path_ = std::filesystem::temp_directory_path() /
            ("enzyme_" + tag + "_" + std::to_string(rng()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

private:
  std::filesystem::path path_;
};

inline enzyme::Row row(std::initializer_list<enzyme::Value> vs) { return enzyme::Row(vs); }

}  // namespace testutil
