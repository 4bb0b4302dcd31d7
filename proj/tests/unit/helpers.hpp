#pragma once

#include <filesystem>
#include <string>

#include "relcat/common.hpp"

inline std::string data_path(const std::string& rel) { return std::string(RELCAT_TEST_DATA) + "/" + rel; }

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / "relcat_unit" / name;
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}
