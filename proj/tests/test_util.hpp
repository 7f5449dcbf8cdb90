#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "ssopf/case.hpp"

namespace testutil {

inline std::filesystem::path data(const std::string& name) {
  return std::filesystem::path(DATA_DIR) / name;
}

inline const ssopf::NetworkCase& wscc9() {
  static const ssopf::NetworkCase c = ssopf::load_case(data("wscc9.json"));
  return c;
}

inline const ssopf::NetworkCase& two_bus() {
  static const ssopf::NetworkCase c = ssopf::load_case(data("two_bus.json"));
  return c;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& tag) {
  auto p = std::filesystem::temp_directory_path() / ("ssopf_test_" + tag);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace testutil
