#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"

#include "cdi/error.hpp"

#ifndef CDI_DATA_DIR
#define CDI_DATA_DIR "data"
#endif

namespace cdi {

// Shipped fixtures (workloads, baselines, anchors, reference topology).
// CDI_DATA_DIR in the environment overrides the build-time location.
inline std::filesystem::path data_dir() {
  if (const char* env = std::getenv("CDI_DATA_DIR"); env && *env) return env;
  return CDI_DATA_DIR;
}

inline std::string read_text_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) fail(Errc::schema_error, "cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline nlohmann::json load_json_file(const std::filesystem::path& p) {
  auto text = read_text_file(p);
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    fail(Errc::schema_error, p.string() + ": " + e.what());
  }
}

inline void write_text_file(const std::filesystem::path& p, const std::string& text) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) fail(Errc::schema_error, "cannot write " + p.string());
  out << text;
}

}  // namespace cdi
