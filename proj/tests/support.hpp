#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "chatassist/error.hpp"

#ifndef CHATASSIST_DATA_DIR
#error "CHATASSIST_DATA_DIR must be defined"
#endif
#ifndef CHATASSIST_FIXTURE_DIR
#error "CHATASSIST_FIXTURE_DIR must be defined"
#endif

namespace testing {

inline std::filesystem::path data_dir() { return CHATASSIST_DATA_DIR; }
inline std::filesystem::path fixture(const std::string& name) {
  return std::filesystem::path(CHATASSIST_FIXTURE_DIR) / name;
}
inline std::filesystem::path domain_file() { return data_dir() / "student_loans" / "domain.json"; }
inline std::filesystem::path catalog_file() { return data_dir() / "student_loans" / "catalog.json"; }

inline std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  std::vector<nlohmann::json> out;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(nlohmann::json::parse(line));
  return out;
}

inline std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("chatassist-" + tag + "-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace testing

#define CHECK_ERROR_CODE(expr, ecode)                          \
  do {                                                         \
    bool thrown_ = false;                                      \
    try {                                                      \
      (void)(expr);                                            \
    } catch (const chatassist::Error& e) {                     \
      thrown_ = true;                                          \
      CHECK_MESSAGE(e.code() == (ecode), e.what());            \
    }                                                          \
    CHECK_MESSAGE(thrown_, "expected error " #ecode);          \
  } while (0)
