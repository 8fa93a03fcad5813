#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <string>

#include "lmpvc/core_loop.hpp"
#include "lmpvc/runtime.hpp"

namespace testing {

inline std::string data(const std::string& rel) { return std::string(LMPVC_DATA_DIR) + "/" + rel; }
inline std::string fixture(const std::string& rel) { return std::string(LMPVC_TEST_FIXTURES) + "/" + rel; }
inline std::string config(const std::string& rel) { return std::string(LMPVC_CONFIG_DIR) + "/" + rel; }

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
    path_ = std::filesystem::temp_directory_path() /
            ("lmpvc-test-" + std::to_string(stamp) + "-" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string str() const { return path_.string(); }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

/// Default config with sleeps not waiting and the policies staged in `dir`.
inline lmpvc::Runtime demo_runtime(const TempDir& dir, const std::string& cfg = "default.json") {
  lmpvc::SessionConfig c = lmpvc::SessionConfig::load(config(cfg));
  c.time_dilation = 0.0;
  return lmpvc::open_runtime(c, dir.str());
}

}  // namespace testing

// The acceptance binary has its own main and no doctest.
#ifndef LMPVC_ACCEPTANCE
#include <doctest.h>

#include <sstream>
#include <vector>

namespace doctest {
template <>
struct StringMaker<std::vector<std::string>> {
  static String convert(const std::vector<std::string>& v) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < v.size(); ++i) os << (i ? ", " : "") << '"' << v[i] << '"';
    os << "]";
    return os.str().c_str();
  }
};
}  // namespace doctest
#endif
