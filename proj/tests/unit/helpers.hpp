#pragma once

#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <unistd.h>

#include "vlltr/tensor.hpp"
#include "vlltr/rng.hpp"

namespace vt {

inline vlltr::Tensor randn(vlltr::Rng& rng, vlltr::Shape s, double sd = 1.0) {
  std::normal_distribution<double> g(0.0, sd);
  vlltr::Tensor t(std::move(s));
  for (auto& v : t.vec()) v = g(rng);
  return t;
}

inline std::size_t pick(vlltr::Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

inline double max_abs_diff(const vlltr::Tensor& a, const vlltr::Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("vlltr_" + tag + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

}  // namespace vt
