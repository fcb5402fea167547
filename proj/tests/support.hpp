#pragma once

#include <algorithm>
#include <atomic>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "rhrn/tensor.hpp"

namespace rhrn::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "t") {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("rhrn-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
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
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

template <typename Scalar>
Tensor<Scalar> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<Scalar> t(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (Index i = 0; i < t.numel(); ++i) t[i] = static_cast<Scalar>(dist(rng));
  return t;
}

template <typename Scalar>
double max_abs_diff(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return (a.array().template cast<double>() - b.array().template cast<double>()).abs().maxCoeff();
}

/// max|a - b| / max|b|.
template <typename A, typename B>
double relative_error(const Tensor<A>& a, const Tensor<B>& b) {
  const auto ad = a.array().template cast<double>();
  const auto bd = b.array().template cast<double>();
  const double scale = bd.abs().maxCoeff();
  return (ad - bd).abs().maxCoeff() / (scale > 0 ? scale : 1.0);
}

template <typename Scalar>
bool bit_identical(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return a.shape() == b.shape() &&
         std::equal(a.data(), a.data() + a.numel(), b.data(), [](Scalar x, Scalar y) {
           return std::memcmp(&x, &y, sizeof(Scalar)) == 0;
         });
}

}  // namespace rhrn::testing
