#pragma once

#include <cstdint>
#include <random>

#include "smamba/tensor.hpp"

namespace smamba {

class Rng {
 public:
  explicit Rng(std::uint64_t seed = 42) : engine_(seed) {}

  double uniform(double lo = 0.0, double hi = 1.0) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }
  // Normal draw resampled until it lies within two standard deviations.
  double truncated_normal(double stddev);
  std::size_t index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }

  void fill_uniform(Tensor& t, double lo, double hi);
  void fill_normal(Tensor& t, double stddev);
  void fill_truncated_normal(Tensor& t, double stddev);

  Tensor uniform_tensor(Shape shape, double lo = -1.0, double hi = 1.0);

  std::mt19937_64& engine() noexcept { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace smamba
