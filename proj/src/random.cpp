#include "smamba/random.hpp"

#include <cmath>

namespace smamba {

double Rng::truncated_normal(double stddev) {
  std::normal_distribution<double> dist(0.0, 1.0);
  for (;;) {
    const double z = dist(engine_);
    if (std::abs(z) <= 2.0) return z * stddev;
  }
}

void Rng::fill_uniform(Tensor& t, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  for (double& v : t.values()) v = dist(engine_);
}

void Rng::fill_normal(Tensor& t, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : t.values()) v = dist(engine_);
}

void Rng::fill_truncated_normal(Tensor& t, double stddev) {
  for (double& v : t.values()) v = truncated_normal(stddev);
}

Tensor Rng::uniform_tensor(Shape shape, double lo, double hi) {
  Tensor t(std::move(shape));
  fill_uniform(t, lo, hi);
  return t;
}

}  // namespace smamba
