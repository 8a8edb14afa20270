#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "smamba/random.hpp"
#include "smamba/tensor.hpp"

namespace smamba::model {

inline constexpr double kNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;
inline constexpr double kProjectionInitStd = 0.02;

// y = x W^T + b for x [L, in], weight [out, in].
struct Linear {
  Tensor weight;
  Tensor bias;

  static Linear zeros(std::size_t in, std::size_t out);
  static Linear init(std::size_t in, std::size_t out, Rng& rng);
  std::size_t in_features() const { return weight.extent(1); }
  std::size_t out_features() const { return weight.extent(0); }

  template <typename F>
  void for_each_param(const std::string& prefix, F&& f) {
    f(prefix + "weight", weight);
    f(prefix + "bias", bias);
  }
};

// Per-channel 3x3 filter with zero padding, weight [C, 3, 3].
struct DepthwiseConv3x3 {
  Tensor weight;
  Tensor bias;

  static DepthwiseConv3x3 zeros(std::size_t channels);
  static DepthwiseConv3x3 init(std::size_t channels, Rng& rng);

  template <typename F>
  void for_each_param(const std::string& prefix, F&& f) {
    f(prefix + "weight", weight);
    f(prefix + "bias", bias);
  }
};

// Dense 3x3 convolution, padding 1, weight [Cout, 3, 3, Cin].
struct Conv3x3 {
  Tensor weight;
  Tensor bias;
  std::size_t stride = 1;

  static Conv3x3 zeros(std::size_t in, std::size_t out, std::size_t stride);
  static Conv3x3 init(std::size_t in, std::size_t out, std::size_t stride, Rng& rng);
  std::size_t in_channels() const { return weight.extent(3); }
  std::size_t out_channels() const { return weight.extent(0); }

  template <typename F>
  void for_each_param(const std::string& prefix, F&& f) {
    f(prefix + "weight", weight);
    f(prefix + "bias", bias);
  }
};

// Normalizes the last axis.
struct LayerNorm {
  Tensor gamma;
  Tensor beta;

  static LayerNorm init(std::size_t channels);

  template <typename F>
  void for_each_param(const std::string& prefix, F&& f) {
    f(prefix + "gamma", gamma);
    f(prefix + "beta", beta);
  }
};

struct LayerNormCache {
  Tensor xhat;     // same shape as input
  Tensor inv_std;  // one per normalized row
};

// Normalizes each channel over batch and spatial positions. Running statistics
// are buffers, not trainable parameters.
struct BatchNorm {
  Tensor gamma;
  Tensor beta;
  Tensor running_mean;
  Tensor running_var;

  static BatchNorm init(std::size_t channels);

  template <typename F>
  void for_each_param(const std::string& prefix, F&& f) {
    f(prefix + "gamma", gamma);
    f(prefix + "beta", beta);
  }
  template <typename F>
  void for_each_buffer(const std::string& prefix, F&& f) {
    f(prefix + "running_mean", running_mean);
    f(prefix + "running_var", running_var);
  }
};

enum class NormMode { train, eval };

struct BatchNormCache {
  std::vector<Tensor> xhat;
  Tensor mean;     // batch mean [C]
  Tensor var;      // biased batch variance [C]
  Tensor inv_std;  // [C]
  std::size_t count = 0;  // samples per channel (batch * H * W)
};

Tensor linear(const Tensor& x, const Linear& w);
Tensor depthwise_conv3x3(const Tensor& x, const DepthwiseConv3x3& w);
// Local perception unit: x + depthwise3x3(x).
Tensor lpu(const Tensor& x, const DepthwiseConv3x3& w);
Tensor conv3x3(const Tensor& x, const Conv3x3& w);
Tensor layer_norm(const Tensor& x, const LayerNorm& ln, LayerNormCache* cache = nullptr);

// Uses the statistics of `batch`; leaves the running statistics untouched.
std::vector<Tensor> batch_norm_train(const std::vector<Tensor>& batch, const BatchNorm& bn,
                                     BatchNormCache* cache = nullptr);
Tensor batch_norm_eval(const Tensor& x, const BatchNorm& bn);
// running = (1 - momentum) running + momentum batch, with the unbiased batch variance.
void update_running_stats(BatchNorm& bn, const BatchNormCache& cache);

double silu(double x) noexcept;
double silu_derivative(double x) noexcept;
// GELU, tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
double gelu(double x) noexcept;
double gelu_derivative(double x) noexcept;

Tensor silu(const Tensor& x);
Tensor gelu(const Tensor& x);

// [H, W, C] -> [C]
Tensor global_avg_pool(const Tensor& x);

}  // namespace smamba::model
