#include "smamba/layers.hpp"

#include <cmath>
#include <numbers>

#include "smamba/errors.hpp"
#include "smamba/ssm.hpp"

namespace smamba::model {

Linear Linear::zeros(std::size_t in, std::size_t out) { return {Tensor({out, in}), Tensor({out})}; }

Linear Linear::init(std::size_t in, std::size_t out, Rng& rng) {
  Linear l = zeros(in, out);
  rng.fill_truncated_normal(l.weight, kProjectionInitStd);
  return l;
}

DepthwiseConv3x3 DepthwiseConv3x3::zeros(std::size_t channels) {
  return {Tensor({channels, 3, 3}), Tensor({channels})};
}

DepthwiseConv3x3 DepthwiseConv3x3::init(std::size_t channels, Rng& rng) {
  DepthwiseConv3x3 c = zeros(channels);
  rng.fill_truncated_normal(c.weight, 1.0 / 3.0);
  return c;
}

Conv3x3 Conv3x3::zeros(std::size_t in, std::size_t out, std::size_t stride) {
  if (stride == 0) throw DomainError("conv3x3: stride must be positive");
  return {Tensor({out, 3, 3, in}), Tensor({out}), stride};
}

Conv3x3 Conv3x3::init(std::size_t in, std::size_t out, std::size_t stride, Rng& rng) {
  Conv3x3 c = zeros(in, out, stride);
  rng.fill_truncated_normal(c.weight, 1.0 / std::sqrt(9.0 * static_cast<double>(in)));
  return c;
}

LayerNorm LayerNorm::init(std::size_t channels) { return {Tensor({channels}, 1.0), Tensor({channels})}; }

BatchNorm BatchNorm::init(std::size_t channels) {
  return {Tensor({channels}, 1.0), Tensor({channels}), Tensor({channels}), Tensor({channels}, 1.0)};
}

Tensor linear(const Tensor& x, const Linear& w) {
  const std::size_t in = w.in_features(), out = w.out_features();
  if (x.rank() != 2 || x.extent(1) != in) {
    throw ShapeError("linear: expected [L, " + std::to_string(in) + "], got " + shape_to_string(x.shape()));
  }
  const std::size_t L = x.extent(0);
  Tensor y({L, out});
  for (std::size_t t = 0; t < L; ++t) {
    const double* xt = x.data() + t * in;
    double* yt = y.data() + t * out;
    for (std::size_t o = 0; o < out; ++o) {
      const double* wo = w.weight.data() + o * in;
      double acc = w.bias[o];
      for (std::size_t i = 0; i < in; ++i) acc += wo[i] * xt[i];
      yt[o] = acc;
    }
  }
  return y;
}

Tensor depthwise_conv3x3(const Tensor& x, const DepthwiseConv3x3& w) {
  if (x.rank() != 3 || x.extent(2) != w.weight.extent(0)) {
    throw ShapeError("depthwise_conv3x3: grid " + shape_to_string(x.shape()) + " vs weight " +
                     shape_to_string(w.weight.shape()));
  }
  const auto H = static_cast<long>(x.extent(0)), W = static_cast<long>(x.extent(1));
  const std::size_t C = x.extent(2);
  Tensor y(x.shape());
  for (long r = 0; r < H; ++r) {
    for (long c = 0; c < W; ++c) {
      double* out = y.data() + static_cast<std::size_t>(r * W + c) * C;
      for (std::size_t ch = 0; ch < C; ++ch) out[ch] = w.bias[ch];
      for (int i = -1; i <= 1; ++i) {
        const long rr = r + i;
        if (rr < 0 || rr >= H) continue;
        for (int j = -1; j <= 1; ++j) {
          const long cc = c + j;
          if (cc < 0 || cc >= W) continue;
          const double* in = x.data() + static_cast<std::size_t>(rr * W + cc) * C;
          for (std::size_t ch = 0; ch < C; ++ch) out[ch] += w.weight.at(ch, i + 1, j + 1) * in[ch];
        }
      }
    }
  }
  return y;
}

Tensor lpu(const Tensor& x, const DepthwiseConv3x3& w) { return add(x, depthwise_conv3x3(x, w)); }

Tensor conv3x3(const Tensor& x, const Conv3x3& w) {
  const std::size_t Cin = w.in_channels(), Cout = w.out_channels();
  if (x.rank() != 3 || x.extent(2) != Cin) {
    throw ShapeError("conv3x3: grid " + shape_to_string(x.shape()) + " vs weight " + shape_to_string(w.weight.shape()));
  }
  const auto H = static_cast<long>(x.extent(0)), W = static_cast<long>(x.extent(1));
  const auto s = static_cast<long>(w.stride);
  const long Ho = (H - 1) / s + 1, Wo = (W - 1) / s + 1;
  Tensor y({static_cast<std::size_t>(Ho), static_cast<std::size_t>(Wo), Cout});
  for (long r = 0; r < Ho; ++r) {
    for (long c = 0; c < Wo; ++c) {
      double* out = y.data() + static_cast<std::size_t>(r * Wo + c) * Cout;
      for (std::size_t o = 0; o < Cout; ++o) out[o] = w.bias[o];
      for (int i = 0; i < 3; ++i) {
        const long rr = r * s + i - 1;
        if (rr < 0 || rr >= H) continue;
        for (int j = 0; j < 3; ++j) {
          const long cc = c * s + j - 1;
          if (cc < 0 || cc >= W) continue;
          const double* in = x.data() + static_cast<std::size_t>(rr * W + cc) * Cin;
          for (std::size_t o = 0; o < Cout; ++o) {
            const double* k = w.weight.data() + ((o * 3 + i) * 3 + j) * Cin;
            double acc = 0.0;
            for (std::size_t ci = 0; ci < Cin; ++ci) acc += k[ci] * in[ci];
            out[o] += acc;
          }
        }
      }
    }
  }
  return y;
}

Tensor layer_norm(const Tensor& x, const LayerNorm& ln, LayerNormCache* cache) {
  const std::size_t C = ln.gamma.size();
  if (x.rank() == 0 || x.shape().back() != C) {
    throw ShapeError("layer_norm: last axis of " + shape_to_string(x.shape()) + " != " + std::to_string(C));
  }
  const std::size_t rows = x.size() / C;
  Tensor y(x.shape());
  if (cache) {
    cache->xhat = Tensor(x.shape());
    cache->inv_std = Tensor({rows});
  }
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = x.data() + r * C;
    double mean = 0.0;
    for (std::size_t c = 0; c < C; ++c) mean += in[c];
    mean /= static_cast<double>(C);
    double var = 0.0;
    for (std::size_t c = 0; c < C; ++c) var += (in[c] - mean) * (in[c] - mean);
    var /= static_cast<double>(C);
    const double inv_std = 1.0 / std::sqrt(var + kNormEps);
    for (std::size_t c = 0; c < C; ++c) {
      const double xhat = (in[c] - mean) * inv_std;
      y[r * C + c] = ln.gamma[c] * xhat + ln.beta[c];
      if (cache) cache->xhat[r * C + c] = xhat;
    }
    if (cache) cache->inv_std[r] = inv_std;
  }
  return y;
}

std::vector<Tensor> batch_norm_train(const std::vector<Tensor>& batch, const BatchNorm& bn, BatchNormCache* cache) {
  const std::size_t C = bn.gamma.size();
  if (batch.empty()) throw ShapeError("batch_norm_train: empty batch");
  for (const Tensor& x : batch) {
    if (x.rank() != 3 || x.extent(2) != C || x.shape() != batch.front().shape()) {
      throw ShapeError("batch_norm_train: inconsistent batch shapes");
    }
  }
  const std::size_t per_sample = batch.front().size() / C;
  const std::size_t count = per_sample * batch.size();
  Tensor mean({C}), var({C}), inv_std({C});
  for (const Tensor& x : batch) {
    for (std::size_t p = 0; p < per_sample; ++p) {
      for (std::size_t c = 0; c < C; ++c) mean[c] += x[p * C + c];
    }
  }
  for (double& m : mean.values()) m /= static_cast<double>(count);
  for (const Tensor& x : batch) {
    for (std::size_t p = 0; p < per_sample; ++p) {
      for (std::size_t c = 0; c < C; ++c) {
        const double d = x[p * C + c] - mean[c];
        var[c] += d * d;
      }
    }
  }
  for (std::size_t c = 0; c < C; ++c) {
    var[c] /= static_cast<double>(count);
    inv_std[c] = 1.0 / std::sqrt(var[c] + kNormEps);
  }
  std::vector<Tensor> out;
  out.reserve(batch.size());
  if (cache) cache->xhat.clear();
  for (const Tensor& x : batch) {
    Tensor y(x.shape()), xhat(x.shape());
    for (std::size_t p = 0; p < per_sample; ++p) {
      for (std::size_t c = 0; c < C; ++c) {
        const std::size_t i = p * C + c;
        xhat[i] = (x[i] - mean[c]) * inv_std[c];
        y[i] = bn.gamma[c] * xhat[i] + bn.beta[c];
      }
    }
    out.push_back(std::move(y));
    if (cache) cache->xhat.push_back(std::move(xhat));
  }
  if (cache) {
    cache->mean = std::move(mean);
    cache->var = std::move(var);
    cache->inv_std = std::move(inv_std);
    cache->count = count;
  }
  return out;
}

Tensor batch_norm_eval(const Tensor& x, const BatchNorm& bn) {
  const std::size_t C = bn.gamma.size();
  if (x.rank() != 3 || x.extent(2) != C) throw ShapeError("batch_norm_eval: channel mismatch");
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const std::size_t c = i % C;
    y[i] = bn.gamma[c] * (x[i] - bn.running_mean[c]) / std::sqrt(bn.running_var[c] + kNormEps) + bn.beta[c];
  }
  return y;
}

void update_running_stats(BatchNorm& bn, const BatchNormCache& cache) {
  const double n = static_cast<double>(cache.count);
  const double unbias = cache.count > 1 ? n / (n - 1.0) : 1.0;
  for (std::size_t c = 0; c < bn.gamma.size(); ++c) {
    bn.running_mean[c] = (1.0 - kBatchNormMomentum) * bn.running_mean[c] + kBatchNormMomentum * cache.mean[c];
    bn.running_var[c] = (1.0 - kBatchNormMomentum) * bn.running_var[c] + kBatchNormMomentum * cache.var[c] * unbias;
  }
}

double silu(double x) noexcept { return x * ssm::sigmoid(x); }

double silu_derivative(double x) noexcept {
  const double s = ssm::sigmoid(x);
  return s * (1.0 + x * (1.0 - s));
}

namespace {
constexpr double kGeluCubic = 0.044715;
const double kGeluScale = std::sqrt(2.0 / std::numbers::pi);
}  // namespace

double gelu(double x) noexcept { return 0.5 * x * (1.0 + std::tanh(kGeluScale * (x + kGeluCubic * x * x * x))); }

double gelu_derivative(double x) noexcept {
  const double th = std::tanh(kGeluScale * (x + kGeluCubic * x * x * x));
  return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * kGeluScale * (1.0 + 3.0 * kGeluCubic * x * x);
}

Tensor silu(const Tensor& x) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = silu(x[i]);
  return y;
}

Tensor gelu(const Tensor& x) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = gelu(x[i]);
  return y;
}

Tensor global_avg_pool(const Tensor& x) {
  if (x.rank() != 3) throw ShapeError("global_avg_pool: expected [H, W, C]");
  const std::size_t C = x.extent(2), P = x.extent(0) * x.extent(1);
  Tensor y({C});
  for (std::size_t p = 0; p < P; ++p) {
    for (std::size_t c = 0; c < C; ++c) y[c] += x[p * C + c];
  }
  for (double& v : y.values()) v /= static_cast<double>(P);
  return y;
}

}  // namespace smamba::model
