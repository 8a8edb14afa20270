#include "smamba/backward.hpp"

#include <cmath>

#include "smamba/errors.hpp"

namespace smamba::train {

using model::BatchNorm;
using model::BatchNormCache;
using model::Conv3x3;
using model::DepthwiseConv3x3;
using model::LayerNorm;
using model::LayerNormCache;
using model::Linear;

Tensor linear_backward(const Tensor& x, const Linear& w, const Tensor& dy, Linear& grad) {
  const std::size_t in = w.in_features(), out = w.out_features(), L = x.extent(0);
  dy.require_shape({L, out}, "linear_backward: dy");
  Tensor dx(x.shape());
  for (std::size_t t = 0; t < L; ++t) {
    const double* xt = x.data() + t * in;
    const double* gt = dy.data() + t * out;
    double* dxt = dx.data() + t * in;
    for (std::size_t o = 0; o < out; ++o) {
      const double g = gt[o];
      if (g == 0.0) continue;
      const double* wo = w.weight.data() + o * in;
      double* gwo = grad.weight.data() + o * in;
      for (std::size_t i = 0; i < in; ++i) {
        dxt[i] += g * wo[i];
        gwo[i] += g * xt[i];
      }
      grad.bias[o] += g;
    }
  }
  return dx;
}

Tensor depthwise_conv3x3_backward(const Tensor& x, const DepthwiseConv3x3& w, const Tensor& dy,
                                  DepthwiseConv3x3& grad) {
  dy.require_shape(x.shape(), "depthwise_conv3x3_backward: dy");
  const auto H = static_cast<long>(x.extent(0)), W = static_cast<long>(x.extent(1));
  const std::size_t C = x.extent(2);
  Tensor dx(x.shape());
  for (long r = 0; r < H; ++r) {
    for (long c = 0; c < W; ++c) {
      const double* g = dy.data() + static_cast<std::size_t>(r * W + c) * C;
      for (std::size_t ch = 0; ch < C; ++ch) grad.bias[ch] += g[ch];
      for (int i = -1; i <= 1; ++i) {
        const long rr = r + i;
        if (rr < 0 || rr >= H) continue;
        for (int j = -1; j <= 1; ++j) {
          const long cc = c + j;
          if (cc < 0 || cc >= W) continue;
          const std::size_t base = static_cast<std::size_t>(rr * W + cc) * C;
          for (std::size_t ch = 0; ch < C; ++ch) {
            dx[base + ch] += w.weight.at(ch, i + 1, j + 1) * g[ch];
            grad.weight.at(ch, i + 1, j + 1) += g[ch] * x[base + ch];
          }
        }
      }
    }
  }
  return dx;
}

Tensor lpu_backward(const Tensor& x, const DepthwiseConv3x3& w, const Tensor& dy, DepthwiseConv3x3& grad) {
  Tensor dx = depthwise_conv3x3_backward(x, w, dy, grad);
  add_inplace(dx, dy);
  return dx;
}

Tensor conv3x3_backward(const Tensor& x, const Conv3x3& w, const Tensor& dy, Conv3x3& grad) {
  const std::size_t Cin = w.in_channels(), Cout = w.out_channels();
  const auto H = static_cast<long>(x.extent(0)), W = static_cast<long>(x.extent(1));
  const auto s = static_cast<long>(w.stride);
  const long Ho = (H - 1) / s + 1, Wo = (W - 1) / s + 1;
  dy.require_shape({static_cast<std::size_t>(Ho), static_cast<std::size_t>(Wo), Cout}, "conv3x3_backward: dy");
  Tensor dx(x.shape());
  for (long r = 0; r < Ho; ++r) {
    for (long c = 0; c < Wo; ++c) {
      const double* g = dy.data() + static_cast<std::size_t>(r * Wo + c) * Cout;
      for (std::size_t o = 0; o < Cout; ++o) grad.bias[o] += g[o];
      for (int i = 0; i < 3; ++i) {
        const long rr = r * s + i - 1;
        if (rr < 0 || rr >= H) continue;
        for (int j = 0; j < 3; ++j) {
          const long cc = c * s + j - 1;
          if (cc < 0 || cc >= W) continue;
          const std::size_t base = static_cast<std::size_t>(rr * W + cc) * Cin;
          const double* in = x.data() + base;
          double* din = dx.data() + base;
          for (std::size_t o = 0; o < Cout; ++o) {
            const double go = g[o];
            if (go == 0.0) continue;
            const std::size_t koff = ((o * 3 + static_cast<std::size_t>(i)) * 3 + static_cast<std::size_t>(j)) * Cin;
            const double* k = w.weight.data() + koff;
            double* gk = grad.weight.data() + koff;
            for (std::size_t ci = 0; ci < Cin; ++ci) {
              din[ci] += k[ci] * go;
              gk[ci] += go * in[ci];
            }
          }
        }
      }
    }
  }
  return dx;
}

Tensor layer_norm_backward(const LayerNormCache& cache, const LayerNorm& w, const Tensor& dy, LayerNorm& grad) {
  dy.require_shape(cache.xhat.shape(), "layer_norm_backward: dy");
  const std::size_t C = w.gamma.size(), rows = dy.size() / C;
  const double inv_c = 1.0 / static_cast<double>(C);
  Tensor dx(dy.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* g = dy.data() + r * C;
    const double* xh = cache.xhat.data() + r * C;
    double sum = 0.0, dot = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
      const double dxhat = g[c] * w.gamma[c];
      sum += dxhat;
      dot += dxhat * xh[c];
      grad.gamma[c] += g[c] * xh[c];
      grad.beta[c] += g[c];
    }
    const double inv_std = cache.inv_std[r];
    for (std::size_t c = 0; c < C; ++c) {
      const double dxhat = g[c] * w.gamma[c];
      dx[r * C + c] = inv_std * (dxhat - inv_c * sum - xh[c] * inv_c * dot);
    }
  }
  return dx;
}

std::vector<Tensor> batch_norm_train_backward(const BatchNormCache& cache, const BatchNorm& bn,
                                              const std::vector<Tensor>& dy, BatchNorm& grad) {
  const std::size_t C = bn.gamma.size();
  if (dy.size() != cache.xhat.size()) throw ShapeError("batch_norm_train_backward: batch size mismatch");
  Tensor sum({C}), dot({C});
  for (std::size_t b = 0; b < dy.size(); ++b) {
    dy[b].require_shape(cache.xhat[b].shape(), "batch_norm_train_backward: dy");
    for (std::size_t i = 0; i < dy[b].size(); ++i) {
      const std::size_t c = i % C;
      const double g = dy[b][i];
      grad.gamma[c] += g * cache.xhat[b][i];
      grad.beta[c] += g;
      sum[c] += g * bn.gamma[c];
      dot[c] += g * bn.gamma[c] * cache.xhat[b][i];
    }
  }
  const double inv_m = 1.0 / static_cast<double>(cache.count);
  std::vector<Tensor> dx;
  dx.reserve(dy.size());
  for (std::size_t b = 0; b < dy.size(); ++b) {
    Tensor d(dy[b].shape());
    for (std::size_t i = 0; i < d.size(); ++i) {
      const std::size_t c = i % C;
      const double dxhat = dy[b][i] * bn.gamma[c];
      d[i] = cache.inv_std[c] * (dxhat - inv_m * sum[c] - cache.xhat[b][i] * inv_m * dot[c]);
    }
    dx.push_back(std::move(d));
  }
  return dx;
}

Tensor batch_norm_eval_backward(const Tensor& x, const BatchNorm& bn, const Tensor& dy, BatchNorm& grad) {
  dy.require_shape(x.shape(), "batch_norm_eval_backward: dy");
  const std::size_t C = bn.gamma.size();
  Tensor dx(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const std::size_t c = i % C;
    const double inv_std = 1.0 / std::sqrt(bn.running_var[c] + model::kNormEps);
    grad.gamma[c] += dy[i] * (x[i] - bn.running_mean[c]) * inv_std;
    grad.beta[c] += dy[i];
    dx[i] = dy[i] * bn.gamma[c] * inv_std;
  }
  return dx;
}

Tensor silu_backward(const Tensor& x, const Tensor& dy) {
  dy.require_shape(x.shape(), "silu_backward: dy");
  Tensor dx(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) dx[i] = dy[i] * model::silu_derivative(x[i]);
  return dx;
}

Tensor gelu_backward(const Tensor& x, const Tensor& dy) {
  dy.require_shape(x.shape(), "gelu_backward: dy");
  Tensor dx(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) dx[i] = dy[i] * model::gelu_derivative(x[i]);
  return dx;
}

Tensor global_avg_pool_backward(const Shape& input_shape, const Tensor& dy) {
  const std::size_t C = input_shape.at(2), P = input_shape.at(0) * input_shape.at(1);
  dy.require_shape({C}, "global_avg_pool_backward: dy");
  Tensor dx(input_shape);
  const double inv = 1.0 / static_cast<double>(P);
  for (std::size_t p = 0; p < P; ++p) {
    for (std::size_t c = 0; c < C; ++c) dx[p * C + c] = dy[c] * inv;
  }
  return dx;
}

ScanGrad scan_backward(const ssm::DiscreteSeq& seq, const Tensor& x, const Tensor& dx) {
  dx.require_shape(seq.a_bar.shape(), "scan_backward: dx");
  x.require_shape(seq.a_bar.shape(), "scan_backward: x");
  const std::size_t L = seq.length(), C = seq.channels(), N = seq.n_state();
  ScanGrad g{Tensor(seq.a_bar.shape()), Tensor(seq.a_bar.shape())};
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t n = 0; n < N; ++n) {
      double lambda = 0.0;
      for (std::size_t t = L; t-- > 0;) {
        const std::size_t i = (t * C + c) * N + n;
        if (t + 1 < L) lambda = dx[i] + seq.a_bar[((t + 1) * C + c) * N + n] * lambda;
        else lambda = dx[i];
        g.b_bar_u[i] = lambda;
        g.a_bar[i] = t ? lambda * x[((t - 1) * C + c) * N + n] : 0.0;
      }
    }
  }
  return g;
}

ObserveGrad observe_backward(const Tensor& h, const Tensor& c, const Tensor& d_skip, const Tensor& u,
                             const Tensor& dy) {
  const std::size_t L = h.extent(0), C = h.extent(1), N = h.extent(2);
  dy.require_shape({L, C}, "observe_backward: dy");
  ObserveGrad g{Tensor(h.shape()), Tensor(c.shape()), Tensor(d_skip.shape()), Tensor(u.shape())};
  for (std::size_t t = 0; t < L; ++t) {
    for (std::size_t ch = 0; ch < C; ++ch) {
      const double gy = dy.at(t, ch);
      for (std::size_t n = 0; n < N; ++n) {
        g.h.at(t, ch, n) = gy * c.at(t, n);
        g.c.at(t, n) += gy * h.at(t, ch, n);
      }
      g.d_skip[ch] += gy * u.at(t, ch);
      g.u.at(t, ch) = gy * d_skip[ch];
    }
  }
  return g;
}

Tensor sasf_backward(const Tensor& x, const fusion::FusionKernel& k, const Tensor& dh,
                     fusion::FusionKernel* grad_kernel) {
  dh.require_shape(x.shape(), "sasf_backward: dh");
  const auto H = static_cast<long>(x.extent(0)), W = static_cast<long>(x.extent(1));
  const std::size_t C = x.extent(2);
  Tensor dx(x.shape());
  for (std::size_t di = 0; di < k.dilations.size(); ++di) {
    const int d = k.dilations[di];
    for (int i = -1; i <= 1; ++i) {
      for (int j = -1; j <= 1; ++j) {
        const long oi = static_cast<long>(i) * d, oj = static_cast<long>(j) * d;
        for (long r = std::max(0L, -oi); r < std::min(H, H - oi); ++r) {
          for (long c = std::max(0L, -oj); c < std::min(W, W - oj); ++c) {
            const std::size_t dst = static_cast<std::size_t>(r * W + c) * C;
            const std::size_t src = static_cast<std::size_t>((r + oi) * W + (c + oj)) * C;
            for (std::size_t l = 0; l < C; ++l) {
              dx[src + l] += k.tap(di, l, i, j) * dh[dst + l];
              if (grad_kernel) grad_kernel->tap(di, l, i, j) += dh[dst + l] * x[src + l];
            }
          }
        }
      }
    }
  }
  return dx;
}

Tensor ssm_backward(const Tensor& u, const ssm::SsmParams& p, const fusion::FusionKernel* kernel,
                    const ssm::SsmTrace& tr, const Tensor& dy, ssm::SsmParams& grad,
                    fusion::FusionKernel* grad_kernel) {
  if (tr.x.size() == 0 || tr.h.size() == 0) throw UsageError("ssm_backward: forward trace is empty");
  const std::size_t L = u.extent(0), C = p.channels, N = p.n_state;
  const ssm::DiscreteSeq& seq = tr.seq;

  ObserveGrad og = observe_backward(tr.h, seq.c, p.d_skip, u, dy);
  add_inplace(grad.d_skip, og.d_skip);
  Tensor du = std::move(og.u);
  Tensor d_c = std::move(og.c);

  Tensor dx;
  if (kernel) {
    const Shape grid_shape = {tr.grid.height, tr.grid.width, C * N};
    dx = sasf_backward(tr.x.reshaped(grid_shape), *kernel, og.h.reshaped(grid_shape), grad_kernel)
             .reshaped({L, C, N});
  } else {
    dx = std::move(og.h);
  }
  const ScanGrad sg = scan_backward(seq, tr.x, dx);

  const Tensor A = p.transition();
  Tensor d_b({L, N}), d_delta({L, C}), d_a({C, N});
  for (std::size_t t = 0; t < L; ++t) {
    for (std::size_t c = 0; c < C; ++c) {
      const double delta = seq.delta.at(t, c);
      const double ut = u.at(t, c);
      double dd = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        const std::size_t i = (t * C + c) * N + n;
        const double a = A.at(c, n), abar = seq.a_bar[i], bt = tr.sel.b.at(t, n);
        const double z = delta * a;
        const double gain = delta * ssm::expm1_ratio(z);
        const double d_bbar = sg.b_bar_u[i] * ut;
        du.at(t, c) += sg.b_bar_u[i] * seq.b_bar[i];
        d_b.at(t, n) += d_bbar * gain;
        const double d_gain = d_bbar * bt;
        // a_bar = e^z, gain = (e^z - 1) / a: d gain/d delta = e^z, d gain/d a = delta^2 phi'(z).
        dd += sg.a_bar[i] * a * abar + d_gain * abar;
        d_a.at(c, n) += sg.a_bar[i] * delta * abar + d_gain * delta * delta * ssm::expm1_ratio_derivative(z);
      }
      d_delta.at(t, c) = dd;
    }
  }
  for (std::size_t i = 0; i < d_a.size(); ++i) grad.a_log[i] += d_a[i] * A[i];

  for (std::size_t t = 0; t < L; ++t) {
    const double* ut = u.data() + t * C;
    double* dut = du.data() + t * C;
    for (std::size_t c = 0; c < C; ++c) {
      const double dz = d_delta.at(t, c) * ssm::sigmoid(tr.sel.delta_logits.at(t, c));
      if (dz == 0.0) continue;
      grad.b_delta[c] += dz;
      for (std::size_t j = 0; j < C; ++j) {
        grad.w_delta.at(c, j) += dz * ut[j];
        dut[j] += dz * p.w_delta.at(c, j);
      }
    }
    for (std::size_t n = 0; n < N; ++n) {
      const double gb = d_b.at(t, n), gc = d_c.at(t, n);
      for (std::size_t j = 0; j < C; ++j) {
        grad.w_b.at(n, j) += gb * ut[j];
        grad.w_c.at(n, j) += gc * ut[j];
        dut[j] += gb * p.w_b.at(n, j) + gc * p.w_c.at(n, j);
      }
    }
  }
  return du;
}

Tensor block_backward(const model::BlockTrace& tr, const model::BlockWeights& w, const model::ForwardOptions& opts,
                      const Tensor& dy, model::BlockWeights& grad) {
  if (tr.out.size() == 0) throw UsageError("block_backward: forward trace is empty");
  dy.require_shape(tr.out.shape(), "block_backward: dy");
  const std::size_t H = tr.x.extent(0), W = tr.x.extent(1);
  const std::size_t L = H * W, E = w.ssm.channels;

  // FFN sub-layer.
  Tensor dx1 = dy;
  const Tensor d_hidden = linear_backward(tr.hidden, w.fc2, flatten_scan_order(dy), grad.fc2);
  const Tensor d_hidden_pre = gelu_backward(tr.hidden_pre, d_hidden);
  const Tensor d_z2 = linear_backward(flatten_scan_order(tr.z2), w.fc1, d_hidden_pre, grad.fc1);
  const Tensor d_lpu2 = layer_norm_backward(tr.norm2, w.norm_ffn, unflatten_scan_order(d_z2, H, W), grad.norm_ffn);
  add_inplace(dx1, lpu_backward(tr.x1, w.lpu_ffn, d_lpu2, grad.lpu_ffn));

  // Structure-aware SSM sub-layer.
  Tensor dx = dx1;
  const Tensor d_gated = linear_backward(tr.gated, w.out_proj, flatten_scan_order(dx1), grad.out_proj);
  const Tensor d_ssm_y = mul(d_gated, tr.gate);
  const Tensor d_gate_pre = silu_backward(tr.gate_pre, mul(d_gated, tr.ssm.y));
  const bool fused = opts.fusion_enabled;
  const Tensor d_u = ssm_backward(tr.u, w.ssm, fused ? &w.fusion : nullptr, tr.ssm, d_ssm_y, grad.ssm,
                                  fused ? &grad.fusion : nullptr);
  const Tensor d_conv_out = silu_backward(tr.conv_out, unflatten_scan_order(d_u, H, W));
  const Tensor d_value_pre =
      depthwise_conv3x3_backward(unflatten_scan_order(tr.value_pre, H, W), w.dwconv, d_conv_out, grad.dwconv);
  Tensor d_proj({L, 2 * E});
  for (std::size_t t = 0; t < L; ++t) {
    for (std::size_t e = 0; e < E; ++e) {
      d_proj.at(t, e) = d_value_pre[t * E + e];
      d_proj.at(t, E + e) = d_gate_pre.at(t, e);
    }
  }
  const Tensor d_z1 = linear_backward(flatten_scan_order(tr.z1), w.in_proj, d_proj, grad.in_proj);
  const Tensor d_lpu1 = layer_norm_backward(tr.norm1, w.norm_ssm, unflatten_scan_order(d_z1, H, W), grad.norm_ssm);
  add_inplace(dx, lpu_backward(tr.x, w.lpu_ssm, d_lpu1, grad.lpu_ssm));
  return dx;
}

std::vector<Tensor> features_backward(const model::ModelTrace& trace, const model::ModelConfig& cfg,
                                      const model::ModelWeights& w, const model::ForwardOptions& opts,
                                      const std::vector<Tensor>& d_features, model::ModelWeights& grad) {
  (void)cfg;
  const std::size_t B = trace.samples.size();
  if (trace.stem.input.size() != B) throw UsageError("features_backward: forward trace is empty");
  if (d_features.size() != B) throw ShapeError("features_backward: one gradient per sample is required");
  std::vector<Tensor> d_stem(B);
  for (std::size_t i = 0; i < B; ++i) {
    const model::SampleTrace& st = trace.samples[i];
    Tensor d = d_features[i];
    for (std::size_t s = w.stages.size(); s-- > 0;) {
      for (std::size_t b = w.stages[s].size(); b-- > 0;) {
        d = block_backward(st.blocks[s][b], w.stages[s][b], opts, d, grad.stages[s][b]);
      }
      if (s) {
        const model::DownsampleTrace& dt = st.downs[s - 1];
        const Tensor d_conv = layer_norm_backward(dt.norm, w.downsamples[s - 1].norm, d, grad.downsamples[s - 1].norm);
        d = conv3x3_backward(dt.x, w.downsamples[s - 1].conv, d_conv, grad.downsamples[s - 1].conv);
      }
    }
    d_stem[i] = std::move(d);
  }

  const model::StemTrace& stem = trace.stem;
  auto norm_back = [&](const std::vector<Tensor>& x, const BatchNormCache& cache, const BatchNorm& bn,
                       const std::vector<Tensor>& dy, BatchNorm& g) {
    if (trace.mode == model::NormMode::train) return batch_norm_train_backward(cache, bn, dy, g);
    std::vector<Tensor> out;
    for (std::size_t i = 0; i < dy.size(); ++i) out.push_back(batch_norm_eval_backward(x[i], bn, dy[i], g));
    return out;
  };
  auto conv_back = [](const std::vector<Tensor>& x, const Conv3x3& c, const std::vector<Tensor>& dy, Conv3x3& g) {
    std::vector<Tensor> out;
    for (std::size_t i = 0; i < dy.size(); ++i) out.push_back(conv3x3_backward(x[i], c, dy[i], g));
    return out;
  };
  const auto d_c3 = norm_back(stem.c3, stem.bn3, w.stem.bn3, d_stem, grad.stem.bn3);
  const auto d_n2 = conv_back(stem.n2, w.stem.conv3, d_c3, grad.stem.conv3);
  const auto d_c2 = norm_back(stem.c2, stem.bn2, w.stem.bn2, d_n2, grad.stem.bn2);
  const auto d_g1 = conv_back(stem.g1, w.stem.conv2, d_c2, grad.stem.conv2);
  std::vector<Tensor> d_n1;
  for (std::size_t i = 0; i < B; ++i) d_n1.push_back(gelu_backward(stem.n1[i], d_g1[i]));
  const auto d_c1 = norm_back(stem.c1, stem.bn1, w.stem.bn1, d_n1, grad.stem.bn1);
  return conv_back(stem.input, w.stem.conv1, d_c1, grad.stem.conv1);
}

std::vector<Tensor> model_backward(const model::ModelTrace& trace, const model::ModelConfig& cfg,
                                   const model::ModelWeights& w, const model::ForwardOptions& opts,
                                   const std::vector<Tensor>& d_logits, model::ModelWeights& grad) {
  if (d_logits.size() != trace.samples.size()) throw ShapeError("model_backward: one gradient per sample is required");
  std::vector<Tensor> d_features;
  d_features.reserve(d_logits.size());
  for (std::size_t i = 0; i < d_logits.size(); ++i) {
    const model::SampleTrace& st = trace.samples[i];
    const Tensor d_pooled = linear_backward(st.pooled.reshaped({1, st.pooled.size()}), w.head,
                                            d_logits[i].reshaped({1, d_logits[i].size()}), grad.head);
    d_features.push_back(global_avg_pool_backward(st.features.shape(), d_pooled.reshaped({st.pooled.size()})));
  }
  return features_backward(trace, cfg, w, opts, d_features, grad);
}

ssm::SsmParams zeros_like(const ssm::SsmParams& p) { return ssm::SsmParams::zeros(p.channels, p.n_state); }

model::BlockWeights zeros_like(const model::BlockWeights& w) {
  model::BlockWeights g = w;
  g.for_each_param("", [](const std::string&, Tensor& t) { t.fill(0.0); });
  return g;
}

fusion::FusionKernel zeros_like(const fusion::FusionKernel& k) {
  fusion::FusionKernel g = k;
  g.weights.fill(0.0);
  return g;
}

LossResult softmax_cross_entropy(const Tensor& logits, std::size_t label) {
  const std::size_t K = logits.size();
  if (label >= K) throw DomainError("softmax_cross_entropy: label out of range");
  double peak = logits[0];
  for (double v : logits.values()) peak = std::max(peak, v);
  double denom = 0.0;
  for (double v : logits.values()) denom += std::exp(v - peak);
  const double log_z = peak + std::log(denom);
  LossResult r{log_z - logits[label], Tensor(logits.shape())};
  for (std::size_t k = 0; k < K; ++k) r.d_logits[k] = std::exp(logits[k] - log_z) - (k == label ? 1.0 : 0.0);
  return r;
}

}  // namespace smamba::train
