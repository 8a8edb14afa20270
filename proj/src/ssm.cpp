#include "smamba/ssm.hpp"

#include <algorithm>
#include <cmath>
#include <thread>
#include <vector>

#include "smamba/errors.hpp"

namespace smamba::ssm {

double softplus(double x) noexcept { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double sigmoid(double x) noexcept {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double expm1_ratio(double z) noexcept {
  if (std::abs(z) < kZohSeriesSwitch) return 1.0 + z / 2.0 + z * z / 6.0;
  return std::expm1(z) / z;
}

double expm1_ratio_derivative(double z) noexcept {
  // (z e^z - (e^z - 1)) / z^2 cancels badly near 0; the cubic series is exact to ~1e-14 below 1e-3.
  if (std::abs(z) < 1e-3) return 0.5 + z / 3.0 + z * z / 8.0 + z * z * z / 30.0;
  return (z + (z - 1.0) * std::expm1(z)) / (z * z);
}

SsmParams SsmParams::zeros(std::size_t channels, std::size_t n_state) {
  if (channels == 0 || n_state == 0) throw DomainError("SsmParams: channels and n_state must be positive");
  SsmParams p;
  p.channels = channels;
  p.n_state = n_state;
  p.a_log = Tensor({channels, n_state});
  p.d_skip = Tensor({channels});
  p.w_delta = Tensor({channels, channels});
  p.b_delta = Tensor({channels});
  p.w_b = Tensor({n_state, channels});
  p.w_c = Tensor({n_state, channels});
  return p;
}

SsmParams SsmParams::init(std::size_t channels, std::size_t n_state, Rng& rng) {
  SsmParams p = zeros(channels, n_state);
  p.d_skip.fill(1.0);
  rng.fill_truncated_normal(p.w_delta, 0.02);
  rng.fill_truncated_normal(p.w_b, 0.02);
  rng.fill_truncated_normal(p.w_c, 0.02);
  const double lo = std::log(0.001), hi = std::log(0.1);
  for (double& b : p.b_delta.values()) {
    const double delta = std::exp(rng.uniform(lo, hi));
    b = std::log(std::expm1(delta));  // inverse softplus
  }
  return p;
}

SsmParams SsmParams::random(std::size_t channels, std::size_t n_state, Rng& rng) {
  SsmParams p = zeros(channels, n_state);
  rng.fill_uniform(p.a_log, -1.0, 0.5);
  rng.fill_uniform(p.d_skip, -1.0, 1.0);
  rng.fill_uniform(p.w_delta, -0.5, 0.5);
  rng.fill_uniform(p.b_delta, -2.0, 0.0);
  rng.fill_uniform(p.w_b, -1.0, 1.0);
  rng.fill_uniform(p.w_c, -1.0, 1.0);
  return p;
}

Tensor SsmParams::transition() const {
  Tensor a(a_log.shape());
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = -std::exp(a_log[i]);
  return a;
}

void SsmParams::validate() const {
  a_log.require_shape({channels, n_state}, "SsmParams.a_log");
  d_skip.require_shape({channels}, "SsmParams.d_skip");
  w_delta.require_shape({channels, channels}, "SsmParams.w_delta");
  b_delta.require_shape({channels}, "SsmParams.b_delta");
  w_b.require_shape({n_state, channels}, "SsmParams.w_b");
  w_c.require_shape({n_state, channels}, "SsmParams.w_c");
}

SelectiveParams project_selective_params(const Tensor& u, const SsmParams& p) {
  p.validate();
  if (u.rank() != 2 || u.extent(1) != p.channels) {
    throw ShapeError("project_selective_params: expected u [L, " + std::to_string(p.channels) + "], got " +
                     shape_to_string(u.shape()));
  }
  if (!all_finite(u)) throw NumericError("project_selective_params: non-finite input");
  const std::size_t L = u.extent(0), C = p.channels, N = p.n_state;
  SelectiveParams sel{Tensor({L, C}), Tensor({L, C}), Tensor({L, N}), Tensor({L, N})};
  for (std::size_t t = 0; t < L; ++t) {
    const double* ut = u.data() + t * C;
    for (std::size_t c = 0; c < C; ++c) {
      const double* w = p.w_delta.data() + c * C;
      double z = p.b_delta[c];
      for (std::size_t j = 0; j < C; ++j) z += w[j] * ut[j];
      sel.delta_logits.at(t, c) = z;
      sel.delta.at(t, c) = softplus(z);
    }
    for (std::size_t n = 0; n < N; ++n) {
      const double* wb = p.w_b.data() + n * C;
      const double* wc = p.w_c.data() + n * C;
      double b = 0.0, cc = 0.0;
      for (std::size_t j = 0; j < C; ++j) {
        b += wb[j] * ut[j];
        cc += wc[j] * ut[j];
      }
      sel.b.at(t, n) = b;
      sel.c.at(t, n) = cc;
    }
  }
  return sel;
}

ZohResult zoh_discretize(double a, double b, double delta) {
  if (!(a < 0.0)) throw DomainError("zoh_discretize: continuous A must be strictly negative");
  if (!(delta >= 0.0)) throw DomainError("zoh_discretize: delta must be non-negative");
  const double z = delta * a;
  return {std::exp(z), delta * expm1_ratio(z) * b};
}

DiscreteSeq discretize(const Tensor& u, const SsmParams& p, const SelectiveParams& sel) {
  const std::size_t L = u.extent(0), C = p.channels, N = p.n_state;
  const Tensor A = p.transition();
  DiscreteSeq seq{Tensor({L, C, N}), Tensor({L, C, N}), Tensor({L, C, N}), sel.c, sel.delta};
  for (std::size_t t = 0; t < L; ++t) {
    for (std::size_t c = 0; c < C; ++c) {
      const double delta = sel.delta.at(t, c);
      for (std::size_t n = 0; n < N; ++n) {
        const ZohResult r = zoh_discretize(A.at(c, n), sel.b.at(t, n), delta);
        const std::size_t i = (t * C + c) * N + n;
        seq.a_bar[i] = r.a_bar;
        seq.b_bar[i] = r.b_bar;
        seq.b_bar_u[i] = r.b_bar * u.at(t, c);
      }
    }
  }
  return seq;
}

namespace {

void scan_channels(const DiscreteSeq& seq, Tensor& x, std::size_t c_begin, std::size_t c_end) {
  const std::size_t L = seq.length(), C = seq.channels(), N = seq.n_state();
  for (std::size_t c = c_begin; c < c_end; ++c) {
    for (std::size_t n = 0; n < N; ++n) {
      double state = 0.0;
      for (std::size_t t = 0; t < L; ++t) {
        const std::size_t i = (t * C + c) * N + n;
        state = seq.a_bar[i] * state + seq.b_bar_u[i];
        x[i] = state;
      }
    }
  }
}

}  // namespace

Tensor scan_states(const DiscreteSeq& seq, std::size_t threads) {
  if (seq.a_bar.rank() != 3 || seq.b_bar_u.shape() != seq.a_bar.shape()) {
    throw ShapeError("scan_states: a_bar and b_bar_u must both be [L, C, N]");
  }
  Tensor x(seq.a_bar.shape());
  const std::size_t C = seq.channels();
  const std::size_t workers = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(C, 1));
  if (workers == 1) {
    scan_channels(seq, x, 0, C);
    return x;
  }
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      const std::size_t begin = C * w / workers, end = C * (w + 1) / workers;
      pool.emplace_back([&seq, &x, begin, end] { scan_channels(seq, x, begin, end); });
    }
  }
  return x;
}

Tensor observe(const Tensor& h, const Tensor& c, const Tensor& d_skip, const Tensor& u) {
  if (h.rank() != 3) throw ShapeError("observe: h must be [L, C, N]");
  const std::size_t L = h.extent(0), C = h.extent(1), N = h.extent(2);
  c.require_shape({L, N}, "observe: c");
  d_skip.require_shape({C}, "observe: d_skip");
  u.require_shape({L, C}, "observe: u");
  Tensor y({L, C});
  for (std::size_t t = 0; t < L; ++t) {
    const double* ct = c.data() + t * N;
    for (std::size_t ch = 0; ch < C; ++ch) {
      const double* ht = h.data() + (t * C + ch) * N;
      double acc = 0.0;
      for (std::size_t n = 0; n < N; ++n) acc += ct[n] * ht[n];
      y.at(t, ch) = acc + d_skip[ch] * u.at(t, ch);
    }
  }
  return y;
}

Tensor fuse_states(const Tensor& x, const fusion::FusionKernel& kernel, GridShape grid) {
  const std::size_t L = x.extent(0), C = x.extent(1), N = x.extent(2);
  if (grid.size() != L) throw ShapeError("fuse_states: grid size does not match sequence length");
  if (kernel.channels != C * N) {
    throw ShapeError("fuse_states: kernel has " + std::to_string(kernel.channels) + " lanes, states have " +
                     std::to_string(C * N));
  }
  const Tensor h = fusion::sasf_apply(x.reshaped({grid.height, grid.width, C * N}), kernel);
  return h.reshaped({L, C, N});
}

SsmTrace ssm_forward_traced(const Tensor& u, const SsmParams& p, const fusion::FusionKernel* kernel,
                            GridShape grid, std::size_t threads) {
  if (u.rank() != 2) throw ShapeError("ssm_forward: u must be [L, C]");
  if (grid.size() != u.extent(0)) {
    throw ShapeError("ssm_forward: L = " + std::to_string(u.extent(0)) + " but grid is " +
                     std::to_string(grid.height) + "x" + std::to_string(grid.width));
  }
  SsmTrace tr;
  tr.grid = grid;
  tr.sel = project_selective_params(u, p);
  tr.seq = discretize(u, p, tr.sel);
  tr.x = scan_states(tr.seq, threads);
  tr.h = kernel ? fuse_states(tr.x, *kernel, grid) : tr.x;
  tr.y = observe(tr.h, tr.seq.c, p.d_skip, u);
  return tr;
}

Tensor ssm_forward(const Tensor& u, const SsmParams& p, const fusion::FusionKernel* kernel, GridShape grid,
                   std::size_t threads) {
  return ssm_forward_traced(u, p, kernel, grid, threads).y;
}

}  // namespace smamba::ssm
