#pragma once

#include <cstddef>
#include <string>

#include "smamba/fusion.hpp"
#include "smamba/random.hpp"
#include "smamba/tensor.hpp"

namespace smamba::ssm {

// Selective diagonal SSM over C channels with N states per channel.
// A = -exp(a_log) keeps every transition factor inside (0, 1] for delta > 0.
struct SsmParams {
  std::size_t channels = 0;
  std::size_t n_state = 1;
  Tensor a_log;    // [C, N]
  Tensor d_skip;   // [C]
  Tensor w_delta;  // [C, C]  delta_t = softplus(w_delta u_t + b_delta)
  Tensor b_delta;  // [C]
  Tensor w_b;      // [N, C]  B_t = w_b u_t, shared across channels
  Tensor w_c;      // [N, C]  C_t = w_c u_t

  static SsmParams zeros(std::size_t channels, std::size_t n_state);
  // a_log = 0, D = 1, projections ~ truncated normal(0.02), and b_delta set so
  // the initial delta is log-uniform in [0.001, 0.1].
  static SsmParams init(std::size_t channels, std::size_t n_state, Rng& rng);
  // O(1) entries everywhere, for equivalence and gradient checks.
  static SsmParams random(std::size_t channels, std::size_t n_state, Rng& rng);

  Tensor transition() const;  // A = -exp(a_log), [C, N]
  void validate() const;

  template <typename F>
  void for_each_param(const std::string& prefix, F&& f) {
    f(prefix + "a_log", a_log);
    f(prefix + "d_skip", d_skip);
    f(prefix + "w_delta", w_delta);
    f(prefix + "b_delta", b_delta);
    f(prefix + "w_b", w_b);
    f(prefix + "w_c", w_c);
  }
};

struct SelectiveParams {
  Tensor delta_logits;  // [L, C], pre-softplus
  Tensor delta;         // [L, C]
  Tensor b;             // [L, N]
  Tensor c;             // [L, N]
};

// Per-step discretized system. b_bar excludes the input; b_bar_u = b_bar * u.
struct DiscreteSeq {
  Tensor a_bar;    // [L, C, N]
  Tensor b_bar;    // [L, C, N]
  Tensor b_bar_u;  // [L, C, N]
  Tensor c;        // [L, N]
  Tensor delta;    // [L, C]

  std::size_t length() const { return a_bar.extent(0); }
  std::size_t channels() const { return a_bar.extent(1); }
  std::size_t n_state() const { return a_bar.extent(2); }
};

struct ZohResult {
  double a_bar;
  double b_bar;
};

struct GridShape {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t size() const noexcept { return height * width; }
};

double softplus(double x) noexcept;
double sigmoid(double x) noexcept;

// z -> (e^z - 1) / z, with the series 1 + z/2 + z^2/6 for |z| < kZohSeriesSwitch.
inline constexpr double kZohSeriesSwitch = 1e-4;
double expm1_ratio(double z) noexcept;
// d/dz of expm1_ratio.
double expm1_ratio_derivative(double z) noexcept;

SelectiveParams project_selective_params(const Tensor& u, const SsmParams& p);

// Diagonal ZOH: a_bar = e^{delta a}, b_bar = (e^{delta a} - 1) / a * b. Requires a < 0, delta >= 0.
ZohResult zoh_discretize(double a, double b, double delta);

DiscreteSeq discretize(const Tensor& u, const SsmParams& p, const SelectiveParams& sel);

// x_t = a_bar_t x_{t-1} + b_bar_u_t from x_0 = 0, sequential in t per (channel, state) lane.
// threads > 1 splits channels across workers; results are identical.
Tensor scan_states(const DiscreteSeq& seq, std::size_t threads = 1);

// y[t, ch] = sum_n c[t, n] h[t, ch, n] + d_skip[ch] u[t, ch].
Tensor observe(const Tensor& h, const Tensor& c, const Tensor& d_skip, const Tensor& u);

struct SsmTrace {
  GridShape grid;
  SelectiveParams sel;
  DiscreteSeq seq;
  Tensor x;  // raw states [L, C, N]
  Tensor h;  // fused states [L, C, N]
  Tensor y;  // [L, C]
};

// Full pipeline: project -> discretize -> scan -> reshape to grid -> fuse -> flatten -> observe.
// `kernel` == nullptr skips the fusion step (plain Mamba). The kernel acts on the C*N lanes.
Tensor ssm_forward(const Tensor& u, const SsmParams& p, const fusion::FusionKernel* kernel, GridShape grid,
                   std::size_t threads = 1);
SsmTrace ssm_forward_traced(const Tensor& u, const SsmParams& p, const fusion::FusionKernel* kernel,
                            GridShape grid, std::size_t threads = 1);

// Applies the fusion kernel to states [L, C, N] laid out on `grid`.
Tensor fuse_states(const Tensor& x, const fusion::FusionKernel& kernel, GridShape grid);

}  // namespace smamba::ssm
