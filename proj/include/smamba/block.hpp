#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "smamba/fusion.hpp"
#include "smamba/layers.hpp"
#include "smamba/ssm.hpp"

namespace smamba::model {

struct BlockConfig {
  std::size_t channels = 8;
  std::size_t expand = 2;
  std::size_t ffn_ratio = 4;
  std::size_t n_state = 1;
  std::vector<int> dilations = fusion::kDefaultDilations;

  std::size_t inner() const noexcept { return channels * expand; }
  void validate() const;
};

struct ForwardOptions {
  // false runs the SSM branch as plain Mamba (no state fusion).
  bool fusion_enabled = true;
  std::size_t threads = 1;
};

// Spatial-Mamba block:
//   x1 = x  + out_proj(SSM(silu(dwconv(v))) * silu(g)),  [v | g] = in_proj(LN(LPU(x)))
//   x2 = x1 + fc2(gelu(fc1(LN(LPU(x1)))))
struct BlockWeights {
  DepthwiseConv3x3 lpu_ssm;
  LayerNorm norm_ssm;
  Linear in_proj;  // C -> 2E; rows [0, E) value path, [E, 2E) gate path
  DepthwiseConv3x3 dwconv;
  ssm::SsmParams ssm;
  fusion::FusionKernel fusion;  // E * N lanes
  Linear out_proj;              // E -> C
  DepthwiseConv3x3 lpu_ffn;
  LayerNorm norm_ffn;
  Linear fc1;  // C -> ffn_ratio * C
  Linear fc2;

  static BlockWeights init(const BlockConfig& cfg, Rng& rng);

  template <typename F>
  void for_each_param(const std::string& prefix, F&& f) {
    lpu_ssm.for_each_param(prefix + "lpu_ssm.", f);
    norm_ssm.for_each_param(prefix + "norm_ssm.", f);
    in_proj.for_each_param(prefix + "in_proj.", f);
    dwconv.for_each_param(prefix + "dwconv.", f);
    ssm.for_each_param(prefix + "ssm.", f);
    f(prefix + "fusion.weights", fusion.weights);
    out_proj.for_each_param(prefix + "out_proj.", f);
    lpu_ffn.for_each_param(prefix + "lpu_ffn.", f);
    norm_ffn.for_each_param(prefix + "norm_ffn.", f);
    fc1.for_each_param(prefix + "fc1.", f);
    fc2.for_each_param(prefix + "fc2.", f);
  }
};

struct BlockTrace {
  Tensor x;  // block input [H, W, C]
  Tensor lpu1;
  LayerNormCache norm1;
  Tensor z1;
  Tensor value_pre;  // [L, E]
  Tensor gate_pre;   // [L, E]
  Tensor conv_out;   // [H, W, E]
  Tensor u;          // silu(conv_out) flattened [L, E]
  ssm::SsmTrace ssm;
  Tensor gate;  // silu(gate_pre)
  Tensor gated;  // ssm.y * gate
  Tensor x1;
  Tensor lpu2;
  LayerNormCache norm2;
  Tensor z2;
  Tensor hidden_pre;  // fc1 output
  Tensor hidden;      // gelu(hidden_pre)
  Tensor out;         // block output
};

Tensor block_forward(const Tensor& x, const BlockWeights& w, const ForwardOptions& opts = {},
                     BlockTrace* trace = nullptr);

}  // namespace smamba::model
