#include "smamba/block.hpp"

#include "smamba/errors.hpp"

namespace smamba::model {

void BlockConfig::validate() const {
  if (channels == 0 || expand == 0 || ffn_ratio == 0 || n_state == 0) {
    throw DomainError("BlockConfig: channels, expand, ffn_ratio and n_state must be positive");
  }
  fusion::FusionKernel(dilations, 1).validate();
}

BlockWeights BlockWeights::init(const BlockConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::size_t C = cfg.channels, E = cfg.inner(), N = cfg.n_state;
  BlockWeights w;
  w.lpu_ssm = DepthwiseConv3x3::init(C, rng);
  w.norm_ssm = LayerNorm::init(C);
  w.in_proj = Linear::init(C, 2 * E, rng);
  w.dwconv = DepthwiseConv3x3::init(E, rng);
  w.ssm = ssm::SsmParams::init(E, N, rng);
  w.fusion = fusion::FusionKernel::identity(E * N, cfg.dilations);
  w.out_proj = Linear::init(E, C, rng);
  w.lpu_ffn = DepthwiseConv3x3::init(C, rng);
  w.norm_ffn = LayerNorm::init(C);
  w.fc1 = Linear::init(C, cfg.ffn_ratio * C, rng);
  w.fc2 = Linear::init(cfg.ffn_ratio * C, C, rng);
  return w;
}

Tensor block_forward(const Tensor& x, const BlockWeights& w, const ForwardOptions& opts, BlockTrace* trace) {
  if (x.rank() != 3) throw ShapeError("block_forward: expected [H, W, C], got " + shape_to_string(x.shape()));
  const std::size_t H = x.extent(0), W = x.extent(1), C = x.extent(2);
  const std::size_t E = w.ssm.channels;
  if (w.norm_ssm.gamma.size() != C || w.in_proj.out_features() != 2 * E) {
    throw ShapeError("block_forward: input channels do not match block weights");
  }
  const std::size_t L = H * W;
  BlockTrace local;
  BlockTrace& tr = trace ? *trace : local;

  tr.x = x;
  tr.lpu1 = lpu(x, w.lpu_ssm);
  tr.z1 = layer_norm(tr.lpu1, w.norm_ssm, &tr.norm1);
  const Tensor proj = linear(flatten_scan_order(tr.z1), w.in_proj);
  tr.value_pre = Tensor({L, E});
  tr.gate_pre = Tensor({L, E});
  for (std::size_t t = 0; t < L; ++t) {
    for (std::size_t e = 0; e < E; ++e) {
      tr.value_pre.at(t, e) = proj.at(t, e);
      tr.gate_pre.at(t, e) = proj.at(t, E + e);
    }
  }
  tr.conv_out = depthwise_conv3x3(unflatten_scan_order(tr.value_pre, H, W), w.dwconv);
  tr.u = flatten_scan_order(silu(tr.conv_out));
  tr.ssm = ssm::ssm_forward_traced(tr.u, w.ssm, opts.fusion_enabled ? &w.fusion : nullptr, {H, W}, opts.threads);
  tr.gate = silu(tr.gate_pre);
  tr.gated = mul(tr.ssm.y, tr.gate);
  tr.x1 = add(x, unflatten_scan_order(linear(tr.gated, w.out_proj), H, W));

  tr.lpu2 = lpu(tr.x1, w.lpu_ffn);
  tr.z2 = layer_norm(tr.lpu2, w.norm_ffn, &tr.norm2);
  tr.hidden_pre = linear(flatten_scan_order(tr.z2), w.fc1);
  tr.hidden = gelu(tr.hidden_pre);
  tr.out = add(tr.x1, unflatten_scan_order(linear(tr.hidden, w.fc2), H, W));
  return tr.out;
}

}  // namespace smamba::model
