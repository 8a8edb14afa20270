#pragma once

#include <vector>

#include "smamba/block.hpp"
#include "smamba/fusion.hpp"
#include "smamba/layers.hpp"
#include "smamba/model.hpp"
#include "smamba/ssm.hpp"
#include "smamba/tensor.hpp"

// Reverse-mode adjoints of every forward op. Each *_backward returns the
// gradient with respect to the op's input and accumulates parameter gradients
// into `grad` (which must already have the parameter shapes).
namespace smamba::train {

Tensor linear_backward(const Tensor& x, const model::Linear& w, const Tensor& dy, model::Linear& grad);
Tensor depthwise_conv3x3_backward(const Tensor& x, const model::DepthwiseConv3x3& w, const Tensor& dy,
                                  model::DepthwiseConv3x3& grad);
Tensor lpu_backward(const Tensor& x, const model::DepthwiseConv3x3& w, const Tensor& dy,
                    model::DepthwiseConv3x3& grad);
Tensor conv3x3_backward(const Tensor& x, const model::Conv3x3& w, const Tensor& dy, model::Conv3x3& grad);
Tensor layer_norm_backward(const model::LayerNormCache& cache, const model::LayerNorm& w, const Tensor& dy,
                           model::LayerNorm& grad);
std::vector<Tensor> batch_norm_train_backward(const model::BatchNormCache& cache, const model::BatchNorm& bn,
                                              const std::vector<Tensor>& dy, model::BatchNorm& grad);
Tensor batch_norm_eval_backward(const Tensor& x, const model::BatchNorm& bn, const Tensor& dy,
                                model::BatchNorm& grad);
Tensor silu_backward(const Tensor& x, const Tensor& dy);
Tensor gelu_backward(const Tensor& x, const Tensor& dy);
Tensor global_avg_pool_backward(const Shape& input_shape, const Tensor& dy);

struct ScanGrad {
  Tensor a_bar;    // [L, C, N]
  Tensor b_bar_u;  // [L, C, N]
};
// Adjoint recursion lambda_t = dx_t + a_bar_{t+1} lambda_{t+1}, run backwards in t.
ScanGrad scan_backward(const ssm::DiscreteSeq& seq, const Tensor& x, const Tensor& dx);

struct ObserveGrad {
  Tensor h;
  Tensor c;
  Tensor d_skip;
  Tensor u;
};
ObserveGrad observe_backward(const Tensor& h, const Tensor& c, const Tensor& d_skip, const Tensor& u,
                             const Tensor& dy);

// Fusion is linear in x, so the input gradient is F^T dh lane by lane.
// Kernel gradients are accumulated into `grad_kernel` when it is non-null.
Tensor sasf_backward(const Tensor& x, const fusion::FusionKernel& k, const Tensor& dh,
                     fusion::FusionKernel* grad_kernel);

Tensor ssm_backward(const Tensor& u, const ssm::SsmParams& p, const fusion::FusionKernel* kernel,
                    const ssm::SsmTrace& trace, const Tensor& dy, ssm::SsmParams& grad,
                    fusion::FusionKernel* grad_kernel);

Tensor block_backward(const model::BlockTrace& trace, const model::BlockWeights& w,
                      const model::ForwardOptions& opts, const Tensor& dy, model::BlockWeights& grad);

// From gradients of the final-stage features (one per sample) back to the images.
std::vector<Tensor> features_backward(const model::ModelTrace& trace, const model::ModelConfig& cfg,
                                      const model::ModelWeights& w, const model::ForwardOptions& opts,
                                      const std::vector<Tensor>& d_features, model::ModelWeights& grad);
// From logit gradients back to the images.
std::vector<Tensor> model_backward(const model::ModelTrace& trace, const model::ModelConfig& cfg,
                                   const model::ModelWeights& w, const model::ForwardOptions& opts,
                                   const std::vector<Tensor>& d_logits, model::ModelWeights& grad);

// Parameter gradients mirroring the weight structure plus the input gradient.
template <typename Weights>
struct GradRecord {
  Weights params;
  Tensor input;
};

template <typename Weights>
Weights zeros_like(Weights w) {
  w.for_each_param([](const auto&, Tensor& t) { t.fill(0.0); });
  return w;
}
ssm::SsmParams zeros_like(const ssm::SsmParams& p);
model::BlockWeights zeros_like(const model::BlockWeights& w);
fusion::FusionKernel zeros_like(const fusion::FusionKernel& k);

struct LossResult {
  double loss = 0.0;
  Tensor d_logits;
};
// -log softmax(logits)[label], with its gradient softmax - onehot.
LossResult softmax_cross_entropy(const Tensor& logits, std::size_t label);

}  // namespace smamba::train
