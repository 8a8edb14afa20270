#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "smamba/block.hpp"
#include "smamba/layers.hpp"

namespace smamba::model {

struct ModelConfig {
  std::vector<std::size_t> stage_depths = {1, 1, 2, 1};
  std::vector<std::size_t> stage_channels = {8, 16, 32, 64};
  std::size_t n_state = 1;
  std::vector<int> dilations = fusion::kDefaultDilations;
  std::size_t expand = 2;
  std::size_t ffn_ratio = 4;
  std::size_t num_classes = 2;
  std::array<std::size_t, 2> input_hw = {16, 16};

  void validate() const;
  BlockConfig block_config(std::size_t stage) const;
  std::size_t stem_hidden() const;  // channels after the first two stem convs
  // Spatial extent of each stage's feature grid.
  std::vector<std::array<std::size_t, 2>> stage_grids() const;

  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
};

// conv3x3/s2 + BN + GELU, conv3x3/s1 + BN, conv3x3/s2 + BN.
struct StemWeights {
  Conv3x3 conv1, conv2, conv3;
  BatchNorm bn1, bn2, bn3;

  template <typename F>
  void for_each_param(const std::string& prefix, F&& f) {
    conv1.for_each_param(prefix + "conv1.", f);
    bn1.for_each_param(prefix + "bn1.", f);
    conv2.for_each_param(prefix + "conv2.", f);
    bn2.for_each_param(prefix + "bn2.", f);
    conv3.for_each_param(prefix + "conv3.", f);
    bn3.for_each_param(prefix + "bn3.", f);
  }
  template <typename F>
  void for_each_buffer(const std::string& prefix, F&& f) {
    bn1.for_each_buffer(prefix + "bn1.", f);
    bn2.for_each_buffer(prefix + "bn2.", f);
    bn3.for_each_buffer(prefix + "bn3.", f);
  }
};

// conv3x3/s2 followed by LayerNorm over channels.
struct DownsampleWeights {
  Conv3x3 conv;
  LayerNorm norm;

  template <typename F>
  void for_each_param(const std::string& prefix, F&& f) {
    conv.for_each_param(prefix + "conv.", f);
    norm.for_each_param(prefix + "norm.", f);
  }
};

struct ModelWeights {
  StemWeights stem;
  std::vector<std::vector<BlockWeights>> stages;
  std::vector<DownsampleWeights> downsamples;  // between consecutive stages
  Linear head;

  static ModelWeights init(const ModelConfig& cfg, Rng& rng);

  template <typename F>
  void for_each_param(F&& f) {
    stem.for_each_param("stem.", f);
    for (std::size_t s = 0; s < stages.size(); ++s) {
      for (std::size_t b = 0; b < stages[s].size(); ++b) {
        stages[s][b].for_each_param("stages." + std::to_string(s) + "." + std::to_string(b) + ".", f);
      }
      if (s < downsamples.size()) downsamples[s].for_each_param("downsamples." + std::to_string(s) + ".", f);
    }
    head.for_each_param("head.", f);
  }
  template <typename F>
  void for_each_buffer(F&& f) {
    stem.for_each_buffer("stem.", f);
  }
  // Every trainable parameter, then every buffer.
  template <typename F>
  void for_each_tensor(F&& f) {
    for_each_param(f);
    for_each_buffer(f);
  }
};

struct StemTrace {
  std::vector<Tensor> input, c1, n1, g1, c2, n2, c3, out;
  BatchNormCache bn1, bn2, bn3;  // populated in train mode
};

struct DownsampleTrace {
  Tensor x;
  Tensor conv_out;
  LayerNormCache norm;
};

struct SampleTrace {
  std::vector<std::vector<BlockTrace>> blocks;
  std::vector<DownsampleTrace> downs;
  Tensor features;  // final stage output [h, w, C_last]
  Tensor pooled;    // [C_last]
};

struct ModelTrace {
  NormMode mode = NormMode::eval;
  StemTrace stem;
  std::vector<SampleTrace> samples;
};

Tensor stem_forward(const Tensor& img, const StemWeights& w);
std::vector<Tensor> stem_forward_batch(const std::vector<Tensor>& imgs, const StemWeights& w, NormMode mode,
                                       StemTrace* trace = nullptr);
// Requires even extents; an extent of 1 stays 1.
Tensor downsample_forward(const Tensor& x, const DownsampleWeights& w, DownsampleTrace* trace = nullptr);

// Stem output -> final stage features for one sample.
Tensor stages_forward(const Tensor& stem_out, const ModelConfig& cfg, const ModelWeights& w,
                      const ForwardOptions& opts = {}, SampleTrace* trace = nullptr);

// Single image, BN in inference mode. Returns unnormalized logits.
Tensor model_forward(const Tensor& img, const ModelConfig& cfg, const ModelWeights& w,
                     const ForwardOptions& opts = {});
// Batched; in train mode the stem BN uses the statistics of this batch.
std::vector<Tensor> model_forward_batch(const std::vector<Tensor>& imgs, const ModelConfig& cfg,
                                        const ModelWeights& w, NormMode mode, const ForwardOptions& opts = {},
                                        ModelTrace* trace = nullptr);

}  // namespace smamba::model
