#include "smamba/model.hpp"

#include <algorithm>

#include "json.hpp"

#include "smamba/errors.hpp"

namespace smamba::model {

void ModelConfig::validate() const {
  if (stage_depths.size() != 4 || stage_channels.size() != 4) {
    throw DomainError("ModelConfig: exactly 4 stage depths and 4 stage channel widths are required");
  }
  for (std::size_t c : stage_channels) {
    if (c == 0) throw DomainError("ModelConfig: stage channels must be positive");
  }
  if (n_state == 0 || expand == 0 || ffn_ratio == 0 || num_classes == 0) {
    throw DomainError("ModelConfig: n_state, expand, ffn_ratio and num_classes must be positive");
  }
  if (input_hw[0] == 0 || input_hw[1] == 0 || input_hw[0] % 4 || input_hw[1] % 4) {
    throw ShapeError("ModelConfig: input extents must be positive multiples of 4");
  }
  fusion::FusionKernel(dilations, 1).validate();
  stage_grids();
}

BlockConfig ModelConfig::block_config(std::size_t stage) const {
  return {stage_channels.at(stage), expand, ffn_ratio, n_state, dilations};
}

std::size_t ModelConfig::stem_hidden() const { return std::max<std::size_t>(1, stage_channels[0] / 2); }

namespace {

std::size_t halve(std::size_t extent) {
  if (extent == 1) return 1;
  if (extent % 2) throw ShapeError("downsample: odd extent " + std::to_string(extent));
  return extent / 2;
}

}  // namespace

std::vector<std::array<std::size_t, 2>> ModelConfig::stage_grids() const {
  std::vector<std::array<std::size_t, 2>> grids;
  std::array<std::size_t, 2> g = {input_hw[0] / 4, input_hw[1] / 4};
  for (std::size_t s = 0; s < stage_channels.size(); ++s) {
    if (s) g = {halve(g[0]), halve(g[1])};
    grids.push_back(g);
  }
  return grids;
}

std::string ModelConfig::to_json() const {
  nlohmann::json j;
  j["stage_depths"] = stage_depths;
  j["stage_channels"] = stage_channels;
  j["n_state"] = n_state;
  j["dilations"] = dilations;
  j["expand"] = expand;
  j["ffn_ratio"] = ffn_ratio;
  j["num_classes"] = num_classes;
  j["input_hw"] = input_hw;
  return j.dump(2);
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  ModelConfig cfg;
  try {
    const nlohmann::json j = nlohmann::json::parse(text);
    if (!j.is_object()) throw UsageError("config: top-level JSON value must be an object");
    static const char* known[] = {"stage_depths", "stage_channels", "n_state", "dilations",
                                  "expand",       "ffn_ratio",      "num_classes", "input_hw"};
    for (const auto& [key, value] : j.items()) {
      if (std::find(std::begin(known), std::end(known), key) == std::end(known)) {
        throw UsageError("config: unknown key '" + key + "'");
      }
    }
    if (j.contains("stage_depths")) cfg.stage_depths = j["stage_depths"].get<std::vector<std::size_t>>();
    if (j.contains("stage_channels")) cfg.stage_channels = j["stage_channels"].get<std::vector<std::size_t>>();
    if (j.contains("n_state")) cfg.n_state = j["n_state"].get<std::size_t>();
    if (j.contains("dilations")) cfg.dilations = j["dilations"].get<std::vector<int>>();
    if (j.contains("expand")) cfg.expand = j["expand"].get<std::size_t>();
    if (j.contains("ffn_ratio")) cfg.ffn_ratio = j["ffn_ratio"].get<std::size_t>();
    if (j.contains("num_classes")) cfg.num_classes = j["num_classes"].get<std::size_t>();
    if (j.contains("input_hw")) cfg.input_hw = j["input_hw"].get<std::array<std::size_t, 2>>();
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

ModelWeights ModelWeights::init(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  ModelWeights w;
  const std::size_t mid = cfg.stem_hidden(), c0 = cfg.stage_channels[0];
  w.stem.conv1 = Conv3x3::init(3, mid, 2, rng);
  w.stem.bn1 = BatchNorm::init(mid);
  w.stem.conv2 = Conv3x3::init(mid, mid, 1, rng);
  w.stem.bn2 = BatchNorm::init(mid);
  w.stem.conv3 = Conv3x3::init(mid, c0, 2, rng);
  w.stem.bn3 = BatchNorm::init(c0);
  for (std::size_t s = 0; s < 4; ++s) {
    std::vector<BlockWeights> blocks;
    for (std::size_t b = 0; b < cfg.stage_depths[s]; ++b) blocks.push_back(BlockWeights::init(cfg.block_config(s), rng));
    w.stages.push_back(std::move(blocks));
    if (s + 1 < 4) {
      w.downsamples.push_back(
          {Conv3x3::init(cfg.stage_channels[s], cfg.stage_channels[s + 1], 2, rng), LayerNorm::init(cfg.stage_channels[s + 1])});
    }
  }
  w.head = Linear::init(cfg.stage_channels[3], cfg.num_classes, rng);
  return w;
}

namespace {

void require_stem_input(const Tensor& img, const StemWeights& w) {
  if (img.rank() != 3 || img.extent(2) != w.conv1.in_channels()) {
    throw ShapeError("stem: expected [H, W, " + std::to_string(w.conv1.in_channels()) + "] image, got " +
                     shape_to_string(img.shape()));
  }
  if (img.extent(0) % 4 || img.extent(1) % 4) throw ShapeError("stem: image extents must be divisible by 4");
}

}  // namespace

std::vector<Tensor> stem_forward_batch(const std::vector<Tensor>& imgs, const StemWeights& w, NormMode mode,
                                       StemTrace* trace) {
  for (const Tensor& img : imgs) require_stem_input(img, w);
  StemTrace local;
  StemTrace& tr = trace ? *trace : local;
  tr = StemTrace{};
  tr.input = imgs;
  auto conv_all = [](const std::vector<Tensor>& in, const Conv3x3& c) {
    std::vector<Tensor> out;
    out.reserve(in.size());
    for (const Tensor& x : in) out.push_back(conv3x3(x, c));
    return out;
  };
  auto norm_all = [mode](const std::vector<Tensor>& in, const BatchNorm& bn, BatchNormCache* cache) {
    if (mode == NormMode::train) return batch_norm_train(in, bn, cache);
    std::vector<Tensor> out;
    out.reserve(in.size());
    for (const Tensor& x : in) out.push_back(batch_norm_eval(x, bn));
    return out;
  };
  tr.c1 = conv_all(imgs, w.conv1);
  tr.n1 = norm_all(tr.c1, w.bn1, &tr.bn1);
  tr.g1.clear();
  for (const Tensor& t : tr.n1) tr.g1.push_back(gelu(t));
  tr.c2 = conv_all(tr.g1, w.conv2);
  tr.n2 = norm_all(tr.c2, w.bn2, &tr.bn2);
  tr.c3 = conv_all(tr.n2, w.conv3);
  tr.out = norm_all(tr.c3, w.bn3, &tr.bn3);
  return tr.out;
}

Tensor stem_forward(const Tensor& img, const StemWeights& w) {
  return stem_forward_batch({img}, w, NormMode::eval).front();
}

Tensor downsample_forward(const Tensor& x, const DownsampleWeights& w, DownsampleTrace* trace) {
  if (x.rank() != 3) throw ShapeError("downsample: expected [H, W, C]");
  halve(x.extent(0));
  halve(x.extent(1));
  DownsampleTrace local;
  DownsampleTrace& tr = trace ? *trace : local;
  tr.x = x;
  tr.conv_out = conv3x3(x, w.conv);
  return layer_norm(tr.conv_out, w.norm, &tr.norm);
}

Tensor stages_forward(const Tensor& stem_out, const ModelConfig& cfg, const ModelWeights& w,
                      const ForwardOptions& opts, SampleTrace* trace) {
  const auto grids = cfg.stage_grids();
  if (trace) {
    trace->blocks.assign(w.stages.size(), {});
    trace->downs.assign(w.downsamples.size(), {});
  }
  Tensor x = stem_out;
  for (std::size_t s = 0; s < w.stages.size(); ++s) {
    if (s) x = downsample_forward(x, w.downsamples[s - 1], trace ? &trace->downs[s - 1] : nullptr);
    if (x.extent(0) != grids[s][0] || x.extent(1) != grids[s][1] || x.extent(2) != cfg.stage_channels[s]) {
      throw InvariantError("model: stage " + std::to_string(s) + " grid " + shape_to_string(x.shape()) +
                           " does not match the configured shape chain");
    }
    if (trace) trace->blocks[s].resize(w.stages[s].size());
    for (std::size_t b = 0; b < w.stages[s].size(); ++b) {
      x = block_forward(x, w.stages[s][b], opts, trace ? &trace->blocks[s][b] : nullptr);
    }
  }
  if (trace) trace->features = x;
  return x;
}

std::vector<Tensor> model_forward_batch(const std::vector<Tensor>& imgs, const ModelConfig& cfg,
                                        const ModelWeights& w, NormMode mode, const ForwardOptions& opts,
                                        ModelTrace* trace) {
  for (const Tensor& img : imgs) {
    if (img.rank() != 3 || img.extent(0) != cfg.input_hw[0] || img.extent(1) != cfg.input_hw[1]) {
      throw ShapeError("model_forward: image " + shape_to_string(img.shape()) + " does not match configured input " +
                       std::to_string(cfg.input_hw[0]) + "x" + std::to_string(cfg.input_hw[1]));
    }
  }
  if (trace) {
    trace->mode = mode;
    trace->samples.assign(imgs.size(), {});
  }
  const std::vector<Tensor> stem_out = stem_forward_batch(imgs, w.stem, mode, trace ? &trace->stem : nullptr);
  std::vector<Tensor> logits;
  logits.reserve(imgs.size());
  for (std::size_t i = 0; i < imgs.size(); ++i) {
    SampleTrace* st = trace ? &trace->samples[i] : nullptr;
    const Tensor features = stages_forward(stem_out[i], cfg, w, opts, st);
    Tensor pooled = global_avg_pool(features);
    logits.push_back(linear(pooled.reshaped({1, pooled.size()}), w.head).reshaped({cfg.num_classes}));
    if (st) st->pooled = std::move(pooled);
  }
  return logits;
}

Tensor model_forward(const Tensor& img, const ModelConfig& cfg, const ModelWeights& w, const ForwardOptions& opts) {
  return model_forward_batch({img}, cfg, w, NormMode::eval, opts).front();
}

}  // namespace smamba::model
