#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <ostream>
#include <span>
#include <vector>

#include "smamba/backward.hpp"
#include "smamba/model.hpp"
#include "smamba/tensor.hpp"

namespace smamba::train {

inline constexpr double kFdEpsilon = 1e-5;

struct FdResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

// Central differences of `f` at `point`, compared to `analytic` coordinate by
// coordinate. Checks every coordinate when `coords` is empty.
FdResult fd_check(const std::function<double(const Tensor&)>& f, const Tensor& point, const Tensor& analytic,
                  double eps = kFdEpsilon, std::span<const std::size_t> coords = {});

// ERF of one SSM layer: sum_c |d y[center, c] / d u[t, c']| over c', laid out on the grid.
Tensor ssm_erf_map(const Tensor& u, const ssm::SsmParams& p, const fusion::FusionKernel* kernel,
                   ssm::GridShape grid, std::size_t center);

// ERF of the whole model: |d (sum_c feature[center]) / d img| summed over input
// channels, where `center` is the middle of the final-stage grid. BN in eval mode.
Tensor erf_map(const Tensor& img, const model::ModelConfig& cfg, const model::ModelWeights& w,
               const model::ForwardOptions& opts = {});

struct ToyDataset {
  std::vector<Tensor> images;  // [16, 16, 3]
  std::vector<std::size_t> labels;
  std::uint64_t seed = 0;

  std::size_t size() const noexcept { return images.size(); }

  // Label 0: horizontal bar, label 1: vertical bar. Classes alternate, so any
  // even count is balanced.
  static ToyDataset bars(std::size_t count, std::uint64_t seed, double noise = 0.1, std::size_t side = 16);
};

struct TrainOptions {
  std::size_t steps = 500;
  double lr = 0.01;
  std::size_t batch_size = 32;  // the full dataset when >= its size
  std::uint64_t seed = 42;
  model::ForwardOptions forward;
};

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
};

struct TrainResult {
  // Entry s is the batch loss seen before update s; the last entry follows the final update.
  std::vector<double> loss_curve;
  double initial_loss = 0.0;  // full-dataset loss before training, inference mode
  double final_loss = 0.0;    // full-dataset loss after training, inference mode
  double final_accuracy = 0.0;
};

// Mean cross-entropy and accuracy over the dataset, BN in inference mode.
EvalResult evaluate(const model::ModelConfig& cfg, const model::ModelWeights& w, const ToyDataset& data,
                    const model::ForwardOptions& opts = {});

// Mean batch loss and its gradient. BN uses batch statistics; `trace` receives the
// forward trace so that running statistics can be updated afterwards.
double loss_and_grad(const model::ModelConfig& cfg, const model::ModelWeights& w, const std::vector<Tensor>& imgs,
                     const std::vector<std::size_t>& labels, const model::ForwardOptions& opts,
                     model::ModelWeights& grad, model::ModelTrace* trace = nullptr);

// Mean batch cross-entropy with BN in training mode, no gradients.
double batch_loss(const model::ModelConfig& cfg, const model::ModelWeights& w, const std::vector<Tensor>& imgs,
                  const std::vector<std::size_t>& labels, const model::ForwardOptions& opts);

// Finite-difference check of loss_and_grad at `samples` coordinates drawn
// uniformly over all trainable parameters.
FdResult fd_check_model_params(const model::ModelConfig& cfg, const model::ModelWeights& w,
                               const std::vector<Tensor>& imgs, const std::vector<std::size_t>& labels,
                               const model::ForwardOptions& opts, std::size_t samples, std::uint64_t seed,
                               double eps = kFdEpsilon);

// Plain minibatch SGD on softmax cross-entropy. Throws NumericError on divergence.
TrainResult train_toy(const model::ModelConfig& cfg, model::ModelWeights& w, const ToyDataset& data,
                      const TrainOptions& opts = {});

void write_loss_csv(std::ostream& out, const std::vector<double>& curve);
void write_loss_csv(const std::filesystem::path& path, const std::vector<double>& curve);

}  // namespace smamba::train
