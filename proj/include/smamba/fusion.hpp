#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <utility>
#include <vector>

#include "smamba/random.hpp"
#include "smamba/structured_matrix.hpp"
#include "smamba/tensor.hpp"

namespace smamba::fusion {

inline const std::vector<int> kDefaultDilations = {1, 3, 5};

// Multi-scale dilated depth-wise 3x3 kernels. For dilation d the taps sit at
// offsets (i*d, j*d) with i, j in {-1, 0, +1}; weights are free (no normalization).
struct FusionKernel {
  std::vector<int> dilations;
  std::size_t channels = 0;
  Tensor weights;  // [dilations.size(), channels, 3, 3]

  FusionKernel() = default;
  FusionKernel(std::vector<int> dilations, std::size_t channels);

  // d=1 center tap 1, everything else 0: h == x.
  static FusionKernel identity(std::size_t channels, std::vector<int> dilations = kDefaultDilations);
  // Identity plus `weight` on the d=1 right neighbor (0, +1).
  static FusionKernel right_neighbor(std::size_t channels, double weight = 0.5);
  static FusionKernel random(std::size_t channels, std::vector<int> dilations, Rng& rng, double scale = 0.5);

  double& tap(std::size_t dilation_index, std::size_t channel, int i, int j) noexcept {
    return weights.at(dilation_index, channel, i + 1, j + 1);
  }
  double tap(std::size_t dilation_index, std::size_t channel, int i, int j) const noexcept {
    return weights.at(dilation_index, channel, i + 1, j + 1);
  }

  int max_dilation() const;
  void validate() const;
};

// Single (2R+1)x(2R+1) depth-wise kernel equivalent to summing the dilated ones.
struct MergedKernel {
  int radius = 0;
  std::size_t channels = 0;
  Tensor taps;  // [channels, 2R+1, 2R+1]
  // Offsets (di, dj) that carry a nonzero weight for at least one channel.
  std::vector<std::pair<int, int>> support;

  double tap(std::size_t channel, int di, int dj) const noexcept {
    return taps.at(channel, di + radius, dj + radius);
  }
};

// h(r, c) = sum_d sum_{i,j} k^d_ij x(r + i*d, c + j*d), zero padding. x is [H, W, channels].
Tensor sasf_apply(const Tensor& x, const FusionKernel& k);

// Radius defaults to the largest dilation; a larger radius pads with zeros.
MergedKernel merge_dilated_kernels(const FusionKernel& k, std::optional<int> radius = std::nullopt);
Tensor apply_merged(const Tensor& x, const MergedKernel& m);

// Flattened-sequence form of the fusion for one lane: F[t][t + i*d*W + j*d] = k^d_ij
// for every in-bounds neighbor, so that F * flatten(x_lane) == flatten(h_lane).
oracle::StructuredMatrix fusion_adjacency(const FusionKernel& k, std::size_t height, std::size_t width,
                                          std::size_t lane);

// One row per tap: dilation,i,j,channel,weight.
void write_kernel_csv(const FusionKernel& k, const std::filesystem::path& path);
FusionKernel read_kernel_csv(const std::filesystem::path& path);

}  // namespace smamba::fusion
