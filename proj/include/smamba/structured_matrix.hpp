#pragma once

#include <cstddef>
#include <string_view>
#include <vector>

#include "smamba/tensor.hpp"

namespace smamba::oracle {

enum class Structure { lower_triangular, adjacency, dense };

std::string_view to_string(Structure s) noexcept;

// L x L operator y = M u. `row_reach[i]` is the largest column that may hold a
// nonzero in row i: i for lower-triangular, the furthest in-bounds neighbor
// position for adjacency, L-1 for dense.
struct StructuredMatrix {
  std::size_t size = 0;
  Tensor entries;  // [L, L]
  Structure structure = Structure::dense;
  std::vector<std::size_t> row_reach;

  StructuredMatrix() = default;
  StructuredMatrix(std::size_t n, Structure s);

  double operator()(std::size_t i, std::size_t j) const noexcept { return entries[i * size + j]; }
  double& operator()(std::size_t i, std::size_t j) noexcept { return entries[i * size + j]; }
};

}  // namespace smamba::oracle
