#include "smamba/structured_matrix.hpp"

#include <numeric>

namespace smamba::oracle {

std::string_view to_string(Structure s) noexcept {
  switch (s) {
    case Structure::lower_triangular:
      return "lower_triangular";
    case Structure::adjacency:
      return "adjacency";
    case Structure::dense:
      return "dense";
  }
  return "unknown";
}

StructuredMatrix::StructuredMatrix(std::size_t n, Structure s)
    : size(n), entries({n, n}), structure(s), row_reach(n, n == 0 ? 0 : n - 1) {
  if (s == Structure::lower_triangular) std::iota(row_reach.begin(), row_reach.end(), std::size_t{0});
}

}  // namespace smamba::oracle
