#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "smamba/fusion.hpp"
#include "smamba/ssm.hpp"
#include "smamba/structured_matrix.hpp"
#include "smamba/tensor.hpp"

namespace smamba::oracle {

// Materialized matrices are a correctness tool; larger sequences are rejected.
inline constexpr std::size_t kMaxOracleLength = 1024;

// Unnormalized causal linear attention with identity feature map.
struct AttentionSeq {
  Tensor q;  // [L, N]
  Tensor k;  // [L, N]
  Tensor v;  // [L, C]
};

// M[t][s] = q_t . k_s for s <= t.
StructuredMatrix linear_attention_matrix(const AttentionSeq& a);
// x_t = x_{t-1} + k_t^T v_t, y_t = q_t x_t.
Tensor linear_attention_recurrent(const AttentionSeq& a);

// S[t][j] = (prod_{i=j+1..t} a_bar_i) * b_bar_j for one (channel, state) lane; S[t][t] = b_bar_t.
StructuredMatrix state_propagation_matrix(const ssm::DiscreteSeq& seq, std::size_t channel, std::size_t state);

// M[t][s] = sum_n c[t,n] (prod_{i=s+1..t} a_bar[i,n]) b_bar[s,n] for one channel.
StructuredMatrix mamba_matrix(const ssm::DiscreteSeq& seq, std::size_t channel);

// M = sum_n RowScale(c[:, n]) F_n S_n, with F_n the fusion adjacency of lane channel*N + n.
StructuredMatrix spatial_matrix(const ssm::DiscreteSeq& seq, std::size_t channel,
                                std::span<const StructuredMatrix> fusion_per_state);
StructuredMatrix spatial_matrix(const ssm::DiscreteSeq& seq, std::size_t channel, const fusion::FusionKernel& k,
                                ssm::GridShape grid);

// y = M v for v of shape [L] or [L, C] (columns handled independently).
Tensor apply(const StructuredMatrix& m, const Tensor& v);

// Per-channel y[:, c] = M_c u[:, c] + D_c u[:, c]; kernel == nullptr gives the Mamba matrix.
Tensor matrix_form_forward(const ssm::DiscreteSeq& seq, const Tensor& u, const Tensor& d_skip,
                           const fusion::FusionKernel* kernel, ssm::GridShape grid);

struct Violation {
  std::size_t row;
  std::size_t col;
  double value;
  std::string kind;  // "zero-pattern" or "decay"
};

struct StructureReport {
  Structure structure = Structure::dense;
  bool decay_checked = false;
  std::vector<Violation> violations;

  bool ok() const noexcept { return violations.empty(); }
  std::string describe(std::size_t max_listed = 8) const;
};

struct StructureCheckOptions {
  // Row-wise |M[t][s]| <= |M[t][s+1]| for s < t. Holds for Mamba when a_bar is in (0, 1]
  // and b_bar, c are positive constants.
  bool check_decay = false;
  double decay_tolerance = 1e-12;
};

StructureReport check_structure(const StructuredMatrix& m, StructureCheckOptions options = {});
bool has_nonzero_above_diagonal(const StructuredMatrix& m);

void write_matrix_csv(const StructuredMatrix& m, const std::filesystem::path& path);
void write_matrix_pgm(const StructuredMatrix& m, const std::filesystem::path& path);

}  // namespace smamba::oracle
