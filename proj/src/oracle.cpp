#include "smamba/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "smamba/errors.hpp"
#include "smamba/io.hpp"

namespace smamba::oracle {

namespace {

void require_oracle_length(std::size_t L, const char* what) {
  if (L > kMaxOracleLength) {
    throw UsageError(std::string(what) + ": L = " + std::to_string(L) + " exceeds the oracle cap of " +
                     std::to_string(kMaxOracleLength));
  }
}

void require_lane(const ssm::DiscreteSeq& seq, std::size_t channel, std::size_t state) {
  if (channel >= seq.channels() || state >= seq.n_state()) throw ShapeError("oracle: lane out of range");
}

}  // namespace

StructuredMatrix linear_attention_matrix(const AttentionSeq& a) {
  if (a.q.rank() != 2 || a.k.shape() != a.q.shape()) throw ShapeError("linear attention: q and k must be [L, N]");
  if (a.v.rank() != 2 || a.v.extent(0) != a.q.extent(0)) throw ShapeError("linear attention: v must be [L, C]");
  const std::size_t L = a.q.extent(0), N = a.q.extent(1);
  require_oracle_length(L, "linear_attention_matrix");
  StructuredMatrix m(L, Structure::lower_triangular);
  for (std::size_t t = 0; t < L; ++t) {
    for (std::size_t s = 0; s <= t; ++s) {
      double dot = 0.0;
      for (std::size_t n = 0; n < N; ++n) dot += a.q.at(t, n) * a.k.at(s, n);
      m(t, s) = dot;
    }
  }
  return m;
}

Tensor linear_attention_recurrent(const AttentionSeq& a) {
  const std::size_t L = a.q.extent(0), N = a.q.extent(1), C = a.v.extent(1);
  Tensor state({N, C});
  Tensor y({L, C});
  for (std::size_t t = 0; t < L; ++t) {
    for (std::size_t n = 0; n < N; ++n) {
      for (std::size_t c = 0; c < C; ++c) state.at(n, c) += a.k.at(t, n) * a.v.at(t, c);
    }
    for (std::size_t c = 0; c < C; ++c) {
      double acc = 0.0;
      for (std::size_t n = 0; n < N; ++n) acc += a.q.at(t, n) * state.at(n, c);
      y.at(t, c) = acc;
    }
  }
  return y;
}

StructuredMatrix state_propagation_matrix(const ssm::DiscreteSeq& seq, std::size_t channel, std::size_t state) {
  require_lane(seq, channel, state);
  const std::size_t L = seq.length();
  require_oracle_length(L, "state_propagation_matrix");
  StructuredMatrix m(L, Structure::lower_triangular);
  for (std::size_t j = 0; j < L; ++j) {
    const double b = seq.b_bar.at(j, channel, state);
    double decay = 1.0;
    m(j, j) = b;
    for (std::size_t t = j + 1; t < L; ++t) {
      decay *= seq.a_bar.at(t, channel, state);
      m(t, j) = decay * b;
    }
  }
  return m;
}

StructuredMatrix mamba_matrix(const ssm::DiscreteSeq& seq, std::size_t channel) {
  require_lane(seq, channel, 0);
  const std::size_t L = seq.length(), N = seq.n_state();
  require_oracle_length(L, "mamba_matrix");
  StructuredMatrix m(L, Structure::lower_triangular);
  for (std::size_t n = 0; n < N; ++n) {
    const StructuredMatrix s = state_propagation_matrix(seq, channel, n);
    for (std::size_t t = 0; t < L; ++t) {
      const double c = seq.c.at(t, n);
      for (std::size_t j = 0; j <= t; ++j) m(t, j) += c * s(t, j);
    }
  }
  return m;
}

StructuredMatrix spatial_matrix(const ssm::DiscreteSeq& seq, std::size_t channel,
                                std::span<const StructuredMatrix> fusion_per_state) {
  require_lane(seq, channel, 0);
  const std::size_t L = seq.length(), N = seq.n_state();
  require_oracle_length(L, "spatial_matrix");
  if (fusion_per_state.size() != N) throw ShapeError("spatial_matrix: need one fusion matrix per state");
  StructuredMatrix m(L, Structure::adjacency);
  std::fill(m.row_reach.begin(), m.row_reach.end(), std::size_t{0});
  for (std::size_t n = 0; n < N; ++n) {
    const StructuredMatrix& f = fusion_per_state[n];
    if (f.size != L) throw ShapeError("spatial_matrix: fusion matrix size does not match sequence length");
    const StructuredMatrix s = state_propagation_matrix(seq, channel, n);
    for (std::size_t t = 0; t < L; ++t) {
      const double c = seq.c.at(t, n);
      m.row_reach[t] = std::max(m.row_reach[t], f.row_reach[t]);
      for (std::size_t r = 0; r <= f.row_reach[t]; ++r) {
        const double alpha = f(t, r);
        if (alpha == 0.0) continue;
        const double w = c * alpha;
        for (std::size_t j = 0; j <= r; ++j) m(t, j) += w * s(r, j);
      }
    }
  }
  return m;
}

StructuredMatrix spatial_matrix(const ssm::DiscreteSeq& seq, std::size_t channel, const fusion::FusionKernel& k,
                                ssm::GridShape grid) {
  if (grid.size() != seq.length()) throw ShapeError("spatial_matrix: grid does not match sequence length");
  const std::size_t N = seq.n_state();
  if (k.channels != seq.channels() * N) throw ShapeError("spatial_matrix: kernel lanes != C * N");
  std::vector<StructuredMatrix> fs;
  fs.reserve(N);
  for (std::size_t n = 0; n < N; ++n) {
    fs.push_back(fusion::fusion_adjacency(k, grid.height, grid.width, channel * N + n));
  }
  return spatial_matrix(seq, channel, fs);
}

Tensor apply(const StructuredMatrix& m, const Tensor& v) {
  const bool vector_input = v.rank() == 1;
  if ((v.rank() != 1 && v.rank() != 2) || v.extent(0) != m.size) {
    throw ShapeError("apply: operand " + shape_to_string(v.shape()) + " does not match " + std::to_string(m.size) +
                     "x" + std::to_string(m.size) + " matrix");
  }
  const std::size_t L = m.size, C = vector_input ? 1 : v.extent(1);
  Tensor y(v.shape());
  for (std::size_t t = 0; t < L; ++t) {
    const std::size_t reach = std::min(m.row_reach[t], L - 1);
    for (std::size_t s = 0; s <= reach; ++s) {
      const double w = m(t, s);
      if (w == 0.0) continue;
      for (std::size_t c = 0; c < C; ++c) y[t * C + c] += w * v[s * C + c];
    }
  }
  return y;
}

Tensor matrix_form_forward(const ssm::DiscreteSeq& seq, const Tensor& u, const Tensor& d_skip,
                           const fusion::FusionKernel* kernel, ssm::GridShape grid) {
  const std::size_t L = seq.length(), C = seq.channels();
  u.require_shape({L, C}, "matrix_form_forward: u");
  d_skip.require_shape({C}, "matrix_form_forward: d_skip");
  Tensor y({L, C});
  Tensor column({L});
  for (std::size_t c = 0; c < C; ++c) {
    const StructuredMatrix m = kernel ? spatial_matrix(seq, c, *kernel, grid) : mamba_matrix(seq, c);
    for (std::size_t t = 0; t < L; ++t) column[t] = u.at(t, c);
    const Tensor yc = apply(m, column);
    for (std::size_t t = 0; t < L; ++t) y.at(t, c) = yc[t] + d_skip[c] * u.at(t, c);
  }
  return y;
}

std::string StructureReport::describe(std::size_t max_listed) const {
  std::ostringstream os;
  os << to_string(structure) << ": ";
  if (ok()) {
    os << "ok" << (decay_checked ? " (decay verified)" : "");
    return os.str();
  }
  os << violations.size() << " violation(s)";
  for (std::size_t i = 0; i < violations.size() && i < max_listed; ++i) {
    const Violation& v = violations[i];
    os << (i ? ", " : " ") << v.kind << " at (" << v.row << "," << v.col << ")=" << v.value;
  }
  if (violations.size() > max_listed) os << ", ...";
  return os.str();
}

StructureReport check_structure(const StructuredMatrix& m, StructureCheckOptions options) {
  StructureReport report;
  report.structure = m.structure;
  const std::size_t L = m.size;
  for (std::size_t i = 0; i < L; ++i) {
    std::size_t reach = L - 1;
    if (m.structure == Structure::lower_triangular) reach = i;
    if (m.structure == Structure::adjacency) reach = m.row_reach[i];
    for (std::size_t j = reach + 1; j < L; ++j) {
      if (m(i, j) != 0.0) report.violations.push_back({i, j, m(i, j), "zero-pattern"});
    }
  }
  if (options.check_decay) {
    report.decay_checked = true;
    for (std::size_t t = 0; t < L; ++t) {
      for (std::size_t s = 0; s < t; ++s) {
        const double older = std::abs(m(t, s)), newer = std::abs(m(t, s + 1));
        if (older > newer * (1.0 + options.decay_tolerance) + options.decay_tolerance) {
          report.violations.push_back({t, s, m(t, s), "decay"});
        }
      }
    }
  }
  return report;
}

bool has_nonzero_above_diagonal(const StructuredMatrix& m) {
  for (std::size_t i = 0; i < m.size; ++i) {
    for (std::size_t j = i + 1; j < m.size; ++j) {
      if (m(i, j) != 0.0) return true;
    }
  }
  return false;
}

void write_matrix_csv(const StructuredMatrix& m, const std::filesystem::path& path) {
  io::write_csv(m.entries, path);
}

void write_matrix_pgm(const StructuredMatrix& m, const std::filesystem::path& path) {
  io::write_pgm(m.entries, path);
}

}  // namespace smamba::oracle
