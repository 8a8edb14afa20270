#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

namespace smamba::bench {

struct BenchReport {
  std::string op;
  std::string size;  // "L" or "HxW"
  std::size_t channels = 0;
  std::size_t repetitions = 0;
  double median_ns = 0.0;
  double throughput = 0.0;  // elements per second
};

enum class Fault { none, scan_equivalence, merge_equivalence };

struct BenchOptions {
  std::size_t repetitions = 10;  // at least 10
  std::size_t warmup = 3;
  std::size_t threads = 1;  // > 1 adds a parallel-lane scan row
  std::uint64_t seed = 42;
  Fault fault = Fault::none;  // test hook: perturbs one path before the equivalence check
};

inline constexpr double kScanMatrixTolerance = 1e-9;
inline constexpr double kMergeTolerance = 1e-12;

// Recurrent scan vs dense matrix evaluation of the same selective SSM.
// Throws InvariantError if the two outputs disagree.
std::vector<BenchReport> bench_scan_vs_matrix(const std::vector<std::size_t>& lengths, std::size_t channels,
                                              std::size_t n_state = 1, const BenchOptions& opts = {});

// Separate dilated kernels vs the merged kernel, dilations {1, 3, 5}.
std::vector<BenchReport> bench_sasf_merge(const std::vector<std::array<std::size_t, 2>>& grids,
                                          std::size_t channels, bool identity_kernel = false,
                                          const BenchOptions& opts = {});

void write_csv(std::ostream& out, const std::vector<BenchReport>& rows);
void write_csv(const std::filesystem::path& path, const std::vector<BenchReport>& rows);
void write_table(std::ostream& out, const std::vector<BenchReport>& rows);

}  // namespace smamba::bench
