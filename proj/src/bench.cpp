#include "smamba/bench.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <iomanip>

#include "smamba/errors.hpp"
#include "smamba/fusion.hpp"
#include "smamba/oracle.hpp"
#include "smamba/random.hpp"
#include "smamba/ssm.hpp"

namespace smamba::bench {

namespace {

template <typename F>
double median_ns(const BenchOptions& opts, F&& run) {
  for (std::size_t i = 0; i < opts.warmup; ++i) run();
  std::vector<double> times;
  times.reserve(opts.repetitions);
  for (std::size_t i = 0; i < opts.repetitions; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    run();
    const auto t1 = std::chrono::steady_clock::now();
    times.push_back(std::chrono::duration<double, std::nano>(t1 - t0).count());
  }
  std::sort(times.begin(), times.end());
  const std::size_t n = times.size();
  return n % 2 ? times[n / 2] : 0.5 * (times[n / 2 - 1] + times[n / 2]);
}

BenchReport make_row(std::string op, std::string size, std::size_t channels, std::size_t elements,
                     const BenchOptions& opts, double ns) {
  return {std::move(op), std::move(size), channels, opts.repetitions, ns,
          ns > 0.0 ? static_cast<double>(elements) / (ns * 1e-9) : 0.0};
}

void check_options(const BenchOptions& opts) {
  if (opts.repetitions < 10) throw UsageError("bench: at least 10 repetitions are required");
}

}  // namespace

std::vector<BenchReport> bench_scan_vs_matrix(const std::vector<std::size_t>& lengths, std::size_t channels,
                                              std::size_t n_state, const BenchOptions& opts) {
  check_options(opts);
  Rng rng(opts.seed);
  std::vector<BenchReport> rows;
  for (std::size_t L : lengths) {
    if (L == 0 || L > oracle::kMaxOracleLength) {
      throw UsageError("bench: matrix path needs 1 <= L <= " + std::to_string(oracle::kMaxOracleLength));
    }
    const ssm::SsmParams p = ssm::SsmParams::random(channels, n_state, rng);
    const Tensor u = rng.uniform_tensor({L, channels});
    const ssm::DiscreteSeq seq = ssm::discretize(u, p, ssm::project_selective_params(u, p));
    const ssm::GridShape grid{1, L};

    auto run_scan = [&](std::size_t threads) { return ssm::observe(ssm::scan_states(seq, threads), seq.c, p.d_skip, u); };
    auto run_matrix = [&] { return oracle::matrix_form_forward(seq, u, p.d_skip, nullptr, grid); };

    const Tensor y_scan = run_scan(1);
    Tensor y_matrix = run_matrix();
    if (opts.fault == Fault::scan_equivalence) y_matrix[0] += 1e-6;
    const double dev = max_abs_diff(y_scan, y_matrix);
    if (!(dev <= kScanMatrixTolerance)) {
      throw InvariantError("scan-equivalence: scan and matrix outputs differ by " + std::to_string(dev) +
                           " at L=" + std::to_string(L));
    }
    if (opts.threads > 1) {
      const double dev_par = max_abs_diff(y_scan, run_scan(opts.threads));
      if (!(dev_par <= kScanMatrixTolerance)) {
        throw InvariantError("scan-equivalence: parallel scan differs by " + std::to_string(dev_par));
      }
    }

    const std::size_t elements = L * channels;
    const std::string size = std::to_string(L);
    rows.push_back(make_row("scan", size, channels, elements, opts, median_ns(opts, [&] { run_scan(1); })));
    if (opts.threads > 1) {
      rows.push_back(make_row("scan-parallel", size, channels, elements, opts,
                              median_ns(opts, [&] { run_scan(opts.threads); })));
    }
    rows.push_back(make_row("matrix", size, channels, elements, opts, median_ns(opts, run_matrix)));
  }
  return rows;
}

std::vector<BenchReport> bench_sasf_merge(const std::vector<std::array<std::size_t, 2>>& grids,
                                          std::size_t channels, bool identity_kernel, const BenchOptions& opts) {
  check_options(opts);
  Rng rng(opts.seed);
  std::vector<BenchReport> rows;
  for (const auto& [H, W] : grids) {
    const fusion::FusionKernel k = identity_kernel ? fusion::FusionKernel::identity(channels, fusion::kDefaultDilations)
                                                   : fusion::FusionKernel::random(channels, fusion::kDefaultDilations, rng);
    fusion::MergedKernel merged = fusion::merge_dilated_kernels(k);
    if (opts.fault == Fault::merge_equivalence) merged.taps.at(0, merged.radius, merged.radius) += 0.25;
    const Tensor x = rng.uniform_tensor({H, W, channels});

    const double dev = max_abs_diff(fusion::sasf_apply(x, k), fusion::apply_merged(x, merged));
    if (!(dev <= kMergeTolerance)) {
      throw InvariantError("merge-equivalence: merged and separate kernels differ by " + std::to_string(dev));
    }
    const std::string size = std::to_string(H) + "x" + std::to_string(W);
    const std::size_t elements = H * W * channels;
    rows.push_back(make_row("sasf-separate", size, channels, elements, opts,
                            median_ns(opts, [&] { (void)fusion::sasf_apply(x, k); })));
    rows.push_back(make_row("sasf-merged", size, channels, elements, opts,
                            median_ns(opts, [&] { (void)fusion::apply_merged(x, merged); })));
  }
  return rows;
}

void write_csv(std::ostream& out, const std::vector<BenchReport>& rows) {
  out << "op,size,channels,repetitions,median_ns,throughput\n";
  for (const BenchReport& r : rows) {
    out << r.op << ',' << r.size << ',' << r.channels << ',' << r.repetitions << ',' << std::fixed
        << std::setprecision(0) << r.median_ns << ',' << std::setprecision(1) << r.throughput << '\n';
    out << std::defaultfloat;
  }
}

void write_csv(const std::filesystem::path& path, const std::vector<BenchReport>& rows) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_csv(out, rows);
  if (!out) throw IoError("failed writing " + path.string());
}

void write_table(std::ostream& out, const std::vector<BenchReport>& rows) {
  out << std::left << std::setw(15) << "op" << std::setw(9) << "size" << std::right << std::setw(9) << "channels"
      << std::setw(6) << "reps" << std::setw(14) << "median_ns" << std::setw(16) << "elements/s" << '\n';
  for (const BenchReport& r : rows) {
    out << std::left << std::setw(15) << r.op << std::setw(9) << r.size << std::right << std::setw(9) << r.channels
        << std::setw(6) << r.repetitions << std::fixed << std::setprecision(0) << std::setw(14) << r.median_ns
        << std::scientific << std::setprecision(3) << std::setw(16) << r.throughput << std::defaultfloat << '\n';
  }
}

}  // namespace smamba::bench
