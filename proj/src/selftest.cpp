#include "smamba/selftest.hpp"

#include <cmath>
#include <sstream>

#include "smamba/backward.hpp"
#include "smamba/errors.hpp"
#include "smamba/fusion.hpp"
#include "smamba/oracle.hpp"
#include "smamba/random.hpp"
#include "smamba/ssm.hpp"
#include "smamba/train.hpp"

namespace smamba::selftest {

namespace {

std::string format(double v) {
  std::ostringstream os;
  os.precision(3);
  os << std::scientific << v;
  return os.str();
}

CheckResult within(double value, double tol, const std::string& what) {
  return {value <= tol, what + " " + format(value) + " (tol " + format(tol) + ")"};
}

bool faulted(const Options& o, const char* name) { return o.inject_fault == name; }

CheckResult scan_matrix_equivalence(const Options& o) {
  Rng rng(o.seed);
  double worst = 0.0;
  for (std::size_t L : {16, 64}) {
    const auto p = ssm::SsmParams::random(4, 2, rng);
    const Tensor u = rng.uniform_tensor({L, 4});
    const ssm::GridShape grid{1, L};
    Tensor y_matrix = oracle::matrix_form_forward(ssm::discretize(u, p, ssm::project_selective_params(u, p)), u,
                                                  p.d_skip, nullptr, grid);
    if (faulted(o, "scan-matrix-equivalence")) y_matrix[0] += 1e-3;
    worst = std::max(worst, max_abs_diff(ssm::ssm_forward(u, p, nullptr, grid, o.threads), y_matrix));
  }
  return within(worst, 1e-9, "max deviation");
}

CheckResult spatial_equivalence(const Options& o) {
  Rng rng(o.seed);
  const ssm::GridShape grid{4, 4};
  const auto p = ssm::SsmParams::random(2, 2, rng);
  const auto k = fusion::FusionKernel::random(4, {1, 3}, rng);
  const Tensor u = rng.uniform_tensor({grid.size(), 2});
  const Tensor y_matrix =
      oracle::matrix_form_forward(ssm::discretize(u, p, ssm::project_selective_params(u, p)), u, p.d_skip, &k, grid);
  return within(max_abs_diff(ssm::ssm_forward(u, p, &k, grid, o.threads), y_matrix), 1e-9, "max deviation");
}

CheckResult linear_attention_consistency(const Options& o) {
  Rng rng(o.seed);
  oracle::AttentionSeq a{rng.uniform_tensor({32, 3}), rng.uniform_tensor({32, 3}), rng.uniform_tensor({32, 2})};
  const Tensor y_matrix = oracle::apply(oracle::linear_attention_matrix(a), a.v);
  return within(max_abs_diff(y_matrix, oracle::linear_attention_recurrent(a)), 1e-10, "max deviation");
}

ssm::DiscreteSeq random_seq(std::size_t L, std::size_t C, std::size_t N, Rng& rng) {
  const auto p = ssm::SsmParams::random(C, N, rng);
  const Tensor u = rng.uniform_tensor({L, C});
  return ssm::discretize(u, p, ssm::project_selective_params(u, p));
}

CheckResult mamba_lower_triangular(const Options& o) {
  Rng rng(o.seed);
  const auto m = oracle::mamba_matrix(random_seq(16, 1, 2, rng), 0);
  const auto report = oracle::check_structure(m);
  return {report.ok() && m.structure == oracle::Structure::lower_triangular && !oracle::has_nonzero_above_diagonal(m),
          report.describe()};
}

CheckResult spatial_above_diagonal(const Options& o) {
  Rng rng(o.seed);
  const ssm::GridShape grid{4, 4};
  const auto m = oracle::spatial_matrix(random_seq(grid.size(), 1, 1, rng), 0,
                                        fusion::FusionKernel::right_neighbor(1), grid);
  const bool above = oracle::has_nonzero_above_diagonal(m);
  return {above && oracle::check_structure(m).ok(), above ? "forward neighbor reaches above the diagonal"
                                                          : "no entry above the diagonal"};
}

CheckResult planted_violation(const Options& o) {
  Rng rng(o.seed);
  auto m = oracle::mamba_matrix(random_seq(8, 1, 1, rng), 0);
  m.entries.at(2, 5) = 0.5;
  const auto report = oracle::check_structure(m);
  return {!report.ok(), report.ok() ? "planted entry not detected" : report.describe(1)};
}

CheckResult merge_equivalence(const Options& o) {
  Rng rng(o.seed);
  double worst = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t H = 3 + rng.index(14), W = 3 + rng.index(14), C = 1 + rng.index(4);
    const auto k = fusion::FusionKernel::random(C, fusion::kDefaultDilations, rng);
    auto merged = fusion::merge_dilated_kernels(k);
    if (faulted(o, "merge-equivalence")) merged.taps.at(0, merged.radius, merged.radius) += 0.25;
    const Tensor x = rng.uniform_tensor({H, W, C});
    worst = std::max(worst, max_abs_diff(fusion::sasf_apply(x, k), fusion::apply_merged(x, merged)));
  }
  return within(worst, 1e-12, "max deviation");
}

CheckResult identity_collapse(const Options& o) {
  Rng rng(o.seed);
  const ssm::GridShape grid{5, 3};
  const auto p = ssm::SsmParams::random(3, 2, rng);
  const auto k = fusion::FusionKernel::identity(6, fusion::kDefaultDilations);
  const Tensor u = rng.uniform_tensor({grid.size(), 3});
  return within(max_abs_diff(ssm::ssm_forward(u, p, &k, grid), ssm::ssm_forward(u, p, nullptr, grid)), 1e-12,
                "max deviation");
}

CheckResult zoh_closed_form(const Options&) {
  const auto r = ssm::zoh_discretize(-1.0, 1.0, std::log(2.0));
  return within(std::max(std::abs(r.a_bar - 0.5), std::abs(r.b_bar - 0.5)), 1e-12, "deviation");
}

CheckResult zoh_series_continuity(const Options&) {
  const double s = ssm::kZohSeriesSwitch;
  double worst = 0.0;
  for (double side : {1.0, -1.0}) {
    const double z = side * s;
    worst = std::max(worst, std::abs(ssm::expm1_ratio(std::nextafter(z, 0.0)) - ssm::expm1_ratio(z)));
  }
  return within(worst, 1e-12, "jump at the series switch");
}

CheckResult parallel_scan(const Options& o) {
  Rng rng(o.seed);
  const auto seq = random_seq(64, 8, 2, rng);
  const bool same = ssm::scan_states(seq, 1) == ssm::scan_states(seq, 4);
  return {same, same ? "parallel lanes bitwise identical" : "parallel lanes differ"};
}

CheckResult fd_ssm(const Options& o) {
  Rng rng(o.seed);
  const ssm::GridShape grid{3, 4};
  const auto p = ssm::SsmParams::random(2, 2, rng);
  const auto k = fusion::FusionKernel::random(4, {1, 3}, rng);
  const Tensor u = rng.uniform_tensor({grid.size(), 2});
  const Tensor r = rng.uniform_tensor({grid.size(), 2});
  auto loss = [&](const Tensor& uu) {
    const Tensor y = ssm::ssm_forward(uu, p, &k, grid);
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * r[i];
    return s;
  };
  auto grad = train::zeros_like(p);
  auto grad_k = train::zeros_like(k);
  const Tensor du = train::ssm_backward(u, p, &k, ssm::ssm_forward_traced(u, p, &k, grid), r, grad, &grad_k);
  return within(train::fd_check(loss, u, du).max_rel_error, 1e-5, "max rel error");
}

CheckResult fd_block(const Options& o) {
  Rng rng(o.seed);
  model::BlockConfig cfg;
  cfg.channels = 3;
  cfg.dilations = {1, 3};
  auto w = model::BlockWeights::init(cfg, rng);
  w.fusion = fusion::FusionKernel::random(w.fusion.channels, cfg.dilations, rng);
  const Tensor x = rng.uniform_tensor({3, 3, 3});
  const Tensor r = rng.uniform_tensor({3, 3, 3});
  auto loss = [&](const Tensor& xx) {
    const Tensor y = model::block_forward(xx, w);
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * r[i];
    return s;
  };
  model::BlockTrace tr;
  model::block_forward(x, w, {}, &tr);
  auto grad = train::zeros_like(w);
  const Tensor dx = train::block_backward(tr, w, {}, r, grad);
  return within(train::fd_check(loss, x, dx).max_rel_error, 1e-5, "max rel error");
}

CheckResult fd_model(const Options& o) {
  model::ModelConfig cfg;
  cfg.stage_depths = {1, 1, 1, 1};
  cfg.stage_channels = {4, 4, 8, 8};
  Rng rng(o.seed);
  const auto w = model::ModelWeights::init(cfg, rng);
  const std::vector<Tensor> imgs = {rng.uniform_tensor({16, 16, 3}), rng.uniform_tensor({16, 16, 3})};
  const auto r = train::fd_check_model_params(cfg, w, imgs, {0, 1}, {}, 10, o.seed);
  return within(r.max_rel_error, 1e-5, "max rel error");
}

CheckResult erf_causal(const Options& o) {
  Rng rng(o.seed);
  const ssm::GridShape grid{5, 5};
  const auto p = ssm::SsmParams::random(2, 1, rng);
  const Tensor u = rng.uniform_tensor({grid.size(), 2});
  const std::size_t center = grid.size() / 2;
  const Tensor plain = train::ssm_erf_map(u, p, nullptr, grid, center);
  double after = 0.0;
  for (std::size_t t = center + 1; t < grid.size(); ++t) after = std::max(after, plain[t]);
  const auto k = fusion::FusionKernel::right_neighbor(2);
  const Tensor fused = train::ssm_erf_map(u, p, &k, grid, center);
  double fused_after = 0.0;
  for (std::size_t t = center + 1; t < grid.size(); ++t) fused_after = std::max(fused_after, fused[t]);
  return {after == 0.0 && fused_after > 0.0,
          "after center: plain " + format(after) + ", right-neighbor fusion " + format(fused_after)};
}

}  // namespace

const std::vector<Check>& checks() {
  static const std::vector<Check> all = {
      {"oracle", "scan-matrix-equivalence", scan_matrix_equivalence},
      {"oracle", "spatial-equivalence", spatial_equivalence},
      {"oracle", "linear-attention-consistency", linear_attention_consistency},
      {"oracle", "mamba-lower-triangular", mamba_lower_triangular},
      {"oracle", "spatial-above-diagonal", spatial_above_diagonal},
      {"oracle", "planted-violation", planted_violation},
      {"fusion", "merge-equivalence", merge_equivalence},
      {"fusion", "identity-collapse", identity_collapse},
      {"ssm", "zoh-closed-form", zoh_closed_form},
      {"ssm", "zoh-series-continuity", zoh_series_continuity},
      {"ssm", "parallel-scan", parallel_scan},
      {"train", "fd-ssm", fd_ssm},
      {"train", "fd-block", fd_block},
      {"train", "fd-model", fd_model},
      {"train", "erf-causality", erf_causal},
  };
  return all;
}

std::size_t run(const Options& opts, std::ostream& out) {
  if (!opts.inject_fault.empty()) {
    bool known = false;
    for (const Check& c : checks()) known = known || c.name == opts.inject_fault;
    if (!known) throw UsageError("selftest: unknown fault target '" + opts.inject_fault + "'");
  }
  std::size_t selected = 0, failed = 0;
  for (const Check& c : checks()) {
    if (!opts.filter.empty() && opts.filter != c.group && opts.filter != c.name) continue;
    ++selected;
    CheckResult r;
    try {
      r = c.run(opts);
    } catch (const Error& e) {
      r = {false, std::string("threw: ") + e.what()};
    }
    if (!r.passed) ++failed;
    out << (r.passed ? "PASS " : "FAIL ") << c.group << '/' << c.name << ": " << r.detail << '\n';
  }
  if (selected == 0) throw UsageError("selftest: filter '" + opts.filter + "' matches no check");
  out << (selected - failed) << '/' << selected << " checks passed\n";
  return failed;
}

}  // namespace smamba::selftest
