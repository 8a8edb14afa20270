// Acceptance suite: one PASS/FAIL line per criterion, exit status 0 iff all pass.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "smamba/backward.hpp"
#include "smamba/bench.hpp"
#include "smamba/fusion.hpp"
#include "smamba/oracle.hpp"
#include "smamba/random.hpp"
#include "smamba/ssm.hpp"
#include "smamba/train.hpp"

using namespace smamba;

namespace {

constexpr double kScanMatrixTol = 1e-9;
constexpr double kSpatialTol = 1e-9;
constexpr double kCollapseTol = 1e-12;
constexpr double kMergeTol = 1e-12;
constexpr double kZohTol = 1e-12;
constexpr double kGradTol = 1e-5;
constexpr double kAttentionTol = 1e-10;
constexpr double kLossRatio = 0.1;
constexpr double kMinAccuracy = 0.95;
constexpr double kFastBudget = 5.0;   // seconds
constexpr double kSlowBudget = 60.0;  // seconds

struct Outcome {
  bool passed;
  std::string detail;
};

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3e", v);
  return buf;
}

double dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

ssm::DiscreteSeq make_seq(const Tensor& u, const ssm::SsmParams& p) {
  return ssm::discretize(u, p, ssm::project_selective_params(u, p));
}

Outcome scan_matrix() {
  Rng rng(1);
  double worst = 0.0;
  for (std::size_t N : {1, 4}) {
    for (std::size_t C : {1, 8}) {
      for (std::size_t L : {16, 64, 256}) {
        const auto p = ssm::SsmParams::random(C, N, rng);
        const Tensor u = rng.uniform_tensor({L, C});
        const Tensor y_scan = ssm::ssm_forward(u, p, nullptr, {1, L});
        const Tensor y_matrix = oracle::matrix_form_forward(make_seq(u, p), u, p.d_skip, nullptr, {1, L});
        worst = std::max(worst, max_abs_diff(y_scan, y_matrix));
      }
    }
  }
  return {worst <= kScanMatrixTol, "max deviation " + sci(worst) + " over 12 configurations"};
}

Outcome spatial_pipeline() {
  Rng rng(2);
  double worst = 0.0;
  for (std::size_t side : {4, 8}) {
    for (const auto& dil : std::vector<std::vector<int>>{{1}, {1, 3}, {1, 3, 5}}) {
      const std::size_t C = 3, N = 2;
      const auto p = ssm::SsmParams::random(C, N, rng);
      const auto k = fusion::FusionKernel::random(C * N, dil, rng);
      const Tensor u = rng.uniform_tensor({side * side, C});
      const Tensor y_three_stage = ssm::ssm_forward(u, p, &k, {side, side});
      const Tensor y_matrix = oracle::matrix_form_forward(make_seq(u, p), u, p.d_skip, &k, {side, side});
      worst = std::max(worst, max_abs_diff(y_three_stage, y_matrix));
    }
  }
  return {worst <= kSpatialTol, "max deviation " + sci(worst) + " over 6 configurations"};
}

Outcome identity_collapse() {
  Rng rng(3);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t H = 1 + rng.index(8), W = 1 + rng.index(8), C = 1 + rng.index(6), N = 1 + rng.index(4);
    const std::vector<std::vector<int>> choices = {{1}, {1, 3}, {1, 3, 5}, {1, 2, 7}};
    const auto& dil = choices[rng.index(choices.size())];
    const auto p = ssm::SsmParams::random(C, N, rng);
    const auto k = fusion::FusionKernel::identity(C * N, dil);
    const Tensor u = rng.uniform_tensor({H * W, C});
    worst = std::max(worst, max_abs_diff(ssm::ssm_forward(u, p, &k, {H, W}), ssm::ssm_forward(u, p, nullptr, {H, W})));
  }
  return {worst <= kCollapseTol, "max deviation " + sci(worst) + " over 20 configurations"};
}

Outcome merge_equivalence() {
  Rng rng(4);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t H = 1 + rng.index(24), W = 1 + rng.index(24), C = 1 + rng.index(6);
    const auto k = fusion::FusionKernel::random(C, fusion::kDefaultDilations, rng);
    const auto merged = fusion::merge_dilated_kernels(k);
    if (merged.taps.extent(1) != 11) return {false, "merged kernel is not 11x11"};
    const Tensor x = rng.uniform_tensor({H, W, C});
    worst = std::max(worst, max_abs_diff(fusion::sasf_apply(x, k), fusion::apply_merged(x, merged)));
  }
  const auto rows = bench::bench_sasf_merge({{32, 32}}, 8);
  const bool reported = rows.size() == 2 && rows[0].median_ns > 0.0 && rows[1].median_ns > 0.0;
  return {worst <= kMergeTol && reported,
          "max deviation " + sci(worst) + " over 50 grids; 32x32 separate " + sci(rows[0].median_ns) +
              " ns, merged " + sci(rows[1].median_ns) + " ns"};
}

Outcome zoh() {
  const auto r = ssm::zoh_discretize(-1.0, 1.0, std::log(2.0));
  const double closed = std::max(std::abs(r.a_bar - 0.5), std::abs(r.b_bar - 0.5));
  double jump = 0.0;
  for (double z : {ssm::kZohSeriesSwitch, -ssm::kZohSeriesSwitch}) {
    jump = std::max(jump, std::abs(ssm::expm1_ratio(std::nextafter(z, 0.0)) - ssm::expm1_ratio(z)));
    // The same switch seen through the discretization itself: a = -1, delta = |z|.
    const double d = std::abs(z);
    const auto inside = ssm::zoh_discretize(-1.0, 1.0, std::nextafter(d, 0.0));
    const auto outside = ssm::zoh_discretize(-1.0, 1.0, d);
    jump = std::max(jump, std::abs(inside.b_bar - outside.b_bar));
  }
  return {closed <= kZohTol && jump <= kZohTol, "closed-form deviation " + sci(closed) + ", switch jump " + sci(jump)};
}

Outcome structure() {
  Rng rng(6);
  // Mamba matrices: strictly lower-triangular with exact zeros.
  for (int trial = 0; trial < 5; ++trial) {
    const auto p = ssm::SsmParams::random(2, 3, rng);
    const Tensor u = rng.uniform_tensor({32, 2});
    const auto M = oracle::mamba_matrix(make_seq(u, p), trial % 2);
    if (oracle::has_nonzero_above_diagonal(M) || !oracle::check_structure(M).ok()) {
      return {false, "mamba matrix has a nonzero above the diagonal"};
    }
  }
  // Spatial matrices: a single nonzero forward tap that is in bounds somewhere
  // must create an entry above the diagonal.
  const std::size_t H = 5, W = 5;
  std::size_t cases = 0;
  for (int di = 0; di < 2; ++di) {
    for (int i = -1; i <= 1; ++i) {
      for (int j = -1; j <= 1; ++j) {
        if (i < 0 || (i == 0 && j <= 0)) continue;  // only forward offsets in scan order
        const std::vector<int> dil = {1, 3};
        auto k = fusion::FusionKernel::identity(1, dil);
        k.tap(static_cast<std::size_t>(di), 0, i, j) = rng.uniform(0.2, 1.0);
        const auto p = ssm::SsmParams::random(1, 1, rng);
        const Tensor u = rng.uniform_tensor({H * W, 1});
        const auto M = oracle::spatial_matrix(make_seq(u, p), 0, k, {H, W});
        if (!oracle::has_nonzero_above_diagonal(M) || !oracle::check_structure(M).ok()) {
          return {false, "forward tap (" + std::to_string(i * dil[di]) + "," + std::to_string(j * dil[di]) +
                             ") left M lower-triangular"};
        }
        ++cases;
      }
    }
  }
  // Negative test: a planted entry above the diagonal must be caught.
  const auto p = ssm::SsmParams::random(1, 1, rng);
  const Tensor u = rng.uniform_tensor({16, 1});
  auto M = oracle::mamba_matrix(make_seq(u, p), 0);
  M(3, 9) = 1e-6;
  const auto report = oracle::check_structure(M);
  const bool caught = report.violations.size() == 1 && report.violations[0].row == 3 && report.violations[0].col == 9;
  return {caught, "mamba strictly lower-triangular, " + std::to_string(cases) +
                      " forward taps reach above the diagonal, planted violation " + (caught ? "caught" : "missed")};
}

Outcome gradients() {
  double worst_scan = 0.0, worst_sasf = 0.0, worst_obs = 0.0, worst_block = 0.0, worst_model = 0.0;
  for (std::uint64_t point = 0; point < 10; ++point) {
    Rng rng(100 + point);
    // Scan: states wrt the driven input and the transition factors.
    {
      const auto p = ssm::SsmParams::random(3, 2, rng);
      const Tensor u = rng.uniform_tensor({10, 3});
      const auto seq = make_seq(u, p);
      const Tensor r = rng.uniform_tensor({10, 3, 2});
      const auto g = train::scan_backward(seq, ssm::scan_states(seq), r);
      auto f_bu = [&](const Tensor& t) {
        auto s = seq;
        s.b_bar_u = t;
        return dot(ssm::scan_states(s), r);
      };
      auto f_a = [&](const Tensor& t) {
        auto s = seq;
        s.a_bar = t;
        return dot(ssm::scan_states(s), r);
      };
      worst_scan = std::max({worst_scan, train::fd_check(f_bu, seq.b_bar_u, g.b_bar_u).max_rel_error,
                             train::fd_check(f_a, seq.a_bar, g.a_bar).max_rel_error});
      // End to end through the selective projections and discretization.
      auto grad = train::zeros_like(p);
      const Tensor ry = rng.uniform_tensor({10, 3});
      const Tensor du = train::ssm_backward(u, p, nullptr, ssm::ssm_forward_traced(u, p, nullptr, {1, 10}), ry, grad,
                                            nullptr);
      auto f_u = [&](const Tensor& t) { return dot(ssm::ssm_forward(t, p, nullptr, {1, 10}), ry); };
      worst_scan = std::max(worst_scan, train::fd_check(f_u, u, du).max_rel_error);
    }
    // SASF: states and kernel weights.
    {
      const auto k = fusion::FusionKernel::random(3, fusion::kDefaultDilations, rng);
      const Tensor x = rng.uniform_tensor({6, 7, 3}), dh = rng.uniform_tensor({6, 7, 3});
      auto gk = train::zeros_like(k);
      const Tensor dx = train::sasf_backward(x, k, dh, &gk);
      auto f_x = [&](const Tensor& t) { return dot(fusion::sasf_apply(t, k), dh); };
      auto f_k = [&](const Tensor& t) {
        auto kk = k;
        kk.weights = t;
        return dot(fusion::sasf_apply(x, kk), dh);
      };
      worst_sasf = std::max({worst_sasf, train::fd_check(f_x, x, dx).max_rel_error,
                             train::fd_check(f_k, k.weights, gk.weights).max_rel_error});
    }
    // Observe: every operand.
    {
      const Tensor h = rng.uniform_tensor({6, 3, 2}), c = rng.uniform_tensor({6, 2});
      const Tensor d = rng.uniform_tensor({3}), u = rng.uniform_tensor({6, 3}), r = rng.uniform_tensor({6, 3});
      const auto g = train::observe_backward(h, c, d, u, r);
      worst_obs = std::max(
          {worst_obs,
           train::fd_check([&](const Tensor& t) { return dot(ssm::observe(t, c, d, u), r); }, h, g.h).max_rel_error,
           train::fd_check([&](const Tensor& t) { return dot(ssm::observe(h, t, d, u), r); }, c, g.c).max_rel_error,
           train::fd_check([&](const Tensor& t) { return dot(ssm::observe(h, c, t, u), r); }, d, g.d_skip)
               .max_rel_error,
           train::fd_check([&](const Tensor& t) { return dot(ssm::observe(h, c, d, t), r); }, u, g.u).max_rel_error});
    }
    // Block: input and every weight tensor.
    {
      model::BlockConfig cfg;
      cfg.channels = 3;
      cfg.n_state = 1 + point % 2;
      cfg.dilations = {1, 3};
      auto w = model::BlockWeights::init(cfg, rng);
      w.fusion = fusion::FusionKernel::random(w.fusion.channels, cfg.dilations, rng);
      w.for_each_param("", [&](const std::string&, Tensor& t) {
        for (double& v : t.values()) v += rng.uniform(-0.2, 0.2);
      });
      const Tensor x = rng.uniform_tensor({3, 4, 3}), r = rng.uniform_tensor({3, 4, 3});
      model::BlockTrace tr;
      model::block_forward(x, w, {}, &tr);
      auto grad = train::zeros_like(w);
      const Tensor dx = train::block_backward(tr, w, {}, r, grad);
      worst_block = std::max(
          worst_block,
          train::fd_check([&](const Tensor& t) { return dot(model::block_forward(t, w), r); }, x, dx).max_rel_error);
      std::vector<Tensor> grads;
      grad.for_each_param("", [&](const std::string&, Tensor& t) { grads.push_back(t); });
      std::size_t index = 0;
      w.for_each_param("", [&](const std::string&, Tensor& param) {
        const Tensor at = param;
        auto f = [&](const Tensor& t) {
          const Tensor saved = param;
          param = t;
          const double v = dot(model::block_forward(x, w), r);
          param = saved;
          return v;
        };
        worst_block = std::max(worst_block, train::fd_check(f, at, grads[index++]).max_rel_error);
      });
    }
    // Full toy-model loss: random parameter coordinates, BN on batch statistics.
    {
      const model::ModelConfig cfg;
      auto w = model::ModelWeights::init(cfg, rng);
      for (auto& stage : w.stages) {
        for (auto& b : stage) b.fusion = fusion::FusionKernel::random(b.fusion.channels, b.fusion.dilations, rng);
      }
      const auto data = train::ToyDataset::bars(4, 200 + point);
      worst_model = std::max(worst_model,
                             train::fd_check_model_params(cfg, w, data.images, data.labels, {}, 8, 300 + point)
                                 .max_rel_error);
    }
  }
  const double worst = std::max({worst_scan, worst_sasf, worst_obs, worst_block, worst_model});
  return {worst <= kGradTol, "max rel error scan " + sci(worst_scan) + ", sasf " + sci(worst_sasf) + ", observe " +
                                 sci(worst_obs) + ", block " + sci(worst_block) + ", model " + sci(worst_model)};
}

Outcome erf_causality() {
  Rng rng(8);
  bool causal = true, reaches = true;
  for (int trial = 0; trial < 5; ++trial) {
    const ssm::GridShape grid{7, 7};
    const auto p = ssm::SsmParams::random(3, 2, rng);
    const Tensor u = rng.uniform_tensor({grid.size(), 3});
    const std::size_t center = grid.size() / 2;
    const Tensor plain = train::ssm_erf_map(u, p, nullptr, grid, center);
    const auto k = fusion::FusionKernel::right_neighbor(6, rng.uniform(0.1, 1.0));
    const Tensor fused = train::ssm_erf_map(u, p, &k, grid, center);
    bool any_after = false;
    for (std::size_t t = center + 1; t < grid.size(); ++t) {
      causal = causal && plain[t] == 0.0;
      any_after = any_after || fused[t] != 0.0;
    }
    reaches = reaches && any_after;
  }
  return {causal && reaches, std::string("fusion disabled: ") + (causal ? "exactly zero" : "nonzero") +
                                 " after the center; right-neighbor tap: " + (reaches ? "nonzero" : "zero") +
                                 " after the center"};
}

Outcome toy_learning(double& seconds_per_run) {
  const model::ModelConfig cfg;
  const auto data = train::ToyDataset::bars(256, 42);
  train::TrainOptions opts;  // 500 steps, lr 0.01
  train::TrainResult runs[2];
  double single = 0.0;
  for (auto& r : runs) {
    Rng rng(42);
    auto w = model::ModelWeights::init(cfg, rng);
    const auto t0 = std::chrono::steady_clock::now();
    r = train::train_toy(cfg, w, data, opts);
    single = std::max(single, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  seconds_per_run = single;
  const double ratio = runs[0].final_loss / runs[0].initial_loss;
  const bool deterministic = runs[0].loss_curve == runs[1].loss_curve;
  const bool ok = ratio <= kLossRatio && runs[0].final_accuracy >= kMinAccuracy && deterministic &&
                  single < kSlowBudget && runs[0].loss_curve.size() == opts.steps + 1;
  return {ok, "loss " + sci(runs[0].initial_loss) + " -> " + sci(runs[0].final_loss) + " (ratio " + sci(ratio) +
                  "), accuracy " + std::to_string(runs[0].final_accuracy) +
                  (deterministic ? ", identical curves across runs" : ", curves differ across runs") + ", " +
                  std::to_string(single) + " s per run"};
}

Outcome linear_attention() {
  Rng rng(10);
  double worst = 0.0;
  for (std::size_t L : {16, 64, 256}) {
    oracle::AttentionSeq a{rng.uniform_tensor({L, 4}), rng.uniform_tensor({L, 4}), rng.uniform_tensor({L, 3})};
    worst = std::max(worst,
                     max_abs_diff(oracle::apply(oracle::linear_attention_matrix(a), a.v),
                                  oracle::linear_attention_recurrent(a)));
  }
  const std::size_t L = 50;
  oracle::AttentionSeq ones{Tensor({L, 1}, 1.0), Tensor({L, 1}, 1.0), rng.uniform_tensor({L, 2})};
  const Tensor ym = oracle::apply(oracle::linear_attention_matrix(ones), ones.v);
  const Tensor yr = oracle::linear_attention_recurrent(ones);
  bool exact = true;
  for (std::size_t c = 0; c < 2; ++c) {
    double run = 0.0;
    for (std::size_t t = 0; t < L; ++t) {
      run += ones.v.at(t, c);
      exact = exact && ym.at(t, c) == run && yr.at(t, c) == run;
    }
  }
  return {worst <= kAttentionTol && exact, "matrix vs recurrent " + sci(worst) + ", q=k=1 prefix sums " +
                                               (exact ? "exact" : "inexact")};
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    double budget;
    std::function<Outcome()> run;
  };
  double toy_seconds = 0.0;
  const std::vector<Criterion> criteria = {
      {1, "scan/matrix equivalence", kFastBudget, scan_matrix},
      {2, "spatial pipeline equivalence", kFastBudget, spatial_pipeline},
      {3, "identity-fusion collapse", kFastBudget, identity_collapse},
      {4, "re-parameterization equivalence", kSlowBudget, merge_equivalence},
      {5, "zoh correctness", kFastBudget, zoh},
      {6, "structure checks", kFastBudget, structure},
      {7, "gradient suite", kSlowBudget, gradients},
      {8, "erf causality", kFastBudget, erf_causality},
      // Two training runs for the determinism check; the budget applies per run.
      {9, "toy learning", 2 * kSlowBudget, [&] { return toy_learning(toy_seconds); }},
      {10, "linear-attention consistency", kFastBudget, linear_attention},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool ok = o.passed && secs < c.budget;
    failures += ok ? 0 : 1;
    std::printf("%s criterion %d (%s): %s [%.2f s, budget %.0f s]\n", ok ? "PASS" : "FAIL", c.id, c.name,
                o.detail.c_str(), secs, c.budget);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
