#include <cmath>
#include <sstream>

#include "doctest.h"
#include "smamba/backward.hpp"
#include "smamba/checkpoint.hpp"
#include "smamba/errors.hpp"
#include "smamba/fusion.hpp"
#include "smamba/random.hpp"
#include "smamba/train.hpp"

using namespace smamba;

namespace {

double dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

constexpr double kTol = 1e-5;

}  // namespace

TEST_CASE("fd checker on x^2") {
  const Tensor x({1}, {3.0});
  const auto r = train::fd_check([](const Tensor& t) { return t[0] * t[0]; }, x, Tensor({1}, {6.0}));
  CHECK(r.max_rel_error <= 1e-10);
  CHECK(r.checked == 1);
  CHECK_THROWS_AS(train::fd_check([](const Tensor&) { return std::nan(""); }, x, x), NumericError);
}

TEST_CASE("scan adjoint with unit transitions is a suffix sum") {
  const std::size_t L = 6;
  auto p = ssm::SsmParams::zeros(1, 1);
  const Tensor u({L, 1}, 1.0);
  auto seq = ssm::discretize(u, p, ssm::project_selective_params(u, p));
  seq.a_bar.fill(1.0);
  const Tensor x = ssm::scan_states(seq);
  Tensor dx({L, 1, 1});
  dx[L - 1] = 2.5;  // only y_L observed, with c_L = 2.5
  const auto g = train::scan_backward(seq, x, dx);
  for (std::size_t s = 0; s < L; ++s) CHECK(g.b_bar_u[s] == 2.5);
}

TEST_CASE("scan backward matches finite differences") {
  Rng rng(1);
  const auto p = ssm::SsmParams::random(3, 2, rng);
  const Tensor u = rng.uniform_tensor({8, 3});
  const auto seq = ssm::discretize(u, p, ssm::project_selective_params(u, p));
  const Tensor r = rng.uniform_tensor({8, 3, 2});
  const auto g = train::scan_backward(seq, ssm::scan_states(seq), r);
  auto with_bu = [&](const Tensor& bu) {
    auto s = seq;
    s.b_bar_u = bu;
    return dot(ssm::scan_states(s), r);
  };
  auto with_a = [&](const Tensor& a) {
    auto s = seq;
    s.a_bar = a;
    return dot(ssm::scan_states(s), r);
  };
  CHECK(train::fd_check(with_bu, seq.b_bar_u, g.b_bar_u).max_rel_error <= kTol);
  CHECK(train::fd_check(with_a, seq.a_bar, g.a_bar).max_rel_error <= kTol);
}

TEST_CASE("observe backward matches finite differences") {
  Rng rng(2);
  const Tensor h = rng.uniform_tensor({5, 3, 2}), c = rng.uniform_tensor({5, 2});
  const Tensor d = rng.uniform_tensor({3}), u = rng.uniform_tensor({5, 3}), r = rng.uniform_tensor({5, 3});
  const auto g = train::observe_backward(h, c, d, u, r);
  CHECK(train::fd_check([&](const Tensor& t) { return dot(ssm::observe(t, c, d, u), r); }, h, g.h).max_rel_error <=
        kTol);
  CHECK(train::fd_check([&](const Tensor& t) { return dot(ssm::observe(h, t, d, u), r); }, c, g.c).max_rel_error <=
        kTol);
  CHECK(train::fd_check([&](const Tensor& t) { return dot(ssm::observe(h, c, t, u), r); }, d, g.d_skip)
            .max_rel_error <= kTol);
  CHECK(train::fd_check([&](const Tensor& t) { return dot(ssm::observe(h, c, d, t), r); }, u, g.u).max_rel_error <=
        kTol);
}

TEST_CASE("sasf input gradient is the transposed adjacency") {
  Rng rng(3);
  const std::size_t H = 4, W = 5;
  const auto k = fusion::FusionKernel::random(2, {1, 3}, rng);
  const Tensor x = rng.uniform_tensor({H, W, 2}), dh = rng.uniform_tensor({H, W, 2});
  auto gk = train::zeros_like(k);
  const Tensor dx = train::sasf_backward(x, k, dh, &gk);
  for (std::size_t lane = 0; lane < 2; ++lane) {
    const auto F = fusion::fusion_adjacency(k, H, W, lane);
    for (std::size_t s = 0; s < H * W; ++s) {
      double acc = 0.0;
      for (std::size_t t = 0; t < H * W; ++t) acc += F(t, s) * dh[t * 2 + lane];
      CHECK(std::abs(acc - dx[s * 2 + lane]) <= 1e-13);
    }
  }
  auto loss_k = [&](const Tensor& wts) {
    auto kk = k;
    kk.weights = wts;
    return dot(fusion::sasf_apply(x, kk), dh);
  };
  CHECK(train::fd_check(loss_k, k.weights, gk.weights).max_rel_error <= kTol);
}

TEST_CASE("full ssm backward matches finite differences for input and every parameter") {
  Rng rng(4);
  const ssm::GridShape grid{3, 3};
  auto p = ssm::SsmParams::random(2, 2, rng);
  const auto k = fusion::FusionKernel::random(4, {1, 3}, rng);
  const Tensor u = rng.uniform_tensor({9, 2}), r = rng.uniform_tensor({9, 2});
  auto grad = train::zeros_like(p);
  auto gk = train::zeros_like(k);
  const Tensor du = train::ssm_backward(u, p, &k, ssm::ssm_forward_traced(u, p, &k, grid), r, grad, &gk);
  CHECK(train::fd_check([&](const Tensor& t) { return dot(ssm::ssm_forward(t, p, &k, grid), r); }, u, du)
            .max_rel_error <= kTol);
  std::vector<Tensor> grads;
  grad.for_each_param("", [&](const std::string&, Tensor& t) { grads.push_back(t); });
  std::size_t index = 0;
  p.for_each_param("", [&](const std::string& name, Tensor& param) {
    const Tensor point = param;
    auto loss = [&](const Tensor& t) {
      const Tensor saved = param;
      param = t;
      const double v = dot(ssm::ssm_forward(u, p, &k, grid), r);
      param = saved;
      return v;
    };
    INFO(name);
    CHECK(train::fd_check(loss, point, grads[index++]).max_rel_error <= kTol);
  });
}

TEST_CASE("ssm gradients include the small-delta series branch") {
  auto p = ssm::SsmParams::zeros(1, 1);
  p.b_delta[0] = -12.0;  // delta ~ 6e-6, delta * a inside the series switch
  p.w_b[0] = 0.7;
  p.w_c[0] = -0.4;
  p.w_delta[0] = 0.3;
  const Tensor u({4, 1}, {0.5, -0.2, 0.9, 0.1}), r({4, 1}, {1.0, -0.5, 0.3, 2.0});
  auto grad = train::zeros_like(p);
  const auto tr = ssm::ssm_forward_traced(u, p, nullptr, {1, 4});
  train::ssm_backward(u, p, nullptr, tr, r, grad, nullptr);
  auto loss = [&](const Tensor& a) {
    auto q = p;
    q.a_log = a;
    return dot(ssm::ssm_forward(u, q, nullptr, {1, 4}), r);
  };
  CHECK(train::fd_check(loss, p.a_log, grad.a_log, 1e-4).max_rel_error <= kTol);
}

TEST_CASE("block backward matches finite differences for input and all weights") {
  Rng rng(5);
  model::BlockConfig cfg;
  cfg.channels = 3;
  cfg.n_state = 2;
  cfg.dilations = {1, 2};
  auto w = model::BlockWeights::init(cfg, rng);
  w.fusion = fusion::FusionKernel::random(w.fusion.channels, cfg.dilations, rng);
  // Move weights away from their init so every path carries signal.
  w.for_each_param("", [&](const std::string&, Tensor& t) {
    for (double& v : t.values()) v += rng.uniform(-0.2, 0.2);
  });
  const Tensor x = rng.uniform_tensor({3, 3, 3}), r = rng.uniform_tensor({3, 3, 3});
  model::BlockTrace tr;
  model::block_forward(x, w, {}, &tr);
  auto grad = train::zeros_like(w);
  const Tensor dx = train::block_backward(tr, w, {}, r, grad);
  CHECK(train::fd_check([&](const Tensor& t) { return dot(model::block_forward(t, w), r); }, x, dx).max_rel_error <=
        kTol);
  std::vector<Tensor> grads;
  grad.for_each_param("", [&](const std::string&, Tensor& t) { grads.push_back(t); });
  std::size_t index = 0;
  w.for_each_param("", [&](const std::string& name, Tensor& param) {
    const Tensor point = param;
    auto loss = [&](const Tensor& t) {
      const Tensor saved = param;
      param = t;
      const double v = dot(model::block_forward(x, w), r);
      param = saved;
      return v;
    };
    INFO(name);
    CHECK(train::fd_check(loss, point, grads[index++]).max_rel_error <= kTol);
  });
}

TEST_CASE("block backward without fusion leaves the kernel gradient untouched") {
  Rng rng(6);
  model::BlockConfig cfg;
  cfg.channels = 2;
  const auto w = model::BlockWeights::init(cfg, rng);
  const Tensor x = rng.uniform_tensor({2, 2, 2});
  model::ForwardOptions off;
  off.fusion_enabled = false;
  model::BlockTrace tr;
  model::block_forward(x, w, off, &tr);
  auto grad = train::zeros_like(w);
  train::block_backward(tr, w, off, x, grad);
  CHECK(max_abs(grad.fusion.weights) == 0.0);
  CHECK_THROWS_AS(train::block_backward(model::BlockTrace{}, w, off, x, grad), UsageError);
}

TEST_CASE("full model loss gradient matches finite differences in both norm modes") {
  const model::ModelConfig cfg;
  Rng rng(7);
  auto w = model::ModelWeights::init(cfg, rng);
  for (auto& stage : w.stages) {
    for (auto& b : stage) b.fusion = fusion::FusionKernel::random(b.fusion.channels, b.fusion.dilations, rng);
  }
  const std::vector<Tensor> imgs = {rng.uniform_tensor({16, 16, 3}), rng.uniform_tensor({16, 16, 3}),
                                    rng.uniform_tensor({16, 16, 3})};
  const std::vector<std::size_t> labels = {0, 1, 1};
  CHECK(train::fd_check_model_params(cfg, w, imgs, labels, {}, 40, 99).max_rel_error <= kTol);

  // Image gradient in inference mode.
  model::ModelTrace tr;
  const auto logits = model::model_forward_batch({imgs[0]}, cfg, w, model::NormMode::eval, {}, &tr);
  auto grad = train::zeros_like(w);
  const auto ce = train::softmax_cross_entropy(logits[0], 1);
  const Tensor dimg = train::model_backward(tr, cfg, w, {}, {ce.d_logits}, grad).front();
  auto loss = [&](const Tensor& img) {
    return train::softmax_cross_entropy(model::model_forward(img, cfg, w), 1).loss;
  };
  std::vector<std::size_t> coords;
  for (int i = 0; i < 30; ++i) coords.push_back(rng.index(imgs[0].size()));
  CHECK(train::fd_check(loss, imgs[0], dimg, 1e-5, coords).max_rel_error <= kTol);
}

TEST_CASE("softmax cross-entropy") {
  const auto r = train::softmax_cross_entropy(Tensor({2}, {0.0, 0.0}), 0);
  CHECK(std::abs(r.loss - std::log(2.0)) <= 1e-15);
  CHECK(r.d_logits[0] == -0.5);
  CHECK(r.d_logits[1] == 0.5);
  const auto big = train::softmax_cross_entropy(Tensor({2}, {1000.0, -1000.0}), 0);
  CHECK(std::isfinite(big.loss));
  CHECK_THROWS_AS(train::softmax_cross_entropy(Tensor({2}), 2), DomainError);
}

TEST_CASE("ssm erf: causal without fusion, anti-causal reach with a right neighbor") {
  Rng rng(8);
  const ssm::GridShape grid{6, 6};
  const auto p = ssm::SsmParams::random(3, 2, rng);
  const Tensor u = rng.uniform_tensor({36, 3});
  const std::size_t center = 3 * 6 + 3;
  const Tensor plain = train::ssm_erf_map(u, p, nullptr, grid, center);
  for (std::size_t t = center + 1; t < 36; ++t) CHECK(plain[t] == 0.0);
  CHECK(plain[center] > 0.0);
  const auto id = fusion::FusionKernel::identity(6, fusion::kDefaultDilations);
  CHECK(train::ssm_erf_map(u, p, &id, grid, center) == plain);
  const auto right = fusion::FusionKernel::right_neighbor(6);
  const Tensor fused = train::ssm_erf_map(u, p, &right, grid, center);
  CHECK(fused[center + 1] > 0.0);
}

TEST_CASE("model erf is finite and identity fusion reproduces the plain map") {
  const model::ModelConfig cfg;
  Rng rng(9);
  const auto w = model::ModelWeights::init(cfg, rng);
  const Tensor img = rng.uniform_tensor({16, 16, 3});
  const Tensor a = train::erf_map(img, cfg, w);
  model::ForwardOptions off;
  off.fusion_enabled = false;
  CHECK(all_finite(a));
  CHECK(a.shape() == Shape{16, 16});
  CHECK(max_abs_diff(a, train::erf_map(img, cfg, w, off)) <= 1e-12);
}

TEST_CASE("bar dataset is balanced and deterministic") {
  const auto d = train::ToyDataset::bars(64, 5);
  std::size_t ones = 0;
  for (auto l : d.labels) ones += l;
  CHECK(ones == 32);
  CHECK(d.images[0].shape() == Shape{16, 16, 3});
  CHECK(train::ToyDataset::bars(64, 5).images == d.images);
  CHECK(train::ToyDataset::bars(64, 6).images != d.images);
}

TEST_CASE("zero learning rate keeps the loss constant") {
  const model::ModelConfig cfg;
  Rng rng(10);
  auto w = model::ModelWeights::init(cfg, rng);
  const auto before = model::collect_tensors(w);
  const auto data = train::ToyDataset::bars(128, 3);
  train::TrainOptions o;
  o.steps = 3;
  o.lr = 0.0;
  o.batch_size = 128;
  const auto r = train::train_toy(cfg, w, data, o);
  REQUIRE(r.loss_curve.size() == 4);
  for (double l : r.loss_curve) CHECK(l == r.loss_curve[0]);
  // Parameters unchanged; only running statistics move.
  std::size_t i = 0;
  w.for_each_param([&](const std::string& name, Tensor& t) {
    CHECK(before[i].first == name);
    CHECK(before[i].second == t);
    ++i;
  });
}

TEST_CASE("training is deterministic and zero steps gives one loss entry") {
  const model::ModelConfig cfg;
  const auto data = train::ToyDataset::bars(128, 4);
  train::TrainOptions o;
  o.steps = 4;
  std::vector<double> curves[2];
  for (auto& curve : curves) {
    Rng rng(11);
    auto w = model::ModelWeights::init(cfg, rng);
    curve = train::train_toy(cfg, w, data, o).loss_curve;
  }
  CHECK(curves[0] == curves[1]);
  o.steps = 0;
  Rng rng(11);
  auto w = model::ModelWeights::init(cfg, rng);
  CHECK(train::train_toy(cfg, w, data, o).loss_curve.size() == 1);
  std::ostringstream csv;
  train::write_loss_csv(csv, curves[0]);
  CHECK(csv.str().rfind("step,loss\n0,", 0) == 0);
}

TEST_CASE("divergence is reported") {
  const model::ModelConfig cfg;
  const auto data = train::ToyDataset::bars(128, 4);
  Rng rng(12);
  auto w = model::ModelWeights::init(cfg, rng);
  train::TrainOptions o;
  o.steps = 50;
  o.lr = 1e6;
  CHECK_THROWS_AS(train::train_toy(cfg, w, data, o), NumericError);
}
