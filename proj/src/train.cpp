#include "smamba/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "smamba/errors.hpp"
#include "smamba/random.hpp"

namespace smamba::train {

FdResult fd_check(const std::function<double(const Tensor&)>& f, const Tensor& point, const Tensor& analytic,
                  double eps, std::span<const std::size_t> coords) {
  analytic.require_shape(point.shape(), "fd_check: analytic gradient");
  if (!(eps > 0.0)) throw DomainError("fd_check: eps must be positive");
  std::vector<std::size_t> all;
  if (coords.empty()) {
    all.resize(point.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    coords = all;
  }
  FdResult r;
  Tensor x = point;
  for (std::size_t i : coords) {
    if (i >= x.size()) throw DomainError("fd_check: coordinate out of range");
    const double orig = x[i];
    x[i] = orig + eps;
    const double fp = f(x);
    x[i] = orig - eps;
    const double fm = f(x);
    x[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) throw NumericError("fd_check: f is not finite near the point");
    const double fd = (fp - fm) / (2.0 * eps);
    const double err = std::abs(analytic[i] - fd) / std::max(1.0, std::abs(fd));
    if (err > r.max_rel_error || r.checked == 0) {
      r.max_rel_error = err;
      r.worst_index = i;
    }
    ++r.checked;
  }
  return r;
}

Tensor ssm_erf_map(const Tensor& u, const ssm::SsmParams& p, const fusion::FusionKernel* kernel, ssm::GridShape grid,
                   std::size_t center) {
  const std::size_t L = grid.size(), C = p.channels;
  u.require_shape({L, C}, "ssm_erf_map: u");
  if (center >= L) throw DomainError("ssm_erf_map: center outside the grid");
  const ssm::SsmTrace tr = ssm::ssm_forward_traced(u, p, kernel, grid);
  Tensor dy({L, C});
  for (std::size_t c = 0; c < C; ++c) dy.at(center, c) = 1.0;
  ssm::SsmParams scratch = zeros_like(p);
  fusion::FusionKernel scratch_k;
  if (kernel) scratch_k = zeros_like(*kernel);
  const Tensor du = ssm_backward(u, p, kernel, tr, dy, scratch, kernel ? &scratch_k : nullptr);
  Tensor map({grid.height, grid.width});
  for (std::size_t t = 0; t < L; ++t) {
    for (std::size_t c = 0; c < C; ++c) map[t] += std::abs(du.at(t, c));
  }
  return map;
}

Tensor erf_map(const Tensor& img, const model::ModelConfig& cfg, const model::ModelWeights& w,
               const model::ForwardOptions& opts) {
  model::ModelTrace trace;
  model::model_forward_batch({img}, cfg, w, model::NormMode::eval, opts, &trace);
  const Tensor& features = trace.samples.front().features;
  const std::size_t h = features.extent(0), wd = features.extent(1), C = features.extent(2);
  Tensor d_features(features.shape());
  for (std::size_t c = 0; c < C; ++c) d_features.at(h / 2, wd / 2, c) = 1.0;
  model::ModelWeights scratch = zeros_like(w);
  const Tensor d_img = features_backward(trace, cfg, w, opts, {d_features}, scratch).front();
  Tensor map({img.extent(0), img.extent(1)});
  const std::size_t Cin = img.extent(2);
  for (std::size_t p = 0; p < map.size(); ++p) {
    for (std::size_t c = 0; c < Cin; ++c) map[p] += std::abs(d_img[p * Cin + c]);
  }
  return map;
}

ToyDataset ToyDataset::bars(std::size_t count, std::uint64_t seed, double noise, std::size_t side) {
  constexpr std::size_t thickness = 2;
  if (side < thickness) throw DomainError("ToyDataset::bars: side smaller than the bar thickness");
  ToyDataset d;
  d.seed = seed;
  Rng rng(seed);
  for (std::size_t s = 0; s < count; ++s) {
    const std::size_t label = s % 2;
    const std::size_t pos = rng.index(side - thickness + 1);
    Tensor img({side, side, 3});
    for (std::size_t r = 0; r < side; ++r) {
      for (std::size_t c = 0; c < side; ++c) {
        const std::size_t k = label == 0 ? r : c;
        const double v = (k >= pos && k < pos + thickness) ? 1.0 : 0.0;
        for (std::size_t ch = 0; ch < 3; ++ch) img.at(r, c, ch) = v + rng.normal(0.0, noise);
      }
    }
    d.images.push_back(std::move(img));
    d.labels.push_back(label);
  }
  return d;
}

EvalResult evaluate(const model::ModelConfig& cfg, const model::ModelWeights& w, const ToyDataset& data,
                    const model::ForwardOptions& opts) {
  if (data.size() == 0) throw DomainError("evaluate: empty dataset");
  EvalResult r;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Tensor logits = model::model_forward(data.images[i], cfg, w, opts);
    r.loss += softmax_cross_entropy(logits, data.labels[i]).loss;
    const auto vals = logits.values();
    const auto pred = static_cast<std::size_t>(std::max_element(vals.begin(), vals.end()) - vals.begin());
    if (pred == data.labels[i]) ++correct;
  }
  r.loss /= static_cast<double>(data.size());
  r.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
  return r;
}

double loss_and_grad(const model::ModelConfig& cfg, const model::ModelWeights& w, const std::vector<Tensor>& imgs,
                     const std::vector<std::size_t>& labels, const model::ForwardOptions& opts,
                     model::ModelWeights& grad, model::ModelTrace* trace) {
  if (imgs.empty() || imgs.size() != labels.size()) throw DomainError("loss_and_grad: need one label per image");
  model::ModelTrace local;
  model::ModelTrace& tr = trace ? *trace : local;
  const std::vector<Tensor> logits = model::model_forward_batch(imgs, cfg, w, model::NormMode::train, opts, &tr);
  const double inv_b = 1.0 / static_cast<double>(imgs.size());
  double loss = 0.0;
  std::vector<Tensor> d_logits;
  d_logits.reserve(imgs.size());
  for (std::size_t i = 0; i < imgs.size(); ++i) {
    LossResult lr = softmax_cross_entropy(logits[i], labels[i]);
    loss += lr.loss * inv_b;
    d_logits.push_back(scale(lr.d_logits, inv_b));
  }
  model_backward(tr, cfg, w, opts, d_logits, grad);
  return loss;
}

double batch_loss(const model::ModelConfig& cfg, const model::ModelWeights& w, const std::vector<Tensor>& imgs,
                  const std::vector<std::size_t>& labels, const model::ForwardOptions& opts) {
  if (imgs.empty() || imgs.size() != labels.size()) throw DomainError("batch_loss: need one label per image");
  const std::vector<Tensor> logits = model::model_forward_batch(imgs, cfg, w, model::NormMode::train, opts);
  double loss = 0.0;
  for (std::size_t i = 0; i < imgs.size(); ++i) loss += softmax_cross_entropy(logits[i], labels[i]).loss;
  return loss / static_cast<double>(imgs.size());
}

FdResult fd_check_model_params(const model::ModelConfig& cfg, const model::ModelWeights& w,
                               const std::vector<Tensor>& imgs, const std::vector<std::size_t>& labels,
                               const model::ForwardOptions& opts, std::size_t samples, std::uint64_t seed,
                               double eps) {
  model::ModelWeights grad = zeros_like(w);
  loss_and_grad(cfg, w, imgs, labels, opts, grad);
  model::ModelWeights probe = w;
  std::vector<Tensor*> params, grads;
  probe.for_each_param([&](const std::string&, Tensor& t) { params.push_back(&t); });
  grad.for_each_param([&](const std::string&, Tensor& t) { grads.push_back(&t); });
  std::size_t total = 0;
  for (const Tensor* t : params) total += t->size();
  if (total == 0) throw DomainError("fd_check_model_params: model has no parameters");

  Rng rng(seed);
  FdResult r;
  for (std::size_t s = 0; s < samples; ++s) {
    std::size_t flat = rng.index(total), k = 0;
    while (flat >= params[k]->size()) flat -= params[k++]->size();
    Tensor& p = *params[k];
    const double orig = p[flat];
    p[flat] = orig + eps;
    const double fp = batch_loss(cfg, probe, imgs, labels, opts);
    p[flat] = orig - eps;
    const double fm = batch_loss(cfg, probe, imgs, labels, opts);
    p[flat] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) throw NumericError("fd_check_model_params: loss is not finite");
    const double fd = (fp - fm) / (2.0 * eps);
    const double err = std::abs((*grads[k])[flat] - fd) / std::max(1.0, std::abs(fd));
    if (err > r.max_rel_error || r.checked == 0) {
      r.max_rel_error = err;
      r.worst_index = s;
    }
    ++r.checked;
  }
  return r;
}

TrainResult train_toy(const model::ModelConfig& cfg, model::ModelWeights& w, const ToyDataset& data,
                      const TrainOptions& opts) {
  if (data.size() == 0) throw DomainError("train_toy: empty dataset");
  if (!(opts.lr >= 0.0) || !std::isfinite(opts.lr)) throw DomainError("train_toy: learning rate must be >= 0");
  const std::size_t n = data.size();
  const std::size_t batch = (opts.batch_size == 0 || opts.batch_size >= n) ? n : opts.batch_size;

  TrainResult result;
  result.initial_loss = evaluate(cfg, w, data, opts.forward).loss;

  Rng rng(opts.seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t cursor = n;
  auto next_batch = [&](std::vector<Tensor>& imgs, std::vector<std::size_t>& labels) {
    imgs.clear();
    labels.clear();
    if (batch == n) {
      imgs = data.images;
      labels = data.labels;
      return;
    }
    for (std::size_t k = 0; k < batch; ++k) {
      if (cursor == n) {
        std::shuffle(order.begin(), order.end(), rng.engine());
        cursor = 0;
      }
      imgs.push_back(data.images[order[cursor]]);
      labels.push_back(data.labels[order[cursor]]);
      ++cursor;
    }
  };

  std::vector<Tensor> imgs;
  std::vector<std::size_t> labels;
  model::ModelWeights grad = zeros_like(w);
  for (std::size_t step = 0; step <= opts.steps; ++step) {
    next_batch(imgs, labels);
    grad.for_each_param([](const std::string&, Tensor& t) { t.fill(0.0); });
    model::ModelTrace trace;
    double loss = 0.0;
    try {
      loss = loss_and_grad(cfg, w, imgs, labels, opts.forward, grad, &trace);
    } catch (const NumericError&) {
      throw;
    } catch (const DomainError& e) {
      // Only reachable once updates have pushed parameters out of their valid range.
      if (step == 0) throw;
      throw NumericError("train_toy: diverged at step " + std::to_string(step) + ": " + e.what());
    }
    if (!std::isfinite(loss)) throw NumericError("train_toy: loss diverged at step " + std::to_string(step));
    result.loss_curve.push_back(loss);
    if (step == opts.steps) break;

    std::vector<Tensor*> params, grads;
    w.for_each_param([&](const std::string&, Tensor& t) { params.push_back(&t); });
    grad.for_each_param([&](const std::string&, Tensor& t) { grads.push_back(&t); });
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor& p = *params[i];
      const Tensor& g = *grads[i];
      for (std::size_t j = 0; j < p.size(); ++j) p[j] -= opts.lr * g[j];
    }
    update_running_stats(w.stem.bn1, trace.stem.bn1);
    update_running_stats(w.stem.bn2, trace.stem.bn2);
    update_running_stats(w.stem.bn3, trace.stem.bn3);
  }

  const EvalResult final_eval = evaluate(cfg, w, data, opts.forward);
  result.final_loss = final_eval.loss;
  result.final_accuracy = final_eval.accuracy;
  return result;
}

void write_loss_csv(std::ostream& out, const std::vector<double>& curve) {
  out.precision(std::numeric_limits<double>::max_digits10);
  out << "step,loss\n";
  for (std::size_t s = 0; s < curve.size(); ++s) out << s << ',' << curve[s] << '\n';
}

void write_loss_csv(const std::filesystem::path& path, const std::vector<double>& curve) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_loss_csv(out, curve);
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace smamba::train
