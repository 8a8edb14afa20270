#include "smamba/cli.hpp"

#include <array>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include "CLI11.hpp"
#include "smamba/bench.hpp"
#include "smamba/checkpoint.hpp"
#include "smamba/errors.hpp"
#include "smamba/io.hpp"
#include "smamba/model.hpp"
#include "smamba/oracle.hpp"
#include "smamba/random.hpp"
#include "smamba/selftest.hpp"
#include "smamba/train.hpp"

namespace smamba::cli {

namespace fs = std::filesystem;

namespace {

struct Global {
  std::uint64_t seed = 42;
  std::size_t threads = 1;
  std::string out_dir = ".";
  std::string config;
};

std::array<std::size_t, 2> parse_grid(const std::string& text) {
  const auto x = text.find('x');
  std::size_t h = 0, w = 0;
  try {
    if (x == std::string::npos) throw std::invalid_argument(text);
    std::size_t used = 0;
    h = std::stoul(text.substr(0, x), &used);
    if (used != x) throw std::invalid_argument(text);
    w = std::stoul(text.substr(x + 1), &used);
    if (used != text.size() - x - 1) throw std::invalid_argument(text);
  } catch (const std::logic_error&) {
    throw UsageError("grid must look like HxW, got '" + text + "'");
  }
  if (h == 0 || w == 0) throw UsageError("grid extents must be positive");
  return {h, w};
}

model::ModelConfig load_config(const Global& g) {
  if (g.config.empty()) return {};
  std::ifstream in(g.config);
  if (!in) throw IoError("cannot read config " + g.config);
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  auto cfg = model::ModelConfig::from_json(text);
  cfg.validate();
  return cfg;
}

fs::path out_path(const Global& g, const std::string& name) {
  std::error_code ec;
  fs::create_directories(g.out_dir, ec);
  if (ec) throw IoError("cannot create output directory " + g.out_dir + ": " + ec.message());
  return fs::path(g.out_dir) / name;
}

// Reads an ASCII PGM/PPM, or the first horizontal-bar sample when `synthetic`.
Tensor load_image(const std::string& path, bool synthetic, std::uint64_t seed) {
  if (synthetic) return train::ToyDataset::bars(1, seed).images.front();
  if (path.empty()) throw UsageError("pass --image <file> or --synthetic");
  Tensor img = io::read_pnm(fs::path(path));
  if (img.extent(2) == 3) return img;
  Tensor rgb({img.extent(0), img.extent(1), 3});
  for (std::size_t p = 0; p < img.extent(0) * img.extent(1); ++p) {
    for (std::size_t c = 0; c < 3; ++c) rgb[p * 3 + c] = img[p];
  }
  return rgb;
}

void randomize_fusion(model::ModelWeights& w, Rng& rng) {
  for (auto& stage : w.stages) {
    for (auto& b : stage) b.fusion = fusion::FusionKernel::random(b.fusion.channels, b.fusion.dilations, rng);
  }
}

int cmd_selftest(const Global& g, const std::string& filter, const std::string& fault, std::ostream& out) {
  selftest::Options o;
  o.filter = filter;
  o.inject_fault = fault;
  o.seed = g.seed;
  o.threads = g.threads;
  return selftest::run(o, out) == 0 ? kOk : kInvariant;
}

int cmd_dump_matrix(const Global& g, const std::string& mode, std::size_t length, const std::string& grid_text,
                    const std::string& kernel_kind, std::size_t n_state, std::ostream& out) {
  Rng rng(g.seed);
  oracle::StructuredMatrix m;
  if (mode == "attention" || mode == "mamba") {
    if (length == 0) throw UsageError("--length must be positive");
    if (length > oracle::kMaxOracleLength) {
      throw UsageError("--length exceeds " + std::to_string(oracle::kMaxOracleLength));
    }
    if (mode == "attention") {
      oracle::AttentionSeq a{rng.uniform_tensor({length, n_state}), rng.uniform_tensor({length, n_state}),
                             Tensor({length, 1})};
      m = oracle::linear_attention_matrix(a);
    } else {
      const auto p = ssm::SsmParams::random(1, n_state, rng);
      const Tensor u = rng.uniform_tensor({length, 1});
      m = oracle::mamba_matrix(ssm::discretize(u, p, ssm::project_selective_params(u, p)), 0);
    }
  } else {
    const auto [H, W] = parse_grid(grid_text);
    if (H * W > oracle::kMaxOracleLength) {
      throw UsageError("grid has more than " + std::to_string(oracle::kMaxOracleLength) + " positions");
    }
    const ssm::GridShape grid{H, W};
    const auto p = ssm::SsmParams::random(1, n_state, rng);
    fusion::FusionKernel k;
    if (kernel_kind == "right-tap") k = fusion::FusionKernel::right_neighbor(n_state);
    else if (kernel_kind == "identity") k = fusion::FusionKernel::identity(n_state);
    else k = fusion::FusionKernel::random(n_state, fusion::kDefaultDilations, rng);
    const Tensor u = rng.uniform_tensor({grid.size(), 1});
    m = oracle::spatial_matrix(ssm::discretize(u, p, ssm::project_selective_params(u, p)), 0, k, grid);
  }
  oracle::write_matrix_csv(m, out_path(g, "M.csv"));
  oracle::write_matrix_pgm(m, out_path(g, "M.pgm"));
  const auto report = oracle::check_structure(m);
  out << "structure: " << oracle::to_string(m.structure) << '\n';
  out << "size: " << m.size << 'x' << m.size << '\n';
  out << "nonzero above diagonal: " << (oracle::has_nonzero_above_diagonal(m) ? "yes" : "no") << '\n';
  if (!report.ok()) {
    out << report.describe() << '\n';
    return kInvariant;
  }
  return kOk;
}

int cmd_viz_states(const Global& g, const std::string& image, bool synthetic, bool random_fusion,
                   std::ostream& out) {
  auto cfg = load_config(g);
  const Tensor img = load_image(image, synthetic, g.seed);
  cfg.input_hw = {img.extent(0), img.extent(1)};
  cfg.validate();
  Rng rng(g.seed);
  auto w = model::ModelWeights::init(cfg, rng);
  if (random_fusion) randomize_fusion(w, rng);
  model::ForwardOptions opts;
  opts.threads = g.threads;

  const Tensor stem_out = model::stem_forward(img, w.stem);
  model::BlockTrace tr;
  model::block_forward(stem_out, w.stages.front().front(), opts, &tr);
  const std::size_t H = stem_out.extent(0), W = stem_out.extent(1);
  const std::size_t lanes = tr.ssm.x.size() / (H * W);
  Tensor x_mean({H, W}), h_mean({H, W});
  for (std::size_t t = 0; t < H * W; ++t) {
    for (std::size_t l = 0; l < lanes; ++l) {
      x_mean[t] += tr.ssm.x[t * lanes + l] / static_cast<double>(lanes);
      h_mean[t] += tr.ssm.h[t * lanes + l] / static_cast<double>(lanes);
    }
  }
  if (!all_finite(x_mean) || !all_finite(h_mean)) throw NumericError("viz-states: non-finite state map");
  io::write_pgm(x_mean, out_path(g, "x_mean.pgm"));
  io::write_pgm(h_mean, out_path(g, "h_mean.pgm"));
  out << "grid: " << H << 'x' << W << '\n';
  out << "max |x_mean - h_mean|: " << max_abs_diff(x_mean, h_mean) << '\n';
  return kOk;
}

int cmd_train_toy(const Global& g, std::size_t steps, double lr, std::size_t samples, std::size_t batch,
                  std::ostream& out) {
  const auto cfg = load_config(g);
  if (cfg.input_hw[0] != 16 || cfg.input_hw[1] != 16) throw UsageError("train-toy: the bar dataset is 16x16");
  if (samples < 128 || samples % 2) throw UsageError("train-toy: need an even sample count >= 128");
  Rng rng(g.seed);
  auto w = model::ModelWeights::init(cfg, rng);
  const auto data = train::ToyDataset::bars(samples, g.seed);
  train::TrainOptions opts;
  opts.steps = steps;
  opts.lr = lr;
  opts.batch_size = batch;
  opts.seed = g.seed;
  opts.forward.threads = g.threads;
  const auto result = train::train_toy(cfg, w, data, opts);
  train::write_loss_csv(out_path(g, "loss.csv"), result.loss_curve);
  model::save_checkpoint(w, out_path(g, "checkpoint.ssmw"));
  out << "initial loss: " << result.initial_loss << '\n';
  out << "final loss: " << result.final_loss << '\n';
  out << "final/initial ratio: " << result.final_loss / result.initial_loss << '\n';
  out << "train accuracy: " << result.final_accuracy << '\n';
  return kOk;
}

int cmd_bench(const Global& g, const std::string& which, const std::string& fault, std::size_t channels,
              std::size_t reps, const std::vector<std::size_t>& lengths, const std::vector<std::string>& grids,
              std::ostream& out) {
  bench::BenchOptions o;
  o.repetitions = reps;
  o.threads = g.threads;
  o.seed = g.seed;
  if (fault == "scan-equivalence") o.fault = bench::Fault::scan_equivalence;
  else if (fault == "merge-equivalence") o.fault = bench::Fault::merge_equivalence;
  if (which == "scan" || which == "all") {
    const auto rows = bench::bench_scan_vs_matrix(lengths, channels, 1, o);
    bench::write_csv(out_path(g, "bench_scan.csv"), rows);
    bench::write_table(out, rows);
  }
  if (which == "sasf" || which == "all") {
    std::vector<std::array<std::size_t, 2>> parsed;
    for (const auto& s : grids) parsed.push_back(parse_grid(s));
    const auto rows = bench::bench_sasf_merge(parsed, channels, false, o);
    bench::write_csv(out_path(g, "bench_sasf.csv"), rows);
    if (which == "all") out << '\n';
    bench::write_table(out, rows);
  }
  return kOk;
}

int cmd_erf(const Global& g, const std::string& image, bool synthetic, bool no_fusion, bool random_fusion,
            std::ostream& out) {
  auto cfg = load_config(g);
  const Tensor img = load_image(image, synthetic, g.seed);
  cfg.input_hw = {img.extent(0), img.extent(1)};
  cfg.validate();
  Rng rng(g.seed);
  auto w = model::ModelWeights::init(cfg, rng);
  if (random_fusion) randomize_fusion(w, rng);
  model::ForwardOptions opts;
  opts.fusion_enabled = !no_fusion;
  opts.threads = g.threads;
  const Tensor map = train::erf_map(img, cfg, w, opts);
  io::write_pgm(map, out_path(g, "erf.pgm"));
  io::write_csv(map, out_path(g, "erf.csv"));
  double total = 0.0;
  for (double v : map.values()) total += v;
  out << "erf: " << map.extent(0) << 'x' << map.extent(1) << ", total gradient mass " << total << '\n';
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Spatial-Mamba selective scan, state fusion and structured-matrix toolkit", "smamba"};
  app.require_subcommand(1);
  Global g;
  app.add_option("--seed", g.seed, "random seed")->capture_default_str();
  app.add_option("--threads", g.threads, "worker threads for the parallel-lane scan")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  app.add_option("--out-dir", g.out_dir, "directory for output files")->capture_default_str();
  app.add_option("--config", g.config, "model config JSON");

  std::function<int()> action;

  auto* st = app.add_subcommand("selftest", "run the invariant suite");
  std::string filter, st_fault;
  st->add_option("--filter", filter, "group (oracle, fusion, ssm, train) or check name");
  st->add_option("--inject-fault", st_fault, "corrupt the inputs of one named check");
  st->callback([&] { action = [&] { return cmd_selftest(g, filter, st_fault, out); }; });

  auto* dm = app.add_subcommand("dump-matrix", "write the structured matrix M as CSV and PGM");
  std::string mode, grid = "4x4", kernel = "right-tap";
  std::size_t length = 16, n_state = 1;
  dm->add_option("--mode", mode, "attention, mamba or spatial")
      ->required()
      ->check(CLI::IsMember({"attention", "mamba", "spatial"}));
  dm->add_option("--length", length, "sequence length for attention and mamba")->capture_default_str();
  dm->add_option("--grid", grid, "HxW grid for spatial")->capture_default_str();
  dm->add_option("--kernel", kernel, "fusion kernel for spatial")
      ->check(CLI::IsMember({"right-tap", "identity", "random"}))
      ->capture_default_str();
  dm->add_option("--state", n_state, "state size")->check(CLI::PositiveNumber)->capture_default_str();
  dm->callback([&] { action = [&] { return cmd_dump_matrix(g, mode, length, grid, kernel, n_state, out); }; });

  std::string image;
  bool synthetic = false, random_fusion = false;
  auto* vs = app.add_subcommand("viz-states", "channel-mean state maps before and after fusion");
  vs->add_option("--image", image, "ASCII PGM or PPM input");
  vs->add_flag("--synthetic", synthetic, "use a synthetic bar image");
  vs->add_flag("--random-fusion", random_fusion, "replace the identity fusion kernels with random ones");
  vs->callback([&] { action = [&] { return cmd_viz_states(g, image, synthetic, random_fusion, out); }; });

  auto* tt = app.add_subcommand("train-toy", "train the toy backbone on bar orientation");
  std::size_t steps = 500, samples = 256, batch = 32;
  double lr = 0.01;
  tt->add_option("--steps", steps)->capture_default_str();
  tt->add_option("--lr", lr)->capture_default_str();
  tt->add_option("--samples", samples)->capture_default_str();
  tt->add_option("--batch-size", batch)->capture_default_str();
  tt->callback([&] { action = [&] { return cmd_train_toy(g, steps, lr, samples, batch, out); }; });

  auto* bn = app.add_subcommand("bench", "scan vs matrix and merged vs separate fusion timings");
  std::string which = "all", bench_fault;
  std::size_t channels = 8, reps = 10;
  std::vector<std::size_t> lengths = {64, 128, 256, 512};
  std::vector<std::string> grids = {"16x16", "32x32", "64x64"};
  bn->add_option("--which", which)->check(CLI::IsMember({"scan", "sasf", "all"}))->capture_default_str();
  bn->add_option("--channels", channels)->check(CLI::PositiveNumber)->capture_default_str();
  bn->add_option("--repetitions", reps)->capture_default_str();
  bn->add_option("--lengths", lengths)->delimiter(',');
  bn->add_option("--grids", grids)->delimiter(',');
  bn->add_option("--inject-fault", bench_fault, "corrupt one path before the equivalence check")
      ->check(CLI::IsMember({"scan-equivalence", "merge-equivalence"}));
  bn->callback([&] {
    action = [&] { return cmd_bench(g, which, bench_fault, channels, reps, lengths, grids, out); };
  });

  auto* er = app.add_subcommand("erf", "effective receptive field of the center feature");
  bool no_fusion = false;
  er->add_option("--image", image, "ASCII PGM or PPM input");
  er->add_flag("--synthetic", synthetic, "use a synthetic bar image");
  er->add_flag("--no-fusion", no_fusion, "run the SSM as plain Mamba");
  er->add_flag("--random-fusion", random_fusion, "replace the identity fusion kernels with random ones");
  er->callback([&] { action = [&] { return cmd_erf(g, image, synthetic, no_fusion, random_fusion, out); }; });

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  }

  try {
    return action();
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const ShapeError& e) {
    err << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const DomainError& e) {
    err << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const IoError& e) {
    err << "io error: " << e.what() << '\n';
    return kIo;
  } catch (const Error& e) {
    err << "failed: " << e.what() << '\n';
    return kInvariant;
  }
}

}  // namespace smamba::cli
