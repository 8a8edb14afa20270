#include "smamba/fusion.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "smamba/errors.hpp"
#include "smamba/io.hpp"

namespace smamba::fusion {

FusionKernel::FusionKernel(std::vector<int> dils, std::size_t ch)
    : dilations(std::move(dils)), channels(ch), weights({dilations.size(), ch, 3, 3}) {
  validate();
}

FusionKernel FusionKernel::identity(std::size_t channels, std::vector<int> dilations) {
  FusionKernel k(std::move(dilations), channels);
  const auto it = std::find(k.dilations.begin(), k.dilations.end(), 1);
  if (it == k.dilations.end()) throw DomainError("identity fusion kernel needs dilation 1 in the list");
  const auto di = static_cast<std::size_t>(it - k.dilations.begin());
  for (std::size_t c = 0; c < channels; ++c) k.tap(di, c, 0, 0) = 1.0;
  return k;
}

FusionKernel FusionKernel::right_neighbor(std::size_t channels, double weight) {
  FusionKernel k = identity(channels, {1});
  for (std::size_t c = 0; c < channels; ++c) k.tap(0, c, 0, 1) = weight;
  return k;
}

FusionKernel FusionKernel::random(std::size_t channels, std::vector<int> dilations, Rng& rng, double scale) {
  FusionKernel k(std::move(dilations), channels);
  rng.fill_uniform(k.weights, -scale, scale);
  return k;
}

int FusionKernel::max_dilation() const { return dilations.empty() ? 0 : dilations.back(); }

void FusionKernel::validate() const {
  if (dilations.empty()) throw DomainError("fusion kernel: empty dilation list");
  for (std::size_t i = 0; i < dilations.size(); ++i) {
    if (dilations[i] <= 0) throw DomainError("fusion kernel: dilations must be positive");
    if (i && dilations[i] <= dilations[i - 1]) {
      throw DomainError("fusion kernel: dilations must be strictly ascending");
    }
  }
  weights.require_shape({dilations.size(), channels, 3, 3}, "fusion kernel weights");
}

namespace {

void require_grid(const Tensor& x, std::size_t channels, const char* what) {
  if (x.rank() != 3) throw ShapeError(std::string(what) + ": expected [H, W, C] grid, got " + shape_to_string(x.shape()));
  if (x.extent(2) != channels) {
    throw ShapeError(std::string(what) + ": grid has " + std::to_string(x.extent(2)) + " channels, kernel has " +
                     std::to_string(channels));
  }
}

// out(r, c, l) += w[l] * x(r + di, c + dj, l) over the in-bounds region.
void accumulate_shifted(const Tensor& x, Tensor& out, int di, int dj, const double* w) {
  const auto H = static_cast<long>(x.extent(0));
  const auto W = static_cast<long>(x.extent(1));
  const std::size_t C = x.extent(2);
  const long r0 = std::max(0L, -static_cast<long>(di)), r1 = std::min(H, H - di);
  const long c0 = std::max(0L, -static_cast<long>(dj)), c1 = std::min(W, W - dj);
  for (long r = r0; r < r1; ++r) {
    for (long c = c0; c < c1; ++c) {
      double* dst = out.data() + (static_cast<std::size_t>(r * W + c)) * C;
      const double* src = x.data() + (static_cast<std::size_t>((r + di) * W + (c + dj))) * C;
      for (std::size_t l = 0; l < C; ++l) dst[l] += w[l] * src[l];
    }
  }
}

}  // namespace

Tensor sasf_apply(const Tensor& x, const FusionKernel& k) {
  require_grid(x, k.channels, "sasf_apply");
  Tensor h(x.shape());
  std::vector<double> w(k.channels);
  for (std::size_t di = 0; di < k.dilations.size(); ++di) {
    const int d = k.dilations[di];
    for (int i = -1; i <= 1; ++i) {
      for (int j = -1; j <= 1; ++j) {
        bool any = false;
        for (std::size_t l = 0; l < k.channels; ++l) {
          w[l] = k.tap(di, l, i, j);
          any = any || w[l] != 0.0;
        }
        if (any) accumulate_shifted(x, h, i * d, j * d, w.data());
      }
    }
  }
  return h;
}

MergedKernel merge_dilated_kernels(const FusionKernel& k, std::optional<int> radius) {
  k.validate();
  MergedKernel m;
  m.radius = radius.value_or(k.max_dilation());
  if (m.radius < k.max_dilation()) throw DomainError("merge_dilated_kernels: radius smaller than largest dilation");
  m.channels = k.channels;
  const auto side = static_cast<std::size_t>(2 * m.radius + 1);
  m.taps = Tensor({k.channels, side, side});
  for (std::size_t di = 0; di < k.dilations.size(); ++di) {
    const int d = k.dilations[di];
    for (int i = -1; i <= 1; ++i) {
      for (int j = -1; j <= 1; ++j) {
        for (std::size_t c = 0; c < k.channels; ++c) {
          m.taps.at(c, i * d + m.radius, j * d + m.radius) += k.tap(di, c, i, j);
        }
      }
    }
  }
  for (int a = -m.radius; a <= m.radius; ++a) {
    for (int b = -m.radius; b <= m.radius; ++b) {
      for (std::size_t c = 0; c < m.channels; ++c) {
        if (m.tap(c, a, b) != 0.0) {
          m.support.emplace_back(a, b);
          break;
        }
      }
    }
  }
  return m;
}

Tensor apply_merged(const Tensor& x, const MergedKernel& m) {
  require_grid(x, m.channels, "apply_merged");
  Tensor h(x.shape());
  std::vector<double> w(m.channels);
  for (const auto& [a, b] : m.support) {
    for (std::size_t c = 0; c < m.channels; ++c) w[c] = m.tap(c, a, b);
    accumulate_shifted(x, h, a, b, w.data());
  }
  return h;
}

oracle::StructuredMatrix fusion_adjacency(const FusionKernel& k, std::size_t height, std::size_t width,
                                          std::size_t lane) {
  if (lane >= k.channels) throw ShapeError("fusion_adjacency: lane out of range");
  const std::size_t L = height * width;
  oracle::StructuredMatrix F(L, oracle::Structure::adjacency);
  const auto H = static_cast<long>(height), W = static_cast<long>(width);
  for (long r = 0; r < H; ++r) {
    for (long c = 0; c < W; ++c) {
      const auto t = static_cast<std::size_t>(r * W + c);
      std::size_t reach = t;
      for (std::size_t di = 0; di < k.dilations.size(); ++di) {
        const int d = k.dilations[di];
        for (int i = -1; i <= 1; ++i) {
          for (int j = -1; j <= 1; ++j) {
            const long nr = r + i * d, nc = c + j * d;
            if (nr < 0 || nr >= H || nc < 0 || nc >= W) continue;
            const auto s = static_cast<std::size_t>(nr * W + nc);
            F(t, s) += k.tap(di, lane, i, j);
            reach = std::max(reach, s);
          }
        }
      }
      F.row_reach[t] = reach;
    }
  }
  return F;
}

void write_kernel_csv(const FusionKernel& k, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  os << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (std::size_t di = 0; di < k.dilations.size(); ++di) {
    for (int i = -1; i <= 1; ++i) {
      for (int j = -1; j <= 1; ++j) {
        for (std::size_t c = 0; c < k.channels; ++c) {
          os << k.dilations[di] << ',' << i << ',' << j << ',' << c << ',' << k.tap(di, c, i, j) << '\n';
        }
      }
    }
  }
}

FusionKernel read_kernel_csv(const std::filesystem::path& path) {
  const Tensor rows = io::read_csv(path);
  if (rows.size() == 0 || rows.extent(1) != 5) {
    throw IoError("kernel csv: expected 5 columns (dilation,i,j,channel,weight) in " + path.string());
  }
  std::set<int> dils;
  std::size_t channels = 0;
  for (std::size_t r = 0; r < rows.extent(0); ++r) {
    const double d = rows.at(r, 0), i = rows.at(r, 1), j = rows.at(r, 2), c = rows.at(r, 3);
    if (d != static_cast<int>(d) || d <= 0 || (i != -1 && i != 0 && i != 1) || (j != -1 && j != 0 && j != 1) ||
        c < 0 || c != static_cast<std::size_t>(c)) {
      throw IoError("kernel csv: malformed tap on line " + std::to_string(r + 1));
    }
    dils.insert(static_cast<int>(d));
    channels = std::max(channels, static_cast<std::size_t>(c) + 1);
  }
  FusionKernel k(std::vector<int>(dils.begin(), dils.end()), channels);
  std::map<int, std::size_t> index;
  for (std::size_t di = 0; di < k.dilations.size(); ++di) index[k.dilations[di]] = di;
  for (std::size_t r = 0; r < rows.extent(0); ++r) {
    k.tap(index[static_cast<int>(rows.at(r, 0))], static_cast<std::size_t>(rows.at(r, 3)),
          static_cast<int>(rows.at(r, 1)), static_cast<int>(rows.at(r, 2))) = rows.at(r, 4);
  }
  return k;
}

}  // namespace smamba::fusion
