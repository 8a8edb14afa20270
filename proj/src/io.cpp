#include "smamba/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>

#include "smamba/errors.hpp"

namespace smamba::io {

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  return os;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open for reading: " + path.string());
  return is;
}

double parse_double(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw IoError("csv: not a number: '" + std::string(s) + "'");
  }
  return v;
}

// Skips whitespace and '#' comments between PNM header tokens.
std::string next_pnm_token(std::istream& is) {
  std::string tok;
  for (;;) {
    if (!(is >> tok)) throw IoError("pnm: truncated file");
    if (tok[0] != '#') return tok;
    std::string rest;
    std::getline(is, rest);
  }
}

long parse_pnm_int(std::istream& is) {
  const std::string tok = next_pnm_token(is);
  long v = 0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size() || v < 0) {
    throw IoError("pnm: bad integer '" + tok + "'");
  }
  return v;
}

}  // namespace

void write_csv(const Tensor& t, std::ostream& os) {
  if (t.rank() != 2) throw ShapeError("write_csv: expected rank-2 tensor, got " + shape_to_string(t.shape()));
  const std::size_t rows = t.extent(0), cols = t.extent(1);
  os << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      if (c) os << ',';
      os << t.at(r, c);
    }
    os << '\n';
  }
}

void write_csv(const Tensor& t, const std::filesystem::path& path) {
  auto os = open_out(path);
  write_csv(t, os);
}

Tensor read_csv(std::istream& is) {
  std::vector<double> values;
  std::size_t rows = 0, cols = 0;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::size_t n = 0;
    std::string_view rest(line);
    for (;;) {
      const auto comma = rest.find(',');
      values.push_back(parse_double(rest.substr(0, comma)));
      ++n;
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    if (rows == 0) {
      cols = n;
    } else if (n != cols) {
      throw IoError("csv: row " + std::to_string(rows) + " has " + std::to_string(n) + " columns, expected " +
                    std::to_string(cols));
    }
    ++rows;
  }
  return Tensor({rows, cols}, std::move(values));
}

Tensor read_csv(const std::filesystem::path& path) {
  auto is = open_in(path);
  return read_csv(is);
}

void write_pgm(const Tensor& map, std::ostream& os) {
  if (map.rank() != 2) throw ShapeError("write_pgm: expected rank-2 map, got " + shape_to_string(map.shape()));
  const std::size_t rows = map.extent(0), cols = map.extent(1);
  const double peak = max_abs(map);
  os << "P2\n" << cols << ' ' << rows << "\n255\n";
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const double v = std::abs(map.at(r, c));
      const long level = peak > 0.0 ? std::lround(255.0 * v / peak) : 0;
      if (c) os << ' ';
      os << std::clamp(level, 0L, 255L);
    }
    os << '\n';
  }
}

void write_pgm(const Tensor& map, const std::filesystem::path& path) {
  auto os = open_out(path);
  write_pgm(map, os);
}

Tensor read_pnm(std::istream& is) {
  const std::string magic = next_pnm_token(is);
  std::size_t channels = 0;
  if (magic == "P2") {
    channels = 1;
  } else if (magic == "P3") {
    channels = 3;
  } else {
    throw IoError("pnm: only ASCII P2/P3 images are supported, got '" + magic + "'");
  }
  const auto width = static_cast<std::size_t>(parse_pnm_int(is));
  const auto height = static_cast<std::size_t>(parse_pnm_int(is));
  const long maxval = parse_pnm_int(is);
  if (width == 0 || height == 0 || maxval == 0) throw IoError("pnm: empty image or zero maxval");
  Tensor img({height, width, channels});
  for (double& v : img.values()) {
    const long level = parse_pnm_int(is);
    if (level > maxval) throw IoError("pnm: sample exceeds maxval");
    v = static_cast<double>(level) / static_cast<double>(maxval);
  }
  return img;
}

Tensor read_pnm(const std::filesystem::path& path) {
  auto is = open_in(path);
  return read_pnm(is);
}

}  // namespace smamba::io
