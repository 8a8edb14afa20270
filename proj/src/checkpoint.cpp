#include "smamba/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "smamba/errors.hpp"

namespace smamba::model {

namespace {

constexpr std::array<char, 4> kMagic = {'S', 'S', 'M', 'W'};

void put_u32(std::ostream& os, std::uint32_t v) {
  const std::array<char, 4> b = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                                 static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  os.write(b.data(), 4);
}

void put_f64(std::ostream& os, double d) {
  const auto v = std::bit_cast<std::uint64_t>(d);
  std::array<char, 8> b{};
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b.data(), 8);
}

void read_exact(std::istream& is, char* dst, std::size_t n) {
  is.read(dst, static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n) throw IoError("checkpoint: truncated file");
}

std::uint32_t get_u32(std::istream& is) {
  std::array<unsigned char, 4> b{};
  read_exact(is, reinterpret_cast<char*>(b.data()), 4);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

double get_f64(std::istream& is) {
  std::array<unsigned char, 8> b{};
  read_exact(is, reinterpret_cast<char*>(b.data()), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return std::bit_cast<double>(v);
}

}  // namespace

void write_tensors(const NamedTensors& entries, std::ostream& os) {
  os.write(kMagic.data(), 4);
  put_u32(os, kCheckpointVersion);
  put_u32(os, static_cast<std::uint32_t>(entries.size()));
  for (const auto& [name, t] : entries) {
    put_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(os, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t e : t.shape()) put_u32(os, static_cast<std::uint32_t>(e));
    for (double v : t.values()) put_f64(os, v);
  }
  if (!os) throw IoError("checkpoint: write failed");
}

NamedTensors read_tensors(std::istream& is) {
  std::array<char, 4> magic{};
  read_exact(is, magic.data(), 4);
  if (magic != kMagic) throw IoError("checkpoint: bad magic");
  const std::uint32_t version = get_u32(is);
  if (version != kCheckpointVersion) throw IoError("checkpoint: unsupported version " + std::to_string(version));
  const std::uint32_t count = get_u32(is);
  NamedTensors out;
  out.reserve(count);
  for (std::uint32_t e = 0; e < count; ++e) {
    const std::uint32_t len = get_u32(is);
    std::string name(len, '\0');
    read_exact(is, name.data(), len);
    const std::uint32_t rank = get_u32(is);
    Shape shape(rank);
    for (auto& s : shape) s = get_u32(is);
    Tensor t(shape);
    for (double& v : t.values()) v = get_f64(is);
    out.emplace_back(std::move(name), std::move(t));
  }
  return out;
}

NamedTensors collect_tensors(const ModelWeights& w) {
  NamedTensors out;
  // for_each_tensor only reads here.
  const_cast<ModelWeights&>(w).for_each_tensor([&](const std::string& name, Tensor& t) { out.emplace_back(name, t); });
  return out;
}

void save_checkpoint(const ModelWeights& w, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  write_tensors(collect_tensors(w), os);
}

void load_checkpoint(const std::filesystem::path& path, ModelWeights& w) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open for reading: " + path.string());
  std::map<std::string, Tensor> entries;
  for (auto& [name, t] : read_tensors(is)) entries.emplace(std::move(name), std::move(t));
  w.for_each_tensor([&](const std::string& name, Tensor& t) {
    const auto it = entries.find(name);
    if (it == entries.end()) throw IoError("checkpoint: missing tensor '" + name + "'");
    if (it->second.shape() != t.shape()) {
      throw IoError("checkpoint: tensor '" + name + "' has shape " + shape_to_string(it->second.shape()) +
                    ", expected " + shape_to_string(t.shape()));
    }
    t = it->second;
  });
}

}  // namespace smamba::model
