#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "smamba/model.hpp"
#include "smamba/tensor.hpp"

namespace smamba::model {

// Little-endian file: "SSMW", u32 version, u32 entry count, then per entry
// u32 name length, name bytes, u32 rank, u32 extents[rank], f64 values (row-major).
inline constexpr std::uint32_t kCheckpointVersion = 1;

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

void write_tensors(const NamedTensors& entries, std::ostream& os);
NamedTensors read_tensors(std::istream& is);

void save_checkpoint(const ModelWeights& w, const std::filesystem::path& path);
// Every parameter and buffer of `w` must be present with a matching shape.
void load_checkpoint(const std::filesystem::path& path, ModelWeights& w);

NamedTensors collect_tensors(const ModelWeights& w);

}  // namespace smamba::model
