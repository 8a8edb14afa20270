#pragma once

#include <filesystem>
#include <iosfwd>

#include "smamba/tensor.hpp"

namespace smamba::io {

// 2D tensors as comma-separated text, one row per line, no header.
void write_csv(const Tensor& t, std::ostream& os);
void write_csv(const Tensor& t, const std::filesystem::path& path);
Tensor read_csv(std::istream& is);
Tensor read_csv(const std::filesystem::path& path);

// ASCII graymap (P2, maxval 255) of |map| scaled by its max-abs value.
// A map that is identically zero is written as all zeros.
void write_pgm(const Tensor& map, std::ostream& os);
void write_pgm(const Tensor& map, const std::filesystem::path& path);

// Reads ASCII P2 (gray) or P3 (color) images into [H, W, C] with values in [0, 1].
Tensor read_pnm(std::istream& is);
Tensor read_pnm(const std::filesystem::path& path);

}  // namespace smamba::io
