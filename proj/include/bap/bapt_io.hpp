#pragma once

// "BAPT" tensor container: magic, u8 version, u8 rank, little-endian u32
// extents, little-endian float32 payload. A file may hold several tensors
// back to back.

#include <filesystem>
#include <iosfwd>
#include <vector>

#include "bap/tensor.hpp"

namespace bap {

inline constexpr unsigned char kBaptVersion = 1;

void write_bapt(std::ostream& out, const Tensor& t);
Tensor read_bapt(std::istream& in);

void save_bapt(const std::filesystem::path& path, const std::vector<Tensor>& tensors);
std::vector<Tensor> load_bapt(const std::filesystem::path& path);

}  // namespace bap
