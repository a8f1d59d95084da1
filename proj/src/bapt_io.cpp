#include "bap/bapt_io.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>

#include "bap/error.hpp"

namespace bap {

namespace {

constexpr std::array<char, 4> kMagic = {'B', 'A', 'P', 'T'};

void put_u32(std::ostream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                     static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  out.write(b, 4);
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) {
    throw IoError("BAPT: truncated header");
  }
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void write_bapt(std::ostream& out, const Tensor& t) {
  if (t.rank() > 255) {
    throw DimensionError("BAPT: rank above 255");
  }
  out.write(kMagic.data(), 4);
  out.put(static_cast<char>(kBaptVersion));
  out.put(static_cast<char>(t.rank()));
  for (std::size_t e : t.shape()) {
    if (e > std::numeric_limits<std::uint32_t>::max()) {
      throw DimensionError("BAPT: extent does not fit in u32");
    }
    put_u32(out, static_cast<std::uint32_t>(e));
  }
  for (float v : t.data()) {
    put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  if (!out) {
    throw IoError("BAPT: write failed");
  }
}

Tensor read_bapt(std::istream& in) {
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), 4) || magic != kMagic) {
    throw IoError("BAPT: bad magic");
  }
  const int version = in.get();
  const int rank = in.get();
  if (version != kBaptVersion) {
    throw IoError("BAPT: unsupported version " + std::to_string(version));
  }
  if (rank <= 0) {
    throw IoError("BAPT: bad rank");
  }
  Shape shape(static_cast<std::size_t>(rank));
  for (auto& e : shape) {
    e = get_u32(in);
    if (e == 0) {
      throw IoError("BAPT: zero extent");
    }
  }
  std::vector<float> data(numel(shape));
  for (float& v : data) {
    v = std::bit_cast<float>(get_u32(in));
  }
  return Tensor(std::move(shape), std::move(data));
}

void save_bapt(const std::filesystem::path& path, const std::vector<Tensor>& tensors) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw IoError("cannot open " + path.string() + " for writing");
  }
  for (const Tensor& t : tensors) {
    write_bapt(out, t);
  }
}

std::vector<Tensor> load_bapt(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open " + path.string());
  }
  std::vector<Tensor> out;
  while (in.peek() != std::char_traits<char>::eof()) {
    out.push_back(read_bapt(in));
  }
  return out;
}

}  // namespace bap
