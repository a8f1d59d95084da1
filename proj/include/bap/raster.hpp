#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "bap/tensor.hpp"

namespace bap {

// H x W x C float image, interleaved (HWC), values in [0, 1].
struct Raster {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 3;
  std::vector<float> pixels;

  Raster() = default;
  Raster(std::size_t h, std::size_t w, std::size_t c = 3, float fill = 0.0f);

  float& at(std::size_t y, std::size_t x, std::size_t c) { return pixels[(y * width + x) * channels + c]; }
  float at(std::size_t y, std::size_t x, std::size_t c) const {
    return pixels[(y * width + x) * channels + c];
  }
  std::size_t size() const { return pixels.size(); }

  friend bool operator==(const Raster&, const Raster&) = default;
};

// Single-channel 8-bit mask.
struct MaskGray {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> values;

  MaskGray() = default;
  MaskGray(std::size_t h, std::size_t w, std::uint8_t fill = 0);

  std::uint8_t& at(std::size_t y, std::size_t x) { return values[y * width + x]; }
  std::uint8_t at(std::size_t y, std::size_t x) const { return values[y * width + x]; }
  std::size_t support() const;

  friend bool operator==(const MaskGray&, const MaskGray&) = default;
};

// Inclusive pixel rectangle.
struct BBox {
  std::size_t y0 = 0, x0 = 0, y1 = 0, x1 = 0;

  std::size_t height() const { return y1 - y0 + 1; }
  std::size_t width() const { return x1 - x0 + 1; }
  friend bool operator==(const BBox&, const BBox&) = default;
};

// Tight box around pixels with value > threshold; DegenerateMaskError if none.
BBox mask_bbox(const MaskGray& m, std::uint8_t threshold = 0);

// Packs equally sized rasters into a [B x H x W x C] tensor.
Tensor stack_rasters(std::span<const Raster* const> images);
Tensor stack_rasters(const std::vector<Raster>& images);

}  // namespace bap
