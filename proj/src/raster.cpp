#include "bap/raster.hpp"

#include <algorithm>

#include "bap/error.hpp"

namespace bap {

Raster::Raster(std::size_t h, std::size_t w, std::size_t c, float fill)
    : height(h), width(w), channels(c), pixels(h * w * c, fill) {
  if (h == 0 || w == 0 || c == 0) {
    throw DimensionError("raster extents must be positive");
  }
}

MaskGray::MaskGray(std::size_t h, std::size_t w, std::uint8_t fill)
    : height(h), width(w), values(h * w, fill) {
  if (h == 0 || w == 0) {
    throw DimensionError("mask extents must be positive");
  }
}

std::size_t MaskGray::support() const {
  return static_cast<std::size_t>(std::count_if(values.begin(), values.end(), [](std::uint8_t v) { return v > 0; }));
}

BBox mask_bbox(const MaskGray& m, std::uint8_t threshold) {
  BBox box{m.height, m.width, 0, 0};
  bool any = false;
  for (std::size_t y = 0; y < m.height; ++y) {
    for (std::size_t x = 0; x < m.width; ++x) {
      if (m.at(y, x) > threshold) {
        any = true;
        box.y0 = std::min(box.y0, y);
        box.x0 = std::min(box.x0, x);
        box.y1 = std::max(box.y1, y);
        box.x1 = std::max(box.x1, x);
      }
    }
  }
  if (!any) {
    throw DegenerateMaskError("mask has empty support");
  }
  return box;
}

Tensor stack_rasters(std::span<const Raster* const> images) {
  if (images.empty()) {
    throw DimensionError("stack_rasters: empty batch");
  }
  const Raster& first = *images.front();
  Tensor out({images.size(), first.height, first.width, first.channels});
  float* dst = out.data().data();
  for (const Raster* r : images) {
    if (r->height != first.height || r->width != first.width || r->channels != first.channels) {
      throw DimensionError("stack_rasters: mixed extents in batch");
    }
    dst = std::copy(r->pixels.begin(), r->pixels.end(), dst);
  }
  return out;
}

Tensor stack_rasters(const std::vector<Raster>& images) {
  std::vector<const Raster*> ptrs;
  ptrs.reserve(images.size());
  for (const Raster& r : images) {
    ptrs.push_back(&r);
  }
  return stack_rasters(ptrs);
}

}  // namespace bap
