#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bap/encoders.hpp"
#include "bap/raster.hpp"

namespace bap {

inline constexpr float kNeutralGray = 0.5f;
inline constexpr std::uint8_t kMaskThreshold = 100;

// ---------------------------------------------------------------------------
// World

struct ForegroundInstance {
  std::uint64_t id = 0;
  std::uint32_t y = 0;
  Raster raster;  // object over its native context texture
  MaskGray mask;  // anti-aliased coverage, 0..255
  BBox bbox;
  std::uint32_t context_group = 0;
};

struct BackgroundImage {
  std::uint64_t id = 0;
  std::uint32_t g = 0;
  Raster raster;
};

struct WorldConfig {
  std::uint64_t seed = 7;
  std::size_t num_classes = 2;
  std::size_t num_bg_groups = 2;
  std::size_t fg_per_class = 150;
  std::size_t bg_per_group = 200;
  ImageShape image;
  // Probability that a foreground's native context comes from its class's
  // correlated background group.
  double context_correlation = 0.8;
};

struct World {
  WorldConfig config;
  std::vector<ForegroundInstance> foregrounds;
  std::vector<BackgroundImage> backgrounds;

  const ForegroundInstance& foreground(std::uint64_t id) const;
  const BackgroundImage& background(std::uint64_t id) const;
};

inline constexpr std::size_t kNumShapes = 8;
inline constexpr std::size_t kNumPatterns = 3;
inline constexpr std::size_t kNumFamilies = 6;

// Ids encode (label, index) so they survive changes to the counts.
std::uint64_t foreground_id(std::uint32_t y, std::size_t index);
std::uint64_t background_id(std::uint32_t g, std::size_t index);
// Background ids reserved for the alignment pool; never used downstream.
std::uint64_t pool_background_id(std::uint32_t g, std::size_t index);

ForegroundInstance make_foreground(std::uint64_t world_seed, std::uint32_t y, std::size_t index,
                                   const ImageShape& image, std::size_t num_context_groups,
                                   double context_correlation);
BackgroundImage make_background(std::uint64_t world_seed, std::uint64_t id, std::uint32_t g,
                                const ImageShape& image);

World gen_world(const WorldConfig& cfg);

// Pool of `per_group` backgrounds for each of `groups` texture groups, with
// ids disjoint from every downstream background.
std::vector<BackgroundImage> gen_background_pool(std::uint64_t world_seed, std::size_t groups,
                                                 std::size_t per_group, const ImageShape& image,
                                                 std::size_t offset = 0);

// ---------------------------------------------------------------------------
// Mask pipeline

MaskGray threshold_mask(const MaskGray& m, std::uint8_t threshold = kMaskThreshold);
// Separable Gaussian, kernel truncated at 3 sigma and renormalized, edges
// clamped, rounded back to 8 bits.
MaskGray gaussian_blur(const MaskGray& m, double sigma = 1.0);
MaskGray refine_mask(const MaskGray& m);

enum class Degradation { Perfect, Noisy, Botched, BBox };
std::string degradation_tag(Degradation d);
Degradation parse_degradation(const std::string& tag);
// round(15 H / 224) for noisy, round(21 H / 224) for botched, 0 otherwise.
int default_radius(Degradation d, std::size_t height);

// Euclidean-disk morphology on the binary support (value > 0).
MaskGray dilate(const MaskGray& m, int radius);
MaskGray erode(const MaskGray& m, int radius);
MaskGray bbox_fill(const MaskGray& m);
// Binarizes at the refinement threshold first. Erosion that empties the mask
// raises DegenerateMaskError.
MaskGray degrade_mask(const MaskGray& m, Degradation mode, int radius);

// ---------------------------------------------------------------------------
// Resampling and compositing

// 3-lobe windowed sinc, widened when downscaling, edge clamped.
Raster lanczos_resize(const Raster& src, std::size_t out_h, std::size_t out_w);
MaskGray lanczos_resize(const MaskGray& src, std::size_t out_h, std::size_t out_w);

enum class Placement { Center, Random };

struct CompositeSpec {
  double scale_lo = 0.6;
  double scale_hi = 0.8;
  Placement placement = Placement::Center;
  Degradation degradation = Degradation::Perfect;
};

struct CompositeRecord {
  Raster raster;
  std::uint64_t fg_id = 0;
  std::uint64_t bg_id = 0;
  double scale = 0.0;
  std::size_t offset_y = 0;
  std::size_t offset_x = 0;
  Degradation degradation = Degradation::Perfect;
  std::uint64_t seed = 0;
};

// Foreground cropped to its (degraded) mask's box, resized so its longest
// side is scale * H, mask thresholded and blurred, then alpha blended.
CompositeRecord composite(const ForegroundInstance& fg, const Raster& background, std::uint64_t bg_id,
                          double scale, Placement placement, std::uint64_t seed,
                          Degradation degradation = Degradation::Perfect);
CompositeRecord composite(const ForegroundInstance& fg, const BackgroundImage& bg, double scale,
                          Placement placement, std::uint64_t seed,
                          Degradation degradation = Degradation::Perfect);

// Per-item seed: stable in (global seed, fg id, bg id, repetition).
std::uint64_t item_seed(std::uint64_t global_seed, std::uint64_t fg_id, std::uint64_t bg_id,
                        std::uint64_t rep);

// Scale drawn from the item seed, then the composite.
CompositeRecord composite_from_seed(const ForegroundInstance& fg, const BackgroundImage& bg,
                                    const CompositeSpec& spec, std::uint64_t seed);

// The object alone on the neutral gray canvas, with the same geometry as a
// composite at `scale` (scale 0 keeps the native size and position).
Raster isolate_on_canvas(const ForegroundInstance& fg, double scale, Placement placement = Placement::Center,
                         std::uint64_t seed = 0);

// ---------------------------------------------------------------------------
// Grouped datasets

enum class Split { Train, Test };
std::string split_tag(Split s);

struct DatasetItem {
  std::uint64_t composite_id = 0;
  std::uint64_t fg_id = 0;
  std::uint64_t bg_id = 0;
  std::uint32_t y = 0;
  std::uint32_t g = 0;
  Split split = Split::Train;
  Degradation degradation = Degradation::Perfect;
  std::uint64_t seed = 0;
};

struct GroupedDataset {
  std::vector<DatasetItem> items;
  double rho = 1.0;
  Split split = Split::Train;
};

struct DatasetSizes {
  std::size_t train_per_class = 800;
  std::size_t test_per_cell = 160;
};

// Foreground and background halves used downstream. Foregrounds split by
// index (first fraction train), backgrounds 80/20 by index.
struct WorldSplit {
  std::vector<std::uint64_t> train_fg, test_fg;
  std::vector<std::uint64_t> train_bg, test_bg;
};
WorldSplit split_world(const World& world, double fg_train_fraction = 0.75, double bg_train_fraction = 0.8);

// Class y is paired with background group y % groups. Train: round(rho n)
// majority rows per class; test: equal counts in every (y, g) cell.
std::pair<GroupedDataset, GroupedDataset> build_grouped_dataset(const World& world, const WorldSplit& split,
                                                               double rho, const DatasetSizes& sizes,
                                                               std::uint64_t seed);

// Hard failure when any background id occurs in both splits.
void check_disjoint_backgrounds(const GroupedDataset& train, const GroupedDataset& test);

Raster render_item(const World& world, const DatasetItem& item, const CompositeSpec& spec);
std::vector<Raster> render_items(const World& world, std::span<const DatasetItem> items,
                                 const CompositeSpec& spec);

// One JSON object per line.
void write_manifest(const std::filesystem::path& path, const GroupedDataset& ds);
GroupedDataset read_manifest(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Margin-bounded flattened sampling

struct MarginItem {
  std::size_t index = 0;  // caller's handle
  double margin = 0.0;
};

struct FlattenedSample {
  std::vector<std::size_t> indices;
  std::vector<std::size_t> per_bin;
  std::size_t shortfall = 0;
};

FlattenedSample flattened_margin_sample(std::span<const MarginItem> pool, double lo, double hi,
                                        std::size_t bins, std::size_t target, std::uint64_t seed);

}  // namespace bap
