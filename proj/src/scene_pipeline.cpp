#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <set>

#include "bap/error.hpp"
#include "bap/rng.hpp"
#include "bap/scene.hpp"
#include "json.hpp"

namespace bap {

// ---------------------------------------------------------------------------
// Mask pipeline

MaskGray threshold_mask(const MaskGray& m, std::uint8_t threshold) {
  MaskGray out = m;
  for (std::uint8_t& v : out.values) {
    v = v > threshold ? 255 : 0;
  }
  return out;
}

MaskGray gaussian_blur(const MaskGray& m, double sigma) {
  if (!(sigma > 0.0)) {
    return m;
  }
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-(i * i) / (2.0 * sigma * sigma));
    total += k[i + radius];
  }
  for (double& v : k) {
    v /= total;
  }
  const long h = static_cast<long>(m.height), w = static_cast<long>(m.width);
  std::vector<double> tmp(m.values.size());
  for (long y = 0; y < h; ++y) {
    for (long x = 0; x < w; ++x) {
      double s = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        const long xx = std::clamp(x + i, 0L, w - 1);
        s += k[i + radius] * m.values[y * w + xx];
      }
      tmp[y * w + x] = s;
    }
  }
  MaskGray out(m.height, m.width);
  for (long y = 0; y < h; ++y) {
    for (long x = 0; x < w; ++x) {
      double s = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        const long yy = std::clamp(y + i, 0L, h - 1);
        s += k[i + radius] * tmp[yy * w + x];
      }
      out.values[y * w + x] = static_cast<std::uint8_t>(std::clamp(std::lround(s), 0L, 255L));
    }
  }
  return out;
}

MaskGray refine_mask(const MaskGray& m) { return gaussian_blur(threshold_mask(m), 1.0); }

std::string degradation_tag(Degradation d) {
  switch (d) {
    case Degradation::Perfect: return "perfect";
    case Degradation::Noisy: return "noisy";
    case Degradation::Botched: return "botched";
    case Degradation::BBox: return "bbox";
  }
  return "?";
}

Degradation parse_degradation(const std::string& tag) {
  if (tag == "perfect") return Degradation::Perfect;
  if (tag == "noisy") return Degradation::Noisy;
  if (tag == "botched") return Degradation::Botched;
  if (tag == "bbox") return Degradation::BBox;
  throw ConfigError("unknown degradation '" + tag + "'");
}

int default_radius(Degradation d, std::size_t height) {
  const double h = static_cast<double>(height);
  switch (d) {
    case Degradation::Noisy: return static_cast<int>(std::lround(15.0 * h / 224.0));
    case Degradation::Botched: return static_cast<int>(std::lround(21.0 * h / 224.0));
    default: return 0;
  }
}

namespace {

template <bool kDilate>
MaskGray morph(const MaskGray& m, int radius) {
  if (radius < 0) {
    throw ConfigError("morphology radius must be >= 0");
  }
  const long h = static_cast<long>(m.height), w = static_cast<long>(m.width);
  std::vector<std::pair<int, int>> disk;
  for (int dy = -radius; dy <= radius; ++dy) {
    for (int dx = -radius; dx <= radius; ++dx) {
      if (dy * dy + dx * dx <= radius * radius) {
        disk.emplace_back(dy, dx);
      }
    }
  }
  MaskGray out(m.height, m.width);
  for (long y = 0; y < h; ++y) {
    for (long x = 0; x < w; ++x) {
      bool hit = !kDilate;
      for (auto [dy, dx] : disk) {
        const long yy = y + dy, xx = x + dx;
        const bool on = yy >= 0 && xx >= 0 && yy < h && xx < w && m.values[yy * w + xx] > 0;
        if (kDilate && on) {
          hit = true;
          break;
        }
        if (!kDilate && !on) {
          hit = false;
          break;
        }
      }
      out.values[y * w + x] = hit ? 255 : 0;
    }
  }
  return out;
}

}  // namespace

MaskGray dilate(const MaskGray& m, int radius) { return morph<true>(m, radius); }
MaskGray erode(const MaskGray& m, int radius) { return morph<false>(m, radius); }

MaskGray bbox_fill(const MaskGray& m) {
  const BBox b = mask_bbox(m);
  MaskGray out(m.height, m.width);
  for (std::size_t y = b.y0; y <= b.y1; ++y) {
    for (std::size_t x = b.x0; x <= b.x1; ++x) {
      out.at(y, x) = 255;
    }
  }
  return out;
}

MaskGray degrade_mask(const MaskGray& m, Degradation mode, int radius) {
  if (mode == Degradation::Perfect) {
    return m;
  }
  const MaskGray binary = threshold_mask(m);
  switch (mode) {
    case Degradation::Noisy:
      return dilate(binary, radius);
    case Degradation::Botched: {
      MaskGray out = erode(binary, radius);
      if (out.support() == 0) {
        throw DegenerateMaskError("erosion by radius " + std::to_string(radius) + " empties the mask");
      }
      return out;
    }
    case Degradation::BBox:
      return bbox_fill(binary);
    case Degradation::Perfect:
      break;
  }
  return m;
}

// ---------------------------------------------------------------------------
// Lanczos resampling

namespace {

double lanczos3(double x) {
  x = std::abs(x);
  if (x < 1e-12) {
    return 1.0;
  }
  if (x >= 3.0) {
    return 0.0;
  }
  const double px = std::numbers::pi * x;
  return 3.0 * std::sin(px) * std::sin(px / 3.0) / (px * px);
}

struct Taps {
  std::vector<std::size_t> first;  // start index of each output's taps in idx/w
  std::vector<std::size_t> idx;
  std::vector<double> w;
};

Taps make_taps(std::size_t in, std::size_t out) {
  Taps t;
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  const double fs = std::max(1.0, ratio);
  const double support = 3.0 * fs;
  for (std::size_t o = 0; o < out; ++o) {
    t.first.push_back(t.idx.size());
    const double center = (static_cast<double>(o) + 0.5) * ratio;
    const long lo = static_cast<long>(std::floor(center - support));
    const long hi = static_cast<long>(std::ceil(center + support));
    double total = 0.0;
    const std::size_t start = t.w.size();
    for (long i = lo; i <= hi; ++i) {
      const double wt = lanczos3((static_cast<double>(i) + 0.5 - center) / fs);
      if (wt == 0.0) {
        continue;
      }
      t.idx.push_back(static_cast<std::size_t>(std::clamp(i, 0L, static_cast<long>(in) - 1)));
      t.w.push_back(wt);
      total += wt;
    }
    for (std::size_t k = start; k < t.w.size(); ++k) {
      t.w[k] /= total;
    }
  }
  t.first.push_back(t.idx.size());
  return t;
}

// Separable resample of an interleaved float plane.
std::vector<double> resample(const std::vector<double>& src, std::size_t h, std::size_t w, std::size_t c,
                             std::size_t oh, std::size_t ow) {
  const Taps tx = make_taps(w, ow), ty = make_taps(h, oh);
  std::vector<double> mid(h * ow * c, 0.0);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      for (std::size_t k = tx.first[x]; k < tx.first[x + 1]; ++k) {
        const double* s = &src[(y * w + tx.idx[k]) * c];
        double* d = &mid[(y * ow + x) * c];
        for (std::size_t ch = 0; ch < c; ++ch) {
          d[ch] += tx.w[k] * s[ch];
        }
      }
    }
  }
  std::vector<double> out(oh * ow * c, 0.0);
  for (std::size_t y = 0; y < oh; ++y) {
    for (std::size_t k = ty.first[y]; k < ty.first[y + 1]; ++k) {
      const double wt = ty.w[k];
      const double* s = &mid[ty.idx[k] * ow * c];
      double* d = &out[y * ow * c];
      for (std::size_t i = 0; i < ow * c; ++i) {
        d[i] += wt * s[i];
      }
    }
  }
  return out;
}

}  // namespace

Raster lanczos_resize(const Raster& src, std::size_t out_h, std::size_t out_w) {
  if (out_h == 0 || out_w == 0) {
    throw DimensionError("lanczos_resize: empty target");
  }
  std::vector<double> in(src.pixels.begin(), src.pixels.end());
  const auto res = resample(in, src.height, src.width, src.channels, out_h, out_w);
  Raster out(out_h, out_w, src.channels);
  for (std::size_t i = 0; i < res.size(); ++i) {
    out.pixels[i] = static_cast<float>(std::clamp(res[i], 0.0, 1.0));
  }
  return out;
}

MaskGray lanczos_resize(const MaskGray& src, std::size_t out_h, std::size_t out_w) {
  if (out_h == 0 || out_w == 0) {
    throw DimensionError("lanczos_resize: empty target");
  }
  std::vector<double> in(src.values.begin(), src.values.end());
  const auto res = resample(in, src.height, src.width, 1, out_h, out_w);
  MaskGray out(out_h, out_w);
  for (std::size_t i = 0; i < res.size(); ++i) {
    out.values[i] = static_cast<std::uint8_t>(std::clamp(std::lround(res[i]), 0L, 255L));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Compositing

std::uint64_t item_seed(std::uint64_t global_seed, std::uint64_t fg_id, std::uint64_t bg_id, std::uint64_t rep) {
  return stable_hash({global_seed, fg_id, bg_id, rep});
}

namespace {

struct Sprite {
  Raster rgb;
  MaskGray alpha;  // refined
};

constexpr std::size_t kBlurPad = 3;

Sprite make_sprite(const ForegroundInstance& fg, double scale, Degradation degradation, std::size_t canvas_h) {
  if (!(scale > 0.0) || scale > 1.0) {
    throw ConfigError("composite scale must lie in (0, 1]");
  }
  const MaskGray mask = degrade_mask(fg.mask, degradation, default_radius(degradation, fg.mask.height));
  const BBox box = mask_bbox(mask);
  const std::size_t bh = box.height(), bw = box.width();
  Raster crop(bh, bw, fg.raster.channels);
  MaskGray mcrop(bh, bw);
  for (std::size_t y = 0; y < bh; ++y) {
    for (std::size_t x = 0; x < bw; ++x) {
      for (std::size_t c = 0; c < crop.channels; ++c) {
        crop.at(y, x, c) = fg.raster.at(box.y0 + y, box.x0 + x, c);
      }
      mcrop.at(y, x) = mask.at(box.y0 + y, box.x0 + x);
    }
  }
  const double longest = std::round(scale * static_cast<double>(canvas_h));
  const double f = longest / static_cast<double>(std::max(bh, bw));
  const std::size_t nh = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(bh * f)));
  const std::size_t nw = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(bw * f)));
  Raster rgb = lanczos_resize(crop, nh, nw);
  MaskGray alpha = threshold_mask(lanczos_resize(mcrop, nh, nw));
  // Pad so the blur can soften outward past the crop edge.
  Sprite s{Raster(nh + 2 * kBlurPad, nw + 2 * kBlurPad, rgb.channels), MaskGray(nh + 2 * kBlurPad, nw + 2 * kBlurPad)};
  for (std::size_t y = 0; y < s.rgb.height; ++y) {
    for (std::size_t x = 0; x < s.rgb.width; ++x) {
      const std::size_t sy = std::clamp<long>(static_cast<long>(y) - long(kBlurPad), 0L, long(nh) - 1);
      const std::size_t sx = std::clamp<long>(static_cast<long>(x) - long(kBlurPad), 0L, long(nw) - 1);
      for (std::size_t c = 0; c < rgb.channels; ++c) {
        s.rgb.at(y, x, c) = rgb.at(sy, sx, c);
      }
    }
  }
  for (std::size_t y = 0; y < nh; ++y) {
    for (std::size_t x = 0; x < nw; ++x) {
      s.alpha.at(y + kBlurPad, x + kBlurPad) = alpha.at(y, x);
    }
  }
  s.alpha = gaussian_blur(s.alpha, 1.0);
  return s;
}

}  // namespace

CompositeRecord composite(const ForegroundInstance& fg, const Raster& background, std::uint64_t bg_id,
                          double scale, Placement placement, std::uint64_t seed, Degradation degradation) {
  const Sprite s = make_sprite(fg, scale, degradation, background.height);
  const std::size_t core_h = s.rgb.height - 2 * kBlurPad, core_w = s.rgb.width - 2 * kBlurPad;
  if (core_h > background.height || core_w > background.width) {
    throw PlacementError("scaled foreground " + std::to_string(core_h) + "x" + std::to_string(core_w) +
                         " exceeds the canvas");
  }
  std::size_t oy = (background.height - core_h) / 2, ox = (background.width - core_w) / 2;
  if (placement == Placement::Random) {
    Rng rng(stable_hash({seed, 0x91ACEULL}));
    oy = rng.below(background.height - core_h + 1);
    ox = rng.below(background.width - core_w + 1);
  }
  CompositeRecord rec;
  rec.raster = background;
  rec.fg_id = fg.id;
  rec.bg_id = bg_id;
  rec.scale = scale;
  rec.offset_y = oy;
  rec.offset_x = ox;
  rec.degradation = degradation;
  rec.seed = seed;
  for (std::size_t y = 0; y < s.rgb.height; ++y) {
    const long cy = static_cast<long>(oy + y) - static_cast<long>(kBlurPad);
    if (cy < 0 || cy >= static_cast<long>(background.height)) {
      continue;
    }
    for (std::size_t x = 0; x < s.rgb.width; ++x) {
      const long cx = static_cast<long>(ox + x) - static_cast<long>(kBlurPad);
      if (cx < 0 || cx >= static_cast<long>(background.width)) {
        continue;
      }
      const std::uint8_t a8 = s.alpha.at(y, x);
      if (a8 == 0) {
        continue;
      }
      const float a = static_cast<float>(a8) / 255.0f;
      for (std::size_t c = 0; c < background.channels; ++c) {
        float& dst = rec.raster.at(static_cast<std::size_t>(cy), static_cast<std::size_t>(cx), c);
        dst = a8 == 255 ? s.rgb.at(y, x, c) : a * s.rgb.at(y, x, c) + (1.0f - a) * dst;
      }
    }
  }
  return rec;
}

CompositeRecord composite(const ForegroundInstance& fg, const BackgroundImage& bg, double scale,
                          Placement placement, std::uint64_t seed, Degradation degradation) {
  return composite(fg, bg.raster, bg.id, scale, placement, seed, degradation);
}

CompositeRecord composite_from_seed(const ForegroundInstance& fg, const BackgroundImage& bg,
                                    const CompositeSpec& spec, std::uint64_t seed) {
  Rng rng(seed);
  const double scale = spec.scale_hi > spec.scale_lo ? rng.uniform(spec.scale_lo, spec.scale_hi) : spec.scale_lo;
  return composite(fg, bg, scale, spec.placement, seed, spec.degradation);
}

Raster isolate_on_canvas(const ForegroundInstance& fg, double scale, Placement placement, std::uint64_t seed) {
  Raster canvas(fg.raster.height, fg.raster.width, fg.raster.channels, kNeutralGray);
  if (scale > 0.0) {
    return composite(fg, canvas, 0, scale, placement, seed).raster;
  }
  const MaskGray alpha = refine_mask(fg.mask);
  for (std::size_t y = 0; y < canvas.height; ++y) {
    for (std::size_t x = 0; x < canvas.width; ++x) {
      const float a = static_cast<float>(alpha.at(y, x)) / 255.0f;
      for (std::size_t c = 0; c < canvas.channels; ++c) {
        canvas.at(y, x, c) = a * fg.raster.at(y, x, c) + (1.0f - a) * kNeutralGray;
      }
    }
  }
  return canvas;
}

// ---------------------------------------------------------------------------
// Grouped datasets

std::string split_tag(Split s) { return s == Split::Train ? "train" : "test"; }

WorldSplit split_world(const World& world, double fg_train_fraction, double bg_train_fraction) {
  WorldSplit s;
  const auto& cfg = world.config;
  const std::size_t fg_train = static_cast<std::size_t>(std::lround(fg_train_fraction * cfg.fg_per_class));
  const std::size_t bg_train = static_cast<std::size_t>(std::lround(bg_train_fraction * cfg.bg_per_group));
  if (fg_train == 0 || fg_train >= cfg.fg_per_class) {
    throw ConfigError("split_world: need foregrounds on both sides of the split");
  }
  if (bg_train == 0 || bg_train >= cfg.bg_per_group) {
    throw ConfigError("split_world: insufficient backgrounds for disjoint train/test splits");
  }
  for (const ForegroundInstance& f : world.foregrounds) {
    const std::size_t index = f.id % 1000000ULL;
    (index < fg_train ? s.train_fg : s.test_fg).push_back(f.id);
  }
  for (const BackgroundImage& b : world.backgrounds) {
    const std::size_t index = b.id % 1000000ULL;
    (index < bg_train ? s.train_bg : s.test_bg).push_back(b.id);
  }
  return s;
}

namespace {

// Per-label id lists, preserving order.
template <typename F>
std::map<std::uint32_t, std::vector<std::uint64_t>> bucket(const std::vector<std::uint64_t>& ids, F label) {
  std::map<std::uint32_t, std::vector<std::uint64_t>> out;
  for (std::uint64_t id : ids) {
    out[label(id)].push_back(id);
  }
  return out;
}

}  // namespace

std::pair<GroupedDataset, GroupedDataset> build_grouped_dataset(const World& world, const WorldSplit& split,
                                                               double rho, const DatasetSizes& sizes,
                                                               std::uint64_t seed) {
  if (!(rho >= 0.5 && rho <= 1.0)) {
    throw ConfigError("rho must lie in [0.5, 1.0]");
  }
  const std::size_t classes = world.config.num_classes;
  const std::size_t groups = world.config.num_bg_groups;
  if (groups < 2) {
    throw ConfigError("grouped datasets need at least two background groups");
  }
  auto fg_label = [&](std::uint64_t id) { return world.foreground(id).y; };
  auto bg_label = [&](std::uint64_t id) { return world.background(id).g; };
  auto train_fg = bucket(split.train_fg, fg_label), test_fg = bucket(split.test_fg, fg_label);
  auto train_bg = bucket(split.train_bg, bg_label), test_bg = bucket(split.test_bg, bg_label);
  for (std::uint32_t g = 0; g < groups; ++g) {
    if (train_bg[g].empty() || test_bg[g].empty()) {
      throw ConfigError("insufficient backgrounds for disjoint splits in group " + std::to_string(g));
    }
  }

  Rng rng(stable_hash({seed, 0xDA7AULL}));
  auto make_item = [&](Split sp, std::uint32_t y, std::uint32_t g, std::uint64_t fg, std::uint64_t bg,
                       std::uint64_t row) {
    DatasetItem it;
    it.composite_id = stable_hash({seed, static_cast<std::uint64_t>(sp), y, g, row});
    it.fg_id = fg;
    it.bg_id = bg;
    it.y = y;
    it.g = g;
    it.split = sp;
    it.seed = item_seed(seed, fg, bg, row);
    return it;
  };
  // Cycles through a shuffled copy so every foreground is used evenly.
  auto cycler = [&](std::vector<std::uint64_t> ids) {
    rng.shuffle(ids);
    return ids;
  };

  GroupedDataset train, test;
  train.rho = rho;
  train.split = Split::Train;
  test.split = Split::Test;
  test.rho = 1.0 / static_cast<double>(groups);
  for (std::uint32_t y = 0; y < classes; ++y) {
    if (train_fg[y].empty() || test_fg[y].empty()) {
      throw ConfigError("class " + std::to_string(y) + " has no foregrounds on one side of the split");
    }
    const std::uint32_t home = y % groups;
    const std::size_t n = sizes.train_per_class;
    const std::size_t major = static_cast<std::size_t>(std::lround(rho * static_cast<double>(n)));
    const auto fgs = cycler(train_fg[y]);
    for (std::size_t row = 0; row < n; ++row) {
      std::uint32_t g = home;
      if (row >= major) {
        const std::size_t other = rng.below(groups - 1);
        g = static_cast<std::uint32_t>(other >= home ? other + 1 : other);
      }
      const auto& bgs = train_bg[g];
      train.items.push_back(make_item(Split::Train, y, g, fgs[row % fgs.size()], bgs[rng.below(bgs.size())], row));
    }
    const auto tfgs = cycler(test_fg[y]);
    std::size_t k = 0;
    for (std::uint32_t g = 0; g < groups; ++g) {
      const auto& bgs = test_bg[g];
      for (std::size_t row = 0; row < sizes.test_per_cell; ++row, ++k) {
        test.items.push_back(make_item(Split::Test, y, g, tfgs[k % tfgs.size()], bgs[rng.below(bgs.size())], k));
      }
    }
  }
  check_disjoint_backgrounds(train, test);
  return {std::move(train), std::move(test)};
}

void check_disjoint_backgrounds(const GroupedDataset& train, const GroupedDataset& test) {
  std::set<std::uint64_t> seen;
  for (const DatasetItem& it : train.items) {
    seen.insert(it.bg_id);
  }
  for (const DatasetItem& it : test.items) {
    if (seen.count(it.bg_id)) {
      throw ConfigError("background leakage: id " + std::to_string(it.bg_id) + " appears in train and test");
    }
  }
}

Raster render_item(const World& world, const DatasetItem& item, const CompositeSpec& spec) {
  CompositeSpec s = spec;
  s.degradation = item.degradation;
  return composite_from_seed(world.foreground(item.fg_id), world.background(item.bg_id), s, item.seed).raster;
}

std::vector<Raster> render_items(const World& world, std::span<const DatasetItem> items, const CompositeSpec& spec) {
  std::vector<Raster> out;
  out.reserve(items.size());
  for (const DatasetItem& it : items) {
    out.push_back(render_item(world, it, spec));
  }
  return out;
}

void write_manifest(const std::filesystem::path& path, const GroupedDataset& ds) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw IoError("cannot write manifest " + path.string());
  }
  for (const DatasetItem& it : ds.items) {
    nlohmann::ordered_json j;
    j["composite_id"] = it.composite_id;
    j["fg_id"] = it.fg_id;
    j["bg_id"] = it.bg_id;
    j["y"] = it.y;
    j["g"] = it.g;
    j["split"] = split_tag(it.split);
    j["degradation"] = degradation_tag(it.degradation);
    j["seed"] = it.seed;
    out << j.dump() << "\n";
  }
}

GroupedDataset read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot read manifest " + path.string());
  }
  GroupedDataset ds;
  std::string line;
  std::size_t lineno = 0;
  std::map<std::uint32_t, std::size_t> class_total, class_major;
  std::uint32_t max_g = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) {
      continue;
    }
    try {
      const auto j = nlohmann::json::parse(line);
      DatasetItem it;
      it.composite_id = j.at("composite_id").get<std::uint64_t>();
      it.fg_id = j.at("fg_id").get<std::uint64_t>();
      it.bg_id = j.at("bg_id").get<std::uint64_t>();
      it.y = j.at("y").get<std::uint32_t>();
      it.g = j.at("g").get<std::uint32_t>();
      it.split = j.at("split").get<std::string>() == "train" ? Split::Train : Split::Test;
      it.degradation = parse_degradation(j.at("degradation").get<std::string>());
      it.seed = j.at("seed").get<std::uint64_t>();
      max_g = std::max(max_g, it.g);
      ds.items.push_back(it);
    } catch (const nlohmann::json::exception& e) {
      throw ManifestError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (ds.items.empty()) {
    throw ManifestError("empty manifest " + path.string());
  }
  ds.split = ds.items.front().split;
  // The correlation rate is not stored; it is recovered as the fraction of
  // rows on their class's paired group.
  const std::uint32_t groups = max_g + 1;
  std::size_t major = 0;
  for (const DatasetItem& it : ds.items) {
    major += (it.g == it.y % groups) ? 1 : 0;
  }
  ds.rho = static_cast<double>(major) / static_cast<double>(ds.items.size());
  return ds;
}

// ---------------------------------------------------------------------------
// Flattened sampling

FlattenedSample flattened_margin_sample(std::span<const MarginItem> pool, double lo, double hi, std::size_t bins,
                                        std::size_t target, std::uint64_t seed) {
  if (!(lo < hi) || bins == 0) {
    throw ConfigError("flattened sampling needs lo < hi and at least one bin");
  }
  std::vector<std::vector<std::size_t>> buckets(bins);
  const double width = (hi - lo) / static_cast<double>(bins);
  std::size_t bounded = 0;
  for (const MarginItem& it : pool) {
    const double m = std::abs(it.margin);
    if (m < lo || m > hi) {
      continue;
    }
    const std::size_t b = std::min(bins - 1, static_cast<std::size_t>((m - lo) / width));
    buckets[b].push_back(it.index);
    ++bounded;
  }
  if (bounded == 0) {
    throw SamplingError("no items with |margin| inside [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
  }
  Rng rng(seed);
  for (auto& b : buckets) {
    rng.shuffle(b);
  }
  FlattenedSample out;
  out.per_bin.assign(bins, 0);
  std::vector<std::size_t> order(bins);
  for (std::size_t i = 0; i < bins; ++i) {
    order[i] = i;
  }
  while (out.indices.size() < target) {
    rng.shuffle(order);
    bool took = false;
    for (std::size_t b : order) {
      if (out.indices.size() >= target) {
        break;
      }
      if (out.per_bin[b] < buckets[b].size()) {
        out.indices.push_back(buckets[b][out.per_bin[b]++]);
        took = true;
      }
    }
    if (!took) {
      break;
    }
  }
  out.shortfall = target - out.indices.size();
  return out;
}

}  // namespace bap
