#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "bap/error.hpp"
#include "bap/rng.hpp"
#include "bap/scene.hpp"

namespace bap {

namespace {

constexpr double kTau = 2.0 * std::numbers::pi;

struct Rgb {
  double r, g, b;
};

Rgb hsv(double h, double s, double v) {
  h -= std::floor(h);
  const double hh = h * 6.0;
  const int sector = static_cast<int>(hh) % 6;
  const double f = hh - std::floor(hh);
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (sector) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

Rgb mix(const Rgb& a, const Rgb& b, double t) {
  return {a.r + (b.r - a.r) * t, a.g + (b.g - a.g) * t, a.b + (b.b - a.b) * t};
}

float clamp01(double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); }

void put(Raster& r, std::size_t y, std::size_t x, const Rgb& c) {
  r.at(y, x, 0) = clamp01(c.r);
  r.at(y, x, 1) = clamp01(c.g);
  r.at(y, x, 2) = clamp01(c.b);
}

// Smooth lattice noise in [0, 1].
class ValueNoise {
 public:
  ValueNoise(Rng& rng, std::size_t cells) : cells_(cells), lattice_((cells + 1) * (cells + 1)) {
    for (double& v : lattice_) {
      v = rng.uniform();
    }
  }
  // u, v in [0, 1].
  double at(double u, double v) const {
    const double fx = std::clamp(u, 0.0, 1.0) * static_cast<double>(cells_);
    const double fy = std::clamp(v, 0.0, 1.0) * static_cast<double>(cells_);
    const std::size_t ix = std::min(static_cast<std::size_t>(fx), cells_ - 1);
    const std::size_t iy = std::min(static_cast<std::size_t>(fy), cells_ - 1);
    auto smooth = [](double t) { return t * t * (3 - 2 * t); };
    const double tx = smooth(fx - static_cast<double>(ix)), ty = smooth(fy - static_cast<double>(iy));
    auto l = [&](std::size_t a, std::size_t b) { return lattice_[b * (cells_ + 1) + a]; };
    const double top = l(ix, iy) + (l(ix + 1, iy) - l(ix, iy)) * tx;
    const double bot = l(ix, iy + 1) + (l(ix + 1, iy + 1) - l(ix, iy + 1)) * tx;
    return top + (bot - top) * ty;
  }

 private:
  std::size_t cells_;
  std::vector<double> lattice_;
};

struct GroupStyle {
  std::size_t family;
  double hue;
};

// The first six groups are hand placed so the two downstream groups read as
// "water" (blue waves) and "land" (green-brown mottling).
GroupStyle group_style(std::uint32_t g) {
  static constexpr std::array<GroupStyle, kNumFamilies> kFirst = {{
      {0, 0.58}, {2, 0.26}, {1, 0.83}, {3, 0.12}, {4, 0.0}, {5, 0.45},
  }};
  if (g < kFirst.size()) {
    return kFirst[g];
  }
  const double h = 0.58 + 0.6180339887 * g;
  return {g % kNumFamilies, h - std::floor(h)};
}

Raster render_texture(std::uint32_t g, Rng& rng, const ImageShape& s) {
  const GroupStyle style = group_style(g);
  const Rgb c1 = hsv(style.hue + rng.uniform(-0.04, 0.04), rng.uniform(0.45, 0.8), rng.uniform(0.55, 0.9));
  const Rgb c2 = hsv(style.hue + 0.07 + rng.uniform(-0.04, 0.04), rng.uniform(0.5, 0.9), rng.uniform(0.15, 0.45));
  Raster r(s.height, s.width, s.channels);
  const double H = static_cast<double>(s.height), W = static_cast<double>(s.width);
  const double angle = rng.uniform(0.0, std::numbers::pi);
  const double period = rng.uniform(6.0, 14.0) * H / 64.0;
  const double phase = rng.uniform(0.0, kTau);
  const double cy = rng.uniform(0.0, H), cx = rng.uniform(0.0, W);
  ValueNoise coarse(rng, 4), fine(rng, 9);
  std::vector<std::array<double, 4>> blobs;
  for (int i = 0; i < 7; ++i) {
    blobs.push_back({rng.uniform(0.0, H), rng.uniform(0.0, W), rng.uniform(5.0, 14.0) * H / 64.0,
                     rng.uniform() < 0.5 ? -1.0 : 1.0});
  }
  const double horizon = rng.uniform(0.3, 0.7) * H;
  const double jitter = 0.02;
  for (std::size_t y = 0; y < s.height; ++y) {
    for (std::size_t x = 0; x < s.width; ++x) {
      const double fy = static_cast<double>(y) + 0.5, fx = static_cast<double>(x) + 0.5;
      const double u = fx / W, v = fy / H;
      double t = 0.0;
      switch (style.family) {
        case 0: {  // oriented waves
          const double a = fx * std::cos(angle) + fy * std::sin(angle);
          t = 0.5 + 0.5 * std::sin(kTau * a / period + phase + 1.5 * coarse.at(u, v));
          break;
        }
        case 1: {  // rotated checker
          const double a = fx * std::cos(angle) + fy * std::sin(angle);
          const double b = -fx * std::sin(angle) + fy * std::cos(angle);
          const long k = static_cast<long>(std::floor(a / period)) + static_cast<long>(std::floor(b / period));
          t = (k & 1) ? 0.85 : 0.15;
          break;
        }
        case 2:  // mottled value noise
          t = 0.65 * coarse.at(u, v) + 0.35 * fine.at(u, v);
          t = std::clamp((t - 0.5) * 1.8 + 0.5, 0.0, 1.0);
          break;
        case 3: {  // concentric rings
          const double rad = std::hypot(fy - cy, fx - cx);
          t = 0.5 + 0.5 * std::sin(kTau * rad / period + phase);
          break;
        }
        case 4: {  // soft blobs
          double acc = 0.0;
          for (const auto& b : blobs) {
            const double d2 = (fy - b[0]) * (fy - b[0]) + (fx - b[1]) * (fx - b[1]);
            acc += b[3] * std::exp(-d2 / (2 * b[2] * b[2]));
          }
          t = 1.0 / (1.0 + std::exp(-3.0 * acc));
          break;
        }
        default: {  // horizon: bright gradient above, dark noisy ground below
          if (fy < horizon) {
            t = 0.1 + 0.3 * fy / horizon;
          } else {
            t = 0.75 + 0.25 * fine.at(u, v);
          }
          break;
        }
      }
      Rgb c = mix(c1, c2, t);
      const double n = rng.uniform(-jitter, jitter);
      put(r, y, x, {c.r + n, c.g + n, c.b + n});
    }
  }
  return r;
}

bool inside_shape(std::size_t shape, double u, double v) {
  const double r2 = u * u + v * v;
  switch (shape) {
    case 0:  // disk
      return r2 <= 1.0;
    case 1:  // square
      return std::max(std::abs(u), std::abs(v)) <= 0.70;
    case 2: {  // triangle inscribed in the unit circle, apex up
      const double s3 = std::sqrt(3.0);
      return v <= 0.5 && (s3 * u - v) >= -1.0 && (-s3 * u - v) >= -1.0;
    }
    case 3:  // cross
      return (std::abs(u) <= 0.3 && std::abs(v) <= 0.92) || (std::abs(v) <= 0.3 && std::abs(u) <= 0.92);
    case 4:  // ring
      return r2 <= 1.0 && r2 >= 0.3;
    case 5:  // diamond
      return std::abs(u) + std::abs(v) <= 1.0;
    case 6:  // ellipse
      return u * u + (v / 0.6) * (v / 0.6) <= 1.0;
    default: {  // hexagon, circumradius 1
      const double au = std::abs(u), av = std::abs(v);
      return av <= std::sqrt(3.0) / 2.0 && std::sqrt(3.0) * au + av <= std::sqrt(3.0);
    }
  }
}

}  // namespace

std::uint64_t foreground_id(std::uint32_t y, std::size_t index) {
  return static_cast<std::uint64_t>(y) * 1000000ULL + index;
}

std::uint64_t background_id(std::uint32_t g, std::size_t index) {
  return 500000000ULL + static_cast<std::uint64_t>(g) * 1000000ULL + index;
}

std::uint64_t pool_background_id(std::uint32_t g, std::size_t index) {
  return 900000000ULL + static_cast<std::uint64_t>(g) * 1000000ULL + index;
}

BackgroundImage make_background(std::uint64_t world_seed, std::uint64_t id, std::uint32_t g,
                                const ImageShape& image) {
  Rng rng(stable_hash({world_seed, 0xB6ULL, id, g}));
  return {id, g, render_texture(g, rng, image)};
}

ForegroundInstance make_foreground(std::uint64_t world_seed, std::uint32_t y, std::size_t index,
                                   const ImageShape& image, std::size_t num_context_groups,
                                   double context_correlation) {
  const std::uint64_t id = foreground_id(y, index);
  Rng rng(stable_hash({world_seed, 0xF6ULL, id}));
  const std::size_t shape = y % kNumShapes;
  const std::size_t pattern = (y + y / kNumShapes) % kNumPatterns;

  ForegroundInstance fg;
  fg.id = id;
  fg.y = y;

  const std::uint32_t home = static_cast<std::uint32_t>(y % num_context_groups);
  fg.context_group = home;
  if (num_context_groups > 1 && rng.uniform() >= context_correlation) {
    const std::size_t other = rng.below(num_context_groups - 1);
    fg.context_group = static_cast<std::uint32_t>(other >= home ? other + 1 : other);
  }
  Rng ctx_rng(stable_hash({world_seed, 0xC7ULL, id}));
  Raster context = render_texture(fg.context_group, ctx_rng, image);

  const double H = static_cast<double>(image.height), W = static_cast<double>(image.width);
  const double cy = H / 2 + rng.uniform(-3.0, 3.0) * H / 64.0;
  const double cx = W / 2 + rng.uniform(-3.0, 3.0) * W / 64.0;
  const double radius = rng.uniform(0.26, 0.34) * H;
  const double theta = rng.uniform(0.0, kTau);
  const double aspect = rng.uniform(0.87, 1.15);
  const double hue = 0.02 + 0.11 * static_cast<double>(y) + rng.uniform(-0.03, 0.03);
  const Rgb primary = hsv(hue, rng.uniform(0.6, 0.9), rng.uniform(0.65, 0.95));
  const Rgb secondary = hsv(hue + 0.05, rng.uniform(0.5, 0.9), rng.uniform(0.2, 0.4));
  const double phase = rng.uniform(0.0, kTau);
  const double ct = std::cos(theta), st = std::sin(theta);

  auto to_object = [&](double py, double px, double& u, double& v) {
    const double dy = py - cy, dx = px - cx;
    const double ru = ct * dx + st * dy;
    const double rv = -st * dx + ct * dy;
    u = ru / (radius * aspect);
    v = rv * aspect / radius;
  };

  fg.raster = Raster(image.height, image.width, image.channels);
  fg.mask = MaskGray(image.height, image.width);
  for (std::size_t y0 = 0; y0 < image.height; ++y0) {
    for (std::size_t x0 = 0; x0 < image.width; ++x0) {
      int hits = 0;
      for (int sy = 0; sy < 4; ++sy) {
        for (int sx = 0; sx < 4; ++sx) {
          double u, v;
          to_object(static_cast<double>(y0) + (sy + 0.5) / 4.0, static_cast<double>(x0) + (sx + 0.5) / 4.0, u, v);
          hits += inside_shape(shape, u, v) ? 1 : 0;
        }
      }
      const double cover = hits / 16.0;
      fg.mask.at(y0, x0) = static_cast<std::uint8_t>(std::lround(cover * 255.0));
      double u, v;
      to_object(static_cast<double>(y0) + 0.5, static_cast<double>(x0) + 0.5, u, v);
      Rgb obj = primary;
      switch (pattern) {
        case 0:
          obj = mix(primary, secondary, std::clamp(0.25 + 0.25 * (u + v), 0.0, 0.6));
          break;
        case 1:
          obj = mix(primary, secondary, 0.5 + 0.5 * std::sin(kTau * u / 0.45 + phase));
          break;
        default: {
          const double gu = u / 0.5 - std::round(u / 0.5), gv = v / 0.5 - std::round(v / 0.5);
          obj = (gu * gu + gv * gv) * 0.25 < 0.16 * 0.16 ? secondary : primary;
          break;
        }
      }
      for (std::size_t c = 0; c < image.channels; ++c) {
        const double o = c == 0 ? obj.r : (c == 1 ? obj.g : obj.b);
        fg.raster.at(y0, x0, c) = clamp01(cover * o + (1.0 - cover) * context.at(y0, x0, c));
      }
    }
  }
  fg.bbox = mask_bbox(fg.mask);
  return fg;
}

World gen_world(const WorldConfig& cfg) {
  if (cfg.num_classes == 0 || cfg.num_bg_groups == 0 || cfg.fg_per_class == 0 || cfg.bg_per_group == 0) {
    throw ConfigError("gen_world: counts must be at least 1");
  }
  if (cfg.num_classes > kNumShapes * kNumPatterns) {
    throw ConfigError("gen_world: " + std::to_string(cfg.num_classes) + " classes exceed the " +
                      std::to_string(kNumShapes * kNumPatterns) + " shape-pattern combinations");
  }
  if (cfg.image.height < 8 || cfg.image.width < 8) {
    throw ConfigError("gen_world: rasters must be at least 8x8");
  }
  World w;
  w.config = cfg;
  for (std::uint32_t y = 0; y < cfg.num_classes; ++y) {
    for (std::size_t i = 0; i < cfg.fg_per_class; ++i) {
      w.foregrounds.push_back(make_foreground(cfg.seed, y, i, cfg.image, cfg.num_bg_groups, cfg.context_correlation));
    }
  }
  for (std::uint32_t g = 0; g < cfg.num_bg_groups; ++g) {
    for (std::size_t i = 0; i < cfg.bg_per_group; ++i) {
      w.backgrounds.push_back(make_background(cfg.seed, background_id(g, i), g, cfg.image));
    }
  }
  return w;
}

std::vector<BackgroundImage> gen_background_pool(std::uint64_t world_seed, std::size_t groups,
                                                 std::size_t per_group, const ImageShape& image,
                                                 std::size_t offset) {
  std::vector<BackgroundImage> out;
  out.reserve(groups * per_group);
  for (std::size_t i = 0; i < per_group; ++i) {
    for (std::uint32_t g = 0; g < groups; ++g) {
      out.push_back(make_background(world_seed, pool_background_id(g, offset + i), g, image));
    }
  }
  return out;
}

const ForegroundInstance& World::foreground(std::uint64_t id) const {
  const std::uint64_t y = id / 1000000ULL, i = id % 1000000ULL;
  if (y < config.num_classes && i < config.fg_per_class) {
    const std::size_t slot = y * config.fg_per_class + i;
    if (slot < foregrounds.size() && foregrounds[slot].id == id) {
      return foregrounds[slot];
    }
  }
  for (const ForegroundInstance& f : foregrounds) {
    if (f.id == id) {
      return f;
    }
  }
  throw ManifestError("unknown foreground id " + std::to_string(id));
}

const BackgroundImage& World::background(std::uint64_t id) const {
  if (id >= background_id(0, 0)) {
    const std::uint64_t g = (id - background_id(0, 0)) / 1000000ULL, i = id % 1000000ULL;
    const std::size_t slot = g * config.bg_per_group + i;
    if (g < config.num_bg_groups && i < config.bg_per_group && slot < backgrounds.size() &&
        backgrounds[slot].id == id) {
      return backgrounds[slot];
    }
  }
  for (const BackgroundImage& b : backgrounds) {
    if (b.id == id) {
      return b;
    }
  }
  throw ManifestError("unknown background id " + std::to_string(id));
}

}  // namespace bap
