#include "bap/additivity.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "bap/error.hpp"
#include "bap/rng.hpp"

namespace bap {

double additivity_score(std::span<const float> v_a, std::span<const float> v_b, std::span<const float> v_ab) {
  if (v_a.size() != v_b.size() || v_a.size() != v_ab.size()) {
    throw DimensionError("additivity_score: embedding lengths differ");
  }
  std::vector<float> sum(v_a.size());
  for (std::size_t i = 0; i < sum.size(); ++i) {
    sum[i] = v_a[i] + v_b[i];
  }
  if (l2_norm(sum) < 1e-6) {
    throw DegenerateInputError("additivity_score: v_a + v_b is zero (degenerate sum)");
  }
  return cosine_sim(v_ab, sum);
}

double additivity_score(const AdditivityTriple& t) { return additivity_score(t.v_a.data(), t.v_b.data(), t.v_ab.data()); }

std::string additivity_mode_tag(AdditivityMode mode) {
  return mode == AdditivityMode::Regular ? "regular" : "disjoint";
}

namespace {

double raw_norm(EncoderModel& encoder, const Raster& r) {
  Tape tape(false);
  const Tensor batch = stack_rasters(std::vector<Raster>{r});
  return l2_norm(encoder.forward_raw(tape, batch).value().data());
}

// Sprite placed on a black canvas plus its blend alpha, recovered by
// compositing onto constant 0 and 1 canvases.
void split_layers(const ForegroundInstance& fg, double scale, Raster& fg_layer, std::vector<float>& alpha) {
  const ImageShape shape{fg.raster.height, fg.raster.width, fg.raster.channels};
  const Raster zero(shape.height, shape.width, shape.channels, 0.0f);
  const Raster one(shape.height, shape.width, shape.channels, 1.0f);
  fg_layer = composite(fg, zero, 0, scale, Placement::Center, 0).raster;
  const Raster hi = composite(fg, one, 0, scale, Placement::Center, 0).raster;
  alpha.resize(fg_layer.pixels.size());
  for (std::size_t i = 0; i < alpha.size(); ++i) {
    alpha[i] = std::clamp(1.0f - (hi.pixels[i] - fg_layer.pixels[i]), 0.0f, 1.0f);
  }
}

}  // namespace

std::vector<RasterTriple> make_triples(EncoderModel& encoder, std::span<const ForegroundInstance> foregrounds,
                                       std::span<const BackgroundImage> backgrounds, std::size_t n,
                                       AdditivityMode mode, double scale_lo, double scale_hi, std::uint64_t seed) {
  if (foregrounds.empty() || backgrounds.empty()) {
    throw ConfigError("make_triples needs foregrounds and backgrounds");
  }
  Rng rng(seed);
  std::vector<std::size_t> fg_order, bg_order;
  std::vector<RasterTriple> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (fg_order.empty()) {
      fg_order = rng.sample_without_replacement(foregrounds.size(), foregrounds.size());
    }
    if (bg_order.empty()) {
      bg_order = rng.sample_without_replacement(backgrounds.size(), backgrounds.size());
    }
    const ForegroundInstance& fg = foregrounds[fg_order.back()];
    const BackgroundImage& bg = backgrounds[bg_order.back()];
    fg_order.pop_back();
    bg_order.pop_back();
    const double scale = scale_hi > scale_lo ? rng.uniform(scale_lo, scale_hi) : scale_lo;
    RasterTriple t;
    t.fg_id = fg.id;
    t.bg_id = bg.id;
    if (mode == AdditivityMode::Regular) {
      t.a = isolate_on_canvas(fg, scale);
      t.b = bg.raster;
      t.ab = composite(fg, bg, scale, Placement::Center, 0).raster;
    } else {
      Raster layer;
      std::vector<float> alpha;
      split_layers(fg, scale, layer, alpha);
      Raster back = bg.raster;
      for (std::size_t p = 0; p < alpha.size(); ++p) {
        // Hard split so the two supports are disjoint.
        const bool object = alpha[p] >= 0.5f;
        layer.pixels[p] = object ? layer.pixels[p] / std::max(alpha[p], 1e-6f) : 0.0f;
        layer.pixels[p] = std::min(layer.pixels[p], 1.0f);
        back.pixels[p] = object ? 0.0f : back.pixels[p];
      }
      const double na = raw_norm(encoder, layer), nb = raw_norm(encoder, back);
      if (!(na > 0.0) || !(nb > 0.0)) {
        throw DegenerateInputError("make_triples: empty layer");
      }
      const double r = nb / na;
      const float ca = static_cast<float>(std::min(1.0, r)), cb = static_cast<float>(std::min(1.0, 1.0 / r));
      t.a = layer;
      t.b = back;
      t.ab = Raster(layer.height, layer.width, layer.channels);
      for (std::size_t p = 0; p < alpha.size(); ++p) {
        t.a.pixels[p] *= ca;
        t.b.pixels[p] *= cb;
        t.ab.pixels[p] = t.a.pixels[p] + t.b.pixels[p];
      }
    }
    out.push_back(std::move(t));
  }
  return out;
}

AdditivityReport summarize_scores(std::vector<double> scores, std::size_t degenerate) {
  AdditivityReport r;
  r.n = scores.size();
  r.degenerate = degenerate;
  if (!scores.empty()) {
    double s = 0.0;
    for (double v : scores) {
      s += v;
    }
    r.mean = s / static_cast<double>(scores.size());
    if (scores.size() > 1) {
      double ss = 0.0;
      for (double v : scores) {
        ss += (v - r.mean) * (v - r.mean);
      }
      r.std = std::sqrt(ss / static_cast<double>(scores.size() - 1));
    }
  }
  r.scores = std::move(scores);
  return r;
}

AdditivityReport batch_additivity(EncoderModel& encoder, std::span<const RasterTriple> triples) {
  if (triples.empty()) {
    throw ConfigError("batch_additivity needs at least one triple");
  }
  std::vector<const Raster*> as, bs, abs;
  for (const RasterTriple& t : triples) {
    as.push_back(&t.a);
    bs.push_back(&t.b);
    abs.push_back(&t.ab);
  }
  const Tensor ea = encode_batch(encoder, as), eb = encode_batch(encoder, bs), eab = encode_batch(encoder, abs);
  std::vector<double> scores;
  std::size_t degenerate = 0;
  for (std::size_t i = 0; i < triples.size(); ++i) {
    try {
      scores.push_back(additivity_score(ea.row(i), eb.row(i), eab.row(i)));
    } catch (const DegenerateInputError&) {
      ++degenerate;
    }
  }
  AdditivityReport r = summarize_scores(std::move(scores), degenerate);
  r.encoder = arch_tag(encoder.arch());
  r.alpha = encoder.alpha();
  return r;
}

std::string additivity_csv_header() { return "encoder,alpha,n,mean_S,std_S"; }

std::string additivity_csv_row(const AdditivityReport& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%s,%.4g,%zu,%.8f,%.8f", r.encoder.c_str(), r.alpha, r.n, r.mean, r.std);
  return buf;
}

}  // namespace bap
