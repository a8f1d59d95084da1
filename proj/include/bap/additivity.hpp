#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "bap/encoders.hpp"
#include "bap/scene.hpp"

namespace bap {

// Unit-norm embeddings of the object image, the background image and their
// composite.
struct AdditivityTriple {
  Tensor v_a, v_b, v_ab;
  std::uint64_t fg_id = 0;
  std::uint64_t bg_id = 0;
};

// S = cos(v_ab, v_a + v_b). Raises DegenerateInputError when v_a + v_b
// vanishes.
double additivity_score(std::span<const float> v_a, std::span<const float> v_b, std::span<const float> v_ab);
double additivity_score(const AdditivityTriple& t);

// How the three rasters of a triple are built.
//   Regular: I_a is the object on the neutral canvas, I_b the raw background,
//            I_ab their composite.
//   Disjoint: I_a = c_a (m * f) on a black canvas, I_b = c_b ((1 - m) * b),
//            I_ab = I_a + I_b, with c_a, c_b <= 1 chosen so the encoder's
//            pre-normalization outputs of I_a and I_b have equal norm.
enum class AdditivityMode { Regular, Disjoint };
std::string additivity_mode_tag(AdditivityMode mode);

struct RasterTriple {
  Raster a, b, ab;
  std::uint64_t fg_id = 0;
  std::uint64_t bg_id = 0;
};

// `n` triples; each draws a foreground and a background without replacement
// while the pools last and a scale in [scale_lo, scale_hi].
std::vector<RasterTriple> make_triples(EncoderModel& encoder, std::span<const ForegroundInstance> foregrounds,
                                       std::span<const BackgroundImage> backgrounds, std::size_t n,
                                       AdditivityMode mode, double scale_lo, double scale_hi, std::uint64_t seed);

struct AdditivityReport {
  std::string encoder;
  double alpha = 0.0;
  std::vector<double> scores;
  double mean = 0.0;
  double std = 0.0;  // sample std, 0 for a single score
  std::size_t n = 0;
  std::size_t degenerate = 0;  // triples excluded because v_a + v_b vanished
};

AdditivityReport summarize_scores(std::vector<double> scores, std::size_t degenerate);
AdditivityReport batch_additivity(EncoderModel& encoder, std::span<const RasterTriple> triples);

// encoder,alpha,n,mean_S,std_S
std::string additivity_csv_header();
std::string additivity_csv_row(const AdditivityReport& r);

}  // namespace bap
