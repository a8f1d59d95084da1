#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "bap/encoders.hpp"
#include "bap/scene.hpp"

namespace bap {

// Foreground scale used for every anchor composite.
inline constexpr double kAnchorScale = 0.8;
inline constexpr std::size_t kDefaultK = 10;

// Normalized mean of the rows of `embeddings` [K x d] (64-bit accumulation).
// A vanishing mean raises DegenerateInputError.
Tensor anchor_from_embeddings(const Tensor& embeddings);

// Indices of K backgrounds for one anchor: without replacement when the pool
// allows it, else with replacement.
std::vector<std::size_t> anchor_background_indices(std::size_t pool_size, std::size_t K, std::uint64_t seed);

// The K teacher embeddings behind an anchor [K x d].
Tensor anchor_embeddings(EncoderModel& teacher, const ForegroundInstance& fg,
                         std::span<const BackgroundImage> pool, std::size_t K, std::uint64_t seed,
                         Degradation degradation = Degradation::Perfect);

Tensor extract_anchor(EncoderModel& teacher, const ForegroundInstance& fg, std::span<const BackgroundImage> pool,
                      std::size_t K, std::uint64_t seed, Degradation degradation = Degradation::Perfect);

struct AnchorSet {
  std::map<std::uint64_t, Tensor> anchors;  // foreground id -> unit vector
  std::size_t K = kDefaultK;
  std::string teacher_tag;
  std::uint64_t pool_id = 0;
  bool with_replacement = false;
  // Foregrounds whose degraded mask came out empty; they get no anchor.
  std::vector<std::uint64_t> skipped;

  const Tensor& at(std::uint64_t fg_id) const;
  bool contains(std::uint64_t fg_id) const { return anchors.count(fg_id) != 0; }
};

AnchorSet extract_anchors(EncoderModel& teacher, std::span<const ForegroundInstance* const> foregrounds,
                          std::span<const BackgroundImage> pool, std::size_t K, std::uint64_t seed,
                          std::uint64_t pool_id = 0, Degradation degradation = Degradation::Perfect);

// Anchors go to `path` as BAPT tensors (one per foreground, id order) with a
// JSON line per anchor at path + ".jsonl".
void save_anchors(const AnchorSet& set, const std::filesystem::path& path);
AnchorSet load_anchors(const std::filesystem::path& path);

// Unnormalized mean of unit background embeddings.
struct BackgroundMean {
  std::vector<double> mu;
  std::size_t count = 0;

  double norm() const;
};

BackgroundMean mean_of_rows(const Tensor& embeddings);
BackgroundMean estimate_mu_bg(EncoderModel& teacher, std::span<const BackgroundImage> pool, std::size_t n_samples,
                              std::uint64_t seed);

// Mean over `trials` K-subsets of || (1/K) sum v_bg - mu ||^2, on precomputed
// background embeddings [n x d]. Subsets are drawn without replacement unless
// K exceeds the pool and `allow_replacement` is set (else ConfigError).
double residual_variance(const Tensor& bg_embeddings, std::size_t K, std::size_t trials, const BackgroundMean& mu,
                         std::uint64_t seed, bool allow_replacement = false);
double residual_variance(EncoderModel& teacher, std::span<const BackgroundImage> pool, std::size_t K,
                         std::size_t trials, const BackgroundMean& mu, std::uint64_t seed,
                         bool allow_replacement = false);

// Class prototypes: normalized mean teacher embedding of J isolated
// exemplars per class on the neutral canvas. Group prototypes: normalized
// mean embedding of the pure backgrounds of each group.
struct Prototypes {
  std::vector<Tensor> classes;
  std::vector<Tensor> groups;
};

std::vector<Tensor> class_prototypes(EncoderModel& teacher, std::span<const ForegroundInstance* const> foregrounds,
                                     std::size_t num_classes, std::size_t per_class);
std::vector<Tensor> group_prototypes(EncoderModel& teacher, std::span<const BackgroundImage> backgrounds,
                                     std::size_t num_groups);

inline const std::vector<std::size_t> kDefaultKGrid = {1, 2, 3, 5, 8, 10, 15, 20, 30, 40};

struct KSweepReport {
  std::vector<std::size_t> Ks;
  std::vector<double> fg_sim;
  std::vector<double> bg_sim_max;
  std::vector<double> var_eps;
  // [K index][foreground index], for paired tests.
  std::vector<std::vector<double>> fg_sim_each;
  std::vector<std::vector<double>> bg_sim_max_each;
};

// Anchors at every K reuse one background draw per foreground (nested
// prefixes), so comparisons across K are paired.
KSweepReport k_sweep(EncoderModel& teacher, std::span<const ForegroundInstance* const> foregrounds,
                     std::span<const BackgroundImage> pool, std::span<const std::size_t> K_grid,
                     const Prototypes& prototypes, const Tensor& pool_embeddings, const BackgroundMean& mu,
                     std::size_t var_trials, std::uint64_t seed);

// K,fg_sim,bg_sim_max,var_eps
void write_k_sweep_csv(const std::filesystem::path& path, const KSweepReport& r, double slope);

// Least-squares slope of log(y) against log(x).
double loglog_slope(std::span<const double> x, std::span<const double> y);

// One-sided exact binomial sign test: P(X >= successes) for X ~ Bin(n, 1/2).
double sign_test_p(std::size_t successes, std::size_t n);

// Random orthonormal set by Gram-Schmidt over Gaussian draws.
std::vector<Tensor> orthogonal_targets(std::size_t d, std::size_t num_targets, std::uint64_t seed);

}  // namespace bap
