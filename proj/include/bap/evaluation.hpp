#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bap/encoders.hpp"
#include "bap/scene.hpp"

namespace bap {

// ---------------------------------------------------------------------------
// Linear heads

struct ProbeConfig {
  std::size_t epochs = 30;
  std::size_t batch = 128;
  double lr = 5e-4;
  double weight_decay = 0.01;
  std::uint64_t seed = 0;
};

// logits = W z + b with W [C x d].
struct ProbeHead {
  Parameter weight;
  Parameter bias;
  ProbeConfig config;

  std::size_t num_classes() const { return weight.value.dim(0); }
  std::size_t dim() const { return weight.value.dim(1); }
  Tensor logits(const Tensor& embeddings) const;
  std::vector<std::uint32_t> predict(const Tensor& embeddings) const;
};

// Zero-initialized head.
ProbeHead make_head(std::size_t num_classes, std::size_t dim);

// w_c = n / (C n_c): inversely proportional to class frequency, mean 1 over
// samples. An empty class raises ConfigError.
std::vector<float> inverse_frequency_weights(std::span<const std::uint32_t> labels, std::size_t num_classes);

// Class-weighted cross-entropy probe on fixed embeddings [n x d].
ProbeHead train_probe(const Tensor& embeddings, std::span<const std::uint32_t> labels, std::size_t num_classes,
                      const ProbeConfig& cfg);

double accuracy(std::span<const std::uint32_t> predictions, std::span<const std::uint32_t> labels);

// ---------------------------------------------------------------------------
// Prototype classification

struct PrototypePrediction {
  std::uint32_t label = 0;
  bool tie = false;
};

// argmax_c cos(z, p_c); exact ties go to the lowest class index.
PrototypePrediction prototype_classify(std::span<const float> embedding, std::span<const Tensor> prototypes);

struct PrototypeBatch {
  std::vector<std::uint32_t> labels;
  std::size_t ties = 0;
};
PrototypeBatch prototype_classify(const Tensor& embeddings, std::span<const Tensor> prototypes);

// ---------------------------------------------------------------------------
// Group metrics

struct GroupCell {
  std::size_t count = 0;
  std::size_t correct = 0;
  double accuracy() const { return count ? static_cast<double>(correct) / static_cast<double>(count) : 0.0; }
};

struct GroupMetrics {
  std::map<std::pair<std::uint32_t, std::uint32_t>, GroupCell> cells;  // (y, g)
  double avg = 0.0;
  double wga = 0.0;
  // Expected (y, g) cells that had no samples; they are left out of WGA.
  std::vector<std::pair<std::uint32_t, std::uint32_t>> empty_groups;

  double cell_accuracy(std::uint32_t y, std::uint32_t g) const;
};

GroupMetrics group_metrics(std::span<const std::uint32_t> predictions, std::span<const std::uint32_t> y,
                           std::span<const std::uint32_t> g, std::size_t num_classes, std::size_t num_groups);

// ---------------------------------------------------------------------------
// Background sensitivity

inline constexpr double kBsiEpsilon = 1e-8;

// ||mu_A - mu_B|| / sqrt(var_A + var_B), var = mean squared distance to the
// centroid, denominator floored at kBsiEpsilon.
double bsi(const Tensor& a, const Tensor& b);

struct BsiReport {
  std::vector<double> per_class;
  double mean = 0.0;
  double epsilon = kBsiEpsilon;
};

// Every instance of a class is composited once on a group-0 background (set A)
// and once on a group-1 background (set B) with the same geometry.
BsiReport bsi_protocol(EncoderModel& encoder, std::span<const ForegroundInstance* const> foregrounds,
                       std::span<const BackgroundImage> group0, std::span<const BackgroundImage> group1,
                       std::size_t num_classes, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Many-to-one contraction

// Mean squared distance of the rows to their centroid.
double spread(const Tensor& embeddings);

struct ContractionResult {
  std::vector<double> teacher_spread;  // one per foreground
  std::vector<double> student_spread;
  double fraction = 0.0;  // share of foregrounds whose spread strictly shrank
};

// Each foreground is composited on `contexts` distinct backgrounds drawn from
// `backgrounds`; both encoders see the same composites.
ContractionResult contraction(EncoderModel& teacher, EncoderModel& student,
                              std::span<const ForegroundInstance* const> foregrounds,
                              std::span<const BackgroundImage> backgrounds, std::size_t contexts,
                              std::uint64_t seed);

// ---------------------------------------------------------------------------
// Background retention

struct RetentionResult {
  double before = 0.0;
  double after = 0.0;
};

// Group-label probe on pure-background embeddings, trained on `train` and
// scored on `test`, once per encoder.
double background_probe_accuracy(EncoderModel& encoder, std::span<const BackgroundImage> train,
                                 std::span<const BackgroundImage> test, std::size_t num_groups,
                                 const ProbeConfig& cfg);
RetentionResult retention_eval(EncoderModel& before, EncoderModel& after, std::span<const BackgroundImage> train,
                               std::span<const BackgroundImage> test, std::size_t num_groups,
                               const ProbeConfig& cfg);
// Zero-shot variant: group prototypes come from `before` on `reference` and
// stay fixed, the way frozen text prototypes score both encoders.
RetentionResult retention_zero_shot(EncoderModel& before, EncoderModel& after,
                                    std::span<const BackgroundImage> reference,
                                    std::span<const BackgroundImage> test, std::size_t num_groups);

}  // namespace bap
