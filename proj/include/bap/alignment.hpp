#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bap/anchors.hpp"
#include "bap/encoders.hpp"
#include "bap/evaluation.hpp"
#include "bap/optim.hpp"
#include "bap/scene.hpp"

namespace bap {

struct AlignConfig {
  std::size_t epochs = 30;
  std::size_t batch = 128;
  double lr = 1e-3;
  double weight_decay = 0.01;
  double warmup = 0.10;
  double floor_ratio = 0.10;  // cosine floor as a fraction of lr
  std::size_t M = 5;          // contexts per foreground per epoch
  std::size_t N = 200;        // distinct foregrounds
  std::size_t K = kDefaultK;
  bool regenerate = true;     // fresh backgrounds every epoch
  bool early_stop = false;
  std::uint64_t seed = 0;
  Degradation degradation = Degradation::Perfect;
  double scale_lo = 0.6;
  double scale_hi = 0.8;
  Placement placement = Placement::Center;  // of the streamed composites
  // Control only: epochs at the start that train the head alone.
  std::size_t probe_epochs = 10;
  double head_lr = 5e-4;
};

LrSchedule align_schedule(const AlignConfig& cfg, std::size_t num_items);

struct TrainLog {
  std::vector<double> epoch_loss;
  std::vector<double> epoch_lr;  // rate of the last step in the epoch
  std::vector<double> epoch_ms;
  std::vector<double> lr_trace;  // one entry per optimizer step
  std::vector<std::uint64_t> composite_ids;
  std::uint64_t checksum = 0;
  bool early_stopped = false;
};

// epoch,loss,lr,wall_ms
void write_train_log_csv(const std::filesystem::path& path, const TrainLog& log);

// One composite of the alignment stream.
struct StreamItem {
  std::size_t fg_index = 0;
  std::size_t bg_index = 0;
  std::uint64_t seed = 0;
  std::uint64_t composite_id = 0;
};

// N * M items in training order: every foreground M times, each on a random
// pool background. Seeds depend on (seed, epoch, slot) when regenerating and
// on (seed, slot) otherwise; the order is reshuffled every epoch.
std::vector<StreamItem> epoch_stream(std::size_t num_foregrounds, std::size_t pool_size, const AlignConfig& cfg,
                                     std::size_t epoch);
Raster render_stream_item(const ForegroundInstance& fg, const BackgroundImage& bg, const StreamItem& item,
                          const AlignConfig& cfg);

// Batch mean of 1 - <z_i, a_i> for unit rows z (on the tape) and unit targets.
Var align_loss(Var embeddings, const Tensor& targets);
// L = 1 - cos(f(x), a) for a single composite.
double align_loss(EncoderModel& student, const Raster& composite, const Tensor& anchor);

// Alignment towards one target per foreground.
std::pair<EncoderModel, TrainLog> train_to_targets(const EncoderModel& teacher,
                                                   std::span<const ForegroundInstance* const> foregrounds,
                                                   std::span<const Tensor> targets,
                                                   std::span<const BackgroundImage> pool, const AlignConfig& cfg);

// Student = clone_unfrozen(teacher) aligned to the anchors.
std::pair<EncoderModel, TrainLog> train_bap(const EncoderModel& teacher, const AnchorSet& anchors,
                                            std::span<const ForegroundInstance* const> foregrounds,
                                            std::span<const BackgroundImage> pool, const AlignConfig& cfg);

// Same stream and step budget, softmax cross-entropy through a linear head.
// The first probe_epochs epochs train the head alone. The head is discarded.
struct ControlResult {
  EncoderModel encoder;
  TrainLog log;
  double train_accuracy = 0.0;  // head accuracy over the last epoch's stream
  std::size_t single_class_batches = 0;
};
ControlResult train_control(const EncoderModel& teacher, std::span<const ForegroundInstance* const> foregrounds,
                            std::span<const BackgroundImage> pool, std::size_t num_classes, const AlignConfig& cfg);

// Each class aligned to its own static target vector.
std::pair<EncoderModel, TrainLog> train_orthogonal(const EncoderModel& teacher, std::span<const Tensor> targets,
                                                   const std::map<std::uint32_t, std::size_t>& class_to_target,
                                                   std::span<const ForegroundInstance* const> foregrounds,
                                                   std::span<const BackgroundImage> pool, const AlignConfig& cfg);

// ---------------------------------------------------------------------------
// Supervised fine-tuning on a downstream grouped dataset

struct FinetuneConfig {
  std::size_t probe_epochs = 5;
  double probe_lr = 1e-3;
  std::size_t epochs = 30;
  double lr = 1e-3;       // backbone
  double head_lr = 5e-4;
  double weight_decay = 0.01;
  double warmup = 0.10;
  double floor_ratio = 0.01;
  std::size_t batch = 128;
  std::uint64_t seed = 0;
};

// Rendered rasters with their labels.
struct LabeledImages {
  std::vector<Raster> images;
  std::vector<std::uint32_t> y;
  std::vector<std::uint32_t> g;
};
LabeledImages render_dataset(const World& world, const GroupedDataset& ds, const CompositeSpec& spec);

struct FinetuneResult {
  EncoderModel encoder;
  ProbeHead head;
  std::vector<double> wga;  // index 0: probe on the untouched encoder
  std::vector<double> avg;
  TrainLog log;
};

// Linear probe on the frozen encoder, then full-parameter class-weighted
// cross-entropy fine-tuning. Group metrics on `test` after the probe and
// after every fine-tuning epoch.
FinetuneResult finetune_on_correlated(const EncoderModel& encoder, const LabeledImages& train,
                                      const LabeledImages& test, std::size_t num_classes, std::size_t num_groups,
                                      const FinetuneConfig& cfg);

// ---------------------------------------------------------------------------
// Learned teacher

struct LearnedTeacherConfig {
  std::size_t dim = 64;
  std::size_t epochs = 10;
  std::size_t items_per_epoch = 1024;
  std::size_t batch = 128;
  double lr = 1e-3;
  double weight_decay = 0.01;
  std::uint64_t seed = 0;
};

// MLP trained with cross-entropy on class-balanced composites over random
// pool backgrounds, then frozen.
EncoderModel learned_teacher(std::span<const ForegroundInstance* const> foregrounds,
                             std::span<const BackgroundImage> pool, std::size_t num_classes,
                             const LearnedTeacherConfig& cfg);

}  // namespace bap
