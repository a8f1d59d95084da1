#include "bap/alignment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "bap/error.hpp"
#include "bap/optim.hpp"
#include "bap/rng.hpp"

namespace bap {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

std::size_t steps_per_epoch(std::size_t items, std::size_t batch) { return (items + batch - 1) / batch; }

CompositeSpec stream_spec(const AlignConfig& cfg) {
  CompositeSpec spec;
  spec.scale_lo = cfg.scale_lo;
  spec.scale_hi = cfg.scale_hi;
  spec.placement = cfg.placement;
  spec.degradation = cfg.degradation;
  return spec;
}

bool plateaued(const std::vector<double>& loss) {
  if (loss.size() < 4) {
    return false;
  }
  const double before = loss[loss.size() - 4], now = loss.back();
  return before > 0.0 && (before - now) / before < 1e-3;
}

// Rendered batch for a slice of the stream. Items whose degraded mask is
// empty fall back to the perfect mask.
Tensor render_batch(std::span<const ForegroundInstance* const> fgs, std::span<const BackgroundImage> pool,
                    std::span<const StreamItem> items, const AlignConfig& cfg) {
  std::vector<Raster> rasters;
  rasters.reserve(items.size());
  for (const StreamItem& it : items) {
    rasters.push_back(render_stream_item(*fgs[it.fg_index], pool[it.bg_index], it, cfg));
  }
  return stack_rasters(rasters);
}

void check_training_inputs(std::span<const ForegroundInstance* const> fgs, std::span<const BackgroundImage> pool,
                           const AlignConfig& cfg) {
  if (fgs.empty()) {
    throw ConfigError("alignment needs at least one foreground");
  }
  if (pool.empty()) {
    throw ConfigError("alignment needs a background pool");
  }
  if (cfg.M == 0 || cfg.batch == 0 || cfg.epochs == 0) {
    throw ConfigError("alignment needs M, batch and epochs >= 1");
  }
}

}  // namespace

LrSchedule align_schedule(const AlignConfig& cfg, std::size_t num_items) {
  LrSchedule s;
  s.base = cfg.lr;
  s.warmup_fraction = cfg.warmup;
  s.total_steps = static_cast<std::int64_t>(cfg.epochs * steps_per_epoch(num_items, cfg.batch));
  s.floor = cfg.lr * cfg.floor_ratio;
  return s;
}

void write_train_log_csv(const std::filesystem::path& path, const TrainLog& log) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw IoError("cannot write " + path.string());
  }
  out << "epoch,loss,lr,wall_ms\n";
  char buf[128];
  for (std::size_t e = 0; e < log.epoch_loss.size(); ++e) {
    std::snprintf(buf, sizeof buf, "%zu,%.8f,%.8e,%.1f\n", e + 1, log.epoch_loss[e], log.epoch_lr[e],
                  log.epoch_ms[e]);
    out << buf;
  }
}

std::vector<StreamItem> epoch_stream(std::size_t num_foregrounds, std::size_t pool_size, const AlignConfig& cfg,
                                     std::size_t epoch) {
  const std::uint64_t content_epoch = cfg.regenerate ? epoch : 0;
  std::vector<StreamItem> items;
  items.reserve(num_foregrounds * cfg.M);
  for (std::size_t f = 0; f < num_foregrounds; ++f) {
    for (std::size_t m = 0; m < cfg.M; ++m) {
      StreamItem it;
      it.fg_index = f;
      it.seed = stable_hash({cfg.seed, content_epoch, f, m});
      it.bg_index = Rng(it.seed).below(pool_size);
      it.composite_id = stable_hash({it.seed, f, it.bg_index});
      items.push_back(it);
    }
  }
  Rng order(stable_hash({cfg.seed, epoch, 0x0D3EULL}));
  order.shuffle(items);
  return items;
}

Raster render_stream_item(const ForegroundInstance& fg, const BackgroundImage& bg, const StreamItem& item,
                          const AlignConfig& cfg) {
  try {
    return composite_from_seed(fg, bg, stream_spec(cfg), item.seed).raster;
  } catch (const DegenerateMaskError&) {
    CompositeSpec spec = stream_spec(cfg);
    spec.degradation = Degradation::Perfect;
    return composite_from_seed(fg, bg, spec, item.seed).raster;
  }
}

Var align_loss(Var embeddings, const Tensor& targets) {
  Tape& tape = embeddings.tape();
  Var cos = row_dot(embeddings, targets);
  return sub(tape.constant(Tensor::scalar(1.0f)), mean(cos));
}

double align_loss(EncoderModel& student, const Raster& composite, const Tensor& anchor) {
  if (std::abs(l2_norm(anchor.data()) - 1.0) > 1e-4) {
    throw ContractError("align_loss: anchor must be unit norm");
  }
  Tape tape(false);
  Var z = student.forward(tape, stack_rasters(std::vector<Raster>{composite}));
  return align_loss(z, anchor.reshaped({1, anchor.numel()})).value().item();
}

std::pair<EncoderModel, TrainLog> train_to_targets(const EncoderModel& teacher,
                                                   std::span<const ForegroundInstance* const> foregrounds,
                                                   std::span<const Tensor> targets,
                                                   std::span<const BackgroundImage> pool, const AlignConfig& cfg) {
  check_training_inputs(foregrounds, pool, cfg);
  if (targets.size() != foregrounds.size()) {
    throw ManifestError("every foreground needs a target");
  }
  EncoderModel student = clone_unfrozen(teacher);
  const std::size_t d = student.dim();
  AdamW opt(student.trainable(), cfg.weight_decay);
  const std::size_t items_per_epoch = foregrounds.size() * cfg.M;
  const LrSchedule sched = align_schedule(cfg, items_per_epoch);
  TrainLog log;
  std::int64_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = Clock::now();
    const auto stream = epoch_stream(foregrounds.size(), pool.size(), cfg, epoch);
    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < stream.size(); start += cfg.batch) {
      const std::span<const StreamItem> slice(stream.data() + start, std::min(cfg.batch, stream.size() - start));
      const Tensor batch = render_batch(foregrounds, pool, slice, cfg);
      Tensor tgt({slice.size(), d});
      for (std::size_t i = 0; i < slice.size(); ++i) {
        const Tensor& a = targets[slice[i].fg_index];
        std::copy(a.data().begin(), a.data().end(), tgt.row(i).begin());
        log.composite_ids.push_back(slice[i].composite_id);
      }
      Tape tape;
      Var loss = align_loss(student.forward(tape, batch), tgt);
      loss_sum += static_cast<double>(loss.value().item()) * static_cast<double>(slice.size());
      seen += slice.size();
      opt.zero_grad();
      tape.backward(loss);
      const double lr = lr_at(sched, ++step);
      opt.step(lr);
      log.lr_trace.push_back(lr);
    }
    log.epoch_loss.push_back(loss_sum / static_cast<double>(seen));
    log.epoch_lr.push_back(log.lr_trace.back());
    log.epoch_ms.push_back(ms_since(t0));
    if (cfg.early_stop && plateaued(log.epoch_loss)) {
      log.early_stopped = true;
      break;
    }
  }
  log.checksum = student.checksum();
  return {std::move(student), std::move(log)};
}

std::pair<EncoderModel, TrainLog> train_bap(const EncoderModel& teacher, const AnchorSet& anchors,
                                            std::span<const ForegroundInstance* const> foregrounds,
                                            std::span<const BackgroundImage> pool, const AlignConfig& cfg) {
  std::vector<Tensor> targets;
  targets.reserve(foregrounds.size());
  for (const ForegroundInstance* fg : foregrounds) {
    targets.push_back(anchors.at(fg->id));
  }
  return train_to_targets(teacher, foregrounds, targets, pool, cfg);
}

std::pair<EncoderModel, TrainLog> train_orthogonal(const EncoderModel& teacher, std::span<const Tensor> targets,
                                                   const std::map<std::uint32_t, std::size_t>& class_to_target,
                                                   std::span<const ForegroundInstance* const> foregrounds,
                                                   std::span<const BackgroundImage> pool, const AlignConfig& cfg) {
  std::vector<Tensor> per_fg;
  for (const ForegroundInstance* fg : foregrounds) {
    auto it = class_to_target.find(fg->y);
    if (it == class_to_target.end() || it->second >= targets.size()) {
      throw ManifestError("class " + std::to_string(fg->y) + " has no orthogonal target");
    }
    per_fg.push_back(targets[it->second]);
  }
  return train_to_targets(teacher, foregrounds, per_fg, pool, cfg);
}

ControlResult train_control(const EncoderModel& teacher, std::span<const ForegroundInstance* const> foregrounds,
                            std::span<const BackgroundImage> pool, std::size_t num_classes, const AlignConfig& cfg) {
  check_training_inputs(foregrounds, pool, cfg);
  ControlResult res;
  res.encoder = clone_unfrozen(teacher);
  EncoderModel& model = res.encoder;
  ProbeHead head = make_head(num_classes, model.dim());
  AdamW head_opt({&head.weight, &head.bias}, cfg.weight_decay);
  AdamW body_opt(model.trainable(), cfg.weight_decay);
  const std::size_t items_per_epoch = foregrounds.size() * cfg.M;
  const std::size_t probe_epochs = std::min(cfg.probe_epochs, cfg.epochs - 1);
  AlignConfig body_cfg = cfg;
  body_cfg.epochs = cfg.epochs - probe_epochs;
  const LrSchedule body_sched = align_schedule(body_cfg, items_per_epoch);
  std::vector<std::uint32_t> class_counts(num_classes, 0);
  for (const ForegroundInstance* fg : foregrounds) {
    if (fg->y >= num_classes) {
      throw ConfigError("control: label out of range");
    }
    ++class_counts[fg->y];
  }
  std::vector<float> weights(num_classes);
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (class_counts[c] == 0) {
      throw ConfigError("control: class " + std::to_string(c) + " has no foregrounds");
    }
    weights[c] = static_cast<float>(static_cast<double>(foregrounds.size()) /
                                    (static_cast<double>(num_classes) * class_counts[c]));
  }
  std::int64_t body_step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = Clock::now();
    const bool full = epoch >= probe_epochs;
    const auto stream = epoch_stream(foregrounds.size(), pool.size(), cfg, epoch);
    double loss_sum = 0.0;
    std::size_t seen = 0, correct = 0;
    for (std::size_t start = 0; start < stream.size(); start += cfg.batch) {
      const std::span<const StreamItem> slice(stream.data() + start, std::min(cfg.batch, stream.size() - start));
      const Tensor batch = render_batch(foregrounds, pool, slice, cfg);
      std::vector<std::uint32_t> labels;
      for (const StreamItem& it : slice) {
        labels.push_back(foregrounds[it.fg_index]->y);
        res.log.composite_ids.push_back(it.composite_id);
      }
      if (std::all_of(labels.begin(), labels.end(), [&](std::uint32_t y) { return y == labels.front(); })) {
        ++res.single_class_batches;
      }
      Tape tape;
      Var z = full ? model.forward(tape, batch) : tape.constant(model.forward(tape, batch).value());
      Var logits = add_bias(linear(z, tape.parameter(head.weight)), tape.parameter(head.bias));
      Var loss = softmax_cross_entropy(logits, labels, weights);
      loss_sum += static_cast<double>(loss.value().item()) * static_cast<double>(slice.size());
      seen += slice.size();
      if (epoch + 1 == cfg.epochs) {
        const Tensor& l = logits.value();
        for (std::size_t i = 0; i < labels.size(); ++i) {
          const auto row = l.row(i);
          correct += static_cast<std::uint32_t>(std::max_element(row.begin(), row.end()) - row.begin()) == labels[i];
        }
      }
      head_opt.zero_grad();
      body_opt.zero_grad();
      tape.backward(loss);
      head_opt.step(cfg.head_lr);
      double lr = 0.0;
      if (full) {
        lr = lr_at(body_sched, ++body_step);
        body_opt.step(lr);
      }
      res.log.lr_trace.push_back(lr);
    }
    res.log.epoch_loss.push_back(loss_sum / static_cast<double>(seen));
    res.log.epoch_lr.push_back(res.log.lr_trace.back());
    res.log.epoch_ms.push_back(ms_since(t0));
    if (epoch + 1 == cfg.epochs) {
      res.train_accuracy = static_cast<double>(correct) / static_cast<double>(seen);
    }
  }
  res.log.checksum = model.checksum();
  return res;
}

LabeledImages render_dataset(const World& world, const GroupedDataset& ds, const CompositeSpec& spec) {
  LabeledImages out;
  out.images = render_items(world, ds.items, spec);
  for (const DatasetItem& it : ds.items) {
    out.y.push_back(it.y);
    out.g.push_back(it.g);
  }
  return out;
}

namespace {

GroupMetrics evaluate_head(EncoderModel& encoder, const ProbeHead& head, const LabeledImages& test,
                           std::size_t num_classes, std::size_t num_groups) {
  const Tensor emb = encode_batch(encoder, test.images);
  return group_metrics(head.predict(emb), test.y, test.g, num_classes, num_groups);
}

}  // namespace

FinetuneResult finetune_on_correlated(const EncoderModel& encoder, const LabeledImages& train,
                                      const LabeledImages& test, std::size_t num_classes, std::size_t num_groups,
                                      const FinetuneConfig& cfg) {
  if (train.images.empty() || test.images.empty()) {
    throw ConfigError("finetune needs training and test images");
  }
  FinetuneResult res;
  res.encoder = clone_unfrozen(encoder);
  EncoderModel& model = res.encoder;

  ProbeConfig pc;
  pc.epochs = cfg.probe_epochs;
  pc.lr = cfg.probe_lr;
  pc.batch = cfg.batch;
  pc.weight_decay = cfg.weight_decay;
  pc.seed = cfg.seed;
  res.head = train_probe(encode_batch(model, train.images), train.y, num_classes, pc);
  {
    const GroupMetrics m = evaluate_head(model, res.head, test, num_classes, num_groups);
    res.wga.push_back(m.wga);
    res.avg.push_back(m.avg);
  }

  const std::vector<float> weights = inverse_frequency_weights(train.y, num_classes);
  AdamW head_opt({&res.head.weight, &res.head.bias}, cfg.weight_decay);
  AdamW body_opt(model.trainable(), cfg.weight_decay);
  LrSchedule sched;
  sched.base = cfg.lr;
  sched.warmup_fraction = cfg.warmup;
  sched.total_steps = static_cast<std::int64_t>(cfg.epochs * steps_per_epoch(train.images.size(), cfg.batch));
  sched.floor = cfg.lr * cfg.floor_ratio;
  Rng rng(stable_hash({cfg.seed, 0xF17EULL}));
  std::vector<std::size_t> order(train.images.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::int64_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = Clock::now();
    rng.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      const std::size_t b = std::min(cfg.batch, order.size() - start);
      std::vector<const Raster*> rasters;
      std::vector<std::uint32_t> labels;
      for (std::size_t i = 0; i < b; ++i) {
        rasters.push_back(&train.images[order[start + i]]);
        labels.push_back(train.y[order[start + i]]);
      }
      Tape tape;
      Var z = model.forward(tape, stack_rasters(rasters));
      Var logits = add_bias(linear(z, tape.parameter(res.head.weight)), tape.parameter(res.head.bias));
      Var loss = softmax_cross_entropy(logits, labels, weights);
      loss_sum += static_cast<double>(loss.value().item()) * static_cast<double>(b);
      head_opt.zero_grad();
      body_opt.zero_grad();
      tape.backward(loss);
      const double lr = lr_at(sched, ++step);
      body_opt.step(lr);
      head_opt.step(cfg.head_lr);
      res.log.lr_trace.push_back(lr);
    }
    res.log.epoch_loss.push_back(loss_sum / static_cast<double>(order.size()));
    res.log.epoch_lr.push_back(res.log.lr_trace.back());
    res.log.epoch_ms.push_back(ms_since(t0));
    const GroupMetrics m = evaluate_head(model, res.head, test, num_classes, num_groups);
    res.wga.push_back(m.wga);
    res.avg.push_back(m.avg);
  }
  res.log.checksum = model.checksum();
  return res;
}

EncoderModel learned_teacher(std::span<const ForegroundInstance* const> foregrounds,
                             std::span<const BackgroundImage> pool, std::size_t num_classes,
                             const LearnedTeacherConfig& cfg) {
  if (foregrounds.empty() || pool.empty()) {
    throw ConfigError("learned_teacher needs foregrounds and backgrounds");
  }
  std::vector<std::vector<std::size_t>> by_class(num_classes);
  for (std::size_t i = 0; i < foregrounds.size(); ++i) {
    if (foregrounds[i]->y < num_classes) by_class[foregrounds[i]->y].push_back(i);
  }
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (by_class[c].empty()) {
      throw ConfigError("learned_teacher: class " + std::to_string(c) + " has no foregrounds");
    }
  }
  const ImageShape image{foregrounds[0]->raster.height, foregrounds[0]->raster.width, foregrounds[0]->raster.channels};
  EncoderModel model = make_student(Arch::Mlp, cfg.dim, image, cfg.seed);
  ProbeHead head = make_head(num_classes, cfg.dim);
  std::vector<Parameter*> params = model.trainable();
  params.push_back(&head.weight);
  params.push_back(&head.bias);
  AdamW opt(params, cfg.weight_decay);
  LrSchedule sched;
  sched.base = cfg.lr;
  sched.total_steps = static_cast<std::int64_t>(cfg.epochs * steps_per_epoch(cfg.items_per_epoch, cfg.batch));
  sched.floor = cfg.lr * 0.1;
  const CompositeSpec spec;
  std::int64_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t start = 0; start < cfg.items_per_epoch; start += cfg.batch) {
      const std::size_t b = std::min(cfg.batch, cfg.items_per_epoch - start);
      std::vector<Raster> rasters;
      std::vector<std::uint32_t> labels;
      for (std::size_t i = 0; i < b; ++i) {
        const std::uint64_t s = stable_hash({cfg.seed, epoch, start + i});
        Rng rng(s);
        const std::uint32_t y = static_cast<std::uint32_t>((start + i) % num_classes);
        const auto& members = by_class[y];
        const ForegroundInstance& fg = *foregrounds[members[rng.below(members.size())]];
        const BackgroundImage& bg = pool[rng.below(pool.size())];
        rasters.push_back(composite_from_seed(fg, bg, spec, s).raster);
        labels.push_back(y);
      }
      Tape tape;
      Var z = model.forward(tape, stack_rasters(rasters));
      Var logits = add_bias(linear(z, tape.parameter(head.weight)), tape.parameter(head.bias));
      Var loss = softmax_cross_entropy(logits, labels);
      opt.zero_grad();
      tape.backward(loss);
      opt.step(lr_at(sched, ++step));
    }
  }
  model.freeze();
  return model;
}

}  // namespace bap
