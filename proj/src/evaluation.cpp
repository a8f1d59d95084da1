#include "bap/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "bap/anchors.hpp"
#include "bap/error.hpp"
#include "bap/optim.hpp"
#include "bap/rng.hpp"

namespace bap {

Tensor ProbeHead::logits(const Tensor& embeddings) const {
  Tape tape(false);
  Var z = tape.constant_view(embeddings);
  Var out = add_bias(linear(z, tape.constant_view(weight.value)), tape.constant_view(bias.value));
  return out.value();
}

std::vector<std::uint32_t> ProbeHead::predict(const Tensor& embeddings) const {
  const Tensor l = logits(embeddings);
  const std::size_t c = num_classes();
  std::vector<std::uint32_t> out(l.dim(0));
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto row = l.row(i);
    out[i] = static_cast<std::uint32_t>(std::max_element(row.begin(), row.begin() + c) - row.begin());
  }
  return out;
}

ProbeHead make_head(std::size_t num_classes, std::size_t dim) {
  ProbeHead h;
  h.weight.name = "head.weight";
  h.weight.value = Tensor({num_classes, dim});
  h.bias.name = "head.bias";
  h.bias.value = Tensor({num_classes});
  return h;
}

std::vector<float> inverse_frequency_weights(std::span<const std::uint32_t> labels, std::size_t num_classes) {
  std::vector<std::size_t> counts(num_classes, 0);
  for (std::uint32_t y : labels) {
    if (y >= num_classes) {
      throw ConfigError("label " + std::to_string(y) + " out of range");
    }
    ++counts[y];
  }
  std::vector<float> w(num_classes);
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (counts[c] == 0) {
      throw ConfigError("class " + std::to_string(c) + " has no training samples");
    }
    w[c] = static_cast<float>(static_cast<double>(labels.size()) /
                              (static_cast<double>(num_classes) * static_cast<double>(counts[c])));
  }
  return w;
}

ProbeHead train_probe(const Tensor& embeddings, std::span<const std::uint32_t> labels, std::size_t num_classes,
                      const ProbeConfig& cfg) {
  const std::size_t n = embeddings.dim(0), d = embeddings.dim(1);
  if (labels.size() != n) {
    throw DimensionError("train_probe: label count differs from embedding count");
  }
  const std::vector<float> weights = inverse_frequency_weights(labels, num_classes);
  ProbeHead head = make_head(num_classes, d);
  head.config = cfg;
  AdamW opt({&head.weight, &head.bias}, cfg.weight_decay);
  Rng rng(stable_hash({cfg.seed, 0x9B0BEULL}));
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Tensor batch;
  std::vector<std::uint32_t> batch_labels;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < n; start += cfg.batch) {
      const std::size_t b = std::min(cfg.batch, n - start);
      batch = Tensor({b, d});
      batch_labels.resize(b);
      for (std::size_t i = 0; i < b; ++i) {
        const auto src = embeddings.row(order[start + i]);
        std::copy(src.begin(), src.end(), batch.row(i).begin());
        batch_labels[i] = labels[order[start + i]];
      }
      Tape tape;
      Var logits = add_bias(linear(tape.constant_view(batch), tape.parameter(head.weight)), tape.parameter(head.bias));
      Var loss = softmax_cross_entropy(logits, batch_labels, weights);
      opt.zero_grad();
      tape.backward(loss);
      opt.step(cfg.lr);
    }
  }
  return head;
}

double accuracy(std::span<const std::uint32_t> predictions, std::span<const std::uint32_t> labels) {
  if (predictions.size() != labels.size() || labels.empty()) {
    throw DimensionError("accuracy: mismatched or empty inputs");
  }
  std::size_t ok = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    ok += predictions[i] == labels[i] ? 1 : 0;
  }
  return static_cast<double>(ok) / static_cast<double>(labels.size());
}

PrototypePrediction prototype_classify(std::span<const float> embedding, std::span<const Tensor> prototypes) {
  if (prototypes.size() < 2) {
    throw ConfigError("prototype_classify needs at least two prototypes");
  }
  PrototypePrediction p;
  double best = -2.0;
  for (std::size_t c = 0; c < prototypes.size(); ++c) {
    const double s = cosine_sim(embedding, prototypes[c].data());
    if (s > best) {
      best = s;
      p.label = static_cast<std::uint32_t>(c);
      p.tie = false;
    } else if (s == best) {
      p.tie = true;
    }
  }
  return p;
}

PrototypeBatch prototype_classify(const Tensor& embeddings, std::span<const Tensor> prototypes) {
  PrototypeBatch out;
  for (std::size_t i = 0; i < embeddings.dim(0); ++i) {
    const PrototypePrediction p = prototype_classify(embeddings.row(i), prototypes);
    out.labels.push_back(p.label);
    out.ties += p.tie ? 1 : 0;
  }
  return out;
}

double GroupMetrics::cell_accuracy(std::uint32_t y, std::uint32_t g) const {
  auto it = cells.find({y, g});
  return it == cells.end() ? 0.0 : it->second.accuracy();
}

GroupMetrics group_metrics(std::span<const std::uint32_t> predictions, std::span<const std::uint32_t> y,
                           std::span<const std::uint32_t> g, std::size_t num_classes, std::size_t num_groups) {
  if (predictions.size() != y.size() || y.size() != g.size()) {
    throw DimensionError("group_metrics: prediction and label counts differ");
  }
  GroupMetrics m;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    GroupCell& c = m.cells[{y[i], g[i]}];
    ++c.count;
    const bool ok = predictions[i] == y[i];
    c.correct += ok ? 1 : 0;
    correct += ok ? 1 : 0;
  }
  m.avg = y.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(y.size());
  for (std::uint32_t cy = 0; cy < num_classes; ++cy) {
    for (std::uint32_t cg = 0; cg < num_groups; ++cg) {
      if (!m.cells.count({cy, cg})) {
        m.empty_groups.emplace_back(cy, cg);
      }
    }
  }
  m.wga = 1.0;
  bool any = false;
  for (const auto& [key, cell] : m.cells) {
    m.wga = std::min(m.wga, cell.accuracy());
    any = true;
  }
  if (!any) {
    m.wga = 0.0;
  }
  return m;
}

double bsi(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1)) {
    throw DimensionError("bsi: sets must be [n x d] with equal d");
  }
  if (a.dim(0) < 2 || b.dim(0) < 2) {
    throw ConfigError("bsi: each set needs at least two vectors");
  }
  const std::size_t d = a.dim(1);
  auto centroid = [d](const Tensor& s) {
    std::vector<double> c(d, 0.0);
    for (std::size_t i = 0; i < s.dim(0); ++i) {
      const auto r = s.row(i);
      for (std::size_t j = 0; j < d; ++j) c[j] += r[j];
    }
    for (double& v : c) v /= static_cast<double>(s.dim(0));
    return c;
  };
  auto spread = [d](const Tensor& s, const std::vector<double>& c) {
    double t = 0.0;
    for (std::size_t i = 0; i < s.dim(0); ++i) {
      const auto r = s.row(i);
      for (std::size_t j = 0; j < d; ++j) t += (r[j] - c[j]) * (r[j] - c[j]);
    }
    return t / static_cast<double>(s.dim(0));
  };
  const auto ca = centroid(a), cb = centroid(b);
  double dist = 0.0;
  for (std::size_t j = 0; j < d; ++j) dist += (ca[j] - cb[j]) * (ca[j] - cb[j]);
  const double denom = std::max(std::sqrt(spread(a, ca) + spread(b, cb)), kBsiEpsilon);
  return std::sqrt(dist) / denom;
}

BsiReport bsi_protocol(EncoderModel& encoder, std::span<const ForegroundInstance* const> foregrounds,
                       std::span<const BackgroundImage> group0, std::span<const BackgroundImage> group1,
                       std::size_t num_classes, std::uint64_t seed) {
  if (group0.empty() || group1.empty()) {
    throw ConfigError("bsi_protocol needs backgrounds in both groups");
  }
  BsiReport rep;
  for (std::uint32_t c = 0; c < num_classes; ++c) {
    std::vector<Raster> on0, on1;
    for (const ForegroundInstance* fg : foregrounds) {
      if (fg->y != c) continue;
      const std::uint64_t s = stable_hash({seed, fg->id});
      Rng rng(s);
      const double scale = rng.uniform(0.6, 0.8);
      const BackgroundImage& b0 = group0[rng.below(group0.size())];
      const BackgroundImage& b1 = group1[rng.below(group1.size())];
      on0.push_back(composite(*fg, b0, scale, Placement::Center, s).raster);
      on1.push_back(composite(*fg, b1, scale, Placement::Center, s).raster);
    }
    if (on0.empty()) {
      throw ConfigError("bsi_protocol: no instances of class " + std::to_string(c));
    }
    rep.per_class.push_back(bsi(encode_batch(encoder, on0), encode_batch(encoder, on1)));
  }
  double s = 0.0;
  for (double v : rep.per_class) s += v;
  rep.mean = s / static_cast<double>(rep.per_class.size());
  return rep;
}

double spread(const Tensor& embeddings) {
  if (embeddings.rank() != 2 || embeddings.dim(0) == 0) {
    throw DimensionError("spread needs a non-empty [n x d] set");
  }
  const std::size_t n = embeddings.dim(0), d = embeddings.dim(1);
  std::vector<double> mu(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = embeddings.row(i);
    for (std::size_t j = 0; j < d; ++j) mu[j] += r[j];
  }
  for (double& m : mu) m /= static_cast<double>(n);
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = embeddings.row(i);
    for (std::size_t j = 0; j < d; ++j) s += (r[j] - mu[j]) * (r[j] - mu[j]);
  }
  return s / static_cast<double>(n);
}

ContractionResult contraction(EncoderModel& teacher, EncoderModel& student,
                              std::span<const ForegroundInstance* const> foregrounds,
                              std::span<const BackgroundImage> backgrounds, std::size_t contexts,
                              std::uint64_t seed) {
  if (contexts < 2 || contexts > backgrounds.size()) {
    throw ConfigError("contraction needs 2 <= contexts <= " + std::to_string(backgrounds.size()));
  }
  ContractionResult r;
  std::size_t shrank = 0;
  for (const ForegroundInstance* fg : foregrounds) {
    Rng rng(stable_hash({seed, fg->id}));
    std::vector<std::size_t> idx(backgrounds.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    rng.shuffle(idx);
    std::vector<Raster> images;
    for (std::size_t k = 0; k < contexts; ++k) {
      const double scale = rng.uniform(0.6, 0.8);
      images.push_back(composite(*fg, backgrounds[idx[k]], scale, Placement::Center, rng.next_u64()).raster);
    }
    r.teacher_spread.push_back(spread(encode_batch(teacher, images)));
    r.student_spread.push_back(spread(encode_batch(student, images)));
    if (r.student_spread.back() < r.teacher_spread.back()) ++shrank;
  }
  if (!foregrounds.empty()) r.fraction = static_cast<double>(shrank) / static_cast<double>(foregrounds.size());
  return r;
}

double background_probe_accuracy(EncoderModel& encoder, std::span<const BackgroundImage> train,
                                 std::span<const BackgroundImage> test, std::size_t num_groups,
                                 const ProbeConfig& cfg) {
  auto embed = [&](std::span<const BackgroundImage> set, std::vector<std::uint32_t>& labels) {
    std::vector<const Raster*> r;
    for (const BackgroundImage& b : set) {
      r.push_back(&b.raster);
      labels.push_back(b.g);
    }
    return encode_batch(encoder, r);
  };
  std::vector<std::uint32_t> ytr, yte;
  const Tensor etr = embed(train, ytr), ete = embed(test, yte);
  const ProbeHead head = train_probe(etr, ytr, num_groups, cfg);
  return accuracy(head.predict(ete), yte);
}

RetentionResult retention_eval(EncoderModel& before, EncoderModel& after, std::span<const BackgroundImage> train,
                               std::span<const BackgroundImage> test, std::size_t num_groups,
                               const ProbeConfig& cfg) {
  if (num_groups < 2) {
    throw ConfigError("retention_eval needs at least two background groups");
  }
  return {background_probe_accuracy(before, train, test, num_groups, cfg),
          background_probe_accuracy(after, train, test, num_groups, cfg)};
}

RetentionResult retention_zero_shot(EncoderModel& before, EncoderModel& after,
                                    std::span<const BackgroundImage> reference,
                                    std::span<const BackgroundImage> test, std::size_t num_groups) {
  const std::vector<Tensor> protos = group_prototypes(before, reference, num_groups);
  std::vector<const Raster*> rasters;
  std::vector<std::uint32_t> labels;
  for (const BackgroundImage& b : test) {
    rasters.push_back(&b.raster);
    labels.push_back(b.g);
  }
  RetentionResult r;
  r.before = accuracy(prototype_classify(encode_batch(before, rasters), protos).labels, labels);
  r.after = accuracy(prototype_classify(encode_batch(after, rasters), protos).labels, labels);
  return r;
}

}  // namespace bap
