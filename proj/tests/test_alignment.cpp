#include <cmath>
#include <set>

#include "bap/alignment.hpp"
#include "bap/error.hpp"
#include "bap/rng.hpp"
#include "doctest.h"

using namespace bap;

namespace {

struct Fixture {
  World world;
  std::vector<const ForegroundInstance*> fgs;
  EncoderModel teacher;

  Fixture() {
    WorldConfig cfg;
    cfg.seed = 12;
    cfg.fg_per_class = 8;
    cfg.bg_per_group = 10;
    cfg.image = ImageShape{32, 32, 3};
    world = gen_world(cfg);
    for (const auto& f : world.foregrounds) fgs.push_back(&f);
    PlantedConfig pc;
    pc.seed = 4;
    pc.image = cfg.image;
    pc.dim = 16;
    teacher = planted_teacher(pc);
  }
};

AlignConfig small_config() {
  AlignConfig c;
  c.epochs = 4;
  c.batch = 16;
  c.M = 2;
  c.K = 3;
  c.seed = 8;
  return c;
}

}  // namespace

TEST_CASE("alignment loss values") {
  Tape tape;
  const Tensor a = Tensor::matrix(1, 2, {0.6f, 0.8f});
  CHECK(align_loss(tape.constant(a), a).value().item() == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(align_loss(tape.constant(scaled(a, -1.0f)), a).value().item() == doctest::Approx(2.0).epsilon(1e-6));
  const Tensor perp = Tensor::matrix(1, 2, {-0.8f, 0.6f});
  CHECK(align_loss(tape.constant(perp), a).value().item() == doctest::Approx(1.0).epsilon(1e-6));

  Rng rng(5);
  for (int t = 0; t < 50; ++t) {
    Tensor z({4, 8}), target({4, 8});
    for (std::size_t i = 0; i < 4; ++i) {
      for (std::size_t j = 0; j < 8; ++j) {
        z.row(i)[j] = static_cast<float>(rng.normal());
        target.row(i)[j] = static_cast<float>(rng.normal());
      }
    }
    Tape t2;
    const Var zn = l2_normalize_rows(t2.constant(z));
    Tensor tn({4, 8});
    for (std::size_t i = 0; i < 4; ++i) {
      const Tensor r = l2_normalize(Tensor::vector(std::vector<float>(target.row(i).begin(), target.row(i).end())));
      std::copy(r.data().begin(), r.data().end(), tn.row(i).begin());
    }
    const float v = align_loss(zn, tn).value().item();
    CHECK(v >= -1e-6f);
    CHECK(v <= 2.0f + 1e-6f);
  }
}

TEST_CASE("single target convergence") {
  Fixture fx;
  const std::vector<const ForegroundInstance*> one = {fx.fgs[0]};
  const std::vector<BackgroundImage> bg = {fx.world.backgrounds[0]};
  Tensor target({16});
  Rng rng(1);
  for (std::size_t i = 0; i < 16; ++i) target[i] = static_cast<float>(rng.normal());
  const std::vector<Tensor> targets = {l2_normalize(target)};
  AlignConfig c;
  c.epochs = 200;
  c.batch = 1;
  c.M = 1;
  c.K = 1;
  c.lr = 1e-2;
  c.seed = 2;
  auto [student, log] = train_to_targets(fx.teacher, one, targets, bg, c);
  CHECK(log.epoch_loss.front() > 0.2);
  CHECK(log.epoch_loss.back() < 0.01);
}

TEST_CASE("training is deterministic and leaves the teacher alone") {
  Fixture fx;
  const std::uint64_t before = fx.teacher.checksum();
  const AnchorSet anchors = extract_anchors(fx.teacher, fx.fgs, fx.world.backgrounds, 3, 1);
  const AlignConfig c = small_config();
  auto [s1, l1] = train_bap(fx.teacher, anchors, fx.fgs, fx.world.backgrounds, c);
  auto [s2, l2] = train_bap(fx.teacher, anchors, fx.fgs, fx.world.backgrounds, c);
  CHECK(l1.checksum == l2.checksum);
  CHECK(l1.epoch_loss == l2.epoch_loss);
  CHECK(fx.teacher.checksum() == before);
  CHECK(l1.epoch_loss.size() == c.epochs);
}

TEST_CASE("learning rate trace follows the schedule") {
  Fixture fx;
  const AnchorSet anchors = extract_anchors(fx.teacher, fx.fgs, fx.world.backgrounds, 3, 1);
  const AlignConfig c = small_config();
  auto [s, log] = train_bap(fx.teacher, anchors, fx.fgs, fx.world.backgrounds, c);
  const LrSchedule sched = align_schedule(c, fx.fgs.size() * c.M);
  REQUIRE(log.lr_trace.size() == static_cast<std::size_t>(sched.total_steps));
  for (std::size_t i = 0; i < log.lr_trace.size(); ++i) CHECK(log.lr_trace[i] == doctest::Approx(lr_at(sched, static_cast<std::int64_t>(i) + 1)));
}

TEST_CASE("loss decreases with training") {
  Fixture fx;
  const AnchorSet anchors = extract_anchors(fx.teacher, fx.fgs, fx.world.backgrounds, 3, 1);
  AlignConfig c = small_config();
  c.epochs = 12;
  c.lr = 3e-3;
  auto [s, log] = train_bap(fx.teacher, anchors, fx.fgs, fx.world.backgrounds, c);
  CHECK(log.epoch_loss.back() < log.epoch_loss.front());
}

TEST_CASE("epoch streams") {
  AlignConfig c = small_config();
  const auto e0 = epoch_stream(10, 20, c, 0);
  const auto e1 = epoch_stream(10, 20, c, 1);
  CHECK(e0.size() == 20);
  auto ids = [](const std::vector<StreamItem>& s) {
    std::multiset<std::uint64_t> out;
    for (const auto& it : s) out.insert(it.composite_id);
    return out;
  };
  CHECK(ids(e0) != ids(e1));
  c.regenerate = false;
  CHECK(ids(epoch_stream(10, 20, c, 0)) == ids(epoch_stream(10, 20, c, 3)));
  for (const auto& it : e0) CHECK(it.bg_index < 20);
}

TEST_CASE("control sees the same composites and fits its labels") {
  Fixture fx;
  const AnchorSet anchors = extract_anchors(fx.teacher, fx.fgs, fx.world.backgrounds, 3, 1);
  AlignConfig c = small_config();
  c.epochs = 20;
  c.probe_epochs = 5;
  c.M = 4;
  c.head_lr = 1e-2;
  auto [s, bap_log] = train_bap(fx.teacher, anchors, fx.fgs, fx.world.backgrounds, c);
  const ControlResult ctl = train_control(fx.teacher, fx.fgs, fx.world.backgrounds, 2, c);
  CHECK(ctl.log.composite_ids == bap_log.composite_ids);
  CHECK(ctl.train_accuracy > 0.99);
}

TEST_CASE("missing anchors and unmapped classes") {
  Fixture fx;
  const AnchorSet partial = extract_anchors(fx.teacher, std::span(fx.fgs).first(2), fx.world.backgrounds, 3, 1);
  const AlignConfig c = small_config();
  CHECK_THROWS_AS(train_bap(fx.teacher, partial, fx.fgs, fx.world.backgrounds, c), ManifestError);
  const auto targets = orthogonal_targets(16, 2, 3);
  const std::map<std::uint32_t, std::size_t> only_zero = {{0, 0}};
  CHECK_THROWS_AS(train_orthogonal(fx.teacher, targets, only_zero, fx.fgs, fx.world.backgrounds, c), ManifestError);
}

TEST_CASE("fine-tune trace starts at the frozen probe") {
  Fixture fx;
  const auto split = split_world(fx.world);
  DatasetSizes sizes;
  sizes.train_per_class = 40;
  sizes.test_per_cell = 10;
  const auto [train, test] = build_grouped_dataset(fx.world, split, 0.9, sizes, 3);
  const CompositeSpec spec;
  const LabeledImages tr = render_dataset(fx.world, train, spec), te = render_dataset(fx.world, test, spec);
  FinetuneConfig fc;
  fc.probe_epochs = 5;
  fc.epochs = 2;
  fc.batch = 16;
  fc.seed = 3;
  const FinetuneResult r = finetune_on_correlated(fx.teacher, tr, te, 2, 2, fc);
  REQUIRE(r.wga.size() == 3);

  ProbeConfig pc;
  pc.epochs = fc.probe_epochs;
  pc.batch = fc.batch;
  pc.lr = fc.probe_lr;
  pc.weight_decay = fc.weight_decay;
  pc.seed = fc.seed;
  EncoderModel frozen = clone_unfrozen(fx.teacher);
  const ProbeHead h = train_probe(encode_batch(frozen, tr.images), tr.y, 2, pc);
  const GroupMetrics m = group_metrics(h.predict(encode_batch(frozen, te.images)), te.y, te.g, 2, 2);
  CHECK(r.wga[0] == doctest::Approx(m.wga));
}
