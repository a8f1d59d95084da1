#include <cmath>
#include <filesystem>

#include "bap/encoders.hpp"
#include "bap/error.hpp"
#include "bap/optim.hpp"
#include "doctest.h"
#include "encoder_gradcheck.hpp"

using namespace bap;
using testing::random_images;

namespace {

const ImageShape kSmall{16, 16, 3};

std::vector<EncoderModel> all_models(const ImageShape& s, std::uint64_t seed) {
  std::vector<EncoderModel> out;
  out.push_back(planted_teacher({seed, 0.0, "pool4-square", s, 64}));
  out.push_back(planted_teacher({seed, 0.7, "pool4-square", s, 64}));
  out.push_back(make_student(Arch::Linear, 64, s, seed));
  out.push_back(make_student(Arch::Mlp, 64, s, seed));
  out.push_back(make_student(Arch::Cnn, 64, s, seed));
  return out;
}

}  // namespace

TEST_CASE("outputs are unit norm for every architecture") {
  Rng rng(1);
  for (EncoderModel& m : all_models(ImageShape{}, 3)) {
    auto imgs = random_images(m.image(), 5, rng);
    Tensor z = encode_batch(m, imgs);
    for (std::size_t r = 0; r < 5; ++r) {
      CHECK(std::abs(l2_norm(z.row(r)) - 1.0) < 1e-5);
    }
  }
}

TEST_CASE("planted teacher with alpha 0 is linear") {
  EncoderModel t = planted_teacher({5, 0.0, "pool4-square", ImageShape{}, 64});
  CHECK(t.frozen());
  CHECK_THROWS_AS(encode(t, Raster(64, 64, 3, 0.0f)), DegenerateInputError);
  Rng rng(2);
  for (Raster r : random_images(t.image(), 10, rng)) {
    Raster doubled = r;
    for (float& v : doubled.pixels) {
      v *= 2.0f;
    }
    CHECK(cosine_sim(encode(t, r), encode(t, doubled)) > 1.0 - 1e-6);
  }
  CHECK_THROWS_AS(encode(t, Raster(32, 32, 3, 0.5f)), DimensionError);
  CHECK_THROWS_AS(planted_teacher({5, -0.1, "pool4-square", ImageShape{}, 64}), ConfigError);
}

TEST_CASE("mlp forward matches the oracle") {
  EncoderModel m = make_student(Arch::Mlp, 64, ImageShape{}, 17);
  Rng rng(4);
  auto imgs = random_images(m.image(), 3, rng);
  Tensor z = encode_batch(m, imgs);
  auto op = testing::oracle_params(m);
  for (std::size_t b = 0; b < 3; ++b) {
    auto e = testing::oracle_embed(m, op, testing::Vec(imgs[b].pixels.begin(), imgs[b].pixels.end()));
    for (std::size_t i = 0; i < 64; ++i) {
      CHECK(std::abs(z[b * 64 + i] - e[i]) < 1e-5);
    }
  }
}

TEST_CASE("cnn and planted forward match the oracle") {
  Rng rng(6);
  for (EncoderModel m : {make_student(Arch::Cnn, 64, ImageShape{}, 8),
                         planted_teacher({9, 1.5, "pool4-square", ImageShape{}, 64})}) {
    auto imgs = random_images(m.image(), 2, rng);
    Tensor z = encode_batch(m, imgs);
    auto op = testing::oracle_params(m);
    for (std::size_t b = 0; b < 2; ++b) {
      auto e = testing::oracle_embed(m, op, testing::Vec(imgs[b].pixels.begin(), imgs[b].pixels.end()));
      for (std::size_t i = 0; i < 64; ++i) {
        CHECK(std::abs(z[b * 64 + i] - e[i]) < 1e-5);
      }
    }
  }
}

TEST_CASE("student gradients match finite differences over 20 seeds") {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(1000 + seed);
    for (Arch a : {Arch::Linear, Arch::Mlp, Arch::Cnn}) {
      EncoderModel m = make_student(a, 64, kSmall, seed);
      const auto res = testing::check_encoder_grads(m, rng, 2, 12);
      INFO(arch_tag(a) << " seed " << seed << " analytic " << res.worst_analytic << " numeric "
                       << res.worst_numeric);
      CHECK(res.max_rel_err < 1e-3);
      worst = std::max(worst, res.max_rel_err);
    }
    EncoderModel planted = clone_unfrozen(planted_teacher({seed, 0.8, "pool4-square", kSmall, 64}));
    const auto res = testing::check_encoder_grads(planted, rng, 2, 12);
    CHECK(res.max_rel_err < 1e-3);
    worst = std::max(worst, res.max_rel_err);
  }
  MESSAGE("worst encoder relative error: " << worst);
}

TEST_CASE("clone_unfrozen copy semantics") {
  EncoderModel teacher = planted_teacher({21, 0.5, "pool4-square", kSmall, 64});
  const std::uint64_t before = teacher.checksum();
  EncoderModel clone = clone_unfrozen(teacher);
  CHECK_FALSE(clone.frozen());
  CHECK(clone.arch() == Arch::Linear);
  CHECK(teacher.trainable().empty());
  Rng rng(3);
  auto imgs = random_images(kSmall, 4, rng);
  CHECK(encode_batch(clone, imgs) == encode_batch(teacher, imgs));
  EncoderModel clone2 = clone_unfrozen(clone);
  CHECK(encode_batch(clone2, imgs) == encode_batch(teacher, imgs));

  AdamW opt(clone.trainable(), 0.01);
  opt.zero_grad();
  Tensor x = stack_rasters(imgs);
  {
    Tape tape;
    Var z = clone.forward(tape, x);
    Tensor target({4, 64});
    for (std::size_t r = 0; r < 4; ++r) {
      target[r * 64] = 1.0f;
    }
    tape.backward(scale(sum(row_dot(z, target)), -1.0f));
  }
  opt.step(1e-2);
  CHECK(clone.checksum() != before);
  CHECK(teacher.checksum() == before);
  CHECK_FALSE(encode_batch(clone, imgs) == encode_batch(teacher, imgs));
}

TEST_CASE("frozen teachers are referentially stable") {
  EncoderModel t = planted_teacher({2, 2.0, "pool4-square", ImageShape{}, 64});
  Rng rng(8);
  auto imgs = random_images(t.image(), 3, rng);
  CHECK(encode_batch(t, imgs) == encode_batch(t, imgs));
  Tape tape;
  Var z = t.forward(tape, stack_rasters(imgs));
  CHECK_FALSE(tape.needs_grad(z.id()));
}

TEST_CASE("save and load round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "bap_encoder_io";
  std::filesystem::create_directories(dir);
  Rng rng(12);
  for (EncoderModel& m : all_models(kSmall, 4)) {
    const auto path = dir / (arch_tag(m.arch()) + ".bapt");
    save_encoder(m, path);
    EncoderModel back = load_encoder(path);
    CHECK(back.checksum() == m.checksum());
    CHECK(back.arch() == m.arch());
    CHECK(back.frozen() == m.frozen());
    CHECK(back.alpha() == m.alpha());
    auto imgs = random_images(kSmall, 2, rng);
    CHECK(encode_batch(back, imgs) == encode_batch(m, imgs));
  }
  std::filesystem::remove_all(dir);
}
