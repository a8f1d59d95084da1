#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include "bap/anchors.hpp"
#include "bap/error.hpp"
#include "bap/rng.hpp"
#include "doctest.h"

using namespace bap;

namespace {

World tiny_world() {
  WorldConfig cfg;
  cfg.seed = 31;
  cfg.fg_per_class = 6;
  cfg.bg_per_group = 12;
  cfg.image = ImageShape{32, 32, 3};
  return gen_world(cfg);
}

EncoderModel tiny_teacher() {
  PlantedConfig pc;
  pc.seed = 9;
  pc.image = ImageShape{32, 32, 3};
  pc.dim = 32;
  return planted_teacher(pc);
}

Tensor random_unit_rows(std::size_t n, std::size_t d, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t({n, d});
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < d; ++j) {
      t.row(i)[j] = static_cast<float>(rng.normal());
      s += t.row(i)[j] * t.row(i)[j];
    }
    for (std::size_t j = 0; j < d; ++j) t.row(i)[j] /= static_cast<float>(std::sqrt(s));
  }
  return t;
}

}  // namespace

TEST_CASE("anchor from two orthogonal embeddings") {
  const Tensor e = Tensor::matrix(2, 2, {1, 0, 0, 1});
  const Tensor a = anchor_from_embeddings(e);
  CHECK(a[0] == doctest::Approx(0.70710678).epsilon(1e-6));
  CHECK(a[1] == doctest::Approx(0.70710678).epsilon(1e-6));
  CHECK_THROWS_AS(anchor_from_embeddings(Tensor::matrix(2, 2, {1, 0, -1, 0})), DegenerateInputError);
}

TEST_CASE("K=1 anchor is the single composite embedding") {
  const World w = tiny_world();
  EncoderModel t = tiny_teacher();
  const auto& fg = w.foregrounds[0];
  const Tensor a = extract_anchor(t, fg, w.backgrounds, 1, 4);
  const auto idx = anchor_background_indices(w.backgrounds.size(), 1, 4);
  const Tensor e = encode(t, composite(fg, w.backgrounds[idx[0]], kAnchorScale, Placement::Center, 0).raster);
  for (std::size_t i = 0; i < e.numel(); ++i) CHECK(a[i] == e[i]);
  CHECK(l2_norm(a.data()) == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("anchor ignores background order") {
  const Tensor e = random_unit_rows(10, 16, 3);
  Tensor rev({10, 16});
  for (std::size_t i = 0; i < 10; ++i) std::copy(e.row(9 - i).begin(), e.row(9 - i).end(), rev.row(i).begin());
  const Tensor a = anchor_from_embeddings(e), b = anchor_from_embeddings(rev);
  for (std::size_t i = 0; i < 16; ++i) CHECK(std::abs(a[i] - b[i]) < 1e-6);
}

TEST_CASE("background sampling with and without replacement") {
  const auto idx = anchor_background_indices(20, 10, 1);
  CHECK(std::set<std::size_t>(idx.begin(), idx.end()).size() == 10);
  CHECK(anchor_background_indices(3, 10, 1).size() == 10);
  const World w = tiny_world();
  EncoderModel t = tiny_teacher();
  std::vector<const ForegroundInstance*> fgs = {&w.foregrounds[0], &w.foregrounds[7]};
  const AnchorSet small = extract_anchors(t, fgs, std::span(w.backgrounds).first(3), 5, 2);
  CHECK(small.with_replacement);
  CHECK(small.anchors.size() == 2);
  CHECK_THROWS_AS(small.at(12345), ManifestError);
}

TEST_CASE("mu_bg basics") {
  const BackgroundMean one = mean_of_rows(Tensor::matrix(1, 2, {0.6f, 0.8f}));
  CHECK(one.norm() == doctest::Approx(1.0));
  const BackgroundMean anti = mean_of_rows(Tensor::matrix(2, 2, {1, 0, -1, 0}));
  CHECK(anti.norm() == 0.0);
  const World w = tiny_world();
  EncoderModel t = tiny_teacher();
  const BackgroundMean m = estimate_mu_bg(t, w.backgrounds, 1, 3);
  CHECK(m.count == 1);
  CHECK(m.norm() == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("residual variance edge cases") {
  Tensor same({8, 4});
  for (std::size_t i = 0; i < 8; ++i) same.row(i)[1] = 1.0f;
  const BackgroundMean ms = mean_of_rows(same);
  for (std::size_t K : {1, 2, 4}) CHECK(residual_variance(same, K, 10, ms, 1) == 0.0);

  // Every point sits at squared distance 1 from the zero mean.
  const Tensor cross = Tensor::matrix(4, 2, {1, 0, -1, 0, 0, 1, 0, -1});
  const BackgroundMean mc = mean_of_rows(cross);
  CHECK(residual_variance(cross, 1, 50, mc, 2) == doctest::Approx(1.0));
  CHECK_THROWS_AS(residual_variance(cross, 5, 10, mc, 2), ConfigError);
  CHECK_NOTHROW(residual_variance(cross, 5, 10, mc, 2, true));
  CHECK_THROWS_AS(residual_variance(cross, 1, 1, mc, 2), ConfigError);
}

TEST_CASE("residual variance decays as 1/K") {
  const Tensor e = random_unit_rows(4000, 16, 12);
  const BackgroundMean mu = mean_of_rows(e);
  std::vector<double> ks, vs;
  for (std::size_t K : {1, 2, 4, 8, 16, 32}) {
    ks.push_back(static_cast<double>(K));
    vs.push_back(residual_variance(e, K, 600, mu, 5));
  }
  for (std::size_t i = 1; i < vs.size(); ++i) CHECK(vs[i] <= vs[i - 1]);
  CHECK(loglog_slope(ks, vs) == doctest::Approx(-1.0).epsilon(0.1));
}

TEST_CASE("loglog slope and sign test") {
  const std::vector<double> x = {1, 2, 4, 8}, y = {1, 0.5, 0.25, 0.125};
  CHECK(loglog_slope(x, y) == doctest::Approx(-1.0));
  CHECK(sign_test_p(10, 10) == doctest::Approx(1.0 / 1024.0));
  CHECK(sign_test_p(0, 10) == doctest::Approx(1.0));
  CHECK(sign_test_p(5, 10) == doctest::Approx(638.0 / 1024.0));
}

TEST_CASE("orthogonal targets") {
  const auto two = orthogonal_targets(64, 2, 4);
  CHECK(l2_norm(two[0].data()) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(l2_norm(two[1].data()) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(std::abs(dot(two[0].data(), two[1].data())) < 1e-6);
  const auto full = orthogonal_targets(12, 12, 5);
  for (std::size_t i = 0; i < 12; ++i)
    for (std::size_t j = 0; j < 12; ++j)
      CHECK(std::abs(dot(full[i].data(), full[j].data()) - (i == j ? 1.0 : 0.0)) < 1e-6);
  const auto again = orthogonal_targets(64, 2, 4);
  CHECK(again[0] == two[0]);
  CHECK_THROWS_AS(orthogonal_targets(4, 5, 1), DimensionError);
}

TEST_CASE("k sweep shape and validation") {
  const World w = tiny_world();
  EncoderModel t = tiny_teacher();
  std::vector<const ForegroundInstance*> fgs;
  for (const auto& f : w.foregrounds) fgs.push_back(&f);
  Prototypes p;
  p.classes = class_prototypes(t, fgs, 2, 40);
  p.groups = group_prototypes(t, w.backgrounds, 2);
  std::vector<const Raster*> r;
  for (const auto& b : w.backgrounds) r.push_back(&b.raster);
  const Tensor pe = encode_batch(t, r);
  const BackgroundMean mu = mean_of_rows(pe);
  const std::vector<std::size_t> grid = {1, 2, 5};
  const KSweepReport rep = k_sweep(t, fgs, w.backgrounds, grid, p, pe, mu, 20, 3);
  CHECK(rep.Ks.size() == 3);
  CHECK(rep.fg_sim.size() == 3);
  CHECK(rep.var_eps.size() == 3);
  for (double v : rep.var_eps) CHECK(v >= 0.0);
  CHECK(rep.fg_sim_each[0].size() == fgs.size());
  const std::vector<std::size_t> empty;
  CHECK_THROWS_AS(k_sweep(t, fgs, w.backgrounds, empty, p, pe, mu, 20, 3), ConfigError);
  CHECK(kDefaultKGrid == std::vector<std::size_t>{1, 2, 3, 5, 8, 10, 15, 20, 30, 40});
}

TEST_CASE("anchor sets round trip") {
  const World w = tiny_world();
  EncoderModel t = tiny_teacher();
  std::vector<const ForegroundInstance*> fgs = {&w.foregrounds[1], &w.foregrounds[8]};
  const AnchorSet set = extract_anchors(t, fgs, w.backgrounds, 3, 6, 17);
  const auto path = std::filesystem::temp_directory_path() / "bap_anchor_test.bapt";
  save_anchors(set, path);
  const AnchorSet back = load_anchors(path);
  CHECK(back.K == 3);
  CHECK(back.pool_id == 17);
  CHECK(back.teacher_tag == set.teacher_tag);
  for (const auto& [id, a] : set.anchors) CHECK(back.at(id) == a);
  std::filesystem::remove(path);
  std::filesystem::remove(path.string() + ".jsonl");
}
