#include <cmath>
#include <sstream>

#include "bap/autodiff.hpp"
#include "bap/bapt_io.hpp"
#include "bap/error.hpp"
#include "bap/optim.hpp"
#include "bap/rng.hpp"
#include "bap/tensor.hpp"
#include "doctest.h"
#include "gradcheck.hpp"

using namespace bap;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double sd = 1.0) {
  Tensor t(std::move(shape));
  for (float& v : t.data()) {
    v = static_cast<float>(rng.normal(0.0, sd));
  }
  return t;
}

Parameter make_param(const char* name, Shape shape, Rng& rng, double sd = 1.0) {
  return Parameter{name, random_tensor(std::move(shape), rng, sd), {}};
}

}  // namespace

TEST_CASE("matmul hand examples and triple-loop oracle") {
  Tensor eye = Tensor::matrix(2, 2, {1, 0, 0, 1});
  Tensor col = Tensor::matrix(2, 1, {3, 4});
  CHECK(matmul(eye, col) == col);
  CHECK(matmul(Tensor::matrix(1, 2, {1, 2}), col).item() == 11.0f);

  Rng rng(7);
  Tensor a = random_tensor({5, 7}, rng);
  Tensor b = random_tensor({7, 3}, rng);
  Tensor c = matmul(a, b);
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < 7; ++p) {
        s += static_cast<double>(a[i * 7 + p]) * b[p * 3 + j];
      }
      CHECK(std::abs(c[i * 3 + j] - s) < 1e-5);
    }
  }
  CHECK_THROWS_AS(matmul(a, a), DimensionError);
}

TEST_CASE("l2_normalize and cosine_sim") {
  Tensor v = l2_normalize(Tensor::vector({3, 4}));
  CHECK(v[0] == doctest::Approx(0.6).epsilon(1e-7));
  CHECK(v[1] == doctest::Approx(0.8).epsilon(1e-7));
  CHECK(l2_normalize(v) == v);
  CHECK_THROWS_AS(l2_normalize(Tensor::vector({0, 0})), DegenerateInputError);

  CHECK(cosine_sim(Tensor::vector({1, 0}), Tensor::vector({1, 0})) == 1.0);
  CHECK(cosine_sim(Tensor::vector({1, 0}), Tensor::vector({0, 1})) == 0.0);
  CHECK(std::abs(cosine_sim(Tensor::vector({1, 0}), Tensor::vector({1, 1})) - 1.0 / std::sqrt(2.0)) < 1e-7);
  CHECK_THROWS_AS(cosine_sim(Tensor::vector({0, 0}), Tensor::vector({1, 1})), DegenerateInputError);

  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor u = random_tensor({16}, rng);
    Tensor w = random_tensor({16}, rng);
    Tensor once = l2_normalize(u);
    Tensor twice = l2_normalize(once);
    for (std::size_t i = 0; i < 16; ++i) {
      CHECK(std::abs(once[i] - twice[i]) < 1e-6);
    }
    const double base = cosine_sim(u, w);
    CHECK(std::abs(base - cosine_sim(w, u)) < 1e-12);
    const float alpha = static_cast<float>(rng.uniform(0.1, 10.0));
    const float beta = static_cast<float>(rng.uniform(0.1, 10.0));
    CHECK(std::abs(base - cosine_sim(scaled(u, alpha), scaled(w, beta))) < 1e-6);
    CHECK(std::abs(base) <= 1.0);
  }
}

TEST_CASE("backward analytic cases") {
  Rng rng(3);
  Parameter w = make_param("w", {6}, rng);
  {
    Tape tape;
    Var x = tape.parameter(w);
    tape.backward(sum(square(x)));
  }
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(w.grad[i] == doctest::Approx(2.0 * w.value[i]));
  }

  // A loss that ignores w leaves an all-zero gradient.
  w.zero_grad();
  {
    Tape tape;
    tape.parameter(w);
    Var c = tape.constant(Tensor::vector({1, 2, 3}));
    tape.backward(sum(c));
  }
  for (float g : w.grad.data()) {
    CHECK(g == 0.0f);
  }

  Tape tape;
  Var x = tape.parameter(w);
  CHECK_THROWS_AS(tape.backward(square(x)), ContractError);
}

TEST_CASE("primitive gradients match central differences over 20 seeds") {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed + 100);
    Parameter a = make_param("a", {3, 4}, rng);
    Parameter b = make_param("b", {4, 5}, rng);
    Parameter c = make_param("c", {3, 4}, rng);
    Parameter w = make_param("w", {5, 4}, rng);
    Parameter bias = make_param("bias", {5}, rng);
    Tensor r35 = random_tensor({3, 5}, rng);
    Tensor r34 = random_tensor({3, 4}, rng);
    Tensor r3 = random_tensor({3}, rng);
    Tensor t34 = random_tensor({3, 4}, rng);

    int op = 0;
    auto run = [&](const testing::ProbeFn& fn, const Tensor* weights, std::vector<Parameter*> ps, double h = 1e-3) {
      const auto res = testing::check_entries(fn, weights, ps, rng, h);
      worst = std::max(worst, res.max_rel_err);
      ++op;
      INFO("op " << op << " analytic " << res.worst_analytic << " numeric " << res.worst_numeric);
      CHECK(res.max_rel_err < 1e-3);
    };

    run([&](Tape& t) { return matmul(t.parameter(a), t.parameter(b)); }, &r35, {&a, &b});
    run([&](Tape& t) { return linear(t.parameter(a), t.parameter(w)); }, &r35, {&a, &w});
    run([&](Tape& t) { return add_bias(linear(t.parameter(a), t.parameter(w)), t.parameter(bias)); },
        &r35, {&a, &w, &bias});
    run([&](Tape& t) { return add(t.parameter(a), t.parameter(c)); }, &r34, {&a, &c});
    run([&](Tape& t) { return sub(t.parameter(a), t.parameter(c)); }, &r34, {&a, &c});
    run([&](Tape& t) { return mul(t.parameter(a), t.parameter(c)); }, &r34, {&a, &c});
    run([&](Tape& t) { return scale(t.parameter(a), -1.7f); }, &r34, {&a});
    run([&](Tape& t) { return square(t.parameter(a)); }, &r34, {&a});
    run([&](Tape& t) { return gelu(t.parameter(a)); }, &r34, {&a});
    run([&](Tape& t) { return scale(sum(t.parameter(a)), 0.3f); }, nullptr, {&a});
    run([&](Tape& t) { return mean(square(t.parameter(a))); }, nullptr, {&a});
    const Tensor r43 = r34.reshaped({4, 3});
    run([&](Tape& t) { return reshape(t.parameter(a), {4, 3}); }, &r43, {&a});
    run([&](Tape& t) { return l2_normalize_rows(t.parameter(a)); }, &r34, {&a});
    run([&](Tape& t) { return row_dot(t.parameter(a), t34); }, &r3, {&a});

    const std::uint32_t labels[] = {2, 0, 3};
    const float class_w[] = {0.5f, 1.0f, 2.0f, 1.5f};
    run([&](Tape& t) { return softmax_cross_entropy(t.parameter(a), labels); }, nullptr, {&a});
    run([&](Tape& t) { return softmax_cross_entropy(t.parameter(a), labels, class_w); }, nullptr, {&a});

    Parameter img = make_param("img", {2, 6, 6, 2}, rng);
    Tensor pooled_w = random_tensor({2, 3, 3, 2}, rng);
    run([&](Tape& t) { return avg_pool(t.parameter(img), 2); }, &pooled_w, {&img});

    Parameter kw = make_param("conv.w", {3, 3 * 3 * 2}, rng, 0.5);
    Parameter kb = make_param("conv.b", {3}, rng);
    Tensor conv_w = random_tensor({2, 3, 3, 3}, rng);
    // conv2d is linear in each argument; a wider step only cuts rounding noise.
    run([&](Tape& t) { return conv2d(t.parameter(img), t.parameter(kw), t.parameter(kb), 3, 2, 1); },
        &conv_w, {&img, &kw, &kb}, 1e-2);
  }
  MESSAGE("worst primitive relative error: " << worst);
}

TEST_CASE("l2_normalize_rows refuses near-zero rows") {
  Tape tape;
  Var x = tape.constant(Tensor::matrix(2, 2, {1, 1, 0, 0}));
  CHECK_THROWS_AS(l2_normalize_rows(x), DegenerateInputError);
}

TEST_CASE("AdamW behaviour") {
  Parameter w{"w", Tensor::vector({1.0f, -2.0f}), {}};
  {
    AdamW opt({&w}, 0.0);
    opt.zero_grad();
    opt.step(1e-2);
    CHECK(w.value == Tensor::vector({1.0f, -2.0f}));
  }
  {
    Parameter s{"s", Tensor::vector({1.0f}), {}};
    AdamW opt({&s}, 0.0);
    opt.zero_grad();
    Tape tape;
    tape.backward(sum(square(tape.parameter(s))));
    opt.step(1e-2);
    CHECK(std::abs(s.value[0]) < 1.0f);
  }
  {
    // f(w) = sum (w - w*)^2 has the closed-form minimizer w*.
    Rng rng(5);
    Tensor target = random_tensor({8}, rng);
    Parameter q{"q", Tensor({8}), {}};
    AdamW opt({&q}, 0.0);
    for (int step = 0; step < 200; ++step) {
      opt.zero_grad();
      Tape tape;
      tape.backward(sum(square(sub(tape.parameter(q), tape.constant_view(target)))));
      opt.step(0.1);
    }
    double dist = 0.0;
    for (std::size_t i = 0; i < 8; ++i) {
      dist += std::pow(q.value[i] - target[i], 2);
    }
    CHECK(std::sqrt(dist) < 1e-3);
  }
  {
    Parameter n{"layer3.weight", Tensor::vector({1.0f}), Tensor::vector({NAN})};
    AdamW opt({&n}, 0.01);
    try {
      opt.step(1e-3);
      FAIL("expected NumericError");
    } catch (const NumericError& e) {
      CHECK(std::string(e.what()).find("layer3.weight") != std::string::npos);
    }
    CHECK(n.value[0] == 1.0f);
  }
  {
    // Decoupled decay with a zero gradient shrinks by exactly lr * wd.
    Parameter d{"d", Tensor::vector({2.0f}), {}};
    AdamW opt({&d}, 0.5);
    opt.zero_grad();
    opt.step(0.1);
    CHECK(d.value[0] == doctest::Approx(2.0 * (1.0 - 0.05)));
    CHECK(opt.steps() == 1);
  }
}

TEST_CASE("warmup then cosine schedule") {
  LrSchedule s{1e-3, 0.10, 200, 1e-4};
  CHECK(lr_at(s, 0) == 0.0);
  CHECK(lr_at(s, 20) == doctest::Approx(1e-3));
  CHECK(lr_at(s, 200) == doctest::Approx(1e-4));
  CHECK(lr_at(s, 19) < lr_at(s, 20));
  CHECK(std::abs(lr_at(s, 21) - lr_at(s, 20)) < 1e-6);
  for (std::int64_t k = 20; k <= 200; ++k) {
    CHECK(lr_at(s, k) >= s.floor - 1e-15);
    CHECK(lr_at(s, k) <= s.base + 1e-15);
  }
  CHECK_THROWS_AS(lr_at(s, 201), ContractError);
}

TEST_CASE("BAPT round trip and layout") {
  Rng rng(9);
  Tensor t = random_tensor({2, 3, 4}, rng);
  std::stringstream ss;
  write_bapt(ss, t);
  const std::string bytes = ss.str();
  CHECK(bytes.substr(0, 4) == "BAPT");
  CHECK(bytes[4] == 1);
  CHECK(bytes[5] == 3);
  CHECK(static_cast<unsigned char>(bytes[6]) == 2);
  CHECK(bytes.size() == 6 + 3 * 4 + 24 * 4);
  CHECK(read_bapt(ss) == t);

  std::stringstream bad("BAPX");
  CHECK_THROWS_AS(read_bapt(bad), IoError);
}

TEST_CASE("identical seeds give bitwise identical tensors") {
  Rng r1(42), r2(42);
  CHECK(random_tensor({4, 4}, r1) == random_tensor({4, 4}, r2));
  Rng r3(43);
  Rng r4(42);
  CHECK_FALSE(random_tensor({4, 4}, r3) == random_tensor({4, 4}, r4));
}
