#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "support/fdcheck.hpp"
#include "votrack/head.hpp"

using votrack::Rng;
using T = votrack::TensorT<double>;

namespace {
constexpr int kG = 4, kA = 3, kC = 5;  // grid, anchors, channels per input map
}

TEST_CASE("prediction shapes and score range", "[head]") {
  Rng rng(51);
  auto p = votrack::init_head<double>(2 * kC, 6, kA, rng);
  auto q = T::randn({kC, kG, kG}, rng, 1.0);
  auto r = T::randn({kC, kG, kG}, rng, 1.0);
  auto pred = votrack::predict(q, r, p);
  REQUIRE(pred.scores.shape() == votrack::Shape{kA, kG, kG});
  REQUIRE(pred.regs.shape() == votrack::Shape{4 * kA, kG, kG});
  for (double v : pred.scores.data()) {
    REQUIRE(v > 0.0);
    REQUIRE(v < 1.0);
  }
}

TEST_CASE("score projection starts at the background prior", "[head]") {
  Rng rng(52);
  auto p = votrack::init_head<double>(2 * kC, 6, kA, rng);
  const double want = -std::log(0.99 / 0.01);
  for (double v : p.c3_b.data()) REQUIRE(v == Catch::Approx(want).epsilon(1e-12));
  // a fresh head therefore predicts rare-foreground scores
  auto pred = votrack::predict(T::zeros({kC, kG, kG}), T::zeros({kC, kG, kG}), p);
  for (double v : pred.scores.data()) REQUIRE(v == Catch::Approx(0.01).epsilon(1e-9));
}

TEST_CASE("branches are independent", "[head]") {
  Rng rng(53);
  auto p = votrack::init_head<double>(2 * kC, 6, kA, rng);
  auto q = T::randn({kC, kG, kG}, rng, 1.0);
  auto r = T::randn({kC, kG, kG}, rng, 1.0);
  auto base = votrack::predict(q, r, p);

  p.r1_w.node()->data[3] += 0.5;
  auto p1 = votrack::predict(q, r, p);
  REQUIRE(p1.scores.data() == base.scores.data());
  REQUIRE(p1.regs.data() != base.regs.data());

  p.c2_w.node()->data[1] += 0.5;
  auto p2 = votrack::predict(q, r, p);
  REQUIRE(p2.regs.data() == p1.regs.data());
  REQUIRE(p2.scores.data() != p1.scores.data());
}

TEST_CASE("head rejects mismatched maps", "[head]") {
  Rng rng(54);
  auto p = votrack::init_head<double>(2 * kC, 6, kA, rng);
  REQUIRE_THROWS_AS(
      votrack::predict(T::zeros({kC, kG, kG}), T::zeros({kC, kG + 1, kG + 1}), p),
      votrack::contract_error);
  REQUIRE_THROWS_AS(
      votrack::predict(T::zeros({kC + 1, kG, kG}), T::zeros({kC, kG, kG}), p),
      votrack::contract_error);
}

TEST_CASE("gradients flow through both branches", "[head]") {
  Rng rng(55);
  auto p = votrack::init_head<double>(4, 5, 2, rng);
  auto q = T::randn({2, 3, 3}, rng, 1.0, true);
  auto r = T::randn({2, 3, 3}, rng, 1.0, true);
  auto ws = T::randn({2 * 3 * 3}, rng, 1.0);
  auto wr = T::randn({8 * 3 * 3}, rng, 1.0);

  auto f = [&] {
    auto pred = votrack::predict(q, r, p);
    return votrack::add(votrack::dot(votrack::reshape(pred.scores, {18}), ws),
                        votrack::dot(votrack::reshape(pred.regs, {72}), wr));
  };
  std::vector<T> params{q,      r,      p.c1_w, p.c1_b, p.c2_w, p.c2_b, p.c3_w,
                        p.c3_b, p.r1_w, p.r1_b, p.r2_w, p.r2_b, p.r3_w, p.r3_b};
  const auto rep = fdtest::check_grads(f, params, rng);
  REQUIRE(rep.checked > 0);
  REQUIRE(rep.max_rel < 1e-4);
}
