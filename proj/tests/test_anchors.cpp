#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "support/geometry_oracles.hpp"
#include "votrack/anchors.hpp"
#include "votrack/geometry.hpp"

using votrack::AnchorConfig;
using votrack::AnchorGrid;
using votrack::BBox;

TEST_CASE("iou identities", "[anchors][geometry]") {
  BBox b{10, 20, 8, 6};
  REQUIRE(votrack::iou(b, b) == Catch::Approx(1.0));
  BBox far{100, 100, 4, 4};
  REQUIRE(votrack::iou(b, far) == 0.0);
  // unit squares overlapping half their area
  BBox u1{0.5, 0.5, 1, 1}, u2{1.0, 0.5, 1, 1};
  REQUIRE(votrack::iou(u1, u2) == Catch::Approx(1.0 / 3.0));
  REQUIRE(oracles::raster_iou(u1, u2) == Catch::Approx(1.0 / 3.0).margin(0.01));
}

TEST_CASE("iou is symmetric and matches the raster oracle", "[anchors][geometry]") {
  votrack::Rng rng(101);
  for (int i = 0; i < 30; ++i) {
    const BBox a = oracles::random_box(rng);
    const BBox b = oracles::random_box(rng);
    const double v = votrack::iou(a, b);
    REQUIRE(v == Catch::Approx(votrack::iou(b, a)));
    REQUIRE(v >= 0.0);
    REQUIRE(v <= 1.0);
    REQUIRE(v == Catch::Approx(oracles::raster_iou(a, b)).margin(0.01));
  }
}

TEST_CASE("iou rejects degenerate boxes", "[anchors][geometry]") {
  BBox bad{10, 10, 0, 5};
  BBox good{10, 10, 5, 5};
  REQUIRE_THROWS_AS(votrack::iou(bad, good), votrack::contract_error);
}

TEST_CASE("encode identities", "[anchors][geometry]") {
  BBox a{32, 48, 16, 24};
  auto t = votrack::encode(a, a);
  for (double v : t) REQUIRE(v == Catch::Approx(0.0).margin(1e-12));
  BBox shifted{32 + 16, 48, 16, 24};
  REQUIRE(votrack::encode(shifted, a)[0] == Catch::Approx(1.0));
  BBox wider = votrack::decode({0, 0, std::log(2.0), 0}, a);
  REQUIRE(wider.w == Catch::Approx(2 * a.w));
  REQUIRE(wider.h == Catch::Approx(a.h));
}

TEST_CASE("encode and decode are mutually inverse", "[anchors][geometry]") {
  votrack::Rng rng(102);
  for (int i = 0; i < 1000; ++i) {
    const BBox gt = oracles::random_box(rng);
    const BBox anchor = oracles::random_box(rng);
    const BBox back = votrack::decode(votrack::encode(gt, anchor), anchor);
    REQUIRE(std::abs(back.cx - gt.cx) < 1e-6);
    REQUIRE(std::abs(back.cy - gt.cy) < 1e-6);
    REQUIRE(std::abs(back.w - gt.w) < 1e-6);
    REQUIRE(std::abs(back.h - gt.h) < 1e-6);
  }
}

TEST_CASE("anchor grid geometry", "[anchors]") {
  AnchorGrid grid{AnchorConfig{}};
  REQUIRE(grid.grid() == 16);
  REQUIRE(grid.num_ratios() == 5);
  REQUIRE(grid.total() == 5 * 16 * 16);
  // centers on the stride lattice, area preserved across ratios
  const double base = 0.25 * 256;
  for (int a = 0; a < grid.num_ratios(); ++a) {
    for (int iy : {0, 7, 15}) {
      for (int ix : {0, 3, 15}) {
        const BBox box = grid.at(a, iy, ix);
        REQUIRE(box.cx == Catch::Approx((ix + 0.5) * 16));
        REQUIRE(box.cy == Catch::Approx((iy + 0.5) * 16));
        REQUIRE(box.w * box.h == Catch::Approx(base * base));
      }
    }
  }
  // flat indexing is [A][H][W] and self-consistent
  const auto i = grid.index(3, 10, 2);
  const BBox via_flat = grid.at_flat(i);
  const BBox direct = grid.at(3, 10, 2);
  REQUIRE(via_flat.cx == direct.cx);
  REQUIRE(via_flat.cy == direct.cy);
  REQUIRE(via_flat.w == direct.w);
}

TEST_CASE("anchor grid validates its config", "[anchors]") {
  AnchorConfig empty;
  empty.ratios.clear();
  REQUIRE_THROWS_AS(AnchorGrid{empty}, votrack::contract_error);
  AnchorConfig off;
  off.stride = 48;  // does not divide 256
  REQUIRE_THROWS_AS(AnchorGrid{off}, votrack::contract_error);
}

TEST_CASE("label assignment matches the exhaustive oracle", "[anchors]") {
  AnchorGrid grid{AnchorConfig{}};
  votrack::Rng rng(103);
  for (int trial = 0; trial < 50; ++trial) {
    const BBox gt = oracles::random_box(rng);
    const auto got = votrack::assign_labels(gt, grid, 0.6, 0.3);
    const auto want = oracles::oracle_assign(gt, grid, 0.6, 0.3);
    REQUIRE(got.cls == want.cls);
    for (std::size_t i = 0; i < want.cls.size(); ++i) {
      if (want.cls[i] != 1) continue;
      for (int k = 0; k < 4; ++k)
        REQUIRE(got.reg[i][k] == Catch::Approx(want.reg[i][k]).margin(1e-12));
    }
  }
}

TEST_CASE("matching anchor goes positive, far targets force one positive", "[anchors]") {
  AnchorGrid grid{AnchorConfig{}};
  // gt exactly on an anchor
  const BBox on = grid.at(2, 8, 8);
  const auto labels = votrack::assign_labels(on, grid, 0.6, 0.3);
  REQUIRE(labels.cls[static_cast<std::size_t>(grid.index(2, 8, 8))] == 1);

  // gt mostly outside the region: every anchor below pos_thr, one forced
  const BBox far{1000, 1000, 30, 30};
  const auto forced = votrack::assign_labels(far, grid, 0.6, 0.3);
  REQUIRE(forced.num_pos == 1);
  int pos = 0, ign = 0;
  for (int c : forced.cls) {
    pos += c == 1;
    ign += c == -1;
  }
  REQUIRE(pos == 1);
  REQUIRE(ign == 0);
}

TEST_CASE("assign_labels validates thresholds", "[anchors]") {
  AnchorGrid grid{AnchorConfig{}};
  const BBox gt{128, 128, 40, 40};
  REQUIRE_THROWS_AS(votrack::assign_labels(gt, grid, 0.3, 0.6), votrack::contract_error);
  REQUIRE_THROWS_AS(votrack::assign_labels(gt, grid, 1.2, 0.3), votrack::contract_error);
}
