#include <catch2/catch_amalgamated.hpp>

#include <string>
#include <vector>

#include "support/fdcheck.hpp"
#include "votrack/model.hpp"

using votrack::BBox;
using votrack::ModelConfig;
using votrack::Rng;
using T = votrack::TensorT<double>;

namespace {

// smallest legal model: 32px crops on a 2x2 grid
ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.backbone.input_size = 32;
  cfg.backbone.widths = {4, 6, 8, 10};
  cfg.backbone.ck = 8;
  cfg.anchors.input_size = 32;
  cfg.retrieval.k = 2;
  cfg.retrieval.heads = 2;
  cfg.retrieval.attn_width = 8;
  cfg.head_width = 6;
  return cfg;
}

}  // namespace

TEST_CASE("model wiring produces coherent shapes", "[model]") {
  const auto cfg = tiny_config();
  cfg.validate();
  Rng rng(71);
  auto params = votrack::init_model<double>(cfg, rng);
  REQUIRE(params.param_count() > 1000);

  std::vector<std::string> names;
  params.for_each_param([&](const std::string& n, T&) { names.push_back(n); });
  REQUIRE(names.size() == 53u);
  for (std::size_t i = 1; i < names.size(); ++i)
    for (std::size_t j = 0; j < i; ++j) REQUIRE(names[i] != names[j]);

  const votrack::AnchorGrid grid(cfg.anchors);
  Rng drng(72);
  auto frame0 = T({3, 32, 32}, [&] {
    typename T::Data d(3 * 32 * 32);
    for (auto& v : d) v = drng.uniform();
    return d;
  }());
  auto feat0 = votrack::extract(frame0, params.backbone, cfg.backbone, cfg.norm);
  REQUIRE(feat0.shape() == votrack::Shape{8, 2, 2});

  auto slot = votrack::encode_initial(BBox{16.0, 15.0, 12.0, 10.0}, feat0, grid, params.value,
                                      cfg.pos_thr, cfg.neg_thr);
  REQUIRE(slot.value.shape() == votrack::Shape{cfg.cv(), 2, 2});

  auto fwd = votrack::forward_frame(frame0, {slot}, params, cfg);
  REQUIRE(fwd.pred.scores.shape() == votrack::Shape{grid.num_ratios(), 2, 2});
  REQUIRE(fwd.pred.regs.shape() == votrack::Shape{4 * grid.num_ratios(), 2, 2});
}

TEST_CASE("model config validation catches mismatches", "[model]") {
  auto cfg = tiny_config();
  cfg.anchors.input_size = 64;
  REQUIRE_THROWS_AS(cfg.validate(), votrack::contract_error);
  cfg = tiny_config();
  cfg.retrieval.attn_width = 9;
  REQUIRE_THROWS_AS(cfg.validate(), votrack::contract_error);
  cfg = tiny_config();
  cfg.pos_thr = 0.2;  // below neg_thr
  REQUIRE_THROWS_AS(cfg.validate(), votrack::contract_error);
}

TEST_CASE("end-to-end gradients match finite differences", "[model][slow]") {
  const auto cfg = tiny_config();
  Rng rng(73);
  auto params = votrack::init_model<double>(cfg, rng);
  const votrack::AnchorGrid grid(cfg.anchors);
  const BBox gt{16.0, 16.0, 13.0, 11.0};
  const auto labels = votrack::assign_labels(gt, grid, cfg.pos_thr, cfg.neg_thr);

  Rng drng(74);
  typename T::Data d0(3 * 32 * 32), d1(3 * 32 * 32);
  for (auto& v : d0) v = drng.uniform();
  for (auto& v : d1) v = drng.uniform();
  auto frame0 = T({3, 32, 32}, std::move(d0));
  auto frame1 = T({3, 32, 32}, std::move(d1));

  auto f = [&] {
    auto feat0 = votrack::extract(frame0, params.backbone, cfg.backbone, cfg.norm);
    auto slot = votrack::encode_initial(gt, feat0, grid, params.value, cfg.pos_thr, cfg.neg_thr);
    auto fwd = votrack::forward_frame(frame1, {slot}, params, cfg);
    std::vector<votrack::FrameLossT<double>> frames;
    frames.push_back(votrack::frame_loss(fwd.pred, labels, grid, cfg.lambda));
    return votrack::total_loss(frames, cfg.lambda);
  };

  std::vector<T> leaves;
  params.for_each_param([&](const std::string&, T& t) { leaves.push_back(t); });
  fdtest::Opts opts;
  opts.max_per_tensor = 5;  // keep the eval count tractable
  const auto rep = fdtest::check_grads(f, leaves, rng, opts);
  REQUIRE(rep.checked > 100);
  REQUIRE(rep.max_rel < 1e-4);
}
