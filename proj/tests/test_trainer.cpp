#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <limits>

#include "votrack/checkpoint.hpp"
#include "votrack/synth.hpp"
#include "votrack/trainer.hpp"

using namespace votrack;

namespace {

ModelConfig tiny_model() {
  ModelConfig c;
  c.backbone.input_size = 32;
  c.backbone.widths = {4, 6, 8, 10};
  c.backbone.ck = 8;
  c.anchors.input_size = 32;
  c.retrieval.k = 2;
  c.retrieval.heads = 2;
  c.retrieval.attn_width = 8;
  c.head_width = 6;
  return c;
}

std::vector<Sequence> tiny_corpus(int sequences = 2) {
  std::vector<Sequence> out;
  for (int i = 0; i < sequences; ++i) {
    SynthConfig s;
    s.width = 96;
    s.height = 80;
    s.frames = 16;
    s.seed = 100 + static_cast<std::uint64_t>(i);
    s.target_size = 22;
    s.speed = 2.0;
    s.distractors = 1;
    s.noise_sigma = 2.0;
    out.push_back(generate_synthetic(s));
  }
  return out;
}

TrainConfig quick_train() {
  TrainConfig t;
  t.iterations = 50;
  t.batch = 1;
  t.lr = 1e-3;
  t.n_start = t.n_end = 2;
  t.max_skip = 3;
  t.augment = false;
  t.seed = 7;
  return t;
}

std::vector<double> snapshot(TrainerT<double>& t) {
  std::vector<double> all;
  t.params().for_each_param([&](const std::string&, TensorT<double>& p) {
    all.insert(all.end(), p.data().begin(), p.data().end());
  });
  return all;
}

}  // namespace

TEST_CASE("lr schedule and curriculum formulas", "[trainer]") {
  TrainConfig t;
  t.iterations = 2000;
  t.lr = 1e-3;
  t.lr_decay = 0.05;

  REQUIRE(t.decay_steps() == 400);
  REQUIRE(t.lr_at(0) == Catch::Approx(1e-3).epsilon(1e-12));
  REQUIRE(t.lr_at(400) == Catch::Approx(1e-3 * 0.05).epsilon(1e-12));
  REQUIRE(t.lr_at(800) == Catch::Approx(1e-3 * 0.05 * 0.05).epsilon(1e-12));
  REQUIRE(t.lr_at(200) == Catch::Approx(1e-3 * std::sqrt(0.05)).epsilon(1e-12));
  // smooth: strictly decreasing between grid points
  REQUIRE(t.lr_at(1) < t.lr_at(0));
  REQUIRE(t.lr_at(399) > t.lr_at(400));

  REQUIRE(t.curriculum_n(0) == 2);
  REQUIRE(t.curriculum_n(399) == 2);
  REQUIRE(t.curriculum_n(400) == 3);
  REQUIRE(t.curriculum_n(1200) == 5);
  REQUIRE(t.curriculum_n(1999) == 5);  // saturates at n_end

  t.steps_per_decay = 100;
  REQUIRE(t.decay_steps() == 100);
  REQUIRE(t.lr_at(100) == Catch::Approx(1e-3 * 0.05).epsilon(1e-12));

  TrainConfig bad = t;
  bad.n_start = 1;
  REQUIRE_THROWS_AS(bad.validate(), contract_error);
}

TEST_CASE("trainer rejects bad inputs", "[trainer]") {
  REQUIRE_THROWS_AS(TrainerT<double>(tiny_model(), quick_train(), {}), contract_error);
}

TEST_CASE("zero learning rate leaves parameters untouched", "[trainer]") {
  TrainConfig t = quick_train();
  t.lr = 0.0;
  t.weight_decay = 0.0;
  TrainerT<double> tr(tiny_model(), t, tiny_corpus());
  const auto before = snapshot(tr);
  const StepStats st = tr.step();
  REQUIRE_FALSE(st.aborted);
  REQUIRE(std::isfinite(st.loss));
  REQUIRE(st.loss > 0);
  REQUIRE(snapshot(tr) == before);
}

TEST_CASE("fixed seed reproduces the loss curve exactly", "[trainer]") {
  TrainerT<double> a(tiny_model(), quick_train(), tiny_corpus());
  TrainerT<double> b(tiny_model(), quick_train(), tiny_corpus());
  for (int k = 0; k < 3; ++k) {
    const StepStats sa = a.step(), sb = b.step();
    REQUIRE(sa.loss == sb.loss);
    REQUIRE(sa.lc == sb.lc);
    REQUIRE(sa.pos == sb.pos);
  }
  REQUIRE(snapshot(a) == snapshot(b));
}

TEST_CASE("gradient accumulation matches a summed batch", "[trainer]") {
  TrainerT<double> tr(tiny_model(), quick_train(), tiny_corpus());
  Rng rng = tr.iteration_rng(0);
  const auto c1 = tr.sample_clip(2, rng);
  const auto c2 = tr.sample_clip(2, rng);

  auto joint = backward(add(tr.rollout(c1), tr.rollout(c2)));
  auto g1 = backward(tr.rollout(c1));
  auto g2 = backward(tr.rollout(c2));

  std::size_t checked = 0;
  tr.params().for_each_param([&](const std::string& name, TensorT<double>& p) {
    const auto* gj = joint.find(p);
    const auto* ga = g1.find(p);
    const auto* gb = g2.find(p);
    if (!gj) {
      REQUIRE(ga == nullptr);
      REQUIRE(gb == nullptr);
      return;
    }
    for (std::size_t i = 0; i < gj->size(); ++i) {
      const double sep = (ga ? (*ga)[i] : 0.0) + (gb ? (*gb)[i] : 0.0);
      const double scale = std::max(1.0, std::abs((*gj)[i]));
      INFO(name << "[" << i << "]");
      REQUIRE(std::abs((*gj)[i] - sep) <= 1e-6 * scale);
      ++checked;
    }
  });
  REQUIRE(checked > 1000);
}

TEST_CASE("checkpoint resume continues the exact run", "[trainer]") {
  const std::string path = "test_trainer_resume.bin";
  const auto corpus = tiny_corpus();

  TrainerT<double> a(tiny_model(), quick_train(), corpus);
  a.step();
  a.step();
  save_checkpoint(path, a.model_config(), a.params(), a.iter(), a.lr_scale(), a.momentum());
  const StepStats a2 = a.step();
  const StepStats a3 = a.step();

  TrainerT<double> b(tiny_model(), quick_train(), corpus);
  auto ck = load_checkpoint<double>(path);
  b.restore_state(std::move(ck.params), ck.iter, ck.lr_scale, std::move(ck.momentum));
  REQUIRE(b.iter() == 2);
  const StepStats b2 = b.step();
  const StepStats b3 = b.step();

  REQUIRE(b2.iter == a2.iter);
  REQUIRE(b2.lr == a2.lr);  // lr schedule continues, not restarts
  REQUIRE(b2.loss == a2.loss);
  REQUIRE(b3.loss == a3.loss);
  REQUIRE(snapshot(a) == snapshot(b));
  std::remove(path.c_str());
}

TEST_CASE("non-finite forward aborts the step and halves the lr scale", "[trainer]") {
  TrainerT<double> tr(tiny_model(), quick_train(), tiny_corpus());
  tr.params().backbone.stages[0].down_w.node()->data[0] =
      std::numeric_limits<double>::quiet_NaN();
  const StepStats st = tr.step();
  REQUIRE(st.aborted);
  REQUIRE(tr.lr_scale() == 0.5);
  REQUIRE(tr.iter() == 1);

  tr.params().backbone.stages[0].down_w.node()->data[0] = 0.01;
  const StepStats st2 = tr.step();
  REQUIRE_FALSE(st2.aborted);
  REQUIRE(st2.lr == Catch::Approx(0.5 * quick_train().lr_at(1)).epsilon(1e-12));
}

TEST_CASE("log line carries the step fields", "[trainer]") {
  StepStats st;
  st.iter = 12;
  st.n = 3;
  st.lr = 0.5;
  st.loss = 2.25;
  st.lc = 2.0;
  st.lb = 0.25;
  st.pos = 9;
  const std::string line = to_log_line(st);
  REQUIRE(line.find("\"iter\":12") != std::string::npos);
  REQUIRE(line.find("\"loss\":2.25") != std::string::npos);
  REQUIRE(line.find("\"pos\":9") != std::string::npos);
  REQUIRE(line.find("\"aborted\":false") != std::string::npos);
}

TEST_CASE("repeated updates on a fixed clip drive the loss down", "[trainer][slow]") {
  ModelConfig m = tiny_model();
  TrainConfig t = quick_train();
  t.lr = 3e-3;
  TrainerT<double> tr(m, t, tiny_corpus(1));
  Rng rng = tr.iteration_rng(0);
  const auto clip = tr.sample_clip(2, rng);
  double initial = -1, last = -1;
  for (int k = 0; k < 60; ++k) {
    auto loss = tr.rollout(clip);
    last = loss.node()->data[0];
    REQUIRE(std::isfinite(last));
    if (initial < 0) initial = loss.node()->data[0];
    auto gm = backward(loss);
    tr.apply_update(gm, t.lr);
  }
  INFO("initial " << initial << " final " << last);
  REQUIRE(last < 0.1 * initial);
}
