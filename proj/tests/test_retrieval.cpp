#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "support/fdcheck.hpp"
#include "votrack/retrieval.hpp"

using votrack::MemorySlotT;
using votrack::RetrievalConfig;
using votrack::RetrievalMode;
using votrack::Rng;
using T = votrack::TensorT<double>;

namespace {

RetrievalConfig small_cfg(RetrievalMode mode = RetrievalMode::voting, int k = 2) {
  RetrievalConfig cfg;
  cfg.mode = mode;
  cfg.k = k;
  cfg.heads = 2;
  cfg.attn_width = 6;
  return cfg;
}

std::vector<std::int64_t> sort_oracle(const std::vector<double>& row, int k) {
  std::vector<std::int64_t> idx(row.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::int64_t a, std::int64_t b) {
    return row[static_cast<std::size_t>(a)] > row[static_cast<std::size_t>(b)];
  });
  idx.resize(static_cast<std::size_t>(std::min<std::size_t>(idx.size(), static_cast<std::size_t>(k))));
  return idx;
}

}  // namespace

TEST_CASE("similarity row fixtures", "[retrieval]") {
  // zero query: every exponent is 1, including the no-match entry
  Rng rng(31);
  auto keys = T::randn({2, 3}, rng, 1.0);
  auto row = votrack::similarity_row(T::zeros({3}), keys);
  REQUIRE(row.numel() == 3);
  for (double v : row.data()) REQUIRE(v == Catch::Approx(1.0 / 3.0).epsilon(1e-12));

  auto row2 = votrack::similarity_row(T({2}, {1.0, 0.0}), T({1, 2}, {1.0, 0.0}));
  const double e = std::exp(1.0);
  REQUIRE(row2.data()[0] == Catch::Approx(1.0 / (1.0 + e)).epsilon(1e-12));
  REQUIRE(row2.data()[1] == Catch::Approx(e / (1.0 + e)).epsilon(1e-12));
}

TEST_CASE("similarity rows are positive, normalized, monotone", "[retrieval]") {
  Rng rng(32);
  for (int trial = 0; trial < 20; ++trial) {
    auto q = T::randn({4}, rng, 1.0);
    auto keys = T::randn({6, 4}, rng, 1.0);
    auto row = votrack::similarity_row(q, keys);
    double s = 0;
    for (double v : row.data()) {
      REQUIRE(v > 0.0);
      s += v;
    }
    REQUIRE(s == Catch::Approx(1.0).margin(1e-9));

    // bump one key toward the query: its entry rises, every other entry falls
    const int j = static_cast<int>(rng.uniform_int(6));
    auto keys2 = keys.detached();
    for (int c = 0; c < 4; ++c)
      keys2.node()->data[static_cast<std::size_t>(j) * 4 + c] += 0.5 * q.data()[static_cast<std::size_t>(c)];
    auto row2 = votrack::similarity_row(q, keys2);
    REQUIRE(row2.data()[static_cast<std::size_t>(j) + 1] > row.data()[static_cast<std::size_t>(j) + 1]);
    for (std::size_t i = 0; i < row.data().size(); ++i)
      if (i != static_cast<std::size_t>(j) + 1) REQUIRE(row2.data()[i] <= row.data()[i]);
  }
}

TEST_CASE("stabilized similarity equals direct evaluation at small magnitudes", "[retrieval]") {
  Rng rng(33);
  for (int trial = 0; trial < 10; ++trial) {
    auto q = T::randn({5}, rng, 0.5);
    auto keys = T::randn({7, 5}, rng, 0.5);
    auto row = votrack::similarity_row(q, keys);
    // direct, unstabilized Eq.-style evaluation
    double c = 1.0;
    std::vector<double> ex{1.0};
    for (int j = 0; j < 7; ++j) {
      double dotv = 0;
      for (int e = 0; e < 5; ++e)
        dotv += q.data()[static_cast<std::size_t>(e)] * keys.data()[static_cast<std::size_t>(j) * 5 + e];
      ex.push_back(std::exp(dotv));
      c += ex.back();
    }
    for (std::size_t i = 0; i < ex.size(); ++i)
      REQUIRE(std::abs(row.data()[i] - ex[i] / c) < 1e-9);
  }
}

TEST_CASE("candidate selection fixtures and oracle", "[retrieval]") {
  REQUIRE(votrack::select_topk(std::vector<double>{0.1, 0.5, 0.3, 0.1}, 2) ==
          std::vector<std::int64_t>{1, 2});
  // exact tie at the cut: smaller index wins
  REQUIRE(votrack::select_topk(std::vector<double>{0.5, 0.3, 0.5}, 1) ==
          std::vector<std::int64_t>{0});
  REQUIRE(votrack::select_topk(std::vector<double>{0.3, 0.5, 0.5}, 2) ==
          std::vector<std::int64_t>{1, 2});
  REQUIRE_THROWS_AS(votrack::select_topk(std::vector<double>{0.1}, 0), votrack::contract_error);

  Rng rng(34);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 1 + static_cast<int>(rng.uniform_int(12));
    std::vector<double> row(static_cast<std::size_t>(n));
    // quantized values so exact ties are common
    for (auto& v : row) v = std::floor(rng.uniform() * 5.0) / 5.0;
    const int k = 1 + static_cast<int>(rng.uniform_int(n));
    REQUIRE(votrack::select_topk(row, k) == sort_oracle(row, k));
  }

  // K beyond the row clamps (with a logged warning) instead of failing
  REQUIRE(votrack::select_topk(std::vector<double>{0.3, 0.1, 0.2}, 9).size() == 3u);
}

TEST_CASE("vote is permutation invariant over candidates", "[retrieval]") {
  Rng rng(35);
  auto p = votrack::init_retrieval<double>(4, 4, small_cfg(), rng);
  auto vals = T::randn({4, 4}, rng, 1.0);
  auto q = T::randn({4}, rng, 1.0);
  auto base = votrack::vote(vals, q, p, 2);
  REQUIRE(base.numel() == 4);

  const std::vector<std::size_t> perm{2, 0, 3, 1};
  typename T::Data pd(16);
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 4; ++c) pd[r * 4 + c] = vals.data()[perm[r] * 4 + c];
  auto voted = votrack::vote(T({4, 4}, std::move(pd)), q, p, 2);
  for (int i = 0; i < 4; ++i)
    REQUIRE(voted.data()[static_cast<std::size_t>(i)] ==
            Catch::Approx(base.data()[static_cast<std::size_t>(i)]).margin(1e-9));
}

TEST_CASE("max pooling ignores duplicated candidates", "[retrieval]") {
  Rng rng(36);
  auto tok = T::randn({1, 3, 5}, rng, 1.0);
  typename T::Data dup(static_cast<std::size_t>(4) * 5);
  std::copy(tok.data().begin(), tok.data().end(), dup.begin());
  std::copy(tok.data().begin() + 5, tok.data().begin() + 10, dup.begin() + 15);  // repeat row 1
  auto a = votrack::max_over_axis(tok, 1);
  auto b = votrack::max_over_axis(T({1, 4, 5}, std::move(dup)), 1);
  REQUIRE(a.data() == b.data());
}

TEST_CASE("gradients flow through the vote", "[retrieval]") {
  Rng rng(37);
  auto cfg = small_cfg();
  auto p = votrack::init_retrieval<double>(3, 3, cfg, rng);
  auto vals = T::randn({3, 3}, rng, 1.0, true);
  auto q = T::randn({3}, rng, 1.0, true);
  auto w = T::randn({3}, rng, 1.0);

  auto f = [&] { return votrack::dot(votrack::vote(vals, q, p, cfg.heads), w); };
  std::vector<T> params{vals, q,    p.in_w, p.in_b, p.wq,    p.bq,
                        p.wk, p.bk, p.wv,   p.bv,   p.wo,    p.bo,
                        p.out_w, p.out_b};
  const auto rep = fdtest::check_grads(f, params, rng);
  REQUIRE(rep.checked > 0);
  REQUIRE(rep.max_rel < 1e-4);
}

namespace {

struct Bank {
  std::vector<MemorySlotT<double>> slots;
  T query;
};

Bank random_bank(Rng& rng, int slots, int ck, int g) {
  Bank b;
  b.query = T::randn({ck, g, g}, rng, 1.0);
  for (int s = 0; s < slots; ++s) {
    MemorySlotT<double> m;
    m.key = T::randn({ck, g, g}, rng, 1.0);
    m.value = T::randn({ck, g, g}, rng, 1.0);
    m.frame_index = s;
    b.slots.push_back(std::move(m));
  }
  return b;
}

}  // namespace

TEST_CASE("all retrieval modes share the output shape", "[retrieval]") {
  Rng rng(38);
  auto p = votrack::init_retrieval<double>(4, 4, small_cfg(), rng);
  auto bank = random_bank(rng, 2, 4, 2);
  for (auto mode : {RetrievalMode::voting, RetrievalMode::softmax, RetrievalMode::topk_mlp}) {
    auto out = votrack::retrieve(bank.query, bank.slots, p, small_cfg(mode));
    REQUIRE(out.shape() == votrack::Shape{4, 2, 2});
    for (double v : out.data()) REQUIRE(std::isfinite(v));
  }
}

TEST_CASE("softmax retrieval is the row-weighted value sum", "[retrieval]") {
  Rng rng(39);
  auto p = votrack::init_retrieval<double>(3, 3, small_cfg(), rng);
  auto bank = random_bank(rng, 2, 3, 2);
  auto out = votrack::retrieve(bank.query, bank.slots, p, small_cfg(RetrievalMode::softmax));

  auto q_rows = votrack::flatten_map(bank.query);
  std::vector<T> kp, vp;
  vp.push_back(p.null_value);
  for (auto& s : bank.slots) {
    kp.push_back(votrack::flatten_map(s.key));
    vp.push_back(votrack::flatten_map(s.value));
  }
  auto sim = votrack::similarity_matrix(q_rows, votrack::concat(kp, 0));
  auto vals = votrack::concat(vp, 0);
  // hand-rolled weighted sum
  const int hw = 4, cols = sim.dim(1), cv = 3;
  for (int i = 0; i < hw; ++i)
    for (int c = 0; c < cv; ++c) {
      double acc = 0;
      for (int j = 0; j < cols; ++j)
        acc += sim.data()[static_cast<std::size_t>(i) * cols + j] *
               vals.data()[static_cast<std::size_t>(j) * cv + c];
      const int y = i / 2, x = i % 2;
      REQUIRE(out.data()[(static_cast<std::size_t>(c) * 2 + y) * 2 + x] ==
              Catch::Approx(acc).margin(1e-12));
    }
}

TEST_CASE("matching keys concentrate softmax weights on their own cell", "[retrieval]") {
  // query cell i = 10*e_i, keys identical: dot = 100 on the diagonal, 0 off it
  const int ck = 4, g = 2;
  typename T::Data qd(static_cast<std::size_t>(ck) * g * g, 0.0);
  for (int i = 0; i < g * g; ++i) qd[static_cast<std::size_t>(i) * g * g + i] = 10.0;
  T query({ck, g, g}, qd);

  Rng rng(40);
  auto p = votrack::init_retrieval<double>(ck, ck, small_cfg(), rng);
  MemorySlotT<double> slot;
  slot.key = T({ck, g, g}, qd);
  slot.value = T::randn({ck, g, g}, rng, 1.0);
  auto out = votrack::retrieve(query, {slot}, p, small_cfg(RetrievalMode::softmax));
  for (int c = 0; c < ck; ++c)
    for (int i = 0; i < g * g; ++i)
      REQUIRE(out.data()[static_cast<std::size_t>(c) * g * g + i] ==
              Catch::Approx(slot.value.data()[static_cast<std::size_t>(c) * g * g + i])
                  .margin(1e-6));
}

TEST_CASE("voting handles K=1 and clamped K", "[retrieval]") {
  Rng rng(41);
  auto p = votrack::init_retrieval<double>(4, 4, small_cfg(), rng);
  auto bank = random_bank(rng, 1, 4, 2);
  auto one = votrack::retrieve(bank.query, bank.slots, p, small_cfg(RetrievalMode::voting, 1));
  REQUIRE(one.shape() == votrack::Shape{4, 2, 2});
  // 1 slot at g=2 gives 4 keys + no-match = 5 entries; K=16 clamps to 5
  auto big = votrack::retrieve(bank.query, bank.slots, p, small_cfg(RetrievalMode::voting, 16));
  REQUIRE(big.shape() == votrack::Shape{4, 2, 2});
}

TEST_CASE("retrieval contract violations", "[retrieval]") {
  Rng rng(42);
  auto p = votrack::init_retrieval<double>(4, 4, small_cfg(), rng);
  auto bank = random_bank(rng, 1, 4, 2);
  REQUIRE_THROWS_AS(votrack::retrieve(bank.query, {}, p, small_cfg()), votrack::contract_error);
  REQUIRE_THROWS_AS(votrack::parse_retrieval_mode("fancy"), votrack::contract_error);
  auto bad = small_cfg();
  bad.attn_width = 7;  // heads=2 does not divide it
  REQUIRE_THROWS_AS(votrack::retrieve(bank.query, bank.slots, p, bad), votrack::contract_error);
  bad = small_cfg();
  bad.k = 0;
  REQUIRE_THROWS_AS(votrack::retrieve(bank.query, bank.slots, p, bad), votrack::contract_error);
}

TEST_CASE("modes draw on disjoint transform parameters", "[retrieval]") {
  Rng rng(43);
  auto cfg = small_cfg();
  auto p = votrack::init_retrieval<double>(4, 4, cfg, rng);
  auto bank = random_bank(rng, 2, 4, 2);
  auto vote_out = votrack::retrieve(bank.query, bank.slots, p, cfg);
  p.mlp1_w.node()->data[0] += 1.0;  // MLP branch only
  REQUIRE(votrack::retrieve(bank.query, bank.slots, p, cfg).data() == vote_out.data());

  auto mlp_out = votrack::retrieve(bank.query, bank.slots, p, small_cfg(RetrievalMode::topk_mlp));
  // note wv, not wq: at K=2 the masked diagonal leaves one attention target
  // per token, so the weights are pinned at 1 and wq/wk cannot move the output
  p.wv.node()->data[0] += 1.0;
  REQUIRE(votrack::retrieve(bank.query, bank.slots, p, small_cfg(RetrievalMode::topk_mlp)).data() ==
          mlp_out.data());
  REQUIRE(votrack::retrieve(bank.query, bank.slots, p, cfg).data() != vote_out.data());
}

TEST_CASE("gradients flow through voting retrieval", "[retrieval]") {
  Rng rng(44);
  auto cfg = small_cfg();
  auto p = votrack::init_retrieval<double>(3, 3, cfg, rng);
  auto bank = random_bank(rng, 1, 3, 2);
  bank.query.node()->requires_grad = true;
  bank.slots[0].value.node()->requires_grad = true;
  auto w = T::randn({3 * 2 * 2}, rng, 1.0);

  auto f = [&] {
    auto out = votrack::retrieve(bank.query, bank.slots, p, cfg);
    return votrack::dot(votrack::reshape(out, {12}), w);
  };
  std::vector<T> params{bank.query, bank.slots[0].value, p.null_value, p.in_w,
                        p.wq,       p.wk,                p.wv,         p.wo,
                        p.out_w,    p.out_b};
  const auto rep = fdtest::check_grads(f, params, rng);
  REQUIRE(rep.checked > 0);
  REQUIRE(rep.max_rel < 1e-4);
}
