#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "votrack/backbone.hpp"
#include "votrack/memory.hpp"
#include "votrack/ops.hpp"

namespace votrack {

enum class RetrievalMode { voting, softmax, topk_mlp };

inline RetrievalMode parse_retrieval_mode(const std::string& s) {
  if (s == "voting") return RetrievalMode::voting;
  if (s == "softmax") return RetrievalMode::softmax;
  if (s == "topk_mlp") return RetrievalMode::topk_mlp;
  throw contract_error("unknown retrieval mode: " + s);
}

inline const char* to_string(RetrievalMode m) {
  switch (m) {
    case RetrievalMode::voting: return "voting";
    case RetrievalMode::softmax: return "softmax";
    case RetrievalMode::topk_mlp: return "topk_mlp";
  }
  return "?";
}

struct RetrievalConfig {
  RetrievalMode mode = RetrievalMode::voting;
  int k = 4;
  int heads = 8;
  int attn_width = 64;  // token bottleneck output; heads must divide it

  void validate() const {
    require(k >= 1, "retrieval: K must be >= 1");
    require(heads >= 1 && attn_width >= heads && attn_width % heads == 0,
            "retrieval: head count must divide attention width");
  }
};

// Parameters for all three retrieval variants live side by side so a
// checkpoint can be evaluated under any mode; unused branches simply get zero
// gradients.
template <class S>
struct RetrievalParamsT {
  using T = TensorT<S>;
  T null_value;            // [1, cv] learned value for the no-match entry
  T in_w, in_b;            // token [cv+ck] -> attn_width
  T wq, bq, wk, bk, wv, bv, wo, bo;
  T out_w, out_b;          // attn_width -> cv
  T mlp1_w, mlp1_b;        // topk_mlp: token -> attn_width
  T mlp2_w, mlp2_b;        // topk_mlp: attn_width -> cv

  template <class Fn>
  void for_each(Fn&& fn) {
    fn("retrieval.null_value", null_value);
    fn("retrieval.in_w", in_w);
    fn("retrieval.in_b", in_b);
    fn("retrieval.wq", wq);
    fn("retrieval.bq", bq);
    fn("retrieval.wk", wk);
    fn("retrieval.bk", bk);
    fn("retrieval.wv", wv);
    fn("retrieval.bv", bv);
    fn("retrieval.wo", wo);
    fn("retrieval.bo", bo);
    fn("retrieval.out_w", out_w);
    fn("retrieval.out_b", out_b);
    fn("retrieval.mlp1_w", mlp1_w);
    fn("retrieval.mlp1_b", mlp1_b);
    fn("retrieval.mlp2_w", mlp2_w);
    fn("retrieval.mlp2_b", mlp2_b);
  }
};

template <class S>
RetrievalParamsT<S> init_retrieval(int ck, int cv, const RetrievalConfig& cfg, Rng& rng) {
  cfg.validate();
  using namespace init_detail;
  const int tok = cv + ck;
  const int d = cfg.attn_width;
  RetrievalParamsT<S> p;
  p.null_value = TensorT<S>::randn({1, cv}, rng, S(0.02), true);
  p.in_w = he_linear<S>(rng, d, tok);
  p.in_b = zero_bias<S>(d);
  p.wq = he_linear<S>(rng, d, d);
  p.bq = zero_bias<S>(d);
  p.wk = he_linear<S>(rng, d, d);
  p.bk = zero_bias<S>(d);
  p.wv = he_linear<S>(rng, d, d);
  p.bv = zero_bias<S>(d);
  p.wo = he_linear<S>(rng, d, d);
  p.bo = zero_bias<S>(d);
  p.out_w = he_linear<S>(rng, cv, d);
  p.out_b = zero_bias<S>(cv);
  p.mlp1_w = he_linear<S>(rng, d, tok);
  p.mlp1_b = zero_bias<S>(d);
  p.mlp2_w = he_linear<S>(rng, cv, d);
  p.mlp2_b = zero_bias<S>(cv);
  return p;
}

// [C, G, G] -> [G*G, C] token matrix (row i = feature vector at cell i).
template <class S>
TensorT<S> flatten_map(const TensorT<S>& m) {
  require(m.rank() == 3, "flatten_map: want rank-3, got " + shape_str(m.shape()));
  const int c = m.dim(0);
  const int hw = m.dim(1) * m.dim(2);
  return transpose2d(reshape(m, {c, hw}));
}

template <class S>
TensorT<S> unflatten_map(const TensorT<S>& rows, int h, int w) {
  require(rows.rank() == 2 && rows.dim(0) == h * w,
          "unflatten_map: row count mismatch for " + shape_str(rows.shape()));
  return reshape(transpose2d(rows), {rows.dim(1), h, w});
}

// Normalized similarity of each query row against all memory keys, with a
// leading no-match entry whose logit is 0 (= exp gives the appended 1).  The
// softmax's max subtraction is the stabilization; it cancels in the ratio.
template <class S>
TensorT<S> similarity_matrix(const TensorT<S>& q_rows, const TensorT<S>& key_rows) {
  require(q_rows.rank() == 2 && key_rows.rank() == 2 && q_rows.dim(1) == key_rows.dim(1),
          "similarity: shape mismatch " + shape_str(q_rows.shape()) + " vs " +
              shape_str(key_rows.shape()));
  require(key_rows.dim(0) >= 1, "similarity: empty memory");
  auto logits = matmul(q_rows, transpose2d(key_rows));
  auto no_match = TensorT<S>::zeros({q_rows.dim(0), 1});
  return softmax_row(concat(std::vector<TensorT<S>>{no_match, logits}, 1));
}

template <class S>
TensorT<S> similarity_row(const TensorT<S>& q, const TensorT<S>& key_rows) {
  require(q.rank() == 1, "similarity_row: want a vector query");
  return reshape(similarity_matrix(reshape(q, {1, q.dim(0)}), key_rows),
                 {key_rows.dim(0) + 1});
}

// Top-K indices of one row, largest first, ties toward the smaller index.
template <class S>
std::vector<std::int64_t> select_topk(const std::vector<S>& row, int k) {
  require(k >= 1, "select_candidates: K must be >= 1");
  if (static_cast<std::size_t>(k) > row.size()) {
    log_warn_once("select_candidates: K=" + std::to_string(k) + " clamped to row length " +
                  std::to_string(row.size()));
    k = static_cast<int>(row.size());
  }
  std::vector<char> used(row.size(), 0);
  std::vector<std::int64_t> out;
  out.reserve(static_cast<std::size_t>(k));
  for (int pick = 0; pick < k; ++pick) {
    std::int64_t best = -1;
    for (std::size_t j = 0; j < row.size(); ++j)
      if (!used[j] && (best < 0 || row[j] > row[static_cast<std::size_t>(best)]))
        best = static_cast<std::int64_t>(j);
    used[static_cast<std::size_t>(best)] = 1;
    out.push_back(best);
  }
  return out;
}

namespace retrieval_detail {

// Selection is discrete, so it runs on raw data: row = [0, q.k_0, q.k_1, ...]
// per query.  The softmax is monotone, so ordering on logits equals ordering
// on the normalized row.
template <class S>
std::vector<std::int64_t> select_all(const typename TensorT<S>::Data& q, int hw,
                                     const typename TensorT<S>::Data& keys, int n, int c, int k) {
  std::vector<std::int64_t> flat;
  flat.reserve(static_cast<std::size_t>(hw) * static_cast<std::size_t>(k));
  std::vector<S> row(static_cast<std::size_t>(n) + 1);
  for (int i = 0; i < hw; ++i) {
    row[0] = S(0);
    for (int j = 0; j < n; ++j) {
      S dot = 0;
      for (int e = 0; e < c; ++e)
        dot += q[static_cast<std::size_t>(i) * c + e] * keys[static_cast<std::size_t>(j) * c + e];
      row[static_cast<std::size_t>(j) + 1] = dot;
    }
    for (std::int64_t idx : select_topk(row, k)) flat.push_back(idx);
  }
  return flat;
}

// One multi-head self-attention layer over K tokens per batch row, diagonal
// masked out so every candidate aggregates only the *other* votes.  The usual
// transformer residual keeps each candidate's own content in its token; the
// attention term adds the consensus of the others on top.
template <class S>
TensorT<S> mha(const TensorT<S>& tok, int b, int k, const RetrievalParamsT<S>& p, int heads) {
  const int d = tok.dim(1);
  const int dh = d / heads;
  auto q = linear(tok, p.wq, p.bq);
  auto kk = linear(tok, p.wk, p.bk);
  auto v = linear(tok, p.wv, p.bv);

  TensorT<S> mask;
  if (k > 1) {
    typename TensorT<S>::Data md(static_cast<std::size_t>(k) * k, S(0));
    for (int i = 0; i < k; ++i) md[static_cast<std::size_t>(i) * k + i] = S(-1e30);
    mask = TensorT<S>({k, k}, std::move(md));
  }

  std::vector<TensorT<S>> heads_out;
  heads_out.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    auto qh = reshape(slice_cols(q, h * dh, (h + 1) * dh), {b, k, dh});
    auto kh = reshape(slice_cols(kk, h * dh, (h + 1) * dh), {b, k, dh});
    auto vh = reshape(slice_cols(v, h * dh, (h + 1) * dh), {b, k, dh});
    auto logits = scale(bmm(qh, transpose_last2(kh)), S(1.0 / std::sqrt(double(dh))));
    if (k > 1) logits = add(logits, broadcast_to(mask, {b, k, k}));
    auto ctx = bmm(softmax_row(logits), vh);
    heads_out.push_back(reshape(ctx, {b * k, dh}));
  }
  return add(tok, linear(concat(heads_out, 1), p.wo, p.bo));
}

// tokens [B*K, cv+ck] -> pooled [B, cv] under the given variant.
template <class S>
TensorT<S> pool_tokens(const TensorT<S>& tokens, int b, int k, const RetrievalParamsT<S>& p,
                       int heads, RetrievalMode mode) {
  TensorT<S> per_tok;
  if (mode == RetrievalMode::voting) {
    per_tok = linear(mha(linear(tokens, p.in_w, p.in_b), b, k, p, heads), p.out_w, p.out_b);
  } else {
    per_tok = linear(relu(linear(tokens, p.mlp1_w, p.mlp1_b)), p.mlp2_w, p.mlp2_b);
  }
  return max_over_axis(reshape(per_tok, {b, k, per_tok.dim(1)}), 1);
}

}  // namespace retrieval_detail

// Single-location vote: candidate values [K, cv] + query vector [ck] -> [cv].
template <class S>
TensorT<S> vote(const TensorT<S>& cand_values, const TensorT<S>& q,
                const RetrievalParamsT<S>& p, int heads) {
  require(cand_values.rank() == 2 && cand_values.dim(0) >= 1, "vote: need at least one candidate");
  require(q.rank() == 1, "vote: want a vector query");
  const int k = cand_values.dim(0);
  auto q_rep = gather_rows(reshape(q, {1, q.dim(0)}), std::vector<std::int64_t>(k, 0));
  auto tokens = concat(std::vector<TensorT<S>>{cand_values, q_rep}, 1);
  auto pooled =
      retrieval_detail::pool_tokens(tokens, 1, k, p, heads, RetrievalMode::voting);
  return reshape(pooled, {pooled.dim(1)});
}

// Full retrieval over a query map against the memory bank.
template <class S>
TensorT<S> retrieve(const TensorT<S>& query, const std::vector<MemorySlotT<S>>& slots,
                    const RetrievalParamsT<S>& p, const RetrievalConfig& cfg) {
  cfg.validate();
  require(!slots.empty(), "retrieve: empty memory");
  require(query.rank() == 3, "retrieve: query must be [C,H,W]");
  const int h = query.dim(1), w = query.dim(2), hw = h * w;

  std::vector<TensorT<S>> key_parts, value_parts;
  key_parts.reserve(slots.size());
  value_parts.reserve(slots.size() + 1);
  value_parts.push_back(p.null_value);
  for (const auto& s : slots) {
    require(s.key.dim(0) == query.dim(0), "retrieve: key/query channel mismatch");
    key_parts.push_back(flatten_map(s.key));
    value_parts.push_back(flatten_map(s.value));
  }
  auto keys = key_parts.size() == 1 ? key_parts[0] : concat(key_parts, 0);      // [N, ck]
  auto values_ext = concat(value_parts, 0);                                     // [1+N, cv]
  auto q_rows = flatten_map(query);                                             // [HW, ck]

  if (cfg.mode == RetrievalMode::softmax) {
    // Weighted sum over the whole row, no-match value included; K unused.
    return unflatten_map(matmul(similarity_matrix(q_rows, keys), values_ext), h, w);
  }

  const auto flat = retrieval_detail::select_all<S>(q_rows.data(), hw, keys.data(),
                                                    keys.dim(0), keys.dim(1), cfg.k);
  const int k_eff = static_cast<int>(flat.size()) / hw;
  std::vector<std::int64_t> rep(flat.size());
  for (int i = 0; i < hw; ++i)
    for (int c = 0; c < k_eff; ++c) rep[static_cast<std::size_t>(i) * k_eff + c] = i;

  auto cand = gather_rows(values_ext, flat);  // [HW*K, cv]
  auto q_rep = gather_rows(q_rows, rep);      // [HW*K, ck]
  auto tokens = concat(std::vector<TensorT<S>>{cand, q_rep}, 1);
  auto pooled = retrieval_detail::pool_tokens(tokens, hw, k_eff, p, cfg.heads, cfg.mode);
  return unflatten_map(pooled, h, w);
}

}  // namespace votrack
