#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <span>

#include "votrack/tensor.hpp"

// Closed op set for the model. Every op here has a backward rule and a
// finite-difference test; new layers must add both.

namespace votrack {

namespace detail {

template <class S>
TensorT<S> make_op(Shape shape, typename TensorT<S>::Data data, const char* op,
                   const std::vector<TensorT<S>>& parents,
                   typename TensorT<S>::BackwardFn fn) {
  bool rg = false;
  for (const auto& p : parents) rg = rg || p.requires_grad();
  auto n = std::make_shared<typename TensorT<S>::Node>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  n->id = TensorT<S>::next_id();
  n->op = op;
  n->requires_grad = rg;
  if (rg) {
    n->parents.reserve(parents.size());
    for (const auto& p : parents) n->parents.push_back(p.node());
    n->backward = std::move(fn);
  }
  auto t = TensorT<S>::from_node(std::move(n));
  t.check_finite_or_throw(op);
  return t;
}

// C[m,n] = A[m,k] * B[k,n]
template <class S>
void mm_nn(const S* a, const S* b, S* c, int m, int k, int n) {
  std::fill(c, c + std::size_t(m) * n, S(0));
  for (int i = 0; i < m; ++i) {
    const S* arow = a + std::size_t(i) * k;
    S* crow = c + std::size_t(i) * n;
    for (int p = 0; p < k; ++p) {
      const S av = arow[p];
      const S* brow = b + std::size_t(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m,p] = A[m,n] * B[p,n]^T  (rows dotted with rows)
template <class S>
void mm_nt(const S* a, const S* b, S* c, int m, int n, int p) {
  for (int i = 0; i < m; ++i) {
    const S* arow = a + std::size_t(i) * n;
    S* crow = c + std::size_t(i) * p;
    for (int j = 0; j < p; ++j) {
      const S* brow = b + std::size_t(j) * n;
      S acc = S(0);
      for (int t = 0; t < n; ++t) acc += arow[t] * brow[t];
      crow[j] = acc;
    }
  }
}

// C[k,n] += A[m,k]^T * B[m,n]
template <class S>
void mm_tn_acc(const S* a, const S* b, S* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const S* arow = a + std::size_t(i) * k;
    const S* brow = b + std::size_t(i) * n;
    for (int p = 0; p < k; ++p) {
      const S av = arow[p];
      S* crow = c + std::size_t(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <class S>
void acc(S* dst, const S* src, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) dst[i] += src[i];
}

struct ConvDims {
  int cin, h, w, cout, kh, kw, stride, pad, oh, ow;
  int ckk() const { return cin * kh * kw; }
  std::size_t ohow() const { return std::size_t(oh) * ow; }
};

template <class S>
void im2col(const S* x, const ConvDims& d, S* cols) {
  // cols[(ci*kh+ky)*kw+kx][oy*ow+ox]
  for (int ci = 0; ci < d.cin; ++ci) {
    const S* xc = x + std::size_t(ci) * d.h * d.w;
    for (int ky = 0; ky < d.kh; ++ky) {
      for (int kx = 0; kx < d.kw; ++kx) {
        S* crow = cols + (std::size_t(ci) * d.kh * d.kw + std::size_t(ky) * d.kw + kx) * d.ohow();
        for (int oy = 0; oy < d.oh; ++oy) {
          const int iy = oy * d.stride - d.pad + ky;
          S* dst = crow + std::size_t(oy) * d.ow;
          if (iy < 0 || iy >= d.h) {
            std::fill(dst, dst + d.ow, S(0));
            continue;
          }
          const S* src = xc + std::size_t(iy) * d.w;
          for (int ox = 0; ox < d.ow; ++ox) {
            const int ix = ox * d.stride - d.pad + kx;
            dst[ox] = (ix >= 0 && ix < d.w) ? src[ix] : S(0);
          }
        }
      }
    }
  }
}

template <class S>
void col2im_acc(const S* cols, const ConvDims& d, S* x) {
  for (int ci = 0; ci < d.cin; ++ci) {
    S* xc = x + std::size_t(ci) * d.h * d.w;
    for (int ky = 0; ky < d.kh; ++ky) {
      for (int kx = 0; kx < d.kw; ++kx) {
        const S* crow =
            cols + (std::size_t(ci) * d.kh * d.kw + std::size_t(ky) * d.kw + kx) * d.ohow();
        for (int oy = 0; oy < d.oh; ++oy) {
          const int iy = oy * d.stride - d.pad + ky;
          if (iy < 0 || iy >= d.h) continue;
          S* dst = xc + std::size_t(iy) * d.w;
          const S* src = crow + std::size_t(oy) * d.ow;
          for (int ox = 0; ox < d.ow; ++ox) {
            const int ix = ox * d.stride - d.pad + kx;
            if (ix >= 0 && ix < d.w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

// ---- elementwise ----

template <class S>
TensorT<S> add(const TensorT<S>& a, const TensorT<S>& b) {
  require(a.shape() == b.shape(),
          "add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  typename TensorT<S>::Data d(a.data());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += b.data()[i];
  return detail::make_op<S>(a.shape(), std::move(d), "add", {a, b},
                            [](const auto& g, auto& pg) {
                              if (pg[0]) detail::acc(pg[0]->data(), g.data(), g.size());
                              if (pg[1]) detail::acc(pg[1]->data(), g.data(), g.size());
                            });
}

template <class S>
TensorT<S> sub(const TensorT<S>& a, const TensorT<S>& b) {
  require(a.shape() == b.shape(),
          "sub: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  typename TensorT<S>::Data d(a.data());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] -= b.data()[i];
  return detail::make_op<S>(a.shape(), std::move(d), "sub", {a, b},
                            [](const auto& g, auto& pg) {
                              if (pg[0]) detail::acc(pg[0]->data(), g.data(), g.size());
                              if (pg[1])
                                for (std::size_t i = 0; i < g.size(); ++i) (*pg[1])[i] -= g[i];
                            });
}

template <class S>
TensorT<S> mul(const TensorT<S>& a, const TensorT<S>& b) {
  require(a.shape() == b.shape(),
          "mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  typename TensorT<S>::Data d(a.data());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] *= b.data()[i];
  return detail::make_op<S>(a.shape(), std::move(d), "mul", {a, b},
                            [a, b](const auto& g, auto& pg) {
                              if (pg[0])
                                for (std::size_t i = 0; i < g.size(); ++i)
                                  (*pg[0])[i] += g[i] * b.data()[i];
                              if (pg[1])
                                for (std::size_t i = 0; i < g.size(); ++i)
                                  (*pg[1])[i] += g[i] * a.data()[i];
                            });
}

template <class S>
TensorT<S> scale(const TensorT<S>& a, S c) {
  typename TensorT<S>::Data d(a.data());
  for (auto& v : d) v *= c;
  return detail::make_op<S>(a.shape(), std::move(d), "scale", {a},
                            [c](const auto& g, auto& pg) {
                              if (pg[0])
                                for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += g[i] * c;
                            });
}

template <class S>
TensorT<S> add_scalar(const TensorT<S>& a, S c) {
  typename TensorT<S>::Data d(a.data());
  for (auto& v : d) v += c;
  return detail::make_op<S>(a.shape(), std::move(d), "add_scalar", {a},
                            [](const auto& g, auto& pg) {
                              if (pg[0]) detail::acc(pg[0]->data(), g.data(), g.size());
                            });
}

template <class S>
TensorT<S> relu(const TensorT<S>& a) {
  typename TensorT<S>::Data d(a.data());
  for (auto& v : d) v = v > S(0) ? v : S(0);
  return detail::make_op<S>(a.shape(), std::move(d), "relu", {a},
                            [a](const auto& g, auto& pg) {
                              if (!pg[0]) return;
                              for (std::size_t i = 0; i < g.size(); ++i)
                                if (a.data()[i] > S(0)) (*pg[0])[i] += g[i];
                            });
}

template <class S>
TensorT<S> exp(const TensorT<S>& a) {
  typename TensorT<S>::Data d(a.data());
  for (auto& v : d) v = std::exp(v);
  // backward keeps a copy of the outputs, not the output node (no ref cycle)
  auto y = std::make_shared<typename TensorT<S>::Data>(d);
  return detail::make_op<S>(a.shape(), std::move(d), "exp", {a},
                            [y](const auto& g, auto& pg) {
                              if (!pg[0]) return;
                              for (std::size_t i = 0; i < g.size(); ++i)
                                (*pg[0])[i] += g[i] * (*y)[i];
                            });
}

template <class S>
TensorT<S> log(const TensorT<S>& a) {
  typename TensorT<S>::Data d(a.data());
  for (auto& v : d) v = std::log(v);
  return detail::make_op<S>(a.shape(), std::move(d), "log", {a},
                            [a](const auto& g, auto& pg) {
                              if (!pg[0]) return;
                              for (std::size_t i = 0; i < g.size(); ++i)
                                (*pg[0])[i] += g[i] / a.data()[i];
                            });
}

template <class S>
TensorT<S> sigmoid(const TensorT<S>& a) {
  typename TensorT<S>::Data d(a.data());
  for (auto& v : d) v = S(1) / (S(1) + std::exp(-v));
  auto y = std::make_shared<typename TensorT<S>::Data>(d);
  return detail::make_op<S>(a.shape(), std::move(d), "sigmoid", {a},
                            [y](const auto& g, auto& pg) {
                              if (!pg[0]) return;
                              for (std::size_t i = 0; i < g.size(); ++i) {
                                const S yv = (*y)[i];
                                (*pg[0])[i] += g[i] * yv * (S(1) - yv);
                              }
                            });
}

template <class S>
TensorT<S> clamp(const TensorT<S>& a, S lo, S hi) {
  require(lo < hi, "clamp: lo must be < hi");
  typename TensorT<S>::Data d(a.data());
  for (auto& v : d) v = std::min(hi, std::max(lo, v));
  return detail::make_op<S>(a.shape(), std::move(d), "clamp", {a},
                            [a, lo, hi](const auto& g, auto& pg) {
                              if (!pg[0]) return;
                              for (std::size_t i = 0; i < g.size(); ++i) {
                                const S x = a.data()[i];
                                if (x >= lo && x <= hi) (*pg[0])[i] += g[i];
                              }
                            });
}

// Keeps entries >= t, zeroes the rest. Gradient passes only through kept entries.
template <class S>
TensorT<S> threshold_keep(const TensorT<S>& a, S t) {
  typename TensorT<S>::Data d(a.data());
  for (auto& v : d) v = v >= t ? v : S(0);
  return detail::make_op<S>(a.shape(), std::move(d), "threshold_keep", {a},
                            [a, t](const auto& g, auto& pg) {
                              if (!pg[0]) return;
                              for (std::size_t i = 0; i < g.size(); ++i)
                                if (a.data()[i] >= t) (*pg[0])[i] += g[i];
                            });
}

// Elementwise Huber: 0.5 d^2 for |d| < 1, |d| - 0.5 otherwise.
template <class S>
TensorT<S> smooth_l1(const TensorT<S>& a) {
  typename TensorT<S>::Data d(a.data());
  for (auto& v : d) {
    const S x = std::abs(v);
    v = x < S(1) ? S(0.5) * x * x : x - S(0.5);
  }
  return detail::make_op<S>(a.shape(), std::move(d), "smooth_l1", {a},
                            [a](const auto& g, auto& pg) {
                              if (!pg[0]) return;
                              for (std::size_t i = 0; i < g.size(); ++i) {
                                const S x = a.data()[i];
                                const S dx = std::abs(x) < S(1) ? x : (x > S(0) ? S(1) : S(-1));
                                (*pg[0])[i] += g[i] * dx;
                              }
                            });
}

// ---- reductions ----

template <class S>
TensorT<S> sum(const TensorT<S>& a) {
  S acc = S(0);
  for (const S v : a.data()) acc += v;
  return detail::make_op<S>(Shape{1}, {acc}, "sum", {a},
                            [](const auto& g, auto& pg) {
                              if (!pg[0]) return;
                              for (auto& v : *pg[0]) v += g[0];
                            });
}

template <class S>
TensorT<S> dot(const TensorT<S>& a, const TensorT<S>& b) {
  require(a.numel() == b.numel(),
          "dot: length mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  S acc = S(0);
  for (std::size_t i = 0; i < a.data().size(); ++i) acc += a.data()[i] * b.data()[i];
  return detail::make_op<S>(Shape{1}, {acc}, "dot", {a, b},
                            [a, b](const auto& g, auto& pg) {
                              if (pg[0])
                                for (std::size_t i = 0; i < a.data().size(); ++i)
                                  (*pg[0])[i] += g[0] * b.data()[i];
                              if (pg[1])
                                for (std::size_t i = 0; i < a.data().size(); ++i)
                                  (*pg[1])[i] += g[0] * a.data()[i];
                            });
}

// Max over one axis; that axis is dropped from the shape. Ties go to the
// lowest index, which also receives the full gradient.
template <class S>
TensorT<S> max_over_axis(const TensorT<S>& a, int axis) {
  require(axis >= 0 && axis < a.rank(), "max_over_axis: bad axis");
  const auto& sh = a.shape();
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= sh[i];
  for (int i = axis + 1; i < a.rank(); ++i) inner *= sh[i];
  const int n = sh[axis];
  require(n >= 1, "max_over_axis: empty axis");
  Shape osh;
  for (int i = 0; i < a.rank(); ++i)
    if (i != axis) osh.push_back(sh[i]);
  if (osh.empty()) osh.push_back(1);

  typename TensorT<S>::Data d(static_cast<std::size_t>(outer * inner));
  auto argmax = std::make_shared<std::vector<std::int64_t>>(d.size());
  const S* x = a.data().data();
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t i = 0; i < inner; ++i) {
      std::int64_t best = 0;
      S bv = x[(o * n) * inner + i];
      for (int t = 1; t < n; ++t) {
        const S v = x[(o * n + t) * inner + i];
        if (v > bv) {
          bv = v;
          best = t;
        }
      }
      d[static_cast<std::size_t>(o * inner + i)] = bv;
      (*argmax)[static_cast<std::size_t>(o * inner + i)] = (o * n + best) * inner + i;
    }
  }
  return detail::make_op<S>(std::move(osh), std::move(d), "max_over_axis", {a},
                            [argmax](const auto& g, auto& pg) {
                              if (!pg[0]) return;
                              for (std::size_t i = 0; i < g.size(); ++i)
                                (*pg[0])[static_cast<std::size_t>((*argmax)[i])] += g[i];
                            });
}

// Softmax over the last axis, max-subtracted for stability.
template <class S>
TensorT<S> softmax_row(const TensorT<S>& a) {
  require(a.rank() >= 1, "softmax_row: needs rank >= 1");
  const int n = a.shape().back();
  require(n >= 1, "softmax_row: empty rows");
  const std::int64_t rows = a.numel() / n;
  typename TensorT<S>::Data d(a.data());
  for (std::int64_t r = 0; r < rows; ++r) {
    S* row = d.data() + r * n;
    S m = row[0];
    for (int j = 1; j < n; ++j) m = std::max(m, row[j]);
    S s = S(0);
    for (int j = 0; j < n; ++j) {
      row[j] = std::exp(row[j] - m);
      s += row[j];
    }
    for (int j = 0; j < n; ++j) row[j] /= s;
  }
  auto y = std::make_shared<typename TensorT<S>::Data>(d);
  return detail::make_op<S>(a.shape(), std::move(d), "softmax_row", {a},
                            [y, n, rows](const auto& g, auto& pg) {
                              if (!pg[0]) return;
                              for (std::int64_t r = 0; r < rows; ++r) {
                                const S* yr = y->data() + r * n;
                                const S* gr = g.data() + r * n;
                                S dotgy = S(0);
                                for (int j = 0; j < n; ++j) dotgy += gr[j] * yr[j];
                                S* p = pg[0]->data() + r * n;
                                for (int j = 0; j < n; ++j) p[j] += yr[j] * (gr[j] - dotgy);
                              }
                            });
}

// ---- linear algebra ----

template <class S>
TensorT<S> matmul(const TensorT<S>& a, const TensorT<S>& b) {
  require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0),
          "matmul: incompatible shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  typename TensorT<S>::Data d(std::size_t(m) * n);
  detail::mm_nn(a.data().data(), b.data().data(), d.data(), m, k, n);
  return detail::make_op<S>(
      Shape{m, n}, std::move(d), "matmul", {a, b},
      [a, b, m, k, n](const auto& g, auto& pg) {
        if (pg[0]) {  // dA = G * B^T
          std::vector<S> tmp(std::size_t(m) * k);
          detail::mm_nt(g.data(), b.data().data(), tmp.data(), m, n, k);
          detail::acc(pg[0]->data(), tmp.data(), tmp.size());
        }
        if (pg[1])  // dB += A^T * G
          detail::mm_tn_acc(a.data().data(), g.data(), pg[1]->data(), m, k, n);
      });
}

// Batched matmul: [B,m,k] x [B,k,n] -> [B,m,n].
template <class S>
TensorT<S> bmm(const TensorT<S>& a, const TensorT<S>& b) {
  require(a.rank() == 3 && b.rank() == 3 && a.dim(0) == b.dim(0) && a.dim(2) == b.dim(1),
          "bmm: incompatible shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const int B = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  typename TensorT<S>::Data d(std::size_t(B) * m * n);
  for (int s = 0; s < B; ++s)
    detail::mm_nn(a.data().data() + std::size_t(s) * m * k, b.data().data() + std::size_t(s) * k * n,
                  d.data() + std::size_t(s) * m * n, m, k, n);
  return detail::make_op<S>(
      Shape{B, m, n}, std::move(d), "bmm", {a, b},
      [a, b, B, m, k, n](const auto& g, auto& pg) {
        for (int s = 0; s < B; ++s) {
          const S* gs = g.data() + std::size_t(s) * m * n;
          if (pg[0]) {
            std::vector<S> tmp(std::size_t(m) * k);
            detail::mm_nt(gs, b.data().data() + std::size_t(s) * k * n, tmp.data(), m, n, k);
            detail::acc(pg[0]->data() + std::size_t(s) * m * k, tmp.data(), tmp.size());
          }
          if (pg[1])
            detail::mm_tn_acc(a.data().data() + std::size_t(s) * m * k, gs,
                              pg[1]->data() + std::size_t(s) * k * n, m, k, n);
        }
      });
}

template <class S>
TensorT<S> transpose2d(const TensorT<S>& a) {
  require(a.rank() == 2, "transpose2d: needs rank 2, got " + shape_str(a.shape()));
  const int m = a.dim(0), n = a.dim(1);
  typename TensorT<S>::Data d(a.data().size());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) d[std::size_t(j) * m + i] = a.data()[std::size_t(i) * n + j];
  return detail::make_op<S>(Shape{n, m}, std::move(d), "transpose2d", {a},
                            [m, n](const auto& g, auto& pg) {
                              if (!pg[0]) return;
                              for (int i = 0; i < n; ++i)
                                for (int j = 0; j < m; ++j)
                                  (*pg[0])[std::size_t(j) * n + i] += g[std::size_t(i) * m + j];
                            });
}

// Transpose the last two axes of a rank-3 tensor: [B,m,n] -> [B,n,m].
template <class S>
TensorT<S> transpose_last2(const TensorT<S>& a) {
  require(a.rank() == 3, "transpose_last2: needs rank 3, got " + shape_str(a.shape()));
  const int B = a.dim(0), m = a.dim(1), n = a.dim(2);
  typename TensorT<S>::Data d(a.data().size());
  for (int s = 0; s < B; ++s) {
    const S* src = a.data().data() + std::size_t(s) * m * n;
    S* dst = d.data() + std::size_t(s) * m * n;
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) dst[std::size_t(j) * m + i] = src[std::size_t(i) * n + j];
  }
  return detail::make_op<S>(Shape{B, n, m}, std::move(d), "transpose_last2", {a},
                            [B, m, n](const auto& g, auto& pg) {
                              if (!pg[0]) return;
                              for (int s = 0; s < B; ++s) {
                                const S* gs = g.data() + std::size_t(s) * m * n;
                                S* p = pg[0]->data() + std::size_t(s) * m * n;
                                for (int i = 0; i < n; ++i)
                                  for (int j = 0; j < m; ++j)
                                    p[std::size_t(j) * n + i] += gs[std::size_t(i) * m + j];
                              }
                            });
}

// x[N,din] * w[dout,din]^T + b[dout]
template <class S>
TensorT<S> linear(const TensorT<S>& x, const TensorT<S>& w, const TensorT<S>& b) {
  require(x.rank() == 2 && w.rank() == 2 && b.rank() == 1 && x.dim(1) == w.dim(1) &&
              w.dim(0) == b.dim(0),
          "linear: incompatible shapes x" + shape_str(x.shape()) + " w" + shape_str(w.shape()) +
              " b" + shape_str(b.shape()));
  const int N = x.dim(0), din = x.dim(1), dout = w.dim(0);
  typename TensorT<S>::Data d(std::size_t(N) * dout);
  detail::mm_nt(x.data().data(), w.data().data(), d.data(), N, din, dout);
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < dout; ++j) d[std::size_t(i) * dout + j] += b.data()[j];
  return detail::make_op<S>(
      Shape{N, dout}, std::move(d), "linear", {x, w, b},
      [x, w, N, din, dout](const auto& g, auto& pg) {
        if (pg[0]) {  // dx = G * W
          std::vector<S> tmp(std::size_t(N) * din);
          detail::mm_nn(g.data(), w.data().data(), tmp.data(), N, dout, din);
          detail::acc(pg[0]->data(), tmp.data(), tmp.size());
        }
        if (pg[1])  // dW += G^T * x
          detail::mm_tn_acc(g.data(), x.data().data(), pg[1]->data(), N, dout, din);
        if (pg[2])
          for (int i = 0; i < N; ++i)
            for (int j = 0; j < dout; ++j) (*pg[2])[j] += g[std::size_t(i) * dout + j];
      });
}

// 2-D convolution, zero padding, odd kernels, stride 1 or 2.
// x[Cin,H,W], w[Cout,Cin,kh,kw], b[Cout] -> [Cout,OH,OW]
template <class S>
TensorT<S> conv2d(const TensorT<S>& x, const TensorT<S>& w, const TensorT<S>& b, int stride,
                  int pad) {
  require(x.rank() == 3 && w.rank() == 4 && b.rank() == 1, "conv2d: bad ranks");
  require(x.dim(0) == w.dim(1),
          "conv2d: channel mismatch x" + shape_str(x.shape()) + " w" + shape_str(w.shape()));
  require(w.dim(0) == b.dim(0), "conv2d: bias size mismatch");
  require(stride == 1 || stride == 2, "conv2d: stride must be 1 or 2");
  require(w.dim(2) % 2 == 1 && w.dim(3) % 2 == 1, "conv2d: kernel sizes must be odd");
  require(pad >= 0, "conv2d: negative padding");
  detail::ConvDims dd;
  dd.cin = x.dim(0);
  dd.h = x.dim(1);
  dd.w = x.dim(2);
  dd.cout = w.dim(0);
  dd.kh = w.dim(2);
  dd.kw = w.dim(3);
  dd.stride = stride;
  dd.pad = pad;
  dd.oh = (dd.h + 2 * pad - dd.kh) / stride + 1;
  dd.ow = (dd.w + 2 * pad - dd.kw) / stride + 1;
  require(dd.oh >= 1 && dd.ow >= 1, "conv2d: kernel larger than padded input");

  std::vector<S> cols(std::size_t(dd.ckk()) * dd.ohow());
  detail::im2col(x.data().data(), dd, cols.data());
  typename TensorT<S>::Data d(std::size_t(dd.cout) * dd.ohow());
  detail::mm_nn(w.data().data(), cols.data(), d.data(), dd.cout, dd.ckk(),
                static_cast<int>(dd.ohow()));
  for (int co = 0; co < dd.cout; ++co) {
    S* row = d.data() + std::size_t(co) * dd.ohow();
    const S bv = b.data()[co];
    for (std::size_t i = 0; i < dd.ohow(); ++i) row[i] += bv;
  }
  return detail::make_op<S>(
      Shape{dd.cout, dd.oh, dd.ow}, std::move(d), "conv2d", {x, w, b},
      // im2col is recomputed here rather than saved; activations stay the
      // only per-op memory.
      [x, w, dd](const auto& g, auto& pg) {
        const int ohow = static_cast<int>(dd.ohow());
        std::vector<S> cols(std::size_t(dd.ckk()) * dd.ohow());
        detail::im2col(x.data().data(), dd, cols.data());
        if (pg[1])  // dW += G * cols^T
          for (int co = 0; co < dd.cout; ++co) {
            const S* grow = g.data() + std::size_t(co) * dd.ohow();
            S* wrow = pg[1]->data() + std::size_t(co) * dd.ckk();
            for (int r = 0; r < dd.ckk(); ++r) {
              const S* crow = cols.data() + std::size_t(r) * dd.ohow();
              S a = S(0);
              for (int i = 0; i < ohow; ++i) a += grow[i] * crow[i];
              wrow[r] += a;
            }
          }
        if (pg[2])
          for (int co = 0; co < dd.cout; ++co) {
            const S* grow = g.data() + std::size_t(co) * dd.ohow();
            S a = S(0);
            for (int i = 0; i < ohow; ++i) a += grow[i];
            (*pg[2])[co] += a;
          }
        if (pg[0]) {  // dcols = W^T * G, then scatter back to x
          std::vector<S> dcols(std::size_t(dd.ckk()) * dd.ohow(), S(0));
          detail::mm_tn_acc(w.data().data(), g.data(), dcols.data(), dd.cout, dd.ckk(), ohow);
          detail::col2im_acc(dcols.data(), dd, pg[0]->data());
        }
      });
}

// ---- structure ----

template <class S>
TensorT<S> reshape(const TensorT<S>& a, Shape shape) {
  require(votrack::numel(shape) == a.numel(),
          "reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape) + " changes size");
  typename TensorT<S>::Data d(a.data());
  return detail::make_op<S>(std::move(shape), std::move(d), "reshape", {a},
                            [](const auto& g, auto& pg) {
                              if (pg[0]) detail::acc(pg[0]->data(), g.data(), g.size());
                            });
}

template <class S>
TensorT<S> concat(const std::vector<TensorT<S>>& parts, int axis) {
  require(!parts.empty(), "concat: no inputs");
  const int rank = parts[0].rank();
  require(axis >= 0 && axis < rank, "concat: bad axis");
  Shape osh = parts[0].shape();
  for (std::size_t t = 1; t < parts.size(); ++t) {
    require(parts[t].rank() == rank, "concat: rank mismatch");
    for (int i = 0; i < rank; ++i)
      if (i != axis)
        require(parts[t].dim(i) == osh[i], "concat: shape mismatch at input " + std::to_string(t) +
                                               ": " + shape_str(parts[t].shape()));
    osh[axis] += parts[t].dim(axis);
  }
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= osh[i];
  for (int i = axis + 1; i < rank; ++i) inner *= osh[i];

  typename TensorT<S>::Data d(static_cast<std::size_t>(votrack::numel(osh)));
  std::vector<std::int64_t> chunk(parts.size());
  for (std::size_t t = 0; t < parts.size(); ++t) chunk[t] = parts[t].dim(axis) * inner;
  const std::int64_t orow = osh[axis] * inner;
  for (std::int64_t o = 0; o < outer; ++o) {
    std::int64_t off = 0;
    for (std::size_t t = 0; t < parts.size(); ++t) {
      std::memcpy(d.data() + o * orow + off, parts[t].data().data() + o * chunk[t],
                  static_cast<std::size_t>(chunk[t]) * sizeof(S));
      off += chunk[t];
    }
  }
  return detail::make_op<S>(
      std::move(osh), std::move(d), "concat", parts,
      [outer, orow, chunk](const auto& g, auto& pg) {
        for (std::int64_t o = 0; o < outer; ++o) {
          std::int64_t off = 0;
          for (std::size_t t = 0; t < chunk.size(); ++t) {
            if (pg[t])
              detail::acc(pg[t]->data() + o * chunk[t], g.data() + o * orow + off,
                          static_cast<std::size_t>(chunk[t]));
            off += chunk[t];
          }
        }
      });
}

template <class S>
TensorT<S> slice_cols(const TensorT<S>& a, int c0, int c1) {
  require(a.rank() == 2, "slice_cols: needs rank 2");
  const int N = a.dim(0), C = a.dim(1);
  require(0 <= c0 && c0 < c1 && c1 <= C, "slice_cols: bad range");
  const int w = c1 - c0;
  typename TensorT<S>::Data d(std::size_t(N) * w);
  for (int i = 0; i < N; ++i)
    std::memcpy(d.data() + std::size_t(i) * w, a.data().data() + std::size_t(i) * C + c0,
                std::size_t(w) * sizeof(S));
  return detail::make_op<S>(Shape{N, w}, std::move(d), "slice_cols", {a},
                            [N, C, c0, w](const auto& g, auto& pg) {
                              if (!pg[0]) return;
                              for (int i = 0; i < N; ++i)
                                detail::acc(pg[0]->data() + std::size_t(i) * C + c0,
                                            g.data() + std::size_t(i) * w, std::size_t(w));
                            });
}

// Row gather: x[N,C], idx[K] -> [K,C]. Rows may repeat; backward scatter-adds.
template <class S>
TensorT<S> gather_rows(const TensorT<S>& a, const std::vector<std::int64_t>& idx) {
  require(a.rank() == 2, "gather_rows: needs rank 2");
  const int N = a.dim(0), C = a.dim(1);
  typename TensorT<S>::Data d(idx.size() * std::size_t(C));
  for (std::size_t i = 0; i < idx.size(); ++i) {
    require(idx[i] >= 0 && idx[i] < N, "gather_rows: index out of range");
    std::memcpy(d.data() + i * C, a.data().data() + std::size_t(idx[i]) * C,
                std::size_t(C) * sizeof(S));
  }
  auto ix = std::make_shared<std::vector<std::int64_t>>(idx);
  return detail::make_op<S>(Shape{static_cast<int>(idx.size()), C}, std::move(d), "gather_rows",
                            {a}, [ix, C](const auto& g, auto& pg) {
                              if (!pg[0]) return;
                              for (std::size_t i = 0; i < ix->size(); ++i)
                                detail::acc(pg[0]->data() + std::size_t((*ix)[i]) * C,
                                            g.data() + i * C, std::size_t(C));
                            });
}

// Flat-index gather: take(x, idx) -> [len(idx)].
template <class S>
TensorT<S> take(const TensorT<S>& a, const std::vector<std::int64_t>& idx) {
  typename TensorT<S>::Data d(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    require(idx[i] >= 0 && idx[i] < a.numel(), "take: index out of range");
    d[i] = a.data()[static_cast<std::size_t>(idx[i])];
  }
  auto ix = std::make_shared<std::vector<std::int64_t>>(idx);
  return detail::make_op<S>(Shape{static_cast<int>(idx.size())}, std::move(d), "take", {a},
                            [ix](const auto& g, auto& pg) {
                              if (!pg[0]) return;
                              for (std::size_t i = 0; i < ix->size(); ++i)
                                (*pg[0])[static_cast<std::size_t>((*ix)[i])] += g[i];
                            });
}

// Broadcast: scalar -> any; [C] -> [C,H,W]; [m,n] -> [B,m,n].
template <class S>
TensorT<S> broadcast_to(const TensorT<S>& a, Shape shape) {
  const std::int64_t on = votrack::numel(shape);
  typename TensorT<S>::Data d(static_cast<std::size_t>(on));
  enum class Mode { kScalar, kChannel, kBatch } mode;
  if (a.numel() == 1) {
    mode = Mode::kScalar;
    std::fill(d.begin(), d.end(), a.data()[0]);
  } else if (a.rank() == 1 && shape.size() == 3 && a.dim(0) == shape[0]) {
    mode = Mode::kChannel;
    const std::int64_t hw = std::int64_t(shape[1]) * shape[2];
    for (int c = 0; c < shape[0]; ++c)
      std::fill(d.begin() + c * hw, d.begin() + (c + 1) * hw, a.data()[c]);
  } else if (a.rank() == 2 && shape.size() == 3 && a.dim(0) == shape[1] && a.dim(1) == shape[2]) {
    mode = Mode::kBatch;
    for (int s = 0; s < shape[0]; ++s)
      std::memcpy(d.data() + std::size_t(s) * a.numel(), a.data().data(),
                  static_cast<std::size_t>(a.numel()) * sizeof(S));
  } else {
    throw contract_error("broadcast_to: unsupported " + shape_str(a.shape()) + " -> " +
                         shape_str(shape));
  }
  const std::int64_t an = a.numel();
  return detail::make_op<S>(
      std::move(shape), std::move(d), "broadcast_to", {a},
      [mode, an, on](const auto& g, auto& pg) {
        if (!pg[0]) return;
        switch (mode) {
          case Mode::kScalar: {
            S acc = S(0);
            for (const S v : g) acc += v;
            (*pg[0])[0] += acc;
            break;
          }
          case Mode::kChannel: {
            const std::int64_t hw = on / an;
            for (std::int64_t c = 0; c < an; ++c) {
              S acc = S(0);
              for (std::int64_t i = 0; i < hw; ++i)
                acc += g[static_cast<std::size_t>(c * hw + i)];
              (*pg[0])[static_cast<std::size_t>(c)] += acc;
            }
            break;
          }
          case Mode::kBatch: {
            const std::int64_t B = on / an;
            for (std::int64_t s = 0; s < B; ++s)
              detail::acc(pg[0]->data(), g.data() + s * an, static_cast<std::size_t>(an));
            break;
          }
        }
      });
}

}  // namespace votrack
