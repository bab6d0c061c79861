#pragma once

/// Minimal dense float tensor with a reverse-mode gradient tape.
///
/// Design: a Graph owns every node (immediate-mode forward evaluation); a
/// Tensor is a lightweight {graph, id} handle.  Node ids increase in creation
/// order, which IS a topological order, so backward() is a single descending
/// sweep that visits each node exactly once.  All ops are shape-checked and
/// throw gsup::Error naming both shapes on mismatch.  The element type is a
/// template parameter: float for training, double for finite-difference
/// verification.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "gsup/vecmath.hpp"

namespace gsup {

template <class T>
using EigenMat =
    Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<EigenMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const EigenMat<T>>;

using Shape = std::vector<int>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ")";
  return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) {
    if (d < 0) throw Error("negative tensor extent in shape " + shape_str(s));
    n *= std::size_t(d);
  }
  return n;
}

template <class T>
class Graph;

/// Handle to a node inside a Graph.
template <class T>
struct Tensor {
  Graph<T>* graph = nullptr;
  int id = -1;

  bool valid() const { return graph != nullptr && id >= 0; }
};

template <class T>
class Graph {
 public:
  struct Node {
    Shape shape;
    std::vector<T> val;
    std::vector<T> grad;
    std::function<void()> backward;  // null for leaves
    const char* op = "leaf";
  };

  /// Optional checks/telemetry.
  bool debug_check_finite = false;
  /// When true, every attention op appends its worst |row sum - 1| here.
  bool record_attention = false;
  std::vector<T> attention_row_sum_dev;

  // ---- node access -------------------------------------------------------

  std::size_t size() const { return nodes_.size(); }
  const Shape& shape(Tensor<T> t) const { return at(t).shape; }
  const char* op_name(Tensor<T> t) const { return at(t).op; }
  std::vector<T>& value(Tensor<T> t) { return at(t).val; }
  const std::vector<T>& value(Tensor<T> t) const { return at(t).val; }
  std::vector<T>& grad(Tensor<T> t) { return at(t).grad; }
  const std::vector<T>& grad(Tensor<T> t) const { return at(t).grad; }

  int rows(Tensor<T> t) const { return dim2(t).first; }
  int cols(Tensor<T> t) const { return dim2(t).second; }

  // ---- leaves ------------------------------------------------------------

  Tensor<T> input(const Shape& shape, const std::vector<T>& data,
                  const char* what = "input") {
    if (data.size() != shape_numel(shape))
      throw Error(std::string(what) + ": data length " +
                  std::to_string(data.size()) + " does not match shape " +
                  shape_str(shape));
    return make(shape, data, nullptr, what);
  }

  Tensor<T> zeros(const Shape& shape, const char* what = "zeros") {
    return make(shape, std::vector<T>(shape_numel(shape), T(0)), nullptr, what);
  }

  // ---- elementwise -------------------------------------------------------

  Tensor<T> add(Tensor<T> a, Tensor<T> b) {
    check_same_shape("add", a, b);
    Tensor<T> out = like(a, "add");
    std::vector<T>& o = at(out).val;
    const std::vector<T>&av = at(a).val, &bv = at(b).val;
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] + bv[i];
    set_backward(out, [this, a, b, out] {
      const std::vector<T>& g = at(out).grad;
      accum(a, g, T(1));
      accum(b, g, T(1));
    });
    return finish(out);
  }

  Tensor<T> sub(Tensor<T> a, Tensor<T> b) {
    check_same_shape("sub", a, b);
    Tensor<T> out = like(a, "sub");
    std::vector<T>& o = at(out).val;
    const std::vector<T>&av = at(a).val, &bv = at(b).val;
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] - bv[i];
    set_backward(out, [this, a, b, out] {
      const std::vector<T>& g = at(out).grad;
      accum(a, g, T(1));
      accum(b, g, T(-1));
    });
    return finish(out);
  }

  Tensor<T> mul(Tensor<T> a, Tensor<T> b) {
    check_same_shape("mul", a, b);
    Tensor<T> out = like(a, "mul");
    std::vector<T>& o = at(out).val;
    const std::vector<T>&av = at(a).val, &bv = at(b).val;
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] * bv[i];
    set_backward(out, [this, a, b, out] {
      const std::vector<T>& g = at(out).grad;
      std::vector<T>&ga = at(a).grad, &gb = at(b).grad;
      const std::vector<T>&av = at(a).val, &bv = at(b).val;
      for (std::size_t i = 0; i < g.size(); ++i) {
        ga[i] += g[i] * bv[i];
        gb[i] += g[i] * av[i];
      }
    });
    return finish(out);
  }

  Tensor<T> scale(Tensor<T> a, T s) {
    Tensor<T> out = like(a, "scale");
    std::vector<T>& o = at(out).val;
    const std::vector<T>& av = at(a).val;
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] * s;
    set_backward(out, [this, a, out, s] { accum(a, at(out).grad, s); });
    return finish(out);
  }

  Tensor<T> tanh_op(Tensor<T> a) {
    Tensor<T> out = like(a, "tanh");
    std::vector<T>& o = at(out).val;
    const std::vector<T>& av = at(a).val;
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::tanh(av[i]);
    set_backward(out, [this, a, out] {
      const std::vector<T>&g = at(out).grad, &y = at(out).val;
      std::vector<T>& ga = at(a).grad;
      for (std::size_t i = 0; i < g.size(); ++i)
        ga[i] += g[i] * (T(1) - y[i] * y[i]);
    });
    return finish(out);
  }

  Tensor<T> sigmoid(Tensor<T> a) {
    Tensor<T> out = like(a, "sigmoid");
    std::vector<T>& o = at(out).val;
    const std::vector<T>& av = at(a).val;
    for (std::size_t i = 0; i < o.size(); ++i)
      o[i] = T(1) / (T(1) + std::exp(-av[i]));
    set_backward(out, [this, a, out] {
      const std::vector<T>&g = at(out).grad, &y = at(out).val;
      std::vector<T>& ga = at(a).grad;
      for (std::size_t i = 0; i < g.size(); ++i)
        ga[i] += g[i] * y[i] * (T(1) - y[i]);
    });
    return finish(out);
  }

  /// Exact (erf-form) GELU.
  Tensor<T> gelu(Tensor<T> a) {
    Tensor<T> out = like(a, "gelu");
    std::vector<T>& o = at(out).val;
    const std::vector<T>& av = at(a).val;
    const T inv_sqrt2 = T(0.7071067811865475244);
    for (std::size_t i = 0; i < o.size(); ++i)
      o[i] = T(0.5) * av[i] * (T(1) + std::erf(av[i] * inv_sqrt2));
    set_backward(out, [this, a, out, inv_sqrt2] {
      const std::vector<T>& g = at(out).grad;
      const std::vector<T>& x = at(a).val;
      std::vector<T>& ga = at(a).grad;
      const T inv_sqrt2pi = T(0.3989422804014326779);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const T cdf = T(0.5) * (T(1) + std::erf(x[i] * inv_sqrt2));
        const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * x[i] * x[i]);
        ga[i] += g[i] * (cdf + x[i] * pdf);
      }
    });
    return finish(out);
  }

  Tensor<T> exp_op(Tensor<T> a) {
    Tensor<T> out = like(a, "exp");
    std::vector<T>& o = at(out).val;
    const std::vector<T>& av = at(a).val;
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::exp(av[i]);
    set_backward(out, [this, a, out] {
      const std::vector<T>&g = at(out).grad, &y = at(out).val;
      std::vector<T>& ga = at(a).grad;
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
    });
    return finish(out);
  }

  /// Hard clamp; gradient passes only strictly inside (lo, hi).
  Tensor<T> clamp(Tensor<T> a, T lo, T hi) {
    Tensor<T> out = like(a, "clamp");
    std::vector<T>& o = at(out).val;
    const std::vector<T>& av = at(a).val;
    for (std::size_t i = 0; i < o.size(); ++i)
      o[i] = std::min(hi, std::max(lo, av[i]));
    set_backward(out, [this, a, out, lo, hi] {
      const std::vector<T>& g = at(out).grad;
      const std::vector<T>& x = at(a).val;
      std::vector<T>& ga = at(a).grad;
      for (std::size_t i = 0; i < g.size(); ++i)
        if (x[i] > lo && x[i] < hi) ga[i] += g[i];
    });
    return finish(out);
  }

  // ---- shape manipulation ------------------------------------------------

  Tensor<T> reshape(Tensor<T> a, const Shape& shape) {
    if (shape_numel(shape) != at(a).val.size())
      throw Error("reshape: " + shape_str(at(a).shape) + " to " +
                  shape_str(shape) + " changes the element count");
    Tensor<T> out = make(shape, at(a).val, nullptr, "reshape");
    set_backward(out, [this, a, out] { accum(a, at(out).grad, T(1)); });
    return finish(out);
  }

  Tensor<T> transpose(Tensor<T> a) {
    auto [r, c] = dim2(a);
    Tensor<T> out = make({c, r}, std::vector<T>(std::size_t(r) * c), nullptr,
                         "transpose");
    ConstMatMap<T> av(at(a).val.data(), r, c);
    MatMap<T>(at(out).val.data(), c, r) = av.transpose();
    set_backward(out, [this, a, out, r, c] {
      ConstMatMap<T> g(at(out).grad.data(), c, r);
      MatMap<T>(at(a).grad.data(), r, c) += g.transpose();
    });
    return finish(out);
  }

  /// Concatenate two 2D tensors along rows (axis 0) or columns (axis 1).
  Tensor<T> concat(Tensor<T> a, Tensor<T> b, int axis) {
    auto [ra, ca] = dim2(a);
    auto [rb, cb] = dim2(b);
    if (axis != 0 && axis != 1) throw Error("concat: axis must be 0 or 1");
    if (axis == 0 ? (ca != cb) : (ra != rb))
      throw Error("concat: incompatible shapes " + shape_str(at(a).shape) +
                  " and " + shape_str(at(b).shape) + " on axis " +
                  std::to_string(axis));
    const int r = axis == 0 ? ra + rb : ra;
    const int c = axis == 1 ? ca + cb : ca;
    Tensor<T> out =
        make({r, c}, std::vector<T>(std::size_t(r) * c), nullptr, "concat");
    {
      MatMap<T> o(at(out).val.data(), r, c);
      o.block(0, 0, ra, ca) = ConstMatMap<T>(at(a).val.data(), ra, ca);
      if (axis == 0)
        o.block(ra, 0, rb, cb) = ConstMatMap<T>(at(b).val.data(), rb, cb);
      else
        o.block(0, ca, rb, cb) = ConstMatMap<T>(at(b).val.data(), rb, cb);
    }
    set_backward(out, [this, a, b, out, ra, ca, rb, cb, axis, r, c] {
      ConstMatMap<T> g(at(out).grad.data(), r, c);
      MatMap<T>(at(a).grad.data(), ra, ca) += g.block(0, 0, ra, ca);
      if (axis == 0)
        MatMap<T>(at(b).grad.data(), rb, cb) += g.block(ra, 0, rb, cb);
      else
        MatMap<T>(at(b).grad.data(), rb, cb) += g.block(0, ca, rb, cb);
    });
    return finish(out);
  }

  Tensor<T> slice_rows(Tensor<T> a, int r0, int r1) {
    auto [r, c] = dim2(a);
    if (r0 < 0 || r1 > r || r0 >= r1)
      throw Error("slice_rows: range [" + std::to_string(r0) + ", " +
                  std::to_string(r1) + ") invalid for " +
                  shape_str(at(a).shape));
    const int n = r1 - r0;
    Tensor<T> out =
        make({n, c}, std::vector<T>(std::size_t(n) * c), nullptr, "slice_rows");
    MatMap<T>(at(out).val.data(), n, c) =
        ConstMatMap<T>(at(a).val.data(), r, c).block(r0, 0, n, c);
    set_backward(out, [this, a, out, r, c, r0, n] {
      MatMap<T>(at(a).grad.data(), r, c).block(r0, 0, n, c) +=
          ConstMatMap<T>(at(out).grad.data(), n, c);
    });
    return finish(out);
  }

  /// Row gather: out[i] = a[idx[i]].  Backward scatter-adds.
  Tensor<T> gather_rows(Tensor<T> a, std::vector<int> idx) {
    auto [r, c] = dim2(a);
    for (int i : idx)
      if (i < 0 || i >= r)
        throw Error("gather_rows: index " + std::to_string(i) +
                    " out of range for " + shape_str(at(a).shape));
    const int n = int(idx.size());
    Tensor<T> out = make({n, c}, std::vector<T>(std::size_t(n) * c), nullptr,
                         "gather_rows");
    {
      MatMap<T> o(at(out).val.data(), n, c);
      ConstMatMap<T> av(at(a).val.data(), r, c);
      for (int i = 0; i < n; ++i) o.row(i) = av.row(idx[i]);
    }
    set_backward(out, [this, a, out, r, c, n, idx = std::move(idx)] {
      ConstMatMap<T> g(at(out).grad.data(), n, c);
      MatMap<T> ga(at(a).grad.data(), r, c);
      for (int i = 0; i < n; ++i) ga.row(idx[i]) += g.row(i);
    });
    return finish(out);
  }

  /// Tile a single-row tensor n times.
  Tensor<T> repeat_rows(Tensor<T> a, int n) {
    auto [r, c] = dim2(a);
    if (r != 1) throw Error("repeat_rows: expects one row, got " +
                            shape_str(at(a).shape));
    Tensor<T> out = make({n, c}, std::vector<T>(std::size_t(n) * c), nullptr,
                         "repeat_rows");
    MatMap<T>(at(out).val.data(), n, c).rowwise() =
        ConstMatMap<T>(at(a).val.data(), 1, c).row(0);
    set_backward(out, [this, a, out, n, c] {
      add_col_sums(at(out).grad, n, c, at(a).grad);
    });
    return finish(out);
  }

  // ---- linear algebra ----------------------------------------------------

  Tensor<T> matmul(Tensor<T> a, Tensor<T> b) {
    auto [m, ka] = dim2(a);
    auto [kb, n] = dim2(b);
    if (ka != kb)
      throw Error("matmul: incompatible shapes " + shape_str(at(a).shape) +
                  " and " + shape_str(at(b).shape));
    Tensor<T> out =
        make({m, n}, std::vector<T>(std::size_t(m) * n), nullptr, "matmul");
    MatMap<T>(at(out).val.data(), m, n) =
        ConstMatMap<T>(at(a).val.data(), m, ka) *
        ConstMatMap<T>(at(b).val.data(), kb, n);
    set_backward(out, [this, a, b, out, m, n, k = ka] {
      ConstMatMap<T> g(at(out).grad.data(), m, n);
      ConstMatMap<T> av(at(a).val.data(), m, k);
      ConstMatMap<T> bv(at(b).val.data(), k, n);
      MatMap<T>(at(a).grad.data(), m, k) += g * bv.transpose();
      MatMap<T>(at(b).grad.data(), k, n) += av.transpose() * g;
    });
    return finish(out);
  }

  /// Fully connected layer y = x·Wᵀ + bias, with W stored (out × in) and
  /// bias length out (broadcast over rows).
  Tensor<T> linear(Tensor<T> x, Tensor<T> w, Tensor<T> bias) {
    auto [n, in] = dim2(x);
    auto [out_dim, w_in] = dim2(w);
    if (in != w_in)
      throw Error("linear: input " + shape_str(at(x).shape) +
                  " does not match weight " + shape_str(at(w).shape));
    if (int(at(bias).val.size()) != out_dim)
      throw Error("linear: bias " + shape_str(at(bias).shape) +
                  " does not match weight " + shape_str(at(w).shape));
    Tensor<T> out = make({n, out_dim}, std::vector<T>(std::size_t(n) * out_dim),
                         nullptr, "linear");
    {
      MatMap<T> o(at(out).val.data(), n, out_dim);
      o = ConstMatMap<T>(at(x).val.data(), n, in) *
          ConstMatMap<T>(at(w).val.data(), out_dim, in).transpose();
      o.rowwise() +=
          Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(
              at(bias).val.data(), out_dim);
    }
    set_backward(out, [this, x, w, bias, out, n, in, out_dim] {
      ConstMatMap<T> g(at(out).grad.data(), n, out_dim);
      ConstMatMap<T> xv(at(x).val.data(), n, in);
      ConstMatMap<T> wv(at(w).val.data(), out_dim, in);
      MatMap<T>(at(x).grad.data(), n, in) += g * wv;
      MatMap<T>(at(w).grad.data(), out_dim, in) += g.transpose() * xv;
      add_col_sums(at(out).grad, n, out_dim, at(bias).grad);
    });
    return finish(out);
  }

  /// Add a length-c vector to every row.
  Tensor<T> broadcast_add(Tensor<T> a, Tensor<T> bias) {
    auto [r, c] = dim2(a);
    if (int(at(bias).val.size()) != c)
      throw Error("broadcast_add: bias " + shape_str(at(bias).shape) +
                  " does not match " + shape_str(at(a).shape));
    Tensor<T> out = like(a, "broadcast_add");
    MatMap<T>(at(out).val.data(), r, c) =
        ConstMatMap<T>(at(a).val.data(), r, c);
    MatMap<T>(at(out).val.data(), r, c).rowwise() +=
        Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(
            at(bias).val.data(), c);
    set_backward(out, [this, a, bias, out, r, c] {
      ConstMatMap<T> g(at(out).grad.data(), r, c);
      MatMap<T>(at(a).grad.data(), r, c) += g;
      add_col_sums(at(out).grad, r, c, at(bias).grad);
    });
    return finish(out);
  }

  // ---- normalization / softmax ------------------------------------------

  /// Row-wise softmax (axis 1) or column-wise (axis 0) of a 2D tensor.
  Tensor<T> softmax(Tensor<T> a, int axis = 1) {
    auto [r, c] = dim2(a);
    if (axis != 0 && axis != 1) throw Error("softmax: axis must be 0 or 1");
    Tensor<T> out = like(a, "softmax");
    const int outer = axis == 1 ? r : c;
    const int inner = axis == 1 ? c : r;
    // Captured by value: the closure outlives this stack frame.
    const auto idx = [cols = c, axis](int o, int i) {
      return axis == 1 ? std::size_t(o) * cols + i : std::size_t(i) * cols + o;
    };
    const std::vector<T>& x = at(a).val;
    std::vector<T>& y = at(out).val;
    for (int o = 0; o < outer; ++o) {
      T mx = x[idx(o, 0)];
      for (int i = 1; i < inner; ++i) mx = std::max(mx, x[idx(o, i)]);
      T denom = T(0);
      for (int i = 0; i < inner; ++i) {
        const T e = std::exp(x[idx(o, i)] - mx);
        y[idx(o, i)] = e;
        denom += e;
      }
      for (int i = 0; i < inner; ++i) y[idx(o, i)] /= denom;
    }
    set_backward(out, [this, a, out, outer, inner, idx] {
      const std::vector<T>&g = at(out).grad, &y = at(out).val;
      std::vector<T>& ga = at(a).grad;
      for (int o = 0; o < outer; ++o) {
        T dot = T(0);
        for (int i = 0; i < inner; ++i) dot += g[idx(o, i)] * y[idx(o, i)];
        for (int i = 0; i < inner; ++i)
          ga[idx(o, i)] += y[idx(o, i)] * (g[idx(o, i)] - dot);
      }
    });
    return finish(out);
  }

  /// Row-wise layer normalization, pre-affine: (x - mean) / sqrt(var + eps).
  /// A constant row maps to zeros.
  Tensor<T> layer_norm(Tensor<T> a, T eps = T(1e-5)) {
    auto [r, c] = dim2(a);
    Tensor<T> out = like(a, "layer_norm");
    const std::vector<T>& x = at(a).val;
    std::vector<T>& y = at(out).val;
    std::vector<T> inv_std(std::size_t(r), T(0));
    for (int i = 0; i < r; ++i) {
      const T* row = x.data() + std::size_t(i) * c;
      T mean = T(0);
      for (int j = 0; j < c; ++j) mean += row[j];
      mean /= T(c);
      T var = T(0);
      for (int j = 0; j < c; ++j) var += (row[j] - mean) * (row[j] - mean);
      var /= T(c);
      const T is = T(1) / std::sqrt(var + eps);
      inv_std[std::size_t(i)] = is;
      for (int j = 0; j < c; ++j)
        y[std::size_t(i) * c + j] = (row[j] - mean) * is;
    }
    set_backward(out, [this, a, out, r, c, inv_std = std::move(inv_std)] {
      const std::vector<T>&g = at(out).grad, &y = at(out).val;
      std::vector<T>& ga = at(a).grad;
      for (int i = 0; i < r; ++i) {
        const T* gr = g.data() + std::size_t(i) * c;
        const T* yr = y.data() + std::size_t(i) * c;
        T gmean = T(0), gymean = T(0);
        for (int j = 0; j < c; ++j) {
          gmean += gr[j];
          gymean += gr[j] * yr[j];
        }
        gmean /= T(c);
        gymean /= T(c);
        const T is = inv_std[std::size_t(i)];
        for (int j = 0; j < c; ++j)
          ga[std::size_t(i) * c + j] += is * (gr[j] - gmean - yr[j] * gymean);
      }
    });
    return finish(out);
  }

  // ---- attention ---------------------------------------------------------

  /// Multi-head scaled dot-product attention.  q: (Nq × C), k, v: (Nk × C),
  /// C divisible by heads; per head d = C/heads and
  /// out_h = softmax(q_h k_hᵀ / sqrt(d)) v_h, heads re-concatenated.
  Tensor<T> scaled_dot_attention(Tensor<T> q, Tensor<T> k, Tensor<T> v,
                                 int heads) {
    auto [nq, cq] = dim2(q);
    auto [nk, ck] = dim2(k);
    auto [nv, cv] = dim2(v);
    if (cq != ck || ck != cv || nk != nv)
      throw Error("scaled_dot_attention: incompatible shapes " +
                  shape_str(at(q).shape) + ", " + shape_str(at(k).shape) +
                  ", " + shape_str(at(v).shape));
    if (heads < 1 || cq % heads != 0)
      throw Error("scaled_dot_attention: width " + std::to_string(cq) +
                  " not divisible by " + std::to_string(heads) + " heads");
    const int c = cq, d = c / heads;
    const T inv_sqrt_d = T(1) / std::sqrt(T(d));
    Tensor<T> out = make({nq, c}, std::vector<T>(std::size_t(nq) * c), nullptr,
                         "scaled_dot_attention");

    // Attention probabilities are kept for the backward pass.
    auto probs = std::make_shared<std::vector<EigenMat<T>>>();
    probs->reserve(std::size_t(heads));
    using Stride = Eigen::OuterStride<>;
    using StridedConst = Eigen::Map<const EigenMat<T>, 0, Stride>;
    using Strided = Eigen::Map<EigenMat<T>, 0, Stride>;
    for (int h = 0; h < heads; ++h) {
      StridedConst qh(at(q).val.data() + std::size_t(h) * d, nq, d, Stride(c));
      StridedConst kh(at(k).val.data() + std::size_t(h) * d, nk, d, Stride(c));
      StridedConst vh(at(v).val.data() + std::size_t(h) * d, nk, d, Stride(c));
      EigenMat<T> s = qh * kh.transpose() * inv_sqrt_d;  // (nq × nk)
      for (int i = 0; i < nq; ++i) {
        const T mx = s.row(i).maxCoeff();
        s.row(i) = (s.row(i).array() - mx).exp();
        s.row(i) /= s.row(i).sum();
      }
      if (record_attention) {
        T dev = T(0);
        for (int i = 0; i < nq; ++i)
          dev = std::max(dev, std::abs(s.row(i).sum() - T(1)));
        attention_row_sum_dev.push_back(dev);
      }
      Strided oh(at(out).val.data() + std::size_t(h) * d, nq, d, Stride(c));
      oh = s * vh;
      probs->push_back(std::move(s));
    }
    set_backward(out, [this, q, k, v, out, heads, d, c, nq, nk, inv_sqrt_d,
                       probs] {
      using StrideB = Eigen::OuterStride<>;
      using StridedConstB = Eigen::Map<const EigenMat<T>, 0, StrideB>;
      using StridedB = Eigen::Map<EigenMat<T>, 0, StrideB>;
      for (int h = 0; h < heads; ++h) {
        StridedConstB go(at(out).grad.data() + std::size_t(h) * d, nq, d,
                         StrideB(c));
        StridedConstB qh(at(q).val.data() + std::size_t(h) * d, nq, d,
                         StrideB(c));
        StridedConstB kh(at(k).val.data() + std::size_t(h) * d, nk, d,
                         StrideB(c));
        StridedConstB vh(at(v).val.data() + std::size_t(h) * d, nk, d,
                         StrideB(c));
        const EigenMat<T>& p = (*probs)[std::size_t(h)];
        StridedB gv(at(v).grad.data() + std::size_t(h) * d, nk, d, StrideB(c));
        gv += p.transpose() * go;
        EigenMat<T> gp = go * vh.transpose();  // (nq × nk)
        // Softmax backward per row.
        for (int i = 0; i < nq; ++i) {
          const T dot = (gp.row(i).array() * p.row(i).array()).sum();
          gp.row(i) = p.row(i).array() * (gp.row(i).array() - dot);
        }
        StridedB gq(at(q).grad.data() + std::size_t(h) * d, nq, d, StrideB(c));
        StridedB gk(at(k).grad.data() + std::size_t(h) * d, nk, d, StrideB(c));
        gq += gp * kh * inv_sqrt_d;
        gk += gp.transpose() * qh * inv_sqrt_d;
      }
    });
    return finish(out);
  }

  /// Multi-head attention restricted to a fixed neighbor list: query i
  /// attends only to rows nbr[i*k .. i*k+k-1] of key/value, with an additive
  /// per-(pair, head) logit bias of shape (N·k × heads).  Neighbor indices
  /// are data, not tape nodes; bias gradients flow.
  Tensor<T> knn_attention(Tensor<T> q, Tensor<T> k, Tensor<T> v,
                          const std::vector<int>& nbr, int kn, int heads,
                          Tensor<T> bias) {
    auto [n, c] = dim2(q);
    check_same_shape("knn_attention", q, k);
    check_same_shape("knn_attention", q, v);
    if (kn < 1 || int(nbr.size()) != n * kn)
      throw Error("knn_attention: neighbor list length " +
                  std::to_string(nbr.size()) + " does not match " +
                  std::to_string(n) + " queries x " + std::to_string(kn));
    if (heads < 1 || c % heads != 0)
      throw Error("knn_attention: width " + std::to_string(c) +
                  " not divisible by " + std::to_string(heads) + " heads");
    if (dim2(bias).first != n * kn || dim2(bias).second != heads)
      throw Error("knn_attention: bias " + shape_str(at(bias).shape) +
                  " must be (" + std::to_string(n * kn) + "x" +
                  std::to_string(heads) + ")");
    for (int i : nbr)
      if (i < 0 || i >= n)
        throw Error("knn_attention: neighbor index " + std::to_string(i) +
                    " out of range");
    const int d = c / heads;
    const T inv_sqrt_d = T(1) / std::sqrt(T(d));
    Tensor<T> out = make({n, c}, std::vector<T>(std::size_t(n) * c), nullptr,
                         "knn_attention");
    // probs laid out [head][query][neighbor].
    auto probs =
        std::make_shared<std::vector<T>>(std::size_t(heads) * n * kn);
    {
      const std::vector<T>& qv = at(q).val;
      const std::vector<T>& kv = at(k).val;
      const std::vector<T>& vv = at(v).val;
      const std::vector<T>& bv = at(bias).val;
      std::vector<T>& ov = at(out).val;
      std::vector<T> logits(std::size_t(kn), T(0));
      for (int h = 0; h < heads; ++h) {
        T dev = T(0);
        for (int i = 0; i < n; ++i) {
          const T* qi = qv.data() + std::size_t(i) * c + std::size_t(h) * d;
          for (int j = 0; j < kn; ++j) {
            const int nj = nbr[std::size_t(i) * kn + j];
            const T* kj = kv.data() + std::size_t(nj) * c + std::size_t(h) * d;
            T dot = T(0);
            for (int e = 0; e < d; ++e) dot += qi[e] * kj[e];
            logits[std::size_t(j)] =
                dot * inv_sqrt_d +
                bv[(std::size_t(i) * kn + j) * heads + std::size_t(h)];
          }
          T mx = logits[0];
          for (int j = 1; j < kn; ++j) mx = std::max(mx, logits[std::size_t(j)]);
          T denom = T(0);
          for (int j = 0; j < kn; ++j) {
            const T e = std::exp(logits[std::size_t(j)] - mx);
            logits[std::size_t(j)] = e;
            denom += e;
          }
          T* pi = probs->data() + (std::size_t(h) * n + i) * kn;
          T rowsum = T(0);
          for (int j = 0; j < kn; ++j) {
            pi[j] = logits[std::size_t(j)] / denom;
            rowsum += pi[j];
          }
          if (record_attention) dev = std::max(dev, std::abs(rowsum - T(1)));
          T* oi = ov.data() + std::size_t(i) * c + std::size_t(h) * d;
          for (int e = 0; e < d; ++e) oi[e] = T(0);
          for (int j = 0; j < kn; ++j) {
            const int nj = nbr[std::size_t(i) * kn + j];
            const T* vj = vv.data() + std::size_t(nj) * c + std::size_t(h) * d;
            for (int e = 0; e < d; ++e) oi[e] += pi[j] * vj[e];
          }
        }
        if (record_attention) attention_row_sum_dev.push_back(dev);
      }
    }
    set_backward(out, [this, q, k, v, bias, out, nbr, kn, heads, d, c, n,
                       inv_sqrt_d, probs] {
      const std::vector<T>& go = at(out).grad;
      const std::vector<T>& qv = at(q).val;
      const std::vector<T>& kv = at(k).val;
      const std::vector<T>& vv = at(v).val;
      std::vector<T>& gq = at(q).grad;
      std::vector<T>& gk = at(k).grad;
      std::vector<T>& gv = at(v).grad;
      std::vector<T>& gb = at(bias).grad;
      std::vector<T> gp(std::size_t(kn), T(0));
      for (int h = 0; h < heads; ++h) {
        for (int i = 0; i < n; ++i) {
          const T* goi = go.data() + std::size_t(i) * c + std::size_t(h) * d;
          const T* pi = probs->data() + (std::size_t(h) * n + i) * kn;
          // dP and dV.
          T dot = T(0);
          for (int j = 0; j < kn; ++j) {
            const int nj = nbr[std::size_t(i) * kn + j];
            const T* vj = vv.data() + std::size_t(nj) * c + std::size_t(h) * d;
            T s = T(0);
            for (int e = 0; e < d; ++e) s += goi[e] * vj[e];
            gp[std::size_t(j)] = s;
            dot += s * pi[j];
            T* gvj = gv.data() + std::size_t(nj) * c + std::size_t(h) * d;
            for (int e = 0; e < d; ++e) gvj[e] += pi[j] * goi[e];
          }
          // Softmax backward, then logits' three consumers.
          const T* qi = qv.data() + std::size_t(i) * c + std::size_t(h) * d;
          T* gqi = gq.data() + std::size_t(i) * c + std::size_t(h) * d;
          for (int j = 0; j < kn; ++j) {
            const T ds = pi[j] * (gp[std::size_t(j)] - dot);
            const int nj = nbr[std::size_t(i) * kn + j];
            gb[(std::size_t(i) * kn + j) * heads + std::size_t(h)] += ds;
            const T* kj = kv.data() + std::size_t(nj) * c + std::size_t(h) * d;
            T* gkj = gk.data() + std::size_t(nj) * c + std::size_t(h) * d;
            for (int e = 0; e < d; ++e) {
              gqi[e] += ds * inv_sqrt_d * kj[e];
              gkj[e] += ds * inv_sqrt_d * qi[e];
            }
          }
        }
      }
    });
    return finish(out);
  }

  // ---- reductions --------------------------------------------------------

  Tensor<T> sum(Tensor<T> a) {
    Tensor<T> out = make({1}, {std::accumulate(at(a).val.begin(),
                                               at(a).val.end(), T(0))},
                         nullptr, "sum");
    set_backward(out, [this, a, out] {
      const T g = at(out).grad[0];
      for (T& v : at(a).grad) v += g;
    });
    return finish(out);
  }

  Tensor<T> mean(Tensor<T> a) {
    const T n = T(at(a).val.size());
    Tensor<T> out = make(
        {1},
        {std::accumulate(at(a).val.begin(), at(a).val.end(), T(0)) / n},
        nullptr, "mean");
    set_backward(out, [this, a, out, n] {
      const T g = at(out).grad[0] / n;
      for (T& v : at(a).grad) v += g;
    });
    return finish(out);
  }

  /// Mean squared error between two same-shape tensors (scalar output).
  Tensor<T> mse(Tensor<T> a, Tensor<T> b) {
    check_same_shape("mse", a, b);
    const std::vector<T>&av = at(a).val, &bv = at(b).val;
    const T n = T(av.size());
    T acc = T(0);
    for (std::size_t i = 0; i < av.size(); ++i)
      acc += (av[i] - bv[i]) * (av[i] - bv[i]);
    Tensor<T> out = make({1}, {acc / n}, nullptr, "mse");
    set_backward(out, [this, a, b, out, n] {
      const T g = at(out).grad[0] * T(2) / n;
      const std::vector<T>&av = at(a).val, &bv = at(b).val;
      std::vector<T>&ga = at(a).grad, &gb = at(b).grad;
      for (std::size_t i = 0; i < av.size(); ++i) {
        const T d = g * (av[i] - bv[i]);
        ga[i] += d;
        gb[i] -= d;
      }
    });
    return finish(out);
  }

  // ---- backward ----------------------------------------------------------

  void zero_grads() {
    for (Node& n : nodes_) std::fill(n.grad.begin(), n.grad.end(), T(0));
  }

  /// Reverse sweep from a scalar output (seed gradient 1).
  void backward(Tensor<T> loss) {
    if (at(loss).val.size() != 1)
      throw Error("backward: output must be scalar, got " +
                  shape_str(at(loss).shape));
    backward_seeded({{loss, {T(1)}}});
  }

  /// Reverse sweep with externally supplied gradient seeds (for losses
  /// computed outside the tape, e.g. through the renderer).
  void backward_seeded(
      const std::vector<std::pair<Tensor<T>, std::vector<T>>>& seeds) {
    zero_grads();
    for (const auto& [t, g] : seeds) {
      if (g.size() != at(t).val.size())
        throw Error("backward: seed length " + std::to_string(g.size()) +
                    " does not match " + shape_str(at(t).shape));
      std::vector<T>& dst = at(t).grad;
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
    }
    // Node ids are a topological order by construction; one descending pass
    // visits every node exactly once.
    for (int id = int(nodes_.size()) - 1; id >= 0; --id)
      if (nodes_[std::size_t(id)].backward) nodes_[std::size_t(id)].backward();
  }

 private:
  std::vector<Node> nodes_;

  Node& at(Tensor<T> t) {
    if (t.graph != this || t.id < 0 || t.id >= int(nodes_.size()))
      throw Error("tensor handle does not belong to this graph");
    return nodes_[std::size_t(t.id)];
  }
  const Node& at(Tensor<T> t) const {
    return const_cast<Graph*>(this)->at(t);
  }

  std::pair<int, int> dim2(Tensor<T> t) const {
    const Shape& s = at(t).shape;
    if (s.size() == 1) return {1, s[0]};
    if (s.size() == 2) return {s[0], s[1]};
    throw Error(std::string("operation requires a 1D or 2D tensor, got ") +
                shape_str(s));
  }

  Tensor<T> make(Shape shape, std::vector<T> val, std::function<void()> bw,
                 const char* op) {
    Node n;
    n.shape = std::move(shape);
    n.val = std::move(val);
    n.grad.assign(n.val.size(), T(0));
    n.backward = std::move(bw);
    n.op = op;
    nodes_.push_back(std::move(n));
    return {this, int(nodes_.size()) - 1};
  }

  Tensor<T> like(Tensor<T> a, const char* op) {
    return make(at(a).shape, std::vector<T>(at(a).val.size()), nullptr, op);
  }

  void set_backward(Tensor<T> t, std::function<void()> bw) {
    at(t).backward = std::move(bw);
  }

  Tensor<T> finish(Tensor<T> t) {
    if (debug_check_finite)
      for (T v : at(t).val)
        if (!std::isfinite(v))
          throw Error(std::string("non-finite values in ") + at(t).op);
    return t;
  }

  void accum(Tensor<T> t, const std::vector<T>& g, T s) {
    std::vector<T>& dst = at(t).grad;
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * s;
  }

  /// dst[j] += sum_i g[i*c + j], accumulated row by row in a fixed order.
  /// Eigen's column-wise redux rounds differently depending on how the
  /// destination pointer happens to be SIMD-aligned, which varies with heap
  /// layout between otherwise identical runs; a spelled-out loop keeps every
  /// per-column sum associated the same way no matter where the buffers land.
  static void add_col_sums(const std::vector<T>& g, int n, int c,
                           std::vector<T>& dst) {
    for (int i = 0; i < n; ++i) {
      const T* row = g.data() + std::size_t(i) * std::size_t(c);
      for (int j = 0; j < c; ++j) dst[std::size_t(j)] += row[j];
    }
  }

  void check_same_shape(const char* op, Tensor<T> a, Tensor<T> b) const {
    if (at(a).shape != at(b).shape)
      throw Error(std::string(op) + ": shape mismatch " +
                  shape_str(at(a).shape) + " vs " + shape_str(at(b).shape));
  }
};

// ---- gradient verification -----------------------------------------------

struct GradcheckReport {
  bool pass = false;
  double worst_rel = 0.0;
  int checked = 0;
  std::string worst_at;
};

/// Central-difference verification of a scalar-valued tape computation.
/// `build` is called with a fresh Graph and leaf tensors created from
/// `inputs`, and must return the scalar loss; inputs are perturbed in place
/// (and restored) one element at a time.
template <class T, class BuildFn>
GradcheckReport gradcheck(
    BuildFn&& build,
    std::vector<std::pair<Shape, std::vector<T>*>> inputs,
    T eps = T(1e-3), T tol = T(1e-3)) {
  GradcheckReport report;
  // Analytic pass.
  std::vector<std::vector<T>> analytic;
  {
    Graph<T> g;
    std::vector<Tensor<T>> leaves;
    for (auto& [shape, data] : inputs) leaves.push_back(g.input(shape, *data));
    Tensor<T> loss = build(g, leaves);
    g.backward(loss);
    for (Tensor<T> leaf : leaves) analytic.push_back(g.grad(leaf));
  }
  auto eval = [&]() {
    Graph<T> g;
    std::vector<Tensor<T>> leaves;
    for (auto& [shape, data] : inputs) leaves.push_back(g.input(shape, *data));
    return double(g.value(build(g, leaves))[0]);
  };
  report.pass = true;
  for (std::size_t which = 0; which < inputs.size(); ++which) {
    std::vector<T>& data = *inputs[which].second;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const T orig = data[i];
      data[i] = orig + eps;
      const double lp = eval();
      data[i] = orig - eps;
      const double lm = eval();
      data[i] = orig;
      const double numeric = (lp - lm) / double(2 * eps);
      const double a = double(analytic[which][i]);
      if (std::fabs(a) < 1e-10 && std::fabs(numeric) < 1e-7) continue;
      const double rel = std::fabs(a - numeric) /
                         std::max({std::fabs(a), std::fabs(numeric), 1e-6});
      ++report.checked;
      if (rel > report.worst_rel) {
        report.worst_rel = rel;
        report.worst_at = "input " + std::to_string(which) + " element " +
                          std::to_string(i);
      }
      if (rel > double(tol)) report.pass = false;
    }
  }
  return report;
}

}  // namespace gsup
