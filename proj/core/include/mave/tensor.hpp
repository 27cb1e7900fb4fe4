#pragma once

// Minimal dense tensor library with reverse-mode autodiff on a tape.
//
// Design notes:
//  - Everything is templated on the scalar type T. Tests instantiate with
//    double (and get NaN/Inf checking after every op); training and inference
//    default to float for speed.
//  - Ops are free functions taking a Context<T>. If the context carries a
//    tape, the op records a backward closure; otherwise it is pure inference.
//  - Ops never mutate their inputs. Tensor::mut() exists for initialization
//    and for the optimizer update, which both happen while no tape is live.
//  - A MacCounter on the context tallies multiply-accumulate operations for
//    the compute-cost instrumentation. Only forward matmul/attention/scan/conv
//    work is counted; normalizations and pointwise activations are excluded.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <type_traits>
#include <vector>

#include "mave/errors.hpp"

namespace mave {

using Shape = std::vector<int64_t>;

inline int64_t numel_of(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

template <typename T>
struct Tensor {
  Shape shape;
  std::shared_ptr<std::vector<T>> data;
  // Node id on the current tape, or -1 when not recorded. Stale ids from a
  // destroyed tape are harmless as long as callers re-watch() parameters on
  // every fresh tape before running ops (the trainer does).
  int node = -1;

  Tensor() = default;
  explicit Tensor(Shape s)
      : shape(std::move(s)),
        data(std::make_shared<std::vector<T>>(numel_of(shape), T(0))) {}
  Tensor(Shape s, std::vector<T> v) : shape(std::move(s)) {
    if (static_cast<int64_t>(v.size()) != numel_of(shape))
      throw data_error("tensor: data size does not match shape");
    data = std::make_shared<std::vector<T>>(std::move(v));
  }

  int64_t numel() const { return data ? static_cast<int64_t>(data->size()) : 0; }
  int rank() const { return static_cast<int>(shape.size()); }
  int64_t dim(int i) const { return shape[static_cast<size_t>(i)]; }
  bool defined() const { return static_cast<bool>(data); }

  const T* ptr() const { return data->data(); }
  T* mut() { return data->data(); }

  T at(int64_t i) const { return (*data)[static_cast<size_t>(i)]; }
  T at(int64_t i, int64_t j) const {
    return (*data)[static_cast<size_t>(i * shape[1] + j)];
  }
};

// ---------------------------------------------------------------------------
// MAC counting
// ---------------------------------------------------------------------------

struct MacCounter {
  uint64_t matmul = 0;
  uint64_t attention = 0;
  uint64_t scan = 0;
  uint64_t conv = 0;
  uint64_t total() const { return matmul + attention + scan + conv; }
  void reset() { matmul = attention = scan = conv = 0; }
};

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

template <typename T>
class Tape {
 public:
  // Allocate a node for a value with `numel` elements; returns its id.
  int alloc(int64_t numel) {
    sizes_.push_back(numel);
    backs_.emplace_back();
    return static_cast<int>(sizes_.size()) - 1;
  }

  void set_back(int id, std::function<void(Tape&)> f) {
    backs_[static_cast<size_t>(id)] = std::move(f);
  }

  // Register a leaf (parameter/input) so gradients accumulate into it.
  int watch(Tensor<T>& t) {
    t.node = alloc(t.numel());
    return t.node;
  }

  // Gradient buffer for a node, allocated as zeros on first touch.
  std::vector<T>& grad_buf(int id) {
    auto& g = grads_[static_cast<size_t>(id)];
    if (g.empty()) g.assign(static_cast<size_t>(sizes_[static_cast<size_t>(id)]), T(0));
    return g;
  }

  bool touched(int id) const { return !grads_[static_cast<size_t>(id)].empty(); }

  // Run reverse accumulation from a scalar root.
  void backward(const Tensor<T>& root) {
    if (root.node < 0) throw data_error("backward: root is not on the tape");
    if (root.numel() != 1) throw data_error("backward: root must be a scalar");
    grads_.assign(sizes_.size(), {});
    grad_buf(root.node)[0] = T(1);
    for (int id = root.node; id >= 0; --id) {
      if (!grads_[static_cast<size_t>(id)].empty() && backs_[static_cast<size_t>(id)])
        backs_[static_cast<size_t>(id)](*this);
    }
  }

  // Gradient of a watched tensor after backward(); zeros if it was untouched.
  const std::vector<T>& grad(const Tensor<T>& t) {
    if (t.node < 0) throw data_error("grad: tensor is not on the tape");
    return grad_buf(t.node);
  }

 private:
  std::vector<int64_t> sizes_;
  std::vector<std::function<void(Tape&)>> backs_;
  std::vector<std::vector<T>> grads_;
};

template <typename T>
struct Context {
  Tape<T>* tape = nullptr;
  MacCounter* macs = nullptr;
  bool recording() const { return tape != nullptr; }
};

// ---------------------------------------------------------------------------
// Scalar helpers and raw kernels
// ---------------------------------------------------------------------------

template <typename T>
inline T sigmoid_scalar(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
inline T softplus_scalar(T x) {
  if (x > T(0)) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

template <typename T>
inline void check_finite(const char* op, const T* v, int64_t n) {
  if constexpr (std::is_same_v<T, double>) {
    for (int64_t i = 0; i < n; ++i)
      if (!std::isfinite(v[i]))
        throw numeric_error(std::string(op) + ": non-finite value at index " +
                            std::to_string(i));
  }
}

// C[m,n] += A[m,k] * B[k,n]
template <typename T>
inline void mm_acc_nn(const T* A, const T* B, T* C, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const T* a = A + i * k;
    T* c = C + i * n;
    for (int64_t l = 0; l < k; ++l) {
      T av = a[l];
      if (av == T(0)) continue;
      const T* b = B + l * n;
      for (int64_t j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

// C[m,n] += A[m,k] * B^T where B is stored [n,k]
template <typename T>
inline void mm_acc_nt(const T* A, const T* B, T* C, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const T* a = A + i * k;
    T* c = C + i * n;
    for (int64_t j = 0; j < n; ++j) {
      const T* b = B + j * k;
      T acc = T(0);
      for (int64_t l = 0; l < k; ++l) acc += a[l] * b[l];
      c[j] += acc;
    }
  }
}

// C[k,n] += A^T * B where A is stored [m,k], B is [m,n]
template <typename T>
inline void mm_acc_tn(const T* A, const T* B, T* C, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const T* a = A + i * k;
    const T* b = B + i * n;
    for (int64_t l = 0; l < k; ++l) {
      T av = a[l];
      if (av == T(0)) continue;
      T* c = C + l * n;
      for (int64_t j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

// ---------------------------------------------------------------------------
// Elementwise / simple ops
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
inline bool want_record(const Context<T>& ctx, std::initializer_list<int> parents) {
  if (!ctx.recording()) return false;
  for (int p : parents)
    if (p >= 0) return true;
  return false;
}

}  // namespace detail

template <typename T>
Tensor<T> add(Context<T>& ctx, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape != b.shape) throw data_error("add: shape mismatch");
  Tensor<T> out(a.shape);
  const T* pa = a.ptr();
  const T* pb = b.ptr();
  T* po = out.mut();
  int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
  check_finite("add", po, n);
  if (detail::want_record(ctx, {a.node, b.node})) {
    int id = ctx.tape->alloc(n);
    out.node = id;
    int an = a.node, bn = b.node;
    ctx.tape->set_back(id, [id, an, bn, n](Tape<T>& tp) {
      const auto& g = tp.grad_buf(id);
      if (an >= 0) {
        auto& ga = tp.grad_buf(an);
        for (int64_t i = 0; i < n; ++i) ga[static_cast<size_t>(i)] += g[static_cast<size_t>(i)];
      }
      if (bn >= 0) {
        auto& gb = tp.grad_buf(bn);
        for (int64_t i = 0; i < n; ++i) gb[static_cast<size_t>(i)] += g[static_cast<size_t>(i)];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> sub(Context<T>& ctx, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape != b.shape) throw data_error("sub: shape mismatch");
  Tensor<T> out(a.shape);
  const T* pa = a.ptr();
  const T* pb = b.ptr();
  T* po = out.mut();
  int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
  check_finite("sub", po, n);
  if (detail::want_record(ctx, {a.node, b.node})) {
    int id = ctx.tape->alloc(n);
    out.node = id;
    int an = a.node, bn = b.node;
    ctx.tape->set_back(id, [id, an, bn, n](Tape<T>& tp) {
      const auto& g = tp.grad_buf(id);
      if (an >= 0) {
        auto& ga = tp.grad_buf(an);
        for (int64_t i = 0; i < n; ++i) ga[static_cast<size_t>(i)] += g[static_cast<size_t>(i)];
      }
      if (bn >= 0) {
        auto& gb = tp.grad_buf(bn);
        for (int64_t i = 0; i < n; ++i) gb[static_cast<size_t>(i)] -= g[static_cast<size_t>(i)];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(Context<T>& ctx, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape != b.shape) throw data_error("mul: shape mismatch");
  Tensor<T> out(a.shape);
  const T* pa = a.ptr();
  const T* pb = b.ptr();
  T* po = out.mut();
  int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
  check_finite("mul", po, n);
  if (detail::want_record(ctx, {a.node, b.node})) {
    int id = ctx.tape->alloc(n);
    out.node = id;
    int an = a.node, bn = b.node;
    auto da = a.data, db = b.data;
    ctx.tape->set_back(id, [id, an, bn, n, da, db](Tape<T>& tp) {
      const auto& g = tp.grad_buf(id);
      if (an >= 0) {
        auto& ga = tp.grad_buf(an);
        for (int64_t i = 0; i < n; ++i)
          ga[static_cast<size_t>(i)] += g[static_cast<size_t>(i)] * (*db)[static_cast<size_t>(i)];
      }
      if (bn >= 0) {
        auto& gb = tp.grad_buf(bn);
        for (int64_t i = 0; i < n; ++i)
          gb[static_cast<size_t>(i)] += g[static_cast<size_t>(i)] * (*da)[static_cast<size_t>(i)];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> scale(Context<T>& ctx, const Tensor<T>& a, T c) {
  Tensor<T> out(a.shape);
  const T* pa = a.ptr();
  T* po = out.mut();
  int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * c;
  check_finite("scale", po, n);
  if (detail::want_record(ctx, {a.node})) {
    int id = ctx.tape->alloc(n);
    out.node = id;
    int an = a.node;
    ctx.tape->set_back(id, [id, an, n, c](Tape<T>& tp) {
      const auto& g = tp.grad_buf(id);
      auto& ga = tp.grad_buf(an);
      for (int64_t i = 0; i < n; ++i) ga[static_cast<size_t>(i)] += g[static_cast<size_t>(i)] * c;
    });
  }
  return out;
}

// x[T,D] + row vector b[D]
template <typename T>
Tensor<T> add_rowvec(Context<T>& ctx, const Tensor<T>& x, const Tensor<T>& b) {
  if (x.rank() != 2 || b.rank() != 1 || x.dim(1) != b.dim(0))
    throw data_error("add_rowvec: shape mismatch");
  int64_t rows = x.dim(0), cols = x.dim(1);
  Tensor<T> out(x.shape);
  const T* px = x.ptr();
  const T* pb = b.ptr();
  T* po = out.mut();
  for (int64_t i = 0; i < rows; ++i)
    for (int64_t j = 0; j < cols; ++j) po[i * cols + j] = px[i * cols + j] + pb[j];
  check_finite("add_rowvec", po, rows * cols);
  if (detail::want_record(ctx, {x.node, b.node})) {
    int id = ctx.tape->alloc(rows * cols);
    out.node = id;
    int xn = x.node, bn = b.node;
    ctx.tape->set_back(id, [id, xn, bn, rows, cols](Tape<T>& tp) {
      const auto& g = tp.grad_buf(id);
      if (xn >= 0) {
        auto& gx = tp.grad_buf(xn);
        for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      }
      if (bn >= 0) {
        auto& gb = tp.grad_buf(bn);
        for (int64_t i = 0; i < rows; ++i)
          for (int64_t j = 0; j < cols; ++j)
            gb[static_cast<size_t>(j)] += g[static_cast<size_t>(i * cols + j)];
      }
    });
  }
  return out;
}

template <typename T, typename F, typename DF>
Tensor<T> unary_elem(Context<T>& ctx, const Tensor<T>& a, const char* name, F f, DF df) {
  Tensor<T> out(a.shape);
  const T* pa = a.ptr();
  T* po = out.mut();
  int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = f(pa[i]);
  check_finite(name, po, n);
  if (detail::want_record(ctx, {a.node})) {
    int id = ctx.tape->alloc(n);
    out.node = id;
    int an = a.node;
    auto da = a.data;
    auto dout = out.data;
    ctx.tape->set_back(id, [id, an, n, da, dout, df](Tape<T>& tp) {
      const auto& g = tp.grad_buf(id);
      auto& ga = tp.grad_buf(an);
      for (int64_t i = 0; i < n; ++i)
        ga[static_cast<size_t>(i)] +=
            g[static_cast<size_t>(i)] * df((*da)[static_cast<size_t>(i)], (*dout)[static_cast<size_t>(i)]);
    });
  }
  return out;
}

template <typename T>
Tensor<T> exp(Context<T>& ctx, const Tensor<T>& a) {
  return unary_elem(ctx, a, "exp", [](T x) { return std::exp(x); },
                    [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log(Context<T>& ctx, const Tensor<T>& a) {
  return unary_elem(ctx, a, "log", [](T x) { return std::log(x); },
                    [](T x, T) { return T(1) / x; });
}

template <typename T>
Tensor<T> silu(Context<T>& ctx, const Tensor<T>& a) {
  return unary_elem(ctx, a, "silu",
                    [](T x) { return x * sigmoid_scalar(x); },
                    [](T x, T) {
                      T s = sigmoid_scalar(x);
                      return s * (T(1) + x * (T(1) - s));
                    });
}

template <typename T>
Tensor<T> softplus(Context<T>& ctx, const Tensor<T>& a) {
  return unary_elem(ctx, a, "softplus",
                    [](T x) { return softplus_scalar(x); },
                    [](T x, T) { return sigmoid_scalar(x); });
}

template <typename T>
Tensor<T> sum_all(Context<T>& ctx, const Tensor<T>& a) {
  Tensor<T> out(Shape{1});
  const T* pa = a.ptr();
  int64_t n = a.numel();
  T acc = T(0);
  for (int64_t i = 0; i < n; ++i) acc += pa[i];
  out.mut()[0] = acc;
  check_finite("sum_all", out.ptr(), 1);
  if (detail::want_record(ctx, {a.node})) {
    int id = ctx.tape->alloc(1);
    out.node = id;
    int an = a.node;
    ctx.tape->set_back(id, [id, an, n](Tape<T>& tp) {
      T g = tp.grad_buf(id)[0];
      auto& ga = tp.grad_buf(an);
      for (int64_t i = 0; i < n; ++i) ga[static_cast<size_t>(i)] += g;
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Matmul / linear
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(Context<T>& ctx, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw data_error("matmul: shape mismatch");
  int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor<T> out(Shape{m, n});
  mm_acc_nn(a.ptr(), b.ptr(), out.mut(), m, k, n);
  if (ctx.macs) ctx.macs->matmul += static_cast<uint64_t>(m * k * n);
  check_finite("matmul", out.ptr(), m * n);
  if (detail::want_record(ctx, {a.node, b.node})) {
    int id = ctx.tape->alloc(m * n);
    out.node = id;
    int an = a.node, bn = b.node;
    auto da = a.data, db = b.data;
    ctx.tape->set_back(id, [id, an, bn, da, db, m, k, n](Tape<T>& tp) {
      const auto& g = tp.grad_buf(id);
      if (an >= 0) mm_acc_nt(g.data(), db->data(), tp.grad_buf(an).data(), m, n, k);
      if (bn >= 0) mm_acc_tn(da->data(), g.data(), tp.grad_buf(bn).data(), m, k, n);
    });
  }
  return out;
}

// y = x @ w (+ bias). x[T,I], w[I,O], bias[O] optional (pass undefined Tensor).
template <typename T>
Tensor<T> linear(Context<T>& ctx, const Tensor<T>& x, const Tensor<T>& w,
                 const Tensor<T>& bias = Tensor<T>{}) {
  Tensor<T> y = matmul(ctx, x, w);
  if (bias.defined()) y = add_rowvec(ctx, y, bias);
  return y;
}

// ---------------------------------------------------------------------------
// Softmax / RMSNorm
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> softmax_rows(Context<T>& ctx, const Tensor<T>& x) {
  if (x.rank() != 2) throw data_error("softmax_rows: rank must be 2");
  int64_t rows = x.dim(0), cols = x.dim(1);
  Tensor<T> out(x.shape);
  const T* px = x.ptr();
  T* po = out.mut();
  for (int64_t i = 0; i < rows; ++i) {
    const T* r = px + i * cols;
    T* o = po + i * cols;
    T mx = r[0];
    for (int64_t j = 1; j < cols; ++j) mx = std::max(mx, r[j]);
    T z = T(0);
    for (int64_t j = 0; j < cols; ++j) {
      o[j] = std::exp(r[j] - mx);
      z += o[j];
    }
    T inv = T(1) / z;
    for (int64_t j = 0; j < cols; ++j) o[j] *= inv;
  }
  check_finite("softmax_rows", po, rows * cols);
  if (detail::want_record(ctx, {x.node})) {
    int id = ctx.tape->alloc(rows * cols);
    out.node = id;
    int xn = x.node;
    auto dout = out.data;
    ctx.tape->set_back(id, [id, xn, dout, rows, cols](Tape<T>& tp) {
      const auto& g = tp.grad_buf(id);
      auto& gx = tp.grad_buf(xn);
      for (int64_t i = 0; i < rows; ++i) {
        const T* y = dout->data() + i * cols;
        const T* gr = g.data() + i * cols;
        T dot = T(0);
        for (int64_t j = 0; j < cols; ++j) dot += gr[j] * y[j];
        T* go = gx.data() + i * cols;
        for (int64_t j = 0; j < cols; ++j) go[j] += y[j] * (gr[j] - dot);
      }
    });
  }
  return out;
}

// Root-mean-square normalization over the last axis with a learned gain.
template <typename T>
Tensor<T> rmsnorm(Context<T>& ctx, const Tensor<T>& x, const Tensor<T>& gain,
                  T eps = T(1e-8)) {
  if (x.rank() != 2 || gain.rank() != 1 || x.dim(1) != gain.dim(0))
    throw data_error("rmsnorm: shape mismatch");
  int64_t rows = x.dim(0), cols = x.dim(1);
  Tensor<T> out(x.shape);
  std::vector<T> inv_rms(static_cast<size_t>(rows));
  const T* px = x.ptr();
  const T* pg = gain.ptr();
  T* po = out.mut();
  for (int64_t i = 0; i < rows; ++i) {
    const T* r = px + i * cols;
    T ms = T(0);
    for (int64_t j = 0; j < cols; ++j) ms += r[j] * r[j];
    ms = ms / static_cast<T>(cols) + eps;
    T inv = T(1) / std::sqrt(ms);
    inv_rms[static_cast<size_t>(i)] = inv;
    T* o = po + i * cols;
    for (int64_t j = 0; j < cols; ++j) o[j] = r[j] * inv * pg[j];
  }
  check_finite("rmsnorm", po, rows * cols);
  if (detail::want_record(ctx, {x.node, gain.node})) {
    int id = ctx.tape->alloc(rows * cols);
    out.node = id;
    int xn = x.node, gn = gain.node;
    auto dx = x.data, dg = gain.data;
    auto inv = std::make_shared<std::vector<T>>(std::move(inv_rms));
    ctx.tape->set_back(id, [id, xn, gn, dx, dg, inv, rows, cols](Tape<T>& tp) {
      const auto& g = tp.grad_buf(id);
      for (int64_t i = 0; i < rows; ++i) {
        const T* r = dx->data() + i * cols;
        const T* gr = g.data() + i * cols;
        T ir = (*inv)[static_cast<size_t>(i)];
        if (gn >= 0) {
          auto& gg = tp.grad_buf(gn);
          for (int64_t j = 0; j < cols; ++j)
            gg[static_cast<size_t>(j)] += gr[j] * r[j] * ir;
        }
        if (xn >= 0) {
          // d/dx_j of x_j * inv * gain_j, with inv depending on all of x.
          T dot = T(0);
          for (int64_t j = 0; j < cols; ++j) dot += gr[j] * (*dg)[static_cast<size_t>(j)] * r[j];
          T coef = ir * ir * ir / static_cast<T>(cols) * dot;
          auto& gx = tp.grad_buf(xn);
          T* go = gx.data() + i * cols;
          for (int64_t j = 0; j < cols; ++j)
            go[j] += gr[j] * (*dg)[static_cast<size_t>(j)] * ir - r[j] * coef;
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Row gather / concat / slice
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> embed_rows(Context<T>& ctx, const Tensor<T>& table,
                     const std::vector<int32_t>& ids) {
  if (table.rank() != 2) throw data_error("embed_rows: table rank must be 2");
  int64_t v = table.dim(0), d = table.dim(1);
  int64_t m = static_cast<int64_t>(ids.size());
  Tensor<T> out(Shape{m, d});
  const T* pt = table.ptr();
  T* po = out.mut();
  for (int64_t i = 0; i < m; ++i) {
    int32_t id = ids[static_cast<size_t>(i)];
    if (id < 0 || id >= v) throw data_error("embed_rows: id out of range");
    std::copy(pt + id * d, pt + (id + 1) * d, po + i * d);
  }
  if (detail::want_record(ctx, {table.node})) {
    int nid = ctx.tape->alloc(m * d);
    out.node = nid;
    int tn = table.node;
    auto ids_copy = std::make_shared<std::vector<int32_t>>(ids);
    ctx.tape->set_back(nid, [nid, tn, ids_copy, d](Tape<T>& tp) {
      const auto& g = tp.grad_buf(nid);
      auto& gt = tp.grad_buf(tn);
      for (size_t i = 0; i < ids_copy->size(); ++i) {
        int64_t row = (*ids_copy)[i];
        for (int64_t j = 0; j < d; ++j)
          gt[static_cast<size_t>(row * d + j)] += g[i * static_cast<size_t>(d) + static_cast<size_t>(j)];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> concat_rows(Context<T>& ctx, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1))
    throw data_error("concat_rows: shape mismatch");
  int64_t ra = a.dim(0), rb = b.dim(0), d = a.dim(1);
  Tensor<T> out(Shape{ra + rb, d});
  T* po = out.mut();
  std::copy(a.ptr(), a.ptr() + ra * d, po);
  std::copy(b.ptr(), b.ptr() + rb * d, po + ra * d);
  if (detail::want_record(ctx, {a.node, b.node})) {
    int id = ctx.tape->alloc((ra + rb) * d);
    out.node = id;
    int an = a.node, bn = b.node;
    ctx.tape->set_back(id, [id, an, bn, ra, rb, d](Tape<T>& tp) {
      const auto& g = tp.grad_buf(id);
      if (an >= 0) {
        auto& ga = tp.grad_buf(an);
        for (int64_t i = 0; i < ra * d; ++i) ga[static_cast<size_t>(i)] += g[static_cast<size_t>(i)];
      }
      if (bn >= 0) {
        auto& gb = tp.grad_buf(bn);
        for (int64_t i = 0; i < rb * d; ++i)
          gb[static_cast<size_t>(i)] += g[static_cast<size_t>(ra * d + i)];
      }
    });
  }
  return out;
}

// Rows [r0, r1) of a 2-D tensor.
template <typename T>
Tensor<T> slice_rows(Context<T>& ctx, const Tensor<T>& x, int64_t r0, int64_t r1) {
  if (x.rank() != 2 || r0 < 0 || r1 > x.dim(0) || r0 > r1)
    throw data_error("slice_rows: bad range");
  int64_t d = x.dim(1);
  Tensor<T> out(Shape{r1 - r0, d});
  std::copy(x.ptr() + r0 * d, x.ptr() + r1 * d, out.mut());
  if (detail::want_record(ctx, {x.node})) {
    int id = ctx.tape->alloc((r1 - r0) * d);
    out.node = id;
    int xn = x.node;
    ctx.tape->set_back(id, [id, xn, r0, r1, d](Tape<T>& tp) {
      const auto& g = tp.grad_buf(id);
      auto& gx = tp.grad_buf(xn);
      for (int64_t i = 0; i < (r1 - r0) * d; ++i)
        gx[static_cast<size_t>(r0 * d + i)] += g[static_cast<size_t>(i)];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Causal depthwise conv1d
// ---------------------------------------------------------------------------

// x[T,D], kernel[D,W], bias[D]. Each channel i is convolved with its own
// width-W kernel over time, causally: y[t,i] = b_i + sum_tau w[i,tau] *
// xin[t-W+1+tau, i]. Rows before t=0 come from `tail` ((W-1) x D, oldest
// first; zeros when null). The tail is treated as a constant.
template <typename T>
Tensor<T> causal_conv1d(Context<T>& ctx, const Tensor<T>& x, const Tensor<T>& kernel,
                        const Tensor<T>& bias, const std::vector<T>* tail = nullptr) {
  if (x.rank() != 2 || kernel.rank() != 2 || x.dim(1) != kernel.dim(0))
    throw data_error("causal_conv1d: shape mismatch");
  int64_t tlen = x.dim(0), d = x.dim(1), w = kernel.dim(1);
  if (tail && static_cast<int64_t>(tail->size()) != (w - 1) * d)
    throw data_error("causal_conv1d: tail size mismatch");
  Tensor<T> out(x.shape);
  const T* px = x.ptr();
  const T* pk = kernel.ptr();
  const T* pb = bias.ptr();
  T* po = out.mut();
  for (int64_t t = 0; t < tlen; ++t) {
    T* o = po + t * d;
    for (int64_t i = 0; i < d; ++i) o[i] = pb[i];
    for (int64_t tau = 0; tau < w; ++tau) {
      int64_t src = t - (w - 1) + tau;
      const T* row;
      if (src >= 0) {
        row = px + src * d;
      } else if (tail) {
        row = tail->data() + (src + (w - 1)) * d;
      } else {
        continue;
      }
      for (int64_t i = 0; i < d; ++i) o[i] += pk[i * w + tau] * row[i];
    }
  }
  if (ctx.macs) ctx.macs->conv += static_cast<uint64_t>(tlen * d * w);
  check_finite("causal_conv1d", po, tlen * d);
  if (detail::want_record(ctx, {x.node, kernel.node, bias.node})) {
    int id = ctx.tape->alloc(tlen * d);
    out.node = id;
    int xn = x.node, kn = kernel.node, bn = bias.node;
    auto dx = x.data, dk = kernel.data;
    std::shared_ptr<std::vector<T>> dtail =
        tail ? std::make_shared<std::vector<T>>(*tail) : nullptr;
    ctx.tape->set_back(id, [id, xn, kn, bn, dx, dk, dtail, tlen, d, w](Tape<T>& tp) {
      const auto& g = tp.grad_buf(id);
      for (int64_t t = 0; t < tlen; ++t) {
        const T* gr = g.data() + t * d;
        if (bn >= 0) {
          auto& gb = tp.grad_buf(bn);
          for (int64_t i = 0; i < d; ++i) gb[static_cast<size_t>(i)] += gr[i];
        }
        for (int64_t tau = 0; tau < w; ++tau) {
          int64_t src = t - (w - 1) + tau;
          const T* row = nullptr;
          if (src >= 0) {
            row = dx->data() + src * d;
          } else if (dtail) {
            row = dtail->data() + (src + (w - 1)) * d;
          }
          if (kn >= 0 && row) {
            auto& gk = tp.grad_buf(kn);
            for (int64_t i = 0; i < d; ++i)
              gk[static_cast<size_t>(i * w + tau)] += gr[i] * row[i];
          }
          if (xn >= 0 && src >= 0) {
            auto& gx = tp.grad_buf(xn);
            for (int64_t i = 0; i < d; ++i)
              gx[static_cast<size_t>(src * d + i)] += gr[i] * (*dk)[static_cast<size_t>(i * w + tau)];
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Selective state-space scan
// ---------------------------------------------------------------------------

template <typename T>
struct ScanResult {
  Tensor<T> y;                 // [T, D]
  std::vector<T> final_state;  // [D * N], detached
};

// Diagonal selective scan. For each t:
//   abar[i,j] = exp(delta[t,i] * a[i,j])
//   s[i,j]    = abar[i,j] * s[i,j] + delta[t,i] * b_in[t,j] * u[t,i]
//   y[t,i]    = sum_j c_in[t,j] * s[i,j]
// u,delta: [T,D]; b_in,c_in: [T,N]; a: [D,N] (negative-real diagonal);
// s0: optional initial state [D*N] (constant, no gradient).
template <typename T>
ScanResult<T> selective_scan(Context<T>& ctx, const Tensor<T>& u,
                             const Tensor<T>& delta, const Tensor<T>& b_in,
                             const Tensor<T>& c_in, const Tensor<T>& a,
                             const std::vector<T>* s0 = nullptr) {
  if (u.rank() != 2 || delta.shape != u.shape || b_in.rank() != 2 ||
      c_in.shape != b_in.shape || a.rank() != 2 || a.dim(0) != u.dim(1) ||
      a.dim(1) != b_in.dim(1) || b_in.dim(0) != u.dim(0))
    throw data_error("selective_scan: shape mismatch");
  int64_t tlen = u.dim(0), d = u.dim(1), n = a.dim(1);
  if (s0 && static_cast<int64_t>(s0->size()) != d * n)
    throw data_error("selective_scan: initial state size mismatch");

  bool rec = detail::want_record(
      ctx, {u.node, delta.node, b_in.node, c_in.node, a.node});

  ScanResult<T> res;
  res.y = Tensor<T>(Shape{tlen, d});
  std::vector<T> state(static_cast<size_t>(d * n), T(0));
  if (s0) state = *s0;
  // Saved trajectories for the backward pass.
  auto s_all = rec ? std::make_shared<std::vector<T>>(static_cast<size_t>(tlen * d * n))
                   : nullptr;
  auto abar_all = rec ? std::make_shared<std::vector<T>>(static_cast<size_t>(tlen * d * n))
                      : nullptr;

  const T* pu = u.ptr();
  const T* pdt = delta.ptr();
  const T* pb = b_in.ptr();
  const T* pc = c_in.ptr();
  const T* pa = a.ptr();
  T* py = res.y.mut();

  for (int64_t t = 0; t < tlen; ++t) {
    const T* ur = pu + t * d;
    const T* dtr = pdt + t * d;
    const T* br = pb + t * n;
    const T* cr = pc + t * n;
    for (int64_t i = 0; i < d; ++i) {
      T dt = dtr[i];
      T du = dt * ur[i];
      T* s = state.data() + i * n;
      const T* ar = pa + i * n;
      T acc = T(0);
      if (rec) {
        T* sa = s_all->data() + (t * d + i) * n;
        T* ab = abar_all->data() + (t * d + i) * n;
        for (int64_t j = 0; j < n; ++j) {
          T e = std::exp(dt * ar[j]);
          s[j] = e * s[j] + du * br[j];
          ab[j] = e;
          sa[j] = s[j];
          acc += cr[j] * s[j];
        }
      } else {
        for (int64_t j = 0; j < n; ++j) {
          T e = std::exp(dt * ar[j]);
          s[j] = e * s[j] + du * br[j];
          acc += cr[j] * s[j];
        }
      }
      py[t * d + i] = acc;
    }
  }
  if (ctx.macs) ctx.macs->scan += static_cast<uint64_t>(3 * tlen * d * n);
  check_finite("selective_scan", py, tlen * d);
  res.final_state = state;

  if (rec) {
    int id = ctx.tape->alloc(tlen * d);
    res.y.node = id;
    int un = u.node, dtn = delta.node, bn = b_in.node, cn = c_in.node, an = a.node;
    auto dus = u.data, dts = delta.data, dbs = b_in.data, dcs = c_in.data, das = a.data;
    std::shared_ptr<std::vector<T>> ds0 =
        s0 ? std::make_shared<std::vector<T>>(*s0) : nullptr;
    ctx.tape->set_back(id, [id, un, dtn, bn, cn, an, dus, dts, dbs, dcs, das,
                            s_all, abar_all, ds0, tlen, d, n](Tape<T>& tp) {
      const auto& gy = tp.grad_buf(id);
      // ds holds dL/ds_t for the state at the step currently being processed.
      std::vector<T> ds(static_cast<size_t>(d * n), T(0));
      std::vector<T>* gu = un >= 0 ? &tp.grad_buf(un) : nullptr;
      std::vector<T>* gdt = dtn >= 0 ? &tp.grad_buf(dtn) : nullptr;
      std::vector<T>* gb = bn >= 0 ? &tp.grad_buf(bn) : nullptr;
      std::vector<T>* gc = cn >= 0 ? &tp.grad_buf(cn) : nullptr;
      std::vector<T>* ga = an >= 0 ? &tp.grad_buf(an) : nullptr;
      for (int64_t t = tlen - 1; t >= 0; --t) {
        const T* ur = dus->data() + t * d;
        const T* dtr = dts->data() + t * d;
        const T* br = dbs->data() + t * n;
        const T* cr = dcs->data() + t * n;
        for (int64_t i = 0; i < d; ++i) {
          T gyv = gy[static_cast<size_t>(t * d + i)];
          T dt = dtr[i];
          T uv = ur[i];
          const T* st = s_all->data() + (t * d + i) * n;
          const T* ab = abar_all->data() + (t * d + i) * n;
          const T* sprev =
              t > 0 ? s_all->data() + ((t - 1) * d + i) * n
                    : (ds0 ? ds0->data() + i * n : nullptr);
          const T* ar = das->data() + i * n;
          T* dsr = ds.data() + i * n;
          T ddt_acc = T(0);
          T du_acc = T(0);
          for (int64_t j = 0; j < n; ++j) {
            // Readout y[t,i] = sum_j c[t,j] * s_t[i,j].
            if (gc) (*gc)[static_cast<size_t>(t * n + j)] += gyv * st[j];
            T dsv = dsr[j] + gyv * cr[j];
            T sp = sprev ? sprev[j] : T(0);
            // State update s_t = exp(dt*a) * s_{t-1} + dt * b * u.
            if (ga) (*ga)[static_cast<size_t>(i * n + j)] += dsv * sp * ab[j] * dt;
            ddt_acc += dsv * (sp * ab[j] * ar[j] + br[j] * uv);
            du_acc += dsv * dt * br[j];
            if (gb) (*gb)[static_cast<size_t>(t * n + j)] += dsv * dt * uv;
            dsr[j] = dsv * ab[j];  // propagate to step t-1
          }
          if (gdt) (*gdt)[static_cast<size_t>(t * d + i)] += ddt_acc;
          if (gu) (*gu)[static_cast<size_t>(t * d + i)] += du_acc;
        }
      }
    });
  }
  return res;
}

// ---------------------------------------------------------------------------
// Multi-head scaled dot-product attention
// ---------------------------------------------------------------------------

// q:[Tq,D] k,v:[S,D], D divisible by heads. With causal=true, query row i
// (absolute position S-Tq+i) attends to keys j <= S-Tq+i, which is standard
// causal masking when Tq==S and full history access for a single-row step.
// Weights (post-softmax, h x Tq x S) are written to weights_out if non-null.
template <typename T>
Tensor<T> attention(Context<T>& ctx, const Tensor<T>& q, const Tensor<T>& k,
                    const Tensor<T>& v, int heads, bool causal,
                    std::vector<T>* weights_out = nullptr) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2 || q.dim(1) != k.dim(1) ||
      k.shape != v.shape || q.dim(1) % heads != 0)
    throw data_error("attention: shape mismatch");
  int64_t tq = q.dim(0), s = k.dim(0), dm = q.dim(1);
  int64_t hd = dm / heads;
  T scl = T(1) / std::sqrt(static_cast<T>(hd));

  bool rec = detail::want_record(ctx, {q.node, k.node, v.node});
  Tensor<T> out(Shape{tq, dm});
  auto probs = (rec || weights_out)
                   ? std::make_shared<std::vector<T>>(static_cast<size_t>(heads * tq * s))
                   : nullptr;

  std::vector<T> qh(static_cast<size_t>(tq * hd)), kh(static_cast<size_t>(s * hd)),
      vh(static_cast<size_t>(s * hd)), sc(static_cast<size_t>(tq * s)),
      oh(static_cast<size_t>(tq * hd));
  const T* pq = q.ptr();
  const T* pk = k.ptr();
  const T* pv = v.ptr();
  T* po = out.mut();

  for (int h = 0; h < heads; ++h) {
    int64_t c0 = h * hd;
    for (int64_t i = 0; i < tq; ++i)
      std::copy(pq + i * dm + c0, pq + i * dm + c0 + hd, qh.data() + i * hd);
    for (int64_t j = 0; j < s; ++j) {
      std::copy(pk + j * dm + c0, pk + j * dm + c0 + hd, kh.data() + j * hd);
      std::copy(pv + j * dm + c0, pv + j * dm + c0 + hd, vh.data() + j * hd);
    }
    std::fill(sc.begin(), sc.end(), T(0));
    mm_acc_nt(qh.data(), kh.data(), sc.data(), tq, hd, s);
    for (int64_t i = 0; i < tq; ++i) {
      T* row = sc.data() + i * s;
      int64_t lim = causal ? (s - tq + i + 1) : s;
      for (int64_t j = 0; j < lim; ++j) row[j] *= scl;
      for (int64_t j = lim; j < s; ++j) row[j] = -std::numeric_limits<T>::infinity();
      T mx = row[0];
      for (int64_t j = 1; j < lim; ++j) mx = std::max(mx, row[j]);
      T z = T(0);
      for (int64_t j = 0; j < lim; ++j) {
        row[j] = std::exp(row[j] - mx);
        z += row[j];
      }
      T inv = T(1) / z;
      for (int64_t j = 0; j < lim; ++j) row[j] *= inv;
      for (int64_t j = lim; j < s; ++j) row[j] = T(0);
    }
    if (probs)
      std::copy(sc.begin(), sc.end(), probs->data() + static_cast<size_t>(h) * tq * s);
    std::fill(oh.begin(), oh.end(), T(0));
    mm_acc_nn(sc.data(), vh.data(), oh.data(), tq, s, hd);
    for (int64_t i = 0; i < tq; ++i)
      std::copy(oh.data() + i * hd, oh.data() + (i + 1) * hd, po + i * dm + c0);
  }
  if (ctx.macs) ctx.macs->attention += static_cast<uint64_t>(2 * tq * s * dm);
  check_finite("attention", po, tq * dm);
  if (weights_out) *weights_out = *probs;

  if (rec) {
    int id = ctx.tape->alloc(tq * dm);
    out.node = id;
    int qn = q.node, kn = k.node, vn = v.node;
    auto dq = q.data, dk = k.data, dv = v.data;
    ctx.tape->set_back(id, [id, qn, kn, vn, dq, dk, dv, probs, heads, tq, s, dm,
                            hd, scl](Tape<T>& tp) {
      const auto& g = tp.grad_buf(id);
      std::vector<T>* gq = qn >= 0 ? &tp.grad_buf(qn) : nullptr;
      std::vector<T>* gk = kn >= 0 ? &tp.grad_buf(kn) : nullptr;
      std::vector<T>* gv = vn >= 0 ? &tp.grad_buf(vn) : nullptr;
      std::vector<T> qh(static_cast<size_t>(tq * hd)), kh(static_cast<size_t>(s * hd)),
          vh(static_cast<size_t>(s * hd)), goh(static_cast<size_t>(tq * hd)),
          gp(static_cast<size_t>(tq * s)), gsc(static_cast<size_t>(tq * s)),
          gqh(static_cast<size_t>(tq * hd)), gkh(static_cast<size_t>(s * hd)),
          gvh(static_cast<size_t>(s * hd));
      for (int h = 0; h < heads; ++h) {
        int64_t c0 = h * hd;
        const T* p = probs->data() + static_cast<size_t>(h) * tq * s;
        for (int64_t i = 0; i < tq; ++i) {
          std::copy(dq->data() + i * dm + c0, dq->data() + i * dm + c0 + hd,
                    qh.data() + i * hd);
          std::copy(g.data() + i * dm + c0, g.data() + i * dm + c0 + hd,
                    goh.data() + i * hd);
        }
        for (int64_t j = 0; j < s; ++j) {
          std::copy(dk->data() + j * dm + c0, dk->data() + j * dm + c0 + hd,
                    kh.data() + j * hd);
          std::copy(dv->data() + j * dm + c0, dv->data() + j * dm + c0 + hd,
                    vh.data() + j * hd);
        }
        // gV_h = P^T gO_h
        std::fill(gvh.begin(), gvh.end(), T(0));
        mm_acc_tn(p, goh.data(), gvh.data(), tq, s, hd);
        // gP = gO_h V_h^T
        std::fill(gp.begin(), gp.end(), T(0));
        mm_acc_nt(goh.data(), vh.data(), gp.data(), tq, hd, s);
        // Through softmax rows.
        for (int64_t i = 0; i < tq; ++i) {
          const T* pr = p + i * s;
          const T* gpr = gp.data() + i * s;
          T dot = T(0);
          for (int64_t j = 0; j < s; ++j) dot += gpr[j] * pr[j];
          T* o = gsc.data() + i * s;
          for (int64_t j = 0; j < s; ++j) o[j] = pr[j] * (gpr[j] - dot) * scl;
        }
        // gQ_h = gScores K_h ; gK_h = gScores^T Q_h
        std::fill(gqh.begin(), gqh.end(), T(0));
        mm_acc_nn(gsc.data(), kh.data(), gqh.data(), tq, s, hd);
        std::fill(gkh.begin(), gkh.end(), T(0));
        mm_acc_tn(gsc.data(), qh.data(), gkh.data(), tq, s, hd);
        if (gq)
          for (int64_t i = 0; i < tq; ++i)
            for (int64_t l = 0; l < hd; ++l)
              (*gq)[static_cast<size_t>(i * dm + c0 + l)] += gqh[static_cast<size_t>(i * hd + l)];
        if (gk)
          for (int64_t j = 0; j < s; ++j)
            for (int64_t l = 0; l < hd; ++l)
              (*gk)[static_cast<size_t>(j * dm + c0 + l)] += gkh[static_cast<size_t>(j * hd + l)];
        if (gv)
          for (int64_t j = 0; j < s; ++j)
            for (int64_t l = 0; l < hd; ++l)
              (*gv)[static_cast<size_t>(j * dm + c0 + l)] += gvh[static_cast<size_t>(j * hd + l)];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Masked negative log-likelihood
// ---------------------------------------------------------------------------

// Sum over rows with valid[t] != 0 of (logsumexp(logits[t]) - logits[t,target]).
// Callers divide by the valid count for a mean.
template <typename T>
Tensor<T> masked_nll(Context<T>& ctx, const Tensor<T>& logits,
                     const std::vector<int32_t>& targets,
                     const std::vector<uint8_t>& valid) {
  if (logits.rank() != 2 ||
      targets.size() != static_cast<size_t>(logits.dim(0)) ||
      valid.size() != targets.size())
    throw data_error("masked_nll: shape mismatch");
  int64_t rows = logits.dim(0), cols = logits.dim(1);
  const T* pl = logits.ptr();
  auto lse_all = std::make_shared<std::vector<T>>(static_cast<size_t>(rows), T(0));
  T acc = T(0);
  for (int64_t t = 0; t < rows; ++t) {
    if (!valid[static_cast<size_t>(t)]) continue;
    int32_t tgt = targets[static_cast<size_t>(t)];
    if (tgt < 0 || tgt >= cols) throw data_error("masked_nll: target out of range");
    const T* r = pl + t * cols;
    T mx = r[0];
    for (int64_t j = 1; j < cols; ++j) mx = std::max(mx, r[j]);
    T z = T(0);
    for (int64_t j = 0; j < cols; ++j) z += std::exp(r[j] - mx);
    T lse = mx + std::log(z);
    (*lse_all)[static_cast<size_t>(t)] = lse;
    acc += lse - r[tgt];
  }
  Tensor<T> out(Shape{1});
  out.mut()[0] = acc;
  check_finite("masked_nll", out.ptr(), 1);
  if (detail::want_record(ctx, {logits.node})) {
    int id = ctx.tape->alloc(1);
    out.node = id;
    int ln = logits.node;
    auto dl = logits.data;
    auto tg = std::make_shared<std::vector<int32_t>>(targets);
    auto va = std::make_shared<std::vector<uint8_t>>(valid);
    ctx.tape->set_back(id, [id, ln, dl, tg, va, lse_all, rows, cols](Tape<T>& tp) {
      T g = tp.grad_buf(id)[0];
      auto& gl = tp.grad_buf(ln);
      for (int64_t t = 0; t < rows; ++t) {
        if (!(*va)[static_cast<size_t>(t)]) continue;
        const T* r = dl->data() + t * cols;
        T lse = (*lse_all)[static_cast<size_t>(t)];
        T* o = gl.data() + t * cols;
        for (int64_t j = 0; j < cols; ++j) o[j] += g * std::exp(r[j] - lse);
        o[(*tg)[static_cast<size_t>(t)]] -= g;
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Value-space helpers (no autodiff)
// ---------------------------------------------------------------------------

template <typename T>
int64_t argmax_row(const Tensor<T>& x, int64_t row) {
  int64_t cols = x.dim(1);
  const T* r = x.ptr() + row * cols;
  int64_t best = 0;
  for (int64_t j = 1; j < cols; ++j)
    if (r[j] > r[best]) best = j;
  return best;
}

}  // namespace mave
