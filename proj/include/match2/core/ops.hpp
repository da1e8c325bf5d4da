#pragma once

// Forward kernels with their gradient rules. Every op takes the tape as the
// first argument; a null tape means plain inference (nothing is recorded and
// outputs carry requires_grad=false). Backward closures work on raw buffers
// and accumulate with += so a value used twice receives both path gradients.

#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <vector>

#include "match2/core/tape.hpp"
#include "match2/core/tensor.hpp"

namespace match2::ops {

namespace detail {

template <typename T>
inline bool any_requires(std::initializer_list<const TensorT<T>*> ins) {
  for (const auto* p : ins)
    if (p->requires_grad()) return true;
  return false;
}

template <typename T>
inline bool recording(TapeT<T>* tape, std::initializer_list<const TensorT<T>*> ins) {
  return tape != nullptr && any_requires<T>(ins);
}

// numpy broadcasting: align shapes on the right, extents must match or be 1.
inline Shape broadcast_shapes(const Shape& a, const Shape& b, const char* op) {
  size_t rank = std::max(a.size(), b.size());
  Shape out(rank, 1);
  for (size_t i = 0; i < rank; ++i) {
    int64_t da = i < a.size() ? a[a.size() - 1 - i] : 1;
    int64_t db = i < b.size() ? b[b.size() - 1 - i] : 1;
    if (da != db && da != 1 && db != 1)
      throw_error(ErrorCategory::kDimension,
                  std::string(op) + ": cannot broadcast " + shape_str(a) +
                      " with " + shape_str(b));
    out[rank - 1 - i] = std::max(da, db);
  }
  return out;
}

// Per-dimension step sizes into `shape` when iterating over `out`; 0 where
// the dimension is broadcast.
inline std::vector<int64_t> broadcast_strides(const Shape& shape, const Shape& out) {
  std::vector<int64_t> st(out.size(), 0);
  auto own = shape_strides(shape);
  for (size_t i = 0; i < shape.size(); ++i) {
    size_t oi = out.size() - shape.size() + i;
    st[oi] = (shape[i] == 1 && out[oi] != 1) ? 0 : own[i];
  }
  return st;
}

// Odometer walk over `out_shape`, calling fn(out_linear, off_a, off_b).
template <typename Fn>
inline void for_each_broadcast(const Shape& out_shape,
                               const std::vector<int64_t>& sa,
                               const std::vector<int64_t>& sb, Fn&& fn) {
  int64_t n = shape_numel(out_shape);
  size_t rank = out_shape.size();
  std::vector<int64_t> idx(rank, 0);
  int64_t oa = 0, ob = 0;
  for (int64_t i = 0; i < n; ++i) {
    fn(i, oa, ob);
    for (size_t d = rank; d-- > 0;) {
      idx[d]++;
      oa += sa[d];
      ob += sb[d];
      if (idx[d] < out_shape[d]) break;
      oa -= sa[d] * out_shape[d];
      ob -= sb[d] * out_shape[d];
      idx[d] = 0;
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise binary ops (broadcasting)
// ---------------------------------------------------------------------------

// Generic broadcast binary op. FwdFn: (a,b)->out. GradA: (a,b,g)->da contrib.
template <typename T, typename FwdFn, typename GradAFn, typename GradBFn>
TensorT<T> binary_op(TapeT<T>* tape, const char* name, const TensorT<T>& a,
                     const TensorT<T>& b, FwdFn fwd, GradAFn grad_a, GradBFn grad_b) {
  Shape out_shape = detail::broadcast_shapes(a.shape(), b.shape(), name);
  auto out = TensorT<T>::zeros(out_shape);
  auto sa = detail::broadcast_strides(a.shape(), out_shape);
  auto sb = detail::broadcast_strides(b.shape(), out_shape);
  const T* pa = a.vptr();
  const T* pb = b.vptr();
  T* po = out.vptr();
  detail::for_each_broadcast(out_shape, sa, sb,
                             [&](int64_t i, int64_t oa, int64_t ob) {
                               po[i] = fwd(pa[oa], pb[ob]);
                             });
  if (detail::recording<T>(tape, {&a, &b})) {
    out.set_requires_grad(true);
    TensorT<T> a_cap = a, b_cap = b, out_cap = out;
    tape->record(name, {a, b}, out, [=]() mutable {
      auto g = out_cap.grad();
      const T* xa = a_cap.vptr();
      const T* xb = b_cap.vptr();
      T* ga = a_cap.requires_grad() ? a_cap.grad().data() : nullptr;
      T* gb = b_cap.requires_grad() ? b_cap.grad().data() : nullptr;
      detail::for_each_broadcast(out_cap.shape(), sa, sb,
                                 [&](int64_t i, int64_t oa, int64_t ob) {
                                   if (ga) ga[oa] += grad_a(xa[oa], xb[ob], g[i]);
                                   if (gb) gb[ob] += grad_b(xa[oa], xb[ob], g[i]);
                                 });
    });
  }
  return out;
}

template <typename T>
TensorT<T> add(TapeT<T>* tape, const TensorT<T>& a, const TensorT<T>& b) {
  return binary_op<T>(
      tape, "add", a, b, [](T x, T y) { return x + y; },
      [](T, T, T g) { return g; }, [](T, T, T g) { return g; });
}

template <typename T>
TensorT<T> sub(TapeT<T>* tape, const TensorT<T>& a, const TensorT<T>& b) {
  return binary_op<T>(
      tape, "sub", a, b, [](T x, T y) { return x - y; },
      [](T, T, T g) { return g; }, [](T, T, T g) { return -g; });
}

template <typename T>
TensorT<T> mul(TapeT<T>* tape, const TensorT<T>& a, const TensorT<T>& b) {
  return binary_op<T>(
      tape, "mul", a, b, [](T x, T y) { return x * y; },
      [](T, T y, T g) { return g * y; }, [](T x, T, T g) { return g * x; });
}

// ---------------------------------------------------------------------------
// elementwise unary ops
// ---------------------------------------------------------------------------

// GradFn: (x, y, g) -> dx contribution.
template <typename T, typename FwdFn, typename GradFn>
TensorT<T> unary_op(TapeT<T>* tape, const char* name, const TensorT<T>& x,
                    FwdFn fwd, GradFn grad) {
  auto out = TensorT<T>::zeros(x.shape());
  const T* px = x.vptr();
  T* po = out.vptr();
  int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = fwd(px[i]);
  if (detail::recording<T>(tape, {&x})) {
    out.set_requires_grad(true);
    TensorT<T> x_cap = x, out_cap = out;
    tape->record(name, {x}, out, [=]() mutable {
      auto g = out_cap.grad();
      const T* xv = x_cap.vptr();
      const T* yv = out_cap.vptr();
      T* gx = x_cap.grad().data();
      for (int64_t i = 0; i < x_cap.numel(); ++i)
        gx[i] += grad(xv[i], yv[i], g[i]);
    });
  }
  return out;
}

template <typename T>
TensorT<T> relu(TapeT<T>* tape, const TensorT<T>& x) {
  return unary_op<T>(
      tape, "relu", x, [](T v) { return v > T(0) ? v : T(0); },
      [](T v, T, T g) { return v > T(0) ? g : T(0); });
}

template <typename T>
TensorT<T> sigmoid(TapeT<T>* tape, const TensorT<T>& x) {
  return unary_op<T>(
      tape, "sigmoid", x,
      [](T v) {
        // split on sign so exp never overflows
        if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
        T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T, T y, T g) { return g * y * (T(1) - y); });
}

template <typename T>
TensorT<T> tanh_op(TapeT<T>* tape, const TensorT<T>& x) {
  return unary_op<T>(
      tape, "tanh", x, [](T v) { return std::tanh(v); },
      [](T, T y, T g) { return g * (T(1) - y * y); });
}

template <typename T>
TensorT<T> scale(TapeT<T>* tape, const TensorT<T>& x, T c) {
  return unary_op<T>(
      tape, "scale", x, [c](T v) { return c * v; },
      [c](T, T, T g) { return c * g; });
}

template <typename T>
TensorT<T> add_scalar(TapeT<T>* tape, const TensorT<T>& x, T c) {
  return unary_op<T>(
      tape, "add_scalar", x, [c](T v) { return v + c; },
      [](T, T, T g) { return g; });
}

// ---------------------------------------------------------------------------
// matmul (batched, broadcasting batch dims)
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> matmul(TapeT<T>* tape, const TensorT<T>& a, const TensorT<T>& b) {
  if (a.dim() < 2 || b.dim() < 2)
    throw_error(ErrorCategory::kDimension,
                "matmul: operands must be at least 2-d, got " +
                    shape_str(a.shape()) + " and " + shape_str(b.shape()));
  int64_t p = a.shape()[a.dim() - 2];
  int64_t q = a.shape()[a.dim() - 1];
  int64_t q2 = b.shape()[b.dim() - 2];
  int64_t r = b.shape()[b.dim() - 1];
  if (q != q2)
    throw_error(ErrorCategory::kDimension,
                "matmul: inner extents disagree, " + shape_str(a.shape()) +
                    " vs " + shape_str(b.shape()));
  Shape batch_a(a.shape().begin(), a.shape().end() - 2);
  Shape batch_b(b.shape().begin(), b.shape().end() - 2);
  Shape batch = detail::broadcast_shapes(batch_a, batch_b, "matmul");
  Shape out_shape = batch;
  out_shape.push_back(p);
  out_shape.push_back(r);
  auto out = TensorT<T>::zeros(out_shape);

  // per-batch-element strides (in matrices, not scalars)
  auto sa = detail::broadcast_strides(batch_a, batch);
  auto sb = detail::broadcast_strides(batch_b, batch);
  int64_t mat_a = p * q, mat_b = q * r, mat_o = p * r;

  auto gemm = [p, q, r](const T* A, const T* B, T* C) {
    for (int64_t i = 0; i < p; ++i) {
      T* crow = C + i * r;
      const T* arow = A + i * q;
      for (int64_t k = 0; k < q; ++k) {
        T av = arow[k];
        const T* brow = B + k * r;
        for (int64_t j = 0; j < r; ++j) crow[j] += av * brow[j];
      }
    }
  };

  const T* pa = a.vptr();
  const T* pb = b.vptr();
  T* po = out.vptr();
  if (batch.empty()) {
    gemm(pa, pb, po);
  } else {
    detail::for_each_broadcast(batch, sa, sb, [&](int64_t i, int64_t oa, int64_t ob) {
      gemm(pa + oa * mat_a, pb + ob * mat_b, po + i * mat_o);
    });
  }

  if (detail::recording<T>(tape, {&a, &b})) {
    out.set_requires_grad(true);
    TensorT<T> a_cap = a, b_cap = b, out_cap = out;
    tape->record("matmul", {a, b}, out, [=]() mutable {
      const T* G = out_cap.grad().data();
      const T* A = a_cap.vptr();
      const T* B = b_cap.vptr();
      T* gA = a_cap.requires_grad() ? a_cap.grad().data() : nullptr;
      T* gB = b_cap.requires_grad() ? b_cap.grad().data() : nullptr;
      // dA = G . B^T ; dB = A^T . G, accumulated across broadcast batches
      auto bwd_one = [&](const T* Ab, const T* Bb, const T* Gb, T* gAb, T* gBb) {
        if (gAb) {
          for (int64_t i = 0; i < p; ++i)
            for (int64_t k = 0; k < q; ++k) {
              T acc = 0;
              const T* grow = Gb + i * r;
              const T* brow = Bb + k * r;
              for (int64_t j = 0; j < r; ++j) acc += grow[j] * brow[j];
              gAb[i * q + k] += acc;
            }
        }
        if (gBb) {
          for (int64_t k = 0; k < q; ++k) {
            T* gbrow = gBb + k * r;
            for (int64_t i = 0; i < p; ++i) {
              T av = Ab[i * q + k];
              const T* grow = Gb + i * r;
              for (int64_t j = 0; j < r; ++j) gbrow[j] += av * grow[j];
            }
          }
        }
      };
      if (batch.empty()) {
        bwd_one(A, B, G, gA, gB);
      } else {
        detail::for_each_broadcast(batch, sa, sb, [&](int64_t i, int64_t oa, int64_t ob) {
          bwd_one(A + oa * mat_a, B + ob * mat_b, G + i * mat_o,
                  gA ? gA + oa * mat_a : nullptr, gB ? gB + ob * mat_b : nullptr);
        });
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> reshape(TapeT<T>* tape, const TensorT<T>& x, Shape new_shape) {
  if (shape_numel(new_shape) != x.numel())
    throw_error(ErrorCategory::kDimension,
                "reshape: " + shape_str(x.shape()) + " to " + shape_str(new_shape));
  auto out = TensorT<T>::from(std::move(new_shape),
                              std::vector<T>(x.values().begin(), x.values().end()));
  if (detail::recording<T>(tape, {&x})) {
    out.set_requires_grad(true);
    TensorT<T> x_cap = x, out_cap = out;
    tape->record("reshape", {x}, out, [=]() mutable {
      auto g = out_cap.grad();
      T* gx = x_cap.grad().data();
      for (int64_t i = 0; i < x_cap.numel(); ++i) gx[i] += g[i];
    });
  }
  return out;
}

template <typename T>
TensorT<T> transpose_last(TapeT<T>* tape, const TensorT<T>& x) {
  if (x.dim() < 2)
    throw_error(ErrorCategory::kDimension, "transpose_last needs rank >= 2");
  Shape out_shape = x.shape();
  std::swap(out_shape[out_shape.size() - 1], out_shape[out_shape.size() - 2]);
  int64_t p = x.shape()[x.dim() - 2];
  int64_t q = x.shape()[x.dim() - 1];
  int64_t nb = x.numel() / (p * q);
  auto out = TensorT<T>::zeros(out_shape);
  const T* px = x.vptr();
  T* po = out.vptr();
  for (int64_t b = 0; b < nb; ++b) {
    const T* xm = px + b * p * q;
    T* om = po + b * p * q;
    for (int64_t i = 0; i < p; ++i)
      for (int64_t j = 0; j < q; ++j) om[j * p + i] = xm[i * q + j];
  }
  if (detail::recording<T>(tape, {&x})) {
    out.set_requires_grad(true);
    TensorT<T> x_cap = x, out_cap = out;
    tape->record("transpose_last", {x}, out, [=]() mutable {
      const T* g = out_cap.grad().data();
      T* gx = x_cap.grad().data();
      for (int64_t b = 0; b < nb; ++b) {
        const T* gm = g + b * p * q;
        T* gxm = gx + b * p * q;
        for (int64_t i = 0; i < p; ++i)
          for (int64_t j = 0; j < q; ++j) gxm[i * q + j] += gm[j * p + i];
      }
    });
  }
  return out;
}

template <typename T>
TensorT<T> slice(TapeT<T>* tape, const TensorT<T>& x, int64_t axis, int64_t start,
                 int64_t len) {
  int64_t d = x.dim();
  if (axis < 0) axis += d;
  if (axis < 0 || axis >= d)
    throw_error(ErrorCategory::kDimension, "slice: axis out of range");
  int64_t extent = x.shape()[axis];
  if (start < 0 || len <= 0 || start + len > extent)
    throw_error(ErrorCategory::kDimension, "slice: range out of bounds");
  Shape out_shape = x.shape();
  out_shape[axis] = len;
  int64_t outer = 1, inner = 1;
  for (int64_t i = 0; i < axis; ++i) outer *= x.shape()[i];
  for (int64_t i = axis + 1; i < d; ++i) inner *= x.shape()[i];
  auto out = TensorT<T>::zeros(out_shape);
  const T* px = x.vptr();
  T* po = out.vptr();
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t s = 0; s < len; ++s)
      std::copy_n(px + (o * extent + start + s) * inner, inner,
                  po + (o * len + s) * inner);
  if (detail::recording<T>(tape, {&x})) {
    out.set_requires_grad(true);
    TensorT<T> x_cap = x, out_cap = out;
    tape->record("slice", {x}, out, [=]() mutable {
      const T* g = out_cap.grad().data();
      T* gx = x_cap.grad().data();
      for (int64_t o = 0; o < outer; ++o)
        for (int64_t s = 0; s < len; ++s) {
          const T* gs = g + (o * len + s) * inner;
          T* gxs = gx + (o * extent + start + s) * inner;
          for (int64_t i = 0; i < inner; ++i) gxs[i] += gs[i];
        }
    });
  }
  return out;
}

template <typename T>
TensorT<T> concat(TapeT<T>* tape, const std::vector<TensorT<T>>& xs, int64_t axis) {
  if (xs.empty())
    throw_error(ErrorCategory::kContract, "concat: no inputs");
  int64_t d = xs[0].dim();
  if (axis < 0) axis += d;
  Shape out_shape = xs[0].shape();
  int64_t total = 0;
  for (const auto& x : xs) {
    if (x.dim() != d)
      throw_error(ErrorCategory::kDimension, "concat: rank mismatch");
    for (int64_t i = 0; i < d; ++i)
      if (i != axis && x.shape()[i] != out_shape[i])
        throw_error(ErrorCategory::kDimension,
                    "concat: shape mismatch " + shape_str(x.shape()) + " vs " +
                        shape_str(out_shape));
    total += x.shape()[axis];
  }
  out_shape[axis] = total;
  int64_t outer = 1, inner = 1;
  for (int64_t i = 0; i < axis; ++i) outer *= out_shape[i];
  for (int64_t i = axis + 1; i < d; ++i) inner *= out_shape[i];
  auto out = TensorT<T>::zeros(out_shape);
  T* po = out.vptr();
  int64_t offset = 0;
  for (const auto& x : xs) {
    int64_t ext = x.shape()[axis];
    const T* px = x.vptr();
    for (int64_t o = 0; o < outer; ++o)
      std::copy_n(px + o * ext * inner, ext * inner,
                  po + (o * total + offset) * inner);
    offset += ext;
  }
  bool rec = tape != nullptr;
  if (rec) {
    bool any = false;
    for (const auto& x : xs) any = any || x.requires_grad();
    rec = any;
  }
  if (rec) {
    out.set_requires_grad(true);
    std::vector<TensorT<T>> xs_cap = xs;
    TensorT<T> out_cap = out;
    tape->record("concat", xs, out, [=]() mutable {
      const T* g = out_cap.grad().data();
      int64_t off = 0;
      for (auto& x : xs_cap) {
        int64_t ext = x.shape()[axis];
        if (x.requires_grad()) {
          T* gx = x.grad().data();
          for (int64_t o = 0; o < outer; ++o) {
            const T* gs = g + (o * total + off) * inner;
            T* gxs = gx + o * ext * inner;
            for (int64_t i = 0; i < ext * inner; ++i) gxs[i] += gs[i];
          }
        }
        off += ext;
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> reduce_sum(TapeT<T>* tape, const TensorT<T>& x,
                      std::vector<int64_t> axes, bool keepdim = false) {
  int64_t d = x.dim();
  std::vector<bool> reduced(d, false);
  for (int64_t a : axes) {
    if (a < 0) a += d;
    if (a < 0 || a >= d)
      throw_error(ErrorCategory::kDimension, "reduce_sum: axis out of range");
    reduced[static_cast<size_t>(a)] = true;
  }
  Shape out_shape;
  for (int64_t i = 0; i < d; ++i) {
    if (reduced[i]) {
      if (keepdim) out_shape.push_back(1);
    } else {
      out_shape.push_back(x.shape()[i]);
    }
  }
  if (out_shape.empty()) out_shape.push_back(1);
  auto out = TensorT<T>::zeros(out_shape);

  // map each input linear index to an output linear index
  auto in_strides = shape_strides(x.shape());
  std::vector<int64_t> out_factor(d, 0);
  {
    int64_t acc = 1;
    for (int64_t i = d - 1; i >= 0; --i) {
      if (!reduced[i]) {
        out_factor[i] = acc;
        acc *= x.shape()[i];
      }
    }
  }
  const T* px = x.vptr();
  T* po = out.vptr();
  int64_t n = x.numel();
  std::vector<int64_t> idx(d, 0);
  int64_t oidx = 0;
  for (int64_t i = 0; i < n; ++i) {
    po[oidx] += px[i];
    for (int64_t dd = d; dd-- > 0;) {
      idx[dd]++;
      oidx += out_factor[dd];
      if (idx[dd] < x.shape()[dd]) break;
      oidx -= out_factor[dd] * x.shape()[dd];
      idx[dd] = 0;
    }
  }
  if (detail::recording<T>(tape, {&x})) {
    out.set_requires_grad(true);
    TensorT<T> x_cap = x, out_cap = out;
    tape->record("reduce_sum", {x}, out, [=]() mutable {
      const T* g = out_cap.grad().data();
      T* gx = x_cap.grad().data();
      std::vector<int64_t> id2(d, 0);
      int64_t oi = 0;
      for (int64_t i = 0; i < n; ++i) {
        gx[i] += g[oi];
        for (int64_t dd = d; dd-- > 0;) {
          id2[dd]++;
          oi += out_factor[dd];
          if (id2[dd] < x_cap.shape()[dd]) break;
          oi -= out_factor[dd] * x_cap.shape()[dd];
          id2[dd] = 0;
        }
      }
    });
  }
  return out;
}

template <typename T>
TensorT<T> sum_all(TapeT<T>* tape, const TensorT<T>& x) {
  std::vector<int64_t> axes(x.dim());
  for (int64_t i = 0; i < x.dim(); ++i) axes[i] = i;
  return reduce_sum(tape, x, axes, false);
}

template <typename T>
TensorT<T> mean_all(TapeT<T>* tape, const TensorT<T>& x) {
  return scale(tape, sum_all(tape, x), T(1) / static_cast<T>(x.numel()));
}

// ---------------------------------------------------------------------------
// softmax
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> softmax(TapeT<T>* tape, const TensorT<T>& x, int64_t axis) {
  int64_t d = x.dim();
  if (axis < 0) axis += d;
  if (axis < 0 || axis >= d)
    throw_error(ErrorCategory::kDimension, "softmax: axis out of range");
  int64_t outer = 1, inner = 1, extent = x.shape()[axis];
  for (int64_t i = 0; i < axis; ++i) outer *= x.shape()[i];
  for (int64_t i = axis + 1; i < d; ++i) inner *= x.shape()[i];
  auto out = TensorT<T>::zeros(x.shape());
  const T* px = x.vptr();
  T* po = out.vptr();
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t in = 0; in < inner; ++in) {
      const T* row = px + o * extent * inner + in;
      T* orow = po + o * extent * inner + in;
      T mx = row[0];
      for (int64_t k = 1; k < extent; ++k) mx = std::max(mx, row[k * inner]);
      T sum = 0;
      for (int64_t k = 0; k < extent; ++k) {
        T e = std::exp(row[k * inner] - mx);
        orow[k * inner] = e;
        sum += e;
      }
      T invs = T(1) / sum;
      for (int64_t k = 0; k < extent; ++k) orow[k * inner] *= invs;
    }
  if (detail::recording<T>(tape, {&x})) {
    out.set_requires_grad(true);
    TensorT<T> x_cap = x, out_cap = out;
    tape->record("softmax", {x}, out, [=]() mutable {
      const T* g = out_cap.grad().data();
      const T* y = out_cap.vptr();
      T* gx = x_cap.grad().data();
      for (int64_t o = 0; o < outer; ++o)
        for (int64_t in = 0; in < inner; ++in) {
          int64_t base = o * extent * inner + in;
          T dot = 0;
          for (int64_t k = 0; k < extent; ++k)
            dot += g[base + k * inner] * y[base + k * inner];
          for (int64_t k = 0; k < extent; ++k)
            gx[base + k * inner] +=
                y[base + k * inner] * (g[base + k * inner] - dot);
        }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// layer norm (over the last dimension)
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> layer_norm(TapeT<T>* tape, const TensorT<T>& x, const TensorT<T>& gamma,
                      const TensorT<T>& beta, T eps = T(1e-5)) {
  int64_t h = x.shape()[x.dim() - 1];
  if (gamma.numel() != h || beta.numel() != h)
    throw_error(ErrorCategory::kDimension, "layer_norm: parameter size mismatch");
  int64_t rows = x.numel() / h;
  auto out = TensorT<T>::zeros(x.shape());
  std::vector<T> mean(rows), invstd(rows);
  const T* px = x.vptr();
  const T* pg = gamma.vptr();
  const T* pb = beta.vptr();
  T* po = out.vptr();
  for (int64_t r = 0; r < rows; ++r) {
    const T* row = px + r * h;
    T m = 0;
    for (int64_t i = 0; i < h; ++i) m += row[i];
    m /= static_cast<T>(h);
    T v = 0;
    for (int64_t i = 0; i < h; ++i) {
      T dvi = row[i] - m;
      v += dvi * dvi;
    }
    v /= static_cast<T>(h);
    T is = T(1) / std::sqrt(v + eps);
    mean[r] = m;
    invstd[r] = is;
    T* orow = po + r * h;
    for (int64_t i = 0; i < h; ++i) orow[i] = (row[i] - m) * is * pg[i] + pb[i];
  }
  if (detail::recording<T>(tape, {&x, &gamma, &beta})) {
    out.set_requires_grad(true);
    TensorT<T> x_cap = x, g_cap = gamma, b_cap = beta, out_cap = out;
    tape->record("layer_norm", {x, gamma, beta}, out, [=]() mutable {
      const T* g = out_cap.grad().data();
      const T* xv = x_cap.vptr();
      const T* gm = g_cap.vptr();
      T* gx = x_cap.requires_grad() ? x_cap.grad().data() : nullptr;
      T* gg = g_cap.requires_grad() ? g_cap.grad().data() : nullptr;
      T* gb = b_cap.requires_grad() ? b_cap.grad().data() : nullptr;
      for (int64_t r = 0; r < rows; ++r) {
        const T* grow = g + r * h;
        const T* xrow = xv + r * h;
        T m = mean[r], is = invstd[r];
        T mean_dxhat = 0, mean_dxhat_xhat = 0;
        for (int64_t i = 0; i < h; ++i) {
          T xhat = (xrow[i] - m) * is;
          T dxhat = grow[i] * gm[i];
          mean_dxhat += dxhat;
          mean_dxhat_xhat += dxhat * xhat;
          if (gg) gg[i] += grow[i] * xhat;
          if (gb) gb[i] += grow[i];
        }
        mean_dxhat /= static_cast<T>(h);
        mean_dxhat_xhat /= static_cast<T>(h);
        if (gx) {
          T* gxrow = gx + r * h;
          for (int64_t i = 0; i < h; ++i) {
            T xhat = (xrow[i] - m) * is;
            T dxhat = grow[i] * gm[i];
            gxrow[i] += is * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// embedding lookup / row gather
// ---------------------------------------------------------------------------

// table: [V, H]; ids laid out row-major with shape `prefix`; out: prefix + [H].
template <typename T>
TensorT<T> embedding(TapeT<T>* tape, const TensorT<T>& table,
                     const std::vector<int32_t>& ids, Shape prefix) {
  if (static_cast<int64_t>(ids.size()) != shape_numel(prefix))
    throw_error(ErrorCategory::kDimension, "embedding: ids/prefix mismatch");
  int64_t v = table.shape()[0];
  int64_t h = table.shape()[1];
  Shape out_shape = prefix;
  out_shape.push_back(h);
  auto out = TensorT<T>::zeros(out_shape);
  const T* pt = table.vptr();
  T* po = out.vptr();
  for (size_t i = 0; i < ids.size(); ++i) {
    int32_t id = ids[i];
    if (id < 0 || id >= v)
      throw_error(ErrorCategory::kLookup,
                  "embedding: id " + std::to_string(id) + " outside table of " +
                      std::to_string(v));
    std::copy_n(pt + static_cast<int64_t>(id) * h, h, po + static_cast<int64_t>(i) * h);
  }
  if (detail::recording<T>(tape, {&table})) {
    out.set_requires_grad(true);
    TensorT<T> t_cap = table, out_cap = out;
    std::vector<int32_t> ids_cap = ids;
    tape->record("embedding", {table}, out, [=]() mutable {
      const T* g = out_cap.grad().data();
      T* gt = t_cap.grad().data();
      for (size_t i = 0; i < ids_cap.size(); ++i) {
        T* dst = gt + static_cast<int64_t>(ids_cap[i]) * h;
        const T* src = g + static_cast<int64_t>(i) * h;
        for (int64_t k = 0; k < h; ++k) dst[k] += src[k];
      }
    });
  }
  return out;
}

// x: [B, len, H]; idx: [B, k] with entries in [0, len); out: [B, k, H].
template <typename T>
TensorT<T> gather_rows(TapeT<T>* tape, const TensorT<T>& x,
                       const std::vector<int32_t>& idx, int64_t k) {
  if (x.dim() != 3)
    throw_error(ErrorCategory::kDimension, "gather_rows: input must be 3-d");
  int64_t bsz = x.shape()[0], len = x.shape()[1], h = x.shape()[2];
  if (static_cast<int64_t>(idx.size()) != bsz * k)
    throw_error(ErrorCategory::kDimension, "gather_rows: index count mismatch");
  auto out = TensorT<T>::zeros({bsz, k, h});
  const T* px = x.vptr();
  T* po = out.vptr();
  for (int64_t b = 0; b < bsz; ++b)
    for (int64_t j = 0; j < k; ++j) {
      int32_t row = idx[b * k + j];
      if (row < 0 || row >= len)
        throw_error(ErrorCategory::kContract, "gather_rows: index out of range");
      std::copy_n(px + (b * len + row) * h, h, po + (b * k + j) * h);
    }
  if (detail::recording<T>(tape, {&x})) {
    out.set_requires_grad(true);
    TensorT<T> x_cap = x, out_cap = out;
    std::vector<int32_t> idx_cap = idx;
    tape->record("gather_rows", {x}, out, [=]() mutable {
      const T* g = out_cap.grad().data();
      T* gx = x_cap.grad().data();
      for (int64_t b = 0; b < bsz; ++b)
        for (int64_t j = 0; j < k; ++j) {
          int64_t row = idx_cap[b * k + j];
          T* dst = gx + (b * len + row) * h;
          const T* src = g + (b * k + j) * h;
          for (int64_t t = 0; t < h; ++t) dst[t] += src[t];
        }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// conv2d: 3x3 kernels, stride 1, zero padding 1 ("same")
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> conv2d(TapeT<T>* tape, const TensorT<T>& x, const TensorT<T>& w,
                  const TensorT<T>& bias) {
  if (x.dim() != 4 || w.dim() != 4)
    throw_error(ErrorCategory::kDimension, "conv2d: expects 4-d input and kernels");
  int64_t bsz = x.shape()[0], cin = x.shape()[1], mh = x.shape()[2], mw = x.shape()[3];
  int64_t cout = w.shape()[0];
  if (w.shape()[1] != cin)
    throw_error(ErrorCategory::kDimension,
                "conv2d: channel mismatch, input " + shape_str(x.shape()) +
                    " kernels " + shape_str(w.shape()));
  if (w.shape()[2] != 3 || w.shape()[3] != 3)
    throw_error(ErrorCategory::kContract, "conv2d: kernels must be 3x3");
  if (bias.numel() != cout)
    throw_error(ErrorCategory::kDimension, "conv2d: bias size mismatch");
  auto out = TensorT<T>::zeros({bsz, cout, mh, mw});
  const T* px = x.vptr();
  const T* pw = w.vptr();
  const T* pbias = bias.vptr();
  T* po = out.vptr();
  for (int64_t b = 0; b < bsz; ++b)
    for (int64_t co = 0; co < cout; ++co) {
      T* oimg = po + (b * cout + co) * mh * mw;
      for (int64_t i = 0; i < mh * mw; ++i) oimg[i] = pbias[co];
      for (int64_t ci = 0; ci < cin; ++ci) {
        const T* ximg = px + (b * cin + ci) * mh * mw;
        const T* k = pw + (co * cin + ci) * 9;
        for (int64_t di = -1; di <= 1; ++di)
          for (int64_t dj = -1; dj <= 1; ++dj) {
            T kv = k[(di + 1) * 3 + (dj + 1)];
            if (kv == T(0)) continue;
            int64_t i0 = std::max<int64_t>(0, -di), i1 = std::min(mh, mh - di);
            int64_t j0 = std::max<int64_t>(0, -dj), j1 = std::min(mw, mw - dj);
            for (int64_t i = i0; i < i1; ++i) {
              T* orow = oimg + i * mw;
              const T* xrow = ximg + (i + di) * mw + dj;
              for (int64_t j = j0; j < j1; ++j) orow[j] += kv * xrow[j];
            }
          }
      }
    }
  if (detail::recording<T>(tape, {&x, &w, &bias})) {
    out.set_requires_grad(true);
    TensorT<T> x_cap = x, w_cap = w, b_cap = bias, out_cap = out;
    tape->record("conv2d", {x, w, bias}, out, [=]() mutable {
      const T* g = out_cap.grad().data();
      const T* xv = x_cap.vptr();
      const T* wv = w_cap.vptr();
      T* gx = x_cap.requires_grad() ? x_cap.grad().data() : nullptr;
      T* gw = w_cap.requires_grad() ? w_cap.grad().data() : nullptr;
      T* gb = b_cap.requires_grad() ? b_cap.grad().data() : nullptr;
      for (int64_t b = 0; b < bsz; ++b)
        for (int64_t co = 0; co < cout; ++co) {
          const T* gimg = g + (b * cout + co) * mh * mw;
          if (gb) {
            T acc = 0;
            for (int64_t i = 0; i < mh * mw; ++i) acc += gimg[i];
            gb[co] += acc;
          }
          for (int64_t ci = 0; ci < cin; ++ci) {
            const T* ximg = xv + (b * cin + ci) * mh * mw;
            const T* k = wv + (co * cin + ci) * 9;
            T* gximg = gx ? gx + (b * cin + ci) * mh * mw : nullptr;
            T* gk = gw ? gw + (co * cin + ci) * 9 : nullptr;
            for (int64_t di = -1; di <= 1; ++di)
              for (int64_t dj = -1; dj <= 1; ++dj) {
                int64_t i0 = std::max<int64_t>(0, -di), i1 = std::min(mh, mh - di);
                int64_t j0 = std::max<int64_t>(0, -dj), j1 = std::min(mw, mw - dj);
                T kv = k[(di + 1) * 3 + (dj + 1)];
                T kacc = 0;
                for (int64_t i = i0; i < i1; ++i) {
                  const T* grow = gimg + i * mw;
                  const T* xrow = ximg + (i + di) * mw + dj;
                  T* gxrow = gximg ? gximg + (i + di) * mw + dj : nullptr;
                  for (int64_t j = j0; j < j1; ++j) {
                    kacc += grow[j] * xrow[j];
                    if (gxrow) gxrow[j] += grow[j] * kv;
                  }
                }
                if (gk) gk[(di + 1) * 3 + (dj + 1)] += kacc;
              }
          }
        }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// batch norm over (batch, h, w) per channel
// ---------------------------------------------------------------------------

// Learnable gamma/beta plus running statistics updated in train mode with
// momentum 0.9 (running = 0.9 * running + 0.1 * batch). Before the first
// train step the running stats are mean 0, var 1, and infer mode uses those.
template <typename T>
struct BatchNormState {
  TensorT<T> gamma;         // [C], trainable
  TensorT<T> beta;          // [C], trainable
  TensorT<T> running_mean;  // [C], buffer
  TensorT<T> running_var;   // [C], buffer
  T momentum = T(0.9);
  T eps = T(1e-5);

  static BatchNormState init(int64_t channels) {
    BatchNormState s;
    s.gamma = TensorT<T>::full({channels}, T(1));
    s.gamma.set_requires_grad(true);
    s.beta = TensorT<T>::zeros({channels}, true);
    s.running_mean = TensorT<T>::zeros({channels});
    s.running_var = TensorT<T>::full({channels}, T(1));
    return s;
  }
};

template <typename T>
TensorT<T> batch_norm(TapeT<T>* tape, const TensorT<T>& x, BatchNormState<T>& state,
                      Mode mode) {
  if (x.dim() != 4)
    throw_error(ErrorCategory::kDimension, "batch_norm: expects 4-d input");
  int64_t bsz = x.shape()[0], c = x.shape()[1], mh = x.shape()[2], mw = x.shape()[3];
  if (state.gamma.numel() != c)
    throw_error(ErrorCategory::kDimension, "batch_norm: channel mismatch");
  int64_t plane = mh * mw;
  int64_t n = bsz * plane;
  auto out = TensorT<T>::zeros(x.shape());
  const T* px = x.vptr();
  const T* pg = state.gamma.vptr();
  const T* pb = state.beta.vptr();
  T* po = out.vptr();

  std::vector<T> mean(c), invstd(c);
  if (mode == Mode::kTrain) {
    for (int64_t ch = 0; ch < c; ++ch) {
      T m = 0;
      for (int64_t b = 0; b < bsz; ++b) {
        const T* img = px + (b * c + ch) * plane;
        for (int64_t i = 0; i < plane; ++i) m += img[i];
      }
      m /= static_cast<T>(n);
      T v = 0;
      for (int64_t b = 0; b < bsz; ++b) {
        const T* img = px + (b * c + ch) * plane;
        for (int64_t i = 0; i < plane; ++i) {
          T dvi = img[i] - m;
          v += dvi * dvi;
        }
      }
      v /= static_cast<T>(n);
      mean[ch] = m;
      invstd[ch] = T(1) / std::sqrt(v + state.eps);
      T* rm = state.running_mean.vptr();
      T* rv = state.running_var.vptr();
      rm[ch] = state.momentum * rm[ch] + (T(1) - state.momentum) * m;
      rv[ch] = state.momentum * rv[ch] + (T(1) - state.momentum) * v;
    }
  } else {
    const T* rm = state.running_mean.vptr();
    const T* rv = state.running_var.vptr();
    for (int64_t ch = 0; ch < c; ++ch) {
      mean[ch] = rm[ch];
      invstd[ch] = T(1) / std::sqrt(rv[ch] + state.eps);
    }
  }
  for (int64_t b = 0; b < bsz; ++b)
    for (int64_t ch = 0; ch < c; ++ch) {
      const T* img = px + (b * c + ch) * plane;
      T* oimg = po + (b * c + ch) * plane;
      T m = mean[ch], is = invstd[ch], ga = pg[ch], be = pb[ch];
      for (int64_t i = 0; i < plane; ++i) oimg[i] = (img[i] - m) * is * ga + be;
    }

  if (detail::recording<T>(tape, {&x, &state.gamma, &state.beta})) {
    out.set_requires_grad(true);
    TensorT<T> x_cap = x, g_cap = state.gamma, b_cap = state.beta, out_cap = out;
    bool train = mode == Mode::kTrain;
    tape->record("batch_norm", {x, state.gamma, state.beta}, out, [=]() mutable {
      const T* g = out_cap.grad().data();
      const T* xv = x_cap.vptr();
      const T* gm = g_cap.vptr();
      T* gx = x_cap.requires_grad() ? x_cap.grad().data() : nullptr;
      T* gg = g_cap.requires_grad() ? g_cap.grad().data() : nullptr;
      T* gb = b_cap.requires_grad() ? b_cap.grad().data() : nullptr;
      for (int64_t ch = 0; ch < c; ++ch) {
        T m = mean[ch], is = invstd[ch];
        T sum_g = 0, sum_g_xhat = 0;
        for (int64_t b = 0; b < bsz; ++b) {
          const T* gi = g + (b * c + ch) * plane;
          const T* xi = xv + (b * c + ch) * plane;
          for (int64_t i = 0; i < plane; ++i) {
            sum_g += gi[i];
            sum_g_xhat += gi[i] * (xi[i] - m) * is;
          }
        }
        if (gg) gg[ch] += sum_g_xhat;
        if (gb) gb[ch] += sum_g;
        if (gx) {
          T ga = gm[ch];
          if (train) {
            T inv_n = T(1) / static_cast<T>(n);
            for (int64_t b = 0; b < bsz; ++b) {
              const T* gi = g + (b * c + ch) * plane;
              const T* xi = xv + (b * c + ch) * plane;
              T* gxi = gx + (b * c + ch) * plane;
              for (int64_t i = 0; i < plane; ++i) {
                T xhat = (xi[i] - m) * is;
                gxi[i] += ga * is *
                          (gi[i] - inv_n * sum_g - xhat * inv_n * sum_g_xhat);
              }
            }
          } else {
            for (int64_t b = 0; b < bsz; ++b) {
              const T* gi = g + (b * c + ch) * plane;
              T* gxi = gx + (b * c + ch) * plane;
              for (int64_t i = 0; i < plane; ++i) gxi[i] += gi[i] * ga * is;
            }
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// masked global average pooling
// ---------------------------------------------------------------------------

// x: [B, C, m, n]; mask: [B, m, n] of 0/1. Mean per channel over valid cells.
template <typename T>
TensorT<T> global_avg_pool(TapeT<T>* tape, const TensorT<T>& x, const TensorT<T>& mask) {
  if (x.dim() != 4 || mask.dim() != 3)
    throw_error(ErrorCategory::kDimension, "global_avg_pool: bad ranks");
  int64_t bsz = x.shape()[0], c = x.shape()[1], mh = x.shape()[2], mw = x.shape()[3];
  if (mask.shape()[0] != bsz || mask.shape()[1] != mh || mask.shape()[2] != mw)
    throw_error(ErrorCategory::kDimension, "global_avg_pool: mask shape mismatch");
  int64_t plane = mh * mw;
  std::vector<T> inv_count(bsz);
  const T* pm = mask.vptr();
  for (int64_t b = 0; b < bsz; ++b) {
    T cnt = 0;
    for (int64_t i = 0; i < plane; ++i) cnt += pm[b * plane + i];
    if (cnt <= T(0))
      throw_error(ErrorCategory::kDegenerateInput,
                  "global_avg_pool: empty mask in batch item " + std::to_string(b));
    inv_count[b] = T(1) / cnt;
  }
  auto out = TensorT<T>::zeros({bsz, c});
  const T* px = x.vptr();
  T* po = out.vptr();
  for (int64_t b = 0; b < bsz; ++b)
    for (int64_t ch = 0; ch < c; ++ch) {
      const T* img = px + (b * c + ch) * plane;
      const T* mrow = pm + b * plane;
      T acc = 0;
      for (int64_t i = 0; i < plane; ++i) acc += img[i] * mrow[i];
      po[b * c + ch] = acc * inv_count[b];
    }
  if (detail::recording<T>(tape, {&x})) {
    out.set_requires_grad(true);
    TensorT<T> x_cap = x, m_cap = mask, out_cap = out;
    tape->record("global_avg_pool", {x, mask}, out, [=]() mutable {
      const T* g = out_cap.grad().data();
      const T* pm2 = m_cap.vptr();
      T* gx = x_cap.grad().data();
      for (int64_t b = 0; b < bsz; ++b)
        for (int64_t ch = 0; ch < c; ++ch) {
          T gv = g[b * c + ch] * inv_count[b];
          T* gimg = gx + (b * c + ch) * plane;
          const T* mrow = pm2 + b * plane;
          for (int64_t i = 0; i < plane; ++i) gimg[i] += gv * mrow[i];
        }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// dropout (inverted: survivors scaled by 1/keep at train time)
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> dropout(TapeT<T>* tape, const TensorT<T>& x, T keep_rate, Mode mode,
                   Rng* rng) {
  if (keep_rate <= T(0) || keep_rate > T(1))
    throw_error(ErrorCategory::kConfig,
                "dropout: keep_rate must be in (0,1], got " +
                    std::to_string(static_cast<double>(keep_rate)));
  if (mode == Mode::kInfer || keep_rate == T(1)) return x;
  if (!rng)
    throw_error(ErrorCategory::kContract, "dropout: train mode needs an rng");
  int64_t n = x.numel();
  std::vector<T> factor(n);
  T inv_keep = T(1) / keep_rate;
  for (int64_t i = 0; i < n; ++i)
    factor[i] = rng->bernoulli(static_cast<double>(keep_rate)) ? inv_keep : T(0);
  auto out = TensorT<T>::zeros(x.shape());
  const T* px = x.vptr();
  T* po = out.vptr();
  for (int64_t i = 0; i < n; ++i) po[i] = px[i] * factor[i];
  if (detail::recording<T>(tape, {&x})) {
    out.set_requires_grad(true);
    TensorT<T> x_cap = x, out_cap = out;
    auto factor_cap = std::make_shared<std::vector<T>>(std::move(factor));
    tape->record("dropout", {x}, out, [=]() mutable {
      const T* g = out_cap.grad().data();
      T* gx = x_cap.grad().data();
      const auto& f = *factor_cap;
      for (int64_t i = 0; i < x_cap.numel(); ++i) gx[i] += g[i] * f[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// binary cross-entropy, elementwise over probabilities
// ---------------------------------------------------------------------------

// targets carries no gradient. Probabilities are clamped to
// [1e-7, 1 - 1e-7]; clamped elements get zero gradient.
template <typename T>
TensorT<T> binary_cross_entropy(TapeT<T>* tape, const TensorT<T>& pred,
                                const TensorT<T>& target) {
  if (pred.shape() != target.shape())
    throw_error(ErrorCategory::kDimension,
                "binary_cross_entropy: shape mismatch " + shape_str(pred.shape()) +
                    " vs " + shape_str(target.shape()));
  const T lo = T(1e-7), hi = T(1) - T(1e-7);
  auto out = TensorT<T>::zeros(pred.shape());
  const T* pp = pred.vptr();
  const T* pt = target.vptr();
  T* po = out.vptr();
  int64_t n = pred.numel();
  for (int64_t i = 0; i < n; ++i) {
    T p = std::min(hi, std::max(lo, pp[i]));
    po[i] = -(pt[i] * std::log(p) + (T(1) - pt[i]) * std::log(T(1) - p));
  }
  if (detail::recording<T>(tape, {&pred})) {
    out.set_requires_grad(true);
    TensorT<T> p_cap = pred, t_cap = target, out_cap = out;
    tape->record("binary_cross_entropy", {pred, target}, out, [=]() mutable {
      const T* g = out_cap.grad().data();
      const T* pp2 = p_cap.vptr();
      const T* pt2 = t_cap.vptr();
      T* gp = p_cap.grad().data();
      for (int64_t i = 0; i < p_cap.numel(); ++i) {
        T p = pp2[i];
        if (p <= lo || p >= hi) continue;
        gp[i] += g[i] * (p - pt2[i]) / (p * (T(1) - p));
      }
    });
  }
  return out;
}

}  // namespace match2::ops
