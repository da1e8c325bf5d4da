#pragma once

// Matching pattern-based similarity: per-layer question-token x answer-token
// interaction tensors, an element-wise comparison of two such patterns over
// the shared answer axis, and a BN-ReLU-Conv compression down to one
// similarity vector per pair.

#include <memory>
#include <vector>

#include "match2/core/ops.hpp"
#include "match2/model/config.hpp"
#include "match2/model/encoder.hpp"

namespace match2 {

// Stacks the per-layer interaction matrices q_l . a_l^T into [b, L, m, w].
// Masked question rows / answer columns are exactly zero because
// split_segments zeroes the features behind them.
template <typename T>
TensorT<T> matching_pattern(TapeT<T>* tape, const SegmentFeatures<T>& seg) {
  if (seg.q_layers.size() != seg.a_layers.size() || seg.q_layers.empty())
    throw_error(ErrorCategory::kContract,
                "matching_pattern: layer count mismatch between question and answer");
  int64_t b = seg.q_layers[0].shape()[0];
  int64_t m = seg.max_first, w = seg.max_second;
  std::vector<TensorT<T>> layers;
  layers.reserve(seg.q_layers.size());
  for (size_t l = 0; l < seg.q_layers.size(); ++l) {
    auto p = ops::matmul(tape, seg.q_layers[l],
                         ops::transpose_last(tape, seg.a_layers[l]));
    layers.push_back(ops::reshape(tape, p, {b, 1, m, w}));
  }
  return ops::concat(tape, layers, 1);
}

namespace pattern_detail {

constexpr double kLog2E = 1.4426950408889634074;  // 1/ln(2)

// softmax over the valid answer positions of one pattern row
template <typename T>
void row_softmax(const T* row, const std::vector<int32_t>& valid, T* out) {
  T mx = row[valid[0]];
  for (size_t k = 1; k < valid.size(); ++k) mx = std::max(mx, row[valid[k]]);
  T sum = 0;
  for (size_t k = 0; k < valid.size(); ++k) {
    T e = std::exp(row[valid[k]] - mx);
    out[k] = e;
    sum += e;
  }
  T inv = T(1) / sum;
  for (size_t k = 0; k < valid.size(); ++k) out[k] *= inv;
}

}  // namespace pattern_detail

// P^s[l,i,j] = s(P^u row i, P^a row j) over the answer positions valid in
// both masks; cells with an invalid question token on either side are 0.
//   dot  x.y                    cos  x.y / (|x||y|), 0 when a norm is 0
//   l1   1 / (1 + sum|x-y|)     l2   1 / (1 + sqrt(sum (x-y)^2))
//   jss  1 - JSD(softmax x, softmax y), base-2 logs
// pu: [b,L,m,w], pa: [b,L,n,w]; mask_u [b,m], mask_a [b,n], ans_mask [b,w].
template <typename T>
TensorT<T> pattern_similarity(TapeT<T>* tape, const TensorT<T>& pu,
                              const TensorT<T>& pa, const TensorT<T>& mask_u,
                              const TensorT<T>& mask_a, const TensorT<T>& ans_mask,
                              SimilarityFn fn) {
  if (pu.dim() != 4 || pa.dim() != 4)
    throw_error(ErrorCategory::kDimension, "pattern_similarity: patterns must be 4-d");
  int64_t b = pu.shape()[0], layers = pu.shape()[1], m = pu.shape()[2];
  int64_t w = pu.shape()[3], n = pa.shape()[2];
  if (pa.shape()[0] != b || pa.shape()[1] != layers)
    throw_error(ErrorCategory::kContract,
                "pattern_similarity: batch or layer mismatch");
  if (pa.shape()[3] != w)
    throw_error(ErrorCategory::kContract,
                "pattern_similarity: answer length mismatch, " +
                    shape_str(pu.shape()) + " vs " + shape_str(pa.shape()));

  auto out = TensorT<T>::zeros({b, layers, m, n});
  const T* pv = pu.vptr();
  const T* av = pa.vptr();
  const T* mu = mask_u.vptr();
  const T* ma = mask_a.vptr();
  const T* am = ans_mask.vptr();
  T* ov = out.vptr();

  // valid answer positions per batch row
  auto valid = std::make_shared<std::vector<std::vector<int32_t>>>(b);
  for (int64_t bi = 0; bi < b; ++bi)
    for (int64_t t = 0; t < w; ++t)
      if (am[bi * w + t] > 0) (*valid)[bi].push_back(static_cast<int32_t>(t));

  // jss precomputes the row distributions once per row
  std::shared_ptr<std::vector<T>> soft_u, soft_a;
  if (fn == SimilarityFn::kJss) {
    soft_u = std::make_shared<std::vector<T>>(static_cast<size_t>(b * layers * m * w));
    soft_a = std::make_shared<std::vector<T>>(static_cast<size_t>(b * layers * n * w));
    for (int64_t bi = 0; bi < b; ++bi) {
      const auto& vts = (*valid)[bi];
      if (vts.empty()) continue;
      for (int64_t l = 0; l < layers; ++l) {
        for (int64_t i = 0; i < m; ++i)
          pattern_detail::row_softmax(pv + ((bi * layers + l) * m + i) * w, vts,
                                      soft_u->data() + ((bi * layers + l) * m + i) * w);
        for (int64_t j = 0; j < n; ++j)
          pattern_detail::row_softmax(av + ((bi * layers + l) * n + j) * w, vts,
                                      soft_a->data() + ((bi * layers + l) * n + j) * w);
      }
    }
  }

  for (int64_t bi = 0; bi < b; ++bi) {
    const auto& vts = (*valid)[bi];
    for (int64_t l = 0; l < layers; ++l)
      for (int64_t i = 0; i < m; ++i) {
        if (mu[bi * m + i] <= 0) continue;
        const T* xrow = pv + ((bi * layers + l) * m + i) * w;
        for (int64_t j = 0; j < n; ++j) {
          if (ma[bi * n + j] <= 0) continue;
          const T* yrow = av + ((bi * layers + l) * n + j) * w;
          T s = 0;
          switch (fn) {
            case SimilarityFn::kDot: {
              for (int32_t t : vts) s += xrow[t] * yrow[t];
              break;
            }
            case SimilarityFn::kCos: {
              T d = 0, nx = 0, ny = 0;
              for (int32_t t : vts) {
                d += xrow[t] * yrow[t];
                nx += xrow[t] * xrow[t];
                ny += yrow[t] * yrow[t];
              }
              s = (nx == T(0) || ny == T(0))
                      ? T(0)
                      : d / (std::sqrt(nx) * std::sqrt(ny));
              break;
            }
            case SimilarityFn::kL1: {
              T d = 0;
              for (int32_t t : vts) d += std::abs(xrow[t] - yrow[t]);
              s = T(1) / (T(1) + d);
              break;
            }
            case SimilarityFn::kL2: {
              T d = 0;
              for (int32_t t : vts) {
                T diff = xrow[t] - yrow[t];
                d += diff * diff;
              }
              s = T(1) / (T(1) + std::sqrt(d));
              break;
            }
            case SimilarityFn::kJss: {
              const T* p = soft_u->data() + ((bi * layers + l) * m + i) * w;
              const T* q = soft_a->data() + ((bi * layers + l) * n + j) * w;
              T kl_p = 0, kl_q = 0;
              for (size_t k = 0; k < vts.size(); ++k) {
                T mid = (p[k] + q[k]) * T(0.5);
                if (p[k] > T(0))
                  kl_p += p[k] * std::log(p[k] / mid) * T(pattern_detail::kLog2E);
                if (q[k] > T(0))
                  kl_q += q[k] * std::log(q[k] / mid) * T(pattern_detail::kLog2E);
              }
              T jsd = T(0.5) * (kl_p + kl_q);
              s = T(1) - std::min(T(1), std::max(T(0), jsd));
              break;
            }
          }
          ov[((bi * layers + l) * m + i) * n + j] = s;
        }
      }
  }

  if (ops::detail::recording<T>(tape, {&pu, &pa})) {
    out.set_requires_grad(true);
    TensorT<T> pu_cap = pu, pa_cap = pa, mu_cap = mask_u, ma_cap = mask_a,
               out_cap = out;
    tape->record("pattern_similarity", {pu, pa}, out, [=]() mutable {
      const T* g = out_cap.grad().data();
      const T* xv = pu_cap.vptr();
      const T* yv = pa_cap.vptr();
      const T* sv = out_cap.vptr();
      const T* muv = mu_cap.vptr();
      const T* mav = ma_cap.vptr();
      T* gx = pu_cap.requires_grad() ? pu_cap.grad().data() : nullptr;
      T* gy = pa_cap.requires_grad() ? pa_cap.grad().data() : nullptr;
      std::vector<T> scratch_g, scratch_h;
      for (int64_t bi = 0; bi < b; ++bi) {
        const auto& vts = (*valid)[bi];
        for (int64_t l = 0; l < layers; ++l)
          for (int64_t i = 0; i < m; ++i) {
            if (muv[bi * m + i] <= 0) continue;
            const T* xrow = xv + ((bi * layers + l) * m + i) * w;
            T* gxrow = gx ? gx + ((bi * layers + l) * m + i) * w : nullptr;
            for (int64_t j = 0; j < n; ++j) {
              if (mav[bi * n + j] <= 0) continue;
              T gs = g[((bi * layers + l) * m + i) * n + j];
              if (gs == T(0)) continue;
              T s = sv[((bi * layers + l) * m + i) * n + j];
              const T* yrow = yv + ((bi * layers + l) * n + j) * w;
              T* gyrow = gy ? gy + ((bi * layers + l) * n + j) * w : nullptr;
              switch (fn) {
                case SimilarityFn::kDot: {
                  for (int32_t t : vts) {
                    if (gxrow) gxrow[t] += gs * yrow[t];
                    if (gyrow) gyrow[t] += gs * xrow[t];
                  }
                  break;
                }
                case SimilarityFn::kCos: {
                  T nx = 0, ny = 0;
                  for (int32_t t : vts) {
                    nx += xrow[t] * xrow[t];
                    ny += yrow[t] * yrow[t];
                  }
                  if (nx == T(0) || ny == T(0)) break;
                  T rnx = std::sqrt(nx), rny = std::sqrt(ny);
                  T inv = T(1) / (rnx * rny);
                  for (int32_t t : vts) {
                    if (gxrow) gxrow[t] += gs * (yrow[t] * inv - s * xrow[t] / nx);
                    if (gyrow) gyrow[t] += gs * (xrow[t] * inv - s * yrow[t] / ny);
                  }
                  break;
                }
                case SimilarityFn::kL1: {
                  T s2 = s * s;
                  for (int32_t t : vts) {
                    T diff = xrow[t] - yrow[t];
                    T sign = diff > T(0) ? T(1) : (diff < T(0) ? T(-1) : T(0));
                    if (gxrow) gxrow[t] -= gs * s2 * sign;
                    if (gyrow) gyrow[t] += gs * s2 * sign;
                  }
                  break;
                }
                case SimilarityFn::kL2: {
                  T d = 0;
                  for (int32_t t : vts) {
                    T diff = xrow[t] - yrow[t];
                    d += diff * diff;
                  }
                  T r = std::sqrt(d);
                  if (r == T(0)) break;
                  T s2 = s * s;
                  for (int32_t t : vts) {
                    T diff = xrow[t] - yrow[t];
                    if (gxrow) gxrow[t] -= gs * s2 * diff / r;
                    if (gyrow) gyrow[t] += gs * s2 * diff / r;
                  }
                  break;
                }
                case SimilarityFn::kJss: {
                  const T* p = soft_u->data() + ((bi * layers + l) * m + i) * w;
                  const T* q = soft_a->data() + ((bi * layers + l) * n + j) * w;
                  size_t nv = vts.size();
                  scratch_g.assign(nv, T(0));
                  scratch_h.assign(nv, T(0));
                  // dJSD/dp_k = log2(p_k / M_k) / 2, same shape for q
                  T gbar = 0, hbar = 0;
                  for (size_t k = 0; k < nv; ++k) {
                    T mid = (p[k] + q[k]) * T(0.5);
                    if (p[k] > T(0) && mid > T(0))
                      scratch_g[k] = T(0.5) * std::log(p[k] / mid) *
                                     T(pattern_detail::kLog2E);
                    if (q[k] > T(0) && mid > T(0))
                      scratch_h[k] = T(0.5) * std::log(q[k] / mid) *
                                     T(pattern_detail::kLog2E);
                    gbar += scratch_g[k] * p[k];
                    hbar += scratch_h[k] * q[k];
                  }
                  // s = 1 - JSD, softmax jacobian folded in
                  for (size_t k = 0; k < nv; ++k) {
                    if (gxrow) gxrow[vts[k]] -= gs * p[k] * (scratch_g[k] - gbar);
                    if (gyrow) gyrow[vts[k]] -= gs * q[k] * (scratch_h[k] - hbar);
                  }
                  break;
                }
              }
            }
          }
      }
    });
  }
  return out;
}

// Two BN-ReLU-Conv blocks with 3x3 kernels (L -> H channels, then H -> H)
// followed by mask-aware global average pooling down to [b, H].
template <typename T>
struct CompressParams {
  ops::BatchNormState<T> bn1;
  TensorT<T> conv1_w, conv1_b;
  ops::BatchNormState<T> bn2;
  TensorT<T> conv2_w, conv2_b;

  static CompressParams init(int64_t layers, int64_t hidden, Rng& rng, T stddev) {
    CompressParams p;
    p.bn1 = ops::BatchNormState<T>::init(layers);
    p.bn2 = ops::BatchNormState<T>::init(hidden);
    auto normal = [&rng, stddev](Shape shape) {
      auto t = TensorT<T>::zeros(std::move(shape), true);
      for (auto& v : t.values())
        v = static_cast<T>(rng.normal(0.0, static_cast<double>(stddev)));
      return t;
    };
    p.conv1_w = normal({hidden, layers, 3, 3});
    p.conv1_b = TensorT<T>::zeros({hidden}, true);
    p.conv2_w = normal({hidden, hidden, 3, 3});
    p.conv2_b = TensorT<T>::zeros({hidden}, true);
    return p;
  }

  void register_into(ParamRegistry<T>& registry, const std::string& prefix) const {
    registry.add(prefix + "/bn1_gamma", bn1.gamma);
    registry.add(prefix + "/bn1_beta", bn1.beta);
    registry.add(prefix + "/conv1_w", conv1_w);
    registry.add(prefix + "/conv1_b", conv1_b);
    registry.add(prefix + "/bn2_gamma", bn2.gamma);
    registry.add(prefix + "/bn2_beta", bn2.beta);
    registry.add(prefix + "/conv2_w", conv2_w);
    registry.add(prefix + "/conv2_b", conv2_b);
  }

  void register_buffers(ParamRegistry<T>& registry, const std::string& prefix) const {
    registry.add(prefix + "/bn1_running_mean", bn1.running_mean);
    registry.add(prefix + "/bn1_running_var", bn1.running_var);
    registry.add(prefix + "/bn2_running_mean", bn2.running_mean);
    registry.add(prefix + "/bn2_running_var", bn2.running_var);
  }
};

inline int64_t compress_param_count(int64_t layers, int64_t hidden) {
  return 2 * layers + hidden * layers * 9 + hidden + 2 * hidden +
         hidden * hidden * 9 + hidden;
}

// ps: [b, L, m, n]; pair_mask: [b, m, n] marking cells where both question
// tokens are valid. Pooling averages over those cells only.
template <typename T>
TensorT<T> compress(RunContext<T>& ctx, const TensorT<T>& ps,
                    CompressParams<T>& params, const TensorT<T>& pair_mask) {
  auto* tape = ctx.tape;
  auto x = ops::batch_norm(tape, ps, params.bn1, ctx.mode);
  x = ops::relu(tape, x);
  x = ops::conv2d(tape, x, params.conv1_w, params.conv1_b);
  x = ops::batch_norm(tape, x, params.bn2, ctx.mode);
  x = ops::relu(tape, x);
  x = ops::conv2d(tape, x, params.conv2_w, params.conv2_b);
  return ops::global_avg_pool(tape, x, pair_mask);
}

}  // namespace match2
