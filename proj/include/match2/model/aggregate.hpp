#pragma once

// Fusion of the representation-based similarity vector (primary) with the
// pattern-based one (complementary):
//   r = sigmoid(Wr va + Ur vq)      z = sigmoid(Wz va + Uz vq)
//   vhat = tanh(W va + U (r * vq))  v = z * vq + (1 - z) * vhat
// No bias terms in the gate. The scoring head is
//   y = sigmoid(W2 relu(W1 v + b1) + b2).

#include "match2/core/ops.hpp"
#include "match2/model/encoder.hpp"
#include "match2/model/registry.hpp"

namespace match2 {

template <typename T>
struct GateParams {
  TensorT<T> wr, wz, w;  // act on v_a, all [H, H]
  TensorT<T> ur, uz, u;  // act on v_q

  static GateParams init(int64_t hidden, Rng& rng, T stddev) {
    auto normal = [&rng, stddev](Shape shape) {
      auto t = TensorT<T>::zeros(std::move(shape), true);
      for (auto& v : t.values())
        v = static_cast<T>(rng.normal(0.0, static_cast<double>(stddev)));
      return t;
    };
    GateParams p;
    p.wr = normal({hidden, hidden});
    p.wz = normal({hidden, hidden});
    p.w = normal({hidden, hidden});
    p.ur = normal({hidden, hidden});
    p.uz = normal({hidden, hidden});
    p.u = normal({hidden, hidden});
    return p;
  }

  void register_into(ParamRegistry<T>& registry, const std::string& prefix) const {
    registry.add(prefix + "/wr", wr);
    registry.add(prefix + "/wz", wz);
    registry.add(prefix + "/w", w);
    registry.add(prefix + "/ur", ur);
    registry.add(prefix + "/uz", uz);
    registry.add(prefix + "/u", u);
  }
};

// Test hooks: overrides replace z or vhat after their usual computation.
template <typename T>
TensorT<T> gate_fuse_impl(TapeT<T>* tape, const TensorT<T>& v_q, const TensorT<T>& v_a,
                          const GateParams<T>& p, const TensorT<T>* z_override,
                          const TensorT<T>* vhat_override) {
  if (v_q.shape() != v_a.shape())
    throw_error(ErrorCategory::kContract,
                "gate_fuse: dimension mismatch " + shape_str(v_q.shape()) + " vs " +
                    shape_str(v_a.shape()));
  auto r = ops::sigmoid(tape, ops::add(tape, enc_detail::linear_nobias(tape, v_a, p.wr),
                                       enc_detail::linear_nobias(tape, v_q, p.ur)));
  auto z = ops::sigmoid(tape, ops::add(tape, enc_detail::linear_nobias(tape, v_a, p.wz),
                                       enc_detail::linear_nobias(tape, v_q, p.uz)));
  if (z_override) z = *z_override;
  auto vhat = ops::tanh_op(
      tape, ops::add(tape, enc_detail::linear_nobias(tape, v_a, p.w),
                     enc_detail::linear_nobias(tape, ops::mul(tape, r, v_q), p.u)));
  if (vhat_override) vhat = *vhat_override;
  auto one_minus_z = ops::add_scalar(tape, ops::scale(tape, z, T(-1)), T(1));
  return ops::add(tape, ops::mul(tape, z, v_q), ops::mul(tape, one_minus_z, vhat));
}

template <typename T>
TensorT<T> gate_fuse(TapeT<T>* tape, const TensorT<T>& v_q, const TensorT<T>& v_a,
                     const GateParams<T>& p) {
  return gate_fuse_impl<T>(tape, v_q, v_a, p, nullptr, nullptr);
}

template <typename T>
struct MlpHeadParams {
  TensorT<T> w1, b1;  // [H_mlp, H], [H_mlp]
  TensorT<T> w2, b2;  // [1, H_mlp], [1]

  static MlpHeadParams init(int64_t in, int64_t hidden, Rng& rng, T stddev) {
    auto normal = [&rng, stddev](Shape shape) {
      auto t = TensorT<T>::zeros(std::move(shape), true);
      for (auto& v : t.values())
        v = static_cast<T>(rng.normal(0.0, static_cast<double>(stddev)));
      return t;
    };
    MlpHeadParams p;
    p.w1 = normal({hidden, in});
    p.b1 = TensorT<T>::zeros({hidden}, true);
    p.w2 = normal({1, hidden});
    p.b2 = TensorT<T>::zeros({1}, true);
    return p;
  }

  void register_into(ParamRegistry<T>& registry, const std::string& prefix) const {
    registry.add(prefix + "/w1", w1);
    registry.add(prefix + "/b1", b1);
    registry.add(prefix + "/w2", w2);
    registry.add(prefix + "/b2", b2);
  }
};

// v: [b, H] -> probabilities [b]
template <typename T>
TensorT<T> mlp_head(RunContext<T>& ctx, const TensorT<T>& v, const MlpHeadParams<T>& p) {
  auto* tape = ctx.tape;
  auto hidden = ops::relu(tape, enc_detail::linear(tape, v, p.w1, p.b1));
  hidden = ops::dropout(tape, hidden, ctx.keep_rate, ctx.mode, ctx.rng);
  auto logits = enc_detail::linear(tape, hidden, p.w2, p.b2);
  int64_t b = v.shape()[0];
  return ops::sigmoid(tape, ops::reshape(tape, logits, {b}));
}

}  // namespace match2
