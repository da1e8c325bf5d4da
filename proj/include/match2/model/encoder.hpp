#pragma once

// Stacked transformer encoder over a [CLS] a... [SEP] b... [SEP] pair:
// token + learned position + segment embeddings, then L pre-norm residual
// blocks (masked multi-head self-attention, position-wise feed-forward).
// Produces the pooled feature (tanh projection of the [CLS] position) and
// every layer's sequence features, which the matching-pattern layer splits
// back into question and answer spans.

#include <optional>
#include <string>
#include <vector>

#include "match2/core/ops.hpp"
#include "match2/model/config.hpp"
#include "match2/model/registry.hpp"
#include "match2/text/dataset.hpp"

namespace match2 {

template <typename T>
struct RunContext {
  TapeT<T>* tape = nullptr;
  Mode mode = Mode::kInfer;
  T keep_rate = T(1);
  Rng* rng = nullptr;
};

template <typename T>
struct EncoderLayerParams {
  TensorT<T> wq, bq, wv, bv, wo, bo;
  TensorT<T> wk;  // no key bias: softmax is invariant to a shared key shift
  TensorT<T> ln1_gamma, ln1_beta, ln2_gamma, ln2_beta;
  TensorT<T> ffn_w1, ffn_b1, ffn_w2, ffn_b2;
};

template <typename T>
struct EncoderParams {
  EncoderConfig config;
  TensorT<T> tok_emb;  // [V, H]
  TensorT<T> pos_emb;  // [P, H]
  TensorT<T> seg_emb;  // [2, H]
  std::vector<EncoderLayerParams<T>> layers;
  TensorT<T> pool_w;   // [H, H]

  static EncoderParams init(const EncoderConfig& config, Rng& rng, T weight_stddev);
  void register_into(ParamRegistry<T>& registry, const std::string& prefix) const;
};

// Trainable scalar count; kept in closed form so a test can catch silent
// architecture drift:
//   V*H + P*H + 2*H + H^2 + L * (4*H^2 + 8*H + 2*H*F + F)
inline int64_t encoder_param_count(const EncoderConfig& c) {
  int64_t h = c.hidden, f = c.ffn_size();
  return c.vocab_size * h + c.max_position * h + 2 * h + h * h +
         c.layers * (4 * h * h + 8 * h + 2 * h * f + f);
}

template <typename T>
struct EncoderOutputT {
  TensorT<T> pooled;                  // [b, H]
  std::vector<TensorT<T>> layer_seq;  // L tensors of [b, len, H]
  TensorT<T> pad_mask;                // [b, len] constants, 1 = real token
  std::vector<int32_t> first_len;     // segment boundaries per row
  std::vector<int32_t> second_len;
  int64_t rows = 0;
  int64_t len = 0;
};

// Per-layer question/answer features with masked rows zeroed. q_layers[l] is
// [b, max_first, H]; masks are [b, max_*] constants.
template <typename T>
struct SegmentFeatures {
  std::vector<TensorT<T>> q_layers;
  std::vector<TensorT<T>> a_layers;
  TensorT<T> q_mask;
  TensorT<T> a_mask;
  int64_t max_first = 0;
  int64_t max_second = 0;
};

namespace enc_detail {

// y = x . W^T + bias, for x [.., in], W [out, in], bias [out]
template <typename T>
TensorT<T> linear(TapeT<T>* tape, const TensorT<T>& x, const TensorT<T>& w,
                  const TensorT<T>& bias) {
  return ops::add(tape, ops::matmul(tape, x, ops::transpose_last(tape, w)), bias);
}

template <typename T>
TensorT<T> linear_nobias(TapeT<T>* tape, const TensorT<T>& x, const TensorT<T>& w) {
  return ops::matmul(tape, x, ops::transpose_last(tape, w));
}

}  // namespace enc_detail

// Multi-head scaled dot-product self-attention with additive pad masking.
// x: [b, len, H]; neg_mask: [b, 1, len] holding 0 for real tokens and a large
// negative number for pads (their post-softmax weight underflows to exact 0).
// weights_sink, when given, receives the per-head attention weights.
template <typename T>
TensorT<T> multi_head_attention(RunContext<T>& ctx, const TensorT<T>& x,
                                const TensorT<T>& neg_mask,
                                const EncoderLayerParams<T>& p, int64_t heads,
                                std::vector<TensorT<T>>* weights_sink = nullptr) {
  auto* tape = ctx.tape;
  int64_t h = x.shape()[2];
  if (h % heads != 0)
    throw_error(ErrorCategory::kConfig, "hidden size not divisible by heads");
  int64_t dh = h / heads;
  auto q = enc_detail::linear(tape, x, p.wq, p.bq);
  auto k = enc_detail::linear_nobias(tape, x, p.wk);
  auto v = enc_detail::linear(tape, x, p.wv, p.bv);
  T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dh));
  std::vector<TensorT<T>> head_outputs;
  head_outputs.reserve(static_cast<size_t>(heads));
  for (int64_t head = 0; head < heads; ++head) {
    auto qh = ops::slice(tape, q, 2, head * dh, dh);
    auto kh = ops::slice(tape, k, 2, head * dh, dh);
    auto vh = ops::slice(tape, v, 2, head * dh, dh);
    auto scores = ops::scale(tape, ops::matmul(tape, qh, ops::transpose_last(tape, kh)),
                             inv_sqrt);
    scores = ops::add(tape, scores, neg_mask);
    auto weights = ops::softmax(tape, scores, 2);
    if (weights_sink) weights_sink->push_back(weights);
    head_outputs.push_back(ops::matmul(tape, weights, vh));
  }
  auto merged = ops::concat(tape, head_outputs, 2);
  return enc_detail::linear(tape, merged, p.wo, p.bo);
}

template <typename T>
EncoderOutputT<T> encode(RunContext<T>& ctx, const EncodedColumn& column,
                         const EncoderParams<T>& params) {
  const auto& cfg = params.config;
  auto* tape = ctx.tape;
  int64_t b = column.rows, len = column.len;
  if (b < 1)
    throw_error(ErrorCategory::kContract, "encode: empty batch");
  if (len > cfg.max_position)
    throw_error(ErrorCategory::kContract,
                "encode: sequence length " + std::to_string(len) +
                    " exceeds max position " + std::to_string(cfg.max_position));

  std::vector<int32_t> positions(static_cast<size_t>(b * len));
  for (int64_t i = 0; i < b; ++i)
    for (int64_t j = 0; j < len; ++j)
      positions[static_cast<size_t>(i * len + j)] = static_cast<int32_t>(j);

  auto tok = ops::embedding(tape, params.tok_emb, column.ids, {b, len});
  auto pos = ops::embedding(tape, params.pos_emb, positions, {b, len});
  auto seg = ops::embedding(tape, params.seg_emb, column.segments, {b, len});
  auto x = ops::add(tape, ops::add(tape, tok, pos), seg);

  // additive attention mask: 0 on real tokens, -1e9 on pads
  auto neg_mask = TensorT<T>::zeros({b, 1, len});
  for (int64_t i = 0; i < b * len; ++i)
    neg_mask.values()[i] = column.mask[static_cast<size_t>(i)] > 0 ? T(0) : T(-1e9);

  EncoderOutputT<T> out;
  out.rows = b;
  out.len = len;
  out.first_len = column.first_len;
  out.second_len = column.second_len;
  out.pad_mask = TensorT<T>::zeros({b, len});
  for (int64_t i = 0; i < b * len; ++i)
    out.pad_mask.values()[i] = static_cast<T>(column.mask[static_cast<size_t>(i)]);

  for (int64_t l = 0; l < cfg.layers; ++l) {
    const auto& lp = params.layers[static_cast<size_t>(l)];
    auto normed = ops::layer_norm(tape, x, lp.ln1_gamma, lp.ln1_beta);
    auto attn = multi_head_attention(ctx, normed, neg_mask, lp, cfg.heads);
    attn = ops::dropout(tape, attn, ctx.keep_rate, ctx.mode, ctx.rng);
    x = ops::add(tape, x, attn);
    auto normed2 = ops::layer_norm(tape, x, lp.ln2_gamma, lp.ln2_beta);
    auto hidden = ops::relu(tape, enc_detail::linear(tape, normed2, lp.ffn_w1, lp.ffn_b1));
    auto ffn = enc_detail::linear(tape, hidden, lp.ffn_w2, lp.ffn_b2);
    ffn = ops::dropout(tape, ffn, ctx.keep_rate, ctx.mode, ctx.rng);
    x = ops::add(tape, x, ffn);
    out.layer_seq.push_back(x);
  }

  auto cls = ops::reshape(tape, ops::slice(tape, x, 1, 0, 1), {b, cfg.hidden});
  out.pooled = ops::tanh_op(tape, enc_detail::linear_nobias(tape, cls, params.pool_w));
  return out;
}

// Pulls the first-segment and second-segment token features out of every
// layer, excluding [CLS] and both [SEP]s. Rows beyond a row's true length
// are exactly zero, and the returned masks mark validity.
template <typename T>
SegmentFeatures<T> split_segments(RunContext<T>& ctx, const EncoderOutputT<T>& output,
                                  int64_t max_first, int64_t max_second) {
  if (output.first_len.empty() || output.layer_seq.empty())
    throw_error(ErrorCategory::kContract,
                "split_segments: encoder output lacks boundary metadata");
  auto* tape = ctx.tape;
  int64_t b = output.rows;

  SegmentFeatures<T> seg;
  seg.max_first = max_first;
  seg.max_second = max_second;
  std::vector<int32_t> q_idx(static_cast<size_t>(b * max_first), 0);
  std::vector<int32_t> a_idx(static_cast<size_t>(b * max_second), 0);
  seg.q_mask = TensorT<T>::zeros({b, max_first});
  seg.a_mask = TensorT<T>::zeros({b, max_second});
  for (int64_t i = 0; i < b; ++i) {
    int32_t m = output.first_len[static_cast<size_t>(i)];
    int32_t w = output.second_len[static_cast<size_t>(i)];
    for (int64_t j = 0; j < max_first; ++j) {
      bool valid = j < m;
      q_idx[static_cast<size_t>(i * max_first + j)] =
          valid ? static_cast<int32_t>(1 + j) : 0;
      if (valid) seg.q_mask.values()[i * max_first + j] = T(1);
    }
    for (int64_t j = 0; j < max_second; ++j) {
      bool valid = j < w;
      a_idx[static_cast<size_t>(i * max_second + j)] =
          valid ? static_cast<int32_t>(m + 2 + j) : 0;
      if (valid) seg.a_mask.values()[i * max_second + j] = T(1);
    }
  }
  auto q_mask_col = ops::reshape(tape, seg.q_mask, {b, max_first, 1});
  auto a_mask_col = ops::reshape(tape, seg.a_mask, {b, max_second, 1});
  for (const auto& layer : output.layer_seq) {
    auto q = ops::gather_rows(tape, layer, q_idx, max_first);
    auto a = ops::gather_rows(tape, layer, a_idx, max_second);
    seg.q_layers.push_back(ops::mul(tape, q, q_mask_col));
    seg.a_layers.push_back(ops::mul(tape, a, a_mask_col));
  }
  return seg;
}

template <typename T>
EncoderParams<T> EncoderParams<T>::init(const EncoderConfig& config, Rng& rng,
                                        T weight_stddev) {
  config.validate();
  int64_t h = config.hidden, f = config.ffn_size();
  auto normal = [&rng](Shape shape, double stddev) {
    auto t = TensorT<T>::zeros(std::move(shape), true);
    for (auto& v : t.values()) v = static_cast<T>(rng.normal(0.0, stddev));
    return t;
  };
  auto zeros = [](Shape shape) { return TensorT<T>::zeros(std::move(shape), true); };
  auto ones = [](Shape shape) {
    auto t = TensorT<T>::full(std::move(shape), T(1));
    t.set_requires_grad(true);
    return t;
  };
  double wsd = static_cast<double>(weight_stddev);

  EncoderParams<T> p;
  p.config = config;
  // embeddings use a smaller scale than the weight matrices
  p.tok_emb = normal({config.vocab_size, h}, 0.1);
  p.pos_emb = normal({config.max_position, h}, 0.1);
  p.seg_emb = normal({2, h}, 0.1);
  for (int64_t l = 0; l < config.layers; ++l) {
    EncoderLayerParams<T> lp;
    lp.wq = normal({h, h}, wsd);
    lp.bq = zeros({h});
    lp.wk = normal({h, h}, wsd);
    lp.wv = normal({h, h}, wsd);
    lp.bv = zeros({h});
    lp.wo = normal({h, h}, wsd);
    lp.bo = zeros({h});
    lp.ln1_gamma = ones({h});
    lp.ln1_beta = zeros({h});
    lp.ln2_gamma = ones({h});
    lp.ln2_beta = zeros({h});
    lp.ffn_w1 = normal({f, h}, wsd);
    lp.ffn_b1 = zeros({f});
    lp.ffn_w2 = normal({h, f}, wsd);
    lp.ffn_b2 = zeros({h});
    p.layers.push_back(std::move(lp));
  }
  p.pool_w = normal({h, h}, wsd);
  return p;
}

template <typename T>
void EncoderParams<T>::register_into(ParamRegistry<T>& registry,
                                     const std::string& prefix) const {
  registry.add(prefix + "/tok_emb", tok_emb);
  registry.add(prefix + "/pos_emb", pos_emb);
  registry.add(prefix + "/seg_emb", seg_emb);
  for (size_t l = 0; l < layers.size(); ++l) {
    const auto& lp = layers[l];
    std::string base = prefix + "/layer" + std::to_string(l);
    registry.add(base + "/wq", lp.wq);
    registry.add(base + "/bq", lp.bq);
    registry.add(base + "/wk", lp.wk);
    registry.add(base + "/wv", lp.wv);
    registry.add(base + "/bv", lp.bv);
    registry.add(base + "/wo", lp.wo);
    registry.add(base + "/bo", lp.bo);
    registry.add(base + "/ln1_gamma", lp.ln1_gamma);
    registry.add(base + "/ln1_beta", lp.ln1_beta);
    registry.add(base + "/ln2_gamma", lp.ln2_gamma);
    registry.add(base + "/ln2_beta", lp.ln2_beta);
    registry.add(base + "/ffn_w1", lp.ffn_w1);
    registry.add(base + "/ffn_b1", lp.ffn_b1);
    registry.add(base + "/ffn_w2", lp.ffn_w2);
    registry.add(base + "/ffn_b2", lp.ffn_b2);
  }
  registry.add(prefix + "/pool_w", pool_w);
}

}  // namespace match2
