#pragma once

// The full model: a question-question encoder for the representation-based
// similarity vector, a shared question-answer encoder feeding two matching
// patterns, the pattern-similarity tensor with its compression stack, a gate
// to fuse both similarity vectors, and the scoring / auxiliary MLP heads.
// The Q-only / A-only ablations drop one branch and score the surviving
// vector with the MLP directly.

#include <optional>
#include <string>

#include "match2/model/aggregate.hpp"
#include "match2/model/config.hpp"
#include "match2/model/encoder.hpp"
#include "match2/model/pattern.hpp"
#include "match2/text/dataset.hpp"

namespace match2 {

struct ModelConfig {
  EncoderConfig encoder;
  BatchLimits limits;
  Ablation ablation = Ablation::kFull;
  SimilarityFn sim_fn = SimilarityFn::kDot;
  int64_t mlp_hidden = 0;  // 0 means encoder.hidden
  double init_stddev = 0.2;

  int64_t mlp_size() const { return mlp_hidden > 0 ? mlp_hidden : encoder.hidden; }
};

template <typename T>
struct ModelParamsT {
  ModelConfig config;
  std::optional<EncoderParams<T>> qq_encoder;  // absent in the A-only ablation
  std::optional<EncoderParams<T>> qa_encoder;  // absent in the Q-only ablation
  std::optional<CompressParams<T>> compress_params;
  std::optional<GateParams<T>> gate;           // full model only
  MlpHeadParams<T> out_head;
  std::optional<MlpHeadParams<T>> aux_head;    // one set shared by y^u and y^a

  bool has_q_branch() const { return config.ablation != Ablation::kAOnly; }
  bool has_a_branch() const { return config.ablation != Ablation::kQOnly; }

  static ModelParamsT init(const ModelConfig& config, Rng& rng) {
    config.encoder.validate();
    ModelParamsT p;
    p.config = config;
    T stddev = static_cast<T>(config.init_stddev);
    int64_t h = config.encoder.hidden;
    if (p.has_q_branch())
      p.qq_encoder = EncoderParams<T>::init(config.encoder, rng, stddev);
    if (p.has_a_branch()) {
      p.qa_encoder = EncoderParams<T>::init(config.encoder, rng, stddev);
      p.compress_params =
          CompressParams<T>::init(config.encoder.layers, h, rng, stddev);
      p.aux_head = MlpHeadParams<T>::init(h, config.mlp_size(), rng, stddev);
    }
    if (config.ablation == Ablation::kFull)
      p.gate = GateParams<T>::init(h, rng, stddev);
    p.out_head = MlpHeadParams<T>::init(h, config.mlp_size(), rng, stddev);
    return p;
  }

  ParamRegistry<T> trainable() const {
    ParamRegistry<T> reg;
    if (qq_encoder) qq_encoder->register_into(reg, "qq_encoder");
    if (qa_encoder) qa_encoder->register_into(reg, "qa_encoder");
    if (compress_params) compress_params->register_into(reg, "compress");
    if (gate) gate->register_into(reg, "gate");
    out_head.register_into(reg, "out_head");
    if (aux_head) aux_head->register_into(reg, "aux_head");
    return reg;
  }

  ParamRegistry<T> buffers() const {
    ParamRegistry<T> reg;
    if (compress_params) compress_params->register_buffers(reg, "compress");
    return reg;
  }

  int64_t param_count() const { return trainable().total_values(); }
};

inline int64_t model_param_count(const ModelConfig& config) {
  int64_t h = config.encoder.hidden;
  int64_t mlp = config.mlp_size();
  int64_t head = mlp * h + mlp + mlp + 1;
  int64_t total = 0;
  if (config.ablation != Ablation::kAOnly) total += encoder_param_count(config.encoder);
  if (config.ablation != Ablation::kQOnly) {
    total += encoder_param_count(config.encoder);
    total += compress_param_count(config.encoder.layers, h);
    total += head;  // aux head
  }
  if (config.ablation == Ablation::kFull) total += 6 * h * h;
  total += head;  // output head
  return total;
}

template <typename T>
struct ModelOutputs {
  TensorT<T> y_q;  // [b]
  TensorT<T> y_u;  // [b], A-branch only
  TensorT<T> y_a;  // [b], A-branch only
  TensorT<T> v_q;
  TensorT<T> v_a;
  TensorT<T> pattern_u;    // [b, L, m, w]
  TensorT<T> pattern_a;    // [b, L, n, w]
  TensorT<T> pattern_sim;  // [b, L, m, n]
  TensorT<T> q_mask_u, q_mask_a;  // [b, max_q]
  TensorT<T> ans_mask;            // [b, max_a]
};

// Mutates BN running statistics when ctx.mode == kTrain.
template <typename T>
ModelOutputs<T> model_forward(RunContext<T>& ctx, ModelParamsT<T>& params,
                              const Batch& batch) {
  const auto& config = params.config;
  auto* tape = ctx.tape;
  int64_t b = batch.size();
  int64_t max_q = config.limits.max_question;
  ModelOutputs<T> out;

  if (params.has_q_branch()) {
    auto qq = encode(ctx, batch.qq, *params.qq_encoder);
    out.v_q = qq.pooled;  // the pooled feature, with no further transform
  }

  if (params.has_a_branch()) {
    auto ua = encode(ctx, batch.ua, *params.qa_encoder);
    auto aa = encode(ctx, batch.aa, *params.qa_encoder);
    out.y_u = mlp_head(ctx, ua.pooled, *params.aux_head);
    out.y_a = mlp_head(ctx, aa.pooled, *params.aux_head);

    auto seg_u = split_segments(ctx, ua, max_q, config.limits.max_answer);
    auto seg_a = split_segments(ctx, aa, max_q, config.limits.max_answer);
    out.pattern_u = matching_pattern(tape, seg_u);
    out.pattern_a = matching_pattern(tape, seg_a);
    out.q_mask_u = seg_u.q_mask;
    out.q_mask_a = seg_a.q_mask;

    // answer positions valid in both encodings (same answer text, so they
    // normally coincide)
    auto joint_ans = TensorT<T>::zeros({b, config.limits.max_answer});
    for (int64_t i = 0; i < joint_ans.numel(); ++i)
      joint_ans.values()[i] = seg_u.a_mask.values()[i] * seg_a.a_mask.values()[i];
    out.ans_mask = joint_ans;

    out.pattern_sim = pattern_similarity(tape, out.pattern_u, out.pattern_a,
                                         seg_u.q_mask, seg_a.q_mask, joint_ans,
                                         config.sim_fn);

    // cells where both question tokens are valid
    auto pair_mask = TensorT<T>::zeros({b, max_q, max_q});
    for (int64_t bi = 0; bi < b; ++bi)
      for (int64_t i = 0; i < max_q; ++i)
        for (int64_t j = 0; j < max_q; ++j)
          pair_mask.values()[(bi * max_q + i) * max_q + j] =
              seg_u.q_mask.values()[bi * max_q + i] *
              seg_a.q_mask.values()[bi * max_q + j];
    out.v_a = compress(ctx, out.pattern_sim, *params.compress_params, pair_mask);
  }

  switch (config.ablation) {
    case Ablation::kQOnly:
      out.y_q = mlp_head(ctx, out.v_q, params.out_head);
      break;
    case Ablation::kAOnly:
      out.y_q = mlp_head(ctx, out.v_a, params.out_head);
      break;
    case Ablation::kFull: {
      auto fused = gate_fuse(tape, out.v_q, out.v_a, *params.gate);
      out.y_q = mlp_head(ctx, fused, params.out_head);
      break;
    }
  }
  return out;
}

using ModelParams = ModelParamsT<float>;

}  // namespace match2
