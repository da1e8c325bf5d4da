#include "match2/model/gradsuite.hpp"

#include <chrono>

#include "match2/core/gradcheck.hpp"
#include "match2/model/model.hpp"
#include "match2/train/trainer.hpp"

namespace match2 {

namespace {

using Clock = std::chrono::steady_clock;

template <typename T>
TensorT<T> rand_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  auto t = TensorT<T>::zeros(std::move(shape));
  for (auto& v : t.values()) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

void run_check(GradSuiteReport& report, const std::string& name, double err) {
  report.checks.push_back({name, err});
  report.worst = std::max(report.worst, err);
}

void core_suite(GradSuiteReport& report, double h) {
  Rng rng(2024);
  auto x = rand_tensor<double>(rng, {2, 3, 4});
  auto w = rand_tensor<double>(rng, {4, 5});
  run_check(report, "core/matmul",
            finite_diff_check<double>(
                [&](Tape64* t, const Tensor64& v) {
                  auto y = ops::matmul(t, v, w);
                  return ops::sum_all(t, ops::mul(t, y, y));
                },
                x, h));
  auto sm = rand_tensor<double>(rng, {3, 5});
  run_check(report, "core/softmax",
            finite_diff_check<double>(
                [&](Tape64* t, const Tensor64& v) {
                  auto y = ops::softmax(t, v, 1);
                  return ops::sum_all(t, ops::mul(t, y, y));
                },
                sm, h));
  auto cx = rand_tensor<double>(rng, {2, 2, 4, 4});
  auto cw = rand_tensor<double>(rng, {3, 2, 3, 3});
  auto cb = rand_tensor<double>(rng, {3});
  run_check(report, "core/conv2d",
            finite_diff_check<double>(
                [&](Tape64* t, const Tensor64& v) {
                  auto y = ops::conv2d(t, cx, v, cb);
                  return ops::sum_all(t, ops::mul(t, y, y));
                },
                cw, h));
  auto bn_state = ops::BatchNormState<double>::init(2);
  auto bx = rand_tensor<double>(rng, {3, 2, 3, 3});
  run_check(report, "core/batch_norm",
            finite_diff_check<double>(
                [&](Tape64* t, const Tensor64& v) {
                  auto st = bn_state;
                  auto y = ops::batch_norm(t, v, st, Mode::kTrain);
                  return ops::sum_all(t, ops::mul(t, y, y));
                },
                bx, h));
  auto gamma = rand_tensor<double>(rng, {4}, 0.5, 1.5);
  auto beta = rand_tensor<double>(rng, {4}, -0.5, 0.5);
  auto lx = rand_tensor<double>(rng, {3, 4});
  run_check(report, "core/layer_norm",
            finite_diff_check<double>(
                [&](Tape64* t, const Tensor64& v) {
                  auto y = ops::layer_norm(t, v, gamma, beta);
                  return ops::sum_all(t, ops::mul(t, y, y));
                },
                lx, h));
  auto mask = Tensor64::full({2, 3, 3}, 1.0);
  mask.values()[1] = 0.0;
  auto px = rand_tensor<double>(rng, {2, 2, 3, 3});
  run_check(report, "core/global_avg_pool",
            finite_diff_check<double>(
                [&](Tape64* t, const Tensor64& v) {
                  auto y = ops::global_avg_pool(t, v, mask);
                  return ops::sum_all(t, ops::mul(t, y, y));
                },
                px, h));
  auto table = rand_tensor<double>(rng, {6, 3});
  std::vector<int32_t> ids = {0, 2, 5, 2};
  run_check(report, "core/embedding",
            finite_diff_check<double>(
                [&](Tape64* t, const Tensor64& v) {
                  auto y = ops::embedding(t, v, ids, {4});
                  return ops::sum_all(t, ops::mul(t, y, y));
                },
                table, h));
  auto probs = rand_tensor<double>(rng, {5}, 0.1, 0.9);
  auto targets = Tensor64::from({5}, {1, 0, 1, 0, 1});
  run_check(report, "core/binary_cross_entropy",
            finite_diff_check<double>(
                [&](Tape64* t, const Tensor64& v) {
                  return ops::mean_all(t, ops::binary_cross_entropy(t, v, targets));
                },
                probs, h));
}

EncoderConfig tiny_encoder_config(int64_t vocab) {
  EncoderConfig cfg;
  cfg.layers = 2;
  cfg.hidden = 16;
  cfg.heads = 2;
  cfg.ffn = 32;
  cfg.max_position = 16;
  cfg.vocab_size = vocab;
  return cfg;
}

void encoder_suite(GradSuiteReport& report, double h) {
  Rng rng(11);
  EncoderConfig cfg = tiny_encoder_config(12);
  auto params = EncoderParams<double>::init(cfg, rng, 0.2);
  EncodedColumn col;
  col.rows = 2;
  col.len = 9;  // [CLS] q q q [SEP] a a a [SEP] shape, hand-rolled
  col.first_len = {3, 2};
  col.second_len = {3, 3};
  Rng tok(5);
  for (int64_t r = 0; r < col.rows; ++r) {
    int32_t m = col.first_len[static_cast<size_t>(r)];
    int32_t w = col.second_len[static_cast<size_t>(r)];
    for (int64_t j = 0; j < col.len; ++j) {
      bool real = j < m + w + 3;
      int32_t id = 0;
      int32_t seg = 0;
      if (j == 0) id = 2;
      else if (j <= m) id = static_cast<int32_t>(4 + tok.uniform_index(8));
      else if (j == m + 1) id = 3;
      else if (j <= m + 1 + w) { id = static_cast<int32_t>(4 + tok.uniform_index(8)); seg = 1; }
      else if (j == m + 2 + w) { id = 3; seg = 1; }
      else real = false;
      col.ids.push_back(id);
      col.segments.push_back(seg);
      col.mask.push_back(real ? 1.0f : 0.0f);
    }
  }

  auto loss_for = [&](Tape64* t, EncoderParams<double>& p) {
    RunContext<double> ctx;
    ctx.tape = t;
    ctx.mode = Mode::kTrain;
    auto out = encode(ctx, col, p);
    auto total = ops::sum_all(t, ops::mul(t, out.pooled, out.pooled));
    for (auto& seq : out.layer_seq)
      total = ops::add(t, total, ops::sum_all(t, ops::mul(t, seq, seq)));
    return total;
  };

  ParamRegistry<double> reg;
  params.register_into(reg, "encoder");
  for (auto& entry : reg.entries()) {
    double err = finite_diff_check<double>(
        [&](Tape64* t, const Tensor64&) { return loss_for(t, params); }, entry.tensor,
        h);
    run_check(report, entry.name, err);
  }
}

void pattern_suite(GradSuiteReport& report, double h) {
  Rng rng(13);
  int64_t b = 1, layers = 2, m = 3, n = 3, w = 4, hidden = 4;
  auto mask_u = Tensor64::from({b, m}, {1, 1, 0});
  auto mask_a = Tensor64::from({b, n}, {1, 1, 1});
  auto ans = Tensor64::from({b, w}, {1, 1, 1, 0});
  for (auto fn : {SimilarityFn::kDot, SimilarityFn::kCos, SimilarityFn::kL1,
                  SimilarityFn::kL2, SimilarityFn::kJss}) {
    auto pu = rand_tensor<double>(rng, {b, layers, m, w});
    auto pa = rand_tensor<double>(rng, {b, layers, n, w});
    double err = finite_diff_check<double>(
        [&](Tape64* t, const Tensor64& v) {
          auto ps = pattern_similarity(t, v, pa, mask_u, mask_a, ans, fn);
          return ops::sum_all(t, ops::mul(t, ps, ps));
        },
        pu, h);
    run_check(report, "pattern/similarity_" + to_string(fn), err);
  }
  auto compress_params = CompressParams<double>::init(layers, hidden, rng, 0.2);
  auto ps_in = rand_tensor<double>(rng, {b, layers, m, n});
  auto pair_mask = Tensor64::full({b, m, n}, 1.0);
  ParamRegistry<double> reg;
  compress_params.register_into(reg, "compress");
  for (auto& entry : reg.entries()) {
    double err = finite_diff_check<double>(
        [&](Tape64* t, const Tensor64&) {
          RunContext<double> ctx;
          ctx.tape = t;
          ctx.mode = Mode::kTrain;
          auto va = compress(ctx, ps_in, compress_params, pair_mask);
          return ops::sum_all(t, ops::mul(t, va, va));
        },
        entry.tensor, h);
    run_check(report, entry.name, err);
  }
}

void gate_suite(GradSuiteReport& report, double h) {
  Rng rng(17);
  int64_t b = 2, hidden = 8;
  auto vq = rand_tensor<double>(rng, {b, hidden});
  auto va = rand_tensor<double>(rng, {b, hidden});
  auto params = GateParams<double>::init(hidden, rng, 0.3);
  ParamRegistry<double> reg;
  params.register_into(reg, "gate");
  for (auto& entry : reg.entries()) {
    double err = finite_diff_check<double>(
        [&](Tape64* t, const Tensor64&) {
          auto v = gate_fuse(t, vq, va, params);
          return ops::sum_all(t, ops::mul(t, v, v));
        },
        entry.tensor, h);
    run_check(report, entry.name, err);
  }
}

void head_suite(GradSuiteReport& report, double h) {
  Rng rng(19);
  int64_t b = 3, hidden = 8;
  auto v = rand_tensor<double>(rng, {b, hidden});
  auto targets = Tensor64::from({b}, {1, 0, 1});
  auto params = MlpHeadParams<double>::init(hidden, hidden, rng, 0.3);
  ParamRegistry<double> reg;
  params.register_into(reg, "head");
  for (auto& entry : reg.entries()) {
    double err = finite_diff_check<double>(
        [&](Tape64* t, const Tensor64&) {
          RunContext<double> ctx;
          ctx.tape = t;
          auto y = mlp_head(ctx, v, params);
          return ops::mean_all(t, ops::binary_cross_entropy(t, y, targets));
        },
        entry.tensor, h);
    run_check(report, entry.name, err);
  }
}

// Full forward + multi-task loss at the pinned toy size: batch 2, L=2, H=16,
// m=n=4, w=6.
void model_suite(GradSuiteReport& report, double h) {
  Vocabulary vocab = Vocabulary::build(
      {"qa qb qc qd qe qf qg qh aa ab ac ad ae af ag ah"}, 1);
  ModelConfig mc;
  mc.encoder = tiny_encoder_config(vocab.size());
  mc.encoder.max_position = 16;  // QA rows are 4 + 6 + 3 = 13 wide
  mc.limits = BatchLimits{4, 6};
  mc.ablation = Ablation::kFull;
  mc.sim_fn = SimilarityFn::kDot;
  Rng rng(23);
  auto params = ModelParamsT<double>::init(mc, rng);

  std::vector<Instance> instances;
  Instance one;
  one.qu = "qa qb qc qd";
  one.qa = "qe qf qg qh";
  one.ans = "aa ab ac ad ae af";
  one.label_q = 1.0f;
  one.label_u = 1.0f;
  one.label_a = 1.0f;
  one.r_eff = 0.6f;
  instances.push_back(one);
  Instance two;
  two.qu = "qb qd qf qh";
  two.qa = "qa qc qe qg";
  two.ans = "ag ah aa ab ac ad";
  two.label_q = 0.0f;
  two.label_u = 0.0f;
  two.label_a = 1.0f;
  two.r_eff = 0.6f;
  instances.push_back(two);
  Batch batch = encode_batch(instances, vocab, mc.limits);

  auto loss_for = [&](Tape64* t) {
    RunContext<double> ctx;
    ctx.tape = t;
    ctx.mode = Mode::kTrain;
    auto outputs = model_forward(ctx, params, batch);
    return batch_loss(t, outputs, batch, mc.ablation);
  };

  ParamRegistry<double> reg = params.trainable();
  for (auto& entry : reg.entries()) {
    double err = finite_diff_check<double>(
        [&](Tape64* t, const Tensor64&) { return loss_for(t); }, entry.tensor, h);
    run_check(report, "model/" + entry.name, err);
  }
}

}  // namespace

GradSuiteReport run_gradcheck_suite(const std::string& module, double h,
                                    double tolerance) {
  GradSuiteReport report;
  report.tolerance = tolerance;
  auto start = Clock::now();
  bool all = module == "all";
  bool known = all;
  if (all || module == "core") { core_suite(report, h); known = true; }
  if (all || module == "encoder") { encoder_suite(report, h); known = true; }
  if (all || module == "pattern") { pattern_suite(report, h); known = true; }
  if (all || module == "gate") { gate_suite(report, h); known = true; }
  if (all || module == "head") { head_suite(report, h); known = true; }
  if (all || module == "model") { model_suite(report, h); known = true; }
  if (!known)
    throw_error(ErrorCategory::kConfig,
                "gradcheck module must be one of all, encoder, pattern, gate, head, "
                "core, model; got '" + module + "'");
  report.seconds =
      std::chrono::duration<double>(Clock::now() - start).count();
  report.passed = report.worst < tolerance;
  return report;
}

}  // namespace match2
