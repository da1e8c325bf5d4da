#include "match2/train/trainer.hpp"

#include <algorithm>
#include <cmath>

#include "match2/train/schedule.hpp"

namespace match2 {

AuxLabels build_aux_labels(const DatasetRecord& record, bool is_true_archived,
                           float loss_ratio) {
  AuxLabels labels;
  if (is_true_archived) {
    labels.label_a = 1.0f;
    labels.label_u = record.label == 1 ? 1.0f : 0.0f;
    labels.r_eff = loss_ratio;
  }
  // sampled negative: the answer bridges neither question, all zeros
  return labels;
}

std::optional<std::string> sample_negative_answer(const DatasetRecord& record,
                                                  const InvertedIndex& index,
                                                  int64_t k, Rng& rng) {
  // fetch one extra so the top-K survives dropping the true archived answer,
  // which is matched by text because pool ids need not align with record ids
  auto candidates = index.top_k(record.archived_question, k + 1, "");
  std::vector<std::string> eligible;
  for (const auto& cand : candidates) {
    const auto& doc = index.doc(index.doc_index(cand.answer_id));
    if (doc.text != record.archived_answer) eligible.push_back(doc.text);
  }
  if (static_cast<int64_t>(eligible.size()) > k) eligible.resize(static_cast<size_t>(k));
  if (eligible.empty()) {
    // retrieval gave nothing usable: uniform over the pool minus the true answer
    std::vector<int32_t> others;
    for (int32_t d = 0; d < index.doc_count(); ++d)
      if (index.doc(d).text != record.archived_answer) others.push_back(d);
    if (others.empty()) return std::nullopt;  // sampling unavailable
    return index.doc(others[static_cast<size_t>(rng.uniform_index(others.size()))]).text;
  }
  return eligible[static_cast<size_t>(rng.uniform_index(eligible.size()))];
}

double bce_scalar(double prediction, double target) {
  double p = std::min(1.0 - 1e-7, std::max(1e-7, prediction));
  return -(target * std::log(p) + (1.0 - target) * std::log(1.0 - p));
}

double combine_loss(double loss_q, double loss_u, double loss_a, double r_eff) {
  return r_eff * loss_q + (1.0 - r_eff) / 2.0 * loss_u +
         (1.0 - r_eff) / 2.0 * loss_a;
}

Trainer::Trainer(const Config& config, const Vocabulary& vocab)
    : config_(config), vocab_(vocab) {
  config_.validate();
  ModelConfig mc;
  mc.encoder = config_.encoder_config(vocab_.size());
  mc.limits = BatchLimits{config_.max_question, config_.max_answer};
  mc.ablation = config_.ablation_mode();
  mc.sim_fn = config_.similarity();
  mc.mlp_hidden = config_.mlp_hidden;
  mc.init_stddev = config_.init_stddev;
  Rng init_rng(static_cast<uint64_t>(config_.seed));
  params_ = ModelParams::init(mc, init_rng);
  trainable_ = params_.trainable();
  optimizer_ = RAdamOptimizer<float>(
      RAdamConfig{config_.lr, config_.beta1, config_.beta2, config_.epsilon});
}

Trainer::Trainer(const Config& config, const Vocabulary& vocab, ModelParams params,
                 int64_t global_step)
    : config_(config), vocab_(vocab), params_(std::move(params)) {
  config_.validate();
  trainable_ = params_.trainable();
  optimizer_ = RAdamOptimizer<float>(
      RAdamConfig{config_.lr, config_.beta1, config_.beta2, config_.epsilon});
  if (global_step > 0) {
    std::vector<std::vector<double>> m, v;
    for (const auto& e : trainable_.entries()) {
      m.emplace_back(static_cast<size_t>(e.tensor.numel()), 0.0);
      v.emplace_back(static_cast<size_t>(e.tensor.numel()), 0.0);
    }
    optimizer_.restore(global_step, std::move(m), std::move(v));
  }
}

double Trainer::current_keep_rate() const {
  return keep_rate(global_step(), config_.keep_decay, config_.keep_interval,
                   config_.keep_floor);
}

EpochStats Trainer::run_epoch(const std::vector<DatasetRecord>& records,
                              const InvertedIndex* index, Rng& rng) {
  // shuffled record order, then one or two instances per record
  std::vector<size_t> order(records.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[rng.uniform_index(i)]);

  float ratio = static_cast<float>(config_.ratio);
  bool a_branch = params_.has_a_branch();
  std::vector<Instance> instances;
  instances.reserve(records.size() * 2);
  for (size_t idx : order) {
    const auto& rec = records[idx];
    Instance inst;
    inst.record_id = rec.id;
    inst.qu = rec.user_question;
    inst.qa = rec.archived_question;
    inst.ans = rec.archived_answer;
    inst.label_q = static_cast<float>(rec.label);
    auto labels = build_aux_labels(rec, true, ratio);
    inst.label_u = labels.label_u;
    inst.label_a = labels.label_a;
    inst.r_eff = labels.r_eff;
    inst.true_answer = true;
    instances.push_back(inst);
    // negative sampling only matters when the answer branch exists
    if (a_branch && index && rng.bernoulli(config_.p_neg)) {
      auto negative = sample_negative_answer(rec, *index, config_.top_k, rng);
      if (negative) {
        Instance neg = inst;
        neg.ans = *negative;
        auto neg_labels = build_aux_labels(rec, false, ratio);
        neg.label_u = neg_labels.label_u;
        neg.label_a = neg_labels.label_a;
        neg.r_eff = neg_labels.r_eff;
        neg.true_answer = false;
        instances.push_back(neg);
      }
    }
  }

  BatchLimits limits{config_.max_question, config_.max_answer};
  auto batches = make_instance_batches(instances, vocab_, limits, config_.batch);

  EpochStats stats;
  double loss_sum = 0.0;
  int64_t correct = 0, labelled = 0;
  for (size_t bi = 0; bi < batches.size(); ++bi) {
    const auto& batch = batches[bi];
    Tape tape;
    RunContext<float> ctx;
    ctx.tape = &tape;
    ctx.mode = Mode::kTrain;
    ctx.keep_rate = static_cast<float>(current_keep_rate());
    ctx.rng = &rng;
    auto outputs = model_forward(ctx, params_, batch);
    auto loss = batch_loss(&tape, outputs, batch, params_.config.ablation);
    float loss_value = loss.item();
    if (!std::isfinite(loss_value))
      throw_error(ErrorCategory::kInternal,
                  "non-finite loss in batch " + std::to_string(bi));
    tape.backward(loss);
    optimizer_.step(trainable_);
    trainable_.zero_grad();

    loss_sum += static_cast<double>(loss_value);
    for (int64_t i = 0; i < batch.size(); ++i) {
      if (!batch.true_answer[static_cast<size_t>(i)]) continue;
      ++labelled;
      int predicted = threshold_label(outputs.y_q.values()[i]);
      if (predicted == static_cast<int>(batch.label_q[static_cast<size_t>(i)]))
        ++correct;
    }
  }
  stats.batches = static_cast<int64_t>(batches.size());
  stats.instances = static_cast<int64_t>(instances.size());
  stats.mean_loss = batches.empty() ? 0.0 : loss_sum / static_cast<double>(batches.size());
  stats.accuracy = labelled == 0 ? 0.0
                                 : static_cast<double>(correct) /
                                       static_cast<double>(labelled);
  return stats;
}

std::vector<Prediction> predict_batch(ModelParams& params, const Vocabulary& vocab,
                                      const std::vector<Instance>& instances,
                                      int64_t batch_size) {
  BatchLimits limits = params.config.limits;
  auto batches = make_instance_batches(instances, vocab, limits, batch_size);
  std::vector<Prediction> out;
  out.reserve(instances.size());
  for (const auto& batch : batches) {
    RunContext<float> ctx;  // infer mode, no tape
    auto outputs = model_forward(ctx, params, batch);
    for (int64_t i = 0; i < batch.size(); ++i) {
      Prediction p;
      p.y_q = outputs.y_q.values()[i];
      p.label = threshold_label(p.y_q);
      if (outputs.y_u.defined()) p.y_u = outputs.y_u.values()[i];
      if (outputs.y_a.defined()) p.y_a = outputs.y_a.values()[i];
      out.push_back(p);
    }
  }
  return out;
}

std::vector<Prediction> Trainer::predict_records(
    const std::vector<DatasetRecord>& records) {
  auto instances = instances_from_records(records, static_cast<float>(config_.ratio));
  return predict_batch(params_, vocab_, instances, config_.batch);
}

Prediction Trainer::predict_one(const std::string& qu, const std::string& qa,
                                const std::string& ans) {
  Instance inst;
  inst.qu = qu;
  inst.qa = qa;
  inst.ans = ans;
  return predict_batch(params_, vocab_, {inst}, 1)[0];
}

double Trainer::evaluate_accuracy(const std::vector<DatasetRecord>& records) {
  if (records.empty()) return 0.0;
  auto predictions = predict_records(records);
  int64_t correct = 0;
  for (size_t i = 0; i < records.size(); ++i)
    if (predictions[i].label == records[i].label) ++correct;
  return static_cast<double>(correct) / static_cast<double>(records.size());
}

}  // namespace match2
