#pragma once

// Multi-task training: each record contributes one instance with its true
// archived answer and, with probability p_neg, a second instance whose answer
// is sampled from the BM25 top-K candidates for the archived question. An
// answer that bridges neither question disables the main-task loss for that
// instance (r_eff = 0).

#include <optional>
#include <string>
#include <vector>

#include "match2/model/config.hpp"
#include "match2/model/model.hpp"
#include "match2/retrieval/bm25.hpp"
#include "match2/text/dataset.hpp"
#include "match2/train/radam.hpp"

namespace match2 {

struct AuxLabels {
  float label_u = 0.0f;
  float label_a = 0.0f;
  float r_eff = 0.0f;
};

// Ground truth for the auxiliary question-answer tasks. For the true
// archived answer: y^a = 1, and y^u = 1 exactly when the questions are
// similar. A sampled negative bridges nothing: all zeros and r_eff = 0.
AuxLabels build_aux_labels(const DatasetRecord& record, bool is_true_archived,
                           float loss_ratio);

// Uniform draw from the top-K BM25 candidates for the archived question,
// excluding the true archived answer; nullopt when nothing is eligible.
std::optional<std::string> sample_negative_answer(const DatasetRecord& record,
                                                  const InvertedIndex& index,
                                                  int64_t k, Rng& rng);

// loss = r*loss_q + (1-r)/2 * loss_u + (1-r)/2 * loss_a, with r_eff in
// place of r.
double combine_loss(double loss_q, double loss_u, double loss_a, double r_eff);
double bce_scalar(double prediction, double target);

// Batched multi-task loss as a graph node (mean over the batch).
template <typename T>
TensorT<T> batch_loss(TapeT<T>* tape, const ModelOutputs<T>& outputs,
                      const Batch& batch, Ablation ablation) {
  int64_t b = batch.size();
  auto to_tensor = [b](const std::vector<float>& v) {
    std::vector<T> data(v.begin(), v.end());
    return TensorT<T>::from({b}, std::move(data));
  };
  auto labels_q = to_tensor(batch.label_q);
  auto loss_q = ops::binary_cross_entropy(tape, outputs.y_q, labels_q);
  if (ablation == Ablation::kQOnly) return ops::mean_all(tape, loss_q);

  auto loss_u = ops::binary_cross_entropy(tape, outputs.y_u, to_tensor(batch.label_u));
  auto loss_a = ops::binary_cross_entropy(tape, outputs.y_a, to_tensor(batch.label_a));
  auto r = to_tensor(batch.r_eff);
  auto aux_w = ops::scale(tape, ops::add_scalar(tape, ops::scale(tape, r, T(-1)), T(1)),
                          T(0.5));
  auto total = ops::add(tape, ops::mul(tape, r, loss_q),
                        ops::add(tape, ops::mul(tape, aux_w, loss_u),
                                 ops::mul(tape, aux_w, loss_a)));
  return ops::mean_all(tape, total);
}

struct EpochStats {
  double mean_loss = 0.0;
  double accuracy = 0.0;  // main task, over true-answer instances
  int64_t instances = 0;
  int64_t batches = 0;
};

struct Prediction {
  float y_q = 0.0f;
  int label = 0;
  float y_u = 0.0f;  // diagnostic only
  float y_a = 0.0f;
};

// Threshold rule: label 1 iff y^q >= 0.5 (a tie at exactly 0.5 is positive).
inline int threshold_label(float y_q) { return y_q >= 0.5f ? 1 : 0; }

class Trainer {
 public:
  Trainer(const Config& config, const Vocabulary& vocab);
  Trainer(const Config& config, const Vocabulary& vocab, ModelParams params,
          int64_t global_step = 0);

  // One pass over the records: builds instances (negative sampling included),
  // then forward / loss / backward / optimizer step per batch.
  EpochStats run_epoch(const std::vector<DatasetRecord>& records,
                       const InvertedIndex* index, Rng& rng);

  std::vector<Prediction> predict_records(const std::vector<DatasetRecord>& records);
  Prediction predict_one(const std::string& qu, const std::string& qa,
                         const std::string& ans);
  double evaluate_accuracy(const std::vector<DatasetRecord>& records);

  ModelParams& params() { return params_; }
  const Config& config() const { return config_; }
  const Vocabulary& vocab() const { return vocab_; }
  RAdamOptimizer<float>& optimizer() { return optimizer_; }
  int64_t global_step() const { return optimizer_.step_count(); }
  double current_keep_rate() const;

 private:
  Config config_;
  Vocabulary vocab_;
  ModelParams params_;
  ParamRegistry<float> trainable_;
  RAdamOptimizer<float> optimizer_;
};

// Inference entry point shared by the CLI and the evaluation harness.
std::vector<Prediction> predict_batch(ModelParams& params, const Vocabulary& vocab,
                                      const std::vector<Instance>& instances,
                                      int64_t batch_size);

}  // namespace match2
