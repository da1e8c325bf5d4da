#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "match2/common.hpp"
#include "match2/text/vocab.hpp"

namespace match2 {

struct DatasetRecord {
  std::string id;
  std::string user_question;      // qu
  std::string archived_question;  // qa
  std::string archived_answer;    // ans
  int label = 0;                  // y^q in {0,1}
};

struct LineError {
  int64_t line;  // 1-based
  std::string reason;
};

struct LoadResult {
  std::vector<DatasetRecord> records;
  std::vector<LineError> errors;
};

// JSON Lines loader: one object per line with fields qu, qa, ans, label and
// optional id. Malformed lines are rejected and reported with their line
// number; good lines load in file order. A missing file is an ingestion error.
LoadResult load_dataset(const std::string& path);

struct AnswerDoc {
  std::string id;
  std::string text;
};

// JSON Lines answer pool: fields ans_id, text.
std::vector<AnswerDoc> load_answer_pool(const std::string& path);

// One [CLS] a... [SEP] b... [SEP] row, right-padded to
// max_first + max_second + 3.
struct TokenSequence {
  std::vector<int32_t> ids;
  std::vector<int32_t> segments;  // 0 for [CLS]+first span, 1 for second span
  std::vector<float> mask;        // 1 for real tokens (specials included)
  int32_t first_len = 0;          // content tokens in the first span
  int32_t second_len = 0;         // content tokens in the second span
  // layout: [CLS] @0, first @1..first_len, [SEP], second, [SEP], pad...
  int32_t first_start() const { return 1; }
  int32_t second_start() const { return first_len + 2; }
  int64_t length() const { return static_cast<int64_t>(ids.size()); }
};

TokenSequence encode_pair(const std::string& first, const std::string& second,
                          int64_t max_first, int64_t max_second,
                          const Vocabulary& vocab);

// Content tokens of a sequence (specials and padding stripped), mapped back
// through the vocabulary.
std::vector<std::string> decode(const TokenSequence& seq, const Vocabulary& vocab);

// One training/eval unit: a question pair with a specific answer plus the
// labels the multi-task loss needs. r_eff is 0 exactly when the answer
// bridges neither question (sampled negatives).
struct Instance {
  std::string record_id;
  std::string qu, qa, ans;
  float label_q = 0.0f;
  float label_u = 0.0f;
  float label_a = 0.0f;
  float r_eff = 0.0f;
  bool true_answer = true;  // false for sampled-negative instances
};

// Column-major views of a batch of encoded rows, ready for the embedding op.
struct EncodedColumn {
  std::vector<int32_t> ids;       // [b * len]
  std::vector<int32_t> segments;  // [b * len]
  std::vector<float> mask;        // [b * len]
  std::vector<int32_t> first_len;   // per row
  std::vector<int32_t> second_len;  // per row
  int64_t rows = 0;
  int64_t len = 0;
};

struct Batch {
  EncodedColumn qq;  // (qu, qa) with question/question limits
  EncodedColumn ua;  // (qu, ans)
  EncodedColumn aa;  // (qa, ans)
  std::vector<float> label_q, label_u, label_a, r_eff;
  std::vector<uint8_t> true_answer;
  std::vector<std::string> record_ids;
  int64_t size() const { return qq.rows; }
};

struct BatchLimits {
  int64_t max_question = 24;
  int64_t max_answer = 256;
};

Batch encode_batch(const std::vector<Instance>& instances, const Vocabulary& vocab,
                   const BatchLimits& limits);

// Instances with the true archived answer and default labels, in record order.
std::vector<Instance> instances_from_records(const std::vector<DatasetRecord>& records,
                                             float loss_ratio);

// Batches of encoded records; the final partial batch is kept. Shuffling is
// seeded and reproducible.
std::vector<Batch> make_batches(const std::vector<DatasetRecord>& records,
                                const Vocabulary& vocab, const BatchLimits& limits,
                                int64_t batch_size, bool shuffle, Rng& rng,
                                float loss_ratio = 1.0f);

std::vector<Batch> make_instance_batches(const std::vector<Instance>& instances,
                                         const Vocabulary& vocab,
                                         const BatchLimits& limits,
                                         int64_t batch_size);

}  // namespace match2
