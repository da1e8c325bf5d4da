#include "match2/text/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "match2/text/tokenize.hpp"

namespace match2 {

namespace {

using nlohmann::json;

std::string id_from_json(const json& j, int64_t line) {
  if (!j.contains("id")) return "r" + std::to_string(line - 1);  // 0-based index
  const auto& v = j.at("id");
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<int64_t>());
  throw_error(ErrorCategory::kIngestion, "field 'id' must be a string or integer");
}

std::string require_text(const json& j, const char* field) {
  if (!j.contains(field))
    throw_error(ErrorCategory::kIngestion,
                std::string("missing required field '") + field + "'");
  if (!j.at(field).is_string())
    throw_error(ErrorCategory::kIngestion,
                std::string("field '") + field + "' must be a string");
  std::string text = j.at(field).get<std::string>();
  if (tokenize(text).empty())
    throw_error(ErrorCategory::kIngestion,
                std::string("field '") + field + "' is empty after normalization");
  return text;
}

}  // namespace

LoadResult load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw_error(ErrorCategory::kIngestion, "cannot open dataset file " + path);
  LoadResult result;
  std::string line;
  int64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      json j = json::parse(line);
      DatasetRecord rec;
      rec.id = id_from_json(j, line_no);
      rec.user_question = require_text(j, "qu");
      rec.archived_question = require_text(j, "qa");
      rec.archived_answer = require_text(j, "ans");
      if (!j.contains("label"))
        throw_error(ErrorCategory::kIngestion, "missing required field 'label'");
      if (!j.at("label").is_number_integer())
        throw_error(ErrorCategory::kIngestion, "field 'label' must be an integer");
      int64_t label = j.at("label").get<int64_t>();
      if (label != 0 && label != 1)
        throw_error(ErrorCategory::kIngestion,
                    "field 'label' must be 0 or 1, got " + std::to_string(label));
      rec.label = static_cast<int>(label);
      result.records.push_back(std::move(rec));
    } catch (const json::exception& e) {
      result.errors.push_back({line_no, std::string("invalid JSON: ") + e.what()});
    } catch (const Error& e) {
      result.errors.push_back({line_no, e.what()});
    }
  }
  return result;
}

std::vector<AnswerDoc> load_answer_pool(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw_error(ErrorCategory::kIngestion, "cannot open answer pool " + path);
  std::vector<AnswerDoc> docs;
  std::string line;
  int64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw_error(ErrorCategory::kIngestion,
                  "answer pool line " + std::to_string(line_no) + ": " + e.what());
    }
    AnswerDoc doc;
    if (!j.contains("ans_id"))
      throw_error(ErrorCategory::kIngestion,
                  "answer pool line " + std::to_string(line_no) +
                      ": missing required field 'ans_id'");
    const auto& idv = j.at("ans_id");
    doc.id = idv.is_string() ? idv.get<std::string>()
                             : std::to_string(idv.get<int64_t>());
    if (!j.contains("text") || !j.at("text").is_string())
      throw_error(ErrorCategory::kIngestion,
                  "answer pool line " + std::to_string(line_no) +
                      ": missing required field 'text'");
    doc.text = j.at("text").get<std::string>();
    docs.push_back(std::move(doc));
  }
  return docs;
}

TokenSequence encode_pair(const std::string& first, const std::string& second,
                          int64_t max_first, int64_t max_second,
                          const Vocabulary& vocab) {
  if (max_first <= 0 || max_second <= 0)
    throw_error(ErrorCategory::kConfig, "encode_pair: limits must be positive");
  auto toks_a = tokenize(first);
  auto toks_b = tokenize(second);
  if (static_cast<int64_t>(toks_a.size()) > max_first) toks_a.resize(max_first);
  if (static_cast<int64_t>(toks_b.size()) > max_second) toks_b.resize(max_second);

  int64_t total = max_first + max_second + 3;
  TokenSequence seq;
  seq.ids.assign(total, Vocabulary::kPad);
  seq.segments.assign(total, 0);
  seq.mask.assign(total, 0.0f);
  seq.first_len = static_cast<int32_t>(toks_a.size());
  seq.second_len = static_cast<int32_t>(toks_b.size());

  int64_t pos = 0;
  auto put = ([&](int32_t id, int32_t segment) {
    seq.ids[pos] = id;
    seq.segments[pos] = segment;
    seq.mask[pos] = 1.0f;
    ++pos;
  });
  put(Vocabulary::kCls, 0);
  for (const auto& t : toks_a) put(vocab.id(t), 0);
  put(Vocabulary::kSep, 0);
  for (const auto& t : toks_b) put(vocab.id(t), 1);
  put(Vocabulary::kSep, 1);
  return seq;
}

std::vector<std::string> decode(const TokenSequence& seq, const Vocabulary& vocab) {
  std::vector<std::string> out;
  for (int32_t i = 0; i < seq.first_len; ++i)
    out.push_back(vocab.token(seq.ids[seq.first_start() + i]));
  for (int32_t i = 0; i < seq.second_len; ++i)
    out.push_back(vocab.token(seq.ids[seq.second_start() + i]));
  return out;
}

namespace {

void append_row(EncodedColumn& col, const TokenSequence& seq) {
  col.ids.insert(col.ids.end(), seq.ids.begin(), seq.ids.end());
  col.segments.insert(col.segments.end(), seq.segments.begin(), seq.segments.end());
  col.mask.insert(col.mask.end(), seq.mask.begin(), seq.mask.end());
  col.first_len.push_back(seq.first_len);
  col.second_len.push_back(seq.second_len);
  col.rows += 1;
  col.len = seq.length();
}

}  // namespace

Batch encode_batch(const std::vector<Instance>& instances, const Vocabulary& vocab,
                   const BatchLimits& limits) {
  Batch batch;
  for (const auto& inst : instances) {
    append_row(batch.qq, encode_pair(inst.qu, inst.qa, limits.max_question,
                                     limits.max_question, vocab));
    append_row(batch.ua, encode_pair(inst.qu, inst.ans, limits.max_question,
                                     limits.max_answer, vocab));
    append_row(batch.aa, encode_pair(inst.qa, inst.ans, limits.max_question,
                                     limits.max_answer, vocab));
    batch.label_q.push_back(inst.label_q);
    batch.label_u.push_back(inst.label_u);
    batch.label_a.push_back(inst.label_a);
    batch.r_eff.push_back(inst.r_eff);
    batch.true_answer.push_back(inst.true_answer ? 1 : 0);
    batch.record_ids.push_back(inst.record_id);
  }
  return batch;
}

std::vector<Instance> instances_from_records(const std::vector<DatasetRecord>& records,
                                             float loss_ratio) {
  std::vector<Instance> out;
  out.reserve(records.size());
  for (const auto& rec : records) {
    Instance inst;
    inst.record_id = rec.id;
    inst.qu = rec.user_question;
    inst.qa = rec.archived_question;
    inst.ans = rec.archived_answer;
    inst.label_q = static_cast<float>(rec.label);
    inst.label_a = 1.0f;  // the true archived answer is relevant to qa
    inst.label_u = rec.label == 1 ? 1.0f : 0.0f;
    inst.r_eff = loss_ratio;
    out.push_back(std::move(inst));
  }
  return out;
}

std::vector<Batch> make_instance_batches(const std::vector<Instance>& instances,
                                         const Vocabulary& vocab,
                                         const BatchLimits& limits,
                                         int64_t batch_size) {
  if (batch_size < 1)
    throw_error(ErrorCategory::kConfig, "batch_size must be >= 1");
  std::vector<Batch> batches;
  for (size_t start = 0; start < instances.size();
       start += static_cast<size_t>(batch_size)) {
    size_t stop = std::min(instances.size(), start + static_cast<size_t>(batch_size));
    std::vector<Instance> chunk(instances.begin() + start, instances.begin() + stop);
    batches.push_back(encode_batch(chunk, vocab, limits));
  }
  return batches;
}

std::vector<Batch> make_batches(const std::vector<DatasetRecord>& records,
                                const Vocabulary& vocab, const BatchLimits& limits,
                                int64_t batch_size, bool shuffle, Rng& rng,
                                float loss_ratio) {
  auto instances = instances_from_records(records, loss_ratio);
  if (shuffle) {
    // Fisher-Yates with the project rng so the order is seed-reproducible
    for (size_t i = instances.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(rng.uniform_index(i));
      std::swap(instances[i - 1], instances[j]);
    }
  }
  return make_instance_batches(instances, vocab, limits, batch_size);
}

}  // namespace match2
