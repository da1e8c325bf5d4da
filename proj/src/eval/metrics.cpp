#include "match2/eval/metrics.hpp"

#include <algorithm>
#include <sstream>

#include "match2/retrieval/bm25.hpp"

namespace match2 {

MetricsReport classification_metrics(const std::vector<int>& predictions,
                                     const std::vector<int>& labels) {
  if (predictions.size() != labels.size())
    throw_error(ErrorCategory::kContract,
                "classification_metrics: " + std::to_string(predictions.size()) +
                    " predictions vs " + std::to_string(labels.size()) + " labels");
  MetricsReport r;
  for (size_t i = 0; i < predictions.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1)
      throw_error(ErrorCategory::kContract, "labels must be binary");
    if (predictions[i] == 1)
      (labels[i] == 1 ? r.tp : r.fp)++;
    else
      (labels[i] == 0 ? r.tn : r.fn)++;
  }
  int64_t total = r.total();
  r.accuracy = total == 0 ? 0.0 : static_cast<double>(r.tp + r.tn) / total;
  if (r.tp + r.fp == 0) {
    r.precision = 0.0;
    r.precision_defined = false;
  } else {
    r.precision = static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fp);
  }
  if (r.tp + r.fn == 0) {
    r.recall = 0.0;
    r.recall_defined = false;
  } else {
    r.recall = static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fn);
  }
  r.f1 = (r.precision + r.recall) > 0.0
             ? 2.0 * r.precision * r.recall / (r.precision + r.recall)
             : 0.0;
  return r;
}

std::vector<GroupBucket> group_analysis(const std::vector<DatasetRecord>& records,
                                        const std::vector<int>& predictions,
                                        int64_t buckets) {
  if (buckets < 1)
    throw_error(ErrorCategory::kConfig, "group_analysis: buckets must be >= 1");
  if (records.size() != predictions.size())
    throw_error(ErrorCategory::kContract,
                "group_analysis: record/prediction count mismatch");
  std::vector<GroupBucket> out(static_cast<size_t>(buckets));
  for (int64_t i = 0; i < buckets; ++i) {
    out[static_cast<size_t>(i)].lo = static_cast<double>(i) / static_cast<double>(buckets);
    out[static_cast<size_t>(i)].hi =
        static_cast<double>(i + 1) / static_cast<double>(buckets);
  }
  for (size_t i = 0; i < records.size(); ++i) {
    double j = jaccard_index(records[i].user_question, records[i].archived_question);
    auto idx = static_cast<int64_t>(j * static_cast<double>(buckets));
    idx = std::min(idx, buckets - 1);  // jaccard of exactly 1 joins the last bucket
    auto& bucket = out[static_cast<size_t>(idx)];
    bool correct = predictions[i] == records[i].label;
    if (records[i].label == 1) {
      bucket.total_positive++;
      if (correct) bucket.correct_positive++;
    } else {
      bucket.total_negative++;
      if (correct) bucket.correct_negative++;
    }
  }
  return out;
}

std::string group_analysis_csv(const std::vector<GroupBucket>& buckets) {
  std::ostringstream os;
  os << "bucket_lo,bucket_hi,label,correct,total\n";
  for (const auto& b : buckets) {
    os << b.lo << "," << b.hi << ",1," << b.correct_positive << "," << b.total_positive
       << "\n";
    os << b.lo << "," << b.hi << ",0," << b.correct_negative << "," << b.total_negative
       << "\n";
  }
  return os.str();
}

}  // namespace match2
