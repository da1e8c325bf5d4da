#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "match2/common.hpp"
#include "match2/text/dataset.hpp"

namespace match2 {

struct MetricsReport {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  int64_t tp = 0, fp = 0, tn = 0, fn = 0;
  bool precision_defined = true;  // false when no positive predictions
  bool recall_defined = true;     // false when no positive labels
  int64_t total() const { return tp + fp + tn + fn; }
};

// Positive class is "similar" (label 1). Zero-denominator precision/recall
// come back as 0 with the matching *_defined flag cleared.
MetricsReport classification_metrics(const std::vector<int>& predictions,
                                     const std::vector<int>& labels);

struct GroupBucket {
  double lo = 0.0, hi = 0.0;  // [lo, hi), last bucket closed at 1
  int64_t correct_positive = 0;
  int64_t total_positive = 0;
  int64_t correct_negative = 0;
  int64_t total_negative = 0;
};

// Buckets question pairs by the Jaccard index of (qu, qa) and tallies
// correct predictions per bucket, split by gold label.
std::vector<GroupBucket> group_analysis(const std::vector<DatasetRecord>& records,
                                        const std::vector<int>& predictions,
                                        int64_t buckets = 20);

std::string group_analysis_csv(const std::vector<GroupBucket>& buckets);

}  // namespace match2
