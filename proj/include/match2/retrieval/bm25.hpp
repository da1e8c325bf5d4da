#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "match2/common.hpp"
#include "match2/text/dataset.hpp"

namespace match2 {

struct Posting {
  int32_t doc = 0;  // index into docs()
  int32_t tf = 0;
};

struct ScoredCandidate {
  std::string answer_id;
  double score = 0.0;
};

// Okapi BM25 over the answer pool, k1=1.2, b=0.75, with the +1-smoothed
// IDF: ln((N - df + 0.5) / (df + 0.5) + 1). Scores are >= 0 under this
// variant. The index is immutable after build; queries are read-only.
class InvertedIndex {
 public:
  static InvertedIndex build(const std::vector<AnswerDoc>& pool);

  double score(const std::vector<std::string>& query_tokens, int32_t doc_index,
               double k1 = 1.2, double b = 0.75) const;
  double score_by_id(const std::vector<std::string>& query_tokens,
                     const std::string& answer_id, double k1 = 1.2,
                     double b = 0.75) const;

  // K highest-scoring answers for the query text, excluding `exclude_id`.
  // Ties break by ascending answer id; fewer than K come back when the pool
  // is small.
  std::vector<ScoredCandidate> top_k(const std::string& question, int64_t k,
                                     const std::string& exclude_id) const;

  int64_t doc_count() const { return static_cast<int64_t>(docs_.size()); }
  double avg_length() const { return avg_len_; }
  const AnswerDoc& doc(int32_t index) const { return docs_[static_cast<size_t>(index)]; }
  int64_t doc_length(int32_t index) const { return lengths_[static_cast<size_t>(index)]; }
  const std::vector<Posting>& postings(const std::string& term) const;
  int32_t doc_index(const std::string& answer_id) const;

  void save(const std::string& path) const;
  static InvertedIndex load(const std::string& path);

 private:
  std::vector<AnswerDoc> docs_;
  std::vector<int64_t> lengths_;
  double avg_len_ = 0.0;
  std::unordered_map<std::string, std::vector<Posting>> postings_;
  std::unordered_map<std::string, int32_t> id_to_index_;
};

// |tokens(a) n tokens(b)| / |tokens(a) u tokens(b)| over unique tokens;
// 0 when the union is empty.
double jaccard_index(const std::string& a, const std::string& b);

}  // namespace match2
