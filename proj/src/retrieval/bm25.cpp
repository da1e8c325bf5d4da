#include "match2/retrieval/bm25.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <json.hpp>

#include "match2/text/tokenize.hpp"

namespace match2 {

InvertedIndex InvertedIndex::build(const std::vector<AnswerDoc>& pool) {
  if (pool.empty())
    throw_error(ErrorCategory::kIngestion, "index_answers: empty answer pool");
  InvertedIndex index;
  index.docs_ = pool;
  index.lengths_.resize(pool.size());
  int64_t total_len = 0;
  for (size_t d = 0; d < pool.size(); ++d) {
    if (!index.id_to_index_.emplace(pool[d].id, static_cast<int32_t>(d)).second)
      throw_error(ErrorCategory::kIngestion,
                  "index_answers: duplicate answer id '" + pool[d].id + "'");
    auto tokens = tokenize(pool[d].text);
    index.lengths_[d] = static_cast<int64_t>(tokens.size());
    total_len += index.lengths_[d];
    std::unordered_map<std::string, int32_t> tf;
    for (auto& t : tokens) tf[t]++;
    for (auto& [term, count] : tf)
      index.postings_[term].push_back({static_cast<int32_t>(d), count});
  }
  index.avg_len_ = static_cast<double>(total_len) / static_cast<double>(pool.size());
  // postings in ascending doc order regardless of map iteration
  for (auto& [term, list] : index.postings_)
    std::sort(list.begin(), list.end(),
              [](const Posting& a, const Posting& b) { return a.doc < b.doc; });
  return index;
}

const std::vector<Posting>& InvertedIndex::postings(const std::string& term) const {
  static const std::vector<Posting> kEmpty;
  auto it = postings_.find(term);
  return it == postings_.end() ? kEmpty : it->second;
}

int32_t InvertedIndex::doc_index(const std::string& answer_id) const {
  auto it = id_to_index_.find(answer_id);
  if (it == id_to_index_.end())
    throw_error(ErrorCategory::kLookup, "unknown answer id '" + answer_id + "'");
  return it->second;
}

double InvertedIndex::score(const std::vector<std::string>& query_tokens,
                            int32_t doc_index, double k1, double b) const {
  if (doc_index < 0 || doc_index >= doc_count())
    throw_error(ErrorCategory::kLookup, "answer index out of range");
  double n = static_cast<double>(doc_count());
  double len_ratio = static_cast<double>(lengths_[static_cast<size_t>(doc_index)]) / avg_len_;
  double total = 0.0;
  // sum over query tokens with repetition
  for (const auto& term : query_tokens) {
    const auto& list = postings(term);
    double df = static_cast<double>(list.size());
    if (df == 0.0) continue;
    double tf = 0.0;
    for (const auto& p : list)
      if (p.doc == doc_index) {
        tf = static_cast<double>(p.tf);
        break;
      }
    if (tf == 0.0) continue;
    double idf = std::log((n - df + 0.5) / (df + 0.5) + 1.0);
    total += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * len_ratio));
  }
  return total;
}

double InvertedIndex::score_by_id(const std::vector<std::string>& query_tokens,
                                  const std::string& answer_id, double k1,
                                  double b) const {
  return score(query_tokens, doc_index(answer_id), k1, b);
}

std::vector<ScoredCandidate> InvertedIndex::top_k(const std::string& question,
                                                  int64_t k,
                                                  const std::string& exclude_id) const {
  if (k < 1)
    throw_error(ErrorCategory::kConfig, "top_k: K must be >= 1");
  auto query = tokenize(question);
  std::vector<ScoredCandidate> all;
  all.reserve(docs_.size());
  for (int32_t d = 0; d < doc_count(); ++d) {
    if (docs_[static_cast<size_t>(d)].id == exclude_id) continue;
    all.push_back({docs_[static_cast<size_t>(d)].id, score(query, d)});
  }
  std::sort(all.begin(), all.end(), [](const ScoredCandidate& a, const ScoredCandidate& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.answer_id < b.answer_id;
  });
  if (static_cast<int64_t>(all.size()) > k) all.resize(static_cast<size_t>(k));
  return all;
}

void InvertedIndex::save(const std::string& path) const {
  nlohmann::json j;
  j["format_version"] = 1;
  j["avg_length"] = avg_len_;
  auto docs = nlohmann::json::array();
  for (size_t d = 0; d < docs_.size(); ++d)
    docs.push_back({{"id", docs_[d].id}, {"text", docs_[d].text}, {"len", lengths_[d]}});
  j["docs"] = std::move(docs);
  nlohmann::json post;
  for (const auto& [term, list] : postings_) {
    auto arr = nlohmann::json::array();
    for (const auto& p : list) arr.push_back({p.doc, p.tf});
    post[term] = std::move(arr);
  }
  j["postings"] = std::move(post);
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw_error(ErrorCategory::kIngestion, "cannot write index to " + path);
  out << j.dump() << "\n";
}

InvertedIndex InvertedIndex::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw_error(ErrorCategory::kIngestion, "cannot read index from " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw_error(ErrorCategory::kIngestion, std::string("bad index file: ") + e.what());
  }
  InvertedIndex index;
  index.avg_len_ = j.at("avg_length").get<double>();
  for (const auto& d : j.at("docs")) {
    AnswerDoc doc{d.at("id").get<std::string>(), d.at("text").get<std::string>()};
    index.id_to_index_.emplace(doc.id, static_cast<int32_t>(index.docs_.size()));
    index.docs_.push_back(std::move(doc));
    index.lengths_.push_back(d.at("len").get<int64_t>());
  }
  for (const auto& [term, arr] : j.at("postings").items()) {
    auto& list = index.postings_[term];
    for (const auto& p : arr)
      list.push_back({p.at(0).get<int32_t>(), p.at(1).get<int32_t>()});
  }
  return index;
}

double jaccard_index(const std::string& a, const std::string& b) {
  auto ta = tokenize(a);
  auto tb = tokenize(b);
  std::set<std::string> sa(ta.begin(), ta.end());
  std::set<std::string> sb(tb.begin(), tb.end());
  if (sa.empty() && sb.empty()) return 0.0;
  int64_t inter = 0;
  for (const auto& t : sa) inter += sb.count(t);
  int64_t uni = static_cast<int64_t>(sa.size() + sb.size()) - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace match2
