#include "match2/text/vocab.hpp"

#include <algorithm>
#include <fstream>
#include <map>

#include "match2/text/tokenize.hpp"

namespace match2 {

Vocabulary::Vocabulary() {
  add("[PAD]");
  add("[UNK]");
  add("[CLS]");
  add("[SEP]");
}

void Vocabulary::add(const std::string& token) {
  token_to_id_.emplace(token, static_cast<int32_t>(id_to_token_.size()));
  id_to_token_.push_back(token);
}

Vocabulary Vocabulary::build(const std::vector<std::string>& corpus, int64_t min_freq) {
  if (min_freq < 1)
    throw_error(ErrorCategory::kConfig, "build_vocab: min_freq must be >= 1");
  if (corpus.empty())
    throw_error(ErrorCategory::kIngestion, "build_vocab: empty corpus");
  std::map<std::string, int64_t> counts;  // ordered map gives the lex tie-break
  for (const auto& text : corpus)
    for (auto& tok : tokenize(text)) counts[tok]++;
  std::vector<std::pair<std::string, int64_t>> kept;
  for (auto& [tok, cnt] : counts)
    if (cnt >= min_freq) kept.emplace_back(tok, cnt);
  std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  Vocabulary v;
  for (auto& [tok, cnt] : kept) v.add(tok);
  return v;
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw_error(ErrorCategory::kIngestion, "cannot write vocabulary to " + path);
  for (const auto& tok : id_to_token_) out << tok << "\n";
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw_error(ErrorCategory::kIngestion, "cannot read vocabulary from " + path);
  Vocabulary v;
  std::string line;
  int64_t idx = 0;
  while (std::getline(in, line)) {
    if (idx < 4) {
      if (line != v.id_to_token_[static_cast<size_t>(idx)])
        throw_error(ErrorCategory::kIngestion,
                    "vocabulary file is missing the reserved tokens");
    } else {
      v.add(line);
    }
    ++idx;
  }
  if (idx < 4)
    throw_error(ErrorCategory::kIngestion, "vocabulary file truncated: " + path);
  return v;
}

}  // namespace match2
