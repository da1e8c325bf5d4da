#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "match2/common.hpp"

namespace match2 {

// Token ids. [PAD]=0, [UNK]=1, [CLS]=2, [SEP]=3 are reserved and never
// reassigned; content ids start at 4, assigned by (count desc, token asc)
// so a rebuild from the same corpus is identical.
class Vocabulary {
 public:
  static constexpr int32_t kPad = 0;
  static constexpr int32_t kUnk = 1;
  static constexpr int32_t kCls = 2;
  static constexpr int32_t kSep = 3;

  Vocabulary();

  static Vocabulary build(const std::vector<std::string>& corpus, int64_t min_freq);

  int32_t id(const std::string& token) const {
    auto it = token_to_id_.find(token);
    return it == token_to_id_.end() ? kUnk : it->second;
  }
  const std::string& token(int32_t id) const {
    if (id < 0 || id >= static_cast<int32_t>(id_to_token_.size()))
      throw_error(ErrorCategory::kLookup, "vocabulary id out of range");
    return id_to_token_[static_cast<size_t>(id)];
  }
  int64_t size() const { return static_cast<int64_t>(id_to_token_.size()); }
  bool contains(const std::string& token) const {
    return token_to_id_.count(token) > 0;
  }

  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

 private:
  void add(const std::string& token);
  std::unordered_map<std::string, int32_t> token_to_id_;
  std::vector<std::string> id_to_token_;
};

}  // namespace match2
