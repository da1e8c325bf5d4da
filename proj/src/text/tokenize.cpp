#include "match2/text/tokenize.hpp"

#include <cctype>

namespace match2 {

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) {
      out.push_back(cur);
      cur.clear();
    }
  };
  for (unsigned char ch : text) {
    if (ch < 0x80 && std::isspace(ch)) {
      flush();
    } else if (ch < 0x80 && std::ispunct(ch)) {
      flush();
      out.emplace_back(1, static_cast<char>(ch));
    } else {
      cur.push_back(ch < 0x80 ? static_cast<char>(std::tolower(ch))
                              : static_cast<char>(ch));
    }
  }
  flush();
  return out;
}

}  // namespace match2
