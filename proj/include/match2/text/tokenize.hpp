#pragma once

#include <string>
#include <vector>

namespace match2 {

// Lowercased word tokenization: splits on whitespace, and every ASCII
// punctuation character becomes its own token. Bytes above 0x7f pass
// through untouched.
std::vector<std::string> tokenize(const std::string& text);

}  // namespace match2
