#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "match2/text/dataset.hpp"
#include "match2/text/tokenize.hpp"
#include "match2/text/vocab.hpp"

using namespace match2;

namespace {

std::string write_temp(const std::string& name, const std::string& content) {
  auto path = (std::filesystem::temp_directory_path() / name).string();
  std::ofstream out(path, std::ios::binary);
  out << content;
  return path;
}

// random words over a tiny alphabet, some punctuation sprinkled in
std::string random_text(Rng& rng) {
  std::string text;
  int words = 1 + static_cast<int>(rng.uniform_index(8));
  for (int w = 0; w < words; ++w) {
    if (w) text += ' ';
    int len = 1 + static_cast<int>(rng.uniform_index(5));
    for (int i = 0; i < len; ++i)
      text += static_cast<char>('a' + rng.uniform_index(6));
    if (rng.bernoulli(0.2)) text += '?';
  }
  return text;
}

}  // namespace

TEST_CASE("tokenize splits whitespace and punctuation, lowercases") {
  auto toks = tokenize("How to keep a session?  Don't panic.");
  std::vector<std::string> expect = {"how", "to",  "keep", "a",  "session", "?",
                                     "don", "'",   "t",    "panic", "."};
  CHECK(toks == expect);
  CHECK(tokenize("   \t\n ").empty());
}

TEST_CASE("build_vocab ordering and min_freq") {
  Vocabulary v = Vocabulary::build({"a b", "a"}, 1);
  CHECK(v.contains("a"));
  CHECK(v.contains("b"));
  // "a" has the higher count, so the lower non-reserved id
  CHECK(v.id("a") == 4);
  CHECK(v.id("b") == 5);

  Vocabulary v2 = Vocabulary::build({"a b", "a"}, 2);
  CHECK(v2.contains("a"));
  CHECK(!v2.contains("b"));
  CHECK(v2.id("b") == Vocabulary::kUnk);

  // deterministic rebuild
  Vocabulary v3 = Vocabulary::build({"a b", "a"}, 1);
  CHECK(v3.id("a") == v.id("a"));
  CHECK(v3.id("b") == v.id("b"));
  CHECK(v3.size() == v.size());

  CHECK_THROWS_AS(Vocabulary::build({}, 1), Error);
}

TEST_CASE("vocabulary reserved ids are fixed") {
  Vocabulary v = Vocabulary::build({"pad unk cls sep tokens"}, 1);
  CHECK(v.token(0) == "[PAD]");
  CHECK(v.token(1) == "[UNK]");
  CHECK(v.token(2) == "[CLS]");
  CHECK(v.token(3) == "[SEP]");
}

TEST_CASE("vocabulary save/load round trip") {
  Vocabulary v = Vocabulary::build({"alpha beta gamma alpha"}, 1);
  auto path = write_temp("m2_vocab_test.txt", "");
  v.save(path);
  Vocabulary loaded = Vocabulary::load(path);
  CHECK(loaded.size() == v.size());
  CHECK(loaded.id("alpha") == v.id("alpha"));
  CHECK(loaded.id("gamma") == v.id("gamma"));
  std::remove(path.c_str());
}

TEST_CASE("encode_pair layout") {
  Vocabulary v = Vocabulary::build({"a b c"}, 1);
  auto seq = encode_pair("a b", "c", 24, 24, v);
  REQUIRE(seq.length() == 24 + 24 + 3);
  CHECK(seq.ids[0] == Vocabulary::kCls);
  CHECK(seq.ids[1] == v.id("a"));
  CHECK(seq.ids[2] == v.id("b"));
  CHECK(seq.ids[3] == Vocabulary::kSep);
  CHECK(seq.ids[4] == v.id("c"));
  CHECK(seq.ids[5] == Vocabulary::kSep);
  CHECK(seq.ids[6] == Vocabulary::kPad);
  CHECK(seq.first_len == 2);
  CHECK(seq.second_len == 1);
  // segment ids: [CLS] and first span 0, second span (incl. its [SEP]) 1
  CHECK(seq.segments[0] == 0);
  CHECK(seq.segments[3] == 0);
  CHECK(seq.segments[4] == 1);
  CHECK(seq.segments[5] == 1);
  // mask is a prefix of ones
  for (int i = 0; i < 6; ++i) CHECK(seq.mask[i] == 1.0f);
  for (int i = 6; i < 51; ++i) CHECK(seq.mask[i] == 0.0f);
}

TEST_CASE("encode_pair truncates to the limits") {
  Vocabulary v = Vocabulary::build({"w x y z"}, 1);
  auto seq = encode_pair("w x y z w x y z", "y", 3, 4, v);
  CHECK(seq.first_len == 3);
  CHECK(seq.ids[1] == v.id("w"));
  CHECK(seq.ids[2] == v.id("x"));
  CHECK(seq.ids[3] == v.id("y"));
  CHECK(seq.ids[4] == Vocabulary::kSep);
  // unknown tokens map to [UNK], not an error
  auto seq2 = encode_pair("unknowntoken", "y", 3, 4, v);
  CHECK(seq2.ids[1] == Vocabulary::kUnk);
}

TEST_CASE("token sequence invariants hold over random texts (property)") {
  Rng rng(101);
  std::vector<std::string> corpus;
  for (int i = 0; i < 40; ++i) corpus.push_back(random_text(rng));
  Vocabulary v = Vocabulary::build(corpus, 1);
  for (int trial = 0; trial < 200; ++trial) {
    auto first = random_text(rng);
    auto second = random_text(rng);
    auto seq = encode_pair(first, second, 6, 5, v);
    REQUIRE(seq.ids.size() == seq.mask.size());
    REQUIRE(seq.ids.size() == seq.segments.size());
    // prefix-mask invariant
    bool seen_pad = false;
    for (float m : seq.mask) {
      if (m == 0.0f) seen_pad = true;
      if (seen_pad) CHECK(m == 0.0f);
    }
    // special markers survive truncation
    CHECK(seq.ids[0] == Vocabulary::kCls);
    CHECK(seq.ids[seq.first_len + 1] == Vocabulary::kSep);
    CHECK(seq.ids[seq.first_len + 2 + seq.second_len] == Vocabulary::kSep);
    // decode round-trips in-vocab tokens in order
    auto toks_a = tokenize(first);
    auto toks_b = tokenize(second);
    if (static_cast<int64_t>(toks_a.size()) <= 6 &&
        static_cast<int64_t>(toks_b.size()) <= 5) {
      auto decoded = decode(seq, v);
      std::vector<std::string> expect = toks_a;
      expect.insert(expect.end(), toks_b.begin(), toks_b.end());
      bool all_known = true;
      for (auto& t : expect) all_known = all_known && v.contains(t);
      if (all_known) CHECK(decoded == expect);
    }
  }
}

TEST_CASE("load_dataset accepts good lines and rejects bad ones") {
  auto path = write_temp("m2_data_test.jsonl",
                         R"({"qu":"x","qa":"y","ans":"z","label":1})"
                         "\n"
                         R"({"qu":"x","qa":"y","ans":"z","label":2})"
                         "\n"
                         R"({"qu":"x","qa":"y","label":0})"
                         "\n"
                         "not json at all\n"
                         R"({"qu":"a","qa":"b","ans":"c","label":0,"id":"q7"})"
                         "\n");
  auto result = load_dataset(path);
  REQUIRE(result.records.size() == 2);
  CHECK(result.records[0].user_question == "x");
  CHECK(result.records[0].label == 1);
  CHECK(result.records[0].id == "r0");
  CHECK(result.records[1].id == "q7");
  REQUIRE(result.errors.size() == 3);
  CHECK(result.errors[0].line == 2);
  CHECK(result.errors[0].reason.find("label") != std::string::npos);
  CHECK(result.errors[1].line == 3);
  CHECK(result.errors[1].reason.find("ans") != std::string::npos);
  CHECK(result.errors[2].line == 4);
  std::remove(path.c_str());

  CHECK_THROWS_AS(load_dataset("/nonexistent/file.jsonl"), Error);
}

TEST_CASE("encode_pair at the benchmark truncation limits") {
  Vocabulary v = Vocabulary::build({"word list here"}, 1);
  auto a = encode_pair("word list", "here word", 24, 256, v);
  CHECK(a.length() == 24 + 256 + 3);
  auto b = encode_pair("word list", "here word", 32, 100, v);
  CHECK(b.length() == 32 + 100 + 3);
}

TEST_CASE("benchmark-sized corpus loads without loss") {
  // 56633 train / 5000 dev / 5000 test rows in one file
  auto path = (std::filesystem::temp_directory_path() / "m2_big_corpus.jsonl").string();
  {
    std::ofstream out(path, std::ios::binary);
    for (int64_t i = 0; i < 56633 + 5000 + 5000; ++i)
      out << R"({"qu":"how to do thing )" << i % 97 << R"(","qa":"doing thing )"
          << i % 89 << R"(","ans":"the answer body )" << i
          << R"(","label":)" << i % 2 << "}\n";
  }
  auto result = load_dataset(path);
  CHECK(result.records.size() == 66633);
  CHECK(result.errors.empty());
  CHECK(result.records[0].id == "r0");
  CHECK(result.records[66632].id == "r66632");
  std::remove(path.c_str());
}

TEST_CASE("make_batches sizes and determinism") {
  Vocabulary v = Vocabulary::build({"q a text"}, 1);
  std::vector<DatasetRecord> records;
  for (int i = 0; i < 10; ++i)
    records.push_back({"r" + std::to_string(i), "q text", "a text", "text", i % 2});
  BatchLimits limits{4, 6};

  Rng rng(5);
  auto batches = make_batches(records, v, limits, 4, false, rng);
  REQUIRE(batches.size() == 3);
  CHECK(batches[0].size() == 4);
  CHECK(batches[1].size() == 4);
  CHECK(batches[2].size() == 2);  // final partial batch kept

  // encoded widths: QQ = 2*max_q + 3, QA = max_q + max_a + 3
  CHECK(batches[0].qq.len == 2 * 4 + 3);
  CHECK(batches[0].ua.len == 4 + 6 + 3);
  CHECK(batches[0].aa.len == 4 + 6 + 3);

  Rng r1(99), r2(99);
  auto b1 = make_batches(records, v, limits, 4, true, r1);
  auto b2 = make_batches(records, v, limits, 4, true, r2);
  REQUIRE(b1.size() == b2.size());
  for (size_t i = 0; i < b1.size(); ++i)
    CHECK(b1[i].record_ids == b2[i].record_ids);
}
