#include <doctest.h>

#include <filesystem>

#include "match2/eval/heatmap.hpp"
#include "match2/eval/metrics.hpp"
#include "match2/retrieval/bm25.hpp"
#include "match2/text/tokenize.hpp"
#include "match2/train/trainer.hpp"
#include "support/synthetic.hpp"

using namespace match2;
namespace tt = match2::testing;

TEST_CASE("classification metrics basics") {
  SUBCASE("perfect predictions") {
    std::vector<int> labels = {1, 0, 1, 1, 0};
    auto r = classification_metrics(labels, labels);
    CHECK(r.accuracy == 1.0);
    CHECK(r.precision == 1.0);
    CHECK(r.recall == 1.0);
    CHECK(r.f1 == 1.0);
  }
  SUBCASE("all-negative predictions on a mixed set") {
    std::vector<int> preds = {0, 0, 0, 0};
    std::vector<int> labels = {1, 0, 1, 0};
    auto r = classification_metrics(preds, labels);
    CHECK(r.recall == 0.0);
    CHECK(r.precision == 0.0);
    CHECK(!r.precision_defined);
    CHECK(r.recall_defined);
  }
  SUBCASE("worked confusion-matrix example") {
    // TP=2, FP=1, FN=1, TN=6
    std::vector<int> preds = {1, 1, 1, 0, 0, 0, 0, 0, 0, 0};
    std::vector<int> labels = {1, 1, 0, 1, 0, 0, 0, 0, 0, 0};
    auto r = classification_metrics(preds, labels);
    CHECK(r.tp == 2);
    CHECK(r.fp == 1);
    CHECK(r.fn == 1);
    CHECK(r.tn == 6);
    CHECK(r.precision == doctest::Approx(2.0 / 3.0));
    CHECK(r.recall == doctest::Approx(2.0 / 3.0));
    CHECK(r.f1 == doctest::Approx(2.0 / 3.0));
    CHECK(r.accuracy == doctest::Approx(0.8));
  }
  SUBCASE("length mismatch is a contract error") {
    CHECK_THROWS_AS(classification_metrics({1}, {1, 0}), Error);
  }
}

TEST_CASE("metrics equal a brute-force recount on 1000 random pairs") {
  Rng rng(3);
  std::vector<int> preds(1000), labels(1000);
  for (int i = 0; i < 1000; ++i) {
    preds[i] = rng.bernoulli(0.4) ? 1 : 0;
    labels[i] = rng.bernoulli(0.5) ? 1 : 0;
  }
  auto r = classification_metrics(preds, labels);
  int64_t tp = 0, fp = 0, tn = 0, fn = 0;
  for (int i = 0; i < 1000; ++i) {
    if (preds[i] == 1 && labels[i] == 1) tp++;
    if (preds[i] == 1 && labels[i] == 0) fp++;
    if (preds[i] == 0 && labels[i] == 0) tn++;
    if (preds[i] == 0 && labels[i] == 1) fn++;
  }
  CHECK(r.tp == tp);
  CHECK(r.fp == fp);
  CHECK(r.tn == tn);
  CHECK(r.fn == fn);
  CHECK(r.total() == 1000);
  CHECK(r.accuracy == static_cast<double>(tp + tn) / 1000.0);
  CHECK(r.precision == static_cast<double>(tp) / static_cast<double>(tp + fp));
  CHECK(r.recall == static_cast<double>(tp) / static_cast<double>(tp + fn));
}

TEST_CASE("group analysis buckets") {
  SUBCASE("identical questions land in the final bucket") {
    std::vector<DatasetRecord> records = {
        {"a", "same words", "same words", "ans", 1},
        {"b", "same words", "same words", "ans", 0}};
    auto groups = group_analysis(records, {1, 1}, 20);
    REQUIRE(groups.size() == 20);
    CHECK(groups[19].total_positive == 1);
    CHECK(groups[19].correct_positive == 1);
    CHECK(groups[19].total_negative == 1);
    CHECK(groups[19].correct_negative == 0);
  }
  SUBCASE("bucket boundaries partition [0,1] (property)") {
    auto groups = group_analysis({}, {}, 20);
    CHECK(groups.front().lo == 0.0);
    CHECK(groups.back().hi == 1.0);
    for (size_t i = 1; i < groups.size(); ++i)
      CHECK(groups[i].lo == groups[i - 1].hi);
  }
  SUBCASE("counts equal a direct tally and sum to the dataset size") {
    Rng rng(7);
    std::vector<DatasetRecord> records;
    std::vector<int> preds;
    for (int i = 0; i < 120; ++i) {
      std::string qu, qa;
      for (int t = 0; t < 4; ++t) qu += "w" + std::to_string(rng.uniform_index(8)) + " ";
      for (int t = 0; t < 4; ++t) qa += "w" + std::to_string(rng.uniform_index(8)) + " ";
      records.push_back({"r" + std::to_string(i), qu, qa, "ans",
                         rng.bernoulli(0.5) ? 1 : 0});
      preds.push_back(rng.bernoulli(0.5) ? 1 : 0);
    }
    auto groups = group_analysis(records, preds, 10);
    int64_t total = 0;
    for (const auto& g : groups) total += g.total_positive + g.total_negative;
    CHECK(total == 120);
    // full recount oracle
    std::vector<GroupBucket> expect(10);
    for (int64_t b = 0; b < 10; ++b) {
      expect[b].lo = b / 10.0;
      expect[b].hi = (b + 1) / 10.0;
    }
    for (size_t i = 0; i < records.size(); ++i) {
      double j = jaccard_index(records[i].user_question, records[i].archived_question);
      auto idx = std::min<int64_t>(static_cast<int64_t>(j * 10), 9);
      bool correct = preds[i] == records[i].label;
      if (records[i].label == 1) {
        expect[idx].total_positive++;
        if (correct) expect[idx].correct_positive++;
      } else {
        expect[idx].total_negative++;
        if (correct) expect[idx].correct_negative++;
      }
    }
    for (int64_t b = 0; b < 10; ++b) {
      CHECK(groups[b].total_positive == expect[b].total_positive);
      CHECK(groups[b].correct_positive == expect[b].correct_positive);
      CHECK(groups[b].total_negative == expect[b].total_negative);
      CHECK(groups[b].correct_negative == expect[b].correct_negative);
    }
  }
}

TEST_CASE("heatmap export shapes and round trip") {
  Rng rng(11);
  auto data = tt::make_keyword_corpus(rng, 8, 0);
  std::vector<std::string> corpus;
  for (auto& r : data.train) {
    corpus.push_back(r.user_question);
    corpus.push_back(r.archived_question);
    corpus.push_back(r.archived_answer);
  }
  auto vocab = Vocabulary::build(corpus, 1);
  auto config = tt::toy_config("full", 1);
  Trainer trainer(config, vocab);

  auto dir = (std::filesystem::temp_directory_path() / "m2_heatmap_test").string();
  std::filesystem::remove_all(dir);
  const auto& rec = data.train[0];
  auto result = export_heatmap(trainer.params(), vocab, rec, dir);
  REQUIRE(result.files.size() == 2 + 2 + 1);  // pu, pa, ps per layer (2), ps mean

  auto qu_tokens = tokenize(rec.user_question);
  auto qa_tokens = tokenize(rec.archived_question);
  auto ans_tokens = tokenize(rec.archived_answer);

  auto pu = parse_heatmap_csv(dir + "/pu_mean.csv");
  CHECK(pu.row_names == qu_tokens);
  CHECK(pu.col_names == ans_tokens);
  CHECK(pu.values.size() == qu_tokens.size());
  CHECK(pu.values[0].size() == ans_tokens.size());

  auto pa = parse_heatmap_csv(dir + "/pa_mean.csv");
  CHECK(pa.row_names == qa_tokens);
  CHECK(pa.values.size() == qa_tokens.size());

  auto ps = parse_heatmap_csv(dir + "/ps_mean.csv");
  CHECK(ps.row_names == qu_tokens);
  CHECK(ps.col_names == qa_tokens);

  // round trip: parsed values equal the in-memory tensors within 1e-5
  Instance inst;
  inst.qu = rec.user_question;
  inst.qa = rec.archived_question;
  inst.ans = rec.archived_answer;
  Batch batch = encode_batch({inst}, vocab, trainer.params().config.limits);
  RunContext<float> ctx;
  auto outputs = model_forward(ctx, trainer.params(), batch);
  int64_t layers = config.layers, max_q = config.max_question, max_a = config.max_answer;
  for (size_t i = 0; i < qu_tokens.size(); ++i)
    for (size_t t = 0; t < ans_tokens.size(); ++t) {
      double acc = 0;
      for (int64_t l = 0; l < layers; ++l)
        acc += outputs.pattern_u.values()[(l * max_q + i) * max_a + t];
      CHECK(pu.values[i][t] == doctest::Approx(acc / layers).epsilon(1e-5));
    }
  std::filesystem::remove_all(dir);
}

TEST_CASE("identical question on both sides: diagonal dominates after training") {
  Rng rng(13);
  auto data = tt::make_keyword_corpus(rng, 16, 0);
  std::vector<std::string> corpus;
  for (auto& r : data.train) {
    corpus.push_back(r.user_question);
    corpus.push_back(r.archived_question);
    corpus.push_back(r.archived_answer);
  }
  auto vocab = Vocabulary::build(corpus, 1);
  auto config = tt::toy_config("full", 12);
  Trainer trainer(config, vocab);
  auto index = InvertedIndex::build(data.pool);
  Rng er(3);
  for (int e = 0; e < config.epochs; ++e) trainer.run_epoch(data.train, &index, er);

  // same question on both sides with its true answer
  const auto& rec = data.train[0];
  Instance inst;
  inst.qu = rec.archived_question;
  inst.qa = rec.archived_question;
  inst.ans = rec.archived_answer;
  Batch batch = encode_batch({inst}, vocab, trainer.params().config.limits);
  RunContext<float> ctx;
  auto outputs = model_forward(ctx, trainer.params(), batch);
  auto toks = tokenize(rec.archived_question);
  int64_t n = static_cast<int64_t>(toks.size());
  int64_t layers = config.layers, max_q = config.max_question;
  double diag = 0, off = 0;
  int64_t diag_n = 0, off_n = 0;
  for (int64_t l = 0; l < layers; ++l)
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < n; ++j) {
        double v = outputs.pattern_sim.values()[(l * max_q + i) * max_q + j];
        if (i == j) {
          diag += v;
          diag_n++;
        } else {
          off += v;
          off_n++;
        }
      }
  CHECK(diag / diag_n >= off / off_n);
}
